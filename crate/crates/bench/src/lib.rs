//! Shared fixtures for the benches.

use pipeguard_core::config::{BuildConfig, RunConfig};
use pipeguard_core::corpus;
use pipeguard_core::sigfun::SigKind;
use pipeguard_core::sim::run_image;
use pipeguard_core::toolchain::{build_source, BuildOutput};

pub fn build(name: &str, kind: SigKind) -> BuildOutput {
    let src = corpus::source(name).expect("bundled program");
    build_source(src, &BuildConfig::with_kind(kind)).expect("corpus builds")
}

/// Cycle count of the fault-free run, for throughput figures.
pub fn cycles(out: &BuildOutput, cfg: &RunConfig) -> u64 {
    let r = run_image(&out.image, cfg);
    assert!(r.halted(), "{:?}", r.outcome);
    r.cycles
}

/// A deterministic stream of pipeline-state words.
pub fn sigma_stream(n: usize) -> Vec<u64> {
    let mut x = 0x9e37_79b9_7f4a_7c15u64;
    (0..n)
        .map(|_| {
            x ^= x << 13;
            x ^= x >> 7;
            x ^= x << 17;
            x
        })
        .collect()
}
