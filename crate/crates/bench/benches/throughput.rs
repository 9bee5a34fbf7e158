use criterion::{black_box, criterion_group, criterion_main, Criterion, Throughput};

use pipeguard_bench::{build, cycles, sigma_stream};
use pipeguard_core::config::{BuildConfig, RunConfig};
use pipeguard_core::corpus;
use pipeguard_core::harness::{run_golden, sweep, FaultSpace, Sampling, SweepOptions, TargetSet};
use pipeguard_core::sigfun::{sig_chain, SigKind, SignatureConfig};
use pipeguard_core::sim::{run_image, FaultMode, Simulator};
use pipeguard_core::toolchain::build_source;

fn simulate(c: &mut Criterion) {
    let cfg = RunConfig::default();
    let mut g = c.benchmark_group("simulate");
    for (label, kind) in [("crc32", SigKind::Crc32), ("cbcmac", SigKind::Cbcmac)] {
        let out = build("sort", kind);
        g.throughput(Throughput::Elements(cycles(&out, &cfg)));
        g.bench_function(format!("sort/{label}"), |b| b.iter(|| run_image(black_box(&out.image), &cfg)));
    }
    let out = build("sort", SigKind::Crc32);
    let base = run_image(&out.baseline, &cfg).cycles;
    g.throughput(Throughput::Elements(base));
    g.bench_function("sort/baseline", |b| b.iter(|| run_image(black_box(&out.baseline), &cfg)));
    let cycles = run_image(&out.image, &cfg).cycles;
    g.throughput(Throughput::Elements(cycles));
    g.bench_function("sort/crc32+trace", |b| {
        b.iter(|| Simulator::new(&out.image, &cfg).unwrap().with_trace(true).record_events(true).run())
    });
    g.finish();
}

fn sign(c: &mut Criterion) {
    let stream = sigma_stream(1024);
    let mut g = c.benchmark_group("chain");
    g.throughput(Throughput::Elements(stream.len() as u64));
    for (label, cfg) in
        [("crc32", SignatureConfig::crc32()), ("cbcmac", SignatureConfig::cbcmac(0x0123_4567_89ab_cdef))]
    {
        g.bench_function(label, |b| b.iter(|| sig_chain(0x5eed, black_box(&stream), &cfg)));
    }
    g.finish();
}

fn toolchain(c: &mut Criterion) {
    let mut g = c.benchmark_group("build");
    for name in ["verifypin", "indirect", "sort"] {
        let src = corpus::source(name).unwrap();
        let cfg = BuildConfig::default();
        g.bench_function(name, |b| b.iter(|| build_source(black_box(src), &cfg).unwrap()));
    }
    g.finish();
}

fn campaign(c: &mut Criterion) {
    let out = build("verifypin", SigKind::Crc32);
    let golden = run_golden(&out.image, &RunConfig { watchdog: 64, ..RunConfig::default() }).unwrap();
    let sets = [TargetSet::ImemSecured, TargetSet::Sigma, TargetSet::Csi];
    let space = FaultSpace::new(&out.image, &sets, (0, golden.result.cycles), (1, 1), FaultMode::Flip);
    let opts = SweepOptions { jobs: 1, sampling: Sampling::Random { count: 500, seed: 1 }, ..SweepOptions::default() };
    let mut g = c.benchmark_group("campaign");
    g.sample_size(20);
    g.throughput(Throughput::Elements(500));
    g.bench_function("verifypin/500", |b| b.iter(|| sweep(&out.image, &golden, &space, black_box(&opts)).unwrap()));
    g.finish();
}

criterion_group!(benches, simulate, sign, toolchain, campaign);
criterion_main!(benches);
