//! Bundled sample programs.

use crate::config::{IrqRequest, RunConfig};

pub const PROGRAMS: &[(&str, &str)] = &[
    ("loop", include_str!("../corpus/loop.s")),
    ("diamond", include_str!("../corpus/diamond.s")),
    ("verifypin", include_str!("../corpus/verifypin.s")),
    ("indirect", include_str!("../corpus/indirect.s")),
    ("interrupt", include_str!("../corpus/interrupt.s")),
    ("fig2b", include_str!("../corpus/fig2b.s")),
    ("multiexit", include_str!("../corpus/multiexit.s")),
    ("sort", include_str!("../corpus/sort.s")),
    ("calls", include_str!("../corpus/calls.s")),
    ("worst", include_str!("../corpus/worst.s")),
    ("jloop", include_str!("../corpus/jloop.s")),
];

pub fn source(name: &str) -> Option<&'static str> {
    PROGRAMS.iter().find(|p| p.0 == name).map(|p| p.1)
}

/// Run configuration a program is meant to be exercised with: the interrupt
/// sample gets one timer interrupt partway through its loop.
pub fn run_config(name: &str) -> RunConfig {
    let mut cfg = RunConfig::default();
    if name == "interrupt" {
        cfg.irqs.push(IrqRequest { cycle: 20, irq: 0 });
    }
    cfg
}
