//! Code-size and cycle overheads of an instrumented image against its baseline.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::Serialize;

use crate::config::RunConfig;
use crate::isa::{FunctionKind, Opcode, Origin, ProgramImage};
use crate::sim::{run_image, Outcome};
use crate::toolchain::ByteBreakdown;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CodeSize {
    /// `.text` + `.patches` bytes.
    pub baseline: usize,
    pub instrumented: usize,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CycleCount {
    pub baseline: u64,
    pub instrumented: u64,
    pub ratio: f64,
    pub baseline_outcome: Outcome,
    pub instrumented_outcome: Outcome,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FunctionOverhead {
    pub name: String,
    pub kind: FunctionKind,
    pub secured: bool,
    pub baseline_bytes: usize,
    /// Function body plus the patch words it loads.
    pub instrumented_bytes: usize,
    pub signatures: usize,
    pub patch_words: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DispatcherReport {
    pub name: String,
    pub bytes: usize,
    pub members: usize,
    pub non_legitimate: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OverheadReport {
    pub code_size: CodeSize,
    pub cycles: CycleCount,
    /// Verification instructions.
    pub signatures: usize,
    /// 32-bit patch words.
    pub patch_words: usize,
    pub breakdown: ByteBreakdown,
    /// Dispatcher bytes over all added bytes.
    pub dispatcher_share: f64,
    pub dispatchers: Vec<DispatcherReport>,
    pub functions: Vec<FunctionOverhead>,
}

fn ratio(a: f64, b: f64) -> f64 {
    if b == 0.0 {
        1.0
    } else {
        a / b
    }
}

/// Compares two builds of one program run under the same configuration.
pub fn measure_overheads(baseline: &ProgramImage, instrumented: &ProgramImage, cfg: &RunConfig) -> OverheadReport {
    let b = run_image(baseline, cfg);
    let i = run_image(instrumented, cfg);
    let code_size = CodeSize {
        baseline: baseline.code_size(),
        instrumented: instrumented.code_size(),
        ratio: ratio(instrumented.code_size() as f64, baseline.code_size() as f64),
    };
    let cycles = CycleCount {
        baseline: b.cycles,
        instrumented: i.cycles,
        ratio: ratio(i.cycles as f64, b.cycles as f64),
        baseline_outcome: b.outcome,
        instrumented_outcome: i.outcome,
    };

    let m = &instrumented.manifest;
    let insns: Vec<(u32, Opcode)> = instrumented.instructions().collect();
    let in_fn = |start: u32, end: u32| insns.iter().filter(move |(a, _)| (start..end).contains(a));
    let dispatcher_names: BTreeSet<&str> =
        m.functions.iter().filter(|f| f.kind == FunctionKind::Dispatcher).map(|f| f.name.as_str()).collect();
    let taken: BTreeSet<&str> = m
        .relocs
        .iter()
        .filter(|r| instrumented.function_at(r.addr).is_none_or(|f| !dispatcher_names.contains(f.name.as_str())))
        .map(|r| r.symbol.as_str())
        .collect();

    let mut breakdown = ByteBreakdown::default();
    let mut functions = Vec::new();
    let mut dispatchers = Vec::new();
    for f in &m.functions {
        let checked = in_fn(f.start, f.end).filter(|(_, op)| op.is_checked()).count();
        let ldps = in_fn(f.start, f.end).filter(|(_, op)| matches!(op, Opcode::Ldp | Opcode::LdpHi)).count();
        let origin = |o: Origin| m.origins.range(f.start..f.end).filter(|(_, v)| **v == o).count();
        let body = (f.end - f.start) as usize;
        if f.kind == FunctionKind::Dispatcher {
            breakdown.dispatchers += body + 4 * ldps;
            let members: Vec<&str> = m
                .functions
                .iter()
                .filter(|g| g.kind == FunctionKind::User && g.proto.is_some() && g.proto == f.proto)
                .map(|g| g.name.as_str())
                .collect();
            dispatchers.push(DispatcherReport {
                name: f.name.clone(),
                bytes: body + 4 * ldps,
                members: members.len(),
                non_legitimate: members.iter().filter(|n| !taken.contains(*n)).count(),
            });
        } else {
            breakdown.signatures += 4 * checked + 4 * origin(Origin::Verify);
            breakdown.patches += 8 * ldps;
            breakdown.nops += 4 * origin(Origin::Nop);
        }
        let base =
            baseline.manifest.functions.iter().find(|g| g.name == f.name).map_or(0, |g| (g.end - g.start) as usize);
        functions.push(FunctionOverhead {
            name: f.name.clone(),
            kind: f.kind,
            secured: f.secured,
            baseline_bytes: base,
            instrumented_bytes: body + 4 * ldps,
            signatures: checked,
            patch_words: ldps,
        });
    }
    let added = breakdown.total();
    OverheadReport {
        code_size,
        cycles,
        signatures: functions.iter().map(|f| f.signatures).sum(),
        patch_words: instrumented.patches.len() / 4,
        dispatcher_share: if added == 0 { 0.0 } else { breakdown.dispatchers as f64 / added as f64 },
        breakdown,
        dispatchers,
        functions,
    }
}

/// Per-program size, signature, patch and cycle table.
pub fn overhead_table(rows: &[(String, OverheadReport)]) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<12} {:>8} {:>8} {:>6} {:>5} {:>7} {:>8} {:>8} {:>6}",
        "program", "base B", "instr B", "size", "sigs", "patches", "base cyc", "instr cyc", "time"
    );
    for (name, r) in rows {
        let _ = writeln!(
            s,
            "{:<12} {:>8} {:>8} {:>5.2}x {:>5} {:>7} {:>8} {:>8} {:>5.2}x",
            name,
            r.code_size.baseline,
            r.code_size.instrumented,
            r.code_size.ratio,
            r.signatures,
            r.patch_words,
            r.cycles.baseline,
            r.cycles.instrumented,
            r.cycles.ratio
        );
    }
    s
}

/// Added bytes by cause, with the dispatcher contribution as a share.
pub fn dispatcher_table(rows: &[(String, OverheadReport)]) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<12} {:>7} {:>7} {:>7} {:>5} {:>14} {:>8}",
        "program", "added", "sigs", "patches", "nops", "dispatchers", "members"
    );
    for (name, r) in rows {
        let b = &r.breakdown;
        let _ = writeln!(
            s,
            "{:<12} {:>7} {:>7} {:>7} {:>5} {:>6} ({:>4.1}%) {:>8}",
            name,
            b.total(),
            b.signatures,
            b.patches,
            b.nops,
            b.dispatchers,
            100.0 * r.dispatcher_share,
            r.dispatchers.iter().map(|d| d.members).sum::<usize>()
        );
    }
    s
}
