//! Removes forwarding dependencies across block boundaries.
//!
//! The first instruction of a block is decoded with whatever occupied EX
//! before it. After a taken transfer EX is a bubble, but on a fallthrough it
//! holds the predecessor's last instruction, so the forwarding selects in Σ
//! could depend on the path. A nop at the block head makes them path independent.

use crate::isa::{AsmInsn, Item, Module, Opcode};
use crate::sim::{derive_pipeline_state, FwdCtx, PipelineState};

use super::cfg::{build_cfg_module, Cfg, CfgError};

fn sigma(i: &AsmInsn, ctx: Option<FwdCtx>) -> PipelineState {
    derive_pipeline_state(&i.with_imm(0), ctx)
}

fn insn_at(m: &Module, func: usize, idx: usize) -> Option<&AsmInsn> {
    match &m.functions[func].items[idx] {
        Item::Insn(i) => Some(i),
        _ => None,
    }
}

/// Blocks whose entry Σ would differ between a fallthrough arrival and an empty EX stage.
pub fn forwarding_conflicts(m: &Module, cfg: &Cfg) -> Vec<usize> {
    let mut out = Vec::new();
    for b in &cfg.blocks {
        let Some(p) = b.fallthrough_pred() else { continue };
        let pb = &cfg.blocks[p];
        let (Some(last), Some(first)) =
            (insn_at(m, pb.func, *pb.items.last().unwrap()), insn_at(m, b.func, b.items[0]))
        else {
            continue;
        };
        if last.op.is_control_flow() || last.op == Opcode::Mret {
            continue;
        }
        let ctx = FwdCtx::from_state(sigma(last, None));
        if sigma(first, Some(ctx)) != sigma(first, None) {
            out.push(b.id);
        }
    }
    out
}

/// Inserts a nop at the head of every conflicting block. Returns the number inserted.
pub fn eliminate_forwarding_deps(m: &mut Module) -> Result<usize, CfgError> {
    let cfg = build_cfg_module(m)?;
    let mut sites: Vec<(usize, usize)> =
        forwarding_conflicts(m, &cfg).into_iter().map(|b| (cfg.blocks[b].func, cfg.blocks[b].items[0])).collect();
    // Insert back to front so earlier indices stay valid.
    sites.sort_unstable_by(|a, b| b.cmp(a));
    for &(f, idx) in &sites {
        m.functions[f].items.insert(idx, Item::Insn(AsmInsn::nop()));
    }
    if !sites.is_empty() {
        m.clear_signing();
    }
    Ok(sites.len())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::isa::parse_module;

    // Forwarding-sensitive merge: `mv` feeds `add` across a fallthrough, and the
    // same block is re-entered by its own back edge.
    const FIG2B: &str =
        ".func main\n li a1, 3\n mv a0, a1\nloop:\n add a2, a0, a2\n addi a1, a1, -1\n bnez a1, loop\n halt\n";

    #[test]
    fn one_nop_at_merge_head() {
        let mut m = parse_module(FIG2B).unwrap();
        assert_eq!(eliminate_forwarding_deps(&mut m).unwrap(), 1);
        let f = &m.functions[0];
        let pos = f.items.iter().position(|i| *i == Item::Label("loop".into())).unwrap();
        assert!(matches!(&f.items[pos + 1], Item::Insn(i) if i.op == Opcode::Addi && i.rd == 0));
        assert_eq!(eliminate_forwarding_deps(&mut m).unwrap(), 0);
    }

    #[test]
    fn independent_head_is_untouched() {
        let src = ".func main\n li a1, 3\nloop:\n li a2, 1\n addi a1, a1, -1\n bnez a1, loop\n halt\n";
        let mut m = parse_module(src).unwrap();
        let before = m.clone();
        assert_eq!(eliminate_forwarding_deps(&mut m).unwrap(), 0);
        assert_eq!(m, before);
    }
}
