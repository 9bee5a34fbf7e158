//! Offline signature generation: replays decode over every block with the same
//! Σ derivation the core uses, then fills references, patches and the IV table.

use thiserror::Error;

use crate::config::BuildConfig;
use crate::isa::{
    layout, lift, link, resolve_imm, BlockSignature, Instruction, Item, LiftError, LinkError, Module, Opcode,
    ProgramImage, SigningInfo, CRC_CONVENTION, SIGMA_LAYOUT,
};
use crate::sigfun::{patch_for, sig_step, SigKind};
use crate::sim::{derive_from_word, FwdCtx};

use super::cfg::{build_cfg_module, Cfg, CfgError};
use super::patches::{plan_patches, IvSource, PatchPlan};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SignError {
    #[error("{0}")]
    Cfg(#[from] CfgError),
    #[error("{0}")]
    Link(#[from] LinkError),
    #[error("{0}")]
    Lift(#[from] LiftError),
    #[error("patch loads in `{block}` do not match the patch plan")]
    PlanMismatch { block: String },
    #[error("signature dependency cycle through `{block}`")]
    Cycle { block: String },
    #[error("`{block}` has patched successors with different IVs")]
    AmbiguousPatch { block: String },
}

/// 64-bit FNV-1a, used to derive constant IVs from names.
pub fn fnv1a(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Σ sequence of every block, in block order.
pub fn block_sigmas(m: &Module, cfg: &Cfg) -> Result<Vec<Vec<u64>>, SignError> {
    let lay = layout(m)?;
    let mut out = Vec::with_capacity(cfg.blocks.len());
    for b in &cfg.blocks {
        let mut ctx: Option<FwdCtx> = None;
        let mut sigmas = Vec::new();
        for &idx in &b.items {
            let Item::Insn(i) = &m.functions[b.func].items[idx] else { continue };
            let pc = lay.item_addr[b.func][idx];
            let imm = resolve_imm(i, pc, &lay.symbols)?;
            let word = Instruction::new(i.op, i.rd, i.rs1, i.rs2, imm).encode().map_err(|_| LinkError::Range {
                line: i.line,
                mnemonic: i.op.mnemonic(),
                what: format!("immediate {imm}"),
            })?;
            let s = derive_from_word(word, i.op, ctx);
            ctx = Some(FwdCtx::from_state(s));
            sigmas.push(s.bits());
        }
        out.push(sigmas);
    }
    Ok(out)
}

fn block_name(m: &Module, cfg: &Cfg, b: usize) -> String {
    let blk = &cfg.blocks[b];
    let f = &m.functions[blk.func].name;
    match &blk.label {
        Some(l) => format!("{f}:{l}"),
        None => format!("{f}@0x{:08x}", blk.start),
    }
}

/// Per-block IV and exit signature.
pub struct Signatures {
    pub iv: Vec<u64>,
    pub exit: Vec<u64>,
}

pub fn compute_signatures(
    m: &Module,
    cfg: &Cfg,
    plan: &PatchPlan,
    sigmas: &[Vec<u64>],
    build: &BuildConfig,
) -> Result<Signatures, SignError> {
    let sc = &build.signature;
    let mask = sc.function.mask();
    let n = cfg.blocks.len();
    let mut iv: Vec<Option<u64>> = vec![None; n];
    let mut exit: Vec<Option<u64>> = vec![None; n];
    for start in 0..n {
        // Walk the dependency chain down to a resolved or constant block, then unwind.
        let mut chain = Vec::new();
        let mut cur = Some(start);
        while let Some(b) = cur {
            if exit[b].is_some() {
                break;
            }
            if chain.contains(&b) {
                return Err(SignError::Cycle { block: block_name(m, cfg, b) });
            }
            chain.push(b);
            cur = plan.dependency(b);
        }
        for &b in chain.iter().rev() {
            let v = match &plan.iv[b] {
                IvSource::Boot => build.boot_iv(),
                IvSource::Symbol(s) => fnv1a(s) & mask,
                IvSource::Constant(s) => fnv1a(s) & mask,
                IvSource::Pred(p) => exit[*p].unwrap(),
                IvSource::ReturnGroup(g) => match plan.groups[g].designated {
                    Some(d) => exit[d].unwrap(),
                    None => fnv1a(&format!("ret:{}", plan.groups[g].name)) & mask,
                },
            };
            iv[b] = Some(v);
            exit[b] = Some(sigmas[b].iter().fold(v, |s, &x| sig_step(s, x, sc)));
        }
    }
    Ok(Signatures {
        iv: iv.into_iter().map(Option::unwrap).collect(),
        exit: exit.into_iter().map(Option::unwrap).collect(),
    })
}

fn check_plan(m: &Module, cfg: &Cfg, plan: &PatchPlan, kind: SigKind) -> Result<(), SignError> {
    for b in &cfg.blocks {
        let ldps: Vec<(u32, bool)> = b
            .items
            .iter()
            .filter_map(|&idx| match &m.functions[b.func].items[idx] {
                Item::Insn(i) if matches!(i.op, Opcode::Ldp | Opcode::LdpHi) => match i.operand {
                    crate::isa::Operand::Imm(v) => Some((v as u32, i.op == Opcode::LdpHi)),
                    _ => Some((u32::MAX, false)),
                },
                _ => None,
            })
            .collect();
        let expected: Vec<(u32, bool)> = match (plan.slots.get(&b.id), kind) {
            (None, _) => vec![],
            (Some(&k), SigKind::Crc32) => vec![(k, false)],
            (Some(&k), SigKind::Cbcmac) => vec![(2 * k, true), (2 * k + 1, false)],
        };
        if ldps != expected {
            return Err(SignError::PlanMismatch { block: block_name(m, cfg, b.id) });
        }
    }
    Ok(())
}

/// Signs an instrumented module in place: fills references, `.patches`, the
/// interrupt IV table and the signing metadata.
pub fn sign_module(m: &mut Module, build: &BuildConfig) -> Result<PatchPlan, SignError> {
    let cfg = build_cfg_module(m)?;
    let plan = plan_patches(&cfg, &m.entry);
    let kind = build.signature.function;
    check_plan(m, &cfg, &plan, kind)?;
    let sigmas = block_sigmas(m, &cfg)?;
    let sigs = compute_signatures(m, &cfg, &plan, &sigmas, build)?;

    let mut patches = vec![0u32; plan.slots.len() * kind.patch_words()];
    for (&b, &slot) in &plan.slots {
        let targets: Vec<u64> = plan.patched_edges.iter().filter(|e| e.0 == b).map(|e| sigs.iv[e.1]).collect();
        if targets.windows(2).any(|w| w[0] != w[1]) {
            return Err(SignError::AmbiguousPatch { block: block_name(m, &cfg, b) });
        }
        let p = patch_for(sigs.exit[b], targets[0]);
        match kind {
            SigKind::Crc32 => patches[slot as usize] = p as u32,
            SigKind::Cbcmac => {
                patches[2 * slot as usize] = (p >> 32) as u32;
                patches[2 * slot as usize + 1] = p as u32;
            }
        }
    }

    for b in &cfg.blocks {
        let last = *b.items.last().unwrap();
        if let Item::Insn(i) = &mut m.functions[b.func].items[last] {
            if i.op.is_checked() {
                i.reference = sigs.exit[b.id] as u32;
            }
        }
    }

    let mut iv_table = Vec::new();
    for f in &cfg.functions {
        if let Some(irq) = f.irq {
            let irq = irq as usize;
            if iv_table.len() <= irq {
                iv_table.resize(irq + 1, 0);
            }
            iv_table[irq] = sigs.iv[f.entry];
        }
    }

    let lay = layout(m)?;
    let blocks = cfg
        .blocks
        .iter()
        .map(|b| BlockSignature { addr: lay.item_addr[b.func][b.items[0]], iv: sigs.iv[b.id], exit: sigs.exit[b.id] })
        .collect();
    m.patches = patches;
    m.iv_table = iv_table;
    m.signing = Some(SigningInfo {
        config: build.signature,
        boot_iv: build.boot_iv(),
        crc_convention: CRC_CONVENTION.to_string(),
        sigma_layout: SIGMA_LAYOUT.to_string(),
        blocks,
    });
    Ok(plan)
}

/// Image-level entry point: lifts, signs and relinks.
pub fn generate_signatures(img: &ProgramImage, build: &BuildConfig) -> Result<ProgramImage, SignError> {
    let mut m = lift(img)?;
    sign_module(&mut m, build)?;
    Ok(link(&m)?)
}
