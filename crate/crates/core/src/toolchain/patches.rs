//! Patch planning: which block IV each block starts from, and which control
//! transfers need a patch so that every arrival produces that IV.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use crate::isa::{AsmInsn, Item, Module, Origin};
use crate::sigfun::SigKind;

use super::cfg::{build_cfg_module, Cfg, CfgError, EdgeKind, Exit};

/// Where a block's initialization vector comes from.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum IvSource {
    Boot,
    /// Hash of a function symbol (function entries and interrupt handlers).
    Symbol(String),
    /// Hash of a name; loop breaking and unreachable code.
    Constant(String),
    /// Exit signature of a predecessor block.
    Pred(usize),
    /// Shared IV of the return sites of a return group.
    ReturnGroup(usize),
}

#[derive(Debug, Clone, Serialize)]
pub struct ReturnGroupPlan {
    pub name: String,
    pub members: Vec<usize>,
    pub returns: Vec<usize>,
    /// The return block whose exit signature is the group's return IV.
    /// `None` when that would be circular (recursion); every return is patched then.
    pub designated: Option<usize>,
}

#[derive(Debug, Clone, Serialize)]
pub struct PatchPlan {
    pub iv: Vec<IvSource>,
    pub groups: BTreeMap<usize, ReturnGroupPlan>,
    pub patched_edges: Vec<(usize, usize, EdgeKind)>,
    /// Block → patch slot (index of the 32-bit patch value, or of the pair under CBC-MAC).
    pub slots: BTreeMap<usize, u32>,
    pub loop_breaks: Vec<usize>,
}

impl PatchPlan {
    /// The block (if any) whose IV determines `b`'s IV.
    pub fn dependency(&self, b: usize) -> Option<usize> {
        match &self.iv[b] {
            IvSource::Pred(p) => Some(*p),
            IvSource::ReturnGroup(g) => self.groups[g].designated,
            _ => None,
        }
    }

    /// Whether the dependency graph is free of cycles.
    pub fn is_acyclic(&self) -> bool {
        find_cycle(self).is_none()
    }

    pub fn is_patched(&self, src: usize, dst: usize) -> bool {
        self.patched_edges.iter().any(|e| e.0 == src && e.1 == dst)
    }
}

fn find_cycle(plan: &PatchPlan) -> Option<Vec<usize>> {
    let n = plan.iv.len();
    // 0 unvisited, 1 on the current path, 2 done
    let mut state = vec![0u8; n];
    for start in 0..n {
        if state[start] != 0 {
            continue;
        }
        let mut path = Vec::new();
        let mut cur = Some(start);
        while let Some(b) = cur {
            match state[b] {
                0 => {
                    state[b] = 1;
                    path.push(b);
                    cur = plan.dependency(b);
                }
                1 => {
                    let pos = path.iter().position(|&x| x == b).unwrap();
                    return Some(path[pos..].to_vec());
                }
                _ => break,
            }
        }
        for b in path {
            state[b] = 2;
        }
    }
    None
}

fn reaches(plan: &PatchPlan, from: usize, target: usize) -> bool {
    let mut cur = Some(from);
    let mut steps = 0;
    while let Some(b) = cur {
        if b == target {
            return true;
        }
        steps += 1;
        if steps > plan.iv.len() {
            return true;
        }
        cur = plan.dependency(b);
    }
    false
}

fn block_name(cfg: &Cfg, b: usize) -> String {
    let blk = &cfg.blocks[b];
    let f = &cfg.functions[blk.func].name;
    match &blk.label {
        Some(l) => format!("{f}:{l}"),
        None => format!("{f}:+{}", blk.start - cfg.blocks[cfg.functions[blk.func].entry].start),
    }
}

/// Computes the plan for a CFG without indirect calls.
pub fn plan_patches(cfg: &Cfg, entry: &str) -> PatchPlan {
    let n = cfg.blocks.len();
    let mut groups: BTreeMap<usize, ReturnGroupPlan> = BTreeMap::new();
    for (fi, f) in cfg.functions.iter().enumerate() {
        let g = groups.entry(cfg.return_group[fi]).or_insert_with(|| ReturnGroupPlan {
            name: cfg.functions[cfg.return_group[fi]].name.clone(),
            members: Vec::new(),
            returns: Vec::new(),
            designated: None,
        });
        g.members.push(fi);
        g.returns.extend(f.returns.iter().copied());
    }
    for g in groups.values_mut() {
        g.returns.sort_by_key(|&b| cfg.blocks[b].start);
        g.designated = g.returns.first().copied();
    }

    let entries: BTreeMap<usize, usize> = cfg.functions.iter().enumerate().map(|(fi, f)| (f.entry, fi)).collect();
    let site_group: BTreeMap<usize, usize> = cfg
        .return_sites
        .iter()
        .filter_map(|(&call, &site)| {
            let callee = cfg.calls.iter().find(|c| c.0 == call)?.1;
            Some((site, cfg.return_group[callee]))
        })
        .collect();

    let mut iv = Vec::with_capacity(n);
    // Blocks whose IV may be re-pointed among taken predecessors.
    let mut choosable = BTreeSet::new();
    for b in &cfg.blocks {
        let src = if let Some(&fi) = entries.get(&b.id) {
            if cfg.functions[fi].name == entry {
                IvSource::Boot
            } else {
                IvSource::Symbol(cfg.functions[fi].name.clone())
            }
        } else if let Some(&g) = site_group.get(&b.id) {
            IvSource::ReturnGroup(g)
        } else if b.exit == Exit::Trap && b.preds.iter().all(|p| p.1 == EdgeKind::Fallthrough) {
            IvSource::Constant(format!("trap:{}", block_name(cfg, b.id)))
        } else if let Some(p) = b.fallthrough_pred() {
            IvSource::Pred(p)
        } else if let Some(p) = b.preds.iter().filter(|p| p.1 == EdgeKind::Taken).map(|p| p.0).min() {
            choosable.insert(b.id);
            IvSource::Pred(p)
        } else {
            IvSource::Constant(format!("block:{}", block_name(cfg, b.id)))
        };
        iv.push(src);
    }
    let mut plan = PatchPlan { iv, groups, patched_edges: Vec::new(), slots: BTreeMap::new(), loop_breaks: Vec::new() };

    while let Some(cycle) = find_cycle(&plan) {
        let mut cands: Vec<usize> = cycle.iter().copied().filter(|b| choosable.contains(b)).collect();
        cands.sort_unstable();
        let mut fixed = false;
        'outer: for &c in &cands {
            let mut alts: Vec<usize> =
                cfg.blocks[c].preds.iter().filter(|p| p.1 == EdgeKind::Taken).map(|p| p.0).collect();
            alts.sort_unstable();
            for q in alts {
                if plan.iv[c] != IvSource::Pred(q) && !reaches(&plan, q, c) {
                    plan.iv[c] = IvSource::Pred(q);
                    fixed = true;
                    break 'outer;
                }
            }
        }
        if fixed {
            continue;
        }
        if let Some(&c) = cands.first() {
            plan.iv[c] = IvSource::Constant(format!("loop:{}", block_name(cfg, c)));
            plan.loop_breaks.push(c);
            continue;
        }
        // Only a return group can close the cycle now (recursion).
        let g = cycle.iter().find_map(|&b| match plan.iv[b] {
            IvSource::ReturnGroup(g) => Some(g),
            _ => None,
        });
        match g {
            Some(g) => plan.groups.get_mut(&g).unwrap().designated = None,
            None => unreachable!("fallthrough chains follow addresses and cannot cycle"),
        }
    }

    for b in &cfg.blocks {
        for (s, kind) in b.transfer_succs() {
            let free = match &plan.iv[s] {
                IvSource::Pred(p) => *p == b.id,
                IvSource::ReturnGroup(g) => kind == EdgeKind::Return && plan.groups[g].designated == Some(b.id),
                _ => false,
            };
            if !free {
                plan.patched_edges.push((b.id, s, kind));
            }
        }
    }
    let sources: BTreeSet<usize> = plan.patched_edges.iter().map(|e| e.0).collect();
    for (slot, b) in sources.into_iter().enumerate() {
        plan.slots.insert(b, slot as u32);
    }
    plan
}

/// Strips existing `ldp`s, plans, and inserts one patch load (two under CBC-MAC)
/// at the head of every block that needs one. Sizes `module.patches`.
pub fn place_patches(m: &mut Module, kind: SigKind) -> Result<PatchPlan, CfgError> {
    for f in &mut m.functions {
        f.items.retain(|i| !matches!(i, Item::Insn(x) if x.origin == Origin::Ldp));
    }
    let cfg = build_cfg_module(m)?;
    let plan = plan_patches(&cfg, &m.entry);
    let mut sites: Vec<(usize, usize, u32)> =
        plan.slots.iter().map(|(&b, &slot)| (cfg.blocks[b].func, cfg.blocks[b].items[0], slot)).collect();
    sites.sort_unstable_by(|a, b| b.cmp(a));
    for (f, idx, slot) in sites {
        let items = &mut m.functions[f].items;
        match kind {
            SigKind::Crc32 => items.insert(idx, Item::Insn(AsmInsn::ldp(slot, false))),
            SigKind::Cbcmac => {
                items.insert(idx, Item::Insn(AsmInsn::ldp(2 * slot + 1, false)));
                items.insert(idx, Item::Insn(AsmInsn::ldp(2 * slot, true)));
            }
        }
    }
    m.patches = vec![0; plan.slots.len() * kind.patch_words()];
    m.clear_signing();
    Ok(plan)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::isa::parse_module;

    fn plan(src: &str) -> (Cfg, PatchPlan) {
        let cfg = build_cfg_module(&parse_module(src).unwrap()).unwrap();
        let p = plan_patches(&cfg, "main");
        (cfg, p)
    }

    #[test]
    fn diamond_needs_one_patch() {
        // B1 branches to B3, falls into B2; B2 jumps to B4; B3 falls into B4.
        let (cfg, p) = plan(".func main\n beqz a0, b3\n addi a1, a1, 1\n j b4\nb3:\n addi a1, a1, 2\nb4:\n halt\n");
        assert_eq!(cfg.blocks.len(), 4);
        assert_eq!(p.patched_edges, vec![(1, 3, EdgeKind::Taken)]);
        assert_eq!(p.iv[3], IvSource::Pred(2));
    }

    #[test]
    fn self_loop_entered_by_jump_is_broken() {
        let (_, p) = plan(".func main\n j cond\nbody:\n addi t0, t0, -1\ncond:\n bnez t0, body\n halt\n");
        assert!(p.is_acyclic());
        assert_eq!(p.loop_breaks, vec![1]);
        assert!(p.is_patched(2, 1));
        assert!(p.is_patched(0, 2));
    }

    #[test]
    fn multi_exit_function_patches_all_but_one_return() {
        let (cfg, p) = plan(".func main\n call f\n halt\n.func f\n beqz a0, other\n ret\nother:\n ret\n");
        let rets = &cfg.functions[1].returns;
        assert_eq!(rets.len(), 2);
        let patched: Vec<_> = p.patched_edges.iter().filter(|e| e.2 == EdgeKind::Return).collect();
        assert_eq!(patched.len(), 1);
        assert_eq!(patched[0].0, rets[1]);
    }

    #[test]
    fn recursion_falls_back_to_a_constant_return_iv() {
        let (_, p) =
            plan(".func main\n call f\n halt\n.func f\n beqz a0, done\n addi a0, a0, -1\n call f\ndone:\n ret\n");
        assert!(p.is_acyclic());
    }
}
