//! Basic blocks and the interprocedural control-flow graph of a module.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;
use thiserror::Error;

use crate::isa::{
    branch_targets, layout, leader_flags, FunctionKind, FunctionPrototype, InstrKind, Item, LinkError, Module, Opcode,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeKind {
    Fallthrough,
    Taken,
    Call,
    TailCall,
    Return,
}

/// How a block ends.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Exit {
    /// Falls into the next block without a control-flow instruction.
    Fallthrough,
    Branch,
    Jump,
    Call,
    TailCall,
    /// Conditional branch to another function's entry (dispatchers).
    BranchTailCall,
    IndirectCall,
    Return,
    Halt,
    IrqReturn,
    /// A raw data word in `.text`, executed only on a fault or a dispatch miss.
    Trap,
}

#[derive(Debug, Clone, Serialize)]
pub struct BasicBlock {
    pub id: usize,
    pub func: usize,
    /// Indices into the function's items of the block's code items.
    pub items: Vec<usize>,
    pub start: u32,
    pub end: u32,
    pub label: Option<String>,
    pub exit: Exit,
    pub succs: Vec<(usize, EdgeKind)>,
    pub preds: Vec<(usize, EdgeKind)>,
}

impl BasicBlock {
    pub fn fallthrough_pred(&self) -> Option<usize> {
        self.preds.iter().find(|p| p.1 == EdgeKind::Fallthrough).map(|p| p.0)
    }

    /// Successors reached through a control transfer (everything but fallthrough).
    pub fn transfer_succs(&self) -> impl Iterator<Item = (usize, EdgeKind)> + '_ {
        self.succs.iter().copied().filter(|s| s.1 != EdgeKind::Fallthrough)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CfgFunction {
    pub name: String,
    pub entry: usize,
    pub blocks: Vec<usize>,
    pub returns: Vec<usize>,
    pub secured: bool,
    pub irq: Option<u32>,
    pub kind: FunctionKind,
    pub proto: Option<FunctionPrototype>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Cfg {
    pub blocks: Vec<BasicBlock>,
    pub functions: Vec<CfgFunction>,
    /// (call block, callee function) for direct calls and tail calls.
    pub calls: Vec<(usize, usize)>,
    pub icall_sites: Vec<usize>,
    /// Call block → block after it.
    pub return_sites: BTreeMap<usize, usize>,
    /// Functions linked by tail calls share returns; index of each function's group.
    pub return_group: Vec<usize>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CfgError {
    #[error("{0}")]
    Link(#[from] LinkError),
    #[error("{0}")]
    Lift(#[from] crate::isa::LiftError),
    #[error("indirect jump at 0x{addr:08x} in `{function}` is neither a return nor an annotated call")]
    UnresolvedIndirect { function: String, addr: u32 },
    #[error("`{function}` falls off its end at 0x{addr:08x}")]
    FallsOffEnd { function: String, addr: u32 },
    #[error("call at 0x{addr:08x} in `{function}` targets `{target}`, which is not a function entry")]
    NotAFunction { function: String, addr: u32, target: String },
    #[error("branch at 0x{addr:08x} in `{function}` enters `{target}` in another function")]
    CrossFunctionBranch { function: String, addr: u32, target: String },
    #[error("indirect call at 0x{addr:08x} with prototype {proto} matches no function")]
    EmptyClass { addr: u32, proto: String },
}

impl Cfg {
    pub fn block_of(&self, func: usize, item: usize) -> Option<usize> {
        self.functions[func].blocks.iter().copied().find(|&b| self.blocks[b].items.contains(&item))
    }

    pub fn function_named(&self, name: &str) -> Option<usize> {
        self.functions.iter().position(|f| f.name == name)
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize, EdgeKind)> + '_ {
        self.blocks.iter().flat_map(|b| b.succs.iter().map(move |&(s, k)| (b.id, s, k)))
    }

    /// Members of the return group of function `f`.
    pub fn group_members(&self, group: usize) -> Vec<usize> {
        (0..self.functions.len()).filter(|&f| self.return_group[f] == group).collect()
    }
}

fn find(parent: &mut [usize], x: usize) -> usize {
    let mut r = x;
    while parent[r] != r {
        r = parent[r];
    }
    let mut y = x;
    while parent[y] != r {
        let next = parent[y];
        parent[y] = r;
        y = next;
    }
    r
}

/// Builds the CFG of a module. Indirect calls annotated with `.icall` get call
/// edges to every function of their prototype class.
pub fn build_cfg_module(m: &Module) -> Result<Cfg, CfgError> {
    let lay = layout(m)?;
    let targets = branch_targets(m);
    let mut blocks: Vec<BasicBlock> = Vec::new();
    let mut functions = Vec::new();
    let mut label_block: BTreeMap<&str, usize> = BTreeMap::new();

    for (fi, f) in m.functions.iter().enumerate() {
        let flags = leader_flags(f, &targets);
        let mut ids = Vec::new();
        for (idx, item) in f.items.iter().enumerate() {
            if matches!(item, Item::Label(_)) {
                continue;
            }
            if flags[idx] || ids.is_empty() {
                let id = blocks.len();
                let labels = f.labels_before(idx);
                for l in &labels {
                    label_block.insert(l, id);
                }
                let label = labels.iter().find(|l| **l != f.name).map(|l| l.to_string());
                blocks.push(BasicBlock {
                    id,
                    func: fi,
                    items: Vec::new(),
                    start: lay.item_addr[fi][idx],
                    end: 0,
                    label,
                    exit: Exit::Fallthrough,
                    succs: Vec::new(),
                    preds: Vec::new(),
                });
                ids.push(id);
            }
            let b = blocks.last_mut().unwrap();
            b.items.push(idx);
            b.end = lay.item_addr[fi][idx]
                + match item {
                    Item::Insn(i) => i.size(),
                    _ => 4,
                };
        }
        functions.push(CfgFunction {
            name: f.name.clone(),
            entry: ids.first().copied().unwrap_or(usize::MAX),
            blocks: ids,
            returns: Vec::new(),
            secured: f.secured,
            irq: f.irq,
            kind: f.kind,
            proto: f.proto.clone(),
        });
    }
    let func_by_name: BTreeMap<&str, usize> =
        m.functions.iter().enumerate().map(|(i, f)| (f.name.as_str(), i)).collect();

    let mut edges: Vec<(usize, usize, EdgeKind)> = Vec::new();
    let mut calls = Vec::new();
    let mut icall_sites = Vec::new();
    let mut return_sites = BTreeMap::new();
    let mut icall_targets: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    let nblocks = blocks.len();
    for b in 0..nblocks {
        let fi = blocks[b].func;
        let f = &m.functions[fi];
        let last = *blocks[b].items.last().unwrap();
        let addr = lay.item_addr[fi][last];
        let next = (b + 1 < nblocks && blocks[b + 1].func == fi).then_some(b + 1);
        let fall = |edges: &mut Vec<_>| -> Result<(), CfgError> {
            match next {
                Some(n) => {
                    edges.push((b, n, EdgeKind::Fallthrough));
                    Ok(())
                }
                None => Err(CfgError::FallsOffEnd { function: f.name.clone(), addr }),
            }
        };
        let insn = match &f.items[last] {
            Item::Insn(i) => i,
            _ => {
                blocks[b].exit = Exit::Trap;
                continue;
            }
        };
        let target_of = |label: &str| -> Result<(usize, Option<usize>), CfgError> {
            let tb = *label_block
                .get(label)
                .ok_or_else(|| LinkError::UndefinedLabel { line: insn.line, name: label.to_string() })?;
            let callee = func_by_name.get(label).copied().filter(|&c| functions[c].entry == tb);
            Ok((tb, callee))
        };
        let exit = match insn.op.kind() {
            InstrKind::Branch | InstrKind::CheckedBranch => {
                let label = insn.target_label().unwrap_or_default();
                let (tb, callee) = target_of(label)?;
                fall(&mut edges)?;
                if blocks[tb].func == fi {
                    edges.push((b, tb, EdgeKind::Taken));
                    Exit::Branch
                } else if let Some(c) = callee {
                    edges.push((b, tb, EdgeKind::TailCall));
                    calls.push((b, c));
                    Exit::BranchTailCall
                } else {
                    return Err(CfgError::CrossFunctionBranch { function: f.name.clone(), addr, target: label.into() });
                }
            }
            InstrKind::Jal | InstrKind::CheckedJal => {
                if insn.is_self_jump(&f.labels_before(last)) {
                    Exit::Halt
                } else {
                    let label = insn.target_label().unwrap_or_default();
                    let (tb, callee) = target_of(label)?;
                    if insn.rd != 0 {
                        let c = callee.ok_or_else(|| CfgError::NotAFunction {
                            function: f.name.clone(),
                            addr,
                            target: label.into(),
                        })?;
                        edges.push((b, tb, EdgeKind::Call));
                        calls.push((b, c));
                        let n = next.ok_or_else(|| CfgError::FallsOffEnd { function: f.name.clone(), addr })?;
                        return_sites.insert(b, n);
                        Exit::Call
                    } else if blocks[tb].func == fi {
                        edges.push((b, tb, EdgeKind::Taken));
                        Exit::Jump
                    } else if let Some(c) = callee {
                        edges.push((b, tb, EdgeKind::TailCall));
                        calls.push((b, c));
                        Exit::TailCall
                    } else {
                        return Err(CfgError::CrossFunctionBranch {
                            function: f.name.clone(),
                            addr,
                            target: label.into(),
                        });
                    }
                }
            }
            InstrKind::Jalr | InstrKind::CheckedJalr => {
                if let Some(proto) = &insn.icall {
                    let members: Vec<usize> = (0..m.functions.len())
                        .filter(|&c| {
                            m.functions[c].kind == FunctionKind::User && m.functions[c].proto.as_ref() == Some(proto)
                        })
                        .collect();
                    if members.is_empty() {
                        return Err(CfgError::EmptyClass { addr, proto: proto.to_string() });
                    }
                    for &c in &members {
                        edges.push((b, functions[c].entry, EdgeKind::Call));
                        calls.push((b, c));
                    }
                    icall_targets.insert(b, members);
                    icall_sites.push(b);
                    let n = next.ok_or_else(|| CfgError::FallsOffEnd { function: f.name.clone(), addr })?;
                    return_sites.insert(b, n);
                    Exit::IndirectCall
                } else if insn.rd == 0 && insn.rs1 == 1 && matches!(insn.operand, crate::isa::Operand::Imm(0)) {
                    functions[fi].returns.push(b);
                    Exit::Return
                } else {
                    return Err(CfgError::UnresolvedIndirect { function: f.name.clone(), addr });
                }
            }
            _ if insn.op == Opcode::Mret => Exit::IrqReturn,
            _ => {
                fall(&mut edges)?;
                Exit::Fallthrough
            }
        };
        blocks[b].exit = exit;
    }

    // Return groups: functions joined by tail calls return through the same exits.
    let nf = functions.len();
    let mut parent: Vec<usize> = (0..nf).collect();
    for &(b, c) in &calls {
        if matches!(blocks[b].exit, Exit::TailCall | Exit::BranchTailCall) {
            let (x, y) = (find(&mut parent, blocks[b].func), find(&mut parent, c));
            parent[x.max(y)] = x.min(y);
        }
    }
    let return_group: Vec<usize> = (0..nf).map(|f| find(&mut parent, f)).collect();
    let mut group_returns: BTreeMap<usize, BTreeSet<usize>> = BTreeMap::new();
    for (fi, f) in functions.iter().enumerate() {
        group_returns.entry(return_group[fi]).or_default().extend(f.returns.iter().copied());
    }
    for (&call, &site) in &return_sites {
        let callees: Vec<usize> = match icall_targets.get(&call) {
            Some(ms) => ms.clone(),
            None => calls.iter().filter(|c| c.0 == call).map(|c| c.1).collect(),
        };
        let groups: BTreeSet<usize> = callees.iter().map(|&c| return_group[c]).collect();
        for g in groups {
            for &r in group_returns.get(&g).into_iter().flatten() {
                edges.push((r, site, EdgeKind::Return));
            }
        }
    }

    edges.sort();
    edges.dedup();
    for &(s, d, k) in &edges {
        blocks[s].succs.push((d, k));
        blocks[d].preds.push((s, k));
    }
    Ok(Cfg { blocks, functions, calls, icall_sites, return_sites, return_group })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::isa::parse_module;

    fn cfg(src: &str) -> Cfg {
        build_cfg_module(&parse_module(src).unwrap()).unwrap()
    }

    #[test]
    fn loop_has_back_edge_and_exit() {
        let g = cfg(".func main\n li t0, 3\nloop:\n addi t0, t0, -1\n bne t0, zero, loop\n halt\n");
        assert_eq!(g.blocks.len(), 3);
        assert!(g.blocks[1].succs.contains(&(1, EdgeKind::Taken)));
        assert!(g.blocks[1].succs.contains(&(2, EdgeKind::Fallthrough)));
        assert_eq!(g.blocks[2].exit, Exit::Halt);
    }

    #[test]
    fn straight_line_is_one_block() {
        let g = cfg(".func main\n li t0, 3\n addi t0, t0, 1\n halt\n");
        assert_eq!(g.blocks.len(), 1);
        assert_eq!(g.edges().count(), 0);
    }

    #[test]
    fn stray_indirect_jump_is_rejected() {
        let e = build_cfg_module(&parse_module(".func main\n jr t0\n").unwrap()).unwrap_err();
        assert!(matches!(e, CfgError::UnresolvedIndirect { .. }));
        let e = build_cfg_module(&parse_module(".func main\n nop\n").unwrap()).unwrap_err();
        assert!(matches!(e, CfgError::FallsOffEnd { .. }));
    }

    #[test]
    fn returns_reach_the_call_site() {
        let g = cfg(".func main\n call f\n halt\n.func f\n beqz a0, out\n ret\nout:\n ret\n");
        let site = g.return_sites[&0];
        let preds: Vec<_> = g.blocks[site].preds.iter().filter(|p| p.1 == EdgeKind::Return).collect();
        assert_eq!(preds.len(), 2);
    }
}
