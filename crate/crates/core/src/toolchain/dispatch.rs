//! Indirect-call elimination through per-class dispatchers.
//!
//! A call `jalr rd, 0(rX)` annotated with a prototype becomes `jal rd, D`,
//! where `D` compares `rX` against every function of that prototype and
//! branches to the match. A miss runs into a zero word (illegal instruction).

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;
use thiserror::Error;

use crate::isa::{
    reg_name, AsmInsn, Function, FunctionKind, FunctionPrototype, InstrKind, Item, Module, Opcode, Operand, WordValue,
};

/// Scratch register reserved for dispatcher address materialization (t6).
pub const DISPATCH_SCRATCH: u8 = 31;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DispatchError {
    #[error("`{function}`: indirect call through {proto} matches no declared function")]
    EmptyClass { function: String, proto: String },
    #[error("`{function}`: indirect call uses t6, which is reserved for dispatchers")]
    ReservedRegister { function: String },
    #[error("`{function}`: indirect call with nonzero offset {offset}")]
    Offset { function: String, offset: i32 },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct EquivalenceClass {
    pub proto: FunctionPrototype,
    pub members: Vec<String>,
    /// Dispatcher symbol per target-address register.
    pub dispatchers: BTreeMap<String, String>,
    /// Members whose address is never taken anywhere outside dispatchers.
    pub non_legitimate: Vec<String>,
}

pub fn dispatcher_name(proto: &FunctionPrototype, reg: u8) -> String {
    format!("__dispatch_{}_{}", proto.mangle(), reg_name(reg))
}

fn class_members(m: &Module, proto: &FunctionPrototype) -> Vec<String> {
    m.functions
        .iter()
        .filter(|f| f.kind == FunctionKind::User && f.proto.as_ref() == Some(proto))
        .map(|f| f.name.clone())
        .collect()
}

fn address_taken(m: &Module) -> BTreeSet<String> {
    let dispatchers: BTreeSet<&str> =
        m.functions.iter().filter(|f| f.kind == FunctionKind::Dispatcher).map(|f| f.name.as_str()).collect();
    m.address_references()
        .into_iter()
        .filter(|(owner, _)| owner.is_none_or(|o| !dispatchers.contains(o)))
        .map(|(_, s)| s.to_string())
        .collect()
}

/// Equivalence classes of a module that already went through [`generate_dispatchers`].
pub fn equivalence_classes(m: &Module) -> Vec<EquivalenceClass> {
    let taken = address_taken(m);
    let mut classes: BTreeMap<String, EquivalenceClass> = BTreeMap::new();
    for d in m.functions.iter().filter(|f| f.kind == FunctionKind::Dispatcher) {
        let Some(proto) = &d.proto else { continue };
        let reg = d
            .insns()
            .find(|i| i.op.kind() == InstrKind::Branch || i.op.kind() == InstrKind::CheckedBranch)
            .map_or(0, |i| i.rs1);
        let c = classes.entry(proto.mangle()).or_insert_with(|| {
            let members = class_members(m, proto);
            EquivalenceClass {
                proto: proto.clone(),
                non_legitimate: members.iter().filter(|n| !taken.contains(*n)).cloned().collect(),
                members,
                dispatchers: BTreeMap::new(),
            }
        });
        c.dispatchers.insert(reg_name(reg).to_string(), d.name.clone());
    }
    classes.into_values().collect()
}

fn dispatcher(proto: &FunctionPrototype, reg: u8, members: &[String], secured: bool) -> Function {
    let mut f = Function::new(&dispatcher_name(proto, reg));
    f.proto = Some(proto.clone());
    f.kind = FunctionKind::Dispatcher;
    f.secured = secured;
    let t6 = DISPATCH_SCRATCH;
    for m in members {
        f.items.push(Item::Insn(AsmInsn::new(Opcode::Lui, t6, 0, 0, Operand::Hi(m.clone()))));
        f.items.push(Item::Insn(AsmInsn::new(Opcode::Addi, t6, t6, 0, Operand::Lo(m.clone()))));
        f.items.push(Item::Insn(AsmInsn::new(Opcode::Beq, 0, reg, t6, Operand::Label(m.clone()))));
    }
    f.items.push(Item::Word(WordValue::Value(0)));
    f
}

/// Rewrites every annotated indirect call. Returns the number of rewritten sites.
pub fn generate_dispatchers(m: &mut Module) -> Result<usize, DispatchError> {
    // (prototype, register) → secured?
    let mut needed: BTreeMap<(String, u8), (FunctionPrototype, bool)> = BTreeMap::new();
    let mut sites = 0;
    for fi in 0..m.functions.len() {
        let secured = m.functions[fi].secured;
        let fname = m.functions[fi].name.clone();
        let mut rewrites = Vec::new();
        for (idx, item) in m.functions[fi].items.iter().enumerate() {
            let Item::Insn(i) = item else { continue };
            let Some(proto) = &i.icall else { continue };
            if !matches!(i.op, Opcode::Jalr | Opcode::ChkJalr) {
                continue;
            }
            if i.rs1 == DISPATCH_SCRATCH {
                return Err(DispatchError::ReservedRegister { function: fname });
            }
            match i.operand {
                Operand::Imm(0) | Operand::None => {}
                Operand::Imm(offset) => return Err(DispatchError::Offset { function: fname, offset }),
                _ => return Err(DispatchError::Offset { function: fname, offset: 0 }),
            }
            if class_members(m, proto).is_empty() {
                return Err(DispatchError::EmptyClass { function: fname, proto: proto.to_string() });
            }
            let e = needed.entry((proto.mangle(), i.rs1)).or_insert((proto.clone(), false));
            e.1 |= secured;
            rewrites.push((idx, dispatcher_name(proto, i.rs1)));
        }
        for (idx, name) in rewrites {
            if let Item::Insn(i) = &mut m.functions[fi].items[idx] {
                let op = if i.op == Opcode::ChkJalr { Opcode::ChkJal } else { Opcode::Jal };
                *i = AsmInsn { line: i.line, origin: i.origin, ..AsmInsn::new(op, i.rd, 0, 0, Operand::Label(name)) };
                sites += 1;
            }
        }
    }
    for ((_, reg), (proto, secured)) in needed {
        let name = dispatcher_name(&proto, reg);
        if let Some(existing) = m.functions.iter_mut().find(|f| f.name == name) {
            existing.secured |= secured;
            continue;
        }
        let members = class_members(m, &proto);
        m.functions.push(dispatcher(&proto, reg, &members, secured));
    }
    if sites > 0 {
        m.clear_signing();
    }
    Ok(sites)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::isa::parse_module;

    const TWO_REGS: &str = "\
.func main
    la a0, inc
    .icall (i32) -> i32
    jalr ra, 0(a0)
    la a1, dec
    .icall (i32) -> i32
    jalr ra, 0(a1)
    halt
.func inc(i32) -> i32
    addi a0, a0, 1
    ret
.func dec(i32) -> i32
    addi a0, a0, -1
    ret
.func spare(i32) -> i32
    ret
";

    #[test]
    fn one_dispatcher_per_register() {
        let mut m = parse_module(TWO_REGS).unwrap();
        assert_eq!(generate_dispatchers(&mut m).unwrap(), 2);
        let ds: Vec<_> = m.functions.iter().filter(|f| f.kind == FunctionKind::Dispatcher).collect();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds[0].insns().filter(|i| i.op == Opcode::Beq).count(), 3);
        let classes = equivalence_classes(&m);
        assert_eq!(classes.len(), 1);
        assert_eq!(classes[0].members, ["inc", "dec", "spare"]);
        assert_eq!(classes[0].non_legitimate, ["spare"]);
        let again = m.clone();
        assert_eq!(generate_dispatchers(&mut m).unwrap(), 0);
        assert_eq!(m, again);
    }

    #[test]
    fn no_indirect_calls_no_change() {
        let mut m = parse_module(".func main\n halt\n").unwrap();
        let before = m.clone();
        generate_dispatchers(&mut m).unwrap();
        assert_eq!(m, before);
    }

    #[test]
    fn unmatched_prototype_is_an_error() {
        let src = ".func main\n .icall (ptr) -> void\n jalr ra, 0(a0)\n halt\n.func f(i32)\n ret\n";
        let mut m = parse_module(src).unwrap();
        assert!(matches!(generate_dispatchers(&mut m), Err(DispatchError::EmptyClass { .. })));
    }
}
