//! Symbolic program form shared by the assembler and the instrumentation passes.
//!
//! A [`Module`] keeps labels and symbolic operands so passes can insert code
//! freely; [`link`] lays it out into a [`ProgramImage`] and [`lift`] recovers a
//! module from an image using its manifest.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::encoding::{decode, reg_name, Instruction, Opcode};
use super::image::*;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Operand {
    None,
    Imm(i32),
    /// PC-relative target of a branch or jump.
    Label(String),
    /// Upper 20 bits of an absolute symbol address, rounded for a following `%lo`.
    Hi(String),
    Lo(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AsmInsn {
    pub op: Opcode,
    pub rd: u8,
    pub rs1: u8,
    pub rs2: u8,
    pub operand: Operand,
    /// In-line reference word of verification instructions.
    pub reference: u32,
    pub icall: Option<FunctionPrototype>,
    pub origin: Origin,
    pub line: usize,
}

impl AsmInsn {
    pub fn new(op: Opcode, rd: u8, rs1: u8, rs2: u8, operand: Operand) -> Self {
        AsmInsn { op, rd, rs1, rs2, operand, reference: 0, icall: None, origin: Origin::User, line: 0 }
    }

    pub fn nop() -> Self {
        AsmInsn { origin: Origin::Nop, ..AsmInsn::new(Opcode::Addi, 0, 0, 0, Operand::Imm(0)) }
    }

    pub fn ldp(slot: u32, high: bool) -> Self {
        let op = if high { Opcode::LdpHi } else { Opcode::Ldp };
        AsmInsn { origin: Origin::Ldp, ..AsmInsn::new(op, 0, 0, 0, Operand::Imm(slot as i32)) }
    }

    pub fn size(&self) -> u32 {
        self.op.size()
    }

    pub fn target_label(&self) -> Option<&str> {
        match &self.operand {
            Operand::Label(l) => Some(l),
            _ => None,
        }
    }

    /// `jal x0, 0` in either form: the halting idiom.
    pub fn is_self_jump(&self, own_labels: &[&str]) -> bool {
        matches!(self.op, Opcode::Jal | Opcode::ChkJal)
            && self.rd == 0
            && match &self.operand {
                Operand::Imm(0) => true,
                Operand::Label(l) => own_labels.contains(&l.as_str()),
                _ => false,
            }
    }

    /// Instruction with operands resolved against a fixed immediate (for Σ derivation).
    pub fn with_imm(&self, imm: i32) -> Instruction {
        Instruction::new(self.op, self.rd, self.rs1, self.rs2, imm).canonical()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum WordValue {
    Value(u32),
    Symbol(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Item {
    Label(String),
    Insn(AsmInsn),
    Word(WordValue),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Function {
    pub name: String,
    pub proto: Option<FunctionPrototype>,
    pub secured: bool,
    pub irq: Option<u32>,
    pub kind: FunctionKind,
    pub items: Vec<Item>,
}

impl Function {
    pub fn new(name: &str) -> Self {
        Function {
            name: name.to_string(),
            proto: None,
            secured: false,
            irq: None,
            kind: FunctionKind::User,
            items: Vec::new(),
        }
    }

    pub fn insns(&self) -> impl Iterator<Item = &AsmInsn> {
        self.items.iter().filter_map(|i| match i {
            Item::Insn(x) => Some(x),
            _ => None,
        })
    }

    pub fn insns_mut(&mut self) -> impl Iterator<Item = &mut AsmInsn> {
        self.items.iter_mut().filter_map(|i| match i {
            Item::Insn(x) => Some(x),
            _ => None,
        })
    }

    /// Labels attached to the item at `idx` (the contiguous label run before it),
    /// plus the function name for the first code item.
    pub fn labels_before(&self, idx: usize) -> Vec<&str> {
        let mut out = Vec::new();
        let mut j = idx;
        while j > 0 {
            j -= 1;
            match &self.items[j] {
                Item::Label(l) => out.push(l.as_str()),
                _ => return out,
            }
        }
        out.push(self.name.as_str());
        out
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataSection {
    pub bytes: Vec<u8>,
    pub labels: Vec<(String, u32)>,
    /// Byte offset of a word holding the address of a symbol.
    pub relocs: Vec<(u32, String)>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Module {
    pub functions: Vec<Function>,
    pub data: DataSection,
    pub entry: String,
    pub init_regs: Vec<(u8, u32)>,
    /// Contents of `.patches` as 32-bit words.
    pub patches: Vec<u32>,
    pub iv_table: Vec<u64>,
    pub signing: Option<SigningInfo>,
}

impl Module {
    pub fn function(&self, name: &str) -> Option<&Function> {
        self.functions.iter().find(|f| f.name == name)
    }

    /// Drops signing metadata after a structural change.
    pub fn clear_signing(&mut self) {
        self.signing = None;
        self.iv_table.clear();
    }

    /// Every symbol whose address is materialized (`la`, `%hi/%lo`, `.word sym`),
    /// with the function that references it (`None` for data).
    pub fn address_references(&self) -> Vec<(Option<&str>, &str)> {
        let mut out = Vec::new();
        for f in &self.functions {
            for item in &f.items {
                match item {
                    Item::Insn(AsmInsn { operand: Operand::Hi(s) | Operand::Lo(s), .. }) => {
                        out.push((Some(f.name.as_str()), s.as_str()))
                    }
                    Item::Word(WordValue::Symbol(s)) => out.push((Some(f.name.as_str()), s.as_str())),
                    _ => {}
                }
            }
        }
        for (_, s) in &self.data.relocs {
            out.push((None, s.as_str()));
        }
        out
    }

    /// Source text in the assembly dialect that reassembles to the same `.text`.
    pub fn to_source(&self) -> String {
        let mut s = String::new();
        if !self.data.bytes.is_empty() {
            s.push_str(".data\n");
            let labels: BTreeMap<u32, Vec<&str>> = self.data.labels.iter().fold(BTreeMap::new(), |mut m, (n, o)| {
                m.entry(*o).or_default().push(n.as_str());
                m
            });
            let relocs: BTreeMap<u32, &str> = self.data.relocs.iter().map(|(o, n)| (*o, n.as_str())).collect();
            for (i, chunk) in self.data.bytes.chunks(4).enumerate() {
                let off = 4 * i as u32;
                for l in labels.get(&off).into_iter().flatten() {
                    let _ = writeln!(s, "{l}:");
                }
                match relocs.get(&off) {
                    Some(sym) => {
                        let _ = writeln!(s, "    .word {sym}");
                    }
                    None => {
                        let mut b = [0u8; 4];
                        b[..chunk.len()].copy_from_slice(chunk);
                        let _ = writeln!(s, "    .word 0x{:08x}", u32::from_le_bytes(b));
                    }
                }
            }
            s.push_str(".text\n");
        }
        let _ = writeln!(s, ".global {}", self.entry);
        for (r, v) in &self.init_regs {
            let _ = writeln!(s, ".reginit {}, 0x{v:x}", reg_name(*r));
        }
        for f in &self.functions {
            match &f.proto {
                Some(p) => {
                    let params: Vec<&str> = p.params.iter().map(|t| t.name()).collect();
                    let _ = writeln!(s, ".func {}({}) -> {}", f.name, params.join(", "), p.ret.name());
                }
                None => {
                    let _ = writeln!(s, ".func {}", f.name);
                }
            }
            if f.secured {
                s.push_str("    .secured\n");
            }
            if let Some(n) = f.irq {
                let _ = writeln!(s, "    .irq {n}");
            }
            for item in &f.items {
                match item {
                    Item::Label(l) => {
                        let _ = writeln!(s, "{l}:");
                    }
                    Item::Word(WordValue::Value(v)) => {
                        let _ = writeln!(s, "    .word 0x{v:08x}");
                    }
                    Item::Word(WordValue::Symbol(v)) => {
                        let _ = writeln!(s, "    .word {v}");
                    }
                    Item::Insn(i) => {
                        if let Some(p) = &i.icall {
                            let _ = writeln!(s, "    .icall {p}");
                        }
                        let _ = writeln!(s, "    {}", insn_source(i));
                    }
                }
            }
        }
        s
    }
}

fn operand_text(i: &AsmInsn) -> String {
    match &i.operand {
        Operand::None => String::new(),
        Operand::Imm(v) => v.to_string(),
        Operand::Label(l) => l.clone(),
        Operand::Hi(l) => format!("%hi({l})"),
        Operand::Lo(l) => format!("%lo({l})"),
    }
}

fn insn_source(i: &AsmInsn) -> String {
    use super::encoding::InstrKind as K;
    let m = i.op.mnemonic();
    let (rd, rs1, rs2) = (reg_name(i.rd), reg_name(i.rs1), reg_name(i.rs2));
    let opnd = operand_text(i);
    let body = match i.op.kind() {
        K::Load => format!("{m} {rd}, {opnd}({rs1})"),
        K::Store => format!("{m} {rs2}, {opnd}({rs1})"),
        K::Branch | K::CheckedBranch => format!("{m} {rs1}, {rs2}, {opnd}"),
        K::Jal | K::CheckedJal => format!("{m} {rd}, {opnd}"),
        K::Jalr | K::CheckedJalr => format!("{m} {rd}, {opnd}({rs1})"),
        K::Ldp => format!("{m} {opnd}"),
        K::System => m.to_string(),
        _ => match i.op {
            Opcode::Lui | Opcode::Auipc => match &i.operand {
                Operand::Imm(v) => format!("{m} {rd}, 0x{:x}", (*v as u32) >> 12),
                _ => format!("{m} {rd}, {opnd}"),
            },
            Opcode::Add
            | Opcode::Sub
            | Opcode::Sll
            | Opcode::Slt
            | Opcode::Sltu
            | Opcode::Xor
            | Opcode::Srl
            | Opcode::Sra
            | Opcode::Or
            | Opcode::And => format!("{m} {rd}, {rs1}, {rs2}"),
            _ => format!("{m} {rd}, {rs1}, {opnd}"),
        },
    };
    if i.op.is_checked() {
        format!("{body} !0x{:08x}", i.reference)
    } else {
        body
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum LinkError {
    #[error("line {line}: undefined label `{name}`")]
    UndefinedLabel { line: usize, name: String },
    #[error("duplicate label `{0}`")]
    DuplicateLabel(String),
    #[error("line {line}: {mnemonic} cannot encode {what}")]
    Range { line: usize, mnemonic: &'static str, what: String },
    #[error("entry symbol `{0}` is not a function")]
    BadEntry(String),
    #[error("label `{label}` in `{function}` is not followed by code")]
    DanglingLabel { function: String, label: String },
    #[error("section overflow: {0}")]
    Overflow(String),
}

/// Leader flags for each item of `f` (only meaningful on code items).
///
/// Leaders are the first code item, branch/jump targets (self jumps excluded),
/// items after a control-flow instruction, and raw words with their successors.
pub fn leader_flags(f: &Function, targets: &BTreeSet<String>) -> Vec<bool> {
    let mut flags = vec![false; f.items.len()];
    let mut first = true;
    let mut after_break = false;
    for (idx, item) in f.items.iter().enumerate() {
        match item {
            Item::Label(_) => {}
            Item::Word(_) => {
                flags[idx] = true;
                first = false;
                after_break = true;
            }
            Item::Insn(i) => {
                let labels = f.labels_before(idx);
                let targeted = labels.iter().any(|l| targets.contains(*l));
                flags[idx] = first || after_break || targeted;
                first = false;
                after_break = i.op.is_control_flow();
            }
        }
    }
    flags
}

/// Labels referenced as branch/jump targets anywhere in the module, excluding self jumps.
pub fn branch_targets(m: &Module) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    for f in &m.functions {
        for (idx, item) in f.items.iter().enumerate() {
            if let Item::Insn(i) = item {
                if let Operand::Label(l) = &i.operand {
                    if !i.is_self_jump(&f.labels_before(idx)) {
                        out.insert(l.clone());
                    }
                }
            }
        }
    }
    out
}

/// Addresses assigned to every item of every function, plus the symbol table.
pub struct Layout {
    pub item_addr: Vec<Vec<u32>>,
    pub func_range: Vec<(u32, u32)>,
    pub symbols: BTreeMap<String, u32>,
}

pub fn layout(m: &Module) -> Result<Layout, LinkError> {
    let mut symbols = BTreeMap::new();
    let define = |name: &str, addr: u32, symbols: &mut BTreeMap<String, u32>| {
        if symbols.insert(name.to_string(), addr).is_some() {
            Err(LinkError::DuplicateLabel(name.to_string()))
        } else {
            Ok(())
        }
    };
    let mut pc = TEXT_BASE;
    let mut item_addr = Vec::new();
    let mut func_range = Vec::new();
    for f in &m.functions {
        define(&f.name, pc, &mut symbols)?;
        let start = pc;
        let mut addrs = Vec::with_capacity(f.items.len());
        for item in &f.items {
            addrs.push(pc);
            match item {
                Item::Label(l) => define(l, pc, &mut symbols)?,
                Item::Insn(i) => pc += i.size(),
                Item::Word(_) => pc += 4,
            }
        }
        if let Some(Item::Label(l)) = f.items.last() {
            return Err(LinkError::DanglingLabel { function: f.name.clone(), label: l.clone() });
        }
        item_addr.push(addrs);
        func_range.push((start, pc));
    }
    if pc > DATA_BASE {
        return Err(LinkError::Overflow(format!(".text ends at 0x{pc:08x}")));
    }
    if m.data.bytes.len() as u32 > PATCH_BASE - DATA_BASE {
        return Err(LinkError::Overflow(".data too large".into()));
    }
    for (name, off) in &m.data.labels {
        define(name, DATA_BASE + off, &mut symbols)?;
    }
    Ok(Layout { item_addr, func_range, symbols })
}

fn hi_part(addr: u32) -> i32 {
    (addr.wrapping_add(0x800) & 0xFFFF_F000) as i32
}

fn lo_part(addr: u32) -> i32 {
    addr.wrapping_sub(hi_part(addr) as u32) as i32
}

/// Resolves the immediate of `i` placed at `pc`.
pub fn resolve_imm(i: &AsmInsn, pc: u32, symbols: &BTreeMap<String, u32>) -> Result<i32, LinkError> {
    let lookup = |name: &String| {
        symbols.get(name).copied().ok_or_else(|| LinkError::UndefinedLabel { line: i.line, name: name.clone() })
    };
    Ok(match &i.operand {
        Operand::None => 0,
        Operand::Imm(v) => *v,
        Operand::Label(l) => lookup(l)?.wrapping_sub(pc) as i32,
        Operand::Hi(l) => hi_part(lookup(l)?),
        Operand::Lo(l) => lo_part(lookup(l)?),
    })
}

pub fn link(m: &Module) -> Result<ProgramImage, LinkError> {
    let lay = layout(m)?;
    let targets = branch_targets(m);
    let mut text = Vec::new();
    let mut manifest = Manifest {
        entry_symbol: m.entry.clone(),
        symbols: lay.symbols.clone(),
        init_regs: m.init_regs.clone(),
        signing: m.signing.clone(),
        ..Manifest::default()
    };
    for (fi, f) in m.functions.iter().enumerate() {
        let (start, end) = lay.func_range[fi];
        manifest.functions.push(FunctionInfo {
            name: f.name.clone(),
            start,
            end,
            proto: f.proto.clone(),
            secured: f.secured,
            irq: f.irq,
            kind: f.kind,
        });
        let flags = leader_flags(f, &targets);
        for (idx, item) in f.items.iter().enumerate() {
            let pc = lay.item_addr[fi][idx];
            if flags[idx] {
                manifest.leaders.insert(pc);
            }
            match item {
                Item::Label(_) => {}
                Item::Word(w) => {
                    manifest.text_words.insert(pc);
                    let v = match w {
                        WordValue::Value(v) => *v,
                        WordValue::Symbol(s) => {
                            manifest.relocs.push(Reloc { addr: pc, kind: RelocKind::Word, symbol: s.clone() });
                            *lay.symbols.get(s).ok_or_else(|| LinkError::UndefinedLabel { line: 0, name: s.clone() })?
                        }
                    };
                    text.extend_from_slice(&v.to_le_bytes());
                }
                Item::Insn(i) => {
                    let imm = resolve_imm(i, pc, &lay.symbols)?;
                    match &i.operand {
                        Operand::Hi(s) => {
                            manifest.relocs.push(Reloc { addr: pc, kind: RelocKind::Hi, symbol: s.clone() })
                        }
                        Operand::Lo(s) => {
                            manifest.relocs.push(Reloc { addr: pc, kind: RelocKind::Lo, symbol: s.clone() })
                        }
                        _ => {}
                    }
                    let ins = Instruction::new(i.op, i.rd, i.rs1, i.rs2, imm);
                    let word = ins.encode().map_err(|_| LinkError::Range {
                        line: i.line,
                        mnemonic: i.op.mnemonic(),
                        what: match &i.operand {
                            Operand::Label(l) => format!("offset {imm} to `{l}`"),
                            _ => format!("immediate {imm}"),
                        },
                    })?;
                    text.extend_from_slice(&word.to_le_bytes());
                    if i.op.is_checked() {
                        text.extend_from_slice(&i.reference.to_le_bytes());
                    }
                    if let Some(p) = &i.icall {
                        manifest.icall_sites.push(IcallSite { addr: pc, proto: p.clone() });
                    }
                    if i.origin != Origin::User {
                        manifest.origins.insert(pc, i.origin);
                    }
                }
            }
        }
    }
    let mut data = m.data.bytes.clone();
    while !data.len().is_multiple_of(4) {
        data.push(0);
    }
    for (off, sym) in &m.data.relocs {
        let v = *lay.symbols.get(sym).ok_or_else(|| LinkError::UndefinedLabel { line: 0, name: sym.clone() })?;
        write_word(&mut data, 0, *off, v);
        manifest.relocs.push(Reloc { addr: DATA_BASE + off, kind: RelocKind::Word, symbol: sym.clone() });
    }
    let entry = m
        .functions
        .iter()
        .position(|f| f.name == m.entry)
        .map(|i| lay.func_range[i].0)
        .ok_or_else(|| LinkError::BadEntry(m.entry.clone()))?;
    let patches = m.patches.iter().flat_map(|w| w.to_le_bytes()).collect();
    Ok(ProgramImage {
        text_base: TEXT_BASE,
        text,
        data_base: DATA_BASE,
        data,
        patch_base: PATCH_BASE,
        patches,
        iv_table: m.iv_table.clone(),
        entry,
        manifest,
    })
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum LiftError {
    #[error("function `{0}` has an invalid address range")]
    BadRange(String),
    #[error("instruction at 0x{0:08x} straddles a function boundary")]
    Straddle(u32),
}

/// Recovers the symbolic module from an image. `link(lift(img))` reproduces
/// the image's sections bit-exactly.
pub fn lift(img: &ProgramImage) -> Result<Module, LiftError> {
    let man = &img.manifest;
    let text_end = img.text_end();
    let mut by_addr: BTreeMap<u32, Vec<&str>> = BTreeMap::new();
    for (name, &addr) in &man.symbols {
        by_addr.entry(addr).or_default().push(name.as_str());
    }
    let relocs: BTreeMap<u32, &Reloc> = man.relocs.iter().map(|r| (r.addr, r)).collect();
    let icalls: BTreeMap<u32, &FunctionPrototype> = man.icall_sites.iter().map(|s| (s.addr, &s.proto)).collect();

    // First pass: decode and find branch targets lacking a symbol.
    let mut decoded: BTreeMap<u32, Result<Instruction, u32>> = BTreeMap::new();
    let mut synth: BTreeMap<u32, String> = BTreeMap::new();
    let mut functions: Vec<&FunctionInfo> = man.functions.iter().collect();
    functions.sort_by_key(|f| f.start);
    for f in &functions {
        if f.end < f.start || f.end > text_end || f.start < img.text_base {
            return Err(LiftError::BadRange(f.name.clone()));
        }
        let mut pc = f.start;
        while pc < f.end {
            let w = img.text_word(pc).unwrap();
            if man.text_words.contains(&pc) {
                decoded.insert(pc, Err(w));
                pc += 4;
                continue;
            }
            match decode(w) {
                Ok(i) => {
                    if i.op.size() == 8 && pc + 8 > f.end {
                        return Err(LiftError::Straddle(pc));
                    }
                    let is_target = matches!(
                        i.op.kind(),
                        super::encoding::InstrKind::Branch
                            | super::encoding::InstrKind::CheckedBranch
                            | super::encoding::InstrKind::Jal
                            | super::encoding::InstrKind::CheckedJal
                    );
                    if is_target {
                        let t = pc.wrapping_add(i.imm as u32);
                        if !by_addr.contains_key(&t) {
                            synth.entry(t).or_insert_with(|| format!(".L_{t:08x}"));
                        }
                    }
                    decoded.insert(pc, Ok(i));
                    pc += i.op.size();
                }
                Err(_) => {
                    decoded.insert(pc, Err(w));
                    pc += 4;
                }
            }
        }
    }
    for (addr, name) in &synth {
        by_addr.entry(*addr).or_default().push(name.as_str());
    }
    let name_at = |addr: u32| -> Option<String> {
        by_addr.get(&addr).and_then(|v| {
            let mut v = v.clone();
            v.sort();
            v.first().map(|s| s.to_string())
        })
    };

    let mut out_functions = Vec::new();
    for f in &functions {
        let mut func = Function {
            name: f.name.clone(),
            proto: f.proto.clone(),
            secured: f.secured,
            irq: f.irq,
            kind: f.kind,
            items: Vec::new(),
        };
        for (&pc, d) in decoded.range(f.start..f.end) {
            if let Some(names) = by_addr.get(&pc) {
                let mut names: Vec<&str> = names.iter().copied().filter(|n| *n != f.name).collect();
                names.sort();
                // Data labels share no addresses with text, so everything here is a code label.
                func.items.extend(names.into_iter().map(|n| Item::Label(n.to_string())));
            }
            match d {
                Err(w) => {
                    let v = match relocs.get(&pc) {
                        Some(r) if r.kind == RelocKind::Word => WordValue::Symbol(r.symbol.clone()),
                        _ => WordValue::Value(*w),
                    };
                    func.items.push(Item::Word(v));
                }
                Ok(i) => {
                    use super::encoding::InstrKind as K;
                    let operand = match (i.op.kind(), relocs.get(&pc)) {
                        (_, Some(r)) if r.kind == RelocKind::Hi => Operand::Hi(r.symbol.clone()),
                        (_, Some(r)) if r.kind == RelocKind::Lo => Operand::Lo(r.symbol.clone()),
                        (K::Branch | K::CheckedBranch | K::Jal | K::CheckedJal, _) => {
                            Operand::Label(name_at(pc.wrapping_add(i.imm as u32)).unwrap())
                        }
                        (K::System, _) => Operand::None,
                        _ => match i.op {
                            Opcode::Add
                            | Opcode::Sub
                            | Opcode::Sll
                            | Opcode::Slt
                            | Opcode::Sltu
                            | Opcode::Xor
                            | Opcode::Srl
                            | Opcode::Sra
                            | Opcode::Or
                            | Opcode::And => Operand::None,
                            _ => Operand::Imm(i.imm),
                        },
                    };
                    let reference = if i.op.is_checked() { img.text_word(pc + 4).unwrap() } else { 0 };
                    func.items.push(Item::Insn(AsmInsn {
                        op: i.op,
                        rd: i.rd,
                        rs1: i.rs1,
                        rs2: i.rs2,
                        operand,
                        reference,
                        icall: icalls.get(&pc).map(|p| (*p).clone()),
                        origin: man.origins.get(&pc).copied().unwrap_or_default(),
                        line: 0,
                    }));
                }
            }
        }
        out_functions.push(func);
    }

    let data_end = img.data_base + img.data.len() as u32;
    let mut labels: Vec<(String, u32)> = man
        .symbols
        .iter()
        .filter(|(_, &a)| a >= img.data_base && a < img.patch_base)
        .map(|(n, &a)| (n.clone(), a - img.data_base))
        .collect();
    labels.sort_by(|a, b| (a.1, &a.0).cmp(&(b.1, &b.0)));
    let data_relocs = man
        .relocs
        .iter()
        .filter(|r| r.addr >= img.data_base && r.addr < data_end)
        .map(|r| (r.addr - img.data_base, r.symbol.clone()))
        .collect();
    Ok(Module {
        functions: out_functions,
        data: DataSection { bytes: img.data.clone(), labels, relocs: data_relocs },
        entry: man.entry_symbol.clone(),
        init_regs: man.init_regs.clone(),
        patches: img.patches.chunks_exact(4).map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect(),
        iv_table: img.iv_table.clone(),
        signing: man.signing.clone(),
    })
}
