//! Parser for the assembly dialect.
//!
//! ```text
//! .data
//! pin:    .word 1, 2, 3, 4
//! buf:    .space 16
//! .text
//! .global main
//! .reginit t0, 16
//! .func main
//!     .secured
//! loop:
//!     addi t0, t0, -1
//!     bne  t0, zero, loop
//!     halt
//! .func inc(i32) -> i32
//!     addi a0, a0, 1
//!     ret
//! ```
//!
//! Comments start with `#`, `;` or `//`. `.icall (i32) -> i32` annotates the
//! next `jalr` as an indirect call of that prototype. `halt` is `jal x0, 0`.
//! A verification instruction may carry its reference word as `!0x1234abcd`.

use std::collections::BTreeSet;

use thiserror::Error;

use super::encoding::{parse_register, InstrKind, Opcode};
use super::image::{FunctionPrototype, ProgramImage, TypeTag};
use super::module::{link, AsmInsn, DataSection, Function, Item, LinkError, Module, Operand, WordValue};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AsmError {
    #[error("{line}:{col}: syntax error: {msg}")]
    Syntax { line: usize, col: usize, msg: String },
    #[error("{line}:{col}: undefined label `{name}`")]
    UndefinedLabel { line: usize, col: usize, name: String },
    #[error("{line}:{col}: duplicate label `{name}`")]
    DuplicateLabel { line: usize, col: usize, name: String },
    #[error("{line}:{col}: immediate {value} out of range for {mnemonic}")]
    ImmediateRange { line: usize, col: usize, value: i64, mnemonic: String },
    #[error("function `{0}` has its address taken but declares no prototype")]
    MissingPrototype(String),
    #[error(transparent)]
    Link(#[from] LinkError),
}

#[derive(Clone, Copy)]
struct Pos {
    line: usize,
    col: usize,
}

fn syntax(p: Pos, msg: impl Into<String>) -> AsmError {
    AsmError::Syntax { line: p.line, col: p.col, msg: msg.into() }
}

#[derive(PartialEq)]
enum Section {
    Text,
    Data,
}

/// A comma-separated operand with its column.
struct Arg<'a> {
    text: &'a str,
    col: usize,
}

fn strip_comment(line: &str) -> &str {
    let mut end = line.len();
    for pat in ["#", ";", "//"] {
        if let Some(i) = line.find(pat) {
            end = end.min(i);
        }
    }
    &line[..end]
}

fn is_ident(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_' || c == '.')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '.' || c == '$')
}

fn split_args(s: &str, base_col: usize) -> Vec<Arg<'_>> {
    let mut out = Vec::new();
    let mut depth = 0;
    let mut start = 0;
    for (i, c) in s.char_indices() {
        match c {
            '(' => depth += 1,
            ')' => depth -= 1,
            ',' if depth == 0 => {
                push_arg(&mut out, s, start, i, base_col);
                start = i + 1;
            }
            _ => {}
        }
    }
    push_arg(&mut out, s, start, s.len(), base_col);
    out
}

fn push_arg<'a>(out: &mut Vec<Arg<'a>>, s: &'a str, start: usize, end: usize, base_col: usize) {
    let raw = &s[start..end];
    let trimmed = raw.trim_start();
    let lead = raw.len() - trimmed.len();
    let text = trimmed.trim_end();
    if !text.is_empty() || !out.is_empty() || end < s.len() {
        out.push(Arg { text, col: base_col + start + lead });
    }
}

pub fn parse_int(s: &str) -> Option<i64> {
    let s = s.trim();
    let (neg, body) = match s.strip_prefix('-') {
        Some(b) => (true, b),
        None => (false, s.strip_prefix('+').unwrap_or(s)),
    };
    let body: String = body.chars().filter(|&c| c != '_').collect();
    let v = if let Some(h) = body.strip_prefix("0x").or_else(|| body.strip_prefix("0X")) {
        i64::from_str_radix(h, 16).ok()?
    } else if let Some(b) = body.strip_prefix("0b") {
        i64::from_str_radix(b, 2).ok()?
    } else {
        body.parse::<i64>().ok()?
    };
    Some(if neg { -v } else { v })
}

fn parse_proto(s: &str, p: Pos) -> Result<FunctionPrototype, AsmError> {
    // "(i32, ptr) -> i32" or "(i32)" (void return)
    let s = s.trim();
    let open = s.find('(').ok_or_else(|| syntax(p, "expected `(` in prototype"))?;
    let close = s.rfind(')').ok_or_else(|| syntax(p, "expected `)` in prototype"))?;
    if !s[..open].trim().is_empty() {
        return Err(syntax(p, "unexpected text before prototype"));
    }
    let mut params = Vec::new();
    let inner = s[open + 1..close].trim();
    if !inner.is_empty() {
        for t in inner.split(',') {
            let tag = TypeTag::parse(t.trim()).ok_or_else(|| syntax(p, format!("unknown type `{}`", t.trim())))?;
            if tag == TypeTag::Void {
                return Err(syntax(p, "`void` is not a parameter type"));
            }
            params.push(tag);
        }
    }
    let rest = s[close + 1..].trim();
    let ret = if rest.is_empty() {
        TypeTag::Void
    } else {
        let r = rest.strip_prefix("->").ok_or_else(|| syntax(p, "expected `->` after parameters"))?;
        TypeTag::parse(r.trim()).ok_or_else(|| syntax(p, format!("unknown type `{}`", r.trim())))?
    };
    Ok(FunctionPrototype { ret, params })
}

struct Parser {
    module: Module,
    section: Section,
    current: Option<Function>,
    pending_icall: Option<FunctionPrototype>,
    labels: BTreeSet<String>,
    globals: Vec<String>,
    /// (line, col, label) of every symbolic reference, for undefined-label reporting.
    refs: Vec<(Pos, String)>,
}

impl Parser {
    fn define(&mut self, name: &str, p: Pos) -> Result<(), AsmError> {
        if !self.labels.insert(name.to_string()) {
            return Err(AsmError::DuplicateLabel { line: p.line, col: p.col, name: name.to_string() });
        }
        Ok(())
    }

    fn func(&mut self, p: Pos) -> Result<&mut Function, AsmError> {
        self.current.as_mut().ok_or_else(|| syntax(p, "code outside a `.func`"))
    }

    fn finish_function(&mut self) {
        if let Some(f) = self.current.take() {
            self.module.functions.push(f);
        }
    }

    fn reg(&self, a: &Arg, line: usize) -> Result<u8, AsmError> {
        parse_register(a.text)
            .ok_or_else(|| syntax(Pos { line, col: a.col }, format!("expected register, found `{}`", a.text)))
    }

    fn imm(&self, a: &Arg, line: usize) -> Result<i64, AsmError> {
        parse_int(a.text)
            .ok_or_else(|| syntax(Pos { line, col: a.col }, format!("expected immediate, found `{}`", a.text)))
    }

    /// Immediate, `%hi(sym)` or `%lo(sym)`.
    fn imm_operand(&mut self, a: &Arg, line: usize, lo: i64, hi: i64, m: &str) -> Result<Operand, AsmError> {
        let p = Pos { line, col: a.col };
        for (prefix, mk) in [("%hi(", Operand::Hi as fn(String) -> Operand), ("%lo(", Operand::Lo)] {
            if let Some(rest) = a.text.strip_prefix(prefix) {
                let sym = rest.strip_suffix(')').ok_or_else(|| syntax(p, "expected `)`"))?.trim();
                if !is_ident(sym) {
                    return Err(syntax(p, format!("bad symbol `{sym}`")));
                }
                self.refs.push((p, sym.to_string()));
                return Ok(mk(sym.to_string()));
            }
        }
        let v = self.imm(a, line)?;
        if v < lo || v > hi {
            return Err(AsmError::ImmediateRange { line, col: a.col, value: v, mnemonic: m.to_string() });
        }
        Ok(Operand::Imm(v as i32))
    }

    fn target(&mut self, a: &Arg, line: usize) -> Result<Operand, AsmError> {
        if let Some(v) = parse_int(a.text) {
            return Ok(Operand::Imm(v as i32));
        }
        if !is_ident(a.text) {
            return Err(syntax(Pos { line, col: a.col }, format!("expected label, found `{}`", a.text)));
        }
        self.refs.push((Pos { line, col: a.col }, a.text.to_string()));
        Ok(Operand::Label(a.text.to_string()))
    }

    /// `off(reg)` memory operand.
    fn mem(&mut self, a: &Arg, line: usize, m: &str) -> Result<(Operand, u8), AsmError> {
        let p = Pos { line, col: a.col };
        let open = a.text.rfind('(').ok_or_else(|| syntax(p, "expected `offset(register)`"))?;
        let reg_text = a.text[open + 1..].strip_suffix(')').ok_or_else(|| syntax(p, "expected `)`"))?;
        let reg = parse_register(reg_text.trim()).ok_or_else(|| syntax(p, format!("bad register `{reg_text}`")))?;
        let off_text = a.text[..open].trim();
        let off = if off_text.is_empty() {
            Operand::Imm(0)
        } else {
            self.imm_operand(&Arg { text: off_text, col: a.col }, line, -2048, 2047, m)?
        };
        Ok((off, reg))
    }

    fn push(&mut self, p: Pos, mut insn: AsmInsn) -> Result<(), AsmError> {
        insn.line = p.line;
        if matches!(insn.op, Opcode::Jalr) {
            insn.icall = self.pending_icall.take();
        }
        self.func(p)?.items.push(Item::Insn(insn));
        Ok(())
    }

    fn directive(&mut self, name: &str, rest: &str, p: Pos, rest_col: usize) -> Result<(), AsmError> {
        let line = p.line;
        match name {
            ".text" => {
                self.section = Section::Text;
            }
            ".data" => {
                self.finish_function();
                self.section = Section::Data;
            }
            ".global" | ".globl" => {
                let sym = rest.trim();
                if !is_ident(sym) {
                    return Err(syntax(p, "expected symbol after .global"));
                }
                self.globals.push(sym.to_string());
            }
            ".func" => {
                if self.section != Section::Text {
                    return Err(syntax(p, ".func outside .text"));
                }
                self.finish_function();
                let rest = rest.trim();
                let (name, proto) = match rest.find('(') {
                    Some(i) => (rest[..i].trim(), Some(parse_proto(&rest[i..], p)?)),
                    None => (rest, None),
                };
                if !is_ident(name) {
                    return Err(syntax(p, format!("bad function name `{name}`")));
                }
                self.define(name, p)?;
                let mut f = Function::new(name);
                f.proto = proto;
                self.current = Some(f);
            }
            ".secured" => {
                self.func(p)?.secured = true;
            }
            ".irq" => {
                let n = parse_int(rest)
                    .filter(|n| (0..256).contains(n))
                    .ok_or_else(|| syntax(p, "expected irq number 0-255"))?;
                self.func(p)?.irq = Some(n as u32);
            }
            ".icall" => {
                self.pending_icall = Some(parse_proto(rest, p)?);
            }
            ".reginit" => {
                let args = split_args(rest, rest_col);
                if args.len() != 2 {
                    return Err(syntax(p, ".reginit takes a register and a value"));
                }
                let r = self.reg(&args[0], line)?;
                let v = self.imm(&args[1], line)?;
                if v < i32::MIN as i64 || v > u32::MAX as i64 {
                    return Err(AsmError::ImmediateRange {
                        line,
                        col: args[1].col,
                        value: v,
                        mnemonic: ".reginit".into(),
                    });
                }
                self.module.init_regs.retain(|(x, _)| *x != r);
                self.module.init_regs.push((r, v as u32));
            }
            ".word" => {
                for a in split_args(rest, rest_col) {
                    let value = if let Some(v) = parse_int(a.text) {
                        if v < i32::MIN as i64 || v > u32::MAX as i64 {
                            return Err(AsmError::ImmediateRange {
                                line,
                                col: a.col,
                                value: v,
                                mnemonic: ".word".into(),
                            });
                        }
                        WordValue::Value(v as u32)
                    } else if is_ident(a.text) {
                        self.refs.push((Pos { line, col: a.col }, a.text.to_string()));
                        WordValue::Symbol(a.text.to_string())
                    } else {
                        return Err(syntax(Pos { line, col: a.col }, format!("bad .word operand `{}`", a.text)));
                    };
                    match self.section {
                        Section::Text => self.func(p)?.items.push(Item::Word(value)),
                        Section::Data => {
                            let d = &mut self.module.data;
                            let off = d.bytes.len() as u32;
                            match value {
                                WordValue::Value(v) => d.bytes.extend_from_slice(&v.to_le_bytes()),
                                WordValue::Symbol(s) => {
                                    d.relocs.push((off, s));
                                    d.bytes.extend_from_slice(&[0; 4]);
                                }
                            }
                        }
                    }
                }
            }
            ".space" => {
                if self.section != Section::Data {
                    return Err(syntax(p, ".space is only allowed in .data"));
                }
                let n = parse_int(rest)
                    .filter(|n| (0..=0x1_0000).contains(n))
                    .ok_or_else(|| syntax(p, "bad .space size"))?;
                let n = (n as usize).div_ceil(4) * 4;
                self.module.data.bytes.extend(std::iter::repeat_n(0, n));
            }
            _ => return Err(syntax(p, format!("unknown directive `{name}`"))),
        }
        Ok(())
    }

    fn instruction(&mut self, mnem: &str, rest: &str, p: Pos, rest_col: usize) -> Result<(), AsmError> {
        let line = p.line;
        // Optional in-line reference for verification instructions.
        let (rest, reference) = match rest.rfind('!') {
            Some(i) => {
                let v = parse_int(&rest[i + 1..]).ok_or_else(|| syntax(p, "bad reference word"))?;
                (&rest[..i], Some(v as u32))
            }
            None => (rest, None),
        };
        let args = split_args(rest, rest_col);
        let n = args.len();
        let want = |k: usize| -> Result<(), AsmError> {
            if n == k {
                Ok(())
            } else {
                Err(syntax(p, format!("`{mnem}` takes {k} operand(s), found {n}")))
            }
        };
        let ins = |op, rd, rs1, rs2, operand| AsmInsn::new(op, rd, rs1, rs2, operand);
        use Opcode::*;
        match mnem {
            "nop" => {
                want(0)?;
                return self.push(p, ins(Addi, 0, 0, 0, Operand::Imm(0)));
            }
            "halt" => {
                want(0)?;
                return self.push(p, ins(Jal, 0, 0, 0, Operand::Imm(0)));
            }
            "li" => {
                want(2)?;
                let rd = self.reg(&args[0], line)?;
                let v = self.imm(&args[1], line)?;
                if v < i32::MIN as i64 || v > u32::MAX as i64 {
                    return Err(AsmError::ImmediateRange { line, col: args[1].col, value: v, mnemonic: "li".into() });
                }
                let v = v as u32 as i32;
                if (-2048..2048).contains(&v) {
                    return self.push(p, ins(Addi, rd, 0, 0, Operand::Imm(v)));
                }
                let hi = (v as u32).wrapping_add(0x800) & 0xFFFF_F000;
                let lo = (v as u32).wrapping_sub(hi) as i32;
                self.push(p, ins(Lui, rd, 0, 0, Operand::Imm(hi as i32)))?;
                return self.push(p, ins(Addi, rd, rd, 0, Operand::Imm(lo)));
            }
            "la" => {
                want(2)?;
                let rd = self.reg(&args[0], line)?;
                let sym = args[1].text;
                if !is_ident(sym) {
                    return Err(syntax(Pos { line, col: args[1].col }, "expected symbol"));
                }
                self.refs.push((Pos { line, col: args[1].col }, sym.to_string()));
                self.push(p, ins(Lui, rd, 0, 0, Operand::Hi(sym.to_string())))?;
                return self.push(p, ins(Addi, rd, rd, 0, Operand::Lo(sym.to_string())));
            }
            "mv" => {
                want(2)?;
                let (rd, rs) = (self.reg(&args[0], line)?, self.reg(&args[1], line)?);
                return self.push(p, ins(Addi, rd, rs, 0, Operand::Imm(0)));
            }
            "not" => {
                want(2)?;
                let (rd, rs) = (self.reg(&args[0], line)?, self.reg(&args[1], line)?);
                return self.push(p, ins(Xori, rd, rs, 0, Operand::Imm(-1)));
            }
            "neg" => {
                want(2)?;
                let (rd, rs) = (self.reg(&args[0], line)?, self.reg(&args[1], line)?);
                return self.push(p, ins(Sub, rd, 0, rs, Operand::None));
            }
            "seqz" => {
                want(2)?;
                let (rd, rs) = (self.reg(&args[0], line)?, self.reg(&args[1], line)?);
                return self.push(p, ins(Sltiu, rd, rs, 0, Operand::Imm(1)));
            }
            "snez" => {
                want(2)?;
                let (rd, rs) = (self.reg(&args[0], line)?, self.reg(&args[1], line)?);
                return self.push(p, ins(Sltu, rd, 0, rs, Operand::None));
            }
            "j" => {
                want(1)?;
                let t = self.target(&args[0], line)?;
                return self.push(p, ins(Jal, 0, 0, 0, t));
            }
            "call" => {
                want(1)?;
                let t = self.target(&args[0], line)?;
                return self.push(p, ins(Jal, 1, 0, 0, t));
            }
            "ret" => {
                want(0)?;
                return self.push(p, ins(Jalr, 0, 1, 0, Operand::Imm(0)));
            }
            "jr" => {
                want(1)?;
                let rs = self.reg(&args[0], line)?;
                return self.push(p, ins(Jalr, 0, rs, 0, Operand::Imm(0)));
            }
            "beqz" | "bnez" | "bltz" | "bgez" => {
                want(2)?;
                let rs = self.reg(&args[0], line)?;
                let t = self.target(&args[1], line)?;
                let op = match mnem {
                    "beqz" => Beq,
                    "bnez" => Bne,
                    "bltz" => Blt,
                    _ => Bge,
                };
                return self.push(p, ins(op, 0, rs, 0, t));
            }
            "bgt" | "ble" | "bgtu" | "bleu" => {
                want(3)?;
                let (a, b) = (self.reg(&args[0], line)?, self.reg(&args[1], line)?);
                let t = self.target(&args[2], line)?;
                let op = match mnem {
                    "bgt" => Blt,
                    "ble" => Bge,
                    "bgtu" => Bltu,
                    _ => Bgeu,
                };
                return self.push(p, ins(op, 0, b, a, t));
            }
            _ => {}
        }
        let op = Opcode::from_mnemonic(mnem).ok_or_else(|| syntax(p, format!("unknown mnemonic `{mnem}`")))?;
        let mut insn = match op.kind() {
            InstrKind::Alu | InstrKind::Nop => match op {
                Lui | Auipc => {
                    want(2)?;
                    let rd = self.reg(&args[0], line)?;
                    let operand = match self.imm_operand(&args[1], line, 0, 0xFFFFF, mnem)? {
                        Operand::Imm(v) => Operand::Imm(((v as u32) << 12) as i32),
                        other => other,
                    };
                    ins(op, rd, 0, 0, operand)
                }
                Add | Sub | Sll | Slt | Sltu | Xor | Srl | Sra | Or | And => {
                    want(3)?;
                    let rd = self.reg(&args[0], line)?;
                    let rs1 = self.reg(&args[1], line)?;
                    let rs2 = self.reg(&args[2], line)?;
                    ins(op, rd, rs1, rs2, Operand::None)
                }
                Slli | Srli | Srai => {
                    want(3)?;
                    let rd = self.reg(&args[0], line)?;
                    let rs1 = self.reg(&args[1], line)?;
                    let sh = self.imm_operand(&args[2], line, 0, 31, mnem)?;
                    ins(op, rd, rs1, 0, sh)
                }
                _ => {
                    want(3)?;
                    let rd = self.reg(&args[0], line)?;
                    let rs1 = self.reg(&args[1], line)?;
                    let imm = self.imm_operand(&args[2], line, -2048, 2047, mnem)?;
                    ins(op, rd, rs1, 0, imm)
                }
            },
            InstrKind::Load => {
                want(2)?;
                let rd = self.reg(&args[0], line)?;
                let (off, rs1) = self.mem(&args[1], line, mnem)?;
                ins(op, rd, rs1, 0, off)
            }
            InstrKind::Store => {
                want(2)?;
                let rs2 = self.reg(&args[0], line)?;
                let (off, rs1) = self.mem(&args[1], line, mnem)?;
                ins(op, 0, rs1, rs2, off)
            }
            InstrKind::Branch | InstrKind::CheckedBranch => {
                want(3)?;
                let rs1 = self.reg(&args[0], line)?;
                let rs2 = self.reg(&args[1], line)?;
                let t = self.target(&args[2], line)?;
                ins(op, 0, rs1, rs2, t)
            }
            InstrKind::Jal | InstrKind::CheckedJal => {
                let (rd, t) = match n {
                    1 => (1, self.target(&args[0], line)?),
                    2 => (self.reg(&args[0], line)?, self.target(&args[1], line)?),
                    _ => return Err(syntax(p, format!("`{mnem}` takes 1 or 2 operands"))),
                };
                ins(op, rd, 0, 0, t)
            }
            InstrKind::Jalr | InstrKind::CheckedJalr => match n {
                1 => {
                    let rs1 = self.reg(&args[0], line)?;
                    ins(op, 1, rs1, 0, Operand::Imm(0))
                }
                2 => {
                    let rd = self.reg(&args[0], line)?;
                    let (off, rs1) = self.mem(&args[1], line, mnem)?;
                    ins(op, rd, rs1, 0, off)
                }
                3 => {
                    let rd = self.reg(&args[0], line)?;
                    let rs1 = self.reg(&args[1], line)?;
                    let off = self.imm_operand(&args[2], line, -2048, 2047, mnem)?;
                    ins(op, rd, rs1, 0, off)
                }
                _ => return Err(syntax(p, format!("`{mnem}` takes 1 to 3 operands"))),
            },
            InstrKind::Ldp => {
                want(1)?;
                let v = self.imm_operand(&args[0], line, 0, (1 << 20) - 1, mnem)?;
                ins(op, 0, 0, 0, v)
            }
            InstrKind::System => {
                want(0)?;
                ins(op, 0, 0, 0, Operand::None)
            }
        };
        if let Some(r) = reference {
            if !op.is_checked() {
                return Err(syntax(p, "only verification instructions carry a reference word"));
            }
            insn.reference = r;
        }
        self.push(p, insn)
    }
}

/// Parses source text into a symbolic module.
pub fn parse_module(source: &str) -> Result<Module, AsmError> {
    let mut ps = Parser {
        module: Module {
            functions: Vec::new(),
            data: DataSection::default(),
            entry: String::new(),
            init_regs: Vec::new(),
            patches: Vec::new(),
            iv_table: Vec::new(),
            signing: None,
        },
        section: Section::Text,
        current: None,
        pending_icall: None,
        labels: BTreeSet::new(),
        globals: Vec::new(),
        refs: Vec::new(),
    };
    for (lineno, raw) in source.lines().enumerate() {
        let line = lineno + 1;
        let code = strip_comment(raw);
        let mut rest = code;
        let mut col = 1;
        // Leading labels.
        loop {
            let trimmed = rest.trim_start();
            col += rest.len() - trimmed.len();
            rest = trimmed;
            let Some(colon) = rest.find(':') else { break };
            let name = &rest[..colon];
            if !is_ident(name) || name.contains(' ') {
                break;
            }
            let p = Pos { line, col };
            ps.define(name, p)?;
            match ps.section {
                Section::Text => ps.func(p)?.items.push(Item::Label(name.to_string())),
                Section::Data => {
                    let off = ps.module.data.bytes.len() as u32;
                    ps.module.data.labels.push((name.to_string(), off));
                }
            }
            col += colon + 1;
            rest = &rest[colon + 1..];
        }
        let stmt = rest.trim_end();
        if stmt.is_empty() {
            continue;
        }
        let p = Pos { line, col };
        let (head, tail) = match stmt.find(char::is_whitespace) {
            Some(i) => (&stmt[..i], &stmt[i..]),
            None => (stmt, ""),
        };
        let tail_col = col + head.len();
        if head.starts_with('.') {
            ps.directive(head, tail, p, tail_col)?;
        } else {
            if ps.section != Section::Text {
                return Err(syntax(p, "instruction in .data"));
            }
            ps.instruction(&head.to_ascii_lowercase(), tail, p, tail_col)?;
        }
    }
    ps.finish_function();
    if let Some((p, name)) = ps.refs.iter().find(|(_, n)| !ps.labels.contains(n)) {
        return Err(AsmError::UndefinedLabel { line: p.line, col: p.col, name: name.clone() });
    }
    let entry = ps
        .globals
        .first()
        .cloned()
        .or_else(|| ps.module.function("main").map(|f| f.name.clone()))
        .or_else(|| ps.module.functions.first().map(|f| f.name.clone()))
        .ok_or_else(|| syntax(Pos { line: 1, col: 1 }, "no functions"))?;
    ps.module.entry = entry;
    let module = ps.module;
    for (_, sym) in module.address_references() {
        if let Some(f) = module.function(sym) {
            if f.proto.is_none() {
                return Err(AsmError::MissingPrototype(f.name.clone()));
            }
        }
    }
    Ok(module)
}

pub fn assemble(source: &str) -> Result<ProgramImage, AsmError> {
    let m = parse_module(source)?;
    Ok(link(&m)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::isa::decode;

    #[test]
    fn listing_one_addi() {
        let img = assemble(".func main\n addi t0, t0, -1\n halt\n").unwrap();
        assert_eq!(img.text_word(img.text_base), Some(0xFFF2_8293));
    }

    #[test]
    fn errors_carry_positions() {
        let e = assemble(".func main\n  addi t0, t0, 5000\n").unwrap_err();
        assert_eq!(e, AsmError::ImmediateRange { line: 2, col: 16, value: 5000, mnemonic: "addi".into() });
        let e = assemble(".func main\n  j nowhere\n").unwrap_err();
        assert!(matches!(e, AsmError::UndefinedLabel { line: 2, col: 5, .. }), "{e:?}");
        let e = assemble(".func main\nx:\n nop\nx:\n nop\n").unwrap_err();
        assert!(matches!(e, AsmError::DuplicateLabel { line: 4, .. }));
        let e = assemble(".func main\n  frob t0\n").unwrap_err();
        assert!(matches!(e, AsmError::Syntax { line: 2, col: 3, .. }), "{e:?}");
    }

    #[test]
    fn pseudo_expansion() {
        let img = assemble(".func main()\n li t0, 0x12345678\n la t1, main\n ret\n").unwrap();
        let words: Vec<_> = img.text_words().map(|(_, w)| decode(w).unwrap()).collect();
        assert_eq!(words[0].op, Opcode::Lui);
        assert_eq!(words[0].imm.wrapping_add(words[1].imm), 0x12345678);
        assert_eq!((words[2].imm + words[3].imm) as u32, img.text_base);
        assert_eq!(words[4].op, Opcode::Jalr);
    }

    #[test]
    fn address_taken_needs_prototype() {
        let e = assemble(".func main\n la a0, f\n halt\n.func f\n ret\n").unwrap_err();
        assert_eq!(e, AsmError::MissingPrototype("f".into()));
    }

    #[test]
    fn prototypes_parse() {
        let m = parse_module(".func f(i32, ptr) -> i32\n ret\n.func g()\n ret\n").unwrap();
        assert_eq!(m.functions[0].proto.as_ref().unwrap().to_string(), "(i32, ptr) -> i32");
        assert_eq!(m.functions[1].proto.as_ref().unwrap().to_string(), "() -> void");
    }
}
