//! RV32I subset plus the verification/patch extension: opcodes, encoding and decoding.

use std::fmt;

use serde::{Deserialize, Serialize};

pub const OPC_LOAD: u32 = 0x03;
pub const OPC_CHK_BRANCH: u32 = 0x0B;
pub const OPC_OP_IMM: u32 = 0x13;
pub const OPC_AUIPC: u32 = 0x17;
pub const OPC_STORE: u32 = 0x23;
pub const OPC_CHK_JAL: u32 = 0x2B;
pub const OPC_OP: u32 = 0x33;
pub const OPC_LUI: u32 = 0x37;
pub const OPC_CHK_JALR: u32 = 0x5B;
pub const OPC_BRANCH: u32 = 0x63;
pub const OPC_JALR: u32 = 0x67;
pub const OPC_JAL: u32 = 0x6F;
pub const OPC_SYSTEM: u32 = 0x73;
pub const OPC_LDP: u32 = 0x7B;

pub const MRET_WORD: u32 = 0x3020_0073;
pub const NOP_WORD: u32 = 0x0000_0013;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Opcode {
    Lui,
    Auipc,
    Jal,
    Jalr,
    Beq,
    Bne,
    Blt,
    Bge,
    Bltu,
    Bgeu,
    Lb,
    Lh,
    Lw,
    Lbu,
    Lhu,
    Sb,
    Sh,
    Sw,
    Addi,
    Slti,
    Sltiu,
    Xori,
    Ori,
    Andi,
    Slli,
    Srli,
    Srai,
    Add,
    Sub,
    Sll,
    Slt,
    Sltu,
    Xor,
    Srl,
    Sra,
    Or,
    And,
    Mret,
    ChkBeq,
    ChkBne,
    ChkBlt,
    ChkBge,
    ChkBltu,
    ChkBgeu,
    ChkJal,
    ChkJalr,
    Ldp,
    LdpHi,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InstrKind {
    Alu,
    Load,
    Store,
    Branch,
    Jal,
    Jalr,
    CheckedBranch,
    CheckedJal,
    CheckedJalr,
    Ldp,
    Nop,
    System,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Format {
    R,
    I,
    Shift,
    S,
    B,
    U,
    J,
    Ldp,
    Fixed,
}

use Opcode::*;

pub const ALL_OPCODES: [Opcode; 48] = [
    Lui, Auipc, Jal, Jalr, Beq, Bne, Blt, Bge, Bltu, Bgeu, Lb, Lh, Lw, Lbu, Lhu, Sb, Sh, Sw, Addi, Slti, Sltiu, Xori,
    Ori, Andi, Slli, Srli, Srai, Add, Sub, Sll, Slt, Sltu, Xor, Srl, Sra, Or, And, Mret, ChkBeq, ChkBne, ChkBlt,
    ChkBge, ChkBltu, ChkBgeu, ChkJal, ChkJalr, Ldp, LdpHi,
];

impl Opcode {
    /// (major opcode, funct3, funct7) as placed in the encoding.
    fn fields(self) -> (u32, u32, u32) {
        match self {
            Lui => (OPC_LUI, 0, 0),
            Auipc => (OPC_AUIPC, 0, 0),
            Jal => (OPC_JAL, 0, 0),
            Jalr => (OPC_JALR, 0, 0),
            Beq => (OPC_BRANCH, 0, 0),
            Bne => (OPC_BRANCH, 1, 0),
            Blt => (OPC_BRANCH, 4, 0),
            Bge => (OPC_BRANCH, 5, 0),
            Bltu => (OPC_BRANCH, 6, 0),
            Bgeu => (OPC_BRANCH, 7, 0),
            Lb => (OPC_LOAD, 0, 0),
            Lh => (OPC_LOAD, 1, 0),
            Lw => (OPC_LOAD, 2, 0),
            Lbu => (OPC_LOAD, 4, 0),
            Lhu => (OPC_LOAD, 5, 0),
            Sb => (OPC_STORE, 0, 0),
            Sh => (OPC_STORE, 1, 0),
            Sw => (OPC_STORE, 2, 0),
            Addi => (OPC_OP_IMM, 0, 0),
            Slti => (OPC_OP_IMM, 2, 0),
            Sltiu => (OPC_OP_IMM, 3, 0),
            Xori => (OPC_OP_IMM, 4, 0),
            Ori => (OPC_OP_IMM, 6, 0),
            Andi => (OPC_OP_IMM, 7, 0),
            Slli => (OPC_OP_IMM, 1, 0x00),
            Srli => (OPC_OP_IMM, 5, 0x00),
            Srai => (OPC_OP_IMM, 5, 0x20),
            Add => (OPC_OP, 0, 0x00),
            Sub => (OPC_OP, 0, 0x20),
            Sll => (OPC_OP, 1, 0x00),
            Slt => (OPC_OP, 2, 0x00),
            Sltu => (OPC_OP, 3, 0x00),
            Xor => (OPC_OP, 4, 0x00),
            Srl => (OPC_OP, 5, 0x00),
            Sra => (OPC_OP, 5, 0x20),
            Or => (OPC_OP, 6, 0x00),
            And => (OPC_OP, 7, 0x00),
            Mret => (OPC_SYSTEM, 0, 0),
            ChkBeq => (OPC_CHK_BRANCH, 0, 0),
            ChkBne => (OPC_CHK_BRANCH, 1, 0),
            ChkBlt => (OPC_CHK_BRANCH, 4, 0),
            ChkBge => (OPC_CHK_BRANCH, 5, 0),
            ChkBltu => (OPC_CHK_BRANCH, 6, 0),
            ChkBgeu => (OPC_CHK_BRANCH, 7, 0),
            ChkJal => (OPC_CHK_JAL, 0, 0),
            ChkJalr => (OPC_CHK_JALR, 0, 0),
            Ldp => (OPC_LDP, 0, 0),
            LdpHi => (OPC_LDP, 0, 0),
        }
    }

    fn format(self) -> Format {
        match self {
            Lui | Auipc => Format::U,
            Jal | ChkJal => Format::J,
            Jalr | ChkJalr | Lb | Lh | Lw | Lbu | Lhu | Addi | Slti | Sltiu | Xori | Ori | Andi => Format::I,
            Slli | Srli | Srai => Format::Shift,
            Beq | Bne | Blt | Bge | Bltu | Bgeu | ChkBeq | ChkBne | ChkBlt | ChkBge | ChkBltu | ChkBgeu => Format::B,
            Sb | Sh | Sw => Format::S,
            Add | Sub | Sll | Slt | Sltu | Xor | Srl | Sra | Or | And => Format::R,
            Ldp | LdpHi => Format::Ldp,
            Mret => Format::Fixed,
        }
    }

    pub fn kind(self) -> InstrKind {
        match self {
            Lb | Lh | Lw | Lbu | Lhu => InstrKind::Load,
            Sb | Sh | Sw => InstrKind::Store,
            Beq | Bne | Blt | Bge | Bltu | Bgeu => InstrKind::Branch,
            ChkBeq | ChkBne | ChkBlt | ChkBge | ChkBltu | ChkBgeu => InstrKind::CheckedBranch,
            Jal => InstrKind::Jal,
            Jalr => InstrKind::Jalr,
            ChkJal => InstrKind::CheckedJal,
            ChkJalr => InstrKind::CheckedJalr,
            Ldp | LdpHi => InstrKind::Ldp,
            Mret => InstrKind::System,
            _ => InstrKind::Alu,
        }
    }

    pub fn mnemonic(self) -> &'static str {
        match self {
            Lui => "lui",
            Auipc => "auipc",
            Jal => "jal",
            Jalr => "jalr",
            Beq => "beq",
            Bne => "bne",
            Blt => "blt",
            Bge => "bge",
            Bltu => "bltu",
            Bgeu => "bgeu",
            Lb => "lb",
            Lh => "lh",
            Lw => "lw",
            Lbu => "lbu",
            Lhu => "lhu",
            Sb => "sb",
            Sh => "sh",
            Sw => "sw",
            Addi => "addi",
            Slti => "slti",
            Sltiu => "sltiu",
            Xori => "xori",
            Ori => "ori",
            Andi => "andi",
            Slli => "slli",
            Srli => "srli",
            Srai => "srai",
            Add => "add",
            Sub => "sub",
            Sll => "sll",
            Slt => "slt",
            Sltu => "sltu",
            Xor => "xor",
            Srl => "srl",
            Sra => "sra",
            Or => "or",
            And => "and",
            Mret => "mret",
            ChkBeq => "chk.beq",
            ChkBne => "chk.bne",
            ChkBlt => "chk.blt",
            ChkBge => "chk.bge",
            ChkBltu => "chk.bltu",
            ChkBgeu => "chk.bgeu",
            ChkJal => "chk.jal",
            ChkJalr => "chk.jalr",
            Ldp => "ldp",
            LdpHi => "ldp.hi",
        }
    }

    pub fn from_mnemonic(s: &str) -> Option<Opcode> {
        ALL_OPCODES.iter().copied().find(|op| op.mnemonic() == s)
    }

    /// Conditional branch, jump or interrupt return.
    pub fn is_control_flow(self) -> bool {
        matches!(
            self.kind(),
            InstrKind::Branch
                | InstrKind::Jal
                | InstrKind::Jalr
                | InstrKind::CheckedBranch
                | InstrKind::CheckedJal
                | InstrKind::CheckedJalr
                | InstrKind::System
        )
    }

    /// Verification variant carrying an in-line reference word.
    pub fn is_checked(self) -> bool {
        matches!(self.kind(), InstrKind::CheckedBranch | InstrKind::CheckedJal | InstrKind::CheckedJalr)
    }

    pub fn is_cond_branch(self) -> bool {
        matches!(self.kind(), InstrKind::Branch | InstrKind::CheckedBranch)
    }

    /// Verification counterpart of a plain control-flow opcode.
    pub fn checked(self) -> Option<Opcode> {
        Some(match self {
            Beq => ChkBeq,
            Bne => ChkBne,
            Blt => ChkBlt,
            Bge => ChkBge,
            Bltu => ChkBltu,
            Bgeu => ChkBgeu,
            Jal => ChkJal,
            Jalr => ChkJalr,
            _ => return None,
        })
    }

    /// Plain counterpart of a verification opcode (identity for the others).
    pub fn unchecked(self) -> Opcode {
        match self {
            ChkBeq => Beq,
            ChkBne => Bne,
            ChkBlt => Blt,
            ChkBge => Bge,
            ChkBltu => Bltu,
            ChkBgeu => Bgeu,
            ChkJal => Jal,
            ChkJalr => Jalr,
            op => op,
        }
    }

    /// Size in bytes including the reference word of verification instructions.
    pub fn size(self) -> u32 {
        if self.is_checked() {
            8
        } else {
            4
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Instruction {
    pub op: Opcode,
    pub rd: u8,
    pub rs1: u8,
    pub rs2: u8,
    /// Sign-extended immediate; U-type holds the value with the low 12 bits zero,
    /// `ldp` holds the unscaled word offset, shifts hold the shift amount.
    pub imm: i32,
}

/// Marker for a word that is not a legal instruction in the modeled subset.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Illegal(pub u32);

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{op:?}: immediate {imm} not encodable")]
pub struct EncodeError {
    pub op: Opcode,
    pub imm: i32,
}

fn fits_signed(v: i32, bits: u32) -> bool {
    let lim = 1i64 << (bits - 1);
    (v as i64) >= -lim && (v as i64) < lim
}

impl Instruction {
    pub fn new(op: Opcode, rd: u8, rs1: u8, rs2: u8, imm: i32) -> Self {
        Instruction { op, rd, rs1, rs2, imm }
    }

    pub fn nop() -> Self {
        Instruction::new(Addi, 0, 0, 0, 0)
    }

    pub fn kind(&self) -> InstrKind {
        if self.op == Addi && self.rd == 0 && self.rs1 == 0 && self.imm == 0 {
            InstrKind::Nop
        } else {
            self.op.kind()
        }
    }

    /// Checks operand ranges for the instruction's format.
    pub fn validate(&self) -> Result<(), EncodeError> {
        let err = Err(EncodeError { op: self.op, imm: self.imm });
        let ok = match self.op.format() {
            Format::I | Format::S => fits_signed(self.imm, 12),
            Format::Shift => (0..32).contains(&self.imm),
            Format::B => fits_signed(self.imm, 13) && self.imm % 2 == 0,
            Format::J => fits_signed(self.imm, 21) && self.imm % 2 == 0,
            Format::U => self.imm & 0xFFF == 0,
            Format::Ldp => (0..1 << 20).contains(&self.imm),
            Format::R | Format::Fixed => true,
        };
        let regs_ok = self.rd < 32 && self.rs1 < 32 && self.rs2 < 32;
        if ok && regs_ok {
            Ok(())
        } else {
            err
        }
    }

    pub fn encode(&self) -> Result<u32, EncodeError> {
        self.validate()?;
        let (opc, f3, f7) = self.op.fields();
        let rd = (self.rd as u32) << 7;
        let rs1 = (self.rs1 as u32) << 15;
        let rs2 = (self.rs2 as u32) << 20;
        let f3 = f3 << 12;
        let imm = self.imm as u32;
        Ok(match self.op.format() {
            Format::R => f7 << 25 | rs2 | rs1 | f3 | rd | opc,
            Format::I => (imm & 0xFFF) << 20 | rs1 | f3 | rd | opc,
            Format::Shift => f7 << 25 | (imm & 0x1F) << 20 | rs1 | f3 | rd | opc,
            Format::S => ((imm >> 5) & 0x7F) << 25 | rs2 | rs1 | f3 | (imm & 0x1F) << 7 | opc,
            Format::B => {
                ((imm >> 12) & 1) << 31
                    | ((imm >> 5) & 0x3F) << 25
                    | rs2
                    | rs1
                    | f3
                    | ((imm >> 1) & 0xF) << 8
                    | ((imm >> 11) & 1) << 7
                    | opc
            }
            Format::U => (imm & 0xFFFF_F000) | rd | opc,
            Format::J => {
                ((imm >> 20) & 1) << 31
                    | ((imm >> 1) & 0x3FF) << 21
                    | ((imm >> 11) & 1) << 20
                    | ((imm >> 12) & 0xFF) << 12
                    | rd
                    | opc
            }
            Format::Ldp => {
                let half = if self.op == LdpHi { 1 } else { 0 };
                imm << 12 | half << 7 | opc
            }
            Format::Fixed => MRET_WORD,
        })
    }

    /// Canonical form: fields not present in the format are zeroed so that
    /// `decode(encode(i)) == canonical(i)`.
    pub fn canonical(&self) -> Instruction {
        let mut c = *self;
        match self.op.format() {
            Format::R => c.imm = 0,
            Format::I | Format::Shift => c.rs2 = 0,
            Format::S | Format::B => c.rd = 0,
            Format::U | Format::J => {
                c.rs1 = 0;
                c.rs2 = 0;
            }
            Format::Ldp | Format::Fixed => {
                c.rd = 0;
                c.rs1 = 0;
                c.rs2 = 0;
                if self.op == Mret {
                    c.imm = 0;
                }
            }
        }
        c
    }
}

fn sext(v: u32, bits: u32) -> i32 {
    ((v << (32 - bits)) as i32) >> (32 - bits)
}

pub fn imm_i(w: u32) -> i32 {
    (w as i32) >> 20
}

pub fn imm_s(w: u32) -> i32 {
    sext((w >> 25) << 5 | (w >> 7) & 0x1F, 12)
}

pub fn imm_b(w: u32) -> i32 {
    let v = (w >> 31) << 12 | ((w >> 7) & 1) << 11 | ((w >> 25) & 0x3F) << 5 | ((w >> 8) & 0xF) << 1;
    sext(v, 13)
}

pub fn imm_u(w: u32) -> i32 {
    (w & 0xFFFF_F000) as i32
}

pub fn imm_j(w: u32) -> i32 {
    let v = (w >> 31) << 20 | ((w >> 12) & 0xFF) << 12 | ((w >> 20) & 1) << 11 | ((w >> 21) & 0x3FF) << 1;
    sext(v, 21)
}

pub fn imm_ldp(w: u32) -> u32 {
    w >> 12
}

/// Decodes one word. Reserved bits must be zero; anything else is [`Illegal`].
pub fn decode(w: u32) -> Result<Instruction, Illegal> {
    let opc = w & 0x7F;
    let rd = ((w >> 7) & 0x1F) as u8;
    let f3 = (w >> 12) & 7;
    let rs1 = ((w >> 15) & 0x1F) as u8;
    let rs2 = ((w >> 20) & 0x1F) as u8;
    let f7 = w >> 25;
    let ill = Err(Illegal(w));
    let op = match opc {
        OPC_LUI => return Ok(Instruction::new(Lui, rd, 0, 0, imm_u(w))),
        OPC_AUIPC => return Ok(Instruction::new(Auipc, rd, 0, 0, imm_u(w))),
        OPC_JAL => return Ok(Instruction::new(Jal, rd, 0, 0, imm_j(w))),
        OPC_CHK_JAL => return Ok(Instruction::new(ChkJal, rd, 0, 0, imm_j(w))),
        OPC_JALR | OPC_CHK_JALR if f3 == 0 => {
            let op = if opc == OPC_JALR { Jalr } else { ChkJalr };
            return Ok(Instruction::new(op, rd, rs1, 0, imm_i(w)));
        }
        OPC_BRANCH | OPC_CHK_BRANCH => {
            let base = match f3 {
                0 => Beq,
                1 => Bne,
                4 => Blt,
                5 => Bge,
                6 => Bltu,
                7 => Bgeu,
                _ => return ill,
            };
            let op = if opc == OPC_BRANCH { base } else { base.checked().unwrap() };
            return Ok(Instruction::new(op, 0, rs1, rs2, imm_b(w)));
        }
        OPC_LOAD => match f3 {
            0 => Lb,
            1 => Lh,
            2 => Lw,
            4 => Lbu,
            5 => Lhu,
            _ => return ill,
        },
        OPC_STORE => {
            let op = match f3 {
                0 => Sb,
                1 => Sh,
                2 => Sw,
                _ => return ill,
            };
            return Ok(Instruction::new(op, 0, rs1, rs2, imm_s(w)));
        }
        OPC_OP_IMM => match (f3, f7) {
            (0, _) => Addi,
            (2, _) => Slti,
            (3, _) => Sltiu,
            (4, _) => Xori,
            (6, _) => Ori,
            (7, _) => Andi,
            (1, 0x00) => return Ok(Instruction::new(Slli, rd, rs1, 0, rs2 as i32)),
            (5, 0x00) => return Ok(Instruction::new(Srli, rd, rs1, 0, rs2 as i32)),
            (5, 0x20) => return Ok(Instruction::new(Srai, rd, rs1, 0, rs2 as i32)),
            _ => return ill,
        },
        OPC_OP => {
            let op = match (f3, f7) {
                (0, 0x00) => Add,
                (0, 0x20) => Sub,
                (1, 0x00) => Sll,
                (2, 0x00) => Slt,
                (3, 0x00) => Sltu,
                (4, 0x00) => Xor,
                (5, 0x00) => Srl,
                (5, 0x20) => Sra,
                (6, 0x00) => Or,
                (7, 0x00) => And,
                _ => return ill,
            };
            return Ok(Instruction::new(op, rd, rs1, rs2, 0));
        }
        OPC_LDP => {
            let op = match rd {
                0 => Ldp,
                1 => LdpHi,
                _ => return ill,
            };
            return Ok(Instruction::new(op, 0, 0, 0, imm_ldp(w) as i32));
        }
        OPC_SYSTEM if w == MRET_WORD => return Ok(Instruction::new(Mret, 0, 0, 0, 0)),
        _ => return ill,
    };
    Ok(Instruction::new(op, rd, rs1, 0, imm_i(w)))
}

pub const ABI_NAMES: [&str; 32] = [
    "zero", "ra", "sp", "gp", "tp", "t0", "t1", "t2", "s0", "s1", "a0", "a1", "a2", "a3", "a4", "a5", "a6", "a7", "s2",
    "s3", "s4", "s5", "s6", "s7", "s8", "s9", "s10", "s11", "t3", "t4", "t5", "t6",
];

pub fn parse_register(s: &str) -> Option<u8> {
    if let Some(n) = s.strip_prefix('x') {
        if let Ok(v) = n.parse::<u8>() {
            return (v < 32).then_some(v);
        }
    }
    if s == "fp" {
        return Some(8);
    }
    ABI_NAMES.iter().position(|&n| n == s).map(|i| i as u8)
}

pub fn reg_name(r: u8) -> &'static str {
    ABI_NAMES[r as usize & 31]
}

impl fmt::Display for Instruction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let m = self.op.mnemonic();
        let (rd, rs1, rs2) = (reg_name(self.rd), reg_name(self.rs1), reg_name(self.rs2));
        match self.op.format() {
            Format::R => write!(f, "{m} {rd}, {rs1}, {rs2}"),
            Format::I if self.op.kind() == InstrKind::Load => {
                write!(f, "{m} {rd}, {}({rs1})", self.imm)
            }
            Format::I if matches!(self.op, Jalr | ChkJalr) => {
                write!(f, "{m} {rd}, {}({rs1})", self.imm)
            }
            Format::I | Format::Shift => write!(f, "{m} {rd}, {rs1}, {}", self.imm),
            Format::S => write!(f, "{m} {rs2}, {}({rs1})", self.imm),
            Format::B => write!(f, "{m} {rs1}, {rs2}, {}", self.imm),
            Format::U => write!(f, "{m} {rd}, 0x{:x}", (self.imm as u32) >> 12),
            Format::J => write!(f, "{m} {rd}, {}", self.imm),
            Format::Ldp => write!(f, "{m} {}", self.imm),
            Format::Fixed => write!(f, "{m}"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn listing_words() {
        let addi = Instruction::new(Addi, 5, 5, 0, -1);
        assert_eq!(addi.encode().unwrap(), 0xFFF2_8293);
        let bne = decode(0xFE04_18E3).unwrap();
        assert_eq!((bne.op, bne.rs1, bne.rs2, bne.imm), (Bne, 8, 0, -16));
        let beq = decode(0xFE04_08E3).unwrap();
        assert_eq!((beq.op, beq.rs1, beq.rs2, beq.imm), (Beq, 8, 0, -16));
        assert_eq!(0xFE04_18E3u32 ^ 0xFE04_08E3, 1 << 12);
    }

    #[test]
    fn nop_and_zero() {
        assert_eq!(Instruction::nop().encode().unwrap(), NOP_WORD);
        assert_eq!(Instruction::nop().kind(), InstrKind::Nop);
        assert_eq!(decode(0), Err(Illegal(0)));
    }

    #[test]
    fn extension_space_is_disjoint() {
        let base =
            [OPC_LOAD, OPC_OP_IMM, OPC_AUIPC, OPC_STORE, OPC_OP, OPC_LUI, OPC_BRANCH, OPC_JALR, OPC_JAL, OPC_SYSTEM];
        for ext in [OPC_CHK_BRANCH, OPC_CHK_JAL, OPC_CHK_JALR, OPC_LDP] {
            assert!(!base.contains(&ext));
        }
    }

    #[test]
    fn ldp_halves() {
        let lo = Instruction::new(Ldp, 0, 0, 0, 3).encode().unwrap();
        let hi = Instruction::new(LdpHi, 0, 0, 0, 3).encode().unwrap();
        assert_eq!(lo, 3 << 12 | OPC_LDP);
        assert_eq!(hi, 3 << 12 | 1 << 7 | OPC_LDP);
        assert_eq!(decode(hi).unwrap().op, LdpHi);
        assert!(decode(lo | 2 << 7).is_err());
    }

    #[test]
    fn range_checks() {
        assert!(Instruction::new(Addi, 1, 1, 0, 2048).encode().is_err());
        assert!(Instruction::new(Beq, 0, 1, 2, 3).encode().is_err());
        assert!(Instruction::new(Jal, 0, 0, 0, 1 << 20).encode().is_err());
        assert!(Instruction::new(Slli, 1, 1, 0, 32).encode().is_err());
        assert!(Instruction::new(Ldp, 0, 0, 0, -1).encode().is_err());
    }

    #[test]
    fn registers() {
        assert_eq!(parse_register("t0"), Some(5));
        assert_eq!(parse_register("x31"), Some(31));
        assert_eq!(parse_register("x32"), None);
        assert_eq!(parse_register("fp"), Some(8));
    }
}
