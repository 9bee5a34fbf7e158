//! The 64-bit pipeline state Σ produced by the decode model.
//!
//! Layout (bit ranges inclusive):
//!
//! | bits    | field                                   |
//! |---------|-----------------------------------------|
//! | 4:0     | rs1 index (encoding bits 19:15)          |
//! | 9:5     | rs2 index (encoding bits 24:20)          |
//! | 14:10   | rd index (encoding bits 11:7)            |
//! | 17:15   | operand-A select                         |
//! | 20:18   | operand-B select                         |
//! | 22:21   | target immediate type                    |
//! | 24:23   | forward select, port A                   |
//! | 26:25   | forward select, port B                   |
//! | 33:27   | ALU op: function 3:0, flow class 6:4     |
//! | 34      | LSU read enable                          |
//! | 35      | LSU write enable                         |
//! | 45:36   | write-back control                       |
//! | 55:46   | encoding bits 31:25 and 14:12            |
//! | 63:56   | zero                                     |

use serde::{Deserialize, Serialize};

use crate::isa::{Instruction, Opcode};

pub const OPA_RS1: u8 = 0;
pub const OPA_PC: u8 = 1;
pub const OPA_ZERO: u8 = 2;
pub const OPA_PATCH_BASE: u8 = 3;

pub const OPB_RS2: u8 = 0;
pub const OPB_IMM_I: u8 = 1;
pub const OPB_IMM_S: u8 = 2;
pub const OPB_IMM_U: u8 = 3;
pub const OPB_FOUR: u8 = 4;
pub const OPB_EIGHT: u8 = 5;
pub const OPB_IMM_LDP: u8 = 6;
pub const OPB_ZERO: u8 = 7;

pub const TGT_NONE: u8 = 0;
pub const TGT_B: u8 = 1;
pub const TGT_J: u8 = 2;
pub const TGT_I: u8 = 3;

pub const FWD_RF: u8 = 0;
pub const FWD_EX: u8 = 1;
pub const FWD_WB: u8 = 2;
pub const FWD_ZERO: u8 = 3;

pub const ALU_ADD: u8 = 0;
pub const ALU_SUB: u8 = 1;
pub const ALU_SLL: u8 = 2;
pub const ALU_SLT: u8 = 3;
pub const ALU_SLTU: u8 = 4;
pub const ALU_XOR: u8 = 5;
pub const ALU_SRL: u8 = 6;
pub const ALU_SRA: u8 = 7;
pub const ALU_OR: u8 = 8;
pub const ALU_AND: u8 = 9;
pub const ALU_EQ: u8 = 10;
pub const ALU_NE: u8 = 11;
pub const ALU_LT: u8 = 12;
pub const ALU_GE: u8 = 13;
pub const ALU_LTU: u8 = 14;
pub const ALU_GEU: u8 = 15;

pub const FLOW_NONE: u8 = 0;
pub const FLOW_BRANCH: u8 = 1;
pub const FLOW_JAL: u8 = 2;
pub const FLOW_JALR: u8 = 3;
pub const FLOW_MRET: u8 = 4;

pub const WB_RF_WE: u16 = 1 << 0;
pub const WB_FROM_LSU: u16 = 1 << 1;
pub const WB_SIZE_SHIFT: u16 = 2;
pub const WB_UNSIGNED: u16 = 1 << 4;
pub const WB_VERIFY: u16 = 1 << 5;
pub const WB_PATCH_LOAD: u16 = 1 << 6;
pub const WB_PATCH_HIGH: u16 = 1 << 7;

pub const SIZE_BYTE: u16 = 0;
pub const SIZE_HALF: u16 = 1;
pub const SIZE_WORD: u16 = 2;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PipelineState(pub u64);

fn field(v: u64, lo: u32, width: u32) -> u64 {
    (v >> lo) & ((1u64 << width) - 1)
}

impl PipelineState {
    pub fn bits(self) -> u64 {
        self.0
    }
    pub fn rs1(self) -> u8 {
        field(self.0, 0, 5) as u8
    }
    pub fn rs2(self) -> u8 {
        field(self.0, 5, 5) as u8
    }
    pub fn rd(self) -> u8 {
        field(self.0, 10, 5) as u8
    }
    pub fn op_a(self) -> u8 {
        field(self.0, 15, 3) as u8
    }
    pub fn op_b(self) -> u8 {
        field(self.0, 18, 3) as u8
    }
    pub fn target_imm(self) -> u8 {
        field(self.0, 21, 2) as u8
    }
    pub fn fwd_a(self) -> u8 {
        field(self.0, 23, 2) as u8
    }
    pub fn fwd_b(self) -> u8 {
        field(self.0, 25, 2) as u8
    }
    pub fn alu_op(self) -> u8 {
        field(self.0, 27, 7) as u8
    }
    pub fn lsu(self) -> u8 {
        field(self.0, 34, 2) as u8
    }
    pub fn wb_ctrl(self) -> u16 {
        field(self.0, 36, 10) as u16
    }
    pub fn imm_bits(self) -> u16 {
        field(self.0, 46, 10) as u16
    }
    pub fn padding(self) -> u8 {
        field(self.0, 56, 8) as u8
    }

    pub fn reads_rs1(self) -> bool {
        self.op_a() == OPA_RS1 || self.target_imm() == TGT_I
    }

    pub fn reads_rs2(self) -> bool {
        self.op_b() == OPB_RS2 || self.lsu() & 2 != 0
    }

    pub fn post_decode(self) -> CsiFields {
        CsiFields { alu_op: self.alu_op(), lsu: self.lsu(), wb: self.wb_ctrl(), rd: self.rd() }
    }
}

/// Post-decode control signals that are duplicated and checked downstream.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CsiFields {
    pub alu_op: u8,
    pub lsu: u8,
    pub wb: u16,
    pub rd: u8,
}

impl CsiFields {
    pub fn alu_fn(&self) -> u8 {
        self.alu_op & 0xF
    }
    pub fn flow(&self) -> u8 {
        match self.alu_op >> 4 {
            f @ 0..=4 => f,
            _ => FLOW_NONE,
        }
    }
    pub fn lsu_read(&self) -> bool {
        self.lsu & 1 != 0
    }
    pub fn lsu_write(&self) -> bool {
        self.lsu & 2 != 0
    }
    pub fn rf_we(&self) -> bool {
        self.wb & WB_RF_WE != 0
    }
    pub fn from_lsu(&self) -> bool {
        self.wb & WB_FROM_LSU != 0
    }
    pub fn size(&self) -> u16 {
        (self.wb >> WB_SIZE_SHIFT) & 3
    }
    pub fn unsigned(&self) -> bool {
        self.wb & WB_UNSIGNED != 0
    }
    pub fn verify(&self) -> bool {
        self.wb & WB_VERIFY != 0
    }
    pub fn patch_load(&self) -> bool {
        self.wb & WB_PATCH_LOAD != 0
    }
    pub fn patch_high(&self) -> bool {
        self.wb & WB_PATCH_HIGH != 0
    }
    /// Result of this instruction can be forwarded from the execute stage.
    pub fn forwardable(&self) -> bool {
        self.rf_we() && !self.from_lsu() && !self.lsu_read() && self.rd != 0
    }
}

/// Duplicated signal groups, addressable by fault injection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CsiSignal {
    AluOp,
    Lsu,
    WbCtrl,
    Rd,
}

impl CsiSignal {
    pub const ALL: [CsiSignal; 4] = [CsiSignal::AluOp, CsiSignal::Lsu, CsiSignal::WbCtrl, CsiSignal::Rd];

    pub fn width(self) -> u32 {
        match self {
            CsiSignal::AluOp => 7,
            CsiSignal::Lsu => 2,
            CsiSignal::WbCtrl => 10,
            CsiSignal::Rd => 5,
        }
    }

    pub fn apply(self, f: &mut CsiFields, op: impl Fn(u64) -> u64) {
        let mask = (1u64 << self.width()) - 1;
        match self {
            CsiSignal::AluOp => f.alu_op = (op(f.alu_op as u64) & mask) as u8,
            CsiSignal::Lsu => f.lsu = (op(f.lsu as u64) & mask) as u8,
            CsiSignal::WbCtrl => f.wb = (op(f.wb as u64) & mask) as u16,
            CsiSignal::Rd => f.rd = (op(f.rd as u64) & mask) as u8,
        }
    }
}

/// Forwarding inputs: the instruction currently in execute.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FwdCtx {
    pub rd: u8,
    pub forwardable: bool,
}

impl FwdCtx {
    pub fn from_state(s: PipelineState) -> FwdCtx {
        let f = s.post_decode();
        FwdCtx { rd: f.rd, forwardable: f.forwardable() }
    }

    pub fn from_fields(f: &CsiFields) -> FwdCtx {
        FwdCtx { rd: f.rd, forwardable: f.forwardable() }
    }
}

struct ClassControl {
    op_a: u8,
    op_b: u8,
    target: u8,
    alu: u8,
    flow: u8,
    lsu: u8,
    wb: u16,
}

fn class_control(op: Opcode) -> ClassControl {
    use Opcode::*;
    let alu = |alu: u8, op_b: u8| ClassControl {
        op_a: OPA_RS1,
        op_b,
        target: TGT_NONE,
        alu,
        flow: FLOW_NONE,
        lsu: 0,
        wb: WB_RF_WE,
    };
    let branch = |cmp: u8, verify: bool| ClassControl {
        op_a: OPA_RS1,
        op_b: OPB_RS2,
        target: TGT_B,
        alu: cmp,
        flow: FLOW_BRANCH,
        lsu: 0,
        wb: if verify { WB_VERIFY } else { 0 },
    };
    let load = |size: u16, unsigned: bool| ClassControl {
        op_a: OPA_RS1,
        op_b: OPB_IMM_I,
        target: TGT_NONE,
        alu: ALU_ADD,
        flow: FLOW_NONE,
        lsu: 1,
        wb: WB_RF_WE | WB_FROM_LSU | size << WB_SIZE_SHIFT | if unsigned { WB_UNSIGNED } else { 0 },
    };
    let store = |size: u16| ClassControl {
        op_a: OPA_RS1,
        op_b: OPB_IMM_S,
        target: TGT_NONE,
        alu: ALU_ADD,
        flow: FLOW_NONE,
        lsu: 2,
        wb: size << WB_SIZE_SHIFT,
    };
    let jump = |target: u8, flow: u8, verify: bool| ClassControl {
        op_a: OPA_PC,
        op_b: if verify { OPB_EIGHT } else { OPB_FOUR },
        target,
        alu: ALU_ADD,
        flow,
        lsu: 0,
        wb: WB_RF_WE | if verify { WB_VERIFY } else { 0 },
    };
    match op {
        Lui => ClassControl { op_a: OPA_ZERO, ..alu(ALU_ADD, OPB_IMM_U) },
        Auipc => ClassControl { op_a: OPA_PC, ..alu(ALU_ADD, OPB_IMM_U) },
        Jal => jump(TGT_J, FLOW_JAL, false),
        ChkJal => jump(TGT_J, FLOW_JAL, true),
        Jalr => jump(TGT_I, FLOW_JALR, false),
        ChkJalr => jump(TGT_I, FLOW_JALR, true),
        Beq => branch(ALU_EQ, false),
        Bne => branch(ALU_NE, false),
        Blt => branch(ALU_LT, false),
        Bge => branch(ALU_GE, false),
        Bltu => branch(ALU_LTU, false),
        Bgeu => branch(ALU_GEU, false),
        ChkBeq => branch(ALU_EQ, true),
        ChkBne => branch(ALU_NE, true),
        ChkBlt => branch(ALU_LT, true),
        ChkBge => branch(ALU_GE, true),
        ChkBltu => branch(ALU_LTU, true),
        ChkBgeu => branch(ALU_GEU, true),
        Lb => load(SIZE_BYTE, false),
        Lh => load(SIZE_HALF, false),
        Lw => load(SIZE_WORD, false),
        Lbu => load(SIZE_BYTE, true),
        Lhu => load(SIZE_HALF, true),
        Sb => store(SIZE_BYTE),
        Sh => store(SIZE_HALF),
        Sw => store(SIZE_WORD),
        Addi => alu(ALU_ADD, OPB_IMM_I),
        Slti => alu(ALU_SLT, OPB_IMM_I),
        Sltiu => alu(ALU_SLTU, OPB_IMM_I),
        Xori => alu(ALU_XOR, OPB_IMM_I),
        Ori => alu(ALU_OR, OPB_IMM_I),
        Andi => alu(ALU_AND, OPB_IMM_I),
        Slli => alu(ALU_SLL, OPB_IMM_I),
        Srli => alu(ALU_SRL, OPB_IMM_I),
        Srai => alu(ALU_SRA, OPB_IMM_I),
        Add => alu(ALU_ADD, OPB_RS2),
        Sub => alu(ALU_SUB, OPB_RS2),
        Sll => alu(ALU_SLL, OPB_RS2),
        Slt => alu(ALU_SLT, OPB_RS2),
        Sltu => alu(ALU_SLTU, OPB_RS2),
        Xor => alu(ALU_XOR, OPB_RS2),
        Srl => alu(ALU_SRL, OPB_RS2),
        Sra => alu(ALU_SRA, OPB_RS2),
        Or => alu(ALU_OR, OPB_RS2),
        And => alu(ALU_AND, OPB_RS2),
        Mret => ClassControl {
            op_a: OPA_ZERO,
            op_b: OPB_ZERO,
            target: TGT_NONE,
            alu: ALU_ADD,
            flow: FLOW_MRET,
            lsu: 0,
            wb: 0,
        },
        Ldp | LdpHi => ClassControl {
            op_a: OPA_PATCH_BASE,
            op_b: OPB_IMM_LDP,
            target: TGT_NONE,
            alu: ALU_ADD,
            flow: FLOW_NONE,
            lsu: 1,
            wb: WB_PATCH_LOAD | if op == LdpHi { WB_PATCH_HIGH } else { 0 },
        },
    }
}

/// Σ of `instr` given the instruction currently in execute (`None` for a bubble).
pub fn derive_pipeline_state(instr: &Instruction, fwd: Option<FwdCtx>) -> PipelineState {
    let word = instr.encode().expect("derive_pipeline_state on an unencodable instruction");
    derive_from_word(word, instr.op, fwd)
}

/// Same as [`derive_pipeline_state`] for a word already known to decode to `op`.
pub fn derive_from_word(word: u32, op: Opcode, fwd: Option<FwdCtx>) -> PipelineState {
    let c = class_control(op);
    let rs1 = (word >> 15) & 0x1F;
    let rs2 = (word >> 20) & 0x1F;
    let rd = (word >> 7) & 0x1F;
    let imm_bits = ((word >> 25) << 3 | (word >> 12) & 7) as u64;

    let mut v: u64 = rs1 as u64 | (rs2 as u64) << 5 | (rd as u64) << 10;
    v |= (c.op_a as u64) << 15 | (c.op_b as u64) << 18 | (c.target as u64) << 21;
    v |= ((c.flow << 4 | c.alu) as u64) << 27;
    v |= (c.lsu as u64) << 34;
    v |= (c.wb as u64) << 36;
    v |= imm_bits << 46;

    let partial = PipelineState(v);
    if let Some(ctx) = fwd {
        if ctx.forwardable && ctx.rd != 0 {
            if partial.reads_rs1() && partial.rs1() == ctx.rd {
                v |= (FWD_EX as u64) << 23;
            }
            if partial.reads_rs2() && partial.rs2() == ctx.rd {
                v |= (FWD_EX as u64) << 25;
            }
        }
    }
    PipelineState(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::isa::Opcode::*;

    #[test]
    fn widths_sum_to_64() {
        assert_eq!(5 + 5 + 5 + 3 + 3 + 2 + 2 + 2 + 7 + 1 + 1 + 10 + 10 + 8, 64);
    }

    #[test]
    fn nop_drives_nothing() {
        let s = derive_pipeline_state(&Instruction::nop(), None);
        assert_eq!((s.fwd_a(), s.fwd_b(), s.lsu()), (0, 0, 0));
        assert_eq!(s.padding(), 0);
    }

    #[test]
    fn intra_block_forwarding() {
        // addi t0,t0,1 ; add t1,a0,t0
        let prev = Instruction::new(Addi, 5, 5, 0, 1);
        let cur = Instruction::new(Add, 6, 10, 5, 0);
        let ctx = FwdCtx::from_state(derive_pipeline_state(&prev, None));
        let s = derive_pipeline_state(&cur, Some(ctx));
        assert_eq!((s.fwd_a(), s.fwd_b()), (FWD_RF, FWD_EX));
        assert_eq!(derive_pipeline_state(&cur, None).fwd_b(), FWD_RF);
    }

    #[test]
    fn loads_do_not_forward() {
        let prev = Instruction::new(Lw, 5, 10, 0, 0);
        let cur = Instruction::new(Add, 6, 5, 5, 0);
        let ctx = FwdCtx::from_state(derive_pipeline_state(&prev, None));
        let s = derive_pipeline_state(&cur, Some(ctx));
        assert_eq!((s.fwd_a(), s.fwd_b()), (0, 0));
    }

    #[test]
    fn store_data_port_forwards() {
        let prev = Instruction::new(Addi, 7, 0, 0, 9);
        let cur = Instruction::new(Sw, 0, 10, 7, 4);
        let ctx = FwdCtx::from_state(derive_pipeline_state(&prev, None));
        assert_eq!(derive_pipeline_state(&cur, Some(ctx)).fwd_b(), FWD_EX);
    }
}
