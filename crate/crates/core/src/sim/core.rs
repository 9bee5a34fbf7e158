//! The 4-stage in-order core (IF, ID, EX, WB).
//!
//! Stages are evaluated WB, EX, ID, IF within a cycle so that register
//! write-back is visible to decode in the same cycle and a control-flow
//! instruction resolved in EX can redirect the fetch of that same cycle.
//! Σ is chained into the signature register when an instruction leaves ID.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::state::*;
use crate::config::RunConfig;
use crate::config::DEFAULT_BOOT_IV;
use crate::isa::{decode, imm_b, imm_i, imm_j, imm_s, imm_u, read_word, write_word, ProgramImage};
use crate::sigfun::{sig_step, update, verify, SigKind, SignatureConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrapCause {
    SignatureMismatch,
    CsiMismatch,
    IllegalInstruction,
    WatchdogExpiry,
    MisalignedFetch,
    AccessFault,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trap {
    pub cause: TrapCause,
    pub cycle: u64,
    pub pc: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
pub enum SimError {
    #[error("ldp at 0x{pc:08x} reads 0x{addr:08x}, outside .patches")]
    PatchOutOfRange { pc: u32, addr: u32 },
    #[error("invalid image: {0}")]
    BadImage(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultMode {
    Flip,
    Set,
    Clear,
}

impl FaultMode {
    pub fn apply(self, v: u64, mask: u64) -> u64 {
        match self {
            FaultMode::Flip => v ^ mask,
            FaultMode::Set => v | mask,
            FaultMode::Clear => v & !mask,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Ex,
    Wb,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Copy {
    Original,
    Duplicate,
}

/// Where a fault lands inside the core.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Injection {
    /// Persistent corruption of a `.text` word (instructions or reference words).
    Imem {
        addr: u32,
    },
    /// Σ produced by decode in this cycle.
    Sigma,
    /// A duplicated post-decode signal group held by a downstream stage.
    Csi {
        signal: CsiSignal,
        stage: Stage,
        copy: Copy,
    },
    SigRegister,
    PatchRegister,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScheduledFault {
    pub cycle: u64,
    pub injection: Injection,
    pub mask: u64,
    pub mode: FaultMode,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StallCause {
    LoadUse,
    PatchThenBranch,
}

/// Observable events, recorded when enabled.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    Chain { cycle: u64, pc: u32, sigma: u64, sig: u64, speculative: bool },
    Verify { cycle: u64, pc: u32, reference: u32, ok: bool },
    Update { cycle: u64, pc: u32, patch: u64, sig: u64 },
    PatchLoad { cycle: u64, pc: u32, value: u32, high: bool },
    Stall { cycle: u64, pc: u32, cause: StallCause },
    IrqDeliver { cycle: u64, irq: u32, resume: u32, saved_sig: u64, iv: u64 },
    IrqReturn { cycle: u64, pc: u32, restored_sig: u64 },
    Rollback { cycle: u64, sig: u64, squashed: u32 },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Outcome {
    Halted,
    Trap(Trap),
    Timeout,
    Error { error: SimError },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunResult {
    pub outcome: Outcome,
    pub cycles: u64,
    pub verifications: u64,
    pub chained: u64,
    pub stalls: u64,
    /// Scheduled faults that reached live state (a Σ fault is lost when decode stalls
    /// or is empty that cycle, a signal fault when the stage is empty).
    pub faults_applied: u64,
    pub final_sig: u64,
    pub regs: Vec<u32>,
    #[serde(skip)]
    pub data: Vec<u8>,
    #[serde(skip)]
    pub events: Vec<Event>,
    #[serde(skip)]
    pub trace: Vec<String>,
}

impl RunResult {
    pub fn halted(&self) -> bool {
        self.outcome == Outcome::Halted
    }

    pub fn trap(&self) -> Option<Trap> {
        match self.outcome {
            Outcome::Trap(t) => Some(t),
            _ => None,
        }
    }

    /// Architectural state compared between runs: registers and data memory.
    pub fn same_state(&self, other: &RunResult) -> bool {
        self.regs == other.regs && self.data == other.data
    }
}

#[derive(Debug, Clone)]
struct Fetched {
    pc: u32,
    word: u32,
    len: u32,
    fault: Option<TrapCause>,
}

#[derive(Debug, Clone)]
struct IdEx {
    pc: u32,
    len: u32,
    ctrl: CsiFields,
    dup: CsiFields,
    a: u32,
    b: u32,
    rs1_val: u32,
    store_data: u32,
    target_imm: i32,
    deliver_irq: Option<u32>,
}

#[derive(Debug, Clone)]
struct ExWb {
    pc: u32,
    ctrl: CsiFields,
    dup: CsiFields,
    result: u32,
}

/// What the execute stage held during the current cycle, for decode hazards and forwarding.
#[derive(Debug, Clone, Copy)]
struct ExInfo {
    ctrl: CsiFields,
    result: u32,
}

struct Redirect {
    target: u32,
    restore: u64,
}

pub struct Simulator {
    cfg: RunConfig,
    sig_cfg: SignatureConfig,
    /// Secured code ranges of a signed image: only the verifying self jump halts there.
    checked_halt: Vec<(u32, u32)>,
    text_base: u32,
    text: Vec<u8>,
    data_base: u32,
    data: Vec<u8>,
    patch_base: u32,
    patches: Vec<u8>,
    leaders: BTreeSet<u32>,
    iv_table: Vec<u64>,
    handlers: std::collections::BTreeMap<u32, u32>,

    regs: [u32; 32],
    fetch_pc: u32,
    fetch_blocked: bool,
    if_id: Option<Fetched>,
    id_ex: Option<IdEx>,
    ex_wb: Option<ExWb>,

    sig: u64,
    patch: u64,
    pending_patch: Option<(u32, bool)>,
    context: u64,
    mepc: u32,
    in_irq: bool,
    irqs: Vec<crate::config::IrqRequest>,
    redirect: Option<Redirect>,

    faults: Vec<ScheduledFault>,
    cycle: u64,
    since_verify: u64,
    verifications: u64,
    chained: u64,
    stalls: u64,
    faults_applied: u64,
    outcome: Option<Outcome>,
    record: bool,
    tracing: bool,
    events: Vec<Event>,
    trace: Vec<String>,
    cycle_sigma: Option<u64>,
    cycle_notes: Vec<String>,
}

fn alu(func: u8, a: u32, b: u32) -> u32 {
    let sh = b & 31;
    match func {
        ALU_ADD => a.wrapping_add(b),
        ALU_SUB => a.wrapping_sub(b),
        ALU_SLL => a << sh,
        ALU_SLT => ((a as i32) < (b as i32)) as u32,
        ALU_SLTU => (a < b) as u32,
        ALU_XOR => a ^ b,
        ALU_SRL => a >> sh,
        ALU_SRA => ((a as i32) >> sh) as u32,
        ALU_OR => a | b,
        ALU_AND => a & b,
        ALU_EQ => (a == b) as u32,
        ALU_NE => (a != b) as u32,
        ALU_LT => ((a as i32) < (b as i32)) as u32,
        ALU_GE => ((a as i32) >= (b as i32)) as u32,
        ALU_LTU => (a < b) as u32,
        _ => (a >= b) as u32,
    }
}

impl Simulator {
    pub fn new(img: &ProgramImage, cfg: &RunConfig) -> Result<Simulator, SimError> {
        img.validate().map_err(|e| SimError::BadImage(e.to_string()))?;
        let (sig_cfg, boot_iv) = match &img.manifest.signing {
            Some(s) => (s.config, s.boot_iv),
            None => (SignatureConfig::default(), DEFAULT_BOOT_IV),
        };
        let checked_halt = match img.manifest.signing {
            Some(_) => img.manifest.functions.iter().filter(|f| f.secured).map(|f| (f.start, f.end)).collect(),
            None => Vec::new(),
        };
        let mut regs = [0u32; 32];
        regs[2] = img.data_base + img.data.len() as u32;
        for &(r, v) in &img.manifest.init_regs {
            if r != 0 {
                regs[r as usize & 31] = v;
            }
        }
        let mut irqs = cfg.irqs.clone();
        irqs.sort_by_key(|r| r.cycle);
        Ok(Simulator {
            cfg: cfg.clone(),
            sig_cfg,
            checked_halt,
            text_base: img.text_base,
            text: img.text.clone(),
            data_base: img.data_base,
            data: img.data.clone(),
            patch_base: img.patch_base,
            patches: img.patches.clone(),
            leaders: img.manifest.leaders.clone(),
            iv_table: img.iv_table.clone(),
            handlers: img.irq_handlers(),
            regs,
            fetch_pc: img.entry,
            fetch_blocked: false,
            if_id: None,
            id_ex: None,
            ex_wb: None,
            sig: boot_iv & sig_cfg.function.mask(),
            patch: 0,
            pending_patch: None,
            context: 0,
            mepc: 0,
            in_irq: false,
            irqs,
            redirect: None,
            faults: Vec::new(),
            cycle: 0,
            since_verify: 0,
            verifications: 0,
            chained: 0,
            stalls: 0,
            faults_applied: 0,
            outcome: None,
            record: false,
            tracing: false,
            events: Vec::new(),
            trace: Vec::new(),
            cycle_sigma: None,
            cycle_notes: Vec::new(),
        })
    }

    pub fn with_faults(mut self, faults: &[ScheduledFault]) -> Self {
        self.faults = faults.to_vec();
        self.faults.sort_by_key(|f| f.cycle);
        self
    }

    pub fn record_events(mut self, on: bool) -> Self {
        self.record = on;
        self
    }

    pub fn with_trace(mut self, on: bool) -> Self {
        self.tracing = on;
        self
    }

    pub fn sig(&self) -> u64 {
        self.sig
    }

    pub fn cycle(&self) -> u64 {
        self.cycle
    }

    pub fn done(&self) -> bool {
        self.outcome.is_some()
    }

    fn mask(&self) -> u64 {
        self.sig_cfg.function.mask()
    }

    fn event(&mut self, e: Event) {
        if self.record {
            self.events.push(e);
        }
    }

    fn note(&mut self, s: impl FnOnce() -> String) {
        if self.tracing {
            self.cycle_notes.push(s());
        }
    }

    fn trap(&mut self, cause: TrapCause, pc: u32) {
        if self.outcome.is_none() {
            self.outcome = Some(Outcome::Trap(Trap { cause, cycle: self.cycle, pc }));
            let c = self.cycle;
            self.note(|| format!("trap {cause:?}@{pc:08x} c{c}"));
        }
    }

    fn faults_now(&self, pred: impl Fn(&Injection) -> bool) -> Vec<ScheduledFault> {
        self.faults.iter().filter(|f| f.cycle == self.cycle && pred(&f.injection)).copied().collect()
    }

    fn apply_csi_faults(&mut self, stage: Stage, ctrl: &mut CsiFields, dup: &mut CsiFields) {
        for f in self.faults_now(|i| matches!(i, Injection::Csi { stage: s, .. } if *s == stage)) {
            if let Injection::Csi { signal, copy, .. } = f.injection {
                let target = match copy {
                    Copy::Original => &mut *ctrl,
                    Copy::Duplicate => &mut *dup,
                };
                signal.apply(target, |v| f.mode.apply(v, f.mask));
                self.faults_applied += 1;
            }
        }
    }

    fn load(&self, addr: u32, size: u16, unsigned: bool) -> Option<u32> {
        let bytes = match size {
            SIZE_BYTE => 1,
            SIZE_HALF => 2,
            _ => 4,
        };
        if !addr.is_multiple_of(bytes) {
            return None;
        }
        let off = addr.checked_sub(self.data_base)? as usize;
        let b = self.data.get(off..off + bytes as usize)?;
        Some(match (bytes, unsigned) {
            (1, true) => b[0] as u32,
            (1, false) => b[0] as i8 as i32 as u32,
            (2, true) => u16::from_le_bytes([b[0], b[1]]) as u32,
            (2, false) => i16::from_le_bytes([b[0], b[1]]) as i32 as u32,
            _ => u32::from_le_bytes([b[0], b[1], b[2], b[3]]),
        })
    }

    fn store(&mut self, addr: u32, size: u16, value: u32) -> bool {
        let bytes = match size {
            SIZE_BYTE => 1,
            SIZE_HALF => 2,
            _ => 4,
        };
        if !addr.is_multiple_of(bytes) {
            return false;
        }
        let Some(off) = addr.checked_sub(self.data_base) else { return false };
        match self.data.get_mut(off as usize..off as usize + bytes as usize) {
            Some(dst) => {
                dst.copy_from_slice(&value.to_le_bytes()[..bytes as usize]);
                true
            }
            None => false,
        }
    }

    /// Advances one cycle. Returns false once the run has ended.
    pub fn step(&mut self) -> bool {
        if self.outcome.is_some() {
            return false;
        }
        self.cycle_sigma = None;
        self.cycle_notes.clear();
        let stage_pcs = (
            (!self.fetch_blocked && self.if_id.is_none()).then_some(self.fetch_pc),
            self.if_id.as_ref().map(|f| f.pc),
            self.id_ex.as_ref().map(|e| e.pc),
            self.ex_wb.as_ref().map(|w| w.pc),
        );

        for f in
            self.faults_now(|i| matches!(i, Injection::Imem { .. } | Injection::SigRegister | Injection::PatchRegister))
        {
            match f.injection {
                Injection::Imem { addr } => {
                    if let Some(w) = read_word(&self.text, self.text_base, addr) {
                        let nw = f.mode.apply(w as u64, f.mask) as u32;
                        write_word(&mut self.text, self.text_base, addr, nw);
                        self.faults_applied += 1;
                    }
                }
                Injection::SigRegister => {
                    self.sig = f.mode.apply(self.sig, f.mask) & self.mask();
                    self.faults_applied += 1;
                }
                Injection::PatchRegister => {
                    self.patch = f.mode.apply(self.patch, f.mask) & self.mask();
                    self.faults_applied += 1;
                }
                _ => {}
            }
        }

        if let Some(r) = self.redirect.take() {
            let squashed = self.id_ex.take().is_some() as u32 + self.if_id.take().is_some() as u32;
            self.sig = r.restore;
            self.fetch_pc = r.target;
            self.fetch_blocked = false;
            let (c, s) = (self.cycle, self.sig);
            self.event(Event::Rollback { cycle: c, sig: s, squashed });
            self.note(|| format!("rollback squash={squashed}"));
        }

        let wb_value = self.stage_wb();
        if self.outcome.is_some() {
            return self.finish_cycle(stage_pcs);
        }
        let ex_info = self.stage_ex();
        if self.outcome.is_some() {
            return self.finish_cycle(stage_pcs);
        }
        self.stage_id(ex_info, wb_value);
        if self.outcome.is_some() {
            return self.finish_cycle(stage_pcs);
        }
        self.stage_if();

        if let Some((value, high)) = self.pending_patch.take() {
            self.patch = match (self.sig_cfg.function, high) {
                (SigKind::Cbcmac, true) => (self.patch & 0xFFFF_FFFF) | (value as u64) << 32,
                (SigKind::Cbcmac, false) => (self.patch & !0xFFFF_FFFF) | value as u64,
                (SigKind::Crc32, _) => value as u64,
            };
        }
        self.since_verify += 1;
        if self.cfg.watchdog > 0 && self.since_verify > self.cfg.watchdog {
            let pc = self.fetch_pc;
            self.trap(TrapCause::WatchdogExpiry, pc);
        }
        self.finish_cycle(stage_pcs)
    }

    fn finish_cycle(&mut self, pcs: (Option<u32>, Option<u32>, Option<u32>, Option<u32>)) -> bool {
        if self.tracing {
            let f = |p: Option<u32>| p.map_or("--------".to_string(), |p| format!("{p:08x}"));
            let sigma = self.cycle_sigma.map_or("-".repeat(16), |s| format!("{s:016x}"));
            self.trace.push(format!(
                "{:6} pc={:08x} IF={} ID={} EX={} WB={} sigma={} sig={:016x} {}",
                self.cycle,
                self.fetch_pc,
                f(pcs.0),
                f(pcs.1),
                f(pcs.2),
                f(pcs.3),
                sigma,
                self.sig,
                self.cycle_notes.join(" ")
            ));
        }
        self.cycle += 1;
        if self.outcome.is_none() {
            if self.cycle >= self.cfg.max_cycles {
                self.outcome = Some(Outcome::Timeout);
            } else if self.stuck() {
                self.fast_forward();
            }
        }
        self.outcome.is_none()
    }

    /// Nothing in flight and fetch waiting for a resolution that cannot come.
    fn stuck(&self) -> bool {
        self.fetch_blocked
            && self.if_id.is_none()
            && self.id_ex.is_none()
            && self.ex_wb.is_none()
            && self.redirect.is_none()
    }

    fn fast_forward(&mut self) {
        if self.cfg.watchdog > 0 {
            let expiry =
                self.cycle + (self.cfg.watchdog + 1 - self.since_verify.min(self.cfg.watchdog + 1)).saturating_sub(1);
            if expiry < self.cfg.max_cycles {
                self.cycle = expiry;
                self.since_verify = self.cfg.watchdog + 1;
                let pc = self.fetch_pc;
                self.trap(TrapCause::WatchdogExpiry, pc);
                self.cycle += 1;
                return;
            }
        }
        self.cycle = self.cfg.max_cycles;
        self.outcome = Some(Outcome::Timeout);
    }

    /// Write-back. Returns the value written to the register file, if any.
    fn stage_wb(&mut self) -> Option<u32> {
        let mut w = self.ex_wb.take()?;
        self.apply_csi_faults(Stage::Wb, &mut w.ctrl, &mut w.dup);
        if w.ctrl != w.dup {
            self.trap(TrapCause::CsiMismatch, w.pc);
            return None;
        }
        let c = w.ctrl;
        if c.patch_load() {
            match read_word(&self.patches, self.patch_base, w.result).filter(|_| w.result % 4 == 0) {
                Some(v) => {
                    self.pending_patch = Some((v, c.patch_high()));
                    let cycle = self.cycle;
                    self.event(Event::PatchLoad { cycle, pc: w.pc, value: v, high: c.patch_high() });
                }
                None => {
                    self.outcome =
                        Some(Outcome::Error { error: SimError::PatchOutOfRange { pc: w.pc, addr: w.result } });
                    return None;
                }
            }
        }
        let mut loaded = 0;
        if c.lsu_read() && !c.patch_load() {
            match self.load(w.result, c.size(), c.unsigned()) {
                Some(v) => loaded = v,
                None => {
                    self.trap(TrapCause::AccessFault, w.pc);
                    return None;
                }
            }
        }
        if c.rf_we() {
            let v = if c.from_lsu() { loaded } else { w.result };
            if c.rd != 0 {
                self.regs[c.rd as usize] = v;
            }
            return Some(v);
        }
        None
    }

    fn stage_ex(&mut self) -> Option<ExInfo> {
        let mut e = self.id_ex.take()?;
        self.apply_csi_faults(Stage::Ex, &mut e.ctrl, &mut e.dup);
        if e.ctrl != e.dup {
            self.trap(TrapCause::CsiMismatch, e.pc);
            return None;
        }
        let c = e.ctrl;
        let result = alu(c.alu_fn(), e.a, e.b);
        if c.lsu_write() && !self.store(result, c.size(), e.store_data) {
            self.trap(TrapCause::AccessFault, e.pc);
            return None;
        }
        if c.verify() {
            let Some(reference) = read_word(&self.text, self.text_base, e.pc.wrapping_add(4)) else {
                self.trap(TrapCause::AccessFault, e.pc);
                return None;
            };
            let ok = verify(self.sig, reference);
            let cycle = self.cycle;
            self.event(Event::Verify { cycle, pc: e.pc, reference, ok });
            if !ok {
                self.trap(TrapCause::SignatureMismatch, e.pc);
                return None;
            }
            self.verifications += 1;
            self.since_verify = 0;
        }

        let flow = c.flow();
        let mut next = e.pc.wrapping_add(e.len);
        if flow != FLOW_NONE {
            let (taken, target) = match flow {
                FLOW_BRANCH => (result != 0, e.pc.wrapping_add(e.target_imm as u32)),
                FLOW_JAL => (true, e.pc.wrapping_add(e.target_imm as u32)),
                FLOW_JALR => (true, e.rs1_val.wrapping_add(e.target_imm as u32) & !1),
                _ => (true, self.mepc),
            };
            if taken && target % 4 != 0 {
                self.trap(TrapCause::MisalignedFetch, e.pc);
                return None;
            }
            let secured = self.checked_halt.iter().any(|&(lo, hi)| (lo..hi).contains(&e.pc));
            if flow == FLOW_JAL && target == e.pc && (c.verify() || !secured) {
                self.outcome = Some(Outcome::Halted);
                self.ex_wb = Some(ExWb { pc: e.pc, ctrl: c, dup: e.dup, result });
                return None;
            }
            if flow == FLOW_MRET {
                self.sig = self.context;
                self.patch = 0;
                self.in_irq = false;
                next = self.mepc;
                let (cycle, s) = (self.cycle, self.sig);
                self.event(Event::IrqReturn { cycle, pc: e.pc, restored_sig: s });
                self.note(|| format!("mret sig<-{s:016x}"));
                self.redirect_fetch(next);
            } else if self.cfg.predictor && e.deliver_irq.is_none() {
                let saved = update(self.sig, self.patch) & self.mask();
                self.patch = 0;
                if taken {
                    self.redirect = Some(Redirect { target, restore: saved });
                    self.note(|| "mispredict".to_string());
                }
                next = if taken { target } else { next };
            } else {
                if taken {
                    let p = self.patch;
                    self.sig = update(self.sig, p) & self.mask();
                    let (cycle, s) = (self.cycle, self.sig);
                    self.event(Event::Update { cycle, pc: e.pc, patch: p, sig: s });
                    next = target;
                }
                self.patch = 0;
                self.redirect_fetch(next);
            }
        }

        if let Some(irq) = e.deliver_irq {
            let handler = self.handlers.get(&irq).copied();
            let iv = self.iv_table.get(irq as usize).copied().unwrap_or(0);
            match handler {
                Some(h) => {
                    self.context = self.sig;
                    self.sig = iv & self.mask();
                    self.mepc = next;
                    self.in_irq = true;
                    self.redirect_fetch(h);
                    let (cycle, saved) = (self.cycle, self.context);
                    self.event(Event::IrqDeliver { cycle, irq, resume: next, saved_sig: saved, iv });
                    self.note(|| format!("irq{irq} ctx<-{saved:016x}"));
                }
                None => self.redirect_fetch(next),
            }
        }

        self.ex_wb = Some(ExWb { pc: e.pc, ctrl: c, dup: e.dup, result });
        Some(ExInfo { ctrl: c, result })
    }

    fn redirect_fetch(&mut self, target: u32) {
        self.if_id = None;
        self.fetch_pc = target;
        self.fetch_blocked = false;
    }

    fn stage_id(&mut self, ex: Option<ExInfo>, wb_value: Option<u32>) {
        let Some(fe) = self.if_id.clone() else { return };
        let wrong_path = self.redirect.is_some();
        if let Some(cause) = fe.fault {
            self.if_id = None;
            if !wrong_path {
                self.trap(cause, fe.pc);
            }
            return;
        }
        let instr = match decode(fe.word) {
            Ok(i) => i,
            Err(_) => {
                self.if_id = None;
                if !wrong_path {
                    self.trap(TrapCause::IllegalInstruction, fe.pc);
                }
                return;
            }
        };
        let fwd = ex.map(|x| FwdCtx::from_fields(&x.ctrl));
        let mut sigma = derive_from_word(fe.word, instr.op, fwd).bits();
        let sigma_faults = self.faults_now(|i| matches!(i, Injection::Sigma));
        for f in &sigma_faults {
            sigma = f.mode.apply(sigma, f.mask);
        }
        let s = PipelineState(sigma);
        let ctrl = s.post_decode();

        if let Some(x) = ex {
            let reads = |r: u8| (s.reads_rs1() && s.rs1() == r) || (s.reads_rs2() && s.rs2() == r);
            let cause =
                if x.ctrl.lsu_read() && !x.ctrl.patch_load() && x.ctrl.rf_we() && x.ctrl.rd != 0 && reads(x.ctrl.rd) {
                    Some(StallCause::LoadUse)
                } else if x.ctrl.patch_load() && ctrl.flow() != FLOW_NONE {
                    Some(StallCause::PatchThenBranch)
                } else {
                    None
                };
            if let Some(cause) = cause {
                self.stalls += 1;
                let cycle = self.cycle;
                self.event(Event::Stall { cycle, pc: fe.pc, cause });
                self.note(|| format!("stall {cause:?}"));
                return;
            }
        }
        self.if_id = None;

        let port = |sel: u8, r: u8, regs: &[u32; 32]| match sel {
            FWD_RF => regs[r as usize],
            FWD_EX => ex.map_or(0, |x| x.result),
            FWD_WB => wb_value.unwrap_or(0),
            _ => 0,
        };
        let pa = port(s.fwd_a(), s.rs1(), &self.regs);
        let pb = port(s.fwd_b(), s.rs2(), &self.regs);
        let w = fe.word;
        let a = match s.op_a() {
            OPA_RS1 => pa,
            OPA_PC => fe.pc,
            OPA_PATCH_BASE => self.patch_base,
            _ => 0,
        };
        let b = match s.op_b() {
            OPB_RS2 => pb,
            OPB_IMM_I => imm_i(w) as u32,
            OPB_IMM_S => imm_s(w) as u32,
            OPB_IMM_U => imm_u(w) as u32,
            OPB_FOUR => 4,
            OPB_EIGHT => 8,
            OPB_IMM_LDP => (w >> 12) << 2,
            _ => 0,
        };
        let target_imm = match s.target_imm() {
            TGT_B => imm_b(w),
            TGT_J => imm_j(w),
            TGT_I => imm_i(w),
            _ => 0,
        };

        self.sig = sig_step(self.sig, sigma, &self.sig_cfg) & self.mask();
        self.chained += 1;
        self.faults_applied += sigma_faults.len() as u64;
        self.cycle_sigma = Some(sigma);
        let (cycle, sig) = (self.cycle, self.sig);
        self.event(Event::Chain { cycle, pc: fe.pc, sigma, sig, speculative: wrong_path });

        let mut deliver_irq = None;
        if !wrong_path && !self.in_irq {
            let block_end = ctrl.flow() != FLOW_NONE || self.leaders.contains(&fe.pc.wrapping_add(fe.len));
            if block_end {
                if let Some(pos) = self.irqs.iter().position(|r| r.cycle <= self.cycle) {
                    deliver_irq = Some(self.irqs.remove(pos).irq);
                    self.fetch_blocked = true;
                    self.in_irq = true;
                }
            }
        }

        self.id_ex = Some(IdEx {
            pc: fe.pc,
            len: fe.len,
            ctrl,
            dup: ctrl,
            a,
            b,
            rs1_val: pa,
            store_data: pb,
            target_imm,
            deliver_irq,
        });
    }

    fn stage_if(&mut self) {
        if self.fetch_blocked || self.if_id.is_some() {
            return;
        }
        let pc = self.fetch_pc;
        let fault = if !pc.is_multiple_of(4) {
            Some(TrapCause::MisalignedFetch)
        } else if read_word(&self.text, self.text_base, pc).is_none() {
            Some(TrapCause::AccessFault)
        } else {
            None
        };
        if let Some(f) = fault {
            self.if_id = Some(Fetched { pc, word: 0, len: 4, fault: Some(f) });
            self.fetch_blocked = true;
            return;
        }
        let word = read_word(&self.text, self.text_base, pc).unwrap();
        let (len, blocks) = match decode(word) {
            Ok(i) => {
                let blocks = if self.cfg.predictor { i.op == crate::isa::Opcode::Mret } else { i.op.is_control_flow() };
                (i.op.size(), blocks)
            }
            Err(_) => (4, false),
        };
        self.if_id = Some(Fetched { pc, word, len, fault: None });
        self.fetch_pc = pc.wrapping_add(len);
        self.fetch_blocked = blocks;
    }

    pub fn run(mut self) -> RunResult {
        while self.step() {}
        self.into_result()
    }

    pub fn into_result(self) -> RunResult {
        RunResult {
            outcome: self.outcome.unwrap_or(Outcome::Timeout),
            cycles: self.cycle,
            verifications: self.verifications,
            chained: self.chained,
            stalls: self.stalls,
            faults_applied: self.faults_applied,
            final_sig: self.sig,
            regs: self.regs.to_vec(),
            data: self.data,
            events: self.events,
            trace: self.trace,
        }
    }
}

/// Runs `img` to completion.
pub fn run_image(img: &ProgramImage, cfg: &RunConfig) -> RunResult {
    match Simulator::new(img, cfg) {
        Ok(sim) => sim.run(),
        Err(error) => RunResult {
            outcome: Outcome::Error { error },
            cycles: 0,
            verifications: 0,
            chained: 0,
            stalls: 0,
            faults_applied: 0,
            final_sig: 0,
            regs: vec![0; 32],
            data: Vec::new(),
            events: Vec::new(),
            trace: Vec::new(),
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::isa::assemble;

    fn run(src: &str, cfg: &RunConfig) -> RunResult {
        let img = assemble(src).unwrap();
        Simulator::new(&img, cfg).unwrap().with_trace(true).run()
    }

    #[test]
    fn counts_down() {
        let r = run(
            ".reginit t0, 16\n.func main\nloop:\n addi t0, t0, -1\n bne t0, zero, loop\n halt\n",
            &RunConfig::default(),
        );
        assert!(r.halted(), "{:?}\n{}", r.outcome, r.trace.join("\n"));
        assert_eq!(r.regs[5], 0);
        assert_eq!(r.chained, 16 * 2 + 1);
    }

    #[test]
    fn forwarding_and_memory() {
        let src = ".data\nbuf: .word 7\n.text\n.func main\n la t0, buf\n lw t1, 0(t0)\n addi t1, t1, 1\n sw t1, 0(t0)\n lw t2, 0(t0)\n add t3, t2, t2\n halt\n";
        for predictor in [false, true] {
            let r = run(src, &RunConfig { predictor, ..RunConfig::default() });
            assert!(r.halted(), "{:?}", r.outcome);
            assert_eq!(r.regs[28], 16);
            assert_eq!(r.stalls, 2);
        }
    }

    #[test]
    fn calls_and_returns() {
        let src = ".func main\n li a0, 5\n call dbl\n call dbl\n halt\n.func dbl\n add a0, a0, a0\n ret\n";
        let a = run(src, &RunConfig::default());
        let b = run(src, &RunConfig { predictor: true, ..RunConfig::default() });
        assert_eq!(a.regs[10], 20);
        assert_eq!(b.regs[10], 20);
        assert_eq!(a.final_sig, b.final_sig);
    }

    #[test]
    fn illegal_word_traps() {
        let r = run(".func main\n .word 0\n", &RunConfig::default());
        assert_eq!(r.trap().unwrap().cause, TrapCause::IllegalInstruction);
    }
}
