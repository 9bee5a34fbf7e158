//! Fault injection: golden runs, single and multi-shot injection with
//! differential classification, exhaustive or sampled sweeps, and overhead
//! measurement.

mod campaign;
mod overhead;
mod space;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::RunConfig;
use crate::isa::ProgramImage;
use crate::sim::{
    Copy, CsiSignal, Event, FaultMode, Injection, Outcome, RunResult, ScheduledFault, SimError, Simulator, Stage, Trap,
    TrapCause,
};

pub use campaign::{
    sweep, Campaign, CampaignError, CampaignOutcome, ClassCounts, FaultRecord, LatencyStats, Sampling, SweepOptions,
};
pub use overhead::{
    dispatcher_table, measure_overheads, overhead_table, CodeSize, CycleCount, DispatcherReport, FunctionOverhead,
    OverheadReport,
};
pub use space::{unrank_combination, FaultSpace, TargetSet};

/// Upper bound on the number of bits one fault may touch.
pub const MAX_FAULT_WEIGHT: u32 = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FaultTarget {
    /// Any `.text` word; the corruption persists from the injection cycle on.
    ImemWord {
        addr: u32,
    },
    /// Σ as it leaves decode in the injection cycle.
    PipelineStateBit,
    PostDecodeSignal {
        signal: CsiSignal,
        stage: Stage,
        copy: Copy,
    },
    SigRegister,
    PatchRegister,
    /// The reference word following a verification instruction.
    ReferenceWord {
        addr: u32,
    },
}

/// Where a target sits relative to Σ derivation and control duplication.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Region {
    /// At or before decode output: covered by the signature chain only.
    Upstream,
    /// Behind duplication: covered by the redundancy check only.
    Downstream,
    /// Monitor state (signature and patch registers).
    Monitor,
}

impl FaultTarget {
    pub fn region(&self) -> Region {
        match self {
            FaultTarget::ImemWord { .. } | FaultTarget::ReferenceWord { .. } | FaultTarget::PipelineStateBit => {
                Region::Upstream
            }
            FaultTarget::PostDecodeSignal { .. } => Region::Downstream,
            FaultTarget::SigRegister | FaultTarget::PatchRegister => Region::Monitor,
        }
    }

    /// Number of bits the target holds.
    pub fn width(&self, img: &ProgramImage) -> u32 {
        match self {
            FaultTarget::ImemWord { .. } | FaultTarget::ReferenceWord { .. } => 32,
            FaultTarget::PipelineStateBit => 64,
            FaultTarget::PostDecodeSignal { signal, .. } => signal.width(),
            FaultTarget::SigRegister | FaultTarget::PatchRegister => {
                img.manifest.signing.as_ref().map_or(32, |s| s.config.function.width())
            }
        }
    }

    pub fn injection(&self) -> Injection {
        match *self {
            FaultTarget::ImemWord { addr } | FaultTarget::ReferenceWord { addr } => Injection::Imem { addr },
            FaultTarget::PipelineStateBit => Injection::Sigma,
            FaultTarget::PostDecodeSignal { signal, stage, copy } => Injection::Csi { signal, stage, copy },
            FaultTarget::SigRegister => Injection::SigRegister,
            FaultTarget::PatchRegister => Injection::PatchRegister,
        }
    }
}

impl std::fmt::Display for FaultTarget {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            FaultTarget::ImemWord { addr } => write!(f, "imem@0x{addr:08x}"),
            FaultTarget::ReferenceWord { addr } => write!(f, "ref@0x{addr:08x}"),
            FaultTarget::PipelineStateBit => write!(f, "sigma"),
            FaultTarget::PostDecodeSignal { signal, stage, copy } => {
                write!(f, "csi.{signal:?}.{stage:?}.{copy:?}")
            }
            FaultTarget::SigRegister => write!(f, "sig"),
            FaultTarget::PatchRegister => write!(f, "patch"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FaultSpec {
    pub target: FaultTarget,
    pub cycle: u64,
    pub mask: u64,
    pub mode: FaultMode,
}

impl FaultSpec {
    pub fn flip(target: FaultTarget, cycle: u64, mask: u64) -> Self {
        FaultSpec { target, cycle, mask, mode: FaultMode::Flip }
    }

    /// Rejects specs that name nonexistent state or exceed the weight bound.
    pub fn validate(&self, img: &ProgramImage) -> Result<(), HarnessError> {
        let bad = |why: String| Err(HarnessError::InvalidSpec { target: self.target.to_string(), why });
        let w = self.mask.count_ones();
        if w == 0 || w > MAX_FAULT_WEIGHT {
            return bad(format!("mask weight {w} outside 1..={MAX_FAULT_WEIGHT}"));
        }
        let width = self.target.width(img);
        if width < 64 && self.mask >> width != 0 {
            return bad(format!("mask 0x{:x} wider than {width} bits", self.mask));
        }
        match self.target {
            FaultTarget::ImemWord { addr } if img.text_word(addr).is_none() || addr % 4 != 0 => {
                bad(format!("0x{addr:08x} is not a .text word"))
            }
            FaultTarget::ReferenceWord { addr } if !img.reference_slots().contains(&addr) => {
                bad(format!("0x{addr:08x} is not a reference word"))
            }
            _ => Ok(()),
        }
    }

    pub fn scheduled(&self) -> ScheduledFault {
        ScheduledFault { cycle: self.cycle, injection: self.target.injection(), mask: self.mask, mode: self.mode }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultClass {
    DetectedCacfi,
    DetectedCsi,
    DetectedWatchdog,
    /// Illegal instruction, misaligned fetch, access fault or a simulator-level error.
    CrashTrap,
    SilentBenign,
    /// Architectural result differs from the golden run without any trap (hangs included).
    SilentCorrupting,
}

impl FaultClass {
    pub const ALL: [FaultClass; 6] = [
        FaultClass::DetectedCacfi,
        FaultClass::DetectedCsi,
        FaultClass::DetectedWatchdog,
        FaultClass::CrashTrap,
        FaultClass::SilentBenign,
        FaultClass::SilentCorrupting,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FaultClass::DetectedCacfi => "detected_cacfi",
            FaultClass::DetectedCsi => "detected_csi",
            FaultClass::DetectedWatchdog => "detected_watchdog",
            FaultClass::CrashTrap => "crash_trap",
            FaultClass::SilentBenign => "silent_benign",
            FaultClass::SilentCorrupting => "silent_corrupting",
        }
    }

    pub fn is_detected(self) -> bool {
        matches!(self, FaultClass::DetectedCacfi | FaultClass::DetectedCsi | FaultClass::DetectedWatchdog)
    }
}

/// Whether a classification is compatible with the region the fault was injected in.
pub fn region_consistent(region: Region, class: FaultClass) -> bool {
    match region {
        Region::Upstream => class != FaultClass::DetectedCsi,
        Region::Downstream => class != FaultClass::DetectedCacfi,
        Region::Monitor => class != FaultClass::DetectedCsi,
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum HarnessError {
    #[error("image is not signed")]
    Unsigned,
    #[error("golden run did not halt cleanly: {0}")]
    GoldenNotClean(String),
    #[error("invalid fault on {target}: {why}")]
    InvalidSpec { target: String, why: String },
    #[error("{0}")]
    Sim(#[from] SimError),
}

/// Reference execution of an image.
#[derive(Debug, Clone)]
pub struct Golden {
    pub cfg: RunConfig,
    pub result: RunResult,
    /// (cycle, pc) of every non-speculative decode.
    pub decodes: Vec<(u64, u32)>,
    pub verify_cycles: Vec<u64>,
}

impl Golden {
    /// Cycle at which the `n`-th (from 0) non-speculative decode of `pc` happens.
    pub fn occurrence(&self, pc: u32, n: usize) -> Option<u64> {
        self.decodes.iter().filter(|d| d.1 == pc).nth(n).map(|d| d.0)
    }

    /// Longest stretch without a passing verification, start and halt included.
    pub fn max_verify_gap(&self) -> u64 {
        let mut prev = 0;
        let mut gap = 0;
        for &c in self.verify_cycles.iter().chain(std::iter::once(&self.result.cycles)) {
            gap = gap.max(c - prev);
            prev = c;
        }
        gap
    }

    /// A watchdog bound with headroom over the golden run.
    pub fn suggested_watchdog(&self) -> u64 {
        2 * self.max_verify_gap() + 8
    }

    /// Cycle limit for faulty runs.
    pub fn fault_cycle_limit(&self) -> u64 {
        4 * self.result.cycles + self.cfg.watchdog + 256
    }

    fn fault_cfg(&self) -> RunConfig {
        RunConfig { max_cycles: self.fault_cycle_limit(), ..self.cfg.clone() }
    }
}

/// Runs a signed image fault-free; anything but a clean halt is an error.
pub fn run_golden(img: &ProgramImage, cfg: &RunConfig) -> Result<Golden, HarnessError> {
    if !img.is_signed() {
        return Err(HarnessError::Unsigned);
    }
    let result = Simulator::new(img, cfg)?.record_events(true).run();
    if !result.halted() {
        return Err(HarnessError::GoldenNotClean(format!("{:?}", result.outcome)));
    }
    let mut decodes = Vec::new();
    let mut verify_cycles = Vec::new();
    for e in &result.events {
        match *e {
            Event::Chain { cycle, pc, speculative: false, .. } => decodes.push((cycle, pc)),
            Event::Verify { cycle, ok: true, .. } => verify_cycles.push(cycle),
            _ => {}
        }
    }
    Ok(Golden { cfg: cfg.clone(), result, decodes, verify_cycles })
}

/// Result of one faulty run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InjectionResult {
    pub class: FaultClass,
    /// Cycles from the first injection to the trap.
    pub latency: Option<u64>,
    pub trap: Option<Trap>,
    pub cycles: u64,
    /// Injected faults that reached live state before the run ended.
    pub applied: u64,
}

/// Maps a faulty run onto a class by trap cause and final-state difference.
pub fn classify(golden: &RunResult, faulty: &RunResult, injected_at: u64) -> InjectionResult {
    let (class, trap) = match &faulty.outcome {
        Outcome::Trap(t) => {
            let class = match t.cause {
                TrapCause::SignatureMismatch => FaultClass::DetectedCacfi,
                TrapCause::CsiMismatch => FaultClass::DetectedCsi,
                TrapCause::WatchdogExpiry => FaultClass::DetectedWatchdog,
                TrapCause::IllegalInstruction | TrapCause::MisalignedFetch | TrapCause::AccessFault => {
                    FaultClass::CrashTrap
                }
            };
            (class, Some(*t))
        }
        Outcome::Error { .. } => (FaultClass::CrashTrap, None),
        Outcome::Timeout => (FaultClass::SilentCorrupting, None),
        Outcome::Halted if faulty.same_state(golden) => (FaultClass::SilentBenign, None),
        Outcome::Halted => (FaultClass::SilentCorrupting, None),
    };
    let latency = match (&faulty.outcome, trap) {
        (_, Some(t)) => Some(t.cycle.saturating_sub(injected_at)),
        (Outcome::Error { .. }, _) => Some(faulty.cycles.saturating_sub(injected_at)),
        _ => None,
    };
    InjectionResult { class, latency, trap, cycles: faulty.cycles, applied: faulty.faults_applied }
}

/// Runs the image with every fault of `specs` applied (a multi-shot fault when
/// there is more than one).
pub fn inject_many(img: &ProgramImage, golden: &Golden, specs: &[FaultSpec]) -> Result<InjectionResult, HarnessError> {
    for s in specs {
        s.validate(img)?;
    }
    let faults: Vec<ScheduledFault> = specs.iter().map(FaultSpec::scheduled).collect();
    let first = specs.iter().map(|s| s.cycle).min().unwrap_or(0);
    let faulty = Simulator::new(img, &golden.fault_cfg())?.with_faults(&faults).run();
    Ok(classify(&golden.result, &faulty, first))
}

pub fn inject(img: &ProgramImage, golden: &Golden, spec: &FaultSpec) -> Result<InjectionResult, HarnessError> {
    inject_many(img, golden, std::slice::from_ref(spec))
}
