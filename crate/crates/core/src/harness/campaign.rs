//! Campaign definitions, the parallel sweep runner and its reports.

use std::collections::BTreeMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{
    inject_many, run_golden, FaultClass, FaultSpace, FaultSpec, Golden, HarnessError, InjectionResult, TargetSet,
};
use crate::config::{IrqRequest, RunConfig};
use crate::isa::ProgramImage;
use crate::sim::{FaultMode, TrapCause};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Sampling {
    Exhaustive,
    /// `count` distinct points drawn with ChaCha8 seeded by `seed`.
    Random {
        count: u64,
        seed: u64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SweepOptions {
    /// Worker threads; 0 lets the pool decide.
    pub jobs: usize,
    /// Maximum number of faulty runs.
    pub budget: Option<u64>,
    pub sampling: Sampling,
}

impl Default for SweepOptions {
    fn default() -> Self {
        SweepOptions { jobs: 0, budget: None, sampling: Sampling::Exhaustive }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub detected_cacfi: u64,
    pub detected_csi: u64,
    pub detected_watchdog: u64,
    pub crash_trap: u64,
    pub silent_benign: u64,
    pub silent_corrupting: u64,
}

impl ClassCounts {
    pub fn add(&mut self, class: FaultClass) {
        *self.slot(class) += 1;
    }

    fn slot(&mut self, class: FaultClass) -> &mut u64 {
        match class {
            FaultClass::DetectedCacfi => &mut self.detected_cacfi,
            FaultClass::DetectedCsi => &mut self.detected_csi,
            FaultClass::DetectedWatchdog => &mut self.detected_watchdog,
            FaultClass::CrashTrap => &mut self.crash_trap,
            FaultClass::SilentBenign => &mut self.silent_benign,
            FaultClass::SilentCorrupting => &mut self.silent_corrupting,
        }
    }

    pub fn get(&self, class: FaultClass) -> u64 {
        *self.clone().slot(class)
    }

    pub fn total(&self) -> u64 {
        FaultClass::ALL.iter().map(|&c| self.get(c)).sum()
    }

    pub fn detected(&self) -> u64 {
        self.detected_cacfi + self.detected_csi + self.detected_watchdog
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub count: u64,
    pub min: u64,
    pub max: u64,
    pub mean: f64,
    pub p50: u64,
    pub p90: u64,
    pub p99: u64,
    /// Latency (cycles) → number of faults.
    pub histogram: BTreeMap<u64, u64>,
}

impl LatencyStats {
    pub fn from_samples(mut v: Vec<u64>) -> Self {
        if v.is_empty() {
            return LatencyStats::default();
        }
        v.sort_unstable();
        let pct = |p: usize| v[((v.len() - 1) * p) / 100];
        let mut histogram = BTreeMap::new();
        for &x in &v {
            *histogram.entry(x).or_insert(0) += 1;
        }
        LatencyStats {
            count: v.len() as u64,
            min: v[0],
            max: *v.last().unwrap(),
            mean: v.iter().sum::<u64>() as f64 / v.len() as f64,
            p50: pct(50),
            p90: pct(90),
            p99: pct(99),
            histogram,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FaultRecord {
    pub index: u64,
    pub faults: Vec<FaultSpec>,
    #[serde(flatten)]
    pub result: InjectionResult,
    /// The class contradicts the region of some injected target.
    pub region_violation: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignOutcome {
    pub sampling: Sampling,
    pub space_size: u128,
    pub golden_cycles: u64,
    pub watchdog: u64,
    pub window: (u64, u64),
    /// The budget cut the run short.
    pub incomplete: bool,
    pub counts: ClassCounts,
    pub region_violations: u64,
    pub latency: LatencyStats,
    pub records: Vec<FaultRecord>,
}

const CSV_HEADER: [&str; 11] =
    ["index", "target", "cycle", "mask", "mode", "class", "latency", "trap_cause", "trap_pc", "cycles", "applied"];

/// One `report.csv` line; field order must follow `CSV_HEADER`.
#[derive(Serialize)]
struct CsvRow<'a> {
    index: u64,
    target: String,
    cycle: u64,
    mask: String,
    mode: FaultMode,
    class: &'a str,
    latency: Option<u64>,
    trap_cause: Option<TrapCause>,
    trap_pc: Option<String>,
    cycles: u64,
    applied: u64,
}

impl CampaignOutcome {
    pub fn empty(golden: &Golden, window: (u64, u64), sampling: Sampling) -> Self {
        CampaignOutcome {
            sampling,
            space_size: 0,
            golden_cycles: golden.result.cycles,
            watchdog: golden.cfg.watchdog,
            window,
            incomplete: false,
            counts: ClassCounts::default(),
            region_violations: 0,
            latency: LatencyStats::default(),
            records: Vec::new(),
        }
    }

    fn push_all(&mut self, records: Vec<FaultRecord>) {
        for r in &records {
            self.counts.add(r.result.class);
            self.region_violations += r.region_violation as u64;
        }
        self.records.extend(records);
        self.latency = LatencyStats::from_samples(self.records.iter().filter_map(|r| r.result.latency).collect());
    }

    pub fn has_findings(&self) -> bool {
        self.counts.silent_corrupting > 0 || self.region_violations > 0
    }

    pub fn to_csv(&self) -> Result<String, csv::Error> {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
        w.write_record(CSV_HEADER)?;
        for r in &self.records {
            let join = |f: &dyn Fn(&FaultSpec) -> String| r.faults.iter().map(f).collect::<Vec<_>>().join("+");
            w.serialize(CsvRow {
                index: r.index,
                target: join(&|s| s.target.to_string()),
                cycle: r.faults.iter().map(|s| s.cycle).min().unwrap_or(0),
                mask: join(&|s| format!("0x{:x}", s.mask)),
                mode: r.faults.first().map_or(FaultMode::Flip, |s| s.mode),
                class: r.result.class.name(),
                latency: r.result.latency,
                trap_cause: r.result.trap.map(|t| t.cause),
                trap_pc: r.result.trap.map(|t| format!("0x{:08x}", t.pc)),
                cycles: r.result.cycles,
                applied: r.result.applied,
            })?;
        }
        let bytes = w.into_inner().map_err(|e| e.into_error())?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    /// Writes `report.json` and `report.csv` into `dir`.
    pub fn write_reports(&self, dir: &Path) -> Result<(), CampaignError> {
        let io = |e: std::io::Error| CampaignError::Io { path: dir.display().to_string(), source: e };
        std::fs::create_dir_all(dir).map_err(io)?;
        let json = serde_json::to_string_pretty(self).map_err(|e| CampaignError::Report(e.to_string()))?;
        std::fs::write(dir.join("report.json"), json + "\n").map_err(io)?;
        let csv = self.to_csv().map_err(|e| CampaignError::Report(e.to_string()))?;
        std::fs::write(dir.join("report.csv"), csv).map_err(io)?;
        Ok(())
    }
}

fn pool(jobs: usize) -> rayon::ThreadPool {
    rayon::ThreadPoolBuilder::new().num_threads(jobs).build().expect("thread pool")
}

fn run_all(
    img: &ProgramImage,
    golden: &Golden,
    runs: Vec<(u64, Vec<FaultSpec>)>,
    jobs: usize,
) -> Result<Vec<FaultRecord>, HarnessError> {
    pool(jobs).install(|| {
        runs.into_par_iter()
            .map(|(index, faults)| {
                let result = inject_many(img, golden, &faults)?;
                let region_violation =
                    faults.iter().any(|f| !super::region_consistent(f.target.region(), result.class));
                Ok(FaultRecord { index, faults, result, region_violation })
            })
            .collect()
    })
}

/// Runs every selected point of `space` against `golden`. Records come back in
/// space order whatever the number of workers.
pub fn sweep(
    img: &ProgramImage,
    golden: &Golden,
    space: &FaultSpace,
    opts: &SweepOptions,
) -> Result<CampaignOutcome, HarnessError> {
    let mut indices: Vec<u128> = match opts.sampling {
        Sampling::Random { count, seed } if (count as u128) < space.len() => {
            let len = usize::try_from(space.len())
                .map_err(|_| HarnessError::InvalidSpec { target: "space".into(), why: "too large to sample".into() })?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut v: Vec<u128> =
                rand::seq::index::sample(&mut rng, len, count as usize).into_iter().map(|i| i as u128).collect();
            v.sort_unstable();
            v
        }
        _ => (0..space.len()).collect(),
    };
    let mut out = CampaignOutcome::empty(golden, space.window(), opts.sampling);
    out.space_size = space.len();
    if let Some(b) = opts.budget {
        if indices.len() as u64 > b {
            indices.truncate(b as usize);
            out.incomplete = true;
        }
    }
    let runs = indices.into_iter().map(|i| (i as u64, vec![space.get(i)])).collect();
    out.push_all(run_all(img, golden, runs, opts.jobs)?);
    Ok(out)
}

#[derive(Debug, Error)]
pub enum CampaignError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("campaign file: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("{0}")]
    Harness(#[from] HarnessError),
    #[error("report: {0}")]
    Report(String),
}

/// A multi-shot fault given explicitly in a campaign file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shot {
    pub faults: Vec<FaultSpec>,
}

/// Campaign definition file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Campaign {
    pub targets: Vec<TargetSet>,
    /// Half-open cycle window; the whole golden run when absent.
    pub window: Option<(u64, u64)>,
    /// Inclusive mask-weight range.
    pub weights: (u32, u32),
    pub mode: FaultMode,
    pub budget: Option<u64>,
    /// Number of random points; exhaustive when absent.
    pub samples: Option<u64>,
    pub seed: u64,
    /// Watchdog bound; derived from the golden run when absent.
    pub watchdog: Option<u64>,
    pub predictor: bool,
    pub irqs: Vec<IrqRequest>,
    pub shots: Vec<Shot>,
}

impl Default for Campaign {
    fn default() -> Self {
        Campaign {
            targets: Vec::new(),
            window: None,
            weights: (1, 1),
            mode: FaultMode::Flip,
            budget: None,
            samples: None,
            seed: 0,
            watchdog: None,
            predictor: false,
            irqs: Vec::new(),
            shots: Vec::new(),
        }
    }
}

impl Campaign {
    pub fn parse(text: &str) -> Result<Self, CampaignError> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self, CampaignError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| CampaignError::Io { path: path.display().to_string(), source })?;
        Campaign::parse(&text)
    }

    /// Golden run under this campaign's configuration, watchdog included.
    pub fn golden(&self, img: &ProgramImage) -> Result<Golden, HarnessError> {
        let mut cfg = RunConfig { predictor: self.predictor, irqs: self.irqs.clone(), ..RunConfig::default() };
        let watchdog = match self.watchdog {
            Some(w) => w,
            None => run_golden(img, &cfg)?.suggested_watchdog(),
        };
        cfg.watchdog = watchdog;
        run_golden(img, &cfg)
    }

    pub fn space(&self, img: &ProgramImage, golden: &Golden) -> FaultSpace {
        let window = self.window.unwrap_or((0, golden.result.cycles));
        FaultSpace::new(img, &self.targets, window, self.weights, self.mode)
    }

    pub fn run(&self, img: &ProgramImage, jobs: usize) -> Result<CampaignOutcome, CampaignError> {
        let golden = self.golden(img)?;
        let space = self.space(img, &golden);
        let sampling = match self.samples {
            Some(count) => Sampling::Random { count, seed: self.seed },
            None => Sampling::Exhaustive,
        };
        let opts = SweepOptions { jobs, budget: self.budget, sampling };
        let mut out = sweep(img, &golden, &space, &opts)?;
        if !self.shots.is_empty() {
            let base = space.len() as u64;
            let room = self.budget.map_or(u64::MAX, |b| b.saturating_sub(out.records.len() as u64));
            let shots: Vec<_> =
                self.shots.iter().enumerate().map(|(i, s)| (base + i as u64, s.faults.clone())).collect();
            if shots.len() as u64 > room {
                out.incomplete = true;
            }
            let shots = shots.into_iter().take(room.min(usize::MAX as u64) as usize).collect();
            out.push_all(run_all(img, &golden, shots, jobs)?);
        }
        Ok(out)
    }
}
