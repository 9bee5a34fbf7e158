use std::error::Error;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use pipeguard_core::config::{parse_hex, BuildConfig, ConfigFile, IrqRequest, RunConfig};
use pipeguard_core::corpus;
use pipeguard_core::harness::{
    dispatcher_table, measure_overheads, overhead_table, Campaign, FaultClass, OverheadReport,
};
use pipeguard_core::isa::ProgramImage;
use pipeguard_core::sigfun::{crc_collision_search, CollisionSearch, SigKind, DEFAULT_CRC_POLY};
use pipeguard_core::sim::{Outcome, Simulator};
use pipeguard_core::toolchain::{build_sources, BuildOutput};

type Result<T> = std::result::Result<T, Box<dyn Error>>;

/// Exit status: 0 clean, 2 findings, 1 tool error.
const FINDINGS: u8 = 2;

#[derive(Parser)]
#[command(name = "pipeguard", version, about = "Signed-pipeline toolchain, simulator and fault campaigns")]
struct Cli {
    /// TOML file with optional [build] and [run] tables; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Assemble, instrument and sign sources into an image directory.
    Build {
        /// Assembly sources, linked as one program.
        sources: Vec<PathBuf>,
        /// Build a bundled sample program instead.
        #[arg(long, conflicts_with = "sources")]
        corpus: Option<String>,
        #[arg(short, long)]
        out: PathBuf,
        #[command(flatten)]
        sig: SigArgs,
    },
    /// Run an image to halt or trap.
    Run {
        image: PathBuf,
        #[command(flatten)]
        run: RunArgs,
        /// Write one line per cycle to this file.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Run the unsigned baseline stored next to the image.
        #[arg(long)]
        baseline: bool,
    },
    /// Run a fault campaign and write report.json / report.csv.
    Campaign {
        image: PathBuf,
        campaign: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
        /// Worker threads; 0 uses every core.
        #[arg(long, default_value_t = 0)]
        jobs: usize,
        #[arg(long)]
        seed: Option<u64>,
        /// Random sample size; overrides the campaign file.
        #[arg(long)]
        samples: Option<u64>,
        #[arg(long)]
        budget: Option<u64>,
        #[arg(long)]
        watchdog: Option<u64>,
        #[arg(long)]
        predictor: bool,
    },
    /// Smallest undetected error pattern of a CRC polynomial.
    Crcsearch {
        #[arg(long, value_parser = hex32)]
        poly: Option<u32>,
        /// Consecutive 64-bit states to search over.
        #[arg(long, default_value_t = 4)]
        blocks: usize,
        #[arg(long, default_value_t = 5)]
        weight: u32,
    },
    /// Code-size and cycle overheads of built images (the bundled samples by default).
    Report {
        images: Vec<PathBuf>,
        #[command(flatten)]
        sig: SigArgs,
        /// Also write the full reports as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
    },
}

#[derive(Args)]
struct SigArgs {
    #[arg(long)]
    sig: Option<SigKind>,
    #[arg(long, value_parser = parse_hex)]
    key: Option<u128>,
    #[arg(long, value_parser = hex32)]
    poly: Option<u32>,
    #[arg(long, value_parser = hex64)]
    iv: Option<u64>,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    watchdog: Option<u64>,
    #[arg(long)]
    predictor: bool,
    #[arg(long)]
    max_cycles: Option<u64>,
    /// Interrupt request as CYCLE:IRQ; repeatable.
    #[arg(long, value_parser = irq)]
    irq: Vec<IrqRequest>,
}

fn hex32(s: &str) -> std::result::Result<u32, String> {
    let v = parse_hex(s).map_err(|e| e.to_string())?;
    u32::try_from(v).map_err(|_| format!("`{s}` does not fit 32 bits"))
}

fn hex64(s: &str) -> std::result::Result<u64, String> {
    let v = parse_hex(s).map_err(|e| e.to_string())?;
    u64::try_from(v).map_err(|_| format!("`{s}` does not fit 64 bits"))
}

fn irq(s: &str) -> std::result::Result<IrqRequest, String> {
    let (c, n) = s.split_once(':').ok_or("expected CYCLE:IRQ")?;
    Ok(IrqRequest { cycle: c.parse().map_err(|_| "bad cycle")?, irq: n.parse().map_err(|_| "bad irq")? })
}

impl SigArgs {
    fn apply(&self, mut b: BuildConfig) -> BuildConfig {
        if let Some(k) = self.sig {
            b.signature.function = k;
        }
        if let Some(k) = self.key {
            b.signature.prince_key = k;
        }
        if let Some(p) = self.poly {
            b.signature.crc_poly = p;
        }
        if let Some(iv) = self.iv {
            b.boot_iv = iv;
        }
        b
    }
}

impl RunArgs {
    fn apply(&self, mut r: RunConfig) -> RunConfig {
        if let Some(w) = self.watchdog {
            r.watchdog = w;
        }
        r.predictor |= self.predictor;
        if let Some(m) = self.max_cycles {
            r.max_cycles = m;
        }
        r.irqs.extend(self.irq.iter().copied());
        r
    }
}

fn main() -> ExitCode {
    // usage errors are tool errors; clap's own status 2 would read as a finding
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::FAILURE } else { ExitCode::SUCCESS };
        }
    };
    match dispatch(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cli: Cli) -> Result<u8> {
    let file = match &cli.config {
        Some(p) => ConfigFile::load(p)?,
        None => ConfigFile::default(),
    };
    match cli.cmd {
        Cmd::Build { sources, corpus, out, sig } => {
            let srcs = match corpus {
                Some(name) => {
                    vec![corpus::source(&name).ok_or_else(|| format!("no bundled program `{name}`"))?.to_string()]
                }
                None if sources.is_empty() => return Err("no sources given".into()),
                None => sources.iter().map(read).collect::<Result<_>>()?,
            };
            let built = build_sources(&srcs, &sig.apply(file.build))?;
            save(&built, &out)?;
            let r = &built.report;
            println!(
                "{}: {} blocks, {} signatures, {} patch values, {} nops, {} -> {} bytes",
                out.display(),
                r.blocks,
                r.signatures,
                r.patch_values,
                r.nops,
                r.baseline_bytes,
                r.instrumented_bytes
            );
            Ok(0)
        }
        Cmd::Run { image, run, trace, baseline } => {
            let dir = if baseline { image.join("baseline") } else { image };
            let img = ProgramImage::load(&dir)?;
            let cfg = run.apply(file.run);
            let r = Simulator::new(&img, &cfg)?.with_trace(trace.is_some()).run();
            if let Some(p) = trace {
                let mut text = r.trace.join("\n");
                text.push('\n');
                std::fs::write(&p, text).map_err(|e| format!("{}: {e}", p.display()))?;
            }
            let summary = json!({
                "outcome": r.outcome,
                "cycles": r.cycles,
                "verifications": r.verifications,
                "stalls": r.stalls,
                "final_sig": format!("0x{:016x}", r.final_sig),
                "regs": r.regs,
            });
            println!("{}", serde_json::to_string_pretty(&summary)?);
            match r.outcome {
                Outcome::Halted => Ok(0),
                Outcome::Trap(_) | Outcome::Timeout => Ok(FINDINGS),
                Outcome::Error { error } => Err(error.into()),
            }
        }
        Cmd::Campaign { image, campaign, out, jobs, seed, samples, budget, watchdog, predictor } => {
            let img = ProgramImage::load(&image)?;
            let mut c = Campaign::load(&campaign)?;
            if let Some(s) = seed {
                c.seed = s;
            }
            c.samples = samples.or(c.samples);
            c.budget = budget.or(c.budget);
            c.watchdog = watchdog.or(c.watchdog);
            c.predictor |= predictor;
            let r = c.run(&img, jobs)?;
            r.write_reports(&out)?;
            let mut line = format!("{} faults", r.records.len());
            for class in FaultClass::ALL {
                let _ = write!(line, ", {} {}", class.name(), r.counts.get(class));
            }
            if r.incomplete {
                line.push_str(" (budget reached)");
            }
            println!("{line}");
            if r.region_violations > 0 {
                println!("{} outcomes outside their region's mechanism", r.region_violations);
            }
            Ok(if r.has_findings() { FINDINGS } else { 0 })
        }
        Cmd::Crcsearch { poly, blocks, weight } => {
            let poly =
                poly.unwrap_or(if cli.config.is_some() { file.build.signature.crc_poly } else { DEFAULT_CRC_POLY });
            match crc_collision_search(poly, blocks, weight)? {
                CollisionSearch::Found { weight, positions } => {
                    println!("0x{poly:08x}: undetected pattern of weight {weight} within {blocks} states at bits {positions:?}");
                    Ok(FINDINGS)
                }
                CollisionSearch::NoneUpTo(w) => {
                    println!("0x{poly:08x}: no undetected pattern of weight <= {w} within {blocks} states");
                    Ok(0)
                }
            }
        }
        Cmd::Report { images, sig, json } => {
            let rows = if images.is_empty() {
                let build = sig.apply(file.build);
                corpus::PROGRAMS
                    .iter()
                    .map(|(name, src)| {
                        let b = build_sources(&[src.to_string()], &build)?;
                        let rep = measure_overheads(&b.baseline, &b.image, &corpus::run_config(name));
                        Ok((name.to_string(), rep))
                    })
                    .collect::<Result<Vec<_>>>()?
            } else {
                images
                    .iter()
                    .map(|dir| {
                        let img = ProgramImage::load(dir)?;
                        let base = ProgramImage::load(&dir.join("baseline"))?;
                        let name =
                            dir.file_name().map_or_else(|| dir.display().to_string(), |n| n.to_string_lossy().into());
                        Ok((name, measure_overheads(&base, &img, &file.run)))
                    })
                    .collect::<Result<Vec<(String, OverheadReport)>>>()?
            };
            print!("{}\n{}", overhead_table(&rows), dispatcher_table(&rows));
            if let Some(p) = json {
                let doc: serde_json::Map<_, _> =
                    rows.iter().map(|(n, r)| Ok((n.clone(), serde_json::to_value(r)?))).collect::<Result<_>>()?;
                std::fs::write(&p, serde_json::to_string_pretty(&doc)?).map_err(|e| format!("{}: {e}", p.display()))?;
            }
            Ok(0)
        }
    }
}

fn read(p: &PathBuf) -> Result<String> {
    std::fs::read_to_string(p).map_err(|e| format!("{}: {e}", p.display()).into())
}

/// Image in `out`, the unsigned link in `out/baseline`, the pass report next to them.
fn save(b: &BuildOutput, out: &Path) -> Result<()> {
    b.image.save(out)?;
    b.baseline.save(&out.join("baseline"))?;
    let p = out.join("instrumentation.json");
    std::fs::write(&p, serde_json::to_string_pretty(&b.report)?).map_err(|e| format!("{}: {e}", p.display()))?;
    Ok(())
}
