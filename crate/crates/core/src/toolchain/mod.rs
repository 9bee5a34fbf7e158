//! Offline toolchain: CFG construction, the instrumentation passes and
//! reference-signature generation.
//!
//! Pass order: forwarding elimination, dispatcher generation, patch placement,
//! verification placement, signature generation. Every pass works on the
//! symbolic [`Module`]; the image-level wrappers lift and relink.

pub mod cfg;
pub mod dispatch;
pub mod forwarding;
pub mod patches;
pub mod siggen;
pub mod verify;

use std::collections::BTreeMap;

use serde::Serialize;
use thiserror::Error;

use crate::config::BuildConfig;
use crate::isa::{layout, lift, link, parse_module, AsmError, FunctionKind, Item, Module, Origin, ProgramImage};

pub use cfg::{build_cfg_module, BasicBlock, Cfg, CfgError, CfgFunction, EdgeKind, Exit};
pub use dispatch::{equivalence_classes, generate_dispatchers, DispatchError, EquivalenceClass};
pub use forwarding::{eliminate_forwarding_deps, forwarding_conflicts};
pub use patches::{place_patches, plan_patches, IvSource, PatchPlan, ReturnGroupPlan};
pub use siggen::{block_sigmas, compute_signatures, fnv1a, generate_signatures, sign_module, SignError, Signatures};
pub use verify::place_verifications;

#[derive(Debug, Error)]
pub enum BuildError {
    #[error("assemble: {0}")]
    Assemble(#[from] AsmError),
    #[error("{stage}: {message}")]
    Pass { stage: &'static str, message: String },
}

fn stage<T, E: std::fmt::Display>(stage: &'static str, r: Result<T, E>) -> Result<T, BuildError> {
    r.map_err(|e| BuildError::Pass { stage, message: e.to_string() })
}

/// Builds the CFG of an image.
pub fn build_cfg(img: &ProgramImage) -> Result<Cfg, CfgError> {
    build_cfg_module(&lift(img)?)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct FunctionReport {
    pub name: String,
    pub kind: FunctionKind,
    pub secured: bool,
    pub blocks: usize,
    /// Verification instructions (one reference word each).
    pub signatures: usize,
    pub patch_loads: usize,
    pub patch_bytes: usize,
    pub nops: usize,
    pub text_bytes: usize,
    pub baseline_text_bytes: usize,
}

/// Added bytes by cause; sums to the growth of `.text` + `.patches`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct ByteBreakdown {
    pub signatures: usize,
    pub patches: usize,
    pub nops: usize,
    pub dispatchers: usize,
    /// Always zero: out-of-range branches are reported as link errors instead of being relaxed.
    pub branch_relaxation: usize,
}

impl ByteBreakdown {
    pub fn total(&self) -> usize {
        self.signatures + self.patches + self.nops + self.dispatchers + self.branch_relaxation
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct InstrumentationReport {
    pub config: BuildConfig,
    pub functions: Vec<FunctionReport>,
    pub classes: Vec<EquivalenceClass>,
    pub blocks: usize,
    pub signatures: usize,
    pub patch_values: usize,
    pub nops: usize,
    pub loop_breaks: usize,
    pub baseline_bytes: usize,
    pub instrumented_bytes: usize,
    pub breakdown: ByteBreakdown,
}

pub struct BuildOutput {
    pub image: ProgramImage,
    pub baseline: ProgramImage,
    pub module: Module,
    pub cfg: Cfg,
    pub plan: PatchPlan,
    pub report: InstrumentationReport,
}

/// Runs every pass over `m` and signs the result.
pub fn instrument(mut m: Module, build: &BuildConfig) -> Result<BuildOutput, BuildError> {
    let baseline = stage("link", link(&m))?;
    stage("forwarding", eliminate_forwarding_deps(&mut m))?;
    stage("dispatchers", generate_dispatchers(&mut m))?;
    stage("patches", place_patches(&mut m, build.signature.function))?;
    place_verifications(&mut m);
    let plan = stage("signatures", sign_module(&mut m, build))?;
    let image = stage("link", link(&m))?;
    let cfg = stage("cfg", build_cfg_module(&m))?;
    let report = report(&m, &cfg, &plan, &baseline, &image, build);
    Ok(BuildOutput { image, baseline, module: m, cfg, plan, report })
}

/// Assembles and instruments one source text.
pub fn build_source(src: &str, build: &BuildConfig) -> Result<BuildOutput, BuildError> {
    instrument(parse_module(src)?, build)
}

/// Assembles and instruments several source files as one program.
pub fn build_sources(srcs: &[String], build: &BuildConfig) -> Result<BuildOutput, BuildError> {
    build_source(&srcs.join("\n.text\n"), build)
}

fn report(
    m: &Module,
    cfg: &Cfg,
    plan: &PatchPlan,
    baseline: &ProgramImage,
    image: &ProgramImage,
    build: &BuildConfig,
) -> InstrumentationReport {
    let lay = layout(m).expect("module linked above");
    let words = build.signature.function.patch_words();
    let base_sizes: BTreeMap<&str, usize> =
        baseline.manifest.functions.iter().map(|f| (f.name.as_str(), (f.end - f.start) as usize)).collect();
    let mut breakdown = ByteBreakdown::default();
    let mut functions = Vec::new();
    for (fi, f) in m.functions.iter().enumerate() {
        let mut r = FunctionReport {
            name: f.name.clone(),
            kind: f.kind,
            secured: f.secured,
            blocks: cfg.functions[fi].blocks.len(),
            text_bytes: (lay.func_range[fi].1 - lay.func_range[fi].0) as usize,
            baseline_text_bytes: base_sizes.get(f.name.as_str()).copied().unwrap_or(0),
            ..FunctionReport::default()
        };
        let mut verify_jumps = 0;
        for i in f.items.iter().filter_map(|i| if let Item::Insn(x) = i { Some(x) } else { None }) {
            if i.op.is_checked() {
                r.signatures += 1;
            }
            match i.origin {
                Origin::Ldp => r.patch_loads += 1,
                Origin::Nop => r.nops += 1,
                Origin::Verify => verify_jumps += 1,
                Origin::User => {}
            }
        }
        let slots = cfg.functions[fi].blocks.iter().filter(|b| plan.slots.contains_key(b)).count();
        r.patch_bytes = 4 * words * slots;
        if f.kind == FunctionKind::Dispatcher {
            breakdown.dispatchers += r.text_bytes + r.patch_bytes;
        } else {
            breakdown.signatures += 4 * r.signatures + 4 * verify_jumps;
            breakdown.patches += 4 * r.patch_loads + r.patch_bytes;
            breakdown.nops += 4 * r.nops;
        }
        functions.push(r);
    }
    let nops = functions.iter().map(|f| f.nops).sum();
    let signatures = functions.iter().map(|f| f.signatures).sum();
    InstrumentationReport {
        config: *build,
        classes: equivalence_classes(m),
        blocks: cfg.blocks.len(),
        signatures,
        patch_values: plan.slots.len(),
        nops,
        loop_breaks: plan.loop_breaks.len(),
        baseline_bytes: baseline.code_size(),
        instrumented_bytes: image.code_size(),
        breakdown,
        functions,
    }
}
