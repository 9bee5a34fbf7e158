mod common;

use common::build;
use pipeguard_core::config::RunConfig;
use pipeguard_core::harness::{
    inject, measure_overheads, run_golden, sweep, Campaign, FaultClass, FaultSpace, FaultSpec, FaultTarget,
    HarnessError, Sampling, SweepOptions, TargetSet,
};
use pipeguard_core::isa::Opcode;
use pipeguard_core::sigfun::SigKind;
use pipeguard_core::sim::{Copy, CsiSignal, FaultMode, Stage};

fn golden(name: &str) -> (pipeguard_core::isa::ProgramImage, pipeguard_core::harness::Golden) {
    let img = build(name, SigKind::Crc32).image;
    let g = run_golden(&img, &RunConfig { watchdog: 64, ..RunConfig::default() }).unwrap();
    (img, g)
}

#[test]
fn golden_runs() {
    let (img, g) = golden("loop");
    assert_eq!(g.result.regs[5], 0);
    let bne = img.instructions().find(|i| i.1 == Opcode::ChkBne).unwrap().0;
    assert!(g.occurrence(bne, 15).is_some() && g.occurrence(bne, 16).is_none());
    let again = run_golden(&img, &g.cfg).unwrap();
    assert_eq!(again.result, g.result);
    assert_eq!(again.result.events, g.result.events);

    let unsigned = build("loop", SigKind::Crc32).baseline;
    assert_eq!(run_golden(&unsigned, &RunConfig::default()).unwrap_err(), HarnessError::Unsigned);
    let short = RunConfig { max_cycles: 10, ..RunConfig::default() };
    assert!(matches!(run_golden(&img, &short), Err(HarnessError::GoldenNotClean(_))));
}

#[test]
fn duplicated_write_back_flip_is_caught_in_the_same_cycle() {
    let (img, g) = golden("verifypin");
    let target = FaultTarget::PostDecodeSignal { signal: CsiSignal::WbCtrl, stage: Stage::Ex, copy: Copy::Duplicate };
    let r = inject(&img, &g, &FaultSpec::flip(target, 10, 1)).unwrap();
    assert_eq!(r.class, FaultClass::DetectedCsi);
    assert_eq!(r.latency, Some(0));
}

#[test]
fn monitor_state_and_reference_faults_are_detected() {
    let (img, g) = golden("diamond");
    let r = inject(&img, &g, &FaultSpec::flip(FaultTarget::SigRegister, 3, 1 << 7)).unwrap();
    assert_eq!(r.class, FaultClass::DetectedCacfi);
    for addr in img.reference_slots() {
        let r = inject(&img, &g, &FaultSpec::flip(FaultTarget::ReferenceWord { addr }, 0, 1 << 31)).unwrap();
        assert!(matches!(r.class, FaultClass::DetectedCacfi | FaultClass::SilentBenign), "{addr:x}: {r:?}");
    }
}

#[test]
fn malformed_specs_are_rejected() {
    let (img, g) = golden("loop");
    let bad = [
        FaultSpec::flip(FaultTarget::PipelineStateBit, 0, 0),
        FaultSpec::flip(FaultTarget::PipelineStateBit, 0, 0x1FF),
        FaultSpec::flip(FaultTarget::ImemWord { addr: 0x10 }, 0, 1),
        FaultSpec::flip(FaultTarget::ImemWord { addr: img.text_base + 2 }, 0, 1),
        FaultSpec::flip(FaultTarget::ReferenceWord { addr: img.text_base }, 0, 1),
        FaultSpec::flip(
            FaultTarget::PostDecodeSignal { signal: CsiSignal::Lsu, stage: Stage::Wb, copy: Copy::Original },
            0,
            4,
        ),
        FaultSpec::flip(FaultTarget::SigRegister, 0, 1 << 40),
    ];
    for spec in bad {
        assert!(matches!(inject(&img, &g, &spec), Err(HarnessError::InvalidSpec { .. })), "{spec:?}");
    }
}

fn small_space(img: &pipeguard_core::isa::ProgramImage, g: &pipeguard_core::harness::Golden) -> FaultSpace {
    FaultSpace::new(img, &[TargetSet::Sigma, TargetSet::Csi], (0, g.result.cycles), (1, 1), FaultMode::Flip)
}

#[test]
fn sweeps_are_deterministic_across_worker_counts() {
    let (img, g) = golden("diamond");
    let space = small_space(&img, &g);
    let one = sweep(&img, &g, &space, &SweepOptions { jobs: 1, ..SweepOptions::default() }).unwrap();
    let four = sweep(&img, &g, &space, &SweepOptions { jobs: 4, ..SweepOptions::default() }).unwrap();
    assert_eq!(serde_json::to_string(&one).unwrap(), serde_json::to_string(&four).unwrap());
    assert_eq!(one.to_csv().unwrap(), four.to_csv().unwrap());
    assert_eq!(one.counts.total(), one.records.len() as u64);
    assert_eq!(one.records.len() as u128, space.len());
}

#[test]
fn subsets_reproduce_their_results() {
    let (img, g) = golden("diamond");
    let all = sweep(&img, &g, &small_space(&img, &g), &SweepOptions::default()).unwrap();
    let sigma = FaultSpace::new(&img, &[TargetSet::Sigma], (0, g.result.cycles), (1, 1), FaultMode::Flip);
    let part = sweep(&img, &g, &sigma, &SweepOptions::default()).unwrap();
    assert_eq!(part.records[..], all.records[..part.records.len()]);
    assert!(part.counts.detected() <= all.counts.detected());
}

#[test]
fn sampling_is_seeded_and_budget_marks_partial_reports() {
    let (img, g) = golden("diamond");
    let space = small_space(&img, &g);
    let opts = |seed| SweepOptions { sampling: Sampling::Random { count: 50, seed }, ..SweepOptions::default() };
    let a = sweep(&img, &g, &space, &opts(1)).unwrap();
    let b = sweep(&img, &g, &space, &opts(1)).unwrap();
    let c = sweep(&img, &g, &space, &opts(2)).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.records.len(), 50);
    assert_ne!(a.records, c.records);
    assert!(a.records.windows(2).all(|w| w[0].index < w[1].index));

    let cut = sweep(&img, &g, &space, &SweepOptions { budget: Some(10), ..SweepOptions::default() }).unwrap();
    assert!(cut.incomplete);
    assert_eq!(cut.records.len(), 10);
}

#[test]
fn empty_target_set_gives_an_empty_outcome() {
    let (img, _) = golden("loop");
    let r = Campaign::default().run(&img, 1).unwrap();
    assert!(r.records.is_empty() && !r.incomplete && r.space_size == 0);
    assert_eq!(r.counts.total(), 0);
}

#[test]
fn campaign_files_parse_and_write_reports() {
    let text = r#"
        targets = ["references", "sig_register"]
        weights = [1, 2]
        seed = 9
        samples = 40
        watchdog = 48

        [[shots]]
        faults = [
            { target = { kind = "pipeline_state_bit" }, cycle = 5, mask = 1, mode = "flip" },
            { target = { kind = "pipeline_state_bit" }, cycle = 6, mask = 2, mode = "flip" },
        ]
    "#;
    let c = Campaign::parse(text).unwrap();
    assert_eq!(c.shots[0].faults.len(), 2);
    let img = build("verifypin", SigKind::Crc32).image;
    let r = c.run(&img, 2).unwrap();
    assert_eq!(r.records.len(), 41);
    assert_eq!(r.watchdog, 48);
    assert_eq!(r.counts.silent_corrupting, 0);
    assert_eq!(r.region_violations, 0);

    let dir = std::env::temp_dir().join(format!("pipeguard-camp-{}", std::process::id()));
    r.write_reports(&dir).unwrap();
    let csv = std::fs::read_to_string(dir.join("report.csv")).unwrap();
    assert_eq!(csv.lines().count(), 42);
    assert!(csv.starts_with("index,target,cycle,mask,mode,class,latency"));
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("report.json")).unwrap()).unwrap();
    assert_eq!(json["sampling"]["seed"], 9);
    std::fs::remove_dir_all(&dir).unwrap();

    assert!(Campaign::parse("targets = [\"nowhere\"]").is_err());
    assert!(Campaign::parse("bogus = 1").is_err());
}

#[test]
fn overheads_of_a_program_against_itself() {
    let out = build("calls", SigKind::Crc32);
    let r = measure_overheads(&out.baseline, &out.baseline, &RunConfig::default());
    assert_eq!(r.code_size.ratio, 1.0);
    assert_eq!(r.cycles.ratio, 1.0);
    assert_eq!(r.breakdown.total(), 0);
    let r = measure_overheads(&out.baseline, &out.image, &RunConfig::default());
    assert!(r.code_size.ratio > 1.0 && r.cycles.ratio > 1.0);
    let mul = r.functions.iter().find(|f| f.name == "mul").unwrap();
    assert!(!mul.secured && mul.signatures == 0);
}
