mod common;

use common::{build, expected_results, replay_signatures, KINDS};
use pipeguard_core::config::RunConfig;
use pipeguard_core::corpus;
use pipeguard_core::sim::{run_image, Event, Outcome, Simulator, TrapCause};

#[test]
fn countdown_loop_runs_clean() {
    for kind in KINDS {
        let out = build("loop", kind);
        let r = Simulator::new(&out.image, &RunConfig::default()).unwrap().record_events(true).run();
        assert_eq!(r.outcome, Outcome::Halted, "{kind:?}");
        assert_eq!(r.regs[5], 0);
        // sixteen back-edge checks plus the halting chk.jal
        assert_eq!(r.verifications, 17);
        assert_eq!(replay_signatures(&out.image, &r), Ok(17));
    }
}

#[test]
fn reruns_are_bit_identical() {
    let out = build("interrupt", KINDS[1]);
    let cfg = corpus::run_config("interrupt");
    let run = || Simulator::new(&out.image, &cfg).unwrap().record_events(true).with_trace(true).run();
    let (a, b) = (run(), run());
    assert_eq!(a, b);
    assert_eq!(a.trace.len() as u64, a.cycles);
    assert!(a.trace.iter().all(|l| l.contains(" sig=")));
    expected_results("interrupt", &out.image, &a).unwrap();
}

#[test]
fn predictor_rolls_back_and_agrees() {
    let out = build("sort", KINDS[0]);
    let plain = run_image(&out.image, &RunConfig::default());
    let cfg = RunConfig { predictor: true, ..RunConfig::default() };
    let r = Simulator::new(&out.image, &cfg).unwrap().record_events(true).run();
    assert!(r.halted());
    assert!(r.events.iter().any(|e| matches!(e, Event::Rollback { .. })));
    assert!(r.same_state(&plain));
    assert_eq!(r.final_sig, plain.final_sig);
    replay_signatures(&out.image, &r).unwrap();
}

#[test]
fn watchdog_bounds_unverified_stretches() {
    // `mul` is unsecured and loops without a verification
    let out = build("calls", KINDS[0]);
    let tight = run_image(&out.image, &RunConfig { watchdog: 4, ..RunConfig::default() });
    assert_eq!(tight.trap().map(|t| t.cause), Some(TrapCause::WatchdogExpiry));
    let loose = run_image(&out.image, &RunConfig { watchdog: 10_000, ..RunConfig::default() });
    assert!(loose.halted());
    expected_results("calls", &out.image, &loose).unwrap();
}

#[test]
fn unsigned_images_run_too() {
    for (name, _) in corpus::PROGRAMS {
        let out = build(name, KINDS[0]);
        let base = run_image(&out.baseline, &corpus::run_config(name));
        assert!(base.halted(), "{name}: {:?}", base.outcome);
        assert_eq!(base.verifications, 0);
        expected_results(name, &out.baseline, &base).unwrap();
    }
}

#[test]
fn cycle_cap_reports_timeout() {
    let out = build("loop", KINDS[0]);
    let r = run_image(&out.image, &RunConfig { max_cycles: 20, ..RunConfig::default() });
    assert_eq!(r.outcome, Outcome::Timeout);
    assert_eq!(r.cycles, 20);
}
