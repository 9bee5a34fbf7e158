use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn pipeguard(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pipeguard")).args(args).output().expect("spawn pipeguard")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn scratch(name: &str) -> PathBuf {
    let d = std::env::temp_dir().join(format!("pipeguard-cli-{}-{name}", std::process::id()));
    let _ = std::fs::remove_dir_all(&d);
    std::fs::create_dir_all(&d).unwrap();
    d
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn built(dir: &Path, program: &str, extra: &[&str]) -> PathBuf {
    let out = dir.join(program);
    let mut args = vec!["build", "--corpus", program, "-o", s(&out)];
    args.extend_from_slice(extra);
    let o = pipeguard(&args);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    out
}

fn bundled(name: &str) -> String {
    format!("{}/../../campaigns/{name}", env!("CARGO_MANIFEST_DIR"))
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect();
    v.sort();
    v
}

#[test]
fn build_is_deterministic_and_cbc_doubles_patches() {
    let d = scratch("build");
    let a = built(&d.join("a"), "multiexit", &[]);
    let b = built(&d.join("b"), "multiexit", &[]);
    assert_eq!(files(&a), files(&b));
    assert!(a.join("baseline/text.bin").exists());
    let c = built(&d.join("c"), "multiexit", &["--sig", "cbcmac", "--key", "0x0123456789abcdeffedcba9876543210"]);
    let len = |p: &Path| std::fs::metadata(p.join("patches.bin")).unwrap().len();
    assert_eq!(len(&c), 2 * len(&a));
    let manifest = std::fs::read_to_string(c.join("manifest.json")).unwrap();
    assert!(manifest.contains("0123456789abcdeffedcba9876543210"));
    std::fs::remove_dir_all(d).unwrap();
}

#[test]
fn run_writes_one_trace_line_per_cycle() {
    let d = scratch("trace");
    let img = built(&d, "interrupt", &[]);
    let trace = d.join("trace.txt");
    let o = pipeguard(&["run", s(&img), "--irq", "20:0", "--trace", s(&trace)]);
    assert_eq!(code(&o), 0);
    let summary: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let lines = std::fs::read_to_string(&trace).unwrap();
    assert_eq!(lines.lines().count() as u64, summary["cycles"].as_u64().unwrap());
    assert!(lines.lines().enumerate().all(|(i, l)| l.trim_start().starts_with(&format!("{i} "))));
    std::fs::remove_dir_all(d).unwrap();
}

#[test]
fn exit_codes() {
    let d = scratch("exit");
    let img = built(&d, "loop", &[]);
    assert_eq!(code(&pipeguard(&["run", s(&img)])), 0);
    assert_eq!(code(&pipeguard(&["run", s(&img), "--baseline"])), 0);
    let trapped = pipeguard(&["run", s(&img), "--watchdog", "3"]);
    assert_eq!(code(&trapped), 2);
    assert!(String::from_utf8_lossy(&trapped.stdout).contains("watchdog_expiry"));
    assert_eq!(code(&pipeguard(&["crcsearch", "--blocks", "1", "--weight", "4"])), 0);
    assert_eq!(code(&pipeguard(&["crcsearch", "--blocks", "4", "--weight", "6"])), 2);
    assert_eq!(code(&pipeguard(&["build", "--corpus", "loop", "-o", s(&d.join("x")), "--sig", "md5"])), 1);
    assert_eq!(code(&pipeguard(&["frobnicate"])), 1);
    let bad = d.join("bad.s");
    std::fs::write(&bad, ".func main\n .icall (i32) -> void\n jalr ra, 0(t6)\n halt\n.func f(i32)\n ret\n").unwrap();
    let o = pipeguard(&["build", s(&bad), "-o", s(&d.join("bad"))]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("dispatchers"));
    std::fs::remove_file(img.join("patches.bin")).unwrap();
    assert_eq!(code(&pipeguard(&["run", s(&img)])), 1);
    std::fs::remove_dir_all(d).unwrap();
}

#[test]
fn config_file_feeds_build_and_run() {
    let d = scratch("config");
    let cfg = d.join("cfg.toml");
    std::fs::write(&cfg, "[build.signature]\nfunction = \"cbcmac\"\nprince_key = \"0x1\"\ncrc_poly = \"0x04c11db7\"\n\n[run]\nwatchdog = 3\n").unwrap();
    let img = built(&d, "loop", &["--config", s(&cfg)]);
    assert!(std::fs::read_to_string(img.join("manifest.json")).unwrap().contains("cbcmac"));
    assert_eq!(code(&pipeguard(&["--config", s(&cfg), "run", s(&img)])), 2);
    assert_eq!(code(&pipeguard(&["--config", s(&cfg), "run", s(&img), "--watchdog", "0"])), 0);
    std::fs::remove_dir_all(d).unwrap();
}

#[test]
fn empty_campaign_gives_an_empty_report() {
    let d = scratch("empty");
    let img = built(&d, "loop", &[]);
    let camp = d.join("none.camp");
    std::fs::write(&camp, "targets = []\n").unwrap();
    let o = pipeguard(&["campaign", s(&img), s(&camp), "-o", s(&d.join("rep"))]);
    assert_eq!(code(&o), 0);
    let csv = std::fs::read_to_string(d.join("rep/report.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1);
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("rep/report.json")).unwrap()).unwrap();
    assert_eq!(json["records"].as_array().unwrap().len(), 0);
    std::fs::remove_dir_all(d).unwrap();
}

#[test]
fn worker_count_does_not_change_reports() {
    let d = scratch("jobs");
    let img = built(&d, "verifypin", &[]);
    let camp = bundled("verifypin-multi.camp");
    let mut reports = Vec::new();
    for jobs in ["1", "4"] {
        let rep = d.join(format!("rep{jobs}"));
        let o = pipeguard(&["campaign", s(&img), &camp, "-o", s(&rep), "--jobs", jobs, "--samples", "400"]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        reports.push(files(&rep));
    }
    assert_eq!(reports[0], reports[1]);
    std::fs::remove_dir_all(d).unwrap();
}

#[test]
fn bundled_sweep_finds_no_silent_corruption() {
    let d = scratch("sweep");
    let img = built(&d, "verifypin", &[]);
    let o = pipeguard(&["campaign", s(&img), &bundled("verifypin.camp"), "-o", s(&d.join("rep")), "--budget", "3000"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    let out = String::from_utf8_lossy(&o.stdout);
    assert!(out.starts_with("3000 faults") && out.contains("silent_corrupting 0") && out.contains("budget reached"));
    std::fs::remove_dir_all(d).unwrap();
}

#[test]
fn report_covers_every_sample() {
    let d = scratch("report");
    let img = built(&d, "indirect", &[]);
    let json = d.join("r.json");
    let o = pipeguard(&["report", s(&img), "--json", s(&json)]);
    assert_eq!(code(&o), 0);
    assert!(String::from_utf8_lossy(&o.stdout).lines().any(|l| l.starts_with("indirect")));
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&json).unwrap()).unwrap();
    assert!(v["indirect"]["dispatcher_share"].as_f64().unwrap() > 0.5);
    let all = pipeguard(&["report"]);
    assert_eq!(String::from_utf8_lossy(&all.stdout).lines().filter(|l| l.starts_with("sort ")).count(), 2);
    std::fs::remove_dir_all(d).unwrap();
}
