use std::path::Path;
use std::process::{Command, Output};

fn cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_blindfare")).args(args).output().expect("binary runs")
}

fn scenario(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios").join(name).display().to_string()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn run_writes_a_trace_that_audits_and_reconciles_clean() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("demo.trace");
    let o = cli(&["run", &scenario("demo.scn"), "--trace", trace.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    assert!(stdout(&o).contains("DIGEST "));
    let a = cli(&["audit", trace.to_str().unwrap()]);
    assert_eq!(a.status.code(), Some(0));
    assert!(stdout(&a).ends_with("VERDICT clean\n"));
    let r = cli(&["reconcile", trace.to_str().unwrap()]);
    assert_eq!(r.status.code(), Some(0), "{}", stdout(&r));
}

#[test]
fn dropped_payout_line_fails_reconciliation() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("demo.trace");
    cli(&["run", &scenario("demo.scn"), "--trace", trace.to_str().unwrap()]);
    let text = std::fs::read_to_string(&trace).unwrap();
    let cut: String = text
        .lines()
        .filter(|l| !l.contains("LEDGER payout pto=tram"))
        .map(|l| format!("{l}\n"))
        .collect();
    assert_ne!(cut.len(), text.len());
    std::fs::write(&trace, cut).unwrap();
    let r = cli(&["reconcile", trace.to_str().unwrap()]);
    assert_eq!(r.status.code(), Some(1), "{}", stdout(&r));
}

#[test]
fn mutant_crash_is_an_invariant_violation() {
    let o = cli(&["run", &scenario("matrix.scn"), "--mutant", "--adversarial", "--faults", "buy/ticket 3 crash_before_send"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("VIOLATION "));
    let honest = cli(&["run", &scenario("matrix.scn"), "--adversarial", "--faults", "buy/ticket 3 crash_before_send"]);
    assert_eq!(honest.status.code(), Some(0), "{}", stdout(&honest));
}

#[test]
fn crash_matrix_reports_cells_per_protocol() {
    let o = cli(&["crash-matrix", &scenario("matrix.scn")]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("CELLS total=225 tickets=75 payg=150 failed=0"), "{}", stdout(&o));
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(cli(&[]).status.code(), Some(2));
    assert_eq!(cli(&["fly"]).status.code(), Some(2));
    assert_eq!(cli(&["run", "/nonexistent.scn"]).status.code(), Some(2));
    assert_eq!(cli(&["run", &scenario("demo.scn"), "--faults", "teleport 0 drop"]).status.code(), Some(2));
    assert_eq!(cli(&["bench", "warp"]).status.code(), Some(2));
    assert_eq!(cli(&["bench", "inspect", "--group", "huge"]).status.code(), Some(2));
}

#[test]
fn bench_prints_the_requested_phase() {
    let o = cli(&["bench", "checkin", "--group", "tiny", "--trips", "3"]);
    assert_eq!(o.status.code(), Some(0));
    let out = stdout(&o);
    assert_eq!(out.lines().count(), 1);
    assert!(out.starts_with("checkin"), "{out}");
}
