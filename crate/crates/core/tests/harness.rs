mod common;

use blindfare::ledger::Books;
use blindfare::sim::bench::{self, Phase};
use blindfare::sim::matrix::{boundaries, crash_matrix, protocol_of};
use blindfare::sim::review::review;
use blindfare::sim::{run, Action, FaultPlan, Group, Options, Scenario};
use common::{assert_clean, lines};

const DEMO: &str = include_str!("../scenarios/demo.scn");
const MATRIX: &str = include_str!("../scenarios/matrix.scn");

fn demo() -> Scenario {
    Scenario::parse(DEMO).unwrap()
}

#[test]
fn demo_runs_clean_and_matches_the_golden_audit() {
    let out = run(&demo(), Options::default());
    assert_clean(&out);
    assert!(out.unused_faults.is_empty());
    let r = review(&out.trace.text()).unwrap();
    assert_eq!(r.to_string(), include_str!("golden/demo.audit"));
    let rebuilt = Books::from_trace(&out.trace.text()).unwrap().reconcile(true);
    assert!(rebuilt.is_clean(), "{rebuilt}");
    assert_eq!(rebuilt.totals, out.report.totals);
}

#[test]
fn same_seed_same_trace() {
    let a = run(&demo(), Options::default());
    let b = run(&demo(), Options::default());
    assert_eq!(a.trace.digest(), b.trace.digest());
    let c = run(&demo(), Options { seed: 2, ..Options::default() });
    assert_ne!(a.trace.digest(), c.trace.digest());
}

#[test]
fn operator_crash_after_persisting_the_intermediate_step_still_yields_one_ticket() {
    let s = Scenario::parse(MATRIX).unwrap();
    let out = run(
        &s,
        Options {
            faults: FaultPlan::single("buy/ticket", 3, Action::CrashAfterPersist),
            ..Options::default()
        },
    );
    assert_clean(&out);
    assert!(!lines(&out, &["FAULT crash_after_persist"]).is_empty());
    assert_eq!(lines(&out, &["TICKET user=alice"]).len(), 2, "bought once, reissued once");
}

#[test]
fn every_boundary_of_both_protocols_is_reached() {
    let b = boundaries(&Scenario::parse(MATRIX).unwrap(), 1);
    for flow in ["buy/receipt", "buy/ticket", "reissue/ticket", "checkin", "checkout", "checkout/credit", "lazy/credit", "dispute/credit"] {
        assert!(b.iter().any(|(f, _)| f == flow), "{flow} never crossed");
    }
    assert!(b.iter().filter(|(f, _)| f == "buy/ticket").count() == 5);
}

#[test]
fn ticket_purchase_cells_all_pass() {
    let m = crash_matrix(&Scenario::parse(MATRIX).unwrap(), 1, false);
    let buy: Vec<_> = m.cells.iter().filter(|c| c.flow == "buy/ticket").collect();
    assert_eq!(buy.len(), 25);
    assert!(buy.iter().all(|c| c.passed()));
    let checkout: Vec<_> = m.cells.iter().filter(|c| c.flow == "checkout" || c.flow == "checkout/credit").collect();
    assert!(checkout.len() >= 25);
    assert!(checkout.iter().all(|c| c.passed()), "{:?}", checkout.iter().find(|c| !c.passed()));
    assert!(m.cells.iter().all(|c| protocol_of(&c.flow) == "tickets" || protocol_of(&c.flow) == "payg"));
}

#[test]
fn send_before_persist_mutant_fails_known_cells() {
    let m = crash_matrix(&Scenario::parse(MATRIX).unwrap(), 1, true);
    let failed: Vec<(String, u8)> = m.failures().map(|c| (c.flow.clone(), c.step)).collect();
    for (f, step) in [("buy/ticket", 1), ("buy/ticket", 3), ("checkout/credit", 3), ("topup/receipt", 3)] {
        assert!(failed.contains(&(f.to_string(), step)), "{f} {step} not caught: {failed:?}");
    }
    assert!(m.failures().all(|c| c.action == Action::CrashBeforeSend));
}

#[test]
fn mutant_without_faults_is_indistinguishable() {
    let s = Scenario::parse(MATRIX).unwrap();
    let out = run(&s, Options { mutant: true, ..Options::default() });
    assert_clean(&out);
}

#[test]
fn event_budget_bounds_every_run() {
    let out = run(&demo(), Options { budget: 50, ..Options::default() });
    assert!(!out.is_clean());
    assert!(out.violations.iter().any(|v| v.contains("QUIESCENCE")), "{:?}", out.violations);
}

#[test]
fn lazy_checkout_is_faster_at_the_gate() {
    let t = bench::run(Group::Sim1024, 9, 3);
    let median = |p: Phase| t.iter().find(|x| x.phase == p).unwrap().median();
    assert!(median(Phase::CheckoutLazy) < median(Phase::Checkout));
    assert!(t.iter().all(|x| !x.samples.is_empty()));
}
