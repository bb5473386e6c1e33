use std::collections::BTreeMap;

use blindfare::sim::matrix::boundaries;
use blindfare::sim::trace::{body, field};
use blindfare::sim::workload::random_trips;
use blindfare::sim::{run, Action, FaultPlan, Options, Scenario};
use proptest::prelude::*;

fn action() -> impl Strategy<Value = Action> {
    prop_oneof![
        Just(Action::Drop),
        Just(Action::Duplicate),
        (1u64..120).prop_map(Action::Delay),
        Just(Action::CrashBeforeSend),
        Just(Action::CrashAfterPersist),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    /// Several faults at once, anywhere: every receipt and credit token is
    /// paid out at most once and the books still balance.
    #[test]
    fn random_fault_plans_pay_each_token_once(
        seed in 1u64..1000,
        picks in prop::collection::vec((any::<prop::sample::Index>(), action()), 1..6),
    ) {
        let s = Scenario::parse(&random_trips(6, 30, seed)).unwrap();
        let all = boundaries(&s, seed);
        let mut plan = FaultPlan::none();
        for (i, a) in picks {
            let (f, step) = &all[i.index(all.len())];
            let _ = plan.add(f, *step, a);
        }
        let out = run(&s, Options { seed, faults: plan.clone(), ..Options::default() });
        prop_assert!(out.violations.is_empty(), "plan {plan}: {:?}", out.violations);
        prop_assert!(out.report.is_clean(), "plan {plan}: {:?}", out.report.discrepancies);

        let mut paid: BTreeMap<String, usize> = BTreeMap::new();
        for line in out.trace.lines().iter().map(|l| body(l)) {
            if let Some(items) = line.strip_prefix("LEDGER payout ").and_then(|l| field(l, "items")) {
                for item in items.split(',') {
                    *paid.entry(item.split(':').next().unwrap().to_string()).or_default() += 1;
                }
            }
        }
        prop_assert!(paid.values().all(|&n| n == 1), "plan {plan}: {paid:?}");
    }
}
