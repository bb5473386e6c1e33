#![allow(dead_code)]

use blindfare::sim::{Options, Outcome, Scenario, World};

/// Metro runs A-B-C, the tram C-D. Fares: one hop 150, two hops 300.
pub const NET: &str = "group tiny
net station A pto metro
net station B pto metro
net station C pto metro
net station D pto tram
net link A B 8000 10 20
net link B C 8000 10 20
net link C D 5000 5 15
fares unit 150 ceiling 600 quantum 10
actor pto metro
actor pto tram
actor user alice 10.0.0.1
actor user bob 10.0.0.2
actor inspector ivan metro
actor inspector tina tram
";

pub fn scenario(script: &str) -> Scenario {
    Scenario::parse(&format!("{NET}{script}")).expect("fixture scenario parses")
}

/// Play a script against the fixture network and stop before end-of-run
/// resolution, so the state can be examined mid-flight.
pub fn world(script: &str) -> World {
    let s = scenario(script);
    let mut w = World::new(&s, Options::default());
    w.play(&s.steps);
    w
}

pub fn run(script: &str) -> Outcome {
    blindfare::sim::run(&scenario(script), Options::default())
}

/// Trace line bodies containing every needle.
pub fn lines<'a>(out: &'a Outcome, needles: &[&str]) -> Vec<&'a str> {
    out.trace
        .lines()
        .iter()
        .map(|l| blindfare::sim::trace::body(l))
        .filter(|l| needles.iter().all(|n| l.contains(n)))
        .collect()
}

pub fn assert_clean(out: &Outcome) {
    assert!(out.violations.is_empty(), "violations: {:?}", out.violations);
    assert!(out.report.is_clean(), "discrepancies: {:?}", out.report.discrepancies);
}
