//! Rebuild the books from a trace, then drop one payout line and watch the
//! reconciliation flag it.

use blindfare::ledger::Books;
use blindfare::sim::{run, Options, Scenario};

fn main() {
    let out = run(&Scenario::parse(include_str!("../scenarios/demo.scn")).unwrap(), Options::default());
    let text = out.trace.text();
    print!("{}", Books::from_trace(&text).unwrap().reconcile(true));

    let tampered: String = text
        .lines()
        .filter(|l| !l.contains("LEDGER payout pto=tram"))
        .map(|l| format!("{l}\n"))
        .collect();
    print!("{}", Books::from_trace(&tampered).unwrap().reconcile(true));
}
