//! Single-trip tickets: buy, inspect on two legs, a misquoted fare caught
//! at inspection, and settlement with the clearinghouse.

use blindfare::sim::{run, Options, Scenario};

const SCRIPT: &str = "group tiny
net station A pto metro
net station B pto metro
net station C pto metro
net link A B 8000 10 20
net link B C 8000 10 20
fares unit 150 ceiling 600
actor pto metro
actor user alice 10.0.0.1
actor user bob 10.0.0.2
actor inspector ivan metro
alice buy A B C
bob buy A B C quote 150
clock advance 15
ivan inspect alice A B
ivan inspect bob A B
clock advance 15
ivan inspect alice B C
clock advance 10
metro settle
psp transfer
";

fn main() {
    let out = run(&Scenario::parse(SCRIPT).unwrap(), Options::default());
    for l in out.trace.lines() {
        if ["LEDGER", "TICKET", "INSPECT", "FINE", "SETTLE"].iter().any(|k| l.contains(k)) {
            println!("{l}");
        }
    }
    println!("{}", out.report.to_string().lines().next().unwrap());
    println!("violations: {}", out.violations.len());
}
