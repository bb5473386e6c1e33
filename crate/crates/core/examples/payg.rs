//! Pay as you go: open credit, ride with a top-up at check-out, ride with
//! lazy finalization, and claw back an overcharge through a fare dispute.

use blindfare::sim::{run, Options, Scenario};

const SCRIPT: &str = "group tiny
net station A pto metro
net station B pto metro
net station C pto tram
net link A B 8000 10 20
net link B C 5000 5 15
fares unit 150 ceiling 600
config overcharge 40
actor pto metro
actor pto tram
actor user bob 10.0.0.2
actor inspector ivan metro
bob open 2500
bob topup 1000
clock advance 20
bob checkin A
clock advance 8
ivan inspect bob A B
clock advance 6
bob checkout B topup
clock advance 20
bob checkin B
clock advance 10
bob checkout C lazy
clock advance 10
bob lazy-finalize
clock advance 30
bob dispute
clock advance 30
metro settle
tram settle
psp transfer
";

fn main() {
    let out = run(&Scenario::parse(SCRIPT).unwrap(), Options::default());
    for l in out.trace.lines() {
        if ["CREDIT", "INSPECT", "FINAL", "LEDGER clawback", "SETTLE"].iter().any(|k| l.contains(k)) {
            println!("{l}");
        }
    }
    println!("{}", out.report.to_string().lines().next().unwrap());
    println!("violations: {}", out.violations.len());
}
