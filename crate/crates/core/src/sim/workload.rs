//! Seeded random workloads over a five-station line shared by two
//! operators: ticket purchases and pay-as-you-go rides, mixed.

use std::fmt::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

const STATIONS: [&str; 5] = ["S0", "S1", "S2", "S3", "S4"];
const HEADER: &str = "group tiny
net station S0 pto metro
net station S1 pto metro
net station S2 pto metro
net station S3 pto tram
net station S4 pto tram
net link S0 S1 6000 10 20
net link S1 S2 6000 10 20
net link S2 S3 6000 10 20
net link S3 S4 6000 10 20
fares unit 150 ceiling 600 quantum 10
config min_credit 300
actor pto metro
actor pto tram
";

fn route(from: usize, to: usize) -> Vec<&'static str> {
    if from < to {
        STATIONS[from..=to].to_vec()
    } else {
        let mut r = STATIONS[to..=from].to_vec();
        r.reverse();
        r
    }
}

/// A scenario with exactly `trips` journeys spread over `users` travellers.
/// Every round each traveller either buys a ticket or rides with credit;
/// riders sometimes top up at check-out or claim their credit lazily.
pub fn random_trips(users: usize, trips: usize, seed: u64) -> String {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut s = String::from(HEADER);
    let names: Vec<String> = (0..users).map(|i| format!("u{i:03}")).collect();
    for (i, n) in names.iter().enumerate() {
        writeln!(s, "actor user {n} 10.1.{}.{}", i / 250, i % 250).unwrap();
    }
    for n in &names {
        writeln!(s, "{n} open 10000").unwrap();
    }
    s.push_str("clock advance 40\n");
    let mut left = trips;
    let mut rides = vec![0usize; users];
    while left > 0 {
        let hops = rng.gen_range(1..=3usize);
        let mut riders = Vec::new();
        let mut buys = Vec::new();
        for (i, n) in names.iter().enumerate() {
            if left == 0 {
                break;
            }
            left -= 1;
            let from = rng.gen_range(0..STATIONS.len() - hops);
            let (a, b) = if rng.gen_bool(0.5) { (from, from + hops) } else { (from + hops, from) };
            if rng.gen_bool(0.5) {
                buys.push(format!("{n} buy {}", route(a, b).join(" ")));
            } else {
                rides[i] += 1;
                let topup = rides[i].is_multiple_of(8);
                let lazy = rng.gen_bool(0.3);
                riders.push((n.clone(), a, b, topup, lazy));
            }
        }
        for b in &buys {
            writeln!(s, "{b}").unwrap();
        }
        for (n, _, _, topup, _) in &riders {
            if *topup {
                writeln!(s, "{n} topup 2500").unwrap();
            }
        }
        s.push_str("clock advance 20\n");
        for (n, a, ..) in &riders {
            writeln!(s, "{n} checkin {}", STATIONS[*a]).unwrap();
        }
        writeln!(s, "clock advance {}", 15 * hops).unwrap();
        for (n, _, b, topup, lazy) in &riders {
            let mut line = format!("{n} checkout {}", STATIONS[*b]);
            if *topup {
                line.push_str(" topup");
            }
            if *lazy {
                line.push_str(" lazy");
            }
            writeln!(s, "{line}").unwrap();
        }
        s.push_str("clock advance 10\n");
        for (n, .., lazy) in &riders {
            if *lazy {
                writeln!(s, "{n} lazy-finalize").unwrap();
            }
        }
        s.push_str("clock advance 30\n");
    }
    s.push_str("metro settle\ntram settle\npsp transfer\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::Scenario;

    #[test]
    fn workload_parses_and_counts_trips() {
        let text = random_trips(7, 30, 3);
        let s = Scenario::parse(&text).unwrap();
        assert_eq!(s.users().count(), 7);
        let trips = text.lines().filter(|l| l.contains(" buy ") || l.contains(" checkout ")).count();
        assert_eq!(trips, 30);
        assert_eq!(random_trips(7, 30, 3), text);
    }
}
