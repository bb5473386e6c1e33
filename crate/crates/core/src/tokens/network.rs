//! Station graph, travel-time bounds and the banded fare table.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap};

use super::{Cents, TokenError};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Link {
    pub a: String,
    pub b: String,
    pub metres: u64,
    pub min_ticks: u64,
    pub max_ticks: u64,
}

#[derive(Clone, Debug, Default)]
pub struct Network {
    /// station id -> operating PTO, if declared
    stations: BTreeMap<String, Option<String>>,
    links: Vec<Link>,
}

#[derive(Clone, Copy)]
enum Weight {
    Metres,
    Min,
    Max,
}

impl Network {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_station(&mut self, id: &str, operator: Option<&str>) -> Result<(), TokenError> {
        if id.is_empty() || id.contains(char::is_whitespace) {
            return Err(TokenError::Network(format!("bad station id {id:?}")));
        }
        if self.stations.insert(id.to_string(), operator.map(str::to_string)).is_some() {
            return Err(TokenError::Network(format!("station {id} declared twice")));
        }
        Ok(())
    }

    pub fn add_link(&mut self, a: &str, b: &str, metres: u64, min_ticks: u64, max_ticks: u64) -> Result<(), TokenError> {
        for s in [a, b] {
            if !self.stations.contains_key(s) {
                return Err(TokenError::UnknownStation(s.to_string()));
            }
        }
        if a == b || metres == 0 || min_ticks == 0 || max_ticks < min_ticks {
            return Err(TokenError::Network(format!("bad link {a}-{b}")));
        }
        if self.links.iter().any(|l| (l.a == a && l.b == b) || (l.a == b && l.b == a)) {
            return Err(TokenError::Network(format!("link {a}-{b} declared twice")));
        }
        self.links.push(Link {
            a: a.to_string(),
            b: b.to_string(),
            metres,
            min_ticks,
            max_ticks,
        });
        Ok(())
    }

    pub fn stations(&self) -> impl Iterator<Item = &str> {
        self.stations.keys().map(String::as_str)
    }

    pub fn links(&self) -> &[Link] {
        &self.links
    }

    pub fn contains(&self, id: &str) -> bool {
        self.stations.contains_key(id)
    }

    pub fn operator(&self, id: &str) -> Option<&str> {
        self.stations.get(id).and_then(|o| o.as_deref())
    }

    fn shortest(&self, from: &str, to: &str, weight: Weight) -> Result<u64, TokenError> {
        for s in [from, to] {
            if !self.contains(s) {
                return Err(TokenError::UnknownStation(s.to_string()));
            }
        }
        let mut best: BTreeMap<&str, u64> = BTreeMap::new();
        let mut heap = BinaryHeap::new();
        best.insert(from, 0);
        heap.push(Reverse((0u64, from)));
        while let Some(Reverse((d, at))) = heap.pop() {
            if at == to {
                return Ok(d);
            }
            if best.get(at).is_some_and(|&b| b < d) {
                continue;
            }
            for link in &self.links {
                let next = if link.a == at {
                    link.b.as_str()
                } else if link.b == at {
                    link.a.as_str()
                } else {
                    continue;
                };
                let w = match weight {
                    Weight::Metres => link.metres,
                    Weight::Min => link.min_ticks,
                    Weight::Max => link.max_ticks,
                };
                let nd = d + w;
                if best.get(next).is_none_or(|&b| nd < b) {
                    best.insert(next, nd);
                    heap.push(Reverse((nd, next)));
                }
            }
        }
        Err(TokenError::Unreachable(from.to_string(), to.to_string()))
    }

    pub fn distance_m(&self, from: &str, to: &str) -> Result<u64, TokenError> {
        self.shortest(from, to, Weight::Metres)
    }

    /// Fastest possible travel time between two stations.
    pub fn min_travel(&self, from: &str, to: &str) -> Result<u64, TokenError> {
        self.shortest(from, to, Weight::Min)
    }

    /// Slowest scheduled travel time along the best slow path.
    pub fn max_travel(&self, from: &str, to: &str) -> Result<u64, TokenError> {
        self.shortest(from, to, Weight::Max)
    }

    /// Total metres along a route, summing shortest hops between stops.
    pub fn route_metres(&self, route: &[String]) -> Result<u64, TokenError> {
        if route.len() < 2 {
            return Err(TokenError::InvalidTrip("route needs at least two stations".into()));
        }
        let mut total = 0;
        for hop in route.windows(2) {
            if hop[0] == hop[1] {
                return Err(TokenError::InvalidTrip(format!("station {} repeated", hop[0])));
            }
            total += self.distance_m(&hop[0], &hop[1])?;
        }
        Ok(total)
    }
}

/// Check-out and inspection plausibility: elapsed time must lie within
/// `[min_travel, slack * max_travel]`.
pub fn plausible(network: &Network, from: &str, to: &str, elapsed: u64, slack: u64) -> Result<bool, TokenError> {
    if from == to {
        return Ok(true);
    }
    let lo = network.min_travel(from, to)?;
    let hi = network.max_travel(from, to)?.saturating_mul(slack);
    Ok(elapsed >= lo && elapsed <= hi)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FareTable {
    /// price per started 10 km band
    pub unit: Cents,
    pub ceiling: Cents,
    pub quantum: Cents,
}

pub const BAND_METRES: u64 = 10_000;

impl FareTable {
    pub fn new(unit: Cents, ceiling: Cents, quantum: Cents) -> Result<Self, TokenError> {
        if quantum <= 0 || unit <= 0 || unit % quantum != 0 || ceiling % quantum != 0 || ceiling < unit {
            return Err(TokenError::Fares(format!(
                "unit {unit} and ceiling {ceiling} must be positive multiples of quantum {quantum}"
            )));
        }
        Ok(FareTable { unit, ceiling, quantum })
    }

    pub fn fare_for_metres(&self, metres: u64) -> Cents {
        let bands = metres.div_ceil(BAND_METRES) as i64;
        (self.unit.saturating_mul(bands)).min(self.ceiling)
    }

    pub fn fare_for(&self, network: &Network, route: &[String]) -> Result<Cents, TokenError> {
        Ok(self.fare_for_metres(network.route_metres(route)?))
    }

    pub fn fare_between(&self, network: &Network, from: &str, to: &str) -> Result<Cents, TokenError> {
        if from == to {
            return Err(TokenError::InvalidTrip(format!("station {from} repeated")));
        }
        Ok(self.fare_for_metres(network.distance_m(from, to)?))
    }

    /// A fare some trip could have: a band multiple or the ceiling.
    pub fn is_valid_fare(&self, fare: Cents) -> bool {
        fare > 0 && fare % self.quantum == 0 && fare <= self.ceiling && (fare % self.unit == 0 || fare == self.ceiling)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Census {
    pub counts: BTreeMap<Cents, usize>,
}

impl Census {
    pub fn min_count(&self) -> Option<usize> {
        self.counts.values().copied().min()
    }

    /// One line per fare class whose trip count is under `threshold`.
    pub fn warnings(&self, threshold: usize) -> Vec<String> {
        self.counts
            .iter()
            .filter(|(_, &n)| n < threshold)
            .map(|(fare, n)| format!("fare {fare} has only {n} distinct trips (threshold {threshold})"))
            .collect()
    }
}

/// Number of distinct ordered origin/destination pairs per fare.
pub fn fare_anonymity_census(table: &FareTable, network: &Network) -> Census {
    let mut counts = BTreeMap::new();
    let stations: Vec<&str> = network.stations().collect();
    for a in &stations {
        for b in &stations {
            if a == b {
                continue;
            }
            if let Ok(fare) = table.fare_between(network, a, b) {
                *counts.entry(fare).or_insert(0) += 1;
            }
        }
    }
    Census { counts }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn line(n: usize, km: u64) -> Network {
        let mut net = Network::new();
        for i in 0..n {
            net.add_station(&format!("S{i}"), None).unwrap();
        }
        for i in 1..n {
            net.add_link(&format!("S{}", i - 1), &format!("S{i}"), km * 1000, 60, 120).unwrap();
        }
        net
    }

    fn route(stops: &[&str]) -> Vec<String> {
        stops.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn twenty_five_km_costs_three_bands() {
        let mut net = Network::new();
        net.add_station("A", None).unwrap();
        net.add_station("B", None).unwrap();
        net.add_link("A", "B", 25_000, 60, 120).unwrap();
        let fares = FareTable::new(120, 1200, 10).unwrap();
        // ceil(25 / 10) = 3 bands
        assert_eq!(fares.fare_for(&net, &route(&["A", "B"])).unwrap(), 3 * 120);
    }

    #[test]
    fn long_trips_pay_exactly_the_ceiling() {
        let net = line(30, 7);
        let fares = FareTable::new(120, 1200, 10).unwrap();
        for end in 15..30 {
            let fare = fares.fare_for(&net, &route(&["S0", &format!("S{end}")])).unwrap();
            assert_eq!(fare, 1200);
        }
    }

    #[test]
    fn degenerate_and_unknown_trips_are_errors() {
        let net = line(3, 5);
        let fares = FareTable::new(120, 1200, 10).unwrap();
        assert!(matches!(
            fares.fare_for(&net, &route(&["S1", "S1"])),
            Err(TokenError::InvalidTrip(_))
        ));
        assert!(matches!(
            fares.fare_for(&net, &route(&["S1", "X"])),
            Err(TokenError::UnknownStation(_))
        ));
        assert!(fares.fare_for(&net, &route(&["S1"])).is_err());
    }

    #[test]
    fn travel_bounds_follow_shortest_paths() {
        let mut net = line(3, 5);
        net.add_link("S0", "S2", 20_000, 200, 300).unwrap();
        assert_eq!(net.distance_m("S0", "S2").unwrap(), 10_000);
        assert_eq!(net.min_travel("S0", "S2").unwrap(), 120);
        assert_eq!(net.max_travel("S0", "S2").unwrap(), 240);
        assert!(plausible(&net, "S0", "S2", 120, 2).unwrap());
        assert!(plausible(&net, "S0", "S2", 480, 2).unwrap());
        assert!(!plausible(&net, "S0", "S2", 119, 2).unwrap());
        assert!(!plausible(&net, "S0", "S2", 481, 2).unwrap());
    }

    #[test]
    fn two_station_census_has_one_class_of_two() {
        let net = line(2, 5);
        let fares = FareTable::new(120, 1200, 10).unwrap();
        let census = fare_anonymity_census(&fares, &net);
        assert_eq!(census.counts, BTreeMap::from([(120, 2)]));
        assert_eq!(census.warnings(10).len(), 1);
        assert!(census.warnings(2).is_empty());
    }

    #[test]
    fn grid_census_matches_brute_force() {
        // 3x3 grid with 4 km links: manhattan distance is the shortest path
        let mut net = Network::new();
        for x in 0..3 {
            for y in 0..3 {
                net.add_station(&format!("G{x}{y}"), None).unwrap();
            }
        }
        for x in 0..3 {
            for y in 0..3 {
                if x < 2 {
                    net.add_link(&format!("G{x}{y}"), &format!("G{}{y}", x + 1), 4000, 60, 90).unwrap();
                }
                if y < 2 {
                    net.add_link(&format!("G{x}{y}"), &format!("G{x}{}", y + 1), 4000, 60, 90).unwrap();
                }
            }
        }
        let fares = FareTable::new(100, 300, 10).unwrap();
        let mut expected: BTreeMap<Cents, usize> = BTreeMap::new();
        for a in 0..9i64 {
            for b in 0..9i64 {
                if a == b {
                    continue;
                }
                let km = 4 * ((a / 3 - b / 3).abs() + (a % 3 - b % 3).abs());
                let fare = (100 * ((km + 9) / 10)).min(300);
                *expected.entry(fare).or_default() += 1;
            }
        }
        assert_eq!(fare_anonymity_census(&fares, &net).counts, expected);
    }

    #[test]
    fn fare_table_rejects_off_quantum_prices() {
        assert!(FareTable::new(125, 1200, 10).is_err());
        assert!(FareTable::new(120, 100, 10).is_err());
        let t = FareTable::new(120, 1000, 10).unwrap();
        assert!(t.is_valid_fare(360) && t.is_valid_fare(1000));
        assert!(!t.is_valid_fare(350) && !t.is_valid_fare(1080) && !t.is_valid_fare(0));
    }

    proptest! {
        #[test]
        fn fares_are_quantised_and_capped(metres in 1u64..1_000_000, unit in 1i64..50, bands in 1i64..20) {
            let t = FareTable::new(unit * 10, unit * 10 * bands, 10).unwrap();
            let f = t.fare_for_metres(metres);
            prop_assert!(f % 10 == 0 && f <= t.ceiling && f > 0);
            prop_assert!(t.is_valid_fare(f));
            prop_assert!(t.fare_for_metres(metres + BAND_METRES) >= f);
        }
    }
}
