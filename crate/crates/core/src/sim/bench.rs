//! Wall-clock latency of the gate exchanges and inspection, measured on
//! the deployment itself so device, gate and clearinghouse work all count.

use std::fmt;
use std::time::{Duration, Instant};

use super::scenario::{Group, Scenario, Verb};
use super::world::{Options, World};
use crate::tokens::Leg;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Checkin,
    /// Check-out including the blind issuance of the next credit token.
    Checkout,
    /// Check-out record only; the credit is claimed later.
    CheckoutLazy,
    Inspect,
}

impl Phase {
    pub const ALL: [Phase; 4] = [Phase::Checkin, Phase::Checkout, Phase::CheckoutLazy, Phase::Inspect];

    pub fn name(self) -> &'static str {
        match self {
            Phase::Checkin => "checkin",
            Phase::Checkout => "checkout",
            Phase::CheckoutLazy => "checkout_lazy",
            Phase::Inspect => "inspect",
        }
    }

    pub fn parse(s: &str) -> Option<Phase> {
        Phase::ALL.into_iter().find(|p| p.name() == s)
    }
}

#[derive(Clone, Debug)]
pub struct Timing {
    pub phase: Phase,
    pub samples: Vec<Duration>,
}

impl Timing {
    fn sorted(&self) -> Vec<Duration> {
        let mut s = self.samples.clone();
        s.sort();
        s
    }

    pub fn median(&self) -> Duration {
        let s = self.sorted();
        s.get(s.len() / 2).copied().unwrap_or_default()
    }

    pub fn p99(&self) -> Duration {
        let s = self.sorted();
        let i = (s.len() * 99).div_ceil(100).saturating_sub(1);
        s.get(i).copied().unwrap_or_default()
    }
}

impl fmt::Display for Timing {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:<14} n={:<4} median={:>9.3}ms p99={:>9.3}ms",
            self.phase.name(),
            self.samples.len(),
            self.median().as_secs_f64() * 1e3,
            self.p99().as_secs_f64() * 1e3
        )
    }
}

const SETUP: &str = "
net station A pto metro
net station B pto metro
net link A B 8000 10 60
fares unit 150 ceiling 600
actor pto metro
actor user rider 10.0.0.9
actor inspector ivan metro
rider open 10000
";

fn timed(f: impl FnOnce()) -> Duration {
    let t = Instant::now();
    f();
    t.elapsed()
}

/// Ride back and forth `trips` times, timing each phase. Every trip
/// checks in, is inspected once and checks out, alternating eager and
/// lazy check-outs.
pub fn run(group: Group, trips: usize, seed: u64) -> Vec<Timing> {
    let mut s = Scenario::parse(SETUP).expect("bench scenario");
    s.group = group;
    let steps = std::mem::take(&mut s.steps);
    let mut w = World::new(
        &s,
        Options {
            seed,
            ..Options::default()
        },
    );
    for st in &steps {
        if let super::scenario::Command::Act { actor, verb } = &st.command {
            w.act(st.line, actor, verb);
        }
    }
    w.advance(20);
    let mut out: Vec<Timing> = Phase::ALL
        .into_iter()
        .map(|phase| Timing {
            phase,
            samples: Vec::new(),
        })
        .collect();
    let stations = ["A", "B"];
    for i in 0..trips {
        let (from, to) = (stations[i % 2], stations[(i + 1) % 2]);
        let lazy = i % 2 == 1;
        let d = timed(|| {
            w.act(0, "rider", &Verb::Checkin(from.into()));
            w.advance(4);
        });
        out[0].samples.push(d);
        w.advance(10);
        let leg = Leg::new(from, to);
        let d = timed(|| {
            w.act(
                0,
                "ivan",
                &Verb::Inspect {
                    user: "rider".into(),
                    leg,
                    online: true,
                },
            )
        });
        out[3].samples.push(d);
        w.advance(5);
        let d = timed(|| {
            w.act(
                0,
                "rider",
                &Verb::Checkout {
                    station: to.into(),
                    topup: false,
                    lazy,
                },
            );
            w.advance(if lazy { 3 } else { 8 });
        });
        out[if lazy { 2 } else { 1 }].samples.push(d);
        if lazy {
            w.act(0, "rider", &Verb::LazyFinalize);
        }
        w.advance(20);
    }
    out
}
