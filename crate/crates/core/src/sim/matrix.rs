//! Crash matrix: one run per (message boundary, fault action).

use std::collections::BTreeSet;

use super::faults::{Action, FaultPlan};
use super::scenario::Scenario;
use super::trace::body;
use super::world::{run, Options};
use crate::proto::flow;

/// Which protocol a flow belongs to.
pub fn protocol_of(flow_name: &str) -> &'static str {
    match flow_name {
        flow::BUY_RECEIPT | flow::BUY_TICKET | flow::REISSUE_TICKET => "tickets",
        _ => "payg",
    }
}

#[derive(Clone, Debug)]
pub struct Cell {
    pub flow: String,
    pub step: u8,
    pub action: Action,
    pub fired: bool,
    pub violations: Vec<String>,
}

impl Cell {
    pub fn passed(&self) -> bool {
        self.fired && self.violations.is_empty()
    }
}

#[derive(Clone, Debug, Default)]
pub struct Matrix {
    pub cells: Vec<Cell>,
}

impl Matrix {
    pub fn failures(&self) -> impl Iterator<Item = &Cell> {
        self.cells.iter().filter(|c| !c.passed())
    }

    pub fn count(&self, protocol: &str) -> usize {
        self.cells.iter().filter(|c| protocol_of(&c.flow) == protocol).count()
    }

    pub fn is_clean(&self) -> bool {
        self.failures().next().is_none()
    }
}

/// Every (flow, step) boundary a fault-free run crosses.
pub fn boundaries(scenario: &Scenario, seed: u64) -> Vec<(String, u8)> {
    let out = run(
        scenario,
        Options {
            seed,
            ..Options::default()
        },
    );
    let mut seen = BTreeSet::new();
    for line in out.trace.lines() {
        let Some(rest) = body(line).strip_prefix("SEND ") else { continue };
        let words: Vec<&str> = rest.split_whitespace().collect();
        if let [_, "->", _, f, msg, ..] = words.as_slice() {
            if let Some(step) = msg.split_once('#').and_then(|(_, s)| s.parse::<u8>().ok()) {
                seen.insert((f.to_string(), step));
            }
        }
    }
    seen.into_iter().collect()
}

/// Run every boundary against every action. Users are adversarial: they
/// accept any fresh announcement, so a double issuance shows up as a
/// session with two signatures.
pub fn crash_matrix(scenario: &Scenario, seed: u64, mutant: bool) -> Matrix {
    let delay = 3 * scenario.config.retry_ticks;
    let mut cells = Vec::new();
    for (f, step) in boundaries(scenario, seed) {
        for action in Action::all(delay) {
            let out = run(
                scenario,
                Options {
                    seed,
                    faults: FaultPlan::single(&f, step, action),
                    mutant,
                    adversarial: true,
                    ..Options::default()
                },
            );
            cells.push(Cell {
                fired: out.unused_faults.is_empty(),
                flow: f.clone(),
                step,
                action,
                violations: out.violations,
            });
        }
    }
    Matrix { cells }
}
