//! Fault plans: at most one action per message boundary.
//!
//! A boundary is a flow label and a step index, e.g. `buy/ticket 3` is the
//! intermediate signature of a ticket issuance. The action applies to the
//! first message ever sent at that boundary.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use crate::proto::flow;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Action {
    Drop,
    Duplicate,
    Delay(u64),
    /// The sender dies after computing the message but before persisting.
    CrashBeforeSend,
    /// The sender persists, then dies before the message leaves.
    CrashAfterPersist,
}

impl Action {
    /// One of each kind; `delay` uses the given tick count.
    pub fn all(delay: u64) -> [Action; 5] {
        [
            Action::Drop,
            Action::Duplicate,
            Action::Delay(delay),
            Action::CrashBeforeSend,
            Action::CrashAfterPersist,
        ]
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Action::Drop => f.write_str("drop"),
            Action::Duplicate => f.write_str("duplicate"),
            Action::Delay(k) => write!(f, "delay({k})"),
            Action::CrashBeforeSend => f.write_str("crash_before_send"),
            Action::CrashAfterPersist => f.write_str("crash_after_persist"),
        }
    }
}

impl FromStr for Action {
    type Err = String;

    fn from_str(s: &str) -> Result<Action, String> {
        Ok(match s {
            "drop" => Action::Drop,
            "duplicate" => Action::Duplicate,
            "crash_before_send" => Action::CrashBeforeSend,
            "crash_after_persist" => Action::CrashAfterPersist,
            _ => {
                let k = s
                    .strip_prefix("delay(")
                    .and_then(|r| r.strip_suffix(')'))
                    .ok_or_else(|| format!("unknown fault action {s}"))?;
                Action::Delay(k.parse().map_err(|_| format!("bad delay {k}"))?)
            }
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Boundary {
    pub flow: String,
    pub step: u8,
}

impl fmt::Display for Boundary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}", self.flow, self.step)
    }
}

/// Number of message boundaries of a flow.
pub fn steps_of(flow_name: &str) -> Option<u8> {
    match flow_name {
        flow::CHECKIN => Some(3),
        flow::CHECKOUT => Some(2),
        f if flow::ISSUANCE.contains(&f) => Some(5),
        _ => None,
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct FaultPlan {
    faults: BTreeMap<Boundary, Action>,
    used: BTreeSet<Boundary>,
}

impl FaultPlan {
    pub fn none() -> FaultPlan {
        FaultPlan::default()
    }

    pub fn single(flow_name: &str, step: u8, action: Action) -> FaultPlan {
        let mut p = FaultPlan::default();
        p.add(flow_name, step, action).expect("a single boundary");
        p
    }

    pub fn add(&mut self, flow_name: &str, step: u8, action: Action) -> Result<(), String> {
        let steps = steps_of(flow_name).ok_or_else(|| format!("unknown flow {flow_name}"))?;
        if step >= steps {
            return Err(format!("{flow_name} has steps 0..{}", steps - 1));
        }
        let b = Boundary {
            flow: flow_name.to_string(),
            step,
        };
        if self.faults.insert(b.clone(), action).is_some() {
            return Err(format!("boundary {b} listed twice"));
        }
        Ok(())
    }

    pub fn is_empty(&self) -> bool {
        self.faults.is_empty()
    }

    /// The action for the first message at a boundary; `None` afterwards.
    pub fn take(&mut self, flow_name: &str, step: u8) -> Option<Action> {
        let b = Boundary {
            flow: flow_name.to_string(),
            step,
        };
        let action = *self.faults.get(&b)?;
        self.used.insert(b).then_some(action)
    }

    /// Boundaries never reached during a run.
    pub fn unused(&self) -> Vec<&Boundary> {
        self.faults.keys().filter(|b| !self.used.contains(*b)).collect()
    }

    /// Parse `flow step action` entries, one per line or separated by `;`.
    pub fn parse(text: &str) -> Result<FaultPlan, String> {
        let mut plan = FaultPlan::default();
        for (i, entry) in text.split(['\n', ';']).enumerate() {
            let words: Vec<&str> = entry.split('#').next().unwrap_or("").split_whitespace().collect();
            match words.as_slice() {
                [] => {}
                [f, step, action] => {
                    let step = step.parse().map_err(|_| format!("entry {}: bad step {step}", i + 1))?;
                    plan.add(f, step, action.parse()?).map_err(|e| format!("entry {}: {e}", i + 1))?;
                }
                _ => return Err(format!("entry {}: expected `FLOW STEP ACTION`", i + 1)),
            }
        }
        Ok(plan)
    }
}

impl fmt::Display for FaultPlan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.faults.iter().map(|(b, a)| format!("{b} {a}")).collect();
        f.write_str(&parts.join("; "))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plan_round_trips_and_fires_once() {
        let mut p = FaultPlan::parse("buy/ticket 3 crash_after_persist; checkin 1 delay(40)\n# note\n").unwrap();
        assert_eq!(p.to_string(), "buy/ticket 3 crash_after_persist; checkin 1 delay(40)");
        assert_eq!(FaultPlan::parse(&p.to_string()).unwrap().to_string(), p.to_string());
        assert_eq!(p.take("checkin", 1), Some(Action::Delay(40)));
        assert_eq!(p.take("checkin", 1), None);
        assert_eq!(p.unused().len(), 1);
    }

    #[test]
    fn rejects_bad_plans() {
        assert!(FaultPlan::parse("buy/ticket 5 drop").is_err());
        assert!(FaultPlan::parse("checkout 2 drop").is_err());
        assert!(FaultPlan::parse("teleport 0 drop").is_err());
        assert!(FaultPlan::parse("buy/ticket 1 drop; buy/ticket 1 duplicate").is_err());
        assert!(FaultPlan::parse("buy/ticket 1 explode").is_err());
    }
}
