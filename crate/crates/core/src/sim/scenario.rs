//! Line-oriented scenario scripts.
//!
//! ```text
//! group tiny
//! net station A pto metro
//! net link A B 8000 10 20
//! fares unit 150 ceiling 600 quantum 10
//! config min_credit 300
//! actor pto metro
//! actor user alice 10.0.0.1
//! actor inspector ivan metro
//! alice buy A B
//! alice buy A B quote 150
//! clock advance 50
//! ivan inspect alice A B
//! ```

use std::collections::BTreeMap;
use std::sync::Arc;

use thiserror::Error;

use crate::crypto::GroupParams;
use crate::proto::Config;
use crate::tokens::{Cents, FareTable, Leg, Network, Service};

#[derive(Debug, Error, PartialEq, Eq)]
#[error("line {line}: {message}")]
pub struct ParseError {
    pub line: usize,
    pub message: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Group {
    Tiny,
    Sim1024,
    Production,
}

impl Group {
    pub fn params(self) -> Arc<GroupParams> {
        match self {
            Group::Tiny => GroupParams::tiny(),
            Group::Sim1024 => GroupParams::sim_1024(),
            Group::Production => GroupParams::production(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Verb {
    Buy(Vec<String>),
    /// Buy with a self-computed fare.
    BuyQuoted(Vec<String>, Cents),
    Pay(Service, Cents),
    Open(Cents),
    Cancel,
    CancelReturned(usize),
    Return(usize),
    Reissue(usize, Vec<String>),
    Checkin(String),
    Checkout { station: String, topup: bool, lazy: bool },
    LazyFinalize,
    Dispute,
    Reinstall,
    Inspect { user: String, leg: Leg, online: bool },
    Settle,
    Transfer,
    Crash,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Command {
    Advance(u64),
    Act { actor: String, verb: Verb },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Step {
    pub line: usize,
    pub command: Command,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Role {
    User { addr: String },
    Pto,
    Inspector { pto: String },
}

#[derive(Clone, Debug)]
pub struct Scenario {
    pub group: Group,
    pub network: Network,
    pub fares: FareTable,
    pub config: Config,
    pub actors: BTreeMap<String, Role>,
    pub steps: Vec<Step>,
}

impl Scenario {
    pub fn ptos(&self) -> impl Iterator<Item = &str> {
        self.actors
            .iter()
            .filter(|(_, r)| **r == Role::Pto)
            .map(|(n, _)| n.as_str())
    }

    pub fn users(&self) -> impl Iterator<Item = (&str, &str)> {
        self.actors.iter().filter_map(|(n, r)| match r {
            Role::User { addr } => Some((n.as_str(), addr.as_str())),
            _ => None,
        })
    }

    pub fn parse(text: &str) -> Result<Scenario, ParseError> {
        let mut group = Group::Tiny;
        let mut network = Network::new();
        let mut fares = None;
        let mut config = Config::default();
        let mut actors = BTreeMap::new();
        let mut steps = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let err = |message: String| ParseError { line, message };
            let words: Vec<&str> = raw.split('#').next().unwrap_or("").split_whitespace().collect();
            let Some((&head, args)) = words.split_first() else {
                continue;
            };
            match head {
                "group" => {
                    group = match args {
                        ["tiny"] => Group::Tiny,
                        ["sim1024"] => Group::Sim1024,
                        ["production"] => Group::Production,
                        _ => return Err(err("group must be tiny, sim1024 or production".into())),
                    }
                }
                "net" => match args {
                    ["station", id] => network.add_station(id, None).map_err(|e| err(e.to_string()))?,
                    ["station", id, "pto", op] => network.add_station(id, Some(op)).map_err(|e| err(e.to_string()))?,
                    ["link", a, b, m, lo, hi] => {
                        let n = |s: &str| s.parse::<u64>().map_err(|_| err(format!("not a number: {s}")));
                        network.add_link(a, b, n(m)?, n(lo)?, n(hi)?).map_err(|e| err(e.to_string()))?
                    }
                    _ => return Err(err("expected `net station ID [pto NAME]` or `net link A B METRES MIN MAX`".into())),
                },
                "fares" => {
                    let kv = pairs(args).map_err(err)?;
                    let get = |k: &str| kv.get(k).copied();
                    let unit = get("unit").ok_or_else(|| err("fares needs a unit".into()))?;
                    let ceiling = get("ceiling").ok_or_else(|| err("fares needs a ceiling".into()))?;
                    let quantum = get("quantum").unwrap_or(10);
                    fares = Some(FareTable::new(unit, ceiling, quantum).map_err(|e| err(e.to_string()))?);
                }
                "config" => match args {
                    [k, v] => config.set(k, v).map_err(err)?,
                    _ => return Err(err("expected `config KEY VALUE`".into())),
                },
                "actor" => {
                    let (name, role) = match args {
                        ["user", name] => (*name, Role::User { addr: format!("addr-{name}") }),
                        ["user", name, addr] => (*name, Role::User { addr: addr.to_string() }),
                        ["pto", name] => (*name, Role::Pto),
                        ["inspector", name, pto] => (*name, Role::Inspector { pto: pto.to_string() }),
                        _ => return Err(err("expected `actor user NAME [ADDR]`, `actor pto NAME` or `actor inspector NAME PTO`".into())),
                    };
                    if matches!(name, "psp" | "ptc" | "clock") || actors.insert(name.to_string(), role).is_some() {
                        return Err(err(format!("actor name {name} is taken")));
                    }
                }
                "clock" => match args {
                    ["advance", n] => steps.push(Step {
                        line,
                        command: Command::Advance(n.parse().map_err(|_| err(format!("not a number: {n}")))?),
                    }),
                    _ => return Err(err("expected `clock advance N`".into())),
                },
                actor => {
                    let verb = parse_verb(args).map_err(err)?;
                    steps.push(Step {
                        line,
                        command: Command::Act {
                            actor: actor.to_string(),
                            verb,
                        },
                    });
                }
            }
        }
        let fares = fares.ok_or(ParseError {
            line: text.lines().count().max(1),
            message: "missing `fares` line".into(),
        })?;
        let scenario = Scenario {
            group,
            network,
            fares,
            config,
            actors,
            steps,
        };
        scenario.check()?;
        Ok(scenario)
    }

    /// Verbs must name declared actors in a role that supports them.
    fn check(&self) -> Result<(), ParseError> {
        for (name, role) in &self.actors {
            if let Role::Inspector { pto } = role {
                if self.actors.get(pto) != Some(&Role::Pto) {
                    return Err(ParseError {
                        line: 0,
                        message: format!("inspector {name} works for undeclared operator {pto}"),
                    });
                }
            }
        }
        for station in self.network.stations() {
            if let Some(op) = self.network.operator(station) {
                if self.actors.get(op) != Some(&Role::Pto) {
                    return Err(ParseError {
                        line: 0,
                        message: format!("station {station} run by undeclared operator {op}"),
                    });
                }
            }
        }
        for step in &self.steps {
            let Command::Act { actor, verb } = &step.command else {
                continue;
            };
            let err = |message: String| ParseError { line: step.line, message };
            let ok = match (actor.as_str(), self.actors.get(actor), verb) {
                ("psp", _, Verb::Transfer | Verb::Crash) => true,
                ("ptc", _, Verb::Crash) => true,
                (_, Some(Role::Pto), Verb::Settle | Verb::Crash) => true,
                (_, Some(Role::Inspector { .. }), Verb::Inspect { user, .. }) => {
                    if !matches!(self.actors.get(user), Some(Role::User { .. })) {
                        return Err(err(format!("unknown user {user}")));
                    }
                    true
                }
                (_, Some(Role::User { .. }), v) => !matches!(v, Verb::Settle | Verb::Transfer | Verb::Inspect { .. }),
                (_, None, _) => return Err(err(format!("unknown actor {actor}"))),
                _ => false,
            };
            if !ok {
                return Err(err(format!("{actor} cannot do that")));
            }
            let stations: Vec<&String> = match verb {
                Verb::Buy(r) | Verb::BuyQuoted(r, _) | Verb::Reissue(_, r) => r.iter().collect(),
                Verb::Checkin(s) | Verb::Checkout { station: s, .. } => vec![s],
                Verb::Inspect { leg, .. } => vec![&leg.from, &leg.to],
                _ => vec![],
            };
            if let Some(s) = stations.into_iter().find(|s| !self.network.contains(s)) {
                return Err(err(format!("unknown station {s}")));
            }
            if let Verb::Checkin(s) | Verb::Checkout { station: s, .. } = verb {
                if self.network.operator(s).is_none() {
                    return Err(err(format!("station {s} has no gate operator")));
                }
            }
        }
        Ok(())
    }
}

fn pairs(args: &[&str]) -> Result<BTreeMap<String, Cents>, String> {
    if !args.len().is_multiple_of(2) {
        return Err("expected KEY VALUE pairs".into());
    }
    args.chunks(2)
        .map(|kv| {
            kv[1]
                .parse()
                .map(|v| (kv[0].to_string(), v))
                .map_err(|_| format!("not a number: {}", kv[1]))
        })
        .collect()
}

fn parse_verb(args: &[&str]) -> Result<Verb, String> {
    let num = |s: &str| s.parse::<i64>().map_err(|_| format!("not a number: {s}"));
    let idx = |s: &str| s.parse::<usize>().map_err(|_| format!("not an index: {s}"));
    let route = |r: &[&str]| -> Result<Vec<String>, String> {
        if r.len() < 2 {
            return Err("a route needs at least two stations".into());
        }
        Ok(r.iter().map(|s| s.to_string()).collect())
    };
    Ok(match args {
        ["buy", r @ .., "quote", f] => Verb::BuyQuoted(route(r)?, num(f)?),
        ["buy", r @ ..] => Verb::Buy(route(r)?),
        ["pay", s, amount] => Verb::Pay(Service::parse(s).ok_or(format!("unknown service {s}"))?, num(amount)?),
        ["topup", amount] => Verb::Pay(Service::Ptc, num(amount)?),
        ["open", amount] => Verb::Open(num(amount)?),
        ["cancel"] => Verb::Cancel,
        ["cancel", "returned", i] => Verb::CancelReturned(idx(i)?),
        ["return", i] => Verb::Return(idx(i)?),
        ["reissue", i, r @ ..] => Verb::Reissue(idx(i)?, route(r)?),
        ["checkin", s] => Verb::Checkin(s.to_string()),
        ["checkout", s, flags @ ..] => {
            let mut topup = false;
            let mut lazy = false;
            for f in flags {
                match *f {
                    "topup" => topup = true,
                    "lazy" => lazy = true,
                    _ => return Err(format!("unknown checkout flag {f}")),
                }
            }
            Verb::Checkout {
                station: s.to_string(),
                topup,
                lazy,
            }
        }
        ["lazy-finalize"] => Verb::LazyFinalize,
        ["dispute"] => Verb::Dispute,
        ["reinstall"] => Verb::Reinstall,
        ["inspect", user, from, to, rest @ ..] => Verb::Inspect {
            user: user.to_string(),
            leg: Leg::new(from, to),
            online: match rest {
                [] => true,
                ["offline"] => false,
                _ => return Err("expected `inspect USER FROM TO [offline]`".into()),
            },
        },
        ["settle"] => Verb::Settle,
        ["transfer"] => Verb::Transfer,
        ["crash"] => Verb::Crash,
        [] => return Err("missing verb".into()),
        [v, ..] => return Err(format!("unknown verb {v}")),
    })
}
