//! Sequence-number lifecycle stores enforcing exactly-once redemption.
//!
//! Receipts and tickets: absent -> Submitted -> Claimed, plus absent ->
//! Cancelled and (tickets) absent -> Returned. Credit: absent -> CheckedIn ->
//! Inspected* -> Spent, with one dispute transition CheckedIn -> absent.
//! Every accepted transition yields a [`RegEvent`] for the trace.

use std::fmt;

use thiserror::Error;

use crate::journal::Journal;
use crate::tokens::{short, Cents, Leg, Network, Seqno};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum TokenKind {
    Receipt,
    Ticket,
    Credit,
}

impl TokenKind {
    pub fn name(self) -> &'static str {
        match self {
            TokenKind::Receipt => "receipt",
            TokenKind::Ticket => "ticket",
            TokenKind::Credit => "credit",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Stamp {
    pub location: String,
    pub time: u64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Inspection {
    pub leg: Leg,
    pub time: u64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum SeqnoState {
    /// Receipt handed in for a ticket, or ticket seen by an inspector. The
    /// claimant names who may repeat the submission idempotently.
    Submitted { claimant: String },
    Claimed { claimant: String },
    Cancelled,
    Returned { reissued: bool },
    CheckedIn { value: Cents, at: Stamp },
    Inspected { value: Cents, at: Stamp, legs: Vec<Inspection> },
    Spent { value: Cents },
}

impl SeqnoState {
    pub fn name(&self) -> &'static str {
        match self {
            SeqnoState::Submitted { .. } => "submitted",
            SeqnoState::Claimed { .. } => "claimed",
            SeqnoState::Cancelled => "cancelled",
            SeqnoState::Returned { .. } => "returned",
            SeqnoState::CheckedIn { .. } => "checked-in",
            SeqnoState::Inspected { .. } => "inspected",
            SeqnoState::Spent { .. } => "spent",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Record {
    pub kind: TokenKind,
    /// Fare of a receipt or ticket; unused for credit.
    pub amount: Cents,
    pub state: SeqnoState,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum Reject {
    #[error("{kind} {seqno} already {state}")]
    AlreadyUsed { kind: &'static str, seqno: String, state: &'static str },
    #[error("{kind} {seqno} unknown")]
    Unknown { kind: &'static str, seqno: String },
    #[error("{kind} {seqno} is {state}, expected {expected}")]
    WrongState {
        kind: &'static str,
        seqno: String,
        state: &'static str,
        expected: &'static str,
    },
    #[error("credit {seqno}: leg {leg} inconsistent with earlier inspections")]
    Fraud { seqno: String, leg: String },
    #[error("credit {0} is blacklisted")]
    Blacklisted(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Submit {
    Accepted,
    /// Same claimant repeating an accepted submission.
    Repeated,
}

/// Accepted transition, rendered as a trace line.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RegEvent {
    pub kind: TokenKind,
    pub seqno: Seqno,
    pub from: &'static str,
    pub to: &'static str,
    pub amount: Cents,
}

impl fmt::Display for RegEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {} {}->{} amount={}",
            self.kind.name(),
            short(&self.seqno),
            self.from,
            self.to,
            self.amount
        )
    }
}

pub struct SeqnoRegistry {
    store: Journal<(TokenKind, Seqno), Record>,
    blacklist: Journal<Seqno, ()>,
    events: Vec<RegEvent>,
}

impl Default for SeqnoRegistry {
    fn default() -> Self {
        Self::new()
    }
}

fn absent() -> &'static str {
    "absent"
}

impl SeqnoRegistry {
    pub fn new() -> Self {
        SeqnoRegistry {
            store: Journal::new(),
            blacklist: Journal::new(),
            events: Vec::new(),
        }
    }

    pub fn get(&self, kind: TokenKind, seqno: &Seqno) -> Option<&Record> {
        self.store.get(&(kind, *seqno))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&(TokenKind, Seqno), &Record)> {
        self.store.iter()
    }

    pub fn len(&self) -> usize {
        self.store.len()
    }

    pub fn is_empty(&self) -> bool {
        self.store.is_empty()
    }

    /// Accepted transitions since the last call.
    pub fn drain_events(&mut self) -> Vec<RegEvent> {
        std::mem::take(&mut self.events)
    }

    pub fn sync(&mut self) {
        self.store.sync();
        self.blacklist.sync();
    }

    /// Lose unsynced transitions; pending events belonged to them.
    pub fn crash(&mut self) {
        self.store.crash();
        self.blacklist.crash();
        self.events.clear();
    }

    fn set(&mut self, kind: TokenKind, seqno: Seqno, from: &'static str, record: Record) {
        self.events.push(RegEvent {
            kind,
            seqno,
            from,
            to: record.state.name(),
            amount: match record.state {
                SeqnoState::CheckedIn { value, .. }
                | SeqnoState::Inspected { value, .. }
                | SeqnoState::Spent { value } => value,
                _ => record.amount,
            },
        });
        self.store.put((kind, seqno), record);
    }

    fn used(kind: TokenKind, seqno: &Seqno, state: &SeqnoState) -> Reject {
        Reject::AlreadyUsed {
            kind: kind.name(),
            seqno: short(seqno),
            state: state.name(),
        }
    }

    /// First submission of a receipt (at the PTC) or ticket (at its PTO).
    pub fn submit(&mut self, kind: TokenKind, seqno: &Seqno, claimant: &str, amount: Cents) -> Result<Submit, Reject> {
        match self.get(kind, seqno) {
            None => {
                let record = Record {
                    kind,
                    amount,
                    state: SeqnoState::Submitted {
                        claimant: claimant.to_string(),
                    },
                };
                self.set(kind, *seqno, absent(), record);
                Ok(Submit::Accepted)
            }
            Some(Record {
                state: SeqnoState::Submitted { claimant: c },
                ..
            }) if c == claimant => Ok(Submit::Repeated),
            Some(r) => Err(Self::used(kind, seqno, &r.state)),
        }
    }

    /// Settlement: a submitted receipt is paid out once, to its submitter's
    /// operator. `owner` is matched as a prefix of the claimant.
    pub fn claim(&mut self, kind: TokenKind, seqno: &Seqno, owner: &str) -> Result<Cents, Reject> {
        let record = self.get(kind, seqno).cloned().ok_or(Reject::Unknown {
            kind: kind.name(),
            seqno: short(seqno),
        })?;
        match &record.state {
            SeqnoState::Submitted { claimant } if claimant_owner(claimant) == owner => {
                let next = Record {
                    state: SeqnoState::Claimed {
                        claimant: owner.to_string(),
                    },
                    ..record.clone()
                };
                self.set(kind, *seqno, "submitted", next);
                Ok(record.amount)
            }
            state => Err(Self::used(kind, seqno, state)),
        }
    }

    /// Redeem a receipt directly (credit purchases): absent -> Claimed.
    /// Repeating with the same claimant is idempotent.
    pub fn redeem(&mut self, kind: TokenKind, seqno: &Seqno, claimant: &str, amount: Cents) -> Result<Submit, Reject> {
        match self.get(kind, seqno) {
            None => {
                let record = Record {
                    kind,
                    amount,
                    state: SeqnoState::Claimed {
                        claimant: claimant.to_string(),
                    },
                };
                self.set(kind, *seqno, absent(), record);
                Ok(Submit::Accepted)
            }
            Some(Record {
                state: SeqnoState::Claimed { claimant: c },
                ..
            }) if c == claimant => Ok(Submit::Repeated),
            Some(r) => Err(Self::used(kind, seqno, &r.state)),
        }
    }

    /// Block a receipt before it is used. With `after_return` a receipt
    /// whose ticket was handed back may be cancelled from Submitted.
    pub fn cancel(&mut self, kind: TokenKind, seqno: &Seqno, amount: Cents, after_return: bool) -> Result<(), Reject> {
        match self.get(kind, seqno).cloned() {
            None => {
                let record = Record {
                    kind,
                    amount,
                    state: SeqnoState::Cancelled,
                };
                self.set(kind, *seqno, absent(), record);
                Ok(())
            }
            Some(r) if after_return && matches!(r.state, SeqnoState::Submitted { .. }) => {
                let next = Record {
                    state: SeqnoState::Cancelled,
                    ..r
                };
                self.set(kind, *seqno, "submitted", next);
                Ok(())
            }
            Some(r) => Err(Self::used(kind, seqno, &r.state)),
        }
    }

    /// Invalidate an unused ticket.
    pub fn return_ticket(&mut self, seqno: &Seqno, fare: Cents) -> Result<(), Reject> {
        match self.get(TokenKind::Ticket, seqno) {
            None => {
                let record = Record {
                    kind: TokenKind::Ticket,
                    amount: fare,
                    state: SeqnoState::Returned { reissued: false },
                };
                self.set(TokenKind::Ticket, *seqno, absent(), record);
                Ok(())
            }
            Some(r) => Err(Self::used(TokenKind::Ticket, seqno, &r.state)),
        }
    }

    /// Use up a returned ticket for a replacement or a cancellation.
    pub fn consume_return(&mut self, seqno: &Seqno) -> Result<Cents, Reject> {
        match self.get(TokenKind::Ticket, seqno).cloned() {
            Some(r @ Record {
                state: SeqnoState::Returned { reissued: false },
                ..
            }) => {
                let fare = r.amount;
                let next = Record {
                    state: SeqnoState::Returned { reissued: true },
                    ..r
                };
                self.set(TokenKind::Ticket, *seqno, "returned", next);
                Ok(fare)
            }
            Some(r) => Err(Self::used(TokenKind::Ticket, seqno, &r.state)),
            None => Err(Reject::Unknown {
                kind: "ticket",
                seqno: short(seqno),
            }),
        }
    }

    pub fn checkin(&mut self, seqno: &Seqno, value: Cents, at: Stamp) -> Result<(), Reject> {
        if self.is_blacklisted(seqno) {
            return Err(Reject::Blacklisted(short(seqno)));
        }
        match self.get(TokenKind::Credit, seqno) {
            None => {
                let record = Record {
                    kind: TokenKind::Credit,
                    amount: 0,
                    state: SeqnoState::CheckedIn { value, at },
                };
                self.set(TokenKind::Credit, *seqno, absent(), record);
                Ok(())
            }
            Some(r) => Err(Self::used(TokenKind::Credit, seqno, &r.state)),
        }
    }

    /// Record an en-route inspection. A leg that could not follow the
    /// earlier ones in the elapsed time is fraud.
    pub fn inspect(&mut self, seqno: &Seqno, leg: Leg, time: u64, network: &Network) -> Result<(), Reject> {
        let record = self.get(TokenKind::Credit, seqno).cloned().ok_or(Reject::Unknown {
            kind: "credit",
            seqno: short(seqno),
        })?;
        let from = record.state.name();
        let (value, at, mut legs) = match record.state.clone() {
            SeqnoState::CheckedIn { value, at } => (value, at, Vec::new()),
            SeqnoState::Inspected { value, at, legs } => (value, at, legs),
            ref state => {
                return Err(Reject::WrongState {
                    kind: "credit",
                    seqno: short(seqno),
                    state: state.name(),
                    expected: "checked-in",
                })
            }
        };
        if !legs_consistent(network, &at, &legs, &leg, time) {
            return Err(Reject::Fraud {
                seqno: short(seqno),
                leg: leg.to_string(),
            });
        }
        legs.push(Inspection { leg, time });
        let next = Record {
            state: SeqnoState::Inspected { value, at, legs },
            ..record
        };
        self.set(TokenKind::Credit, *seqno, from, next);
        Ok(())
    }

    /// Check-out: returns the value recorded at check-in.
    pub fn spend(&mut self, seqno: &Seqno) -> Result<(Cents, Stamp), Reject> {
        if self.is_blacklisted(seqno) {
            return Err(Reject::Blacklisted(short(seqno)));
        }
        let record = self.get(TokenKind::Credit, seqno).cloned().ok_or(Reject::Unknown {
            kind: "credit",
            seqno: short(seqno),
        })?;
        match record.state {
            SeqnoState::CheckedIn { value, ref at } | SeqnoState::Inspected { value, ref at, .. } => {
                let at = at.clone();
                let from = record.state.name();
                let next = Record {
                    state: SeqnoState::Spent { value },
                    ..record
                };
                self.set(TokenKind::Credit, *seqno, from, next);
                Ok((value, at))
            }
            ref state => Err(Reject::WrongState {
                kind: "credit",
                seqno: short(seqno),
                state: state.name(),
                expected: "checked-in",
            }),
        }
    }

    /// Exchange an idle credit token (never checked in) for a new one.
    pub fn spend_idle(&mut self, seqno: &Seqno, value: Cents) -> Result<(), Reject> {
        match self.get(TokenKind::Credit, seqno) {
            None => {
                let record = Record {
                    kind: TokenKind::Credit,
                    amount: 0,
                    state: SeqnoState::Spent { value },
                };
                self.set(TokenKind::Credit, *seqno, absent(), record);
                Ok(())
            }
            Some(r) => Err(Self::used(TokenKind::Credit, seqno, &r.state)),
        }
    }

    /// Dispute resolution after a failed check-in: forget the seqno so the
    /// token is valid at the next check-in.
    pub fn dispute_clear(&mut self, seqno: &Seqno) -> Result<(), Reject> {
        match self.get(TokenKind::Credit, seqno) {
            Some(Record {
                state: SeqnoState::CheckedIn { .. } | SeqnoState::Inspected { .. },
                ..
            }) => {
                let from = self.get(TokenKind::Credit, seqno).unwrap().state.name();
                self.events.push(RegEvent {
                    kind: TokenKind::Credit,
                    seqno: *seqno,
                    from,
                    to: absent(),
                    amount: 0,
                });
                self.store.remove(&(TokenKind::Credit, *seqno));
                Ok(())
            }
            Some(r) => Err(Self::used(TokenKind::Credit, seqno, &r.state)),
            None => Err(Reject::Unknown {
                kind: "credit",
                seqno: short(seqno),
            }),
        }
    }

    pub fn blacklist(&mut self, seqno: &Seqno) {
        self.blacklist.put(*seqno, ());
    }

    pub fn is_blacklisted(&self, seqno: &Seqno) -> bool {
        self.blacklist.contains_key(seqno)
    }
}

fn claimant_owner(claimant: &str) -> &str {
    claimant.split('#').next().unwrap_or(claimant)
}

/// A traveller inspected on `prev` at `t0` must be able to reach the start
/// of `next` by `t1`; the first inspection is checked against the check-in.
pub fn legs_consistent(network: &Network, checkin: &Stamp, earlier: &[Inspection], next: &Leg, time: u64) -> bool {
    let reachable = |from: &str, t0: u64| -> bool {
        if time < t0 {
            return false;
        }
        match network.min_travel(from, &next.from) {
            Ok(d) => d <= time - t0,
            Err(_) => from == next.from,
        }
    };
    let ok_after_checkin = checkin.location == next.from || reachable(&checkin.location, checkin.time);
    if !ok_after_checkin {
        return false;
    }
    earlier.iter().all(|prev| {
        if prev.leg == *next {
            return true;
        }
        let (first, second, t0, t1) = if prev.time <= time {
            (&prev.leg, next, prev.time, time)
        } else {
            (next, &prev.leg, time, prev.time)
        };
        first.to == second.from
            || network
                .min_travel(&first.to, &second.from)
                .is_ok_and(|d| d <= t1 - t0)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn net() -> Network {
        let mut n = Network::new();
        for s in ["A", "B", "C", "D"] {
            n.add_station(s, None).unwrap();
        }
        n.add_link("A", "B", 5000, 100, 150).unwrap();
        n.add_link("B", "C", 5000, 100, 150).unwrap();
        n.add_link("C", "D", 50_000, 1000, 1500).unwrap();
        n
    }

    fn at(loc: &str, t: u64) -> Stamp {
        Stamp {
            location: loc.into(),
            time: t,
        }
    }

    #[test]
    fn second_submission_is_rejected_but_same_claimant_repeats() {
        let mut r = SeqnoRegistry::new();
        let s = [1; 16];
        assert_eq!(r.submit(TokenKind::Receipt, &s, "metro#aa", 360), Ok(Submit::Accepted));
        assert_eq!(r.submit(TokenKind::Receipt, &s, "metro#aa", 360), Ok(Submit::Repeated));
        assert!(r.submit(TokenKind::Receipt, &s, "metro#bb", 360).is_err());
        assert!(r.submit(TokenKind::Receipt, &s, "tram#aa", 360).is_err());
        assert_eq!(r.claim(TokenKind::Receipt, &s, "tram"), Err(SeqnoRegistry::used(TokenKind::Receipt, &s, &SeqnoState::Submitted { claimant: "metro#aa".into() })));
        assert_eq!(r.claim(TokenKind::Receipt, &s, "metro"), Ok(360));
        assert!(r.claim(TokenKind::Receipt, &s, "metro").is_err());
    }

    #[test]
    fn cancel_only_before_use() {
        let mut r = SeqnoRegistry::new();
        assert!(r.cancel(TokenKind::Receipt, &[1; 16], 100, false).is_ok());
        assert!(r.submit(TokenKind::Receipt, &[1; 16], "metro#1", 100).is_err());
        r.submit(TokenKind::Receipt, &[2; 16], "metro#1", 100).unwrap();
        assert!(r.cancel(TokenKind::Receipt, &[2; 16], 100, false).is_err());
        assert!(r.cancel(TokenKind::Receipt, &[2; 16], 100, true).is_ok());
    }

    #[test]
    fn checkin_then_spend_exposes_value_once() {
        let mut r = SeqnoRegistry::new();
        let s = [7; 16];
        assert!(r.spend(&s).is_err());
        r.checkin(&s, 2500, at("A", 0)).unwrap();
        assert_eq!(r.spend(&s).unwrap().0, 2500);
        assert!(r.spend(&s).is_err());
        assert!(r.checkin(&s, 2500, at("A", 10)).is_err());
    }

    #[test]
    fn inspection_requires_checkin_and_consistent_legs() {
        let n = net();
        let mut r = SeqnoRegistry::new();
        let s = [9; 16];
        assert!(r.inspect(&s, Leg::new("A", "B"), 50, &n).is_err());
        r.checkin(&s, 900, at("A", 0)).unwrap();
        r.inspect(&s, Leg::new("A", "B"), 50, &n).unwrap();
        r.inspect(&s, Leg::new("B", "C"), 200, &n).unwrap();
        // D is 1000 ticks from C at best
        let fraud = r.inspect(&s, Leg::new("D", "C"), 300, &n);
        assert!(matches!(fraud, Err(Reject::Fraud { .. })));
        assert_eq!(r.spend(&s).unwrap().0, 900);
    }

    #[test]
    fn dispute_clear_allows_one_new_checkin() {
        let mut r = SeqnoRegistry::new();
        let s = [3; 16];
        assert!(r.dispute_clear(&s).is_err());
        r.checkin(&s, 500, at("A", 0)).unwrap();
        r.dispute_clear(&s).unwrap();
        r.checkin(&s, 500, at("B", 5)).unwrap();
        assert!(r.checkin(&s, 500, at("B", 6)).is_err());
        r.spend(&s).unwrap();
        assert!(r.dispute_clear(&s).is_err());
    }

    #[test]
    fn returned_ticket_is_consumed_once() {
        let mut r = SeqnoRegistry::new();
        let s = [4; 16];
        r.return_ticket(&s, 360).unwrap();
        assert!(r.submit(TokenKind::Ticket, &s, "trip", 360).is_err());
        assert_eq!(r.consume_return(&s), Ok(360));
        assert!(r.consume_return(&s).is_err());
    }

    #[test]
    fn crash_discards_unsynced_transitions_and_events() {
        let mut r = SeqnoRegistry::new();
        r.checkin(&[1; 16], 1, at("A", 0)).unwrap();
        r.sync();
        r.drain_events();
        r.spend(&[1; 16]).unwrap();
        r.crash();
        assert!(r.drain_events().is_empty());
        assert!(matches!(r.get(TokenKind::Credit, &[1; 16]).unwrap().state, SeqnoState::CheckedIn { .. }));
    }

    #[test]
    fn two_caller_interleavings_accept_exactly_once() {
        // every ordering of two submitters each sending the same seqno twice
        let calls = ["p#1", "p#1", "q#2", "q#2"];
        let mut orders = vec![];
        permute(&mut calls.to_vec(), 0, &mut orders);
        for order in orders {
            let mut r = SeqnoRegistry::new();
            let accepted: Vec<&str> = order
                .iter()
                .filter(|c| r.submit(TokenKind::Receipt, &[5; 16], c, 10) == Ok(Submit::Accepted))
                .copied()
                .collect();
            assert_eq!(accepted.len(), 1, "{order:?}");
            assert_eq!(accepted[0], order[0]);
        }
    }

    fn permute<'a>(v: &mut Vec<&'a str>, k: usize, out: &mut Vec<Vec<&'a str>>) {
        if k == v.len() {
            out.push(v.clone());
            return;
        }
        for i in k..v.len() {
            v.swap(k, i);
            permute(v, k + 1, out);
            v.swap(k, i);
        }
    }

    #[derive(Clone, Debug)]
    enum Op {
        Submit(u8, u8),
        Claim(u8),
        Cancel(u8),
        Checkin(u8),
        Inspect(u8, u64),
        Spend(u8),
        Clear(u8),
    }

    fn op() -> impl Strategy<Value = Op> {
        prop_oneof![
            (0u8..4, 0u8..2).prop_map(|(s, c)| Op::Submit(s, c)),
            (0u8..4).prop_map(Op::Claim),
            (0u8..4).prop_map(Op::Cancel),
            (0u8..4).prop_map(Op::Checkin),
            (0u8..4, 0u64..2000).prop_map(|(s, t)| Op::Inspect(s, t)),
            (0u8..4).prop_map(Op::Spend),
            (0u8..4).prop_map(Op::Clear),
        ]
    }

    fn legal(kind: TokenKind, from: &str, to: &str) -> bool {
        match kind {
            TokenKind::Receipt | TokenKind::Ticket => matches!(
                (from, to),
                ("absent", "submitted") | ("absent", "cancelled") | ("submitted", "claimed") | ("submitted", "cancelled") | ("absent", "claimed")
            ),
            TokenKind::Credit => matches!(
                (from, to),
                ("absent", "checked-in")
                    | ("checked-in", "inspected")
                    | ("inspected", "inspected")
                    | ("checked-in", "spent")
                    | ("inspected", "spent")
                    | ("checked-in", "absent")
                    | ("inspected", "absent")
                    | ("absent", "spent")
            ),
        }
    }

    proptest! {
        #[test]
        fn random_events_only_make_legal_transitions(ops in prop::collection::vec(op(), 1..60)) {
            let n = net();
            let mut r = SeqnoRegistry::new();
            let mut spent = std::collections::BTreeMap::<u8, u32>::new();
            for o in ops {
                let s = |i: u8| [i; 16];
                match o {
                    Op::Submit(i, c) => { let _ = r.submit(TokenKind::Receipt, &s(i), if c == 0 { "p#1" } else { "q#1" }, 10); }
                    Op::Claim(i) => { let _ = r.claim(TokenKind::Receipt, &s(i), "p"); }
                    Op::Cancel(i) => { let _ = r.cancel(TokenKind::Receipt, &s(i), 10, false); }
                    Op::Checkin(i) => { let _ = r.checkin(&s(i), 100, at("A", 0)); }
                    Op::Inspect(i, t) => { let _ = r.inspect(&s(i), Leg::new("A", "B"), t, &n); }
                    Op::Spend(i) => { if r.spend(&s(i)).is_ok() { *spent.entry(i).or_default() += 1; } }
                    Op::Clear(i) => { let _ = r.dispute_clear(&s(i)); }
                }
                for e in r.drain_events() {
                    prop_assert!(legal(e.kind, e.from, e.to), "{}", e);
                }
            }
            // a seqno is spent at most once
            prop_assert!(spent.values().all(|&n| n <= 1));
        }
    }
}
