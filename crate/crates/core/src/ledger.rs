//! Settlement ledger, clearing facts and reconciliation.
//!
//! Money moves only through [`Entry`] values. The clearinghouse and the
//! operators also emit [`Fact`]s describing what their registries and logs
//! say; reconciliation checks the two against each other:
//!
//! `payments - refunds = payouts - clawbacks + unredeemed + held + credit + payable`
//!
//! where `unredeemed` are receipts the PTC never saw, `held` receipts handed
//! in for tickets but not yet claimed, `credit` the net value of outstanding
//! credit tokens and `payable` fares owed to operators but not yet paid.
//! Fines are booked but excluded from the identity.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::tokens::{Cents, Seqno, Service};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("cannot parse {what}: {line}")]
pub struct ParseError {
    pub what: &'static str,
    pub line: String,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Entry {
    /// User pays the PSP; funds sit in the PSP offset account.
    Payment { payer: String, amount: Cents, service: Service },
    Refund { payer: String, amount: Cents },
    /// Aggregated PSP -> PTC transfer; negative reverses earlier transfers.
    Transfer { amount: Cents },
    Payout { pto: String, items: Vec<(Seqno, Cents)> },
    Clawback { pto: String, reference: Seqno, amount: Cents },
    Fine { pto: String, reference: Seqno, amount: Cents },
}

impl Entry {
    pub fn amount(&self) -> Cents {
        match self {
            Entry::Payment { amount, .. }
            | Entry::Refund { amount, .. }
            | Entry::Transfer { amount }
            | Entry::Clawback { amount, .. }
            | Entry::Fine { amount, .. } => *amount,
            Entry::Payout { items, .. } => items.iter().map(|(_, a)| a).sum(),
        }
    }
}

/// What a registry or operator log asserts, for reconciliation.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Fact {
    /// A receipt reached the PTC for the first time.
    Seen { reference: Seqno, service: Service, amount: Cents },
    /// A receipt held for a ticket was paid out to its operator.
    Claimed { reference: Seqno, amount: Cents },
    /// A receipt already seen was cancelled and refunded.
    CancelSeen { reference: Seqno, amount: Cents },
    /// The PTC owes an operator a fare.
    Charge { reference: Seqno, pto: String, amount: Cents },
    /// A credit token of this value is owed or issued.
    Grant { reference: Seqno, amount: Cents },
    /// A credit token was consumed.
    Spend { reference: Seqno, amount: Cents },
    /// A charge was reduced after a dispute; the operator returns it.
    Adjust { reference: Seqno, pto: String, amount: Cents },
    /// Operator log: fare expected for a reference (negative to void).
    PtoLog { pto: String, reference: Seqno, fare: Cents },
}

fn kv<'a>(parts: &'a [&'a str], key: &str) -> Option<&'a str> {
    parts
        .iter()
        .find_map(|p| p.strip_prefix(key).and_then(|rest| rest.strip_prefix('=')))
}

fn seq(s: &str) -> Option<Seqno> {
    hex::decode(s).ok()?.try_into().ok()
}

fn money(s: &str) -> Option<Cents> {
    s.parse().ok()
}

impl fmt::Display for Entry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Entry::Payment { payer, amount, service } => {
                write!(f, "payment payer={payer} amount={amount} service={}", service.name())
            }
            Entry::Refund { payer, amount } => write!(f, "refund payer={payer} amount={amount}"),
            Entry::Transfer { amount } => write!(f, "transfer amount={amount}"),
            Entry::Payout { pto, items } => {
                let items: Vec<String> = items.iter().map(|(r, a)| format!("{}:{a}", hex::encode(r))).collect();
                write!(f, "payout pto={pto} items={}", items.join(","))
            }
            Entry::Clawback { pto, reference, amount } => {
                write!(f, "clawback pto={pto} ref={} amount={amount}", hex::encode(reference))
            }
            Entry::Fine { pto, reference, amount } => {
                write!(f, "fine pto={pto} ref={} amount={amount}", hex::encode(reference))
            }
        }
    }
}

impl FromStr for Entry {
    type Err = ParseError;

    fn from_str(line: &str) -> Result<Entry, ParseError> {
        let err = || ParseError {
            what: "ledger entry",
            line: line.to_string(),
        };
        let parts: Vec<&str> = line.split_whitespace().collect();
        let get = |k: &str| kv(&parts, k).ok_or_else(err);
        let amount = || get("amount").and_then(|a| money(a).ok_or_else(err));
        let reference = || get("ref").and_then(|r| seq(r).ok_or_else(err));
        match parts.first().copied() {
            Some("payment") => Ok(Entry::Payment {
                payer: get("payer")?.to_string(),
                amount: amount()?,
                service: Service::parse(get("service")?).ok_or_else(err)?,
            }),
            Some("refund") => Ok(Entry::Refund {
                payer: get("payer")?.to_string(),
                amount: amount()?,
            }),
            Some("transfer") => Ok(Entry::Transfer { amount: amount()? }),
            Some("payout") => {
                let raw = get("items")?;
                let mut items = Vec::new();
                for item in raw.split(',').filter(|s| !s.is_empty()) {
                    let (r, a) = item.split_once(':').ok_or_else(err)?;
                    items.push((seq(r).ok_or_else(err)?, money(a).ok_or_else(err)?));
                }
                Ok(Entry::Payout {
                    pto: get("pto")?.to_string(),
                    items,
                })
            }
            Some("clawback") => Ok(Entry::Clawback {
                pto: get("pto")?.to_string(),
                reference: reference()?,
                amount: amount()?,
            }),
            Some("fine") => Ok(Entry::Fine {
                pto: get("pto")?.to_string(),
                reference: reference()?,
                amount: amount()?,
            }),
            _ => Err(err()),
        }
    }
}

impl fmt::Display for Fact {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let h = hex::encode;
        match self {
            Fact::Seen { reference, service, amount } => {
                write!(f, "seen ref={} service={} amount={amount}", h(reference), service.name())
            }
            Fact::Claimed { reference, amount } => write!(f, "claimed ref={} amount={amount}", h(reference)),
            Fact::CancelSeen { reference, amount } => write!(f, "cancel ref={} amount={amount}", h(reference)),
            Fact::Charge { reference, pto, amount } => {
                write!(f, "charge ref={} pto={pto} amount={amount}", h(reference))
            }
            Fact::Grant { reference, amount } => write!(f, "grant ref={} amount={amount}", h(reference)),
            Fact::Spend { reference, amount } => write!(f, "spend ref={} amount={amount}", h(reference)),
            Fact::Adjust { reference, pto, amount } => {
                write!(f, "adjust ref={} pto={pto} amount={amount}", h(reference))
            }
            Fact::PtoLog { pto, reference, fare } => write!(f, "ptolog ref={} pto={pto} amount={fare}", h(reference)),
        }
    }
}

impl FromStr for Fact {
    type Err = ParseError;

    fn from_str(line: &str) -> Result<Fact, ParseError> {
        let err = || ParseError {
            what: "fact",
            line: line.to_string(),
        };
        let parts: Vec<&str> = line.split_whitespace().collect();
        let get = |k: &str| kv(&parts, k).ok_or_else(err);
        let amount = get("amount").and_then(|a| money(a).ok_or_else(err))?;
        let reference = get("ref").and_then(|r| seq(r).ok_or_else(err))?;
        let pto = || get("pto").map(str::to_string);
        match parts.first().copied() {
            Some("seen") => Ok(Fact::Seen {
                reference,
                service: Service::parse(get("service")?).ok_or_else(err)?,
                amount,
            }),
            Some("claimed") => Ok(Fact::Claimed { reference, amount }),
            Some("cancel") => Ok(Fact::CancelSeen { reference, amount }),
            Some("charge") => Ok(Fact::Charge {
                reference,
                pto: pto()?,
                amount,
            }),
            Some("grant") => Ok(Fact::Grant { reference, amount }),
            Some("spend") => Ok(Fact::Spend { reference, amount }),
            Some("adjust") => Ok(Fact::Adjust {
                reference,
                pto: pto()?,
                amount,
            }),
            Some("ptolog") => Ok(Fact::PtoLog {
                reference,
                pto: pto()?,
                fare: amount,
            }),
            _ => Err(err()),
        }
    }
}

/// Items an actor has produced but not yet made durable. Synced items are
/// handed to the caller; a crash discards the rest.
#[derive(Clone, Debug)]
pub struct Outbox<T> {
    pending: Vec<T>,
}

impl<T> Default for Outbox<T> {
    fn default() -> Self {
        Outbox { pending: Vec::new() }
    }
}

impl<T> Outbox<T> {
    pub fn push(&mut self, item: T) {
        self.pending.push(item);
    }

    pub fn sync(&mut self) -> Vec<T> {
        std::mem::take(&mut self.pending)
    }

    pub fn crash(&mut self) {
        self.pending.clear();
    }

    pub fn is_empty(&self) -> bool {
        self.pending.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Posting {
    Ledger(Entry),
    Fact(Fact),
}

impl Posting {
    pub fn trace_line(&self) -> String {
        match self {
            Posting::Ledger(e) => format!("LEDGER {e}"),
            Posting::Fact(f) => format!("FACT {f}"),
        }
    }
}

/// Durable books: ledger entries and clearing facts in commit order.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Books {
    pub entries: Vec<Entry>,
    pub facts: Vec<Fact>,
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Discrepancy {
    DupPayout { reference: Seqno, count: usize },
    OrphanPayout { reference: Seqno, pto: String, amount: Cents },
    PayoutMismatch { reference: Seqno, charged: Cents, paid: Cents },
    MissingPayout { reference: Seqno, pto: String, amount: Cents },
    PtoLogMismatch { reference: Seqno, pto: String, logged: Cents, received: Cents },
    Balance { lhs: Cents, rhs: Cents },
}

impl Discrepancy {
    pub fn code(&self) -> &'static str {
        match self {
            Discrepancy::DupPayout { .. } => "DUP_PAYOUT",
            Discrepancy::OrphanPayout { .. } => "ORPHAN_PAYOUT",
            Discrepancy::PayoutMismatch { .. } => "PAYOUT_MISMATCH",
            Discrepancy::MissingPayout { .. } => "MISSING_PAYOUT",
            Discrepancy::PtoLogMismatch { .. } => "PTO_LOG_MISMATCH",
            Discrepancy::Balance { .. } => "BALANCE",
        }
    }
}

impl fmt::Display for Discrepancy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let h = hex::encode;
        write!(f, "{} ", self.code())?;
        match self {
            Discrepancy::DupPayout { reference, count } => write!(f, "ref={} count={count}", h(reference)),
            Discrepancy::OrphanPayout { reference, pto, amount } => {
                write!(f, "ref={} pto={pto} amount={amount}", h(reference))
            }
            Discrepancy::PayoutMismatch { reference, charged, paid } => {
                write!(f, "ref={} charged={charged} paid={paid}", h(reference))
            }
            Discrepancy::MissingPayout { reference, pto, amount } => {
                write!(f, "ref={} pto={pto} amount={amount}", h(reference))
            }
            Discrepancy::PtoLogMismatch {
                reference,
                pto,
                logged,
                received,
            } => write!(f, "ref={} pto={pto} logged={logged} received={received}", h(reference)),
            Discrepancy::Balance { lhs, rhs } => write!(f, "lhs={lhs} rhs={rhs}"),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Totals {
    pub payments: Cents,
    pub refunds: Cents,
    pub transfers: Cents,
    pub payouts: Cents,
    pub clawbacks: Cents,
    pub fines: Cents,
    pub unredeemed: Cents,
    pub held: Cents,
    pub credit: Cents,
    pub payable: Cents,
}

impl Totals {
    pub fn psp_pending(&self) -> Cents {
        self.payments - self.refunds - self.transfers
    }

    pub fn ptc_cash(&self) -> Cents {
        self.transfers - self.payouts + self.clawbacks
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Report {
    pub totals: Totals,
    pub discrepancies: Vec<Discrepancy>,
}

impl Report {
    pub fn is_clean(&self) -> bool {
        self.discrepancies.is_empty()
    }

    pub fn exit_code(&self) -> i32 {
        if self.is_clean() {
            0
        } else {
            1
        }
    }
}

impl fmt::Display for Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let t = &self.totals;
        writeln!(
            f,
            "SUMMARY payments={} refunds={} transfers={} payouts={} clawbacks={} fines={} unredeemed={} held={} credit={} payable={} psp_pending={} discrepancies={}",
            t.payments,
            t.refunds,
            t.transfers,
            t.payouts,
            t.clawbacks,
            t.fines,
            t.unredeemed,
            t.held,
            t.credit,
            t.payable,
            t.psp_pending(),
            self.discrepancies.len()
        )?;
        for d in &self.discrepancies {
            writeln!(f, "{d}")?;
        }
        Ok(())
    }
}

impl Books {
    pub fn push(&mut self, posting: Posting) {
        match posting {
            Posting::Ledger(e) => self.entries.push(e),
            Posting::Fact(f) => self.facts.push(f),
        }
    }

    /// Rebuild the books from `LEDGER` and `FACT` trace lines.
    pub fn from_trace(trace: &str) -> Result<Books, ParseError> {
        let mut books = Books::default();
        for line in trace.lines() {
            let body = line.split_once("] ").map_or(line, |(_, rest)| rest);
            if let Some(e) = body.strip_prefix("LEDGER ") {
                books.entries.push(e.parse()?);
            } else if let Some(fact) = body.strip_prefix("FACT ") {
                books.facts.push(fact.parse()?);
            }
        }
        Ok(books)
    }

    /// Balance per party, as a pure fold over the entries.
    pub fn balances(&self) -> BTreeMap<String, Cents> {
        let mut b: BTreeMap<String, Cents> = BTreeMap::new();
        let mut add = |k: &str, v: Cents| *b.entry(k.to_string()).or_default() += v;
        for e in &self.entries {
            match e {
                Entry::Payment { payer, amount, .. } => {
                    add(&format!("user:{payer}"), -amount);
                    add("psp", *amount);
                }
                Entry::Refund { payer, amount } => {
                    add(&format!("user:{payer}"), *amount);
                    add("psp", -amount);
                }
                Entry::Transfer { amount } => {
                    add("psp", -amount);
                    add("ptc", *amount);
                }
                Entry::Payout { pto, .. } => {
                    add("ptc", -e.amount());
                    add(&format!("pto:{pto}"), e.amount());
                }
                Entry::Clawback { pto, amount, .. } => {
                    add("ptc", *amount);
                    add(&format!("pto:{pto}"), -amount);
                }
                Entry::Fine { pto, amount, .. } => add(&format!("fines:{pto}"), *amount),
            }
        }
        b
    }

    /// With `settled`, every charge must have been paid out.
    pub fn reconcile(&self, settled: bool) -> Report {
        let mut t = Totals::default();
        let mut paid: BTreeMap<Seqno, Vec<(String, Cents)>> = BTreeMap::new();
        let mut clawed: BTreeMap<Seqno, Cents> = BTreeMap::new();
        for e in &self.entries {
            match e {
                Entry::Payment { amount, .. } => t.payments += amount,
                Entry::Refund { amount, .. } => t.refunds += amount,
                Entry::Transfer { amount } => t.transfers += amount,
                Entry::Payout { pto, items } => {
                    for (r, a) in items {
                        t.payouts += a;
                        paid.entry(*r).or_default().push((pto.clone(), *a));
                    }
                }
                Entry::Clawback { reference, amount, .. } => {
                    t.clawbacks += amount;
                    *clawed.entry(*reference).or_default() += amount;
                }
                Entry::Fine { amount, .. } => t.fines += amount,
            }
        }

        let mut seen_total = 0;
        let mut cancelled_seen = 0;
        let mut held = 0;
        let mut charges: BTreeMap<Seqno, (String, Cents)> = BTreeMap::new();
        let mut pto_log: BTreeMap<(String, Seqno), Cents> = BTreeMap::new();
        for fact in &self.facts {
            match fact {
                Fact::Seen { service, amount, .. } => {
                    seen_total += amount;
                    if *service == Service::Pto {
                        held += amount;
                    }
                }
                Fact::Claimed { amount, .. } => held -= amount,
                Fact::CancelSeen { amount, .. } => {
                    cancelled_seen += amount;
                    held -= amount;
                }
                Fact::Charge { reference, pto, amount } => {
                    let slot = charges.entry(*reference).or_insert((pto.clone(), 0));
                    slot.1 += amount;
                }
                Fact::Adjust { reference, amount, .. } => {
                    if let Some(slot) = charges.get_mut(reference) {
                        slot.1 -= amount;
                    }
                }
                Fact::Grant { amount, .. } => t.credit += amount,
                Fact::Spend { amount, .. } => t.credit -= amount,
                Fact::PtoLog { pto, reference, fare } => {
                    *pto_log.entry((pto.clone(), *reference)).or_default() += fare;
                }
            }
        }
        t.held = held;
        t.unredeemed = t.payments - t.refunds - (seen_total - cancelled_seen);

        let mut out = Vec::new();
        for (r, payouts) in &paid {
            if payouts.len() > 1 {
                out.push(Discrepancy::DupPayout {
                    reference: *r,
                    count: payouts.len(),
                });
            }
            match charges.get(r) {
                None => {
                    for (pto, a) in payouts {
                        out.push(Discrepancy::OrphanPayout {
                            reference: *r,
                            pto: pto.clone(),
                            amount: *a,
                        });
                    }
                }
                Some((_, charged)) => {
                    // the paid amount net of clawbacks must match the net charge
                    let net = payouts.iter().map(|(_, a)| a).sum::<Cents>() - clawed.get(r).copied().unwrap_or(0);
                    if payouts.len() == 1 && net != *charged {
                        out.push(Discrepancy::PayoutMismatch {
                            reference: *r,
                            charged: *charged,
                            paid: net,
                        });
                    }
                }
            }
        }
        for (r, (pto, amount)) in &charges {
            if !paid.contains_key(r) {
                t.payable += amount;
                if settled {
                    out.push(Discrepancy::MissingPayout {
                        reference: *r,
                        pto: pto.clone(),
                        amount: *amount,
                    });
                }
            }
        }
        let refs: BTreeSet<&(String, Seqno)> = pto_log.keys().collect();
        for (pto, r) in refs {
            let logged = pto_log[&(pto.clone(), *r)];
            let received: Cents = paid
                .get(r)
                .map(|v| v.iter().filter(|(p, _)| p == pto).map(|(_, a)| a).sum())
                .unwrap_or(0)
                - clawed.get(r).copied().unwrap_or(0);
            let pending = !paid.contains_key(r) && !settled;
            if !pending && logged != received {
                out.push(Discrepancy::PtoLogMismatch {
                    reference: *r,
                    pto: pto.clone(),
                    logged,
                    received,
                });
            }
        }
        let lhs = t.payments - t.refunds;
        let rhs = t.payouts - t.clawbacks + t.unredeemed + t.held + t.credit + t.payable;
        if lhs != rhs {
            out.push(Discrepancy::Balance { lhs, rhs });
        }
        out.sort();
        Report {
            totals: t,
            discrepancies: out,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn r(i: u8) -> Seqno {
        [i; 16]
    }

    fn pay(amount: Cents, service: Service) -> Entry {
        Entry::Payment {
            payer: "u".into(),
            amount,
            service,
        }
    }

    /// One ticket bought, handed in and settled; one receipt left unused.
    fn ticket_books() -> Books {
        let mut b = Books::default();
        b.entries.push(pay(360, Service::Pto));
        b.entries.push(pay(240, Service::Pto));
        b.entries.push(Entry::Transfer { amount: 600 });
        b.facts.push(Fact::Seen {
            reference: r(1),
            service: Service::Pto,
            amount: 360,
        });
        b.facts.push(Fact::PtoLog {
            pto: "metro".into(),
            reference: r(1),
            fare: 360,
        });
        b.facts.push(Fact::Claimed {
            reference: r(1),
            amount: 360,
        });
        b.facts.push(Fact::Charge {
            reference: r(1),
            pto: "metro".into(),
            amount: 360,
        });
        b.entries.push(Entry::Payout {
            pto: "metro".into(),
            items: vec![(r(1), 360)],
        });
        b
    }

    #[test]
    fn clean_books_balance_with_unredeemed_receipt() {
        let report = ticket_books().reconcile(true);
        assert!(report.is_clean(), "{report}");
        assert_eq!(report.totals.unredeemed, 240);
        assert_eq!(report.exit_code(), 0);
    }

    #[test]
    fn duplicated_payout_is_flagged_once() {
        let mut b = ticket_books();
        b.entries.push(Entry::Payout {
            pto: "metro".into(),
            items: vec![(r(1), 360)],
        });
        let report = b.reconcile(true);
        let codes: Vec<_> = report.discrepancies.iter().map(Discrepancy::code).collect();
        assert!(codes.contains(&"DUP_PAYOUT"));
        assert!(codes.contains(&"BALANCE"));
        assert_eq!(codes.iter().filter(|c| **c == "DUP_PAYOUT").count(), 1);
        assert_eq!(report.exit_code(), 1);
    }

    #[test]
    fn credit_trip_with_overcharge_and_clawback() {
        let mut b = Books::default();
        b.entries.push(pay(2500, Service::Ptc));
        b.entries.push(Entry::Transfer { amount: 2500 });
        b.facts.push(Fact::Seen {
            reference: r(1),
            service: Service::Ptc,
            amount: 2500,
        });
        b.facts.push(Fact::Grant {
            reference: r(1),
            amount: 2500,
        });
        // check-out: fare 320 but 420 deducted and paid
        b.facts.push(Fact::PtoLog {
            pto: "metro".into(),
            reference: r(2),
            fare: 320,
        });
        b.facts.push(Fact::Spend {
            reference: r(2),
            amount: 2500,
        });
        b.facts.push(Fact::Grant {
            reference: r(2),
            amount: 2080,
        });
        b.facts.push(Fact::Charge {
            reference: r(2),
            pto: "metro".into(),
            amount: 420,
        });
        b.entries.push(Entry::Payout {
            pto: "metro".into(),
            items: vec![(r(2), 420)],
        });
        let before = b.reconcile(true);
        assert_eq!(
            before.discrepancies.iter().map(Discrepancy::code).collect::<Vec<_>>(),
            ["PTO_LOG_MISMATCH"]
        );
        // dispute: current token 2080 exchanged for 2180, 100 clawed back
        b.facts.push(Fact::Spend {
            reference: r(3),
            amount: 2080,
        });
        b.facts.push(Fact::Grant {
            reference: r(3),
            amount: 2180,
        });
        b.facts.push(Fact::Adjust {
            reference: r(2),
            pto: "metro".into(),
            amount: 100,
        });
        b.entries.push(Entry::Clawback {
            pto: "metro".into(),
            reference: r(2),
            amount: 100,
        });
        let after = b.reconcile(true);
        assert!(after.is_clean(), "{after}");
        assert_eq!(after.totals.credit, 2180);
    }

    #[test]
    fn missing_payout_only_when_settled() {
        let mut b = ticket_books();
        b.entries.pop();
        assert!(b.reconcile(false).is_clean());
        let settled = b.reconcile(true);
        assert!(settled.discrepancies.iter().any(|d| d.code() == "MISSING_PAYOUT"));
    }

    #[test]
    fn orphan_payout_is_flagged() {
        let mut b = ticket_books();
        b.entries.push(Entry::Payout {
            pto: "metro".into(),
            items: vec![(r(9), 50)],
        });
        let codes: Vec<_> = b.reconcile(true).discrepancies.iter().map(|d| d.code()).collect();
        assert!(codes.contains(&"ORPHAN_PAYOUT"));
    }

    #[test]
    fn trace_lines_round_trip() {
        let b = ticket_books();
        let mut trace = String::new();
        for e in &b.entries {
            trace.push_str(&format!("[t=1] LEDGER {e}\n"));
        }
        for f in &b.facts {
            trace.push_str(&format!("FACT {f}\n"));
        }
        let back = Books::from_trace(&trace).unwrap();
        assert_eq!(back, b);
    }

    #[test]
    fn outbox_drops_unsynced_on_crash() {
        let mut o = Outbox::default();
        o.push(1);
        assert_eq!(o.sync(), vec![1]);
        o.push(2);
        o.crash();
        assert!(o.sync().is_empty());
    }

    proptest! {
        #[test]
        fn balances_are_a_conserving_fold(amounts in prop::collection::vec(1i64..5000, 1..40)) {
            let mut b = Books::default();
            for (i, a) in amounts.iter().enumerate() {
                b.entries.push(pay(*a, Service::Pto));
                if i % 3 == 0 {
                    b.entries.push(Entry::Refund { payer: "u".into(), amount: *a });
                }
            }
            b.entries.push(Entry::Transfer { amount: amounts.iter().sum::<i64>() / 2 });
            let total: Cents = b.balances().values().sum();
            prop_assert_eq!(total, 0);
        }
    }
}
