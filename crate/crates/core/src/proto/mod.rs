//! Actors of both ticketing protocols.
//!
//! Every actor owns its keys, journals and outbox. Methods mutate state
//! without syncing; the caller decides when to [`sync`](Ptc::sync) and when to
//! send, so crash placement stays under the harness's control.

pub mod payg;
pub mod tickets;
pub mod user;

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::RngCore;
use thiserror::Error;

use crate::audit::{Attr, Knowledge, Party};
use crate::crypto::{GroupParams, KeyPair, PublicKey};
use crate::devicelog::LogSlice;
use crate::journal::Journal;
use crate::ledger::{Entry, Fact, Outbox, Posting};
use crate::pbs::PublicPart;
use crate::registry::{Reject, SeqnoRegistry, Stamp, Submit, TokenKind};
use crate::session::{Admission, DisputeOutcome, IssueMsg, SessionError, SessionId, SignerSessions};
use crate::tokens::{
    FareTable, Network, short, CheckinToken, CheckoutRecord, Cents, CreditToken, Receipt, Seqno, Service, TokenError, CREDIT_LABEL,
};
use crate::wire::{envelope, open_envelope, TlvReader, TlvWriter, WireError};

#[derive(Debug, Error)]
pub enum ProtoError {
    #[error(transparent)]
    Session(#[from] SessionError),
    #[error(transparent)]
    Token(#[from] TokenError),
    #[error(transparent)]
    Wire(#[from] WireError),
    #[error("registry: {0}")]
    Registry(#[from] Reject),
    #[error("rejected: {0}")]
    Rejected(String),
    #[error("{0} unreachable")]
    Unreachable(&'static str),
}

/// Tunables shared by every actor.
#[derive(Clone, Debug)]
pub struct Config {
    /// Minimum credit at check-in; defaults to the ceiling fare.
    pub min_credit: Option<Cents>,
    pub topup_values: Vec<Cents>,
    /// Fine amount; defaults to fifty times the ceiling fare.
    pub fine: Option<Cents>,
    pub strict_inspection: bool,
    pub optimistic_checkin: bool,
    pub checkin_ack: bool,
    /// Seeded clearinghouse fault: extra cents deducted at every check-out.
    pub overcharge: Cents,
    pub slack: u64,
    /// Lazy finalization and fare disputes hide the user address.
    pub hide_address: bool,
    pub census_threshold: usize,
    pub retry_ticks: u64,
    pub max_retries: u32,
    pub restart_ticks: u64,
    pub stale_ticks: u64,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            min_credit: None,
            topup_values: vec![1000, 2500, 5000, 10000],
            fine: None,
            strict_inspection: true,
            optimistic_checkin: false,
            checkin_ack: true,
            overcharge: 0,
            slack: 2,
            hide_address: true,
            census_threshold: 10,
            retry_ticks: 30,
            max_retries: 5,
            restart_ticks: 50,
            stale_ticks: 200,
        }
    }
}

impl Config {
    /// Apply one `key value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        let num = || value.parse::<i64>().map_err(|_| format!("{key}: not a number: {value}"));
        let flag = || match value {
            "on" | "true" | "yes" => Ok(true),
            "off" | "false" | "no" => Ok(false),
            _ => Err(format!("{key}: expected on/off, got {value}")),
        };
        match key {
            "min_credit" => self.min_credit = Some(num()?),
            "topup_values" => {
                self.topup_values = value
                    .split(',')
                    .map(|v| v.parse().map_err(|_| format!("topup_values: {v}")))
                    .collect::<Result<_, _>>()?
            }
            "fine" => self.fine = Some(num()?),
            "strict_inspection" => self.strict_inspection = flag()?,
            "optimistic_checkin" => self.optimistic_checkin = flag()?,
            "checkin_ack" => self.checkin_ack = flag()?,
            "overcharge" => self.overcharge = num()?,
            "slack" => self.slack = num()? as u64,
            "hide_address" => self.hide_address = flag()?,
            "census_threshold" => self.census_threshold = num()? as usize,
            "retry_ticks" => self.retry_ticks = num()? as u64,
            "max_retries" => self.max_retries = num()? as u32,
            "restart_ticks" => self.restart_ticks = num()? as u64,
            "stale_ticks" => self.stale_ticks = num()? as u64,
            _ => return Err(format!("unknown setting {key}")),
        }
        Ok(())
    }
}

/// Public keys every party may look up.
#[derive(Clone, Debug)]
pub struct Directory {
    pub psp: PublicKey,
    pub ptc: PublicKey,
    pub ptos: BTreeMap<String, PublicKey>,
}

impl Directory {
    pub fn pto(&self, name: &str) -> Result<&PublicKey, ProtoError> {
        self.ptos
            .get(name)
            .ok_or_else(|| ProtoError::Rejected(format!("unknown operator {name}")))
    }
}

/// Immutable context shared by all actors of one deployment.
#[derive(Clone, Debug)]
pub struct Env {
    pub params: Arc<GroupParams>,
    pub network: Network,
    pub fares: FareTable,
    pub config: Config,
    pub dir: Directory,
}

impl Env {
    pub fn min_credit(&self) -> Cents {
        self.config.min_credit.unwrap_or(self.fares.ceiling)
    }

    pub fn fine(&self) -> Cents {
        self.config.fine.unwrap_or(50 * self.fares.ceiling)
    }

    pub fn day(now: u64) -> u32 {
        (now / 86_400) as u32
    }
}

/// Where a message goes. `Ptc` with `via` is relayed by a gate.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Dest {
    Psp,
    Ptc { via: Option<String> },
    Pto(String),
    Gate(String),
}

/// Labels of the flows that can carry faults.
pub mod flow {
    pub const BUY_RECEIPT: &str = "buy/receipt";
    pub const BUY_TICKET: &str = "buy/ticket";
    pub const REISSUE_TICKET: &str = "reissue/ticket";
    pub const TOPUP_RECEIPT: &str = "topup/receipt";
    pub const OPEN_CREDIT: &str = "open/credit";
    pub const CHECKOUT_CREDIT: &str = "checkout/credit";
    pub const LAZY_CREDIT: &str = "lazy/credit";
    pub const DISPUTE_CREDIT: &str = "dispute/credit";
    pub const CHECKIN: &str = "checkin";
    pub const CHECKOUT: &str = "checkout";

    pub const ISSUANCE: [&str; 8] = [
        BUY_RECEIPT,
        BUY_TICKET,
        REISSUE_TICKET,
        TOPUP_RECEIPT,
        OPEN_CREDIT,
        CHECKOUT_CREDIT,
        LAZY_CREDIT,
        DISPUTE_CREDIT,
    ];
}

/// Non-issuance traffic between a traveller and a gate.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum GateMsg {
    CheckinRequest { credit: CreditToken, head: [u8; 32] },
    CheckinIssued(CheckinToken),
    CheckinAck { seqno: Seqno },
    CheckoutPresent { token: CheckinToken, receipt: Option<Receipt>, head: [u8; 32], lazy: bool },
    CheckoutIssued(CheckoutRecord),
    Refused { credit_seqno: Seqno, reason: String },
}

impl GateMsg {
    pub fn name(&self) -> &'static str {
        match self {
            GateMsg::CheckinRequest { .. } => "CheckinRequest",
            GateMsg::CheckinIssued(_) => "CheckinIssued",
            GateMsg::CheckinAck { .. } => "CheckinAck",
            GateMsg::CheckoutPresent { .. } => "CheckoutPresent",
            GateMsg::CheckoutIssued(_) => "CheckoutIssued",
            GateMsg::Refused { .. } => "Refused",
        }
    }

    pub fn step(&self) -> u8 {
        match self {
            GateMsg::CheckinRequest { .. } | GateMsg::CheckoutPresent { .. } => 0,
            GateMsg::CheckinIssued(_) | GateMsg::CheckoutIssued(_) | GateMsg::Refused { .. } => 1,
            GateMsg::CheckinAck { .. } => 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Payload {
    Issue(IssueMsg),
    Gate(GateMsg),
}

impl Payload {
    pub fn name(&self) -> &'static str {
        match self {
            Payload::Issue(m) => m.name(),
            Payload::Gate(m) => m.name(),
        }
    }

    pub fn step(&self) -> Option<u8> {
        match self {
            Payload::Issue(m) => m.step(),
            Payload::Gate(m) => Some(m.step()),
        }
    }
}

/// What a traveller asks a signer for, carried in the session request.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Order {
    Payment { payer: String, service: Service, amount: Cents },
    Ticket { receipt: Vec<u8>, returned: Option<Vec<u8>> },
    Open { receipt: Vec<u8> },
    Checkout { record: Vec<u8> },
    FareDispute { slice: Vec<u8>, current: Vec<u8> },
}

mod order {
    pub const PAYMENT: u8 = 0x40;
    pub const TICKET: u8 = 0x41;
    pub const OPEN: u8 = 0x42;
    pub const CHECKOUT: u8 = 0x43;
    pub const DISPUTE: u8 = 0x44;

    pub const TEXT: u8 = 1;
    pub const MONEY: u8 = 2;
    pub const BLOB: u8 = 3;
    pub const EXTRA: u8 = 4;
}

impl Order {
    pub fn encode(&self) -> Vec<u8> {
        let mut w = TlvWriter::new();
        let typ = match self {
            Order::Payment { payer, service, amount } => {
                w.str(order::TEXT, payer).str(order::TEXT, service.name()).i64(order::MONEY, *amount);
                order::PAYMENT
            }
            Order::Ticket { receipt, returned } => {
                w.bytes(order::BLOB, receipt);
                if let Some(t) = returned {
                    w.bytes(order::EXTRA, t);
                }
                order::TICKET
            }
            Order::Open { receipt } => {
                w.bytes(order::BLOB, receipt);
                order::OPEN
            }
            Order::Checkout { record } => {
                w.bytes(order::BLOB, record);
                order::CHECKOUT
            }
            Order::FareDispute { slice, current } => {
                w.bytes(order::BLOB, slice).bytes(order::EXTRA, current);
                order::DISPUTE
            }
        };
        envelope(typ, &w.finish())
    }

    pub fn decode(bytes: &[u8]) -> Result<Order, ProtoError> {
        let (typ, body) = open_envelope(bytes)?;
        let mut r = TlvReader::new(body);
        let order = match typ {
            order::PAYMENT => {
                let payer = r.str(order::TEXT)?.to_string();
                let service = Service::parse(r.str(order::TEXT)?).ok_or(TokenError::Malformed("service"))?;
                let amount = r.i64(order::MONEY)?;
                Order::Payment { payer, service, amount }
            }
            order::TICKET => Order::Ticket {
                receipt: r.expect(order::BLOB)?.to_vec(),
                returned: r.optional(order::EXTRA)?.map(<[u8]>::to_vec),
            },
            order::OPEN => Order::Open {
                receipt: r.expect(order::BLOB)?.to_vec(),
            },
            order::CHECKOUT => Order::Checkout {
                record: r.expect(order::BLOB)?.to_vec(),
            },
            order::DISPUTE => Order::FareDispute {
                slice: r.expect(order::BLOB)?.to_vec(),
                current: r.expect(order::EXTRA)?.to_vec(),
            },
            _ => return Err(TokenError::Malformed("order").into()),
        };
        r.finish()?;
        Ok(order)
    }
}

/// Answer a session message on the signer side. Disputes go to the
/// transcript-based resolution; everything else to the normal handler.
fn signer_step<R: RngCore + ?Sized>(
    sessions: &mut SignerSessions,
    key: &KeyPair,
    msg: &IssueMsg,
    now: u64,
    rng: &mut R,
    admit: impl FnOnce(&SessionId, &[u8]) -> Admission,
) -> Result<(Option<IssueMsg>, Option<DisputeOutcome>), ProtoError> {
    if let IssueMsg::Dispute { sid, commitment } = msg {
        return match sessions.resolve_signature_dispute(sid, commitment, now, rng) {
            Ok((outcome, reply)) => Ok((reply, Some(outcome))),
            Err(SessionError::UnknownSession(_)) => Ok((
                Some(IssueMsg::Reject {
                    sid: *sid,
                    reason: "no such session".into(),
                }),
                Some(DisputeOutcome::Rejected("no such session".into())),
            )),
            Err(e) => Err(e.into()),
        };
    }
    Ok((sessions.handle(key, msg, now, rng, admit)?, None))
}

fn refuse(reason: impl Into<String>) -> Admission {
    Admission::Refuse(reason.into())
}

/// Payment service provider: takes payments and blind-signs receipts.
pub struct Psp {
    key: KeyPair,
    pub sessions: SignerSessions,
    pub outbox: Outbox<Posting>,
    /// Received but not yet transferred to the clearinghouse.
    pending: crate::journal::Durable<Cents>,
}

impl Psp {
    pub fn new(params: Arc<GroupParams>, key: KeyPair) -> Psp {
        Psp {
            key,
            sessions: SignerSessions::new(params),
            outbox: Outbox::default(),
            pending: crate::journal::Durable::new(0),
        }
    }

    pub fn public(&self) -> &PublicKey {
        self.key.public()
    }

    pub fn handle<R: RngCore + ?Sized>(
        &mut self,
        env: &Env,
        msg: &IssueMsg,
        addr: Option<&str>,
        now: u64,
        rng: &mut R,
        know: &mut Knowledge,
    ) -> Result<(Option<IssueMsg>, Option<DisputeOutcome>), ProtoError> {
        let outbox = &mut self.outbox;
        let pending = &mut self.pending;
        signer_step(&mut self.sessions, &self.key, msg, now, rng, |_, attachment| {
            let Ok(Order::Payment { payer, service, amount }) = Order::decode(attachment) else {
                return refuse("not a payment order");
            };
            match service {
                Service::Ptc if !env.config.topup_values.contains(&amount) => {
                    return refuse(format!("{amount} is not a predefined credit value"))
                }
                Service::Pto if !env.fares.is_valid_fare(amount) => return refuse(format!("{amount} is not a fare")),
                _ => {}
            }
            outbox.push(Posting::Ledger(Entry::Payment {
                payer: payer.clone(),
                amount,
                service,
            }));
            *pending.get_mut() += amount;
            let value = match service {
                Service::Pto => Attr::Fare(amount),
                Service::Ptc => Attr::TopupValue(amount),
            };
            let mut attrs = vec![Attr::User(payer), value];
            if let Some(a) = addr {
                attrs.insert(1, Attr::Addr(a.to_string()));
            }
            know.record(Party::Psp, now, attrs);
            Admission::Accept {
                public_part: Receipt::public_part(service, amount),
                attachment: Vec::new(),
            }
        })
    }

    /// Forward everything collected since the last transfer, or pull back
    /// refunds already transferred.
    pub fn transfer(&mut self) -> Option<Cents> {
        let amount = *self.pending.get();
        if amount == 0 {
            return None;
        }
        self.outbox.push(Posting::Ledger(Entry::Transfer { amount }));
        *self.pending.get_mut() = 0;
        Some(amount)
    }

    /// Refund a receipt after the clearinghouse has blocked it. With
    /// `after_return` the receipt's ticket must already have been released
    /// by its operator.
    pub fn cancel(&mut self, env: &Env, ptc: &mut Ptc, payer: &str, receipt: &Receipt, after_return: bool) -> Result<(), ProtoError> {
        if !receipt.verify(&env.params, &env.dir.psp) {
            return Err(ProtoError::Rejected("receipt does not verify".into()));
        }
        ptc.cancel_receipt(receipt, after_return)?;
        self.outbox.push(Posting::Ledger(Entry::Refund {
            payer: payer.to_string(),
            amount: receipt.fare,
        }));
        *self.pending.get_mut() -= receipt.fare;
        Ok(())
    }

    pub fn sync(&mut self) -> Vec<Posting> {
        self.sessions.journal_mut().sync();
        self.pending.sync();
        self.outbox.sync()
    }

    pub fn crash(&mut self) {
        self.sessions.journal_mut().crash();
        self.pending.crash();
        self.outbox.crash();
    }
}

/// A check-out the clearinghouse has booked but not yet issued credit for.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PendingCredit {
    pub value: Cents,
    pub bound: Option<SessionId>,
}

/// Clearinghouse record of one check-out.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CheckoutEntry {
    pub operator: String,
    pub fare: Cents,
    pub deducted: Cents,
    pub topup: Cents,
    pub receipt: Option<Seqno>,
    pub credit_in: Cents,
    pub credit_out: Cents,
    pub disputed: bool,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Payable {
    pub pto: String,
    pub amount: Cents,
    pub paid: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SettleReport {
    pub paid: Vec<(Seqno, Cents)>,
    pub flagged: Vec<(Seqno, String)>,
}

impl SettleReport {
    pub fn total(&self) -> Cents {
        self.paid.iter().map(|(_, a)| a).sum()
    }
}

/// Public transport clearinghouse: registries, credit issuance, settlement.
pub struct Ptc {
    key: KeyPair,
    pub sessions: SignerSessions,
    pub registry: SeqnoRegistry,
    pub outbox: Outbox<Posting>,
    pending: Journal<Seqno, PendingCredit>,
    checkouts: Journal<Seqno, CheckoutEntry>,
    payables: Journal<Seqno, Payable>,
}

impl Ptc {
    pub fn new(params: Arc<GroupParams>, key: KeyPair) -> Ptc {
        Ptc {
            key,
            sessions: SignerSessions::new(params),
            registry: SeqnoRegistry::new(),
            outbox: Outbox::default(),
            pending: Journal::new(),
            checkouts: Journal::new(),
            payables: Journal::new(),
        }
    }

    pub fn public(&self) -> &PublicKey {
        self.key.public()
    }

    pub fn checkout_entry(&self, credit_seqno: &Seqno) -> Option<&CheckoutEntry> {
        self.checkouts.get(credit_seqno)
    }

    /// Booked check-outs whose next credit token no session has claimed.
    pub fn unclaimed_credit(&self) -> Vec<Seqno> {
        self.pending.iter().filter(|(_, p)| p.bound.is_none()).map(|(k, _)| *k).collect()
    }

    pub fn payables(&self) -> impl Iterator<Item = (&Seqno, &Payable)> {
        self.payables.iter()
    }

    fn fact(&mut self, f: Fact) {
        self.outbox.push(Posting::Fact(f));
    }

    /// An operator hands in a ticket receipt. Idempotent per claimant.
    pub fn submit_receipt(
        &mut self,
        env: &Env,
        receipt: &Receipt,
        claimant: &str,
        now: u64,
        know: &mut Knowledge,
    ) -> Result<Submit, ProtoError> {
        if receipt.service != Service::Pto || !receipt.verify(&env.params, &env.dir.psp) {
            return Err(ProtoError::Rejected("receipt does not verify".into()));
        }
        let outcome = self.registry.submit(TokenKind::Receipt, &receipt.seqno, claimant, receipt.fare)?;
        if outcome == Submit::Accepted {
            self.fact(Fact::Seen {
                reference: receipt.seqno,
                service: Service::Pto,
                amount: receipt.fare,
            });
            know.record(Party::Ptc, now, vec![Attr::ReceiptSeq(receipt.seqno), Attr::Fare(receipt.fare)]);
        }
        Ok(outcome)
    }

    /// Whether `seqno` was handed in by `pto`, settled or not.
    pub fn holds_receipt(&self, seqno: &Seqno, pto: &str) -> bool {
        use crate::registry::SeqnoState::{Claimed, Submitted};
        matches!(
            self.registry.get(TokenKind::Receipt, seqno).map(|r| &r.state),
            Some(Submitted { claimant } | Claimed { claimant }) if claimant.split('#').next() == Some(pto)
        )
    }

    /// Block an unused receipt, or one whose ticket came back.
    pub fn cancel_receipt(&mut self, receipt: &Receipt, after_return: bool) -> Result<(), ProtoError> {
        let seen = self.registry.get(TokenKind::Receipt, &receipt.seqno).is_some();
        self.registry.cancel(TokenKind::Receipt, &receipt.seqno, receipt.fare, after_return)?;
        if seen {
            self.fact(Fact::CancelSeen {
                reference: receipt.seqno,
                amount: receipt.fare,
            });
        }
        Ok(())
    }

    /// Pay an operator for its receipts and for every check-out fare queued
    /// for it. Duplicates and foreign receipts are flagged, not paid.
    pub fn settle(&mut self, env: &Env, pto: &str, receipts: &[Receipt]) -> SettleReport {
        let mut report = SettleReport::default();
        for r in receipts {
            if !r.verify(&env.params, &env.dir.psp) {
                report.flagged.push((r.seqno, "receipt does not verify".into()));
                continue;
            }
            match self.registry.claim(TokenKind::Receipt, &r.seqno, pto) {
                Ok(amount) => {
                    self.fact(Fact::Claimed {
                        reference: r.seqno,
                        amount,
                    });
                    self.fact(Fact::Charge {
                        reference: r.seqno,
                        pto: pto.to_string(),
                        amount,
                    });
                    report.paid.push((r.seqno, amount));
                }
                Err(e) => report.flagged.push((r.seqno, e.to_string())),
            }
        }
        let due: Vec<(Seqno, Cents)> = self
            .payables
            .iter()
            .filter(|(_, p)| p.pto == pto && !p.paid)
            .map(|(k, p)| (*k, p.amount))
            .collect();
        for (k, amount) in due {
            self.payables.update(&k, |p| p.paid = true);
            report.paid.push((k, amount));
        }
        if !report.paid.is_empty() {
            self.outbox.push(Posting::Ledger(Entry::Payout {
                pto: pto.to_string(),
                items: report.paid.clone(),
            }));
        }
        report
    }

    /// Register a check-in. A repeat from the same station returns the
    /// original stamp, so a gate that lost its reply can sign it again.
    pub fn checkin(&mut self, env: &Env, credit: &CreditToken, at: Stamp, now: u64, know: &mut Knowledge) -> Result<Stamp, ProtoError> {
        if !credit.verify(&env.params, self.key.public()) {
            return Err(ProtoError::Rejected("credit token does not verify".into()));
        }
        if let Some(crate::registry::SeqnoState::CheckedIn { at: first, .. }) =
            self.registry.get(TokenKind::Credit, &credit.seqno).map(|r| &r.state)
        {
            if first.location == at.location && !self.registry.is_blacklisted(&credit.seqno) {
                return Ok(first.clone());
            }
        }
        self.registry.checkin(&credit.seqno, credit.value, at.clone())?;
        know.record(Party::Ptc, now, vec![Attr::CreditSeq(credit.seqno), Attr::CreditIn(credit.value)]);
        Ok(at)
    }

    /// Forget a check-in whose token never reached the traveller.
    pub fn clear_checkin(&mut self, env: &Env, credit: &CreditToken) -> Result<(), ProtoError> {
        if !credit.verify(&env.params, self.key.public()) {
            return Err(ProtoError::Rejected("credit token does not verify".into()));
        }
        self.registry.dispute_clear(&credit.seqno)?;
        Ok(())
    }

    pub fn inspect(&mut self, env: &Env, token: &CheckinToken, leg: crate::tokens::Leg, now: u64, know: &mut Knowledge) -> Result<(), ProtoError> {
        if !token.verify(&env.params, env.dir.pto(&token.operator)?) {
            return Err(ProtoError::Rejected("check-in token does not verify".into()));
        }
        know.record(
            Party::Ptc,
            now,
            vec![Attr::CreditSeq(token.credit_seqno), Attr::Location(leg.to_string()), Attr::Time(now)],
        );
        self.registry.inspect(&token.credit_seqno, leg, now, &env.network)?;
        Ok(())
    }

    /// The check-out device's signed transfer: spend the checked-in token,
    /// add the optional top-up, deduct the fare and owe it to the operator.
    /// Repeating a transfer for the same token returns the booked result.
    pub fn checkout(
        &mut self,
        env: &Env,
        record: &CheckoutRecord,
        receipt: Option<&Receipt>,
        now: u64,
        know: &mut Knowledge,
    ) -> Result<CheckoutEntry, ProtoError> {
        if !record.verify(&env.params, env.dir.pto(&record.operator)?) {
            return Err(ProtoError::Rejected("check-out record does not verify".into()));
        }
        let cs = record.credit_seqno;
        if let Some(done) = self.checkouts.get(&cs) {
            return Ok(done.clone());
        }
        let (credit_in, _) = self.registry.spend(&cs)?;
        let mut topup = 0;
        let mut rseq = None;
        if let Some(r) = receipt {
            let ok = r.service == Service::Ptc && r.verify(&env.params, &env.dir.psp);
            if ok {
                if let Ok(Submit::Accepted) = self.registry.redeem(TokenKind::Receipt, &r.seqno, &hex::encode(cs), r.fare) {
                    topup = r.fare;
                    rseq = Some(r.seqno);
                    self.fact(Fact::Seen {
                        reference: r.seqno,
                        service: Service::Ptc,
                        amount: r.fare,
                    });
                }
            }
        }
        let deducted = record.fare + env.config.overcharge;
        let credit_out = credit_in + topup - deducted;
        let entry = CheckoutEntry {
            operator: record.operator.clone(),
            fare: record.fare,
            deducted,
            topup,
            receipt: rseq,
            credit_in,
            credit_out,
            disputed: false,
        };
        self.fact(Fact::Spend {
            reference: cs,
            amount: credit_in,
        });
        self.fact(Fact::Grant {
            reference: cs,
            amount: credit_out,
        });
        self.fact(Fact::Charge {
            reference: cs,
            pto: record.operator.clone(),
            amount: deducted,
        });
        self.payables.put(
            cs,
            Payable {
                pto: record.operator.clone(),
                amount: deducted,
                paid: false,
            },
        );
        self.pending.put(
            cs,
            PendingCredit {
                value: credit_out,
                bound: None,
            },
        );
        self.checkouts.put(cs, entry.clone());
        know.record(Party::Ptc, now, vec![Attr::Location(record.location.clone()), Attr::Time(record.time)]);
        let mut attrs = vec![Attr::CreditSeq(cs), Attr::CreditIn(credit_in), Attr::Fare(record.fare)];
        if let Some(r) = rseq {
            attrs.push(Attr::ReceiptSeq(r));
            attrs.push(Attr::TopupValue(topup));
        }
        attrs.push(Attr::CreditOut(credit_out));
        know.record(Party::Ptc, now, attrs);
        Ok(entry)
    }

    /// Issuance of credit tokens: opening, after check-out, and fare disputes.
    /// `source` is what the clearinghouse observes about the sender: its
    /// address, the relaying gate, or nothing over a hidden channel.
    pub fn handle<R: RngCore + ?Sized>(
        &mut self,
        env: &Env,
        msg: &IssueMsg,
        source: Option<Attr>,
        now: u64,
        rng: &mut R,
        know: &mut Knowledge,
    ) -> Result<(Option<IssueMsg>, Option<DisputeOutcome>), ProtoError> {
        let Ptc {
            key,
            sessions,
            registry,
            outbox,
            pending,
            checkouts,
            payables,
        } = self;
        signer_step(sessions, key, msg, now, rng, |sid, attachment| {
            let accept = |value: Cents| Admission::Accept {
                public_part: PublicPart::new(CREDIT_LABEL, value).expect("label"),
                attachment: Vec::new(),
            };
            let seen_from = |attrs: &mut Vec<Attr>| {
                if let Some(a) = &source {
                    attrs.insert(0, a.clone());
                }
            };
            match Order::decode(attachment) {
                Ok(Order::Open { receipt }) => {
                    let Ok(r) = Receipt::decode(&env.params, &receipt) else {
                        return refuse("malformed receipt");
                    };
                    if r.service != Service::Ptc || !r.verify(&env.params, &env.dir.psp) {
                        return refuse("receipt does not verify");
                    }
                    match registry.redeem(TokenKind::Receipt, &r.seqno, &format!("open#{}", hex::encode(sid)), r.fare) {
                        Ok(_) => {}
                        Err(e) => return refuse(e.to_string()),
                    }
                    outbox.push(Posting::Fact(Fact::Seen {
                        reference: r.seqno,
                        service: Service::Ptc,
                        amount: r.fare,
                    }));
                    outbox.push(Posting::Fact(Fact::Grant {
                        reference: r.seqno,
                        amount: r.fare,
                    }));
                    let mut attrs = vec![Attr::ReceiptSeq(r.seqno), Attr::TopupValue(r.fare), Attr::CreditOut(r.fare)];
                    seen_from(&mut attrs);
                    know.record(Party::Ptc, now, attrs);
                    accept(r.fare)
                }
                Ok(Order::Checkout { record }) => {
                    let Ok(rec) = CheckoutRecord::decode(&env.params, &record) else {
                        return refuse("malformed check-out record");
                    };
                    let Ok(pto_key) = env.dir.pto(&rec.operator) else {
                        return refuse("unknown operator");
                    };
                    if !rec.verify(&env.params, pto_key) {
                        return refuse("check-out record does not verify");
                    }
                    let Some(p) = pending.get(&rec.credit_seqno).cloned() else {
                        return refuse(format!("no check-out booked for {}", short(&rec.credit_seqno)));
                    };
                    if p.bound.is_some_and(|b| b != *sid) {
                        return refuse(format!("credit for {} already issued", short(&rec.credit_seqno)));
                    }
                    pending.update(&rec.credit_seqno, |p| p.bound = Some(*sid));
                    let mut attrs = vec![Attr::CreditSeq(rec.credit_seqno), Attr::CreditOut(p.value)];
                    seen_from(&mut attrs);
                    know.record(Party::Ptc, now, attrs);
                    accept(p.value)
                }
                Ok(Order::FareDispute { slice, current }) => {
                    match fare_dispute(env, key.public(), registry, checkouts, &slice, &current) {
                        Ok((cs, current, diff, operator)) => {
                            checkouts.update(&cs, |c| c.disputed = true);
                            outbox.push(Posting::Fact(Fact::Spend {
                                reference: current.seqno,
                                amount: current.value,
                            }));
                            outbox.push(Posting::Fact(Fact::Grant {
                                reference: current.seqno,
                                amount: current.value + diff,
                            }));
                            outbox.push(Posting::Fact(Fact::Adjust {
                                reference: cs,
                                pto: operator.clone(),
                                amount: diff,
                            }));
                            let paid = payables.get(&cs).is_some_and(|p| p.paid);
                            if paid {
                                outbox.push(Posting::Ledger(Entry::Clawback {
                                    pto: operator,
                                    reference: cs,
                                    amount: diff,
                                }));
                            } else {
                                payables.update(&cs, |p| p.amount -= diff);
                            }
                            let mut attrs = vec![
                                Attr::CreditSeq(cs),
                                Attr::CreditSeq(current.seqno),
                                Attr::CreditIn(current.value),
                                Attr::CreditOut(current.value + diff),
                            ];
                            seen_from(&mut attrs);
                            know.record(Party::Ptc, now, attrs);
                            accept(current.value + diff)
                        }
                        Err(reason) => refuse(reason),
                    }
                }
                _ => refuse("not a credit order"),
            }
        })
    }

    pub fn sync(&mut self) -> Vec<Posting> {
        self.sessions.journal_mut().sync();
        self.registry.sync();
        self.pending.sync();
        self.checkouts.sync();
        self.payables.sync();
        self.outbox.sync()
    }

    pub fn crash(&mut self) {
        self.sessions.journal_mut().crash();
        self.registry.crash();
        self.pending.crash();
        self.checkouts.crash();
        self.payables.crash();
        self.outbox.crash();
    }
}

/// Match a log slice against the clearinghouse's booking. Returns the
/// disputed check-out, the idle token being exchanged, the amount owed
/// back and the operator that was overpaid.
fn fare_dispute(
    env: &Env,
    ptc: &PublicKey,
    registry: &mut SeqnoRegistry,
    checkouts: &Journal<Seqno, CheckoutEntry>,
    slice: &[u8],
    current: &[u8],
) -> Result<(Seqno, CreditToken, Cents, String), String> {
    let slice = LogSlice::decode(slice).map_err(|e| e.to_string())?;
    let heads = slice.heads();
    let [checkin_entry, checkout_entry] = slice.entries.as_slice() else {
        return Err("slice must hold a check-in and its check-out".into());
    };
    if checkin_entry.kind != "checkin" || checkout_entry.kind != "checkout" {
        return Err("slice must hold a check-in and its check-out".into());
    }
    let token = CheckinToken::decode(&env.params, &checkin_entry.payload).map_err(|e| e.to_string())?;
    let record = CheckoutRecord::decode(&env.params, &checkout_entry.payload).map_err(|e| e.to_string())?;
    let in_key = env.dir.pto(&token.operator).map_err(|e| e.to_string())?;
    let out_key = env.dir.pto(&record.operator).map_err(|e| e.to_string())?;
    if !token.verify(&env.params, in_key) || !record.verify(&env.params, out_key) {
        return Err("signed tokens in the slice do not verify".into());
    }
    // the signed heads pin the slice into the device log
    if token.log_head != Some(slice.prev) || record.log_head != Some(heads[0]) {
        return Err("log slice does not chain to the signed heads".into());
    }
    if token.credit_seqno != record.credit_seqno {
        return Err("check-in and check-out belong to different tokens".into());
    }
    let cs = record.credit_seqno;
    let booked = checkouts.get(&cs).ok_or("no check-out booked for this token")?;
    if booked.disputed {
        return Err("already compensated".into());
    }
    let diff = booked.deducted - record.fare;
    if diff <= 0 {
        return Err("no discrepancy".into());
    }
    let current = CreditToken::decode(&env.params, current).map_err(|e| e.to_string())?;
    if !current.verify(&env.params, ptc) {
        return Err("current credit token does not verify".into());
    }
    registry.spend_idle(&current.seqno, current.value).map_err(|e| e.to_string())?;
    Ok((cs, current, diff, booked.operator.clone()))
}
