//! The traveller's device: wallet, sessions and the hash-chained log.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::RngCore;

use super::payg::trip_label;
use super::{flow, Dest, Env, GateMsg, Order, Payload, ProtoError};
use crate::crypto::GroupParams;
use crate::devicelog::HashChainLog;
use crate::journal::Durable;
use crate::pbs::SecretMessage;
use crate::session::{Expectation, IssueMsg, RestartPolicy, SessionId, UserSessions};
use crate::tokens::{
    fresh_seqno, CheckinToken, CheckoutRecord, Cents, CreditToken, Leg, Receipt, Seqno, Service, Ticket, Trip,
    CREDIT_LABEL,
};

pub const PSP: &str = "PSP";
pub const PTC: &str = "PTC";

pub fn pto_signer(name: &str) -> String {
    format!("PTO:{name}")
}

/// A message the device wants delivered.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Outgoing {
    pub dest: Dest,
    pub payload: Payload,
    pub flow: &'static str,
}

/// Something the harness should record about the device.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Note {
    /// Opening credit obtained.
    Opened { value: Cents },
    /// A check-out record was accepted: fare charged and top-up paid in.
    Trip { label: String, fare: Cents, topup: Cents },
    /// A fare dispute was paid back.
    Adjusted { value: Cents },
    /// A ticket was obtained for a trip.
    Ticket { trip: String },
    /// A credit token came back lower than the device expected.
    Shortfall { credit_seqno: Seqno, missing: Cents },
    Refused { what: String, reason: String },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum AfterReceipt {
    Keep,
    BuyTicket { trip: Trip, operator: String },
    Open,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Intent {
    Receipt { service: Service, amount: Cents, then: AfterReceipt },
    Ticket { trip: Trip, operator: String, receipt: Receipt, replaces: Option<Ticket> },
    Open { receipt: Receipt },
    Checkout { record: CheckoutRecord, expected: Cents, via: Option<String> },
    Dispute { credit_seqno: Seqno, missing: Cents },
}

impl Intent {
    pub fn flow(&self) -> &'static str {
        match self {
            Intent::Receipt { then: AfterReceipt::BuyTicket { .. }, .. } => flow::BUY_RECEIPT,
            Intent::Receipt { service: Service::Pto, .. } => flow::BUY_RECEIPT,
            Intent::Receipt { .. } => flow::TOPUP_RECEIPT,
            Intent::Ticket { replaces: None, .. } => flow::BUY_TICKET,
            Intent::Ticket { .. } => flow::REISSUE_TICKET,
            Intent::Open { .. } => flow::OPEN_CREDIT,
            Intent::Checkout { via: Some(_), .. } => flow::CHECKOUT_CREDIT,
            Intent::Checkout { .. } => flow::LAZY_CREDIT,
            Intent::Dispute { .. } => flow::DISPUTE_CREDIT,
        }
    }

    fn dest(&self) -> Dest {
        match self {
            Intent::Receipt { .. } => Dest::Psp,
            Intent::Ticket { operator, .. } => Dest::Pto(operator.clone()),
            Intent::Checkout { via, .. } => Dest::Ptc { via: via.clone() },
            _ => Dest::Ptc { via: None },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Purchase {
    pub receipt: Receipt,
    pub ticket: Ticket,
    pub returned: bool,
}

/// A completed gate-to-gate journey as the device saw it.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Journey {
    pub checkin: CheckinToken,
    pub record: CheckoutRecord,
    /// Index of the check-in entry in the device log.
    pub log_index: usize,
    pub credit_in: Cents,
    pub topup: Cents,
    pub disputed: bool,
}

/// Checked in and not yet out.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Ride {
    pub token: CheckinToken,
    pub credit: CreditToken,
    pub log_index: usize,
    /// Top-up receipt shown at check-out, if any.
    pub topup: Option<Receipt>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum GateWait {
    Checkin { station: String, head: [u8; 32] },
    Checkout { station: String, head: [u8; 32], lazy: bool },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Wallet {
    pub receipts: Vec<Receipt>,
    pub purchases: Vec<Purchase>,
    pub credit: Option<CreditToken>,
    pub log: HashChainLog,
    pub ride: Option<Ride>,
    pub waiting: Option<GateWait>,
    pub lazy: Vec<CheckoutRecord>,
    pub journeys: Vec<Journey>,
    pub intents: BTreeMap<SessionId, Intent>,
    /// Disputes the device has decided to raise, by credit seqno.
    pub shortfalls: BTreeMap<Seqno, Cents>,
    /// Extra signatures obtained for a session beyond the first.
    pub duplicates: usize,
}

pub struct UserAgent {
    pub name: String,
    pub addr: String,
    params: Arc<GroupParams>,
    pub sessions: UserSessions,
    wallet: Durable<Wallet>,
}

fn seqno_of(secret: &SecretMessage) -> Seqno {
    let b = secret.as_bytes();
    b[b.len() - 16..].try_into().expect("secret ends in a seqno")
}

impl UserAgent {
    pub fn new<R: RngCore + ?Sized>(name: &str, addr: &str, env: &Env, rng: &mut R) -> UserAgent {
        let mut sessions = UserSessions::new(env.params.clone());
        sessions.register_signer(PSP, env.dir.psp.clone());
        sessions.register_signer(PTC, env.dir.ptc.clone());
        for (name, key) in &env.dir.ptos {
            sessions.register_signer(&pto_signer(name), key.clone());
        }
        UserAgent {
            name: name.to_string(),
            addr: addr.to_string(),
            params: env.params.clone(),
            sessions,
            wallet: Durable::new(Wallet {
                receipts: Vec::new(),
                purchases: Vec::new(),
                credit: None,
                log: HashChainLog::new(rng),
                ride: None,
                waiting: None,
                lazy: Vec::new(),
                journeys: Vec::new(),
                intents: BTreeMap::new(),
                shortfalls: BTreeMap::new(),
                duplicates: 0,
            }),
        }
    }

    pub fn wallet(&self) -> &Wallet {
        self.wallet.get()
    }

    pub fn set_policy(&mut self, policy: RestartPolicy) {
        self.sessions.policy = policy;
    }

    pub fn credit_value(&self) -> Cents {
        self.wallet().credit.as_ref().map_or(0, |c| c.value)
    }

    /// Persist everything. The harness calls this before any message
    /// leaves the device.
    pub fn sync(&mut self) {
        self.sessions.journal_mut().sync();
        self.wallet.sync();
    }

    /// Reinstall from the last persisted state.
    pub fn crash(&mut self) {
        self.sessions.journal_mut().crash();
        self.wallet.crash();
    }

    fn start<R: RngCore + ?Sized>(
        &mut self,
        intent: Intent,
        now: u64,
        rng: &mut R,
    ) -> Result<Outgoing, ProtoError> {
        let (signer, expected, secret, order) = match &intent {
            Intent::Receipt { service, amount, .. } => (
                PSP.to_string(),
                Expectation::Exact(Receipt::public_part(*service, *amount)),
                Receipt::secret(&fresh_seqno(rng)),
                Order::Payment {
                    payer: self.name.clone(),
                    service: *service,
                    amount: *amount,
                },
            ),
            Intent::Ticket {
                trip,
                operator,
                receipt,
                replaces,
            } => (
                pto_signer(operator),
                Expectation::Exact(Ticket::public_part(receipt.fare)),
                Ticket::secret(trip, &fresh_seqno(rng)),
                Order::Ticket {
                    receipt: receipt.encode(&self.params),
                    returned: replaces.as_ref().map(|t| t.encode(&self.params)),
                },
            ),
            Intent::Open { receipt } => (
                PTC.to_string(),
                Expectation::Exact(CreditToken::public_part(receipt.fare)),
                CreditToken::secret(&fresh_seqno(rng)),
                Order::Open {
                    receipt: receipt.encode(&self.params),
                },
            ),
            Intent::Checkout { record, .. } => (
                PTC.to_string(),
                Expectation::Label(CREDIT_LABEL.into()),
                CreditToken::secret(&fresh_seqno(rng)),
                Order::Checkout {
                    record: record.encode(&self.params),
                },
            ),
            Intent::Dispute { credit_seqno, .. } => {
                let w = self.wallet.get();
                let journey = w
                    .journeys
                    .iter()
                    .find(|j| j.record.credit_seqno == *credit_seqno)
                    .ok_or_else(|| ProtoError::Rejected("no such journey".into()))?;
                let current = w
                    .credit
                    .as_ref()
                    .ok_or_else(|| ProtoError::Rejected("no idle credit token to exchange".into()))?;
                let slice = w
                    .log
                    .slice(journey.log_index, journey.log_index + 1)
                    .map_err(|e| ProtoError::Rejected(e.to_string()))?;
                (
                    PTC.to_string(),
                    Expectation::Label(CREDIT_LABEL.into()),
                    CreditToken::secret(&fresh_seqno(rng)),
                    Order::FareDispute {
                        slice: slice.encode(),
                        current: current.encode(&self.params),
                    },
                )
            }
        };
        let (sid, msg) = self.sessions.start(&signer, expected, secret, order.encode(), now, rng)?;
        let out = Outgoing {
            dest: intent.dest(),
            payload: Payload::Issue(msg),
            flow: intent.flow(),
        };
        self.wallet.get_mut().intents.insert(sid, intent);
        Ok(out)
    }

    /// Pay the PSP for a ticket; the ticket session follows automatically.
    pub fn buy<R: RngCore + ?Sized>(&mut self, env: &Env, route: &[&str], now: u64, rng: &mut R) -> Result<Outgoing, ProtoError> {
        self.buy_quoted(env, route, None, now, rng)
    }

    /// Like `buy`, but pay a fare the device computed itself. Nobody checks
    /// it at issuance; a wrong quote only shows at inspection.
    pub fn buy_quoted<R: RngCore + ?Sized>(
        &mut self,
        env: &Env,
        route: &[&str],
        quote: Option<Cents>,
        now: u64,
        rng: &mut R,
    ) -> Result<Outgoing, ProtoError> {
        let trip = Trip::new(route, Env::day(now));
        trip.validate(&env.network)?;
        let fare = match quote {
            Some(f) => f,
            None => env.fares.fare_for(&env.network, &trip.route)?,
        };
        let operator = env
            .network
            .operator(route[0])
            .map(str::to_string)
            .or_else(|| env.dir.ptos.keys().next().cloned())
            .ok_or_else(|| ProtoError::Rejected("no operator".into()))?;
        let intent = Intent::Receipt {
            service: Service::Pto,
            amount: fare,
            then: AfterReceipt::BuyTicket { trip, operator },
        };
        self.start(intent, now, rng)
    }

    /// Pay the PSP without redeeming the receipt yet.
    pub fn pay<R: RngCore + ?Sized>(&mut self, service: Service, amount: Cents, now: u64, rng: &mut R) -> Result<Outgoing, ProtoError> {
        let intent = Intent::Receipt {
            service,
            amount,
            then: AfterReceipt::Keep,
        };
        self.start(intent, now, rng)
    }

    /// Buy opening credit and exchange the receipt for a first credit token.
    pub fn open<R: RngCore + ?Sized>(&mut self, amount: Cents, now: u64, rng: &mut R) -> Result<Outgoing, ProtoError> {
        let intent = Intent::Receipt {
            service: Service::Ptc,
            amount,
            then: AfterReceipt::Open,
        };
        self.start(intent, now, rng)
    }

    /// Get a replacement for a returned ticket.
    pub fn reissue<R: RngCore + ?Sized>(&mut self, env: &Env, index: usize, route: &[&str], now: u64, rng: &mut R) -> Result<Outgoing, ProtoError> {
        let p = self
            .wallet()
            .purchases
            .get(index)
            .cloned()
            .ok_or_else(|| ProtoError::Rejected(format!("no purchase {index}")))?;
        if !p.returned {
            return Err(ProtoError::Rejected("ticket has not been returned".into()));
        }
        let trip = Trip::new(route, Env::day(now));
        if env.fares.fare_for(&env.network, &trip.route)? != p.ticket.fare {
            return Err(ProtoError::Rejected("replacement must have the same fare".into()));
        }
        let operator = env
            .network
            .operator(&p.ticket.trip.route[0])
            .map(str::to_string)
            .ok_or_else(|| ProtoError::Rejected("no operator".into()))?;
        let intent = Intent::Ticket {
            trip,
            operator,
            receipt: p.receipt.clone(),
            replaces: Some(p.ticket.clone()),
        };
        self.wallet.get_mut().purchases.remove(index);
        self.start(intent, now, rng)
    }

    /// Take back a receipt for cancellation, unused or with a returned ticket.
    pub fn take_unused_receipt(&mut self, service: Service) -> Option<Receipt> {
        let w = self.wallet.get_mut();
        let i = w.receipts.iter().position(|r| r.service == service)?;
        Some(w.receipts.remove(i))
    }

    pub fn put_back_receipt(&mut self, receipt: Receipt) {
        self.wallet.get_mut().receipts.push(receipt);
    }

    pub fn mark_returned(&mut self, index: usize) {
        if let Some(p) = self.wallet.get_mut().purchases.get_mut(index) {
            p.returned = true;
        }
    }

    pub fn drop_purchase(&mut self, index: usize) -> Option<Purchase> {
        let w = self.wallet.get_mut();
        (index < w.purchases.len()).then(|| w.purchases.remove(index))
    }

    /// The ticket to show for `leg`: one dated today if held, else the
    /// latest one covering the leg.
    pub fn ticket_for(&self, leg: &Leg, now: u64) -> Option<&Ticket> {
        let covering = || {
            self.wallet()
                .purchases
                .iter()
                .filter(|p| !p.returned)
                .map(|p| &p.ticket)
                .filter(|t| t.trip.covers(leg))
        };
        covering()
            .find(|t| t.trip.date == Env::day(now))
            .or_else(|| covering().max_by_key(|t| t.trip.date))
    }

    pub fn checkin_token(&self) -> Option<&CheckinToken> {
        self.wallet().ride.as_ref().map(|r| &r.token)
    }

    pub fn checkin(&mut self, station: &str) -> Result<Outgoing, ProtoError> {
        let w = self.wallet.get_mut();
        if w.ride.is_some() {
            return Err(ProtoError::Rejected("already checked in".into()));
        }
        let credit = w.credit.clone().ok_or_else(|| ProtoError::Rejected("no credit token".into()))?;
        let head = w.log.head();
        w.waiting = Some(GateWait::Checkin {
            station: station.to_string(),
            head,
        });
        Ok(Outgoing {
            dest: Dest::Gate(station.to_string()),
            payload: Payload::Gate(GateMsg::CheckinRequest { credit, head }),
            flow: flow::CHECKIN,
        })
    }

    pub fn checkout(&mut self, station: &str, topup: bool, lazy: bool) -> Result<Outgoing, ProtoError> {
        let w = self.wallet.get_mut();
        let Some(ride) = w.ride.as_mut() else {
            return Err(ProtoError::Rejected("not checked in".into()));
        };
        if topup && ride.topup.is_none() {
            let i = w
                .receipts
                .iter()
                .position(|r| r.service == Service::Ptc)
                .ok_or_else(|| ProtoError::Rejected("no credit receipt for a top-up".into()))?;
            ride.topup = Some(w.receipts.remove(i));
        }
        let token = ride.token.clone();
        let receipt = ride.topup.clone();
        let head = w.log.head();
        w.waiting = Some(GateWait::Checkout {
            station: station.to_string(),
            head,
            lazy,
        });
        Ok(Outgoing {
            dest: Dest::Gate(station.to_string()),
            payload: Payload::Gate(GateMsg::CheckoutPresent {
                token,
                receipt,
                head,
                lazy,
            }),
            flow: flow::CHECKOUT,
        })
    }

    /// Resend whatever the device is waiting for at a gate.
    pub fn gate_retry(&mut self) -> Option<Outgoing> {
        let w = self.wallet();
        match w.waiting.clone()? {
            GateWait::Checkin { station, head } => Some(Outgoing {
                dest: Dest::Gate(station),
                payload: Payload::Gate(GateMsg::CheckinRequest {
                    credit: w.credit.clone()?,
                    head,
                }),
                flow: flow::CHECKIN,
            }),
            GateWait::Checkout { station, head, lazy } => {
                let ride = w.ride.as_ref()?;
                Some(Outgoing {
                    dest: Dest::Gate(station),
                    payload: Payload::Gate(GateMsg::CheckoutPresent {
                        token: ride.token.clone(),
                        receipt: ride.topup.clone(),
                        head,
                        lazy,
                    }),
                    flow: flow::CHECKOUT,
                })
            }
        }
    }

    pub fn waiting_at_gate(&self) -> bool {
        self.wallet().waiting.is_some()
    }

    /// Give up on the gate: forget the pending exchange.
    pub fn abandon_gate(&mut self) {
        self.wallet.get_mut().waiting = None;
    }

    /// Hold a check-out record for later finalization.
    pub fn queue_lazy(&mut self, record: CheckoutRecord) {
        self.wallet.get_mut().lazy.push(record);
    }

    /// Claim the credit for every lazily finalized check-out.
    pub fn finalize_lazy<R: RngCore + ?Sized>(&mut self, now: u64, rng: &mut R) -> Result<Vec<Outgoing>, ProtoError> {
        let pending: Vec<CheckoutRecord> = std::mem::take(&mut self.wallet.get_mut().lazy);
        let mut out = Vec::new();
        for record in pending {
            let expected = self.expected_after(&record);
            out.push(self.start(
                Intent::Checkout {
                    record,
                    expected,
                    via: None,
                },
                now,
                rng,
            )?);
        }
        Ok(out)
    }

    /// Raise a fare dispute for every shortfall noticed so far. Each dispute
    /// exchanges the current idle token, so they go one at a time.
    pub fn dispute_fares<R: RngCore + ?Sized>(&mut self, now: u64, rng: &mut R) -> Result<Option<Outgoing>, ProtoError> {
        let w = self.wallet();
        let open_dispute = self
            .unfinished()
            .iter()
            .any(|sid| matches!(w.intents.get(sid), Some(Intent::Dispute { .. })));
        if w.ride.is_some() || open_dispute {
            return Ok(None);
        }
        let Some((cs, missing)) = w.shortfalls.iter().next().map(|(k, v)| (*k, *v)) else {
            return Ok(None);
        };
        let out = self.start(
            Intent::Dispute {
                credit_seqno: cs,
                missing,
            },
            now,
            rng,
        )?;
        Ok(Some(out))
    }

    fn expected_after(&self, record: &CheckoutRecord) -> Cents {
        let w = self.wallet();
        let j = w.journeys.iter().find(|j| j.record.credit_seqno == record.credit_seqno);
        j.map_or(0, |j| j.credit_in + j.topup - record.fare)
    }

    /// Session ids still waiting for a signature.
    pub fn unfinished(&self) -> Vec<SessionId> {
        self.sessions.unfinished()
    }

    pub fn intent(&self, sid: &SessionId) -> Option<&Intent> {
        self.wallet().intents.get(sid)
    }

    /// Re-derive the next message of a session after a timeout.
    pub fn resume(&self, sid: &SessionId) -> Result<Option<Outgoing>, ProtoError> {
        let Some(intent) = self.intent(sid) else {
            return Ok(None);
        };
        Ok(self.sessions.resume(sid)?.map(|m| Outgoing {
            dest: intent.dest(),
            payload: Payload::Issue(m),
            flow: intent.flow(),
        }))
    }

    /// Ask the signer to resolve a session that never completed.
    pub fn dispute(&self, sid: &SessionId) -> Result<Option<Outgoing>, ProtoError> {
        let Some(intent) = self.intent(sid) else {
            return Ok(None);
        };
        Ok(Some(Outgoing {
            dest: intent.dest(),
            payload: Payload::Issue(self.sessions.dispute(sid)?),
            flow: intent.flow(),
        }))
    }

    /// Process an issuance message. Returns messages to send and notes for
    /// the trace.
    pub fn on_issue<R: RngCore + ?Sized>(
        &mut self,
        msg: &IssueMsg,
        now: u64,
        rng: &mut R,
    ) -> Result<(Vec<Outgoing>, Vec<Note>), ProtoError> {
        let sid = *msg.sid();
        let Some(intent) = self.intent(&sid).cloned() else {
            return Ok((Vec::new(), Vec::new()));
        };
        let event = self.sessions.handle(msg, now, rng)?;
        let mut out = Vec::new();
        let mut notes = Vec::new();
        if let Some(reply) = event.reply {
            out.push(Outgoing {
                dest: intent.dest(),
                payload: Payload::Issue(reply),
                flow: intent.flow(),
            });
        }
        if let Some(reason) = event.rejected {
            notes.push(Note::Refused {
                what: intent.flow().to_string(),
                reason,
            });
            self.on_refused(&intent);
        }
        if let Some(sig) = event.completed {
            let rec = self.sessions.record(&sid).expect("completed session");
            let seqno = seqno_of(&rec.secret);
            let value = rec.public_part.as_ref().expect("completed with a public part").value();
            if rec.obtained.len() > 1 {
                self.wallet.get_mut().duplicates += 1;
            }
            self.on_completed(&intent, seqno, value, sig, now, rng, &mut out, &mut notes)?;
        }
        Ok((out, notes))
    }

    fn on_refused(&mut self, intent: &Intent) {
        let w = self.wallet.get_mut();
        match intent {
            Intent::Ticket {
                receipt,
                replaces: None,
                ..
            } => w.receipts.push(receipt.clone()),
            Intent::Open { receipt } => w.receipts.push(receipt.clone()),
            Intent::Dispute { credit_seqno, .. } => {
                w.shortfalls.remove(credit_seqno);
            }
            _ => {}
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn on_completed<R: RngCore + ?Sized>(
        &mut self,
        intent: &Intent,
        seqno: Seqno,
        value: Cents,
        sig: crate::pbs::PartiallyBlindSignature,
        now: u64,
        rng: &mut R,
        out: &mut Vec<Outgoing>,
        notes: &mut Vec<Note>,
    ) -> Result<(), ProtoError> {
        match intent {
            Intent::Receipt { service, amount, then } => {
                let receipt = Receipt {
                    service: *service,
                    fare: *amount,
                    seqno,
                    sig,
                };
                match then {
                    AfterReceipt::Keep => self.wallet.get_mut().receipts.push(receipt),
                    AfterReceipt::BuyTicket { trip, operator } => out.push(self.start(
                        Intent::Ticket {
                            trip: trip.clone(),
                            operator: operator.clone(),
                            receipt,
                            replaces: None,
                        },
                        now,
                        rng,
                    )?),
                    AfterReceipt::Open => out.push(self.start(Intent::Open { receipt }, now, rng)?),
                }
            }
            Intent::Ticket { trip, receipt, .. } => {
                let ticket = Ticket {
                    trip: trip.clone(),
                    seqno,
                    fare: value,
                    sig,
                };
                notes.push(Note::Ticket { trip: trip.to_string() });
                self.wallet.get_mut().purchases.push(Purchase {
                    receipt: receipt.clone(),
                    ticket,
                    returned: false,
                });
            }
            Intent::Open { .. } => {
                let w = self.wallet.get_mut();
                w.credit = Some(CreditToken { seqno, value, sig });
                notes.push(Note::Opened { value });
            }
            Intent::Checkout { record, expected, .. } => {
                let w = self.wallet.get_mut();
                w.credit = Some(CreditToken { seqno, value, sig });
                if value < *expected {
                    w.shortfalls.insert(record.credit_seqno, expected - value);
                    notes.push(Note::Shortfall {
                        credit_seqno: record.credit_seqno,
                        missing: expected - value,
                    });
                }
            }
            Intent::Dispute { credit_seqno, missing } => {
                let w = self.wallet.get_mut();
                w.credit = Some(CreditToken { seqno, value, sig });
                w.shortfalls.remove(credit_seqno);
                if let Some(j) = w.journeys.iter_mut().find(|j| j.record.credit_seqno == *credit_seqno) {
                    j.disputed = true;
                }
                notes.push(Note::Adjusted { value: *missing });
            }
        }
        Ok(())
    }

    /// Process a gate reply.
    pub fn on_gate<R: RngCore + ?Sized>(
        &mut self,
        env: &Env,
        msg: &GateMsg,
        now: u64,
        rng: &mut R,
    ) -> Result<(Vec<Outgoing>, Vec<Note>), ProtoError> {
        let mut out = Vec::new();
        let mut notes = Vec::new();
        let waiting = self.wallet().waiting.clone();
        match (msg, waiting) {
            (GateMsg::CheckinIssued(token), Some(GateWait::Checkin { station, head })) => {
                let credit = self.wallet().credit.clone().expect("checked in with credit");
                let ok = token.credit_seqno == credit.seqno
                    && token.location == station
                    && token.log_head == Some(head)
                    && token.verify(&env.params, env.dir.pto(&token.operator)?);
                if !ok {
                    return Err(ProtoError::Rejected("gate returned a bad check-in token".into()));
                }
                let w = self.wallet.get_mut();
                w.log.append("checkin", token.encode(&self.params), rng);
                w.ride = Some(Ride {
                    token: token.clone(),
                    credit,
                    log_index: w.log.len() - 1,
                    topup: None,
                });
                w.credit = None;
                w.waiting = None;
                if env.config.checkin_ack {
                    out.push(Outgoing {
                        dest: Dest::Gate(station),
                        payload: Payload::Gate(GateMsg::CheckinAck {
                            seqno: token.credit_seqno,
                        }),
                        flow: flow::CHECKIN,
                    });
                }
            }
            (GateMsg::CheckoutIssued(record), Some(GateWait::Checkout { station, head, lazy })) => {
                let ride = self.wallet().ride.clone().expect("checked out while riding");
                let ok = record.credit_seqno == ride.token.credit_seqno
                    && record.location == station
                    && record.log_head == Some(head)
                    && record.lazy == lazy
                    && record.verify(&env.params, env.dir.pto(&record.operator)?);
                if !ok {
                    return Err(ProtoError::Rejected("gate returned a bad check-out record".into()));
                }
                let topup = ride.topup.as_ref().map_or(0, |r| r.fare);
                let label = trip_label(&ride.token.location, ride.token.time, &record.location, record.time);
                let w = self.wallet.get_mut();
                w.log.append("checkout", record.encode(&self.params), rng);
                w.journeys.push(Journey {
                    checkin: ride.token.clone(),
                    record: record.clone(),
                    log_index: ride.log_index,
                    credit_in: ride.credit.value,
                    topup,
                    disputed: false,
                });
                w.ride = None;
                w.waiting = None;
                notes.push(Note::Trip {
                    label,
                    fare: record.fare,
                    topup,
                });
                if lazy {
                    w.lazy.push(record.clone());
                } else {
                    let expected = ride.credit.value + topup - record.fare;
                    out.push(self.start(
                        Intent::Checkout {
                            record: record.clone(),
                            expected,
                            via: Some(station),
                        },
                        now,
                        rng,
                    )?);
                }
            }
            (GateMsg::Refused { credit_seqno, reason }, Some(wait)) => {
                let w = self.wallet.get_mut();
                let ours = match &wait {
                    GateWait::Checkin { .. } => w.credit.as_ref().is_some_and(|c| c.seqno == *credit_seqno),
                    GateWait::Checkout { .. } => w.ride.as_ref().is_some_and(|r| r.token.credit_seqno == *credit_seqno),
                };
                if ours {
                    w.waiting = None;
                    if let (GateWait::Checkout { .. }, Some(ride)) = (&wait, w.ride.as_mut()) {
                        if let Some(r) = ride.topup.take() {
                            w.receipts.push(r);
                        }
                    }
                    notes.push(Note::Refused {
                        what: "gate".into(),
                        reason: reason.clone(),
                    });
                }
            }
            // stale or duplicate gate replies
            _ => {}
        }
        Ok((out, notes))
    }

    /// Serialized device log for audit.
    pub fn log_bytes(&self) -> Vec<u8> {
        self.wallet().log.encode()
    }

    pub fn log_head(&self) -> [u8; 32] {
        self.wallet().log.head()
    }
}
