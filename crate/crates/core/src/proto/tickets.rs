//! Pre-purchased single-day tickets: issuance, inspection, returns.

use std::sync::Arc;

use rand::RngCore;

use super::{refuse, signer_step, Env, Order, ProtoError, Ptc, SettleReport};
use crate::audit::{Attr, Knowledge, Party};
use crate::crypto::{GroupParams, KeyPair, PublicKey};
use crate::journal::Journal;
use crate::ledger::{Fact, Outbox, Posting};
use crate::registry::{SeqnoRegistry, Submit, TokenKind};
use crate::session::{Admission, DisputeOutcome, IssueMsg, SignerSessions};
use crate::tokens::{Leg, Receipt, Seqno, Service, Ticket};

/// A transport operator: sells tickets against PSP receipts and inspects them.
pub struct Pto {
    pub name: String,
    key: KeyPair,
    pub sessions: SignerSessions,
    pub tickets: SeqnoRegistry,
    /// Receipts handed in and not yet settled.
    collected: Journal<Seqno, Receipt>,
    pub outbox: Outbox<Posting>,
}

impl Pto {
    pub fn new(name: &str, params: Arc<GroupParams>, key: KeyPair) -> Pto {
        Pto {
            name: name.to_string(),
            key,
            sessions: SignerSessions::new(params),
            tickets: SeqnoRegistry::new(),
            collected: Journal::new(),
            outbox: Outbox::default(),
        }
    }

    pub fn public(&self) -> &PublicKey {
        self.key.public()
    }

    /// Gates and inspection devices carry the operator key.
    pub fn key(&self) -> &KeyPair {
        &self.key
    }

    pub fn unsettled(&self) -> usize {
        self.collected.len()
    }

    /// Ticket issuance. A first purchase hands the receipt to the
    /// clearinghouse; a reissue consumes a returned ticket of the same fare.
    #[allow(clippy::too_many_arguments)]
    pub fn handle<R: RngCore + ?Sized>(
        &mut self,
        env: &Env,
        ptc: Option<&mut Ptc>,
        msg: &IssueMsg,
        addr: Option<&str>,
        now: u64,
        rng: &mut R,
        know: &mut Knowledge,
    ) -> Result<(Option<IssueMsg>, Option<DisputeOutcome>), ProtoError> {
        let fresh_request = matches!(msg, IssueMsg::Request { sid, .. } if self.sessions.record(sid).is_none());
        if fresh_request && ptc.is_none() {
            return Err(ProtoError::Unreachable("clearinghouse"));
        }
        let mut ptc = ptc;
        self.respond(env, &mut ptc, msg, addr, now, rng, know)
    }

    #[allow(clippy::too_many_arguments)]
    fn respond<R: RngCore + ?Sized>(
        &mut self,
        env: &Env,
        ptc: &mut Option<&mut Ptc>,
        msg: &IssueMsg,
        addr: Option<&str>,
        now: u64,
        rng: &mut R,
        know: &mut Knowledge,
    ) -> Result<(Option<IssueMsg>, Option<DisputeOutcome>), ProtoError> {
        let Pto {
            name,
            key,
            sessions,
            tickets,
            collected,
            outbox,
        } = self;
        signer_step(sessions, key, msg, now, rng, |sid, attachment| {
            let Ok(Order::Ticket { receipt, returned }) = Order::decode(attachment) else {
                return refuse("not a ticket order");
            };
            let Ok(r) = Receipt::decode(&env.params, &receipt) else {
                return refuse("malformed receipt");
            };
            if r.service != Service::Pto || !r.verify(&env.params, &env.dir.psp) {
                return refuse("receipt does not verify");
            }
            if !env.fares.is_valid_fare(r.fare) {
                return refuse(format!("{} is not a fare", r.fare));
            }
            let Some(ptc) = ptc.as_deref_mut() else {
                return refuse("clearinghouse unreachable");
            };
            match returned {
                None => match ptc.submit_receipt(env, &r, &format!("{name}#{}", hex::encode(sid)), now, know) {
                    Ok(Submit::Accepted | Submit::Repeated) => {
                        collected.put(r.seqno, r.clone());
                        outbox.push(Posting::Fact(Fact::PtoLog {
                            pto: name.clone(),
                            reference: r.seqno,
                            fare: r.fare,
                        }));
                    }
                    Err(e) => return refuse(e.to_string()),
                },
                Some(old) => {
                    let Ok(old) = Ticket::decode(&env.params, &old) else {
                        return refuse("malformed returned ticket");
                    };
                    if !old.verify(&env.params, key.public()) || old.fare != r.fare {
                        return refuse("returned ticket does not match the receipt");
                    }
                    if !ptc.holds_receipt(&r.seqno, name) {
                        return refuse("receipt was not used at this operator");
                    }
                    if let Err(e) = tickets.consume_return(&old.seqno) {
                        return refuse(e.to_string());
                    }
                }
            }
            let mut attrs = vec![Attr::ReceiptSeq(r.seqno), Attr::Fare(r.fare)];
            if let Some(a) = addr {
                attrs.insert(0, Attr::Addr(a.to_string()));
            }
            know.record(Party::Pto(name.clone()), now, attrs);
            Admission::Accept {
                public_part: Ticket::public_part(r.fare),
                attachment: Vec::new(),
            }
        })
    }

    /// Check a ticket shown on a train. Strict inspection marks it used in
    /// the operator's registry and needs connectivity; relaxed inspection
    /// only checks the signature and the trip.
    pub fn inspect_ticket(&mut self, env: &Env, ticket: &Ticket, leg: &Leg, now: u64, online: bool, know: &mut Knowledge) -> Result<(), ProtoError> {
        if !ticket.verify(&env.params, self.key.public()) {
            return Err(ProtoError::Rejected("ticket does not verify".into()));
        }
        know.record(
            Party::Pto(self.name.clone()),
            now,
            vec![Attr::Trip(ticket.trip.to_string()), Attr::TicketSeq(ticket.seqno), Attr::Fare(ticket.fare)],
        );
        let fare = env.fares.fare_for(&env.network, &ticket.trip.route)?;
        if fare != ticket.fare {
            return Err(ProtoError::Rejected(format!("fare {} does not match the route ({fare})", ticket.fare)));
        }
        if ticket.trip.date != Env::day(now) {
            return Err(ProtoError::Rejected(format!("ticket is for day {}", ticket.trip.date)));
        }
        if !ticket.trip.covers(leg) {
            return Err(ProtoError::Rejected(format!("ticket does not cover {leg}")));
        }
        if env.config.strict_inspection {
            if !online {
                return Err(ProtoError::Unreachable("ticket registry"));
            }
            self.tickets
                .submit(TokenKind::Ticket, &ticket.seqno, &ticket.trip.to_string(), ticket.fare)?;
        }
        Ok(())
    }

    /// Hand back an unused ticket; it can then be reissued or cancelled once.
    pub fn return_ticket(&mut self, env: &Env, ticket: &Ticket) -> Result<(), ProtoError> {
        if !ticket.verify(&env.params, self.key.public()) {
            return Err(ProtoError::Rejected("ticket does not verify".into()));
        }
        self.tickets.return_ticket(&ticket.seqno, ticket.fare)?;
        Ok(())
    }

    /// Approve the refund of a returned ticket's receipt: the operator voids
    /// its fare and drops the receipt from its settlement batch.
    pub fn release_receipt(&mut self, env: &Env, ticket: &Ticket, receipt: &Receipt) -> Result<(), ProtoError> {
        if !ticket.verify(&env.params, self.key.public()) || ticket.fare != receipt.fare {
            return Err(ProtoError::Rejected("returned ticket does not match the receipt".into()));
        }
        if !self.collected.contains_key(&receipt.seqno) {
            return Err(ProtoError::Rejected("receipt not held by this operator".into()));
        }
        self.tickets.consume_return(&ticket.seqno)?;
        self.collected.remove(&receipt.seqno);
        self.outbox.push(Posting::Fact(Fact::PtoLog {
            pto: self.name.clone(),
            reference: receipt.seqno,
            fare: -receipt.fare,
        }));
        Ok(())
    }

    /// Trade collected receipts for payment, together with any check-out
    /// fares the clearinghouse owes this operator.
    pub fn settle(&mut self, env: &Env, ptc: &mut Ptc) -> SettleReport {
        let receipts: Vec<Receipt> = self.collected.values().cloned().collect();
        let report = ptc.settle(env, &self.name, &receipts);
        for r in &receipts {
            self.collected.remove(&r.seqno);
        }
        report
    }

    pub fn sync(&mut self) -> Vec<Posting> {
        self.sessions.journal_mut().sync();
        self.tickets.sync();
        self.collected.sync();
        self.outbox.sync()
    }

    pub fn crash(&mut self) {
        self.sessions.journal_mut().crash();
        self.tickets.crash();
        self.collected.crash();
        self.outbox.crash();
    }
}
