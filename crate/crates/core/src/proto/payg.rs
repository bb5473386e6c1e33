//! Pay-as-you-go travel: station gates and en-route inspection of check-ins.

use rand::RngCore;

use super::{Env, ProtoError, Ptc};
use crate::audit::{Attr, Knowledge, Party};
use crate::journal::Journal;
use crate::ledger::{Fact, Outbox, Posting};
use crate::registry::Stamp;
use crate::tokens::{
    plausible, short, CheckinToken, CheckoutFields, CheckoutRecord, CreditToken, LogHead, Receipt, Seqno,
};
use crate::crypto::KeyPair;

/// Trip label shared by gate knowledge and ground truth.
pub fn trip_label(from: &str, checkin_time: u64, to: &str, checkout_time: u64) -> String {
    format!("{from}@{checkin_time}>{to}@{checkout_time}")
}

/// A check-in/check-out device at one station, holding its operator's key.
pub struct Gate {
    pub station: String,
    pub operator: String,
    key: KeyPair,
    issued: Journal<Seqno, CheckinToken>,
    records: Journal<Seqno, CheckoutRecord>,
    /// Optimistic check-ins not yet confirmed by the clearinghouse.
    queue: Journal<Seqno, (CreditToken, Stamp)>,
    blacklist: Journal<Seqno, ()>,
    pub outbox: Outbox<Posting>,
}

impl Gate {
    pub fn new(station: &str, operator: &str, key: KeyPair) -> Gate {
        Gate {
            station: station.to_string(),
            operator: operator.to_string(),
            key,
            issued: Journal::new(),
            records: Journal::new(),
            queue: Journal::new(),
            blacklist: Journal::new(),
            outbox: Outbox::default(),
        }
    }

    pub fn queued(&self) -> usize {
        self.queue.len()
    }

    pub fn blacklist(&mut self, seqno: &Seqno) {
        self.blacklist.put(*seqno, ());
    }

    pub fn is_blacklisted(&self, seqno: &Seqno) -> bool {
        self.blacklist.contains_key(seqno)
    }

    /// Sign a check-in for `credit`, bound to the device log head.
    /// Re-presenting the same token returns the token already issued.
    #[allow(clippy::too_many_arguments)]
    pub fn checkin<R: RngCore + ?Sized>(
        &mut self,
        env: &Env,
        ptc: Option<&mut Ptc>,
        credit: &CreditToken,
        head: LogHead,
        now: u64,
        rng: &mut R,
        know: &mut Knowledge,
    ) -> Result<CheckinToken, ProtoError> {
        if let Some(t) = self.issued.get(&credit.seqno) {
            return Ok(t.clone());
        }
        if !credit.verify(&env.params, &env.dir.ptc) {
            return Err(ProtoError::Rejected("credit token does not verify".into()));
        }
        if self.is_blacklisted(&credit.seqno) {
            return Err(ProtoError::Rejected(format!("credit {} is blacklisted", short(&credit.seqno))));
        }
        if credit.value < env.min_credit() {
            return Err(ProtoError::Rejected(format!(
                "credit {} below the minimum {}",
                credit.value,
                env.min_credit()
            )));
        }
        let stamp = Stamp {
            location: self.station.clone(),
            time: now,
        };
        let stamp = if env.config.optimistic_checkin {
            self.queue.put(credit.seqno, (credit.clone(), stamp.clone()));
            stamp
        } else {
            let ptc = ptc.ok_or(ProtoError::Unreachable("clearinghouse"))?;
            ptc.checkin(env, credit, stamp, now, know)?
        };
        let token = CheckinToken::sign(
            &env.params,
            &self.key,
            &self.operator,
            &self.station,
            stamp.time,
            credit.seqno,
            Some(head),
            rng,
        );
        self.issued.put(credit.seqno, token.clone());
        know.record(
            Party::Pto(self.operator.clone()),
            now,
            vec![
                Attr::CreditSeq(credit.seqno),
                Attr::CreditIn(credit.value),
                Attr::Location(self.station.clone()),
                Attr::Time(stamp.time),
                Attr::LogHead(head),
            ],
        );
        Ok(token)
    }

    /// Push optimistic check-ins to the clearinghouse. Returns the tokens
    /// it refused; they are blacklisted here and should be everywhere.
    pub fn flush(&mut self, env: &Env, ptc: &mut Ptc, now: u64, know: &mut Knowledge) -> Vec<Seqno> {
        let queued: Vec<(Seqno, (CreditToken, Stamp))> = self.queue.iter().map(|(k, v)| (*k, v.clone())).collect();
        let mut refused = Vec::new();
        for (seqno, (credit, stamp)) in queued {
            if ptc.checkin(env, &credit, stamp, now, know).is_err() {
                ptc.registry.blacklist(&seqno);
                self.blacklist(&seqno);
                refused.push(seqno);
            }
            self.queue.remove(&seqno);
        }
        refused
    }

    /// Sign the check-out record and book the fare with the clearinghouse.
    /// A repeated check-out of the same token returns the stored record.
    #[allow(clippy::too_many_arguments)]
    pub fn checkout<R: RngCore + ?Sized>(
        &mut self,
        env: &Env,
        ptc: Option<&mut Ptc>,
        token: &CheckinToken,
        receipt: Option<&Receipt>,
        head: LogHead,
        lazy: bool,
        now: u64,
        rng: &mut R,
        know: &mut Knowledge,
    ) -> Result<CheckoutRecord, ProtoError> {
        if let Some(r) = self.records.get(&token.credit_seqno) {
            return Ok(r.clone());
        }
        if !token.verify(&env.params, env.dir.pto(&token.operator)?) {
            return Err(ProtoError::Rejected("check-in token does not verify".into()));
        }
        if self.is_blacklisted(&token.credit_seqno) {
            return Err(ProtoError::Rejected(format!(
                "credit {} is blacklisted",
                short(&token.credit_seqno)
            )));
        }
        // A check-out the clearinghouse already booked is being repeated
        // after this gate lost its copy; travel time was checked then.
        let booked_fare = ptc
            .as_deref()
            .and_then(|p| p.checkout_entry(&token.credit_seqno))
            .map(|e| e.fare);
        let elapsed = now.saturating_sub(token.time);
        if booked_fare.is_none()
            && (now < token.time || !plausible(&env.network, &token.location, &self.station, elapsed, env.config.slack)?)
        {
            return Err(ProtoError::Rejected(format!(
                "{} to {} in {elapsed} ticks is implausible",
                token.location, self.station
            )));
        }
        let ptc = ptc.ok_or(ProtoError::Unreachable("clearinghouse"))?;
        let fare = match booked_fare {
            Some(f) => f,
            None => env.fares.fare_between(&env.network, &token.location, &self.station)?,
        };
        let record = CheckoutRecord::sign(
            &env.params,
            &self.key,
            CheckoutFields {
                operator: &self.operator,
                credit_seqno: token.credit_seqno,
                location: &self.station,
                time: now,
                fare,
                lazy,
                log_head: Some(head),
            },
            rng,
        );
        let booked = ptc.checkout(env, &record, receipt, now, know)?;
        self.outbox.push(Posting::Fact(Fact::PtoLog {
            pto: self.operator.clone(),
            reference: token.credit_seqno,
            fare,
        }));
        self.records.put(token.credit_seqno, record.clone());
        let mut attrs = vec![
            Attr::CreditSeq(token.credit_seqno),
            Attr::CreditIn(booked.credit_in),
            Attr::Location(token.location.clone()),
            Attr::Time(token.time),
            Attr::Fare(fare),
            Attr::Trip(trip_label(&token.location, token.time, &self.station, now)),
            Attr::Location(self.station.clone()),
            Attr::Time(now),
        ];
        if let Some(r) = booked.receipt {
            attrs.push(Attr::ReceiptSeq(r));
            attrs.push(Attr::TopupValue(booked.topup));
        }
        attrs.push(Attr::CreditOut(booked.credit_out));
        attrs.push(Attr::LogHead(head));
        know.record(Party::Pto(self.operator.clone()), now, attrs);
        Ok(record)
    }

    pub fn sync(&mut self) -> Vec<Posting> {
        self.issued.sync();
        self.records.sync();
        self.queue.sync();
        self.blacklist.sync();
        self.outbox.sync()
    }

    pub fn crash(&mut self) {
        self.issued.crash();
        self.records.crash();
        self.queue.crash();
        self.blacklist.crash();
        self.outbox.crash();
    }
}

/// En-route inspection of a check-in token. The inspector checks the
/// signature locally and reports the leg to the clearinghouse, which
/// flags legs inconsistent with earlier inspections.
pub fn inspect_checkin(
    env: &Env,
    inspector: &str,
    ptc: Option<&mut Ptc>,
    token: &CheckinToken,
    leg: &crate::tokens::Leg,
    now: u64,
    know: &mut Knowledge,
) -> Result<(), ProtoError> {
    if !token.verify(&env.params, env.dir.pto(&token.operator)?) {
        return Err(ProtoError::Rejected("check-in token does not verify".into()));
    }
    know.record(
        Party::Pto(inspector.to_string()),
        now,
        vec![
            Attr::CreditSeq(token.credit_seqno),
            Attr::Location(leg.to_string()),
            Attr::Time(now),
        ],
    );
    if Env::day(token.time) != Env::day(now) || now < token.time {
        return Err(ProtoError::Rejected("check-in token is not from today".into()));
    }
    let ptc = ptc.ok_or(ProtoError::Unreachable("clearinghouse"))?;
    ptc.inspect(env, token, leg.clone(), now, know)
}
