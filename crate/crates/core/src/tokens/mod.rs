//! Signed artifacts exchanged between actors and their canonical encodings.
//!
//! Money is integer cents. Every token encodes to a single TLV envelope;
//! decoding is strict (no trailing bytes, fixed-width sequence numbers and
//! scalars) so that `decode(encode(t)) == t` and equal bytes mean equal tokens.

mod network;

pub use network::{fare_anonymity_census, plausible, Census, FareTable, Link, Network, BAND_METRES};

use base64::Engine;
use rand::RngCore;
use thiserror::Error;

use crate::crypto::{schnorr_sign, schnorr_verify, CryptoError, GroupParams, KeyPair, PublicKey, SchnorrSignature};
use crate::pbs::{self, PartiallyBlindSignature, PbsError, PublicPart, SecretMessage};
use crate::wire::{envelope, open_envelope, TlvReader, TlvWriter, WireError};

pub type Cents = i64;
pub type Seqno = [u8; 16];
pub type LogHead = [u8; 32];

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TokenError {
    #[error("unknown station {0}")]
    UnknownStation(String),
    #[error("no path from {0} to {1}")]
    Unreachable(String, String),
    #[error("invalid trip: {0}")]
    InvalidTrip(String),
    #[error("network config: {0}")]
    Network(String),
    #[error("fare table: {0}")]
    Fares(String),
    #[error("malformed token: {0}")]
    Malformed(&'static str),
    #[error(transparent)]
    Wire(#[from] WireError),
    #[error(transparent)]
    Crypto(#[from] CryptoError),
    #[error(transparent)]
    Pbs(#[from] PbsError),
}

pub fn fresh_seqno<R: RngCore + ?Sized>(rng: &mut R) -> Seqno {
    let mut s = [0u8; 16];
    rng.fill_bytes(&mut s);
    s
}

pub fn short(seqno: &[u8]) -> String {
    hex::encode(&seqno[..seqno.len().min(6)])
}

mod kind {
    pub const TRIP: u8 = 0x20;
    pub const RECEIPT: u8 = 0x21;
    pub const TICKET: u8 = 0x22;
    pub const CREDIT: u8 = 0x23;
    pub const CHECKIN: u8 = 0x24;
    pub const CHECKOUT: u8 = 0x25;
    pub const TICKET_SECRET: u8 = 0x26;
    pub const CHECKIN_TBS: u8 = 0x34;
    pub const CHECKOUT_TBS: u8 = 0x35;
}

mod field {
    pub const DATE: u8 = 0x01;
    pub const STATION: u8 = 0x02;
    pub const SEQNO: u8 = 0x03;
    pub const MONEY: u8 = 0x04;
    pub const SIG: u8 = 0x05;
    pub const SERVICE: u8 = 0x06;
    pub const TIME: u8 = 0x07;
    pub const LOG_HEAD: u8 = 0x08;
    pub const FLAG: u8 = 0x09;
    pub const TRIP: u8 = 0x0a;
    pub const OPERATOR: u8 = 0x0b;
}

fn read_station<'a>(r: &mut TlvReader<'a>, typ: u8) -> Result<&'a str, TokenError> {
    let s = r.str(typ)?;
    if s.is_empty() {
        return Err(TokenError::Malformed("empty station id"));
    }
    Ok(s)
}

fn read_flag(r: &mut TlvReader) -> Result<bool, TokenError> {
    match r.u8(field::FLAG)? {
        0 => Ok(false),
        1 => Ok(true),
        _ => Err(TokenError::Malformed("flag out of range")),
    }
}

fn read_head(r: &mut TlvReader) -> Result<Option<LogHead>, TokenError> {
    match r.optional(field::LOG_HEAD)? {
        None => Ok(None),
        Some(b) => Ok(Some(b.try_into().map_err(|_| TokenError::Malformed("log head length"))?)),
    }
}

fn read_pbs(params: &GroupParams, r: &mut TlvReader) -> Result<PartiallyBlindSignature, TokenError> {
    Ok(PartiallyBlindSignature::from_bytes(params, r.expect(field::SIG)?)?)
}

fn read_schnorr(params: &GroupParams, r: &mut TlvReader) -> Result<SchnorrSignature, TokenError> {
    SchnorrSignature::from_bytes(params, r.expect(field::SIG)?).ok_or(TokenError::Malformed("signature"))
}

fn expect_kind(bytes: &[u8], want: u8) -> Result<&[u8], TokenError> {
    let (typ, body) = open_envelope(bytes)?;
    if typ != want {
        return Err(WireError::UnexpectedType { expected: want, found: typ }.into());
    }
    Ok(body)
}

/// A route on a calendar day (days since the simulation epoch).
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Trip {
    pub route: Vec<String>,
    pub date: u32,
}

/// A contiguous part of a journey between two stations.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Leg {
    pub from: String,
    pub to: String,
}

impl Leg {
    pub fn new(from: &str, to: &str) -> Leg {
        Leg {
            from: from.to_string(),
            to: to.to_string(),
        }
    }
}

impl std::fmt::Display for Leg {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}>{}", self.from, self.to)
    }
}

impl Trip {
    pub fn new(route: &[&str], date: u32) -> Trip {
        Trip {
            route: route.iter().map(|s| s.to_string()).collect(),
            date,
        }
    }

    pub fn validate(&self, network: &Network) -> Result<(), TokenError> {
        network.route_metres(&self.route).map(|_| ())
    }

    /// The leg runs forward along the route.
    pub fn covers(&self, leg: &Leg) -> bool {
        let from = self.route.iter().position(|s| *s == leg.from);
        let to = self.route.iter().rposition(|s| *s == leg.to);
        matches!((from, to), (Some(a), Some(b)) if a < b)
    }

    fn write(&self, w: &mut TlvWriter) {
        w.u32(field::DATE, self.date);
        for s in &self.route {
            w.str(field::STATION, s);
        }
    }

    fn read(r: &mut TlvReader) -> Result<Trip, TokenError> {
        let date = r.u32(field::DATE)?;
        let mut route = Vec::new();
        while r.peek_type() == Some(field::STATION) {
            route.push(read_station(r, field::STATION)?.to_string());
        }
        if route.len() < 2 {
            return Err(TokenError::Malformed("route shorter than two stations"));
        }
        Ok(Trip { route, date })
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut w = TlvWriter::new();
        self.write(&mut w);
        envelope(kind::TRIP, &w.finish())
    }

    pub fn decode(bytes: &[u8]) -> Result<Trip, TokenError> {
        let mut r = TlvReader::new(expect_kind(bytes, kind::TRIP)?);
        let trip = Trip::read(&mut r)?;
        r.finish()?;
        Ok(trip)
    }
}

impl std::fmt::Display for Trip {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}@d{}", self.route.join(">"), self.date)
    }
}

/// Which service a receipt may be redeemed at.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Service {
    /// ticket purchase from an operator
    Pto,
    /// travel credit at the clearinghouse
    Ptc,
}

impl Service {
    pub fn label(self) -> &'static str {
        match self {
            Service::Pto => "receipt/PTO",
            Service::Ptc => "receipt/PTC",
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Service::Pto => "PTO",
            Service::Ptc => "PTC",
        }
    }

    pub fn parse(s: &str) -> Option<Service> {
        match s.to_ascii_uppercase().as_str() {
            "PTO" => Some(Service::Pto),
            "PTC" => Some(Service::Ptc),
            _ => None,
        }
    }
}

pub const TICKET_LABEL: &str = "ticket";
pub const CREDIT_LABEL: &str = "credit";

/// Proof of payment from the PSP.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Receipt {
    pub service: Service,
    pub fare: Cents,
    pub seqno: Seqno,
    pub sig: PartiallyBlindSignature,
}

impl Receipt {
    pub fn public_part(service: Service, fare: Cents) -> PublicPart {
        PublicPart::new(service.label(), fare).expect("non-empty label")
    }

    pub fn secret(seqno: &Seqno) -> SecretMessage {
        SecretMessage(seqno.to_vec())
    }

    pub fn verify(&self, params: &GroupParams, psp: &PublicKey) -> bool {
        pbs::verify(
            params,
            psp,
            &Self::public_part(self.service, self.fare),
            &Self::secret(&self.seqno),
            &self.sig,
        )
    }

    pub fn encode(&self, params: &GroupParams) -> Vec<u8> {
        let mut w = TlvWriter::new();
        w.str(field::SERVICE, self.service.name())
            .i64(field::MONEY, self.fare)
            .bytes(field::SEQNO, &self.seqno)
            .bytes(field::SIG, &self.sig.to_bytes(params));
        envelope(kind::RECEIPT, &w.finish())
    }

    pub fn decode(params: &GroupParams, bytes: &[u8]) -> Result<Receipt, TokenError> {
        let mut r = TlvReader::new(expect_kind(bytes, kind::RECEIPT)?);
        let service = Service::parse(r.str(field::SERVICE)?).ok_or(TokenError::Malformed("service"))?;
        let fare = r.i64(field::MONEY)?;
        let seqno = r.array(field::SEQNO)?;
        let sig = read_pbs(params, &mut r)?;
        r.finish()?;
        Ok(Receipt {
            service,
            fare,
            seqno,
            sig,
        })
    }
}

/// A single-day ticket for a route, with the fare as its public part.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Ticket {
    pub trip: Trip,
    pub seqno: Seqno,
    pub fare: Cents,
    pub sig: PartiallyBlindSignature,
}

impl Ticket {
    pub fn public_part(fare: Cents) -> PublicPart {
        PublicPart::new(TICKET_LABEL, fare).expect("non-empty label")
    }

    /// The blinded message: trip and ticket sequence number.
    pub fn secret(trip: &Trip, seqno: &Seqno) -> SecretMessage {
        let mut w = TlvWriter::new();
        trip.write(&mut w);
        w.bytes(field::SEQNO, seqno);
        SecretMessage(envelope(kind::TICKET_SECRET, &w.finish()))
    }

    pub fn verify(&self, params: &GroupParams, pto: &PublicKey) -> bool {
        pbs::verify(
            params,
            pto,
            &Self::public_part(self.fare),
            &Self::secret(&self.trip, &self.seqno),
            &self.sig,
        )
    }

    pub fn encode(&self, params: &GroupParams) -> Vec<u8> {
        let mut w = TlvWriter::new();
        w.bytes(field::TRIP, &self.trip.encode())
            .bytes(field::SEQNO, &self.seqno)
            .i64(field::MONEY, self.fare)
            .bytes(field::SIG, &self.sig.to_bytes(params));
        envelope(kind::TICKET, &w.finish())
    }

    pub fn decode(params: &GroupParams, bytes: &[u8]) -> Result<Ticket, TokenError> {
        let mut r = TlvReader::new(expect_kind(bytes, kind::TICKET)?);
        let trip = Trip::decode(r.expect(field::TRIP)?)?;
        let seqno = r.array(field::SEQNO)?;
        let fare = r.i64(field::MONEY)?;
        let sig = read_pbs(params, &mut r)?;
        r.finish()?;
        Ok(Ticket { trip, seqno, fare, sig })
    }

    /// Payload shown to an inspector as a QR code.
    pub fn qr_payload(&self, params: &GroupParams) -> String {
        base64::engine::general_purpose::STANDARD.encode(self.encode(params))
    }

    pub fn from_qr(params: &GroupParams, payload: &str) -> Result<Ticket, TokenError> {
        let bytes = base64::engine::general_purpose::STANDARD
            .decode(payload)
            .map_err(|_| TokenError::Malformed("base64"))?;
        Ticket::decode(params, &bytes)
    }
}

/// Travel credit held on the device. The value may be negative.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CreditToken {
    pub seqno: Seqno,
    pub value: Cents,
    pub sig: PartiallyBlindSignature,
}

impl CreditToken {
    pub fn public_part(value: Cents) -> PublicPart {
        PublicPart::new(CREDIT_LABEL, value).expect("non-empty label")
    }

    pub fn secret(seqno: &Seqno) -> SecretMessage {
        SecretMessage(seqno.to_vec())
    }

    pub fn verify(&self, params: &GroupParams, ptc: &PublicKey) -> bool {
        pbs::verify(
            params,
            ptc,
            &Self::public_part(self.value),
            &Self::secret(&self.seqno),
            &self.sig,
        )
    }

    pub fn encode(&self, params: &GroupParams) -> Vec<u8> {
        let mut w = TlvWriter::new();
        w.bytes(field::SEQNO, &self.seqno)
            .i64(field::MONEY, self.value)
            .bytes(field::SIG, &self.sig.to_bytes(params));
        envelope(kind::CREDIT, &w.finish())
    }

    pub fn decode(params: &GroupParams, bytes: &[u8]) -> Result<CreditToken, TokenError> {
        let mut r = TlvReader::new(expect_kind(bytes, kind::CREDIT)?);
        let seqno = r.array(field::SEQNO)?;
        let value = r.i64(field::MONEY)?;
        let sig = read_pbs(params, &mut r)?;
        r.finish()?;
        Ok(CreditToken { seqno, value, sig })
    }
}

/// Gate-signed record of a check-in.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CheckinToken {
    pub operator: String,
    pub location: String,
    pub time: u64,
    pub credit_seqno: Seqno,
    pub log_head: Option<LogHead>,
    pub sig: SchnorrSignature,
}

impl CheckinToken {
    fn write_body(w: &mut TlvWriter, operator: &str, location: &str, time: u64, seqno: &Seqno, head: &Option<LogHead>) {
        w.str(field::OPERATOR, operator)
            .str(field::STATION, location)
            .u64(field::TIME, time)
            .bytes(field::SEQNO, seqno);
        if let Some(h) = head {
            w.bytes(field::LOG_HEAD, h);
        }
    }

    fn tbs(operator: &str, location: &str, time: u64, seqno: &Seqno, head: &Option<LogHead>) -> Vec<u8> {
        let mut w = TlvWriter::new();
        Self::write_body(&mut w, operator, location, time, seqno, head);
        envelope(kind::CHECKIN_TBS, &w.finish())
    }

    #[allow(clippy::too_many_arguments)]
    pub fn sign<R: RngCore + ?Sized>(
        params: &GroupParams,
        key: &KeyPair,
        operator: &str,
        location: &str,
        time: u64,
        credit_seqno: Seqno,
        log_head: Option<LogHead>,
        rng: &mut R,
    ) -> CheckinToken {
        let msg = Self::tbs(operator, location, time, &credit_seqno, &log_head);
        CheckinToken {
            operator: operator.to_string(),
            location: location.to_string(),
            time,
            credit_seqno,
            log_head,
            sig: schnorr_sign(params, key, &msg, rng),
        }
    }

    pub fn verify(&self, params: &GroupParams, pto: &PublicKey) -> bool {
        let msg = Self::tbs(&self.operator, &self.location, self.time, &self.credit_seqno, &self.log_head);
        schnorr_verify(params, pto, &msg, &self.sig)
    }

    pub fn encode(&self, params: &GroupParams) -> Vec<u8> {
        let mut w = TlvWriter::new();
        Self::write_body(&mut w, &self.operator, &self.location, self.time, &self.credit_seqno, &self.log_head);
        w.bytes(field::SIG, &self.sig.to_bytes(params));
        envelope(kind::CHECKIN, &w.finish())
    }

    pub fn decode(params: &GroupParams, bytes: &[u8]) -> Result<CheckinToken, TokenError> {
        let mut r = TlvReader::new(expect_kind(bytes, kind::CHECKIN)?);
        let operator = r.str(field::OPERATOR)?.to_string();
        let location = read_station(&mut r, field::STATION)?.to_string();
        let time = r.u64(field::TIME)?;
        let credit_seqno = r.array(field::SEQNO)?;
        let log_head = read_head(&mut r)?;
        let sig = read_schnorr(params, &mut r)?;
        r.finish()?;
        Ok(CheckinToken {
            operator,
            location,
            time,
            credit_seqno,
            log_head,
            sig,
        })
    }
}

/// Gate-signed record of a check-out and the fare charged. A `lazy` record
/// is the interim proof used to claim the next credit token later.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CheckoutRecord {
    pub operator: String,
    pub credit_seqno: Seqno,
    pub location: String,
    pub time: u64,
    pub fare: Cents,
    pub lazy: bool,
    pub log_head: Option<LogHead>,
    pub sig: SchnorrSignature,
}

pub struct CheckoutFields<'a> {
    pub operator: &'a str,
    pub credit_seqno: Seqno,
    pub location: &'a str,
    pub time: u64,
    pub fare: Cents,
    pub lazy: bool,
    pub log_head: Option<LogHead>,
}

impl CheckoutRecord {
    fn write_body(w: &mut TlvWriter, f: &CheckoutFields) {
        w.str(field::OPERATOR, f.operator)
            .bytes(field::SEQNO, &f.credit_seqno)
            .str(field::STATION, f.location)
            .u64(field::TIME, f.time)
            .i64(field::MONEY, f.fare)
            .u8(field::FLAG, f.lazy as u8);
        if let Some(h) = &f.log_head {
            w.bytes(field::LOG_HEAD, h);
        }
    }

    fn fields(&self) -> CheckoutFields<'_> {
        CheckoutFields {
            operator: &self.operator,
            credit_seqno: self.credit_seqno,
            location: &self.location,
            time: self.time,
            fare: self.fare,
            lazy: self.lazy,
            log_head: self.log_head,
        }
    }

    fn tbs(f: &CheckoutFields) -> Vec<u8> {
        let mut w = TlvWriter::new();
        Self::write_body(&mut w, f);
        envelope(kind::CHECKOUT_TBS, &w.finish())
    }

    pub fn sign<R: RngCore + ?Sized>(params: &GroupParams, key: &KeyPair, f: CheckoutFields, rng: &mut R) -> CheckoutRecord {
        let sig = schnorr_sign(params, key, &Self::tbs(&f), rng);
        CheckoutRecord {
            operator: f.operator.to_string(),
            credit_seqno: f.credit_seqno,
            location: f.location.to_string(),
            time: f.time,
            fare: f.fare,
            lazy: f.lazy,
            log_head: f.log_head,
            sig,
        }
    }

    pub fn verify(&self, params: &GroupParams, pto: &PublicKey) -> bool {
        schnorr_verify(params, pto, &Self::tbs(&self.fields()), &self.sig)
    }

    pub fn encode(&self, params: &GroupParams) -> Vec<u8> {
        let mut w = TlvWriter::new();
        Self::write_body(&mut w, &self.fields());
        w.bytes(field::SIG, &self.sig.to_bytes(params));
        envelope(kind::CHECKOUT, &w.finish())
    }

    pub fn decode(params: &GroupParams, bytes: &[u8]) -> Result<CheckoutRecord, TokenError> {
        let mut r = TlvReader::new(expect_kind(bytes, kind::CHECKOUT)?);
        let operator = r.str(field::OPERATOR)?.to_string();
        let credit_seqno = r.array(field::SEQNO)?;
        let location = read_station(&mut r, field::STATION)?.to_string();
        let time = r.u64(field::TIME)?;
        let fare = r.i64(field::MONEY)?;
        let lazy = read_flag(&mut r)?;
        let log_head = read_head(&mut r)?;
        let sig = read_schnorr(params, &mut r)?;
        r.finish()?;
        Ok(CheckoutRecord {
            operator,
            credit_seqno,
            location,
            time,
            fare,
            lazy,
            log_head,
            sig,
        })
    }
}
