//! Durable issuing sessions around the partially blind signature.
//!
//! Wire flow for one issuance (step numbers are the fault-injection
//! boundaries used by the simulator):
//!
//! | step | direction      | message        | signer phase after  | user phase after |
//! |------|----------------|----------------|---------------------|------------------|
//! | 0    | user -> signer | `Request`      |                     | `Init`           |
//! | 1    | signer -> user | `Announcement` | `Announced`         |                  |
//! | 2    | user -> signer | `Challenge`    |                     | `ChallengeSent`  |
//! | 3    | signer -> user | `Intermediate` | `IntermediateSent`  |                  |
//! | 4    | user -> signer | `Ack`          | `Completed`         | `Completed`      |
//!
//! The request carries a Pedersen commitment to `H(secret)` and a
//! non-interactive proof of its opening bound to the session id. Every state
//! change is written to a [`Journal`]; the caller syncs before releasing the
//! returned message.
//!
//! Recovery: a signer that restarts before `IntermediateSent` begins a new
//! attempt with fresh nonces and the same commitment; at or after
//! `IntermediateSent` it only ever resends the stored intermediate signature.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::RngCore;
use thiserror::Error;

use crate::crypto::{
    pedersen_commit, pok_prove, pok_verify, tags, GroupParams, KeyPair, Opening, PedersenCommitment, PoK, PublicKey,
    Scalar,
};
use crate::journal::Journal;
use crate::pbs::{
    self, AnnouncementView, FailedTranscript, IntermediateSignature, PartiallyBlindSignature, PbsError, PublicPart,
    SecretMessage, SignerAnnouncement, UserState,
};
use crate::wire::{envelope, open_envelope, TlvReader, TlvWriter, WireError};

pub type SessionId = [u8; 16];

/// 30 logical days of 86 400 ticks.
pub const DEFAULT_RETENTION: u64 = 30 * 86_400;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SessionError {
    #[error("unknown session {}", hex::encode(.0))]
    UnknownSession(SessionId),
    #[error("message {got} not expected in phase {phase:?}")]
    OutOfOrder { phase: Phase, got: &'static str },
    #[error("stale attempt {got} (current {current})")]
    Stale { got: u32, current: u32 },
    #[error("no public key registered for signer {0}")]
    UnknownSigner(String),
    #[error(transparent)]
    Wire(#[from] WireError),
    #[error(transparent)]
    Pbs(#[from] PbsError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Phase {
    Init,
    Announced,
    ChallengeSent,
    IntermediateSent,
    Completed,
    Aborted,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum DisputeOutcome {
    ReissueFromIntermediate,
    RestartFromScratch,
    AlreadyComplete,
    Rejected(String),
}

impl DisputeOutcome {
    pub fn name(&self) -> &'static str {
        match self {
            DisputeOutcome::ReissueFromIntermediate => "reissue-from-intermediate",
            DisputeOutcome::RestartFromScratch => "restart-from-scratch",
            DisputeOutcome::AlreadyComplete => "already-complete",
            DisputeOutcome::Rejected(_) => "rejected",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum IssueMsg {
    Request {
        sid: SessionId,
        attempt: u32,
        commitment: PedersenCommitment,
        pok: PoK,
        attachment: Vec<u8>,
    },
    Announcement {
        sid: SessionId,
        attempt: u32,
        public_part: PublicPart,
        view: AnnouncementView,
        attachment: Vec<u8>,
    },
    Challenge {
        sid: SessionId,
        attempt: u32,
        e: Scalar,
    },
    Intermediate {
        sid: SessionId,
        attempt: u32,
        intermediate: IntermediateSignature,
    },
    Ack {
        sid: SessionId,
        attempt: u32,
    },
    Dispute {
        sid: SessionId,
        commitment: PedersenCommitment,
    },
    Resolution {
        sid: SessionId,
        outcome: String,
    },
    Reject {
        sid: SessionId,
        reason: String,
    },
}

mod field {
    pub const SID: u8 = 0x01;
    pub const ATTEMPT: u8 = 0x02;
    pub const ELEMENT: u8 = 0x03;
    pub const SCALAR: u8 = 0x04;
    pub const ATTACHMENT: u8 = 0x05;
    pub const PUBLIC: u8 = 0x06;
    pub const TEXT: u8 = 0x07;
}

mod kind {
    pub const REQUEST: u8 = 0x10;
    pub const ANNOUNCEMENT: u8 = 0x11;
    pub const CHALLENGE: u8 = 0x12;
    pub const INTERMEDIATE: u8 = 0x13;
    pub const ACK: u8 = 0x14;
    pub const DISPUTE: u8 = 0x15;
    pub const RESOLUTION: u8 = 0x16;
    pub const REJECT: u8 = 0x17;
}

impl IssueMsg {
    pub fn sid(&self) -> &SessionId {
        match self {
            IssueMsg::Request { sid, .. }
            | IssueMsg::Announcement { sid, .. }
            | IssueMsg::Challenge { sid, .. }
            | IssueMsg::Intermediate { sid, .. }
            | IssueMsg::Ack { sid, .. }
            | IssueMsg::Dispute { sid, .. }
            | IssueMsg::Resolution { sid, .. }
            | IssueMsg::Reject { sid, .. } => sid,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            IssueMsg::Request { .. } => "Request",
            IssueMsg::Announcement { .. } => "Announcement",
            IssueMsg::Challenge { .. } => "Challenge",
            IssueMsg::Intermediate { .. } => "Intermediate",
            IssueMsg::Ack { .. } => "Ack",
            IssueMsg::Dispute { .. } => "Dispute",
            IssueMsg::Resolution { .. } => "Resolution",
            IssueMsg::Reject { .. } => "Reject",
        }
    }

    /// Fault-injection boundary index of the normal-flow messages.
    pub fn step(&self) -> Option<u8> {
        match self {
            IssueMsg::Request { .. } => Some(0),
            IssueMsg::Announcement { .. } => Some(1),
            IssueMsg::Challenge { .. } => Some(2),
            IssueMsg::Intermediate { .. } => Some(3),
            IssueMsg::Ack { .. } => Some(4),
            _ => None,
        }
    }

    pub fn encode(&self, params: &GroupParams) -> Vec<u8> {
        let mut w = TlvWriter::new();
        w.bytes(field::SID, self.sid());
        let typ = match self {
            IssueMsg::Request {
                attempt,
                commitment,
                pok,
                attachment,
                ..
            } => {
                w.u32(field::ATTEMPT, *attempt)
                    .bytes(field::ELEMENT, &params.element_bytes(&commitment.0))
                    .bytes(field::ELEMENT, &params.element_bytes(&pok.a))
                    .bytes(field::SCALAR, &params.scalar_bytes(&pok.z1))
                    .bytes(field::SCALAR, &params.scalar_bytes(&pok.z2))
                    .bytes(field::ATTACHMENT, attachment);
                kind::REQUEST
            }
            IssueMsg::Announcement {
                attempt,
                public_part,
                view,
                attachment,
                ..
            } => {
                w.u32(field::ATTEMPT, *attempt)
                    .bytes(field::PUBLIC, &public_part.encode())
                    .bytes(field::ELEMENT, &params.element_bytes(&view.a))
                    .bytes(field::ELEMENT, &params.element_bytes(&view.b))
                    .bytes(field::ATTACHMENT, attachment);
                kind::ANNOUNCEMENT
            }
            IssueMsg::Challenge { attempt, e, .. } => {
                w.u32(field::ATTEMPT, *attempt).bytes(field::SCALAR, &params.scalar_bytes(e));
                kind::CHALLENGE
            }
            IssueMsg::Intermediate { attempt, intermediate, .. } => {
                w.u32(field::ATTEMPT, *attempt)
                    .bytes(field::SCALAR, &intermediate.to_bytes(params));
                kind::INTERMEDIATE
            }
            IssueMsg::Ack { attempt, .. } => {
                w.u32(field::ATTEMPT, *attempt);
                kind::ACK
            }
            IssueMsg::Dispute { commitment, .. } => {
                w.bytes(field::ELEMENT, &params.element_bytes(&commitment.0));
                kind::DISPUTE
            }
            IssueMsg::Resolution { outcome, .. } => {
                w.str(field::TEXT, outcome);
                kind::RESOLUTION
            }
            IssueMsg::Reject { reason, .. } => {
                w.str(field::TEXT, reason);
                kind::REJECT
            }
        };
        envelope(typ, &w.finish())
    }

    pub fn decode(params: &GroupParams, bytes: &[u8]) -> Result<IssueMsg, SessionError> {
        let (typ, body) = open_envelope(bytes)?;
        let mut r = TlvReader::new(body);
        let sid: SessionId = r.array(field::SID)?;
        let element = |r: &mut TlvReader| -> Result<_, SessionError> {
            params
                .element_from_bytes(r.expect(field::ELEMENT)?)
                .map_err(|e| SessionError::Pbs(e.into()))
        };
        let scalar = |r: &mut TlvReader| -> Result<_, SessionError> {
            params
                .scalar_from_bytes(r.expect(field::SCALAR)?)
                .map_err(|e| SessionError::Pbs(e.into()))
        };
        let msg = match typ {
            kind::REQUEST => {
                let attempt = r.u32(field::ATTEMPT)?;
                let commitment = PedersenCommitment(element(&mut r)?);
                let a = element(&mut r)?;
                let z1 = scalar(&mut r)?;
                let z2 = scalar(&mut r)?;
                let attachment = r.expect(field::ATTACHMENT)?.to_vec();
                IssueMsg::Request {
                    sid,
                    attempt,
                    commitment,
                    pok: PoK { a, z1, z2 },
                    attachment,
                }
            }
            kind::ANNOUNCEMENT => {
                let attempt = r.u32(field::ATTEMPT)?;
                let public_part = PublicPart::decode(r.expect(field::PUBLIC)?)?;
                // (a, b) are subgroup-checked here; user_blind re-checks a != 1
                let a = element(&mut r)?;
                let b = element(&mut r)?;
                let attachment = r.expect(field::ATTACHMENT)?.to_vec();
                IssueMsg::Announcement {
                    sid,
                    attempt,
                    public_part,
                    view: AnnouncementView { a, b },
                    attachment,
                }
            }
            kind::CHALLENGE => {
                let attempt = r.u32(field::ATTEMPT)?;
                IssueMsg::Challenge {
                    sid,
                    attempt,
                    e: scalar(&mut r)?,
                }
            }
            kind::INTERMEDIATE => {
                let attempt = r.u32(field::ATTEMPT)?;
                let intermediate = IntermediateSignature::from_bytes(params, r.expect(field::SCALAR)?)
                    .map_err(|e| SessionError::Pbs(e.into()))?;
                IssueMsg::Intermediate {
                    sid,
                    attempt,
                    intermediate,
                }
            }
            kind::ACK => IssueMsg::Ack {
                sid,
                attempt: r.u32(field::ATTEMPT)?,
            },
            kind::DISPUTE => IssueMsg::Dispute {
                sid,
                commitment: PedersenCommitment(element(&mut r)?),
            },
            kind::RESOLUTION => IssueMsg::Resolution {
                sid,
                outcome: r.str(field::TEXT)?.to_string(),
            },
            kind::REJECT => IssueMsg::Reject {
                sid,
                reason: r.str(field::TEXT)?.to_string(),
            },
            _ => return Err(WireError::Invalid("unknown issuance message type").into()),
        };
        r.finish()?;
        Ok(msg)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    In,
    Out,
}

/// One entry of a session's message log.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LoggedMessage {
    pub counter: u64,
    pub direction: Direction,
    pub name: &'static str,
    pub at: u64,
}

#[derive(Clone, Debug)]
pub struct SignerRecord {
    pub sid: SessionId,
    pub phase: Phase,
    pub attempt: u32,
    pub commitment: PedersenCommitment,
    /// `None` when the session was refused before a public part was chosen.
    pub public_part: Option<PublicPart>,
    pub announcement: Option<SignerAnnouncement>,
    pub attachment: Vec<u8>,
    pub e: Option<Scalar>,
    pub intermediate: Option<IntermediateSignature>,
    pub abort_reason: Option<String>,
    pub created: u64,
    pub updated: u64,
    pub log: Vec<LoggedMessage>,
}

impl SignerRecord {
    fn note(&mut self, direction: Direction, name: &'static str, at: u64) {
        let counter = self.log.last().map_or(0, |m| m.counter + 1);
        self.log.push(LoggedMessage {
            counter,
            direction,
            name,
            at,
        });
        self.updated = at;
    }

    fn announcement_msg(&self) -> Option<IssueMsg> {
        let ann = self.announcement.as_ref()?;
        Some(IssueMsg::Announcement {
            sid: self.sid,
            attempt: self.attempt,
            public_part: ann.public_part.clone(),
            view: ann.view.clone(),
            attachment: self.attachment.clone(),
        })
    }

    fn intermediate_msg(&self) -> Option<IssueMsg> {
        Some(IssueMsg::Intermediate {
            sid: self.sid,
            attempt: self.attempt,
            intermediate: self.intermediate.clone()?,
        })
    }

    /// The signer's view of the attempt that produced the intermediate.
    pub fn signer_view(&self) -> Option<pbs::SignerView> {
        let ann = self.announcement.as_ref()?;
        Some(pbs::SignerView {
            a: ann.view.a.clone(),
            b: ann.view.b.clone(),
            e: self.e.clone()?,
            intermediate: self.intermediate.clone()?,
        })
    }
}

/// Signer decision on a fresh request: the public part to sign and an
/// attachment for the announcement, or a refusal.
pub enum Admission {
    Accept { public_part: PublicPart, attachment: Vec<u8> },
    Refuse(String),
}

pub struct SignerSessions {
    params: Arc<GroupParams>,
    store: Journal<SessionId, SignerRecord>,
    pub retention: u64,
}

impl SignerSessions {
    pub fn new(params: Arc<GroupParams>) -> Self {
        SignerSessions {
            params,
            store: Journal::new(),
            retention: DEFAULT_RETENTION,
        }
    }

    pub fn record(&self, sid: &SessionId) -> Option<&SignerRecord> {
        self.store.get(sid)
    }

    pub fn records(&self) -> impl Iterator<Item = &SignerRecord> {
        self.store.values()
    }

    pub fn journal_mut(&mut self) -> &mut Journal<SessionId, SignerRecord> {
        &mut self.store
    }

    fn announce<R: RngCore + ?Sized>(&self, rec: &mut SignerRecord, public_part: &PublicPart, rng: &mut R) {
        rec.announcement = Some(pbs::signer_announce(&self.params, public_part, rng));
        rec.phase = Phase::Announced;
        rec.e = None;
        rec.intermediate = None;
        rec.abort_reason = None;
    }

    fn reject(sid: SessionId, reason: impl Into<String>) -> IssueMsg {
        IssueMsg::Reject {
            sid,
            reason: reason.into(),
        }
    }

    /// Process one inbound message. `admit` runs only for a session id the
    /// signer has never seen, after the proof of knowledge checks out.
    pub fn handle<R: RngCore + ?Sized>(
        &mut self,
        key: &KeyPair,
        msg: &IssueMsg,
        now: u64,
        rng: &mut R,
        admit: impl FnOnce(&SessionId, &[u8]) -> Admission,
    ) -> Result<Option<IssueMsg>, SessionError> {
        let sid = *msg.sid();
        let Some(existing) = self.store.get(&sid).cloned() else {
            return match msg {
                IssueMsg::Request {
                    commitment,
                    pok,
                    attachment,
                    ..
                } => Ok(Some(self.accept(sid, commitment, pok, attachment, now, rng, admit))),
                IssueMsg::Dispute { .. } => Err(SessionError::UnknownSession(sid)),
                IssueMsg::Challenge { .. } | IssueMsg::Ack { .. } => Ok(Some(Self::reject(sid, "unknown session"))),
                _ => Err(SessionError::OutOfOrder {
                    phase: Phase::Init,
                    got: msg.name(),
                }),
            };
        };
        let mut rec = existing;
        match msg {
            IssueMsg::Request { commitment, .. } => {
                if *commitment != rec.commitment {
                    return Ok(Some(Self::reject(sid, "session id reused with a different commitment")));
                }
                // retransmitted request: replay whatever we last sent
                Ok(match (rec.phase, rec.public_part.clone()) {
                    (Phase::Announced, _) => rec.announcement_msg(),
                    (Phase::IntermediateSent | Phase::Completed, _) => rec.intermediate_msg(),
                    // admitted but timed out: the payment stands, so start over
                    (Phase::Aborted, Some(pp)) => {
                        rec.attempt += 1;
                        self.announce(&mut rec, &pp, rng);
                        rec.note(Direction::Out, "Announcement", now);
                        let out = rec.announcement_msg();
                        self.store.put(sid, rec);
                        out
                    }
                    _ => Some(Self::reject(sid, rec.abort_reason.clone().unwrap_or_default())),
                })
            }
            IssueMsg::Challenge { attempt, e, .. } => match rec.phase {
                Phase::Announced => {
                    if *attempt != rec.attempt {
                        return Err(SessionError::Stale {
                            got: *attempt,
                            current: rec.attempt,
                        });
                    }
                    let ann = rec.announcement.as_mut().expect("announced record has nonces");
                    let im = pbs::signer_respond(&self.params, ann, key, e)?;
                    rec.e = Some(e.clone());
                    rec.intermediate = Some(im);
                    rec.phase = Phase::IntermediateSent;
                    rec.note(Direction::In, "Challenge", now);
                    rec.note(Direction::Out, "Intermediate", now);
                    let out = rec.intermediate_msg();
                    self.store.put(sid, rec);
                    Ok(out)
                }
                // never recompute: the stored intermediate answers the stored e only
                Phase::IntermediateSent | Phase::Completed => Ok(rec.intermediate_msg()),
                Phase::Aborted => Ok(Some(Self::reject(sid, rec.abort_reason.clone().unwrap_or_default()))),
                phase => Err(SessionError::OutOfOrder {
                    phase,
                    got: "Challenge",
                }),
            },
            IssueMsg::Ack { attempt, .. } => {
                if rec.phase == Phase::IntermediateSent && *attempt == rec.attempt {
                    rec.phase = Phase::Completed;
                    rec.note(Direction::In, "Ack", now);
                    self.store.put(sid, rec);
                }
                Ok(None)
            }
            IssueMsg::Dispute { commitment, .. } => {
                let (_, reply) = self.resolve_signature_dispute(&sid, commitment, now, rng)?;
                Ok(reply)
            }
            other => Err(SessionError::OutOfOrder {
                phase: rec.phase,
                got: other.name(),
            }),
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn accept<R: RngCore + ?Sized>(
        &mut self,
        sid: SessionId,
        commitment: &PedersenCommitment,
        pok: &PoK,
        attachment: &[u8],
        now: u64,
        rng: &mut R,
        admit: impl FnOnce(&SessionId, &[u8]) -> Admission,
    ) -> IssueMsg {
        let mut rec = SignerRecord {
            sid,
            phase: Phase::Init,
            attempt: 0,
            commitment: commitment.clone(),
            public_part: None,
            announcement: None,
            attachment: Vec::new(),
            e: None,
            intermediate: None,
            abort_reason: None,
            created: now,
            updated: now,
            log: Vec::new(),
        };
        rec.note(Direction::In, "Request", now);
        if !pok_verify(&self.params, commitment, &sid, pok) {
            rec.phase = Phase::Aborted;
            rec.abort_reason = Some("proof of knowledge failed".into());
            self.store.put(sid, rec);
            return Self::reject(sid, "proof of knowledge failed");
        }
        match admit(&sid, attachment) {
            Admission::Refuse(reason) => {
                rec.phase = Phase::Aborted;
                rec.abort_reason = Some(reason.clone());
                self.store.put(sid, rec);
                Self::reject(sid, reason)
            }
            Admission::Accept {
                public_part,
                attachment,
            } => {
                rec.attachment = attachment;
                self.announce(&mut rec, &public_part, rng);
                rec.public_part = Some(public_part);
                rec.note(Direction::Out, "Announcement", now);
                let out = rec.announcement_msg().expect("just announced");
                self.store.put(sid, rec);
                out
            }
        }
    }

    /// Next message after a restart. Before the intermediate exists this is
    /// a fresh attempt; afterwards it is the stored intermediate.
    pub fn resume<R: RngCore + ?Sized>(
        &mut self,
        sid: &SessionId,
        now: u64,
        rng: &mut R,
    ) -> Result<Option<IssueMsg>, SessionError> {
        let mut rec = self.store.get(sid).cloned().ok_or(SessionError::UnknownSession(*sid))?;
        match rec.phase {
            Phase::Announced => {
                let pp = rec.public_part.clone().expect("announced record has a public part");
                rec.attempt += 1;
                self.announce(&mut rec, &pp, rng);
                rec.note(Direction::Out, "Announcement", now);
                let out = rec.announcement_msg();
                self.store.put(*sid, rec);
                Ok(out)
            }
            Phase::IntermediateSent => Ok(rec.intermediate_msg()),
            _ => Ok(None),
        }
    }

    /// Messages to send after a restart, one per open session.
    pub fn resume_all<R: RngCore + ?Sized>(&mut self, now: u64, rng: &mut R) -> Vec<IssueMsg> {
        let open: Vec<SessionId> = self
            .store
            .iter()
            .filter(|(_, r)| matches!(r.phase, Phase::Announced | Phase::IntermediateSent))
            .map(|(k, _)| *k)
            .collect();
        open.iter()
            .filter_map(|sid| self.resume(sid, now, rng).ok().flatten())
            .collect()
    }

    /// A user claims not to have received a signature for `sid`.
    pub fn resolve_signature_dispute<R: RngCore + ?Sized>(
        &mut self,
        sid: &SessionId,
        commitment: &PedersenCommitment,
        now: u64,
        rng: &mut R,
    ) -> Result<(DisputeOutcome, Option<IssueMsg>), SessionError> {
        let mut rec = self.store.get(sid).cloned().ok_or(SessionError::UnknownSession(*sid))?;
        if *commitment != rec.commitment {
            let outcome = DisputeOutcome::Rejected("commitment differs from the stored one".into());
            return Ok((outcome, Some(Self::reject(*sid, "commitment differs from the stored one"))));
        }
        rec.note(Direction::In, "Dispute", now);
        match (rec.phase, rec.public_part.clone()) {
            (Phase::IntermediateSent, _) => {
                let out = rec.intermediate_msg();
                self.store.put(*sid, rec);
                Ok((DisputeOutcome::ReissueFromIntermediate, out))
            }
            (Phase::Completed, _) => {
                let out = IssueMsg::Resolution {
                    sid: *sid,
                    outcome: DisputeOutcome::AlreadyComplete.name().into(),
                };
                self.store.put(*sid, rec);
                Ok((DisputeOutcome::AlreadyComplete, Some(out)))
            }
            (Phase::Announced | Phase::Aborted, Some(pp)) => {
                rec.attempt += 1;
                self.announce(&mut rec, &pp, rng);
                rec.note(Direction::Out, "Announcement", now);
                let out = rec.announcement_msg();
                self.store.put(*sid, rec);
                Ok((DisputeOutcome::RestartFromScratch, out))
            }
            _ => {
                let reason = rec.abort_reason.clone().unwrap_or_else(|| "nothing to resolve".into());
                self.store.put(*sid, rec);
                Ok((DisputeOutcome::Rejected(reason.clone()), Some(Self::reject(*sid, reason))))
            }
        }
    }

    /// Abort sessions stuck in `Announced` for longer than `timeout`.
    pub fn abort_stale(&mut self, now: u64, timeout: u64) -> Vec<SessionId> {
        let stale: Vec<SessionId> = self
            .store
            .iter()
            .filter(|(_, r)| r.phase == Phase::Announced && now.saturating_sub(r.updated) > timeout)
            .map(|(k, _)| *k)
            .collect();
        for sid in &stale {
            self.store.update(sid, |r| {
                r.phase = Phase::Aborted;
                r.abort_reason = Some("timed out waiting for the challenge".into());
                r.announcement = None;
                r.updated = now;
            });
        }
        stale
    }

    /// Destroy completed records older than the retention window.
    pub fn purge(&mut self, now: u64) -> usize {
        let before = self.store.len();
        let retention = self.retention;
        self.store
            .compact(|_, r| !(r.phase == Phase::Completed && now.saturating_sub(r.updated) > retention));
        before - self.store.len()
    }
}

/// What the user accepts as the signer's public part.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Expectation {
    Exact(PublicPart),
    Label(String),
}

impl Expectation {
    fn admits(&self, pp: &PublicPart) -> bool {
        match self {
            Expectation::Exact(want) => want == pp,
            Expectation::Label(label) => label == pp.label(),
        }
    }
}

/// Replace the trailing eight bytes (the tail of the sequence number in
/// every token secret) with fresh randomness.
fn rerandomize<R: RngCore + ?Sized>(secret: &SecretMessage, rng: &mut R) -> SecretMessage {
    let mut bytes = secret.0.clone();
    let start = bytes.len().saturating_sub(8);
    rng.fill_bytes(&mut bytes[start..]);
    SecretMessage(bytes)
}

/// How a user answers a fresh attempt. `FreshSecret` is the adversarial
/// strategy used by the crash matrix: it takes every new announcement, even
/// after completing, and blinds a new secret each time.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum RestartPolicy {
    #[default]
    SameSecret,
    FreshSecret,
}

#[derive(Clone, Debug)]
pub struct UserRecord {
    pub sid: SessionId,
    pub signer: String,
    pub phase: Phase,
    pub attempt: u32,
    pub expected: Expectation,
    pub secret: SecretMessage,
    pub opening: Opening,
    pub commitment: PedersenCommitment,
    pub pok: PoK,
    pub attachment: Vec<u8>,
    pub public_part: Option<PublicPart>,
    pub announcement_attachment: Vec<u8>,
    pub state: Option<UserState>,
    pub signature: Option<PartiallyBlindSignature>,
    /// Every signature obtained in this session, in order.
    pub obtained: Vec<(SecretMessage, PublicPart, PartiallyBlindSignature)>,
    pub failure: Option<FailedTranscript>,
    pub rejected: Option<String>,
    pub created: u64,
    pub updated: u64,
    pub log: Vec<LoggedMessage>,
}

impl UserRecord {
    fn note(&mut self, direction: Direction, name: &'static str, at: u64) {
        let counter = self.log.last().map_or(0, |m| m.counter + 1);
        self.log.push(LoggedMessage {
            counter,
            direction,
            name,
            at,
        });
        self.updated = at;
    }

    fn request_msg(&self) -> IssueMsg {
        IssueMsg::Request {
            sid: self.sid,
            attempt: 0,
            commitment: self.commitment.clone(),
            pok: self.pok.clone(),
            attachment: self.attachment.clone(),
        }
    }

    fn challenge_msg(&self) -> Option<IssueMsg> {
        Some(IssueMsg::Challenge {
            sid: self.sid,
            attempt: self.attempt,
            e: self.state.as_ref()?.e.clone(),
        })
    }
}

#[derive(Clone, Debug, Default)]
pub struct UserEvent {
    pub reply: Option<IssueMsg>,
    pub completed: Option<PartiallyBlindSignature>,
    pub rejected: Option<String>,
}

pub struct UserSessions {
    params: Arc<GroupParams>,
    store: Journal<SessionId, UserRecord>,
    keys: BTreeMap<String, PublicKey>,
    pub policy: RestartPolicy,
}

impl UserSessions {
    pub fn new(params: Arc<GroupParams>) -> Self {
        UserSessions {
            params,
            store: Journal::new(),
            keys: BTreeMap::new(),
            policy: RestartPolicy::SameSecret,
        }
    }

    pub fn register_signer(&mut self, name: &str, key: PublicKey) {
        self.keys.insert(name.to_string(), key);
    }

    pub fn record(&self, sid: &SessionId) -> Option<&UserRecord> {
        self.store.get(sid)
    }

    pub fn records(&self) -> impl Iterator<Item = &UserRecord> {
        self.store.values()
    }

    pub fn journal_mut(&mut self) -> &mut Journal<SessionId, UserRecord> {
        &mut self.store
    }

    fn key(&self, signer: &str) -> Result<&PublicKey, SessionError> {
        self.keys.get(signer).ok_or_else(|| SessionError::UnknownSigner(signer.to_string()))
    }

    /// Commit to `H(secret)`, prove the opening under the fresh session id,
    /// and persist the record. Returns the request to send after sync.
    pub fn start<R: RngCore + ?Sized>(
        &mut self,
        signer: &str,
        expected: Expectation,
        secret: SecretMessage,
        attachment: Vec<u8>,
        now: u64,
        rng: &mut R,
    ) -> Result<(SessionId, IssueMsg), SessionError> {
        self.key(signer)?;
        let mut sid = [0u8; 16];
        rng.fill_bytes(&mut sid);
        let m = self.params.hash_to_scalar(tags::SECRET_DIGEST, secret.as_bytes());
        let (commitment, opening) = pedersen_commit(&self.params, m, rng);
        let pok = pok_prove(&self.params, &commitment, &opening, &sid, rng);
        let mut rec = UserRecord {
            sid,
            signer: signer.to_string(),
            phase: Phase::Init,
            attempt: 0,
            expected,
            secret,
            opening,
            commitment,
            pok,
            attachment,
            public_part: None,
            announcement_attachment: Vec::new(),
            state: None,
            signature: None,
            obtained: Vec::new(),
            failure: None,
            rejected: None,
            created: now,
            updated: now,
            log: Vec::new(),
        };
        rec.note(Direction::Out, "Request", now);
        let msg = rec.request_msg();
        self.store.put(sid, rec);
        Ok((sid, msg))
    }

    pub fn handle<R: RngCore + ?Sized>(
        &mut self,
        msg: &IssueMsg,
        now: u64,
        rng: &mut R,
    ) -> Result<UserEvent, SessionError> {
        let sid = *msg.sid();
        let mut rec = self.store.get(&sid).cloned().ok_or(SessionError::UnknownSession(sid))?;
        let mut event = UserEvent::default();
        match msg {
            IssueMsg::Announcement {
                attempt,
                public_part,
                view,
                attachment,
                ..
            } => {
                let fresh = *attempt > rec.attempt || rec.phase == Phase::Init;
                let take = match rec.phase {
                    Phase::Init | Phase::ChallengeSent => fresh,
                    Phase::Aborted => fresh && rec.rejected.is_none(),
                    Phase::Completed => fresh && self.policy == RestartPolicy::FreshSecret,
                    _ => false,
                };
                if !take {
                    // duplicate of the announcement already answered
                    if rec.phase == Phase::ChallengeSent && *attempt == rec.attempt {
                        event.reply = rec.challenge_msg();
                    }
                    return Ok(event);
                }
                if !rec.expected.admits(public_part) {
                    rec.phase = Phase::Aborted;
                    rec.rejected = Some(format!("unexpected public part {public_part}"));
                    rec.note(Direction::In, "Announcement", now);
                    event.rejected = rec.rejected.clone();
                    self.store.put(sid, rec);
                    return Ok(event);
                }
                if rec.phase == Phase::Completed || (*attempt > 0 && self.policy == RestartPolicy::FreshSecret) {
                    rec.secret = rerandomize(&rec.secret, rng);
                }
                let y = self.key(&rec.signer)?.clone();
                let (challenge, state) =
                    match pbs::user_blind(&self.params, view, &y, public_part, &rec.secret, rng) {
                        Ok(ok) => ok,
                        Err(err) => {
                            rec.phase = Phase::Aborted;
                            rec.rejected = Some(err.to_string());
                            event.rejected = rec.rejected.clone();
                            self.store.put(sid, rec);
                            return Ok(event);
                        }
                    };
                rec.attempt = *attempt;
                rec.public_part = Some(public_part.clone());
                rec.announcement_attachment = attachment.clone();
                rec.state = Some(state);
                rec.phase = Phase::ChallengeSent;
                rec.note(Direction::In, "Announcement", now);
                rec.note(Direction::Out, "Challenge", now);
                event.reply = Some(IssueMsg::Challenge {
                    sid,
                    attempt: *attempt,
                    e: challenge.e,
                });
                self.store.put(sid, rec);
            }
            IssueMsg::Intermediate {
                attempt, intermediate, ..
            } => match rec.phase {
                Phase::ChallengeSent if *attempt == rec.attempt => {
                    let state = rec.state.clone().expect("challenge sent with state");
                    let y = self.key(&rec.signer)?.clone();
                    rec.note(Direction::In, "Intermediate", now);
                    match pbs::user_finalize(&self.params, &y, &state, intermediate) {
                        Ok(sig) => {
                            rec.phase = Phase::Completed;
                            rec.signature = Some(sig.clone());
                            rec.obtained.push((state.secret.clone(), state.public_part.clone(), sig.clone()));
                            rec.failure = None;
                            rec.note(Direction::Out, "Ack", now);
                            event.completed = Some(sig);
                            event.reply = Some(IssueMsg::Ack { sid, attempt: rec.attempt });
                        }
                        Err(PbsError::FinalizeFailed(transcript)) => {
                            rec.failure = Some(*transcript);
                        }
                        Err(other) => return Err(other.into()),
                    }
                    self.store.put(sid, rec);
                }
                Phase::Completed if *attempt == rec.attempt => {
                    event.reply = Some(IssueMsg::Ack { sid, attempt: rec.attempt });
                }
                _ => {}
            },
            IssueMsg::Reject { reason, .. } => {
                if rec.phase != Phase::Completed {
                    rec.phase = Phase::Aborted;
                    rec.rejected = Some(reason.clone());
                    rec.note(Direction::In, "Reject", now);
                    event.rejected = Some(reason.clone());
                    self.store.put(sid, rec);
                }
            }
            IssueMsg::Resolution { .. } => {}
            other => {
                return Err(SessionError::OutOfOrder {
                    phase: rec.phase,
                    got: other.name(),
                })
            }
        }
        Ok(event)
    }

    /// Re-derive the next outbound message from persisted state.
    pub fn resume(&self, sid: &SessionId) -> Result<Option<IssueMsg>, SessionError> {
        let rec = self.store.get(sid).ok_or(SessionError::UnknownSession(*sid))?;
        Ok(match rec.phase {
            Phase::Init => Some(rec.request_msg()),
            Phase::ChallengeSent => rec.challenge_msg(),
            _ => None,
        })
    }

    /// Claim for a session that has not produced a signature.
    pub fn dispute(&self, sid: &SessionId) -> Result<IssueMsg, SessionError> {
        let rec = self.store.get(sid).ok_or(SessionError::UnknownSession(*sid))?;
        Ok(IssueMsg::Dispute {
            sid: *sid,
            commitment: rec.commitment.clone(),
        })
    }

    /// Sessions still waiting for a signature and not refused by the signer.
    pub fn unfinished(&self) -> Vec<SessionId> {
        self.store
            .iter()
            .filter(|(_, r)| {
                r.signature.is_none() && r.phase != Phase::Aborted
            })
            .map(|(k, _)| *k)
            .collect()
    }

    pub fn purge(&mut self, now: u64, retention: u64) -> usize {
        let before = self.store.len();
        self.store
            .compact(|_, r| !(r.phase == Phase::Completed && now.saturating_sub(r.updated) > retention));
        before - self.store.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::keygen;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    struct Pair {
        params: Arc<GroupParams>,
        key: KeyPair,
        signer: SignerSessions,
        user: UserSessions,
        rng: ChaCha20Rng,
    }

    fn pair(seed: u64) -> Pair {
        let params = GroupParams::sim_1024();
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let key = keygen(&params, &mut rng);
        let mut user = UserSessions::new(params.clone());
        user.register_signer("pto", key.public().clone());
        Pair {
            signer: SignerSessions::new(params.clone()),
            params,
            key,
            user,
            rng,
        }
    }

    fn fare() -> PublicPart {
        PublicPart::new("ticket", 360).unwrap()
    }

    fn accept_fare(_: &SessionId, _: &[u8]) -> Admission {
        Admission::Accept {
            public_part: fare(),
            attachment: vec![],
        }
    }

    impl Pair {
        fn start(&mut self) -> (SessionId, IssueMsg) {
            self.user
                .start("pto", Expectation::Exact(fare()), SecretMessage(b"trip".to_vec()), vec![1, 2], 0, &mut self.rng)
                .unwrap()
        }

        fn deliver_to_signer(&mut self, msg: &IssueMsg) -> Option<IssueMsg> {
            let wire = msg.encode(&self.params);
            let msg = IssueMsg::decode(&self.params, &wire).unwrap();
            self.signer.handle(&self.key, &msg, 1, &mut self.rng, accept_fare).unwrap()
        }

        fn deliver_to_user(&mut self, msg: &IssueMsg) -> UserEvent {
            let wire = msg.encode(&self.params);
            let msg = IssueMsg::decode(&self.params, &wire).unwrap();
            self.user.handle(&msg, 1, &mut self.rng).unwrap()
        }

        fn verifies(&self, sid: &SessionId) -> bool {
            let rec = self.user.record(sid).unwrap();
            let sig = rec.signature.as_ref().unwrap();
            pbs::verify(&self.params, self.key.public(), rec.public_part.as_ref().unwrap(), &rec.secret, sig)
        }
    }

    #[test]
    fn happy_path_completes_both_sides() {
        let mut p = pair(1);
        let (sid, req) = p.start();
        let ann = p.deliver_to_signer(&req).unwrap();
        assert_eq!(p.signer.record(&sid).unwrap().phase, Phase::Announced);
        let ch = p.deliver_to_user(&ann).reply.unwrap();
        assert_eq!(p.user.record(&sid).unwrap().phase, Phase::ChallengeSent);
        let im = p.deliver_to_signer(&ch).unwrap();
        let ev = p.deliver_to_user(&im);
        assert!(ev.completed.is_some());
        let ack = ev.reply.unwrap();
        assert_eq!(p.deliver_to_signer(&ack), None);
        assert_eq!(p.signer.record(&sid).unwrap().phase, Phase::Completed);
        assert_eq!(p.user.record(&sid).unwrap().phase, Phase::Completed);
        assert!(p.verifies(&sid));
        let names: Vec<_> = p.signer.record(&sid).unwrap().log.iter().map(|m| m.name).collect();
        assert_eq!(names, ["Request", "Announcement", "Challenge", "Intermediate", "Ack"]);
    }

    #[test]
    fn invalid_proof_aborts_without_announcement() {
        let mut p = pair(2);
        let (sid, req) = p.start();
        let IssueMsg::Request { commitment, mut pok, attachment, attempt, .. } = req else { unreachable!() };
        pok.z1 = p.params.add(&pok.z1, &p.params.scalar_u64(1));
        let bad = IssueMsg::Request { sid, attempt, commitment, pok, attachment };
        let reply = p.deliver_to_signer(&bad).unwrap();
        assert!(matches!(reply, IssueMsg::Reject { .. }));
        let rec = p.signer.record(&sid).unwrap();
        assert_eq!(rec.phase, Phase::Aborted);
        assert!(rec.announcement.is_none());
    }

    #[test]
    fn duplicate_request_replays_identical_announcement() {
        let mut p = pair(3);
        let (_, req) = p.start();
        let first = p.deliver_to_signer(&req).unwrap().encode(&p.params);
        let second = p.deliver_to_signer(&req).unwrap().encode(&p.params);
        assert_eq!(first, second);
    }

    #[test]
    fn reused_sid_with_other_commitment_is_rejected() {
        let mut p = pair(4);
        let (sid, req) = p.start();
        p.deliver_to_signer(&req);
        let IssueMsg::Request { pok, attachment, attempt, .. } = req else { unreachable!() };
        let other = p.params.h_pow(&p.params.scalar_u64(5));
        let swapped = IssueMsg::Request {
            sid,
            attempt,
            commitment: PedersenCommitment(other),
            pok,
            attachment,
        };
        assert!(matches!(p.deliver_to_signer(&swapped), Some(IssueMsg::Reject { .. })));
        assert_eq!(p.signer.record(&sid).unwrap().phase, Phase::Announced);
    }

    #[test]
    fn duplicate_intermediate_is_ignored() {
        let mut p = pair(5);
        let (sid, req) = p.start();
        let ann = p.deliver_to_signer(&req).unwrap();
        let ch = p.deliver_to_user(&ann).reply.unwrap();
        let im = p.deliver_to_signer(&ch).unwrap();
        p.deliver_to_user(&im);
        let sig = p.user.record(&sid).unwrap().signature.clone();
        let again = p.deliver_to_user(&im);
        assert!(again.completed.is_none());
        assert_eq!(p.user.record(&sid).unwrap().signature, sig);
        assert_eq!(p.user.record(&sid).unwrap().obtained.len(), 1);
    }

    #[test]
    fn new_challenge_after_intermediate_gets_old_intermediate() {
        let mut p = pair(6);
        let (sid, req) = p.start();
        let ann = p.deliver_to_signer(&req).unwrap();
        let ch = p.deliver_to_user(&ann).reply.unwrap();
        let im = p.deliver_to_signer(&ch).unwrap();
        let other = IssueMsg::Challenge {
            sid,
            attempt: 0,
            e: p.params.scalar_u64(12345),
        };
        assert_eq!(p.deliver_to_signer(&other).unwrap(), im);
        assert_eq!(p.signer.record(&sid).unwrap().e, match &ch { IssueMsg::Challenge { e, .. } => Some(e.clone()), _ => None });
    }

    #[test]
    fn crash_after_user_persisted_blinding_resends_same_challenge() {
        let mut p = pair(7);
        let (sid, req) = p.start();
        p.user.journal_mut().sync();
        let ann = p.deliver_to_signer(&req).unwrap();
        let ch = p.deliver_to_user(&ann).reply.unwrap();
        p.user.journal_mut().sync();
        // challenge lost in flight; user restarts and resumes
        p.user.journal_mut().crash();
        let resent = p.user.resume(&sid).unwrap().unwrap();
        assert_eq!(resent, ch);
        let im = p.deliver_to_signer(&resent).unwrap();
        assert!(p.deliver_to_user(&im).completed.is_some());
        assert!(p.verifies(&sid));
    }

    #[test]
    fn crash_after_signer_persisted_intermediate_resends_identical() {
        let mut p = pair(8);
        let (sid, req) = p.start();
        let ann = p.deliver_to_signer(&req).unwrap();
        let ch = p.deliver_to_user(&ann).reply.unwrap();
        let im = p.deliver_to_signer(&ch).unwrap();
        p.signer.journal_mut().sync();
        p.signer.journal_mut().crash();
        let resent = p.signer.resume(&sid, 2, &mut p.rng).unwrap().unwrap();
        assert_eq!(resent, im);
        assert!(p.deliver_to_user(&resent).completed.is_some());
    }

    #[test]
    fn crash_before_intermediate_restarts_with_one_signature() {
        let mut p = pair(9);
        let (sid, req) = p.start();
        let ann = p.deliver_to_signer(&req).unwrap();
        p.signer.journal_mut().sync();
        let ch = p.deliver_to_user(&ann).reply.unwrap();
        // signer computes the intermediate but dies before syncing it
        p.deliver_to_signer(&ch);
        p.signer.journal_mut().crash();
        assert_eq!(p.signer.record(&sid).unwrap().phase, Phase::Announced);
        let fresh = p.signer.resume(&sid, 2, &mut p.rng).unwrap().unwrap();
        let IssueMsg::Announcement { attempt, .. } = &fresh else { panic!() };
        assert_eq!(*attempt, 1);
        // the old challenge is now stale
        let stale = p.signer.handle(&p.key, &ch, 3, &mut p.rng, accept_fare);
        assert!(matches!(stale, Err(SessionError::Stale { .. })));
        let ch2 = p.deliver_to_user(&fresh).reply.unwrap();
        let im = p.deliver_to_signer(&ch2).unwrap();
        p.deliver_to_user(&im);
        assert_eq!(p.user.record(&sid).unwrap().obtained.len(), 1);
        assert!(p.verifies(&sid));
    }

    #[test]
    fn disputes_cover_every_outcome() {
        let mut p = pair(10);
        let (sid, req) = p.start();
        let ann = p.deliver_to_signer(&req).unwrap();
        let ch = p.deliver_to_user(&ann).reply.unwrap();
        let im = p.deliver_to_signer(&ch).unwrap();
        let claim = p.user.dispute(&sid).unwrap();
        let IssueMsg::Dispute { commitment, .. } = &claim else { panic!() };
        let (outcome, reply) = p.signer.resolve_signature_dispute(&sid, commitment, 5, &mut p.rng).unwrap();
        assert_eq!(outcome, DisputeOutcome::ReissueFromIntermediate);
        assert_eq!(reply.unwrap(), im);

        let swapped = PedersenCommitment(p.params.g_pow(&p.params.scalar_u64(3)));
        let (outcome, _) = p.signer.resolve_signature_dispute(&sid, &swapped, 5, &mut p.rng).unwrap();
        assert!(matches!(outcome, DisputeOutcome::Rejected(_)));

        let unknown = [9u8; 16];
        assert!(p.signer.resolve_signature_dispute(&unknown, commitment, 5, &mut p.rng).is_err());

        let ev = p.deliver_to_user(&im);
        p.deliver_to_signer(&ev.reply.unwrap());
        let (outcome, _) = p.signer.resolve_signature_dispute(&sid, commitment, 6, &mut p.rng).unwrap();
        assert_eq!(outcome, DisputeOutcome::AlreadyComplete);
    }

    #[test]
    fn aborted_pre_intermediate_restarts_with_same_commitment() {
        let mut p = pair(11);
        let (sid, req) = p.start();
        p.deliver_to_signer(&req);
        assert_eq!(p.signer.abort_stale(10_000, 600), vec![sid]);
        assert_eq!(p.signer.record(&sid).unwrap().phase, Phase::Aborted);
        let commitment = p.user.record(&sid).unwrap().commitment.clone();
        let (outcome, reply) = p.signer.resolve_signature_dispute(&sid, &commitment, 10_001, &mut p.rng).unwrap();
        assert_eq!(outcome, DisputeOutcome::RestartFromScratch);
        assert_eq!(p.signer.record(&sid).unwrap().commitment, commitment);
        let ch = p.deliver_to_user(&reply.unwrap()).reply.unwrap();
        let im = p.deliver_to_signer(&ch).unwrap();
        assert!(p.deliver_to_user(&im).completed.is_some());
        assert!(p.verifies(&sid));
    }

    #[test]
    fn fresh_secret_user_cannot_get_second_signature_from_honest_signer() {
        let mut p = pair(12);
        p.user.policy = RestartPolicy::FreshSecret;
        let (sid, req) = p.start();
        let ann = p.deliver_to_signer(&req).unwrap();
        let ch = p.deliver_to_user(&ann).reply.unwrap();
        let im = p.deliver_to_signer(&ch).unwrap();
        p.deliver_to_user(&im);
        // signer restarts after persisting: only the old intermediate comes back
        p.signer.journal_mut().sync();
        p.signer.journal_mut().crash();
        let again = p.signer.resume(&sid, 3, &mut p.rng).unwrap().unwrap();
        assert!(p.deliver_to_user(&again).completed.is_none());
        assert_eq!(p.user.record(&sid).unwrap().obtained.len(), 1);
    }

    #[test]
    fn purge_removes_only_old_completed_records() {
        let mut p = pair(13);
        let (sid, req) = p.start();
        let ann = p.deliver_to_signer(&req).unwrap();
        let ch = p.deliver_to_user(&ann).reply.unwrap();
        let im = p.deliver_to_signer(&ch).unwrap();
        let ack = p.deliver_to_user(&im).reply.unwrap();
        p.deliver_to_signer(&ack);
        let (other, req2) = p.start();
        p.deliver_to_signer(&req2);
        assert_eq!(p.signer.purge(DEFAULT_RETENTION), 0);
        assert_eq!(p.signer.purge(DEFAULT_RETENTION + 10), 1);
        assert!(p.signer.record(&sid).is_none());
        assert!(p.signer.record(&other).is_some());
    }

    #[test]
    fn message_codec_round_trips_and_rejects_truncation() {
        let mut p = pair(14);
        let (sid, req) = p.start();
        let ann = p.deliver_to_signer(&req).unwrap();
        let ch = p.deliver_to_user(&ann).reply.unwrap();
        let msgs = vec![
            req,
            ann,
            ch,
            IssueMsg::Ack { sid, attempt: 2 },
            IssueMsg::Reject { sid, reason: "no".into() },
            IssueMsg::Resolution { sid, outcome: "already-complete".into() },
        ];
        for msg in msgs {
            let wire = msg.encode(&p.params);
            assert_eq!(&wire[3..6], &[field::SID, 0, 16]);
            assert_eq!(IssueMsg::decode(&p.params, &wire).unwrap(), msg);
            assert!(IssueMsg::decode(&p.params, &wire[..wire.len() - 1]).is_err());
        }
    }
}
