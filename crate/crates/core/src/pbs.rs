//! Partially blind Schnorr signatures in the Abe-Okamoto style.
//!
//! The signer sees the public part and nothing of the secret part. Message
//! order on the wire is signer-first:
//!
//! 1. signer: [`signer_announce`] sends `(a, b)`
//! 2. user: [`user_blind`] sends the blinded challenge `e`
//! 3. signer: [`signer_respond`] sends the intermediate signature `(r, c, s', d)`
//! 4. user: [`user_finalize`] unblinds to `(rho, omega, sigma, delta)`
//!
//! The user-side "blind the secret part" step therefore happens after the
//! announcement, not before it.

use std::fmt;
use std::sync::Arc;

use rand::RngCore;
use thiserror::Error;

use crate::crypto::{lp_concat, tags, CryptoError, Generator, GroupElement, GroupParams, KeyPair, PublicKey, Scalar};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PbsError {
    #[error("public part must carry a non-empty label")]
    EmptyPublicPart,
    #[error("malformed public part encoding")]
    BadPublicPart,
    #[error("signer announcement is malformed")]
    MalformedAnnouncement,
    #[error("announcement already answered")]
    AnnouncementConsumed,
    #[error("unblinded signature does not verify")]
    FinalizeFailed(Box<FailedTranscript>),
    #[error(transparent)]
    Crypto(#[from] CryptoError),
}

/// Public message part agreed by user and signer, e.g. `("ticket", 360)`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PublicPart {
    label: String,
    value: i64,
}

impl PublicPart {
    pub fn new(label: impl Into<String>, value: i64) -> Result<PublicPart, PbsError> {
        let label = label.into();
        if label.is_empty() || label.len() > u16::MAX as usize {
            return Err(PbsError::EmptyPublicPart);
        }
        Ok(PublicPart { label, value })
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn value(&self) -> i64 {
        self.value
    }

    /// `len(label) as u16 BE || label || value as i64 BE`
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(2 + self.label.len() + 8);
        out.extend_from_slice(&(self.label.len() as u16).to_be_bytes());
        out.extend_from_slice(self.label.as_bytes());
        out.extend_from_slice(&self.value.to_be_bytes());
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<PublicPart, PbsError> {
        let len_bytes: [u8; 2] = bytes.get(..2).ok_or(PbsError::BadPublicPart)?.try_into().unwrap();
        let len = u16::from_be_bytes(len_bytes) as usize;
        if bytes.len() != 2 + len + 8 {
            return Err(PbsError::BadPublicPart);
        }
        let label = std::str::from_utf8(&bytes[2..2 + len]).map_err(|_| PbsError::BadPublicPart)?;
        let value = i64::from_be_bytes(bytes[2 + len..].try_into().unwrap());
        PublicPart::new(label, value).map_err(|_| PbsError::BadPublicPart)
    }

    /// `z = hash_to_group(encode(public part))`
    pub fn generator(&self, params: &GroupParams) -> Arc<Generator> {
        params.hashed_generator(tags::PBS_PUBLIC, &self.encode())
    }
}

impl fmt::Display for PublicPart {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.label, self.value)
    }
}

/// Secret message part; its canonical encoding comes from the token layer.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SecretMessage(pub Vec<u8>);

impl SecretMessage {
    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }
}

/// Signer nonces `(u, s', d)`.
#[derive(Clone, PartialEq, Eq)]
pub struct SignerNonces {
    pub u: Scalar,
    pub s: Scalar,
    pub d: Scalar,
}

impl fmt::Debug for SignerNonces {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("SignerNonces(..)")
    }
}

/// What the user sees of an announcement.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AnnouncementView {
    pub a: GroupElement,
    pub b: GroupElement,
}

#[derive(Clone, Debug)]
pub struct SignerAnnouncement {
    pub view: AnnouncementView,
    pub public_part: PublicPart,
    nonces: SignerNonces,
    consumed: bool,
}

impl SignerAnnouncement {
    pub fn nonces(&self) -> &SignerNonces {
        &self.nonces
    }

    pub fn is_consumed(&self) -> bool {
        self.consumed
    }
}

/// User blinding factors `t1..t4`.
#[derive(Clone, PartialEq, Eq)]
pub struct BlindingFactors {
    pub t1: Scalar,
    pub t2: Scalar,
    pub t3: Scalar,
    pub t4: Scalar,
}

impl BlindingFactors {
    pub fn random<R: RngCore + ?Sized>(params: &GroupParams, rng: &mut R) -> BlindingFactors {
        BlindingFactors {
            t1: params.random_scalar(rng),
            t2: params.random_scalar(rng),
            t3: params.random_scalar(rng),
            t4: params.random_scalar(rng),
        }
    }

    pub fn zero() -> BlindingFactors {
        BlindingFactors {
            t1: Scalar::default(),
            t2: Scalar::default(),
            t3: Scalar::default(),
            t4: Scalar::default(),
        }
    }
}

impl fmt::Debug for BlindingFactors {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("BlindingFactors")
            .field("t1", &self.t1)
            .field("t2", &self.t2)
            .field("t3", &self.t3)
            .field("t4", &self.t4)
            .finish()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BlindedChallenge {
    pub e: Scalar,
}

/// Everything the user keeps between sending `e` and finalizing.
#[derive(Clone, Debug)]
pub struct UserState {
    pub view: AnnouncementView,
    pub public_part: PublicPart,
    pub secret: SecretMessage,
    pub factors: BlindingFactors,
    pub epsilon: Scalar,
    pub e: Scalar,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IntermediateSignature {
    pub r: Scalar,
    pub c: Scalar,
    pub s: Scalar,
    pub d: Scalar,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PartiallyBlindSignature {
    pub rho: Scalar,
    pub omega: Scalar,
    pub sigma: Scalar,
    pub delta: Scalar,
}

/// The signer's complete view of one issuance.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SignerView {
    pub a: GroupElement,
    pub b: GroupElement,
    pub e: Scalar,
    pub intermediate: IntermediateSignature,
}

/// Transcript attached to a failed finalization, enough to argue a dispute.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FailedTranscript {
    pub view: AnnouncementView,
    pub public_part: PublicPart,
    pub e: Scalar,
    pub intermediate: IntermediateSignature,
}

fn encode_scalars(params: &GroupParams, scalars: [&Scalar; 4]) -> Vec<u8> {
    let mut out = Vec::with_capacity(4 * params.scalar_len());
    for s in scalars {
        out.extend(params.scalar_bytes(s));
    }
    out
}

fn decode_scalars(params: &GroupParams, bytes: &[u8]) -> Result<[Scalar; 4], CryptoError> {
    let n = params.scalar_len();
    if bytes.len() != 4 * n {
        return Err(CryptoError::BadLength {
            expected: 4 * n,
            found: bytes.len(),
        });
    }
    let mut it = bytes.chunks(n).map(|chunk| params.scalar_from_bytes(chunk));
    Ok([it.next().unwrap()?, it.next().unwrap()?, it.next().unwrap()?, it.next().unwrap()?])
}

impl PartiallyBlindSignature {
    /// Four fixed-width scalars `rho || omega || sigma || delta`.
    pub fn to_bytes(&self, params: &GroupParams) -> Vec<u8> {
        encode_scalars(params, [&self.rho, &self.omega, &self.sigma, &self.delta])
    }

    pub fn from_bytes(params: &GroupParams, bytes: &[u8]) -> Result<Self, CryptoError> {
        let [rho, omega, sigma, delta] = decode_scalars(params, bytes)?;
        Ok(PartiallyBlindSignature { rho, omega, sigma, delta })
    }
}

impl IntermediateSignature {
    pub fn to_bytes(&self, params: &GroupParams) -> Vec<u8> {
        encode_scalars(params, [&self.r, &self.c, &self.s, &self.d])
    }

    pub fn from_bytes(params: &GroupParams, bytes: &[u8]) -> Result<Self, CryptoError> {
        let [r, c, s, d] = decode_scalars(params, bytes)?;
        Ok(IntermediateSignature { r, c, s, d })
    }
}

/// `H(alpha || beta || z || public || secret)` over length-prefixed fields.
fn challenge_hash(
    params: &GroupParams,
    alpha: &GroupElement,
    beta: &GroupElement,
    z: &GroupElement,
    public_part: &[u8],
    secret: &[u8],
) -> Scalar {
    let input = lp_concat(&[
        &params.element_bytes(alpha),
        &params.element_bytes(beta),
        &params.element_bytes(z),
        public_part,
        secret,
    ]);
    params.hash_to_scalar(tags::PBS_CHALLENGE, &input)
}

fn announce_with(params: &GroupParams, z: &Generator, public_part: PublicPart, nonces: SignerNonces) -> SignerAnnouncement {
    let a = params.g_pow(&nonces.u);
    let b = params.mul(&params.g_pow(&nonces.s), &z.pow(params, &nonces.d));
    SignerAnnouncement {
        view: AnnouncementView { a, b },
        public_part,
        nonces,
        consumed: false,
    }
}

/// Fresh `(u, s', d)` with `a = g^u`, `b = g^s' z^d`.
pub fn signer_announce<R: RngCore + ?Sized>(
    params: &GroupParams,
    public_part: &PublicPart,
    rng: &mut R,
) -> SignerAnnouncement {
    let nonces = SignerNonces {
        u: params.random_nonzero_scalar(rng),
        s: params.random_scalar(rng),
        d: params.random_scalar(rng),
    };
    let z = public_part.generator(params);
    announce_with(params, &z, public_part.clone(), nonces)
}

/// Rebuild an announcement from persisted nonces; the result is identical
/// to the one originally sent.
pub fn signer_reannounce(params: &GroupParams, public_part: &PublicPart, nonces: SignerNonces, consumed: bool) -> SignerAnnouncement {
    let z = public_part.generator(params);
    let mut ann = announce_with(params, &z, public_part.clone(), nonces);
    ann.consumed = consumed;
    ann
}

fn check_view(params: &GroupParams, view: &AnnouncementView) -> Result<(), PbsError> {
    // b may legitimately be 1 (s' = -d log z); a = g^u with u != 0 never is.
    if view.a.is_identity() || !params.is_member(view.a.value()) || !params.is_member(view.b.value()) {
        return Err(PbsError::MalformedAnnouncement);
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn blind_with(
    params: &GroupParams,
    view: &AnnouncementView,
    y: &PublicKey,
    z: &Generator,
    public_part: &PublicPart,
    secret: &SecretMessage,
    factors: BlindingFactors,
) -> Result<(BlindedChallenge, UserState), PbsError> {
    check_view(params, view)?;
    let alpha = params.mul(
        &params.mul(&view.a, &params.g_pow(&factors.t1)),
        &y.pow(params, &factors.t2),
    );
    let beta = params.mul(
        &params.mul(&view.b, &params.g_pow(&factors.t3)),
        &z.pow(params, &factors.t4),
    );
    let epsilon = challenge_hash(params, &alpha, &beta, z.element(), &public_part.encode(), secret.as_bytes());
    let e = params.sub(&params.sub(&epsilon, &factors.t2), &factors.t4);
    let state = UserState {
        view: view.clone(),
        public_part: public_part.clone(),
        secret: secret.clone(),
        factors,
        epsilon,
        e: e.clone(),
    };
    Ok((BlindedChallenge { e }, state))
}

/// Blind the secret part against an announcement. The caller persists the
/// returned state before sending `e`.
pub fn user_blind<R: RngCore + ?Sized>(
    params: &GroupParams,
    view: &AnnouncementView,
    y: &PublicKey,
    public_part: &PublicPart,
    secret: &SecretMessage,
    rng: &mut R,
) -> Result<(BlindedChallenge, UserState), PbsError> {
    let factors = BlindingFactors::random(params, rng);
    user_blind_with(params, view, y, public_part, secret, factors)
}

/// [`user_blind`] with caller-chosen blinding factors.
pub fn user_blind_with(
    params: &GroupParams,
    view: &AnnouncementView,
    y: &PublicKey,
    public_part: &PublicPart,
    secret: &SecretMessage,
    factors: BlindingFactors,
) -> Result<(BlindedChallenge, UserState), PbsError> {
    let z = public_part.generator(params);
    blind_with(params, view, y, &z, public_part, secret, factors)
}

/// `c = e - d`, `r = u - c x`. One response per announcement.
pub fn signer_respond(
    params: &GroupParams,
    announcement: &mut SignerAnnouncement,
    key: &KeyPair,
    e: &Scalar,
) -> Result<IntermediateSignature, PbsError> {
    if announcement.consumed {
        return Err(PbsError::AnnouncementConsumed);
    }
    if e.value() >= params.q() {
        return Err(CryptoError::ScalarOutOfRange.into());
    }
    announcement.consumed = true;
    let n = &announcement.nonces;
    let c = params.sub(e, &n.d);
    let r = params.sub(&n.u, &params.mul_scalar(&c, key.secret()));
    Ok(IntermediateSignature {
        r,
        c,
        s: n.s.clone(),
        d: n.d.clone(),
    })
}

fn unblind(params: &GroupParams, state: &UserState, im: &IntermediateSignature) -> PartiallyBlindSignature {
    let f = &state.factors;
    PartiallyBlindSignature {
        rho: params.add(&im.r, &f.t1),
        omega: params.add(&im.c, &f.t2),
        sigma: params.add(&im.s, &f.t3),
        delta: params.add(&im.d, &f.t4),
    }
}

/// Unblind and check. A failure carries the transcript for a dispute.
pub fn user_finalize(
    params: &GroupParams,
    y: &PublicKey,
    state: &UserState,
    intermediate: &IntermediateSignature,
) -> Result<PartiallyBlindSignature, PbsError> {
    let sig = unblind(params, state, intermediate);
    if verify(params, y, &state.public_part, &state.secret, &sig) {
        Ok(sig)
    } else {
        Err(PbsError::FinalizeFailed(Box::new(FailedTranscript {
            view: state.view.clone(),
            public_part: state.public_part.clone(),
            e: state.e.clone(),
            intermediate: intermediate.clone(),
        })))
    }
}

fn verify_with(
    params: &GroupParams,
    y: &PublicKey,
    z: &Generator,
    public_part: &[u8],
    secret: &[u8],
    sig: &PartiallyBlindSignature,
) -> bool {
    let q = params.q();
    if [&sig.rho, &sig.omega, &sig.sigma, &sig.delta].iter().any(|s| s.value() >= q) {
        return false;
    }
    let alpha = params.mul(&params.g_pow(&sig.rho), &y.pow(params, &sig.omega));
    let beta = params.mul(&params.g_pow(&sig.sigma), &z.pow(params, &sig.delta));
    let lhs = params.add(&sig.omega, &sig.delta);
    lhs == challenge_hash(params, &alpha, &beta, z.element(), public_part, secret)
}

/// `omega + delta == H(g^rho y^omega || g^sigma z^delta || z || public || secret)`
pub fn verify(
    params: &GroupParams,
    y: &PublicKey,
    public_part: &PublicPart,
    secret: &SecretMessage,
    sig: &PartiallyBlindSignature,
) -> bool {
    let z = public_part.generator(params);
    verify_with(params, y, &z, &public_part.encode(), secret.as_bytes(), sig)
}

/// Try to explain `sig` as the output of the issuance the signer saw in
/// `view`. Returns the blinding factors that would do so, or `None`.
///
/// The factors are read off the scalars; consistency is then checked by
/// rebuilding the user's `alpha`, `beta` from the signer's `(a, b)` and
/// recomputing the challenge `e`. The cheap identity `e = c + d` alone holds
/// for every pair and would prove nothing.
pub fn blindness_witness(
    params: &GroupParams,
    y: &PublicKey,
    view: &SignerView,
    sig: &PartiallyBlindSignature,
    public_part: &PublicPart,
    secret: &SecretMessage,
) -> Option<BlindingFactors> {
    let im = &view.intermediate;
    if params.add(&im.c, &im.d) != view.e {
        return None;
    }
    let factors = BlindingFactors {
        t1: params.sub(&sig.rho, &im.r),
        t2: params.sub(&sig.omega, &im.c),
        t3: params.sub(&sig.sigma, &im.s),
        t4: params.sub(&sig.delta, &im.d),
    };
    let z = public_part.generator(params);
    let alpha = params.mul(&params.mul(&view.a, &params.g_pow(&factors.t1)), &y.pow(params, &factors.t2));
    let beta = params.mul(&params.mul(&view.b, &params.g_pow(&factors.t3)), &z.pow(params, &factors.t4));
    let epsilon = challenge_hash(params, &alpha, &beta, z.element(), &public_part.encode(), secret.as_bytes());
    let expected_e = params.sub(&params.sub(&epsilon, &factors.t2), &factors.t4);
    (expected_e == view.e).then_some(factors)
}
