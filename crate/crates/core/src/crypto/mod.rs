//! Prime-order group arithmetic, hashing, Schnorr signatures and Pedersen
//! commitments with a Fiat-Shamir proof of opening.
//!
//! Hashing is SHA-256 with a mandatory domain tag; the group is a Schnorr
//! group over Z_p^*, see [`GroupParams::production`].

mod group;
mod params;
pub mod pedersen;
pub mod schnorr;

use std::fmt;

use rand::RngCore;
use thiserror::Error;

pub use group::{FixedBase, Generator, GroupElement, GroupParams, Scalar};
pub use params::{is_probable_prime, PRIMALITY_ROUNDS};
pub use pedersen::{pok_prove, pok_verify, pedersen_commit, Opening, PedersenCommitment, PoK};
pub use schnorr::{schnorr_sign, schnorr_verify, SchnorrSignature};

/// Domain separation tags. Every hash in the crate goes through one of these.
pub mod tags {
    pub const GENERATOR_H: &[u8] = b"blindfare/v1/generator-h";
    pub const GENERATOR_G2: &[u8] = b"blindfare/v1/generator-g2";
    pub const SCHNORR: &[u8] = b"blindfare/v1/schnorr";
    pub const POK: &[u8] = b"pok";
    pub const PBS_PUBLIC: &[u8] = b"blindfare/v1/pbs-z";
    pub const PBS_CHALLENGE: &[u8] = b"pbs";
    pub const SECRET_DIGEST: &[u8] = b"blindfare/v1/secret";
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CryptoError {
    #[error("invalid group parameters: {0}")]
    InvalidParams(&'static str),
    #[error("scalar out of range")]
    ScalarOutOfRange,
    #[error("element not in the order-q subgroup")]
    NotInSubgroup,
    #[error("bad encoding length: expected {expected}, found {found}")]
    BadLength { expected: usize, found: usize },
}

/// Signer public key `y = g^x`.
#[derive(Clone)]
pub struct PublicKey {
    y: Generator,
}

impl PublicKey {
    pub fn new(y: GroupElement) -> PublicKey {
        PublicKey {
            y: Generator::new(y),
        }
    }

    pub fn element(&self) -> &GroupElement {
        self.y.element()
    }

    /// `y^e`
    pub fn pow(&self, params: &GroupParams, e: &Scalar) -> GroupElement {
        self.y.pow(params, e)
    }

    pub fn to_bytes(&self, params: &GroupParams) -> Vec<u8> {
        params.element_bytes(self.element())
    }

    pub fn from_bytes(params: &GroupParams, bytes: &[u8]) -> Result<PublicKey, CryptoError> {
        Ok(PublicKey::new(params.element_from_bytes(bytes)?))
    }
}

impl PartialEq for PublicKey {
    fn eq(&self, other: &Self) -> bool {
        self.element() == other.element()
    }
}

impl Eq for PublicKey {}

impl fmt::Debug for PublicKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_tuple("PublicKey").field(self.element()).finish()
    }
}

/// Signing key. The secret never leaves this struct: no `Debug`, no encoder.
#[derive(Clone)]
pub struct KeyPair {
    secret: Scalar,
    public: PublicKey,
}

impl KeyPair {
    pub fn public(&self) -> &PublicKey {
        &self.public
    }

    pub(crate) fn secret(&self) -> &Scalar {
        &self.secret
    }

    /// Deterministic construction for worked examples.
    pub fn from_secret(params: &GroupParams, secret: Scalar) -> KeyPair {
        let y = params.g_pow(&secret);
        KeyPair {
            secret,
            public: PublicKey::new(y),
        }
    }
}

impl fmt::Debug for KeyPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KeyPair")
            .field("public", &self.public)
            .finish_non_exhaustive()
    }
}

/// `x` uniform in [1, q-1], `y = g^x`.
pub fn keygen<R: RngCore + ?Sized>(params: &GroupParams, rng: &mut R) -> KeyPair {
    let secret = params.random_nonzero_scalar(rng);
    KeyPair::from_secret(params, secret)
}

/// Length-prefixed concatenation used inside hash inputs.
pub(crate) fn lp_concat(fields: &[&[u8]]) -> Vec<u8> {
    let mut out = Vec::with_capacity(fields.iter().map(|f| f.len() + 4).sum());
    for field in fields {
        out.extend_from_slice(&(field.len() as u32).to_be_bytes());
        out.extend_from_slice(field);
    }
    out
}

#[cfg(test)]
pub(crate) mod testing {
    use rand::{Error, RngCore};

    /// Replays a scripted byte stream, then repeats the last byte forever.
    pub struct ScriptedRng {
        pub bytes: Vec<u8>,
        pub pos: usize,
    }

    impl ScriptedRng {
        pub fn new(bytes: Vec<u8>) -> Self {
            ScriptedRng { bytes, pos: 0 }
        }
    }

    impl RngCore for ScriptedRng {
        fn next_u32(&mut self) -> u32 {
            let mut b = [0u8; 4];
            self.fill_bytes(&mut b);
            u32::from_be_bytes(b)
        }
        fn next_u64(&mut self) -> u64 {
            let mut b = [0u8; 8];
            self.fill_bytes(&mut b);
            u64::from_be_bytes(b)
        }
        fn fill_bytes(&mut self, dest: &mut [u8]) {
            for d in dest {
                let idx = self.pos.min(self.bytes.len() - 1);
                *d = self.bytes[idx];
                self.pos += 1;
            }
        }
        fn try_fill_bytes(&mut self, dest: &mut [u8]) -> Result<(), Error> {
            self.fill_bytes(dest);
            Ok(())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::testing::ScriptedRng;
    use super::*;
    use num_bigint::BigUint;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn keygen_tiny_worked_example() {
        let params = GroupParams::tiny();
        let key = KeyPair::from_secret(&params, params.scalar_u64(3));
        assert_eq!(key.public().element().value(), &BigUint::from(8u32));
    }

    #[test]
    fn keygen_resamples_zero() {
        let params = GroupParams::tiny();
        // first draw 0 (rejected), then 3
        let mut rng = ScriptedRng::new(vec![0, 3]);
        let key = keygen(&params, &mut rng);
        assert_eq!(key.secret().value(), &BigUint::from(3u32));
        assert_eq!(key.public().element().value(), &BigUint::from(8u32));
    }

    #[test]
    fn keygen_public_in_subgroup() {
        let params = GroupParams::production();
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        for _ in 0..3 {
            let key = keygen(&params, &mut rng);
            assert!(params.is_member(key.public().element().value()));
            assert!(!key.secret().is_zero());
        }
    }

    #[test]
    fn public_key_table_matches_plain_pow() {
        let params = GroupParams::sim_1024();
        let mut rng = ChaCha20Rng::seed_from_u64(12);
        let key = keygen(&params, &mut rng);
        let e = params.random_scalar(&mut rng);
        assert_eq!(
            key.public().pow(&params, &e),
            params.pow(key.public().element(), &e)
        );
    }
}
