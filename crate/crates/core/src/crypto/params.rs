//! Schnorr-group parameters shipped with the crate.
//!
//! Three groups are committed here, all generated once offline and checked by
//! the test suite:
//!
//! * `tiny` (p = 23, q = 11, g = 2) for brute-force oracles,
//! * `sim_1024` (1024-bit p, 256-bit q) for long simulation runs,
//! * `production` (2048-bit p, 256-bit q), the default for real deployments.
//!
//! The auxiliary generators `h` and `g2` are derived with `hash_to_group`, so
//! nobody knows their discrete logarithm with respect to `g`.

use std::sync::{Arc, OnceLock};

use num_bigint::BigUint;
use num_traits::{One, Zero};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

use super::group::{FixedBase, GroupParams};
use super::CryptoError;

const P1024_P: &str = concat!(
    "8784d5efe3079e92d66e39757bf071c960049b8e01cd643c30d4e29c5c609b8d",
    "73c9b08ced9a926ebf328e58c31e318384b99abb20ef44b0b00e7f5f12dd9913",
    "8f839e167f5ab11eeed95b10abfbb9c0142a7867ef907f255658abb65ed3258c",
    "61ee83d536f7a4b062c2d835bb3e638e5cbf5ff9ed97e30b77f62a206fc1754b",
);

const P1024_Q: &str = "8b7bd942d70e605720eaf1f1d5b87349db8f71474cf80bba98fe7d6b5a1e20a9";

const P1024_G: &str = concat!(
    "544cf0f7a6737ad237a1b05ff23241465ffb7e43d092e242e64620b5560e1c41",
    "6617b7a99766840e2239b4307f00517bb98ce38bd6706fa698fc90b5d8a512a2",
    "cfc8e41b6a8d948ece3dac4415e0052444b8fd80c7eb4805cc86afe9d8a41169",
    "8f7a7d84206a3f6b10c977aea78eb4950b207f8c3df2ee4e6b345d120354dc50",
);

const P2048_P: &str = concat!(
    "83c30b5eb328b0ad9e4b0fcb54bd516f7ac7c342020a2660a9f442a38672aa00",
    "fcd64fb12032f322a61a7083c05d2fa2819a65d6e3587533cafe614a82d8b044",
    "5d210968eef1818fa03e21193070816470fc501a51ec485021f91487107a5390",
    "f0d32335c35d8e89da6ca70f783e6cc1328c136fbd214d582aab6d723afa7f68",
    "a237a4ddd318c96fa2b910428cbb2e48cc5308bfb73ccdb5d2b7de6f5bfc422a",
    "a27d3fc4c5d7361db1ecf37dfb844007b5e18062ceb3ee2ec1451cb1f3baf5e6",
    "caabf6e7bf64e995529257d296ebb58c9890888b36ea7993895dfa0bbc5a3fea",
    "591e4ff33cfa3227c5b243a758af5fbd8163c8bd1d8fe7a7b978ec476583e269",
);

const P2048_Q: &str = "c474bffa638c55c189251c72894f91574854890ce03c360b42cd6c4faffaf099";

const P2048_G: &str = concat!(
    "509cb23e46d7c836c72d272987a0d487bd6b833006298916770cd15698695343",
    "5defd6760ed263b0488ac68c89df8c484425386459717c2d97e5cf541226f752",
    "cf1c70e9a99286ecb94d976efd75851fd869dcfc2b63274695a92a67c1b52ca6",
    "b1a750a80494fef4c411096296ffb5d5fac20b4ce4f60d83f7ccd8a27b8682ea",
    "926e50cd677b8e7248c698b3d3755d8d10c3b24f818ede844fd8bfe12f9d1ae1",
    "43c007349aaa0bf867e2640bfa52159fad122899ea4f4668a362d093e34eb81f",
    "c69e5ff378333ae3ab1ce379390872fdbbe42bd07017424838eed75992075474",
    "48d6056ad9797cdcbcdf70c081b6853405666b70d056a1b33de978b13a2dbc7a",
);

/// Miller-Rabin rounds; 4^-40 = 2^-80 error bound.
pub const PRIMALITY_ROUNDS: usize = 40;

fn hex_uint(s: &str) -> BigUint {
    BigUint::parse_bytes(s.as_bytes(), 16).expect("committed constant is valid hex")
}

static TINY: OnceLock<Arc<GroupParams>> = OnceLock::new();
static SIM_1024: OnceLock<Arc<GroupParams>> = OnceLock::new();
static PRODUCTION: OnceLock<Arc<GroupParams>> = OnceLock::new();

impl GroupParams {
    /// p = 23, q = 11, g = 2. Only for tests and worked examples.
    pub fn tiny() -> Arc<GroupParams> {
        TINY.get_or_init(|| {
            Arc::new(GroupParams::from_trusted(
                "tiny-23",
                BigUint::from(23u32),
                BigUint::from(11u32),
                BigUint::from(2u32),
            ))
        })
        .clone()
    }

    /// 1024-bit modulus with a 256-bit subgroup. Used by the simulator test
    /// suites where thousands of issuances run back to back.
    pub fn sim_1024() -> Arc<GroupParams> {
        SIM_1024
            .get_or_init(|| {
                Arc::new(GroupParams::from_trusted(
                    "sim-1024",
                    hex_uint(P1024_P),
                    hex_uint(P1024_Q),
                    hex_uint(P1024_G),
                ))
            })
            .clone()
    }

    /// 2048-bit modulus with a 256-bit subgroup.
    pub fn production() -> Arc<GroupParams> {
        PRODUCTION
            .get_or_init(|| {
                Arc::new(GroupParams::from_trusted(
                    "prod-2048",
                    hex_uint(P2048_P),
                    hex_uint(P2048_Q),
                    hex_uint(P2048_G),
                ))
            })
            .clone()
    }

    /// Look up a built-in group by its label.
    pub fn by_label(label: &str) -> Option<Arc<GroupParams>> {
        match label {
            "tiny-23" | "tiny" => Some(Self::tiny()),
            "sim-1024" | "sim" => Some(Self::sim_1024()),
            "prod-2048" | "production" => Some(Self::production()),
            _ => None,
        }
    }

    /// Build parameters from untrusted values, running every structural check.
    pub fn new(label: &str, p: BigUint, q: BigUint, g: BigUint) -> Result<GroupParams, CryptoError> {
        let params = GroupParams::from_trusted(label, p, q, g);
        params.validate()?;
        Ok(params)
    }

    pub(crate) fn from_trusted(label: &str, p: BigUint, q: BigUint, g: BigUint) -> GroupParams {
        let cofactor = (&p - 1u32) / &q;
        let element_len = p.bits().div_ceil(8) as usize;
        let scalar_len = q.bits().div_ceil(8) as usize;
        let mut params = GroupParams {
            label: label.to_string(),
            p,
            q,
            g: BigUint::zero(),
            h: BigUint::zero(),
            g2: BigUint::zero(),
            cofactor,
            element_len,
            scalar_len,
            g_table: OnceLock::new(),
            h_table: OnceLock::new(),
            hashed: Default::default(),
        };
        params.g = g;
        params.h = params
            .hash_to_group(super::tags::GENERATOR_H, label.as_bytes())
            .into_inner();
        params.g2 = params
            .hash_to_group(super::tags::GENERATOR_G2, label.as_bytes())
            .into_inner();
        params
    }

    /// Structural checks: q prime, q | p - 1, generators of order exactly q.
    pub fn validate(&self) -> Result<(), CryptoError> {
        let one = BigUint::one();
        if !is_probable_prime(&self.q, PRIMALITY_ROUNDS) {
            return Err(CryptoError::InvalidParams("q is not prime"));
        }
        if !is_probable_prime(&self.p, PRIMALITY_ROUNDS) {
            return Err(CryptoError::InvalidParams("p is not prime"));
        }
        if !((&self.p - 1u32) % &self.q).is_zero() {
            return Err(CryptoError::InvalidParams("q does not divide p - 1"));
        }
        for (name, gen) in [("g", &self.g), ("h", &self.h), ("g2", &self.g2)] {
            if gen.is_zero() || *gen == one || gen >= &self.p {
                return Err(CryptoError::InvalidParams(match name {
                    "g" => "g is degenerate",
                    "h" => "h is degenerate",
                    _ => "g2 is degenerate",
                }));
            }
            if gen.modpow(&self.q, &self.p) != one {
                return Err(CryptoError::InvalidParams(match name {
                    "g" => "g does not have order q",
                    "h" => "h does not have order q",
                    _ => "g2 does not have order q",
                }));
            }
        }
        Ok(())
    }

    pub(crate) fn g_table(&self) -> &FixedBase {
        self.g_table
            .get_or_init(|| Arc::new(FixedBase::new(&self.g, &self.p, self.q.bits() as usize)))
    }

    pub(crate) fn h_table(&self) -> &FixedBase {
        self.h_table
            .get_or_init(|| Arc::new(FixedBase::new(&self.h, &self.p, self.q.bits() as usize)))
    }
}

/// Miller-Rabin with bases drawn from a fixed-seed stream, so a given input
/// always gets the same verdict.
pub fn is_probable_prime(n: &BigUint, rounds: usize) -> bool {
    let two = BigUint::from(2u32);
    let three = BigUint::from(3u32);
    if *n < two {
        return false;
    }
    if *n == two || *n == three {
        return true;
    }
    for small in [2u32, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37] {
        let small = BigUint::from(small);
        if *n == small {
            return true;
        }
        if (n % &small).is_zero() {
            return false;
        }
    }
    let n_minus_1 = n - 1u32;
    let mut d = n_minus_1.clone();
    let mut s = 0u32;
    while (&d % 2u32).is_zero() {
        d >>= 1;
        s += 1;
    }
    let mut rng = ChaCha20Rng::seed_from_u64(0x6d69_6c6c_6572_7261);
    let width = n.bits().div_ceil(8) as usize + 8;
    let span = n - 3u32;
    'witness: for _ in 0..rounds {
        let mut buf = vec![0u8; width];
        rng.fill_bytes(&mut buf);
        let a = BigUint::from_bytes_be(&buf) % &span + 2u32;
        let mut x = a.modpow(&d, n);
        if x.is_one() || x == n_minus_1 {
            continue;
        }
        for _ in 1..s {
            x = x.modpow(&two, n);
            if x == n_minus_1 {
                continue 'witness;
            }
        }
        return false;
    }
    true
}
