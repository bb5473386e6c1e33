use std::collections::HashMap;
use std::fmt;
use std::sync::{Arc, Mutex, OnceLock};

use num_bigint::BigUint;
use num_traits::{One, Zero};
use rand::RngCore;
use sha2::{Digest, Sha256};

use super::CryptoError;

/// Prime-order subgroup of Z_p^*.
///
/// All scalar and element arithmetic goes through the parameters, which own
/// the moduli and the precomputed tables for the fixed generators.
pub struct GroupParams {
    pub(crate) label: String,
    pub(crate) p: BigUint,
    pub(crate) q: BigUint,
    pub(crate) g: BigUint,
    pub(crate) h: BigUint,
    pub(crate) g2: BigUint,
    pub(crate) cofactor: BigUint,
    pub(crate) element_len: usize,
    pub(crate) scalar_len: usize,
    pub(crate) g_table: OnceLock<Arc<FixedBase>>,
    pub(crate) h_table: OnceLock<Arc<FixedBase>>,
    pub(crate) hashed: Mutex<HashMap<Vec<u8>, Arc<Generator>>>,
}

/// Bound on cached hash-to-group outputs; the cache is cleared when full.
const HASHED_CACHE_LIMIT: usize = 4096;

/// A group element that is raised to many exponents; the table is built on
/// first use.
pub struct Generator {
    element: GroupElement,
    table: OnceLock<FixedBase>,
}

impl Generator {
    pub fn new(element: GroupElement) -> Generator {
        Generator {
            element,
            table: OnceLock::new(),
        }
    }

    pub fn element(&self) -> &GroupElement {
        &self.element
    }

    pub fn pow(&self, params: &GroupParams, exponent: &Scalar) -> GroupElement {
        let table = self.table.get_or_init(|| params.fixed_base(&self.element));
        params.pow_fixed(table, exponent)
    }
}

impl Clone for Generator {
    fn clone(&self) -> Self {
        Generator::new(self.element.clone())
    }
}

impl fmt::Debug for Generator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.element.fmt(f)
    }
}

impl fmt::Debug for GroupParams {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GroupParams")
            .field("label", &self.label)
            .field("p_bits", &self.p.bits())
            .field("q_bits", &self.q.bits())
            .finish()
    }
}

/// Element of Z_q.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Scalar(BigUint);

/// Element of the order-q subgroup of Z_p^*.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct GroupElement(BigUint);

impl Scalar {
    pub fn value(&self) -> &BigUint {
        &self.0
    }

    pub fn is_zero(&self) -> bool {
        self.0.is_zero()
    }
}

impl GroupElement {
    #[cfg(test)]
    pub(crate) fn unchecked(value: BigUint) -> GroupElement {
        GroupElement(value)
    }

    pub fn value(&self) -> &BigUint {
        &self.0
    }

    pub fn is_identity(&self) -> bool {
        self.0.is_one()
    }

    pub(crate) fn into_inner(self) -> BigUint {
        self.0
    }
}

impl fmt::Debug for Scalar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Scalar(0x{})", self.0.to_str_radix(16))
    }
}

impl fmt::Debug for GroupElement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let hex = self.0.to_str_radix(16);
        if hex.len() > 24 {
            write!(f, "GroupElement(0x{}..{})", &hex[..12], &hex[hex.len() - 8..])
        } else {
            write!(f, "GroupElement(0x{hex})")
        }
    }
}

/// Windowed fixed-base exponentiation table: `rows[i][j] = base^(j * 2^(w*i))`.
pub struct FixedBase {
    window: usize,
    rows: Vec<Vec<BigUint>>,
    modulus: BigUint,
}

impl FixedBase {
    const WINDOW: usize = 5;

    pub fn new(base: &BigUint, modulus: &BigUint, exponent_bits: usize) -> FixedBase {
        let window = Self::WINDOW;
        let row_count = exponent_bits.div_ceil(window);
        let mut rows = Vec::with_capacity(row_count);
        let mut row_base = base % modulus;
        for _ in 0..row_count {
            let mut row = Vec::with_capacity(1 << window);
            row.push(BigUint::one());
            for j in 1..(1usize << window) {
                let next = (&row[j - 1] * &row_base) % modulus;
                row.push(next);
            }
            // base^(2^(w*(i+1))) = row[2^w - 1] * row_base
            row_base = (&row[(1 << window) - 1] * &row_base) % modulus;
            rows.push(row);
        }
        FixedBase {
            window,
            rows,
            modulus: modulus.clone(),
        }
    }

    /// `base^exponent`; falls back to square-and-multiply for exponents wider
    /// than the table.
    pub fn pow(&self, exponent: &BigUint) -> BigUint {
        let bits = exponent.bits() as usize;
        if bits > self.rows.len() * self.window {
            let base = &self.rows[0][1];
            return base.modpow(exponent, &self.modulus);
        }
        let mut acc = BigUint::one();
        let mask = (1u64 << self.window) - 1;
        let digits = exponent.to_u64_digits();
        for (i, row) in self.rows.iter().enumerate() {
            let bit = i * self.window;
            if bit >= bits {
                break;
            }
            let digit = window_at(&digits, bit, self.window) & mask;
            if digit != 0 {
                acc = (acc * &row[digit as usize]) % &self.modulus;
            }
        }
        acc
    }
}

fn window_at(limbs: &[u64], bit: usize, width: usize) -> u64 {
    let idx = bit / 64;
    let off = bit % 64;
    let lo = limbs.get(idx).copied().unwrap_or(0) >> off;
    if off + width > 64 {
        let hi = limbs.get(idx + 1).copied().unwrap_or(0) << (64 - off);
        lo | hi
    } else {
        lo
    }
}

impl GroupParams {
    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn p(&self) -> &BigUint {
        &self.p
    }

    pub fn q(&self) -> &BigUint {
        &self.q
    }

    pub fn generator(&self) -> GroupElement {
        GroupElement(self.g.clone())
    }

    pub fn generator_h(&self) -> GroupElement {
        GroupElement(self.h.clone())
    }

    pub fn generator_g2(&self) -> GroupElement {
        GroupElement(self.g2.clone())
    }

    /// Width in bytes of an encoded element, `ceil(bits(p) / 8)`.
    pub fn element_len(&self) -> usize {
        self.element_len
    }

    /// Width in bytes of an encoded scalar, `ceil(bits(q) / 8)`.
    pub fn scalar_len(&self) -> usize {
        self.scalar_len
    }

    // ---- scalars ---------------------------------------------------------

    pub fn scalar(&self, value: BigUint) -> Result<Scalar, CryptoError> {
        if value >= self.q {
            return Err(CryptoError::ScalarOutOfRange);
        }
        Ok(Scalar(value))
    }

    pub fn scalar_u64(&self, value: u64) -> Scalar {
        Scalar(BigUint::from(value) % &self.q)
    }

    /// Reduce an arbitrary integer mod q.
    pub fn reduce(&self, value: &BigUint) -> Scalar {
        Scalar(value % &self.q)
    }

    /// Uniform in [0, q) by rejection sampling on `bits(q)` random bits.
    pub fn random_scalar<R: RngCore + ?Sized>(&self, rng: &mut R) -> Scalar {
        let bits = self.q.bits() as usize;
        let mut buf = vec![0u8; bits.div_ceil(8)];
        let excess = buf.len() * 8 - bits;
        loop {
            rng.fill_bytes(&mut buf);
            buf[0] &= 0xff >> excess;
            let candidate = BigUint::from_bytes_be(&buf);
            if candidate < self.q {
                return Scalar(candidate);
            }
        }
    }

    /// Uniform in [1, q).
    pub fn random_nonzero_scalar<R: RngCore + ?Sized>(&self, rng: &mut R) -> Scalar {
        loop {
            let s = self.random_scalar(rng);
            if !s.is_zero() {
                return s;
            }
        }
    }

    pub fn add(&self, a: &Scalar, b: &Scalar) -> Scalar {
        Scalar((&a.0 + &b.0) % &self.q)
    }

    pub fn sub(&self, a: &Scalar, b: &Scalar) -> Scalar {
        Scalar((&a.0 + &self.q - &b.0) % &self.q)
    }

    pub fn mul_scalar(&self, a: &Scalar, b: &Scalar) -> Scalar {
        Scalar((&a.0 * &b.0) % &self.q)
    }

    pub fn neg(&self, a: &Scalar) -> Scalar {
        Scalar((&self.q - &a.0) % &self.q)
    }

    /// Multiplicative inverse mod q (q is prime); `None` for zero.
    pub fn invert(&self, a: &Scalar) -> Option<Scalar> {
        if a.is_zero() {
            return None;
        }
        let exp = &self.q - 2u32;
        Some(Scalar(a.0.modpow(&exp, &self.q)))
    }

    // ---- elements --------------------------------------------------------

    /// Checked constructor: rejects values outside the order-q subgroup.
    pub fn element(&self, value: BigUint) -> Result<GroupElement, CryptoError> {
        if self.is_member(&value) {
            Ok(GroupElement(value))
        } else {
            Err(CryptoError::NotInSubgroup)
        }
    }

    pub fn is_member(&self, value: &BigUint) -> bool {
        !value.is_zero() && value < &self.p && value.modpow(&self.q, &self.p).is_one()
    }

    pub fn identity(&self) -> GroupElement {
        GroupElement(BigUint::one())
    }

    fn wrap(&self, value: BigUint) -> GroupElement {
        // Full membership costs one exponentiation; small groups always pay
        // it in debug builds, large ones only with the `paranoid` feature.
        if cfg!(debug_assertions) && (self.p.bits() <= 64 || cfg!(feature = "paranoid")) {
            assert!(self.is_member(&value), "produced element outside the subgroup");
        }
        GroupElement(value)
    }

    pub fn mul(&self, a: &GroupElement, b: &GroupElement) -> GroupElement {
        self.wrap((&a.0 * &b.0) % &self.p)
    }

    pub fn pow(&self, base: &GroupElement, exponent: &Scalar) -> GroupElement {
        self.wrap(base.0.modpow(&exponent.0, &self.p))
    }

    pub fn g_pow(&self, exponent: &Scalar) -> GroupElement {
        self.wrap(self.g_table().pow(&exponent.0))
    }

    pub fn h_pow(&self, exponent: &Scalar) -> GroupElement {
        self.wrap(self.h_table().pow(&exponent.0))
    }

    /// Inverse in the subgroup: a^(q-1).
    pub fn invert_element(&self, a: &GroupElement) -> GroupElement {
        let exp = &self.q - 1u32;
        self.wrap(a.0.modpow(&exp, &self.p))
    }

    /// Precomputed table for a base that will be raised to many exponents.
    pub fn fixed_base(&self, base: &GroupElement) -> FixedBase {
        FixedBase::new(&base.0, &self.p, self.q.bits() as usize)
    }

    pub fn pow_fixed(&self, table: &FixedBase, exponent: &Scalar) -> GroupElement {
        self.wrap(table.pow(&exponent.0))
    }

    // ---- encoding --------------------------------------------------------

    pub fn scalar_bytes(&self, s: &Scalar) -> Vec<u8> {
        left_pad(&s.0, self.scalar_len)
    }

    pub fn element_bytes(&self, e: &GroupElement) -> Vec<u8> {
        left_pad(&e.0, self.element_len)
    }

    pub fn scalar_from_bytes(&self, bytes: &[u8]) -> Result<Scalar, CryptoError> {
        if bytes.len() != self.scalar_len {
            return Err(CryptoError::BadLength {
                expected: self.scalar_len,
                found: bytes.len(),
            });
        }
        self.scalar(BigUint::from_bytes_be(bytes))
    }

    pub fn element_from_bytes(&self, bytes: &[u8]) -> Result<GroupElement, CryptoError> {
        if bytes.len() != self.element_len {
            return Err(CryptoError::BadLength {
                expected: self.element_len,
                found: bytes.len(),
            });
        }
        self.element(BigUint::from_bytes_be(bytes))
    }

    // ---- hashing ---------------------------------------------------------

    /// SHA-256(domain_tag || input), big-endian, reduced mod q.
    pub fn hash_to_scalar(&self, domain_tag: &[u8], input: &[u8]) -> Scalar {
        let digest = Sha256::new()
            .chain_update(domain_tag)
            .chain_update(input)
            .finalize();
        Scalar(BigUint::from_bytes_be(&digest) % &self.q)
    }

    /// Deterministic map into the subgroup with unknown discrete log.
    ///
    /// For counter i = 0, 1, ...: expand SHA-256(tag || input || i || j) over
    /// blocks j to `element_len + 16` bytes, reduce mod p, raise to the
    /// cofactor (p-1)/q, and return the first result outside {0, 1}.
    pub fn hash_to_group(&self, domain_tag: &[u8], input: &[u8]) -> GroupElement {
        let wanted = self.element_len + 16;
        for counter in 0u32.. {
            let mut expanded = Vec::with_capacity(wanted + 32);
            let mut block = 0u32;
            while expanded.len() < wanted {
                let digest = Sha256::new()
                    .chain_update(domain_tag)
                    .chain_update(input)
                    .chain_update(counter.to_be_bytes())
                    .chain_update(block.to_be_bytes())
                    .finalize();
                expanded.extend_from_slice(&digest);
                block += 1;
            }
            expanded.truncate(wanted);
            let candidate = BigUint::from_bytes_be(&expanded) % &self.p;
            let element = candidate.modpow(&self.cofactor, &self.p);
            if !element.is_zero() && !element.is_one() {
                return GroupElement(element);
            }
        }
        unreachable!("counter space exhausted")
    }

    /// Memoized [`hash_to_group`](Self::hash_to_group) with an exponent table.
    pub fn hashed_generator(&self, domain_tag: &[u8], input: &[u8]) -> Arc<Generator> {
        let mut key = Vec::with_capacity(domain_tag.len() + input.len() + 4);
        key.extend_from_slice(&(domain_tag.len() as u32).to_be_bytes());
        key.extend_from_slice(domain_tag);
        key.extend_from_slice(input);
        if let Some(found) = self.hashed.lock().expect("cache lock").get(&key) {
            return found.clone();
        }
        let generator = Arc::new(Generator::new(self.hash_to_group(domain_tag, input)));
        let mut cache = self.hashed.lock().expect("cache lock");
        if cache.len() >= HASHED_CACHE_LIMIT {
            cache.clear();
        }
        cache.entry(key).or_insert(generator).clone()
    }
}

pub(crate) fn left_pad(value: &BigUint, width: usize) -> Vec<u8> {
    let raw = value.to_bytes_be();
    let raw: &[u8] = if value.is_zero() { &[] } else { &raw };
    debug_assert!(raw.len() <= width);
    let mut out = vec![0u8; width - raw.len()];
    out.extend_from_slice(raw);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::tags;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn order_11_subgroup() -> Vec<u64> {
        // powers of 2 mod 23
        let mut out = Vec::new();
        let mut x = 1u64;
        for _ in 0..11 {
            out.push(x);
            x = x * 2 % 23;
        }
        out.sort();
        out
    }

    #[test]
    fn subgroup_enumeration_matches_expected() {
        assert_eq!(order_11_subgroup(), vec![1, 2, 3, 4, 6, 8, 9, 12, 13, 16, 18]);
    }

    #[test]
    fn hash_to_group_lands_in_tiny_subgroup() {
        let params = GroupParams::tiny();
        let subgroup = order_11_subgroup();
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        for _ in 0..50 {
            let mut input = [0u8; 12];
            rng.fill_bytes(&mut input);
            let e = params.hash_to_group(b"test", &input);
            let v = u64::try_from(e.value()).unwrap();
            assert!(subgroup.contains(&v), "{v} not in subgroup");
            assert_ne!(v, 1);
            assert_eq!(params.hash_to_group(b"test", &input), e);
        }
    }

    #[test]
    fn hash_to_group_membership_production() {
        let params = GroupParams::production();
        let e = params.hash_to_group(b"tag", b"input");
        assert!(params.is_member(e.value()));
        assert!(!e.is_identity());
    }

    #[test]
    fn hash_to_scalar_below_q_and_tag_separated() {
        let params = GroupParams::sim_1024();
        let mut rng = ChaCha20Rng::seed_from_u64(9);
        for _ in 0..100 {
            let mut input = [0u8; 20];
            rng.fill_bytes(&mut input);
            let a = params.hash_to_scalar(b"tag-one", &input);
            let b = params.hash_to_scalar(b"tag-two", &input);
            assert!(a.value() < params.q());
            assert_ne!(a, b);
            assert_eq!(a, params.hash_to_scalar(b"tag-one", &input));
        }
    }

    #[test]
    fn hash_to_scalar_matches_manual_sha256() {
        let params = GroupParams::production();
        let digest = Sha256::digest(b"domaininput");
        let expected = BigUint::from_bytes_be(&digest) % params.q();
        assert_eq!(params.hash_to_scalar(b"domain", b"input").value(), &expected);
    }

    #[test]
    fn fixed_base_matches_modpow() {
        let params = GroupParams::sim_1024();
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        for _ in 0..20 {
            let s = params.random_scalar(&mut rng);
            assert_eq!(params.g_pow(&s).value(), &params.g.modpow(s.value(), &params.p));
            assert_eq!(params.h_pow(&s).value(), &params.h.modpow(s.value(), &params.p));
        }
        let zero = params.scalar_u64(0);
        assert!(params.g_pow(&zero).is_identity());
    }

    #[test]
    fn scalar_arithmetic_tiny() {
        let params = GroupParams::tiny();
        let a = params.scalar_u64(7);
        let b = params.scalar_u64(9);
        assert_eq!(params.add(&a, &b), params.scalar_u64(5));
        assert_eq!(params.sub(&a, &b), params.scalar_u64(9));
        assert_eq!(params.mul_scalar(&a, &b), params.scalar_u64(8));
        assert_eq!(params.neg(&a), params.scalar_u64(4));
        let inv = params.invert(&a).unwrap();
        assert_eq!(params.mul_scalar(&a, &inv), params.scalar_u64(1));
        assert!(params.invert(&params.scalar_u64(0)).is_none());
    }

    #[test]
    fn encoding_widths_and_rejections() {
        let params = GroupParams::production();
        let s = params.scalar_u64(1);
        let bytes = params.scalar_bytes(&s);
        assert_eq!(bytes.len(), 32);
        assert_eq!(params.scalar_from_bytes(&bytes).unwrap(), s);
        let q_bytes = left_pad(params.q(), 32);
        assert!(matches!(
            params.scalar_from_bytes(&q_bytes),
            Err(CryptoError::ScalarOutOfRange)
        ));
        let g = params.generator();
        let enc = params.element_bytes(&g);
        assert_eq!(enc.len(), 256);
        assert_eq!(params.element_from_bytes(&enc).unwrap(), g);
        assert!(params.element_from_bytes(&vec![0u8; 256]).is_err());
        assert!(params.element_from_bytes(&enc[1..]).is_err());
    }

    #[test]
    fn generators_distinct() {
        let params = GroupParams::production();
        assert_ne!(params.generator(), params.generator_h());
        assert_ne!(params.generator_h(), params.generator_g2());
        let h_again = params.hash_to_group(tags::GENERATOR_H, params.label().as_bytes());
        assert_eq!(h_again, params.generator_h());
    }
}
