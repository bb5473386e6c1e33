//! Pedersen commitments `C = g^m h^r` and a non-interactive proof of knowledge
//! of the opening, bound to a caller-supplied context (the session id).

use rand::RngCore;

use super::{tags, GroupElement, GroupParams, Scalar};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PedersenCommitment(pub GroupElement);

/// Opening `(m, r)`; stays with the committer.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Opening {
    pub m: Scalar,
    pub r: Scalar,
}

/// `(A, z1, z2)` with `A = g^k1 h^k2`, `z1 = k1 + ch*m`, `z2 = k2 + ch*r`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PoK {
    pub a: GroupElement,
    pub z1: Scalar,
    pub z2: Scalar,
}

pub fn commit_with(params: &GroupParams, m: &Scalar, r: &Scalar) -> PedersenCommitment {
    PedersenCommitment(params.mul(&params.g_pow(m), &params.h_pow(r)))
}

pub fn pedersen_commit<R: RngCore + ?Sized>(
    params: &GroupParams,
    m: Scalar,
    rng: &mut R,
) -> (PedersenCommitment, Opening) {
    let r = params.random_scalar(rng);
    let c = commit_with(params, &m, &r);
    (c, Opening { m, r })
}

fn challenge(params: &GroupParams, a: &GroupElement, c: &PedersenCommitment, context: &[u8]) -> Scalar {
    let mut input = params.element_bytes(a);
    input.extend(params.element_bytes(&c.0));
    input.extend_from_slice(context);
    params.hash_to_scalar(tags::POK, &input)
}

/// Prover with explicit nonces; exposed for special-soundness tests.
pub fn pok_prove_with_nonces(
    params: &GroupParams,
    c: &PedersenCommitment,
    opening: &Opening,
    context: &[u8],
    k1: &Scalar,
    k2: &Scalar,
) -> PoK {
    let a = params.mul(&params.g_pow(k1), &params.h_pow(k2));
    let ch = challenge(params, &a, c, context);
    PoK {
        z1: params.add(k1, &params.mul_scalar(&ch, &opening.m)),
        z2: params.add(k2, &params.mul_scalar(&ch, &opening.r)),
        a,
    }
}

pub fn pok_prove<R: RngCore + ?Sized>(
    params: &GroupParams,
    c: &PedersenCommitment,
    opening: &Opening,
    context: &[u8],
    rng: &mut R,
) -> PoK {
    let k1 = params.random_scalar(rng);
    let k2 = params.random_scalar(rng);
    pok_prove_with_nonces(params, c, opening, context, &k1, &k2)
}

/// `g^z1 h^z2 == A * C^ch`
pub fn pok_verify(params: &GroupParams, c: &PedersenCommitment, context: &[u8], proof: &PoK) -> bool {
    if proof.z1.value() >= params.q() || proof.z2.value() >= params.q() {
        return false;
    }
    let ch = challenge(params, &proof.a, c, context);
    let lhs = params.mul(&params.g_pow(&proof.z1), &params.h_pow(&proof.z2));
    let rhs = params.mul(&proof.a, &params.pow(&c.0, &ch));
    lhs == rhs
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn completeness_and_bindings() {
        let params = GroupParams::production();
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        let m = params.random_scalar(&mut rng);
        let (c, opening) = pedersen_commit(&params, m, &mut rng);
        assert_eq!(commit_with(&params, &opening.m, &opening.r), c);
        let proof = pok_prove(&params, &c, &opening, b"session-1", &mut rng);
        assert!(pok_verify(&params, &c, b"session-1", &proof));
        assert!(!pok_verify(&params, &c, b"session-2", &proof));
        let (other, _) = pedersen_commit(&params, params.scalar_u64(5), &mut rng);
        assert!(!pok_verify(&params, &other, b"session-1", &proof));
    }

    #[test]
    fn special_soundness_extraction_tiny_group() {
        let params = GroupParams::tiny();
        let q = 11u64;
        let g = 2u64;
        let h = u64::try_from(params.generator_h().value()).unwrap();
        let p = 23u64;
        let powm = |b: u64, e: u64| (0..e).fold(1u64, |acc, _| acc * b % p);
        for m in 0..q {
            for r in [0u64, 4, 9] {
                let opening = Opening {
                    m: params.scalar_u64(m),
                    r: params.scalar_u64(r),
                };
                let c = commit_with(&params, &opening.m, &opening.r);
                let k1 = params.scalar_u64(3);
                let k2 = params.scalar_u64(7);
                // same A, two contexts -> two challenges
                let mut transcripts = Vec::new();
                for ctx in 0u8..20 {
                    let proof = pok_prove_with_nonces(&params, &c, &opening, &[ctx], &k1, &k2);
                    assert!(pok_verify(&params, &c, &[ctx], &proof));
                    let ch = challenge(&params, &proof.a, &c, &[ctx]);
                    transcripts.push((ch, proof));
                }
                let (ch1, t1) = &transcripts[0];
                let Some((ch2, t2)) = transcripts.iter().find(|(ch, _)| ch != ch1) else {
                    continue;
                };
                let c_val = u64::try_from(c.0.value()).unwrap();
                let a_val = u64::try_from(t1.a.value()).unwrap();
                let (ch1, ch2) = (
                    u64::try_from(ch1.value()).unwrap(),
                    u64::try_from(ch2.value()).unwrap(),
                );
                let (z1a, z2a) = (
                    u64::try_from(t1.z1.value()).unwrap(),
                    u64::try_from(t1.z2.value()).unwrap(),
                );
                let (z1b, z2b) = (
                    u64::try_from(t2.z1.value()).unwrap(),
                    u64::try_from(t2.z2.value()).unwrap(),
                );
                // brute force: every (m', r') consistent with both accepting transcripts
                let mut found = Vec::new();
                for mm in 0..q {
                    for rr in 0..q {
                        let cc = powm(g, mm) * powm(h, rr) % p;
                        if cc != c_val {
                            continue;
                        }
                        let k1x = (z1a + q * q - ch1 * mm % q) % q;
                        let k2x = (z2a + q * q - ch1 * rr % q) % q;
                        let ok_a = powm(g, k1x) * powm(h, k2x) % p == a_val;
                        let ok_b = (k1x + ch2 * mm) % q == z1b && (k2x + ch2 * rr) % q == z2b;
                        if ok_a && ok_b {
                            found.push((mm, rr));
                        }
                    }
                }
                assert_eq!(found, vec![(m, r)], "m={m} r={r}");
            }
        }
    }
}
