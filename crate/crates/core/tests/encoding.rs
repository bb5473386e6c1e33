use blindfare::crypto::{GroupParams, SchnorrSignature};
use blindfare::pbs::PartiallyBlindSignature;
use blindfare::tokens::{CheckinToken, CreditToken, Receipt, Service, Ticket, Trip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, PartialEq)]
enum Token {
    Receipt(Receipt),
    Ticket(Ticket),
    Credit(CreditToken),
    Checkin(CheckinToken),
}

impl Token {
    fn encode(&self, p: &GroupParams) -> Vec<u8> {
        match self {
            Token::Receipt(t) => t.encode(p),
            Token::Ticket(t) => t.encode(p),
            Token::Credit(t) => t.encode(p),
            Token::Checkin(t) => t.encode(p),
        }
    }

    fn decode_as_self(&self, p: &GroupParams, bytes: &[u8]) -> bool {
        match self {
            Token::Receipt(t) => Receipt::decode(p, bytes).as_ref() == Ok(t),
            Token::Ticket(t) => Ticket::decode(p, bytes).as_ref() == Ok(t),
            Token::Credit(t) => CreditToken::decode(p, bytes).as_ref() == Ok(t),
            Token::Checkin(t) => CheckinToken::decode(p, bytes).as_ref() == Ok(t),
        }
    }
}

/// Fields come from tiny domains so that equal pairs actually occur.
fn token(p: &GroupParams, rng: &mut ChaCha8Rng) -> Token {
    let seqno = [rng.gen_range(0..2u8); 16];
    let small = |rng: &mut ChaCha8Rng| p.random_scalar(&mut ChaCha8Rng::seed_from_u64(rng.gen_range(0..2)));
    let pbs = |rng: &mut ChaCha8Rng| PartiallyBlindSignature {
        rho: small(rng),
        omega: small(rng),
        sigma: small(rng),
        delta: small(rng),
    };
    let fare = 150 * rng.gen_range(1..3);
    match rng.gen_range(0..4) {
        0 => Token::Receipt(Receipt {
            service: if rng.gen() { Service::Pto } else { Service::Ptc },
            fare,
            seqno,
            sig: pbs(rng),
        }),
        1 => {
            let routes: [&[&str]; 3] = [&["A", "B"], &["A", "B", "C"], &["AB", "C"]];
            Token::Ticket(Ticket {
                trip: Trip::new(routes[rng.gen_range(0..3)], rng.gen_range(0..2)),
                seqno,
                fare,
                sig: pbs(rng),
            })
        }
        2 => Token::Credit(CreditToken {
            seqno,
            value: fare - 300,
            sig: pbs(rng),
        }),
        _ => Token::Checkin(CheckinToken {
            operator: ["metro", "tram"][rng.gen_range(0..2)].into(),
            location: ["A", "B"][rng.gen_range(0..2)].into(),
            time: rng.gen_range(0..2),
            credit_seqno: seqno,
            log_head: rng.gen::<bool>().then(|| [rng.gen_range(0..2u8); 32]),
            sig: SchnorrSignature {
                c: small(rng),
                s: small(rng),
            },
        }),
    }
}

#[test]
fn equal_bytes_iff_equal_tokens_over_many_pairs() {
    let p = GroupParams::tiny();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let (mut equal, mut distinct) = (0, 0);
    for _ in 0..100_000 {
        let a = token(&p, &mut rng);
        let b = token(&p, &mut rng);
        let (ea, eb) = (a.encode(&p), b.encode(&p));
        assert_eq!(ea == eb, a == b, "{a:?} vs {b:?}");
        assert!(a.decode_as_self(&p, &ea));
        if a == b {
            equal += 1;
        } else {
            distinct += 1;
        }
    }
    assert!(equal > 100, "fixture domains too large: {equal} equal pairs");
    assert!(distinct > 90_000);
}
