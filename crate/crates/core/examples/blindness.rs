//! The blindness game against three issuance schemes, plus the perfect
//! blindness witness: every signer view pairs with every signature.

use blindfare::audit::{blindness_game, cross_witness, BlindScheme, CanaryLeak, HashOnly, Honest, Shown};
use blindfare::crypto::{keygen, GroupParams};
use blindfare::pbs::{PublicPart, SecretMessage};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

fn main() {
    let params = GroupParams::sim_1024();
    let mut rng = ChaCha20Rng::seed_from_u64(3);
    let key = keygen(&params, &mut rng);
    let schemes: [&dyn BlindScheme; 3] = [&Honest, &CanaryLeak, &HashOnly];
    for s in schemes {
        let g = blindness_game(s, &params, &key, 300, &mut rng);
        println!("{:<8} advantage {:.3}", s.name(), g.advantage());
    }

    let pp = PublicPart::new("ticket", 450).unwrap();
    let (mut views, mut shown) = (Vec::new(), Vec::new());
    for _ in 0..20 {
        let mut m = [0u8; 16];
        rng.fill_bytes(&mut m);
        let issued = Honest.issue(&params, &key, &pp, &SecretMessage(m.to_vec()), &mut rng);
        let Shown::Signature(sig) = issued.shown else { unreachable!() };
        views.push(issued.view);
        shown.push((issued.secret, sig));
    }
    let (pairs, ok) = cross_witness(&params, &key, &pp, &views, &shown);
    println!("witness found for {ok} of {pairs} (view, signature) pairs");
}
