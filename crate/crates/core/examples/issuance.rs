//! One partially blind issuance, step by step, on the 2048-bit group.
//!
//! The signer fixes the public part (a 25.00 credit token); the user's
//! sequence number stays hidden until the token is shown.

use blindfare::crypto::{keygen, GroupParams};
use blindfare::pbs::{self, PublicPart, SecretMessage};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

fn main() {
    let params = GroupParams::production();
    let mut rng = ChaCha20Rng::seed_from_u64(7);
    let key = keygen(&params, &mut rng);
    let pp = PublicPart::new("credit", 2500).unwrap();
    let secret = SecretMessage(b"seqno:0123456789abcdef".to_vec());

    let mut ann = pbs::signer_announce(&params, &pp, &mut rng);
    println!("signer announces for public part {pp}");
    let (challenge, state) = pbs::user_blind(&params, &ann.view, key.public(), &pp, &secret, &mut rng).unwrap();
    println!("user sends a blinded challenge");
    let im = pbs::signer_respond(&params, &mut ann, &key, &challenge.e).unwrap();
    println!("signer answers; announcement consumed: {}", ann.is_consumed());
    let sig = pbs::user_finalize(&params, key.public(), &state, &im).unwrap();
    println!("signature verifies: {}", pbs::verify(&params, key.public(), &pp, &secret, &sig));

    let cheaper = PublicPart::new("credit", 2400).unwrap();
    println!("same signature under 24.00: {}", pbs::verify(&params, key.public(), &cheaper, &secret, &sig));
    println!(
        "second response to the same announcement refused: {}",
        pbs::signer_respond(&params, &mut ann, &key, &challenge.e).is_err()
    );
}
