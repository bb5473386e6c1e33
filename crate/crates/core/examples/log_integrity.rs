//! A hash-chained device log: any flipped bit breaks verification against
//! the head the clearinghouse was shown.

use blindfare::devicelog::{verify_chain, HashChainLog};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

fn main() {
    let mut rng = ChaCha20Rng::seed_from_u64(5);
    let mut log = HashChainLog::new(&mut rng);
    for (i, kind) in ["checkin", "checkout", "checkin", "checkout"].into_iter().enumerate() {
        log.append(kind, format!("trip {i}").into_bytes(), &mut rng);
    }
    let head = log.head();
    let bytes = log.encode();
    println!("{} entries, {} bytes, verifies: {}", log.len(), bytes.len(), verify_chain(&bytes, &head).is_ok());

    let mut caught = 0;
    for _ in 0..1000 {
        let mut m = bytes.clone();
        let bit = rng.gen_range(0..m.len() * 8);
        m[bit / 8] ^= 1 << (bit % 8);
        caught += verify_chain(&m, &head).is_err() as usize;
    }
    println!("{caught}/1000 single-bit mutations detected");
}
