//! Anonymity sets induced by visible credit values: uniform balances up to
//! 100.00 in 10-cent steps, then everyone at one default top-up.

use blindfare::audit::{anonymity_sets, credit_value_count, uniform_population};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

fn main() {
    let mut rng = ChaCha20Rng::seed_from_u64(11);
    println!("possible values: {}", credit_value_count(10_000, 10));
    for users in [10_000, 100_000] {
        let r = anonymity_sets(uniform_population(users, 10_000, 10, &mut rng));
        println!(
            "{users} users: mean per set {:.2}, mean seen by a user {:.2}, smallest {}",
            r.mean_per_set(),
            r.mean_experienced(),
            r.smallest()
        );
    }
    let r = anonymity_sets(vec![2500; 500]);
    println!("all at 25.00: {} set of {}", r.nonempty(), r.largest());
}
