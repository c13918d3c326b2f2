//! Exact total correlation of the two-mode toy, and the KL floor every
//! product model hits: the marginal-matching model attains it, random ones sit above.

use natlab::data::{gen_two_mode, GeneratorSpec, NUM_RESERVED};
use natlab::metrics::{exact_kl, exact_tc, invalid_mass, TableModel};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> natlab::Result<()> {
    let spec = GeneratorSpec::two_mode_toy();
    let (corpus, cond) = gen_two_mode(&spec, 8, 1)?;
    for (x, y) in &corpus.pairs {
        println!(
            "{}  ->  {}",
            corpus.vocab().decode(x),
            corpus.vocab().decode(y)
        );
    }
    let tc = exact_tc(&cond)?;
    println!(
        "total correlation: {:.4} bits/sentence",
        tc.bits_per_sentence
    );

    let vocab = spec.vocab.size();
    let matched = TableModel::marginal_matching(&cond, vocab);
    println!(
        "marginal matching: KL {:.4}, invalid mass {:.3}",
        exact_kl(&cond, &matched)?,
        invalid_mass(&cond, &matched)?
    );

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for i in 0..3 {
        let m = TableModel::random(&cond, vocab, &mut rng);
        println!("random model {i}: KL {:.4}", exact_kl(&cond, &m)?);
    }
    assert!(vocab > NUM_RESERVED);
    Ok(())
}
