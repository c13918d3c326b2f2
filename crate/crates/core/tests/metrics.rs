use natlab::data::{gen_two_mode, EnumerableCond, GeneratorSpec, TokenSeq, NUM_RESERVED};
use natlab::metrics::{
    corpus_bleu, exact_kl, exact_tc, invalid_mass, pearson, read_jsonl, sentence_bleu, write_jsonl,
    MetricsRecord, TableModel,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Mean product of z-scores (population standard deviations).
fn pearson_oracle(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let z = |v: &[f64]| {
        let m = v.iter().sum::<f64>() / n;
        let sd = (v.iter().map(|a| (a - m).powi(2)).sum::<f64>() / n).sqrt();
        v.iter().map(|a| (a - m) / sd).collect::<Vec<_>>()
    };
    z(x).iter().zip(z(y)).map(|(a, b)| a * b).sum::<f64>() / n
}

#[test]
fn two_mode_toy_has_one_bit_and_half_invalid_mass() {
    let spec = GeneratorSpec::two_mode_toy();
    let (_, cond) = gen_two_mode(&spec, 4, 1).unwrap();
    let tc = exact_tc(&cond).unwrap();
    assert!((tc.bits_per_sentence - 1.0).abs() < 1e-12);
    assert!((tc.bits_per_token - 0.5).abs() < 1e-12);
    let m = TableModel::marginal_matching(&cond, spec.vocab.size());
    assert!((exact_kl(&cond, &m).unwrap() - 1.0).abs() < 1e-12);
    assert!((invalid_mass(&cond, &m).unwrap() - 0.5).abs() < 1e-12);
}

#[test]
fn bleu_extremes() {
    let r = TokenSeq((5..17).collect());
    assert!((sentence_bleu(&r, &r) - 1.0).abs() < 1e-12);
    let disjoint = TokenSeq((20..32).collect());
    assert!(sentence_bleu(&r, &disjoint) < 0.01);
    assert!((corpus_bleu(std::slice::from_ref(&r), &[vec![&r]]) - 100.0).abs() < 1e-9);
}

#[test]
fn jsonl_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.jsonl");
    let mut a = MetricsRecord::new("kd", 3, 100, 0.5, 0.0, -0.1, 71.25);
    a.c_hat = Some(0.8);
    let recs = vec![a, MetricsRecord::new("raw", 3, 200, 1.1, 0.2, -0.05, 40.0)];
    write_jsonl(&recs, &path).unwrap();
    assert_eq!(read_jsonl(&path).unwrap(), recs);
}

proptest! {
    #[test]
    fn pearson_matches_the_two_pass_formula(pts in prop::collection::vec((-50.0f64..50.0, -50.0f64..50.0), 3..30)) {
        let (x, y): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
        let oracle = pearson_oracle(&x, &y);
        prop_assume!(oracle.is_finite());
        let r = pearson(&x, &y).unwrap();
        prop_assert!((r - oracle).abs() < 1e-9);
        prop_assert!(r.abs() <= 1.0 + 1e-12);
    }

    #[test]
    fn product_models_never_beat_the_total_correlation(seed in any::<u64>(), mix in 0.0f64..1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let content = rng.gen_range(2..=6);
        let cond = EnumerableCond::random(&mut rng, content.min(3), 3, content, 4).unwrap();
        let vocab = content + NUM_RESERVED;
        let tc = exact_tc(&cond).unwrap().bits_per_sentence;
        let matched = TableModel::marginal_matching(&cond, vocab);
        prop_assert!((exact_kl(&cond, &matched).unwrap() - tc).abs() < 1e-6);
        // Blend the optimum with a random model to probe near the floor.
        let mut m = TableModel::random(&cond, vocab, &mut rng);
        for (key, table) in m.tables.iter_mut() {
            for (row, best) in table.iter_mut().zip(&matched.tables[key]) {
                for (p, q) in row.iter_mut().zip(best) {
                    *p = mix * *p + (1.0 - mix) * q;
                }
            }
        }
        prop_assert!(exact_kl(&cond, &m).unwrap() >= tc - 1e-9);
    }
}
