//! BLEU, proxy-likelihood terms, total correlation (exact and estimated),
//! and the metrics record written to logs.

mod bleu;
mod exact;
mod model_terms;
mod mple;
mod record;

pub use crate::train::{estimate_tc, TcEstimate};
pub use bleu::{corpus_bleu, l_target_hat, sentence_bleu};
pub use exact::{exact_kl, exact_tc, invalid_mass, ProductModel, TableModel, TcValue, MAX_SUPPORT};
pub use model_terms::{l_input, l_nat, InputSample, InputTerm, INPUT_LOGPROB_FLOOR};
pub use mple::{exact_mple_terms, DecoderFn, MpleProblem, MpleTerms};
pub use record::{read_jsonl, write_csv, write_jsonl, MetricsRecord};

use crate::error::{invalid, Result};

pub fn nats_to_bits(v: f64) -> f64 {
    v / std::f64::consts::LN_2
}

/// Pearson correlation coefficient.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() || xs.len() < 3 {
        return invalid("pearson needs two equal-length series of at least 3 values");
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return invalid("pearson is undefined for a constant series");
    }
    Ok(sxy / (sxx * syy).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn pearson_on_lines_and_noise() {
        let xs: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let up: Vec<f64> = xs.iter().map(|x| 2.0 * x + 1.0).collect();
        let down: Vec<f64> = xs.iter().map(|x| -x).collect();
        assert!((pearson(&xs, &up).unwrap() - 1.0).abs() < 1e-12);
        assert!((pearson(&xs, &down).unwrap() + 1.0).abs() < 1e-12);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let a: Vec<f64> = (0..1000).map(|_| rng.gen()).collect();
        let b: Vec<f64> = (0..1000).map(|_| rng.gen()).collect();
        assert!(pearson(&a, &b).unwrap().abs() < 0.1);
        assert!(pearson(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]).is_err());
    }
}
