//! Proxy-likelihood terms measured with trained models.

use crate::data::TokenSeq;
use crate::error::{invalid, Result};
use crate::model::{factor_logprob, InputPredictor, NatExample, NatModel};

use super::nats_to_bits;

/// Per-position floor (nats) applied to `log P(z_i|X)` when the predictor
/// gives a sampled input zero probability.
pub const INPUT_LOGPROB_FLOOR: f64 = -30.0;

const CHUNK: usize = 64;

/// Mean over all target positions of `-log2 P(t_i|Z,X)`.
pub fn l_nat(nat: &NatModel, proxied: &[NatExample]) -> Result<f64> {
    if proxied.is_empty() {
        return invalid("l_nat needs proxied pairs");
    }
    let (mut total, mut count) = (0.0, 0usize);
    for chunk in proxied.chunks(CHUNK) {
        let items: Vec<(&[usize], &[usize])> = chunk.iter().map(|e| (&e.x[..], &e.z[..])).collect();
        for (e, d) in chunk.iter().zip(nat.position_probs_batch(&items)?) {
            if e.z.len() != e.t.len() {
                return invalid("proxy input and target lengths differ");
            }
            for (&t, row) in e.t.iter().zip(&d) {
                total -= row[t].ln();
                count += 1;
            }
        }
    }
    Ok(nats_to_bits(total / count as f64))
}

/// One sampled input with its exact log-probability under the proxy rule.
#[derive(Clone, Debug, PartialEq)]
pub struct InputSample {
    pub x: TokenSeq,
    pub z: TokenSeq,
    pub log_q: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InputTerm {
    /// Mean of `(log Q(Z|T,X) - log P(Z|X)) / |Z|`, bits.
    pub bits_per_token: f64,
    /// Samples whose predictor probability was zero at some position.
    pub flagged: usize,
}

/// Monte-Carlo estimate of `KL[Q(Z|X) || P(Z|X)]` per token.
pub fn l_input(nat: &NatModel, ip: &InputPredictor, samples: &[InputSample]) -> Result<InputTerm> {
    if samples.is_empty() {
        return invalid("l_input needs samples");
    }
    let mut total = 0.0;
    let mut flagged = 0;
    // Samples of one source and length share predictor factors.
    let mut cache: Option<(TokenSeq, usize, Vec<f64>, Vec<Vec<f64>>)> = None;
    for s in samples {
        let len = s.z.len();
        if len == 0 {
            return invalid("empty proxy input");
        }
        let hit = matches!(&cache, Some((x, l, _, _)) if *x == s.x && *l == len);
        if !hit {
            let (m, tok) = ip.position_factors(nat, &s.x, len)?;
            cache = Some((s.x.clone(), len, m, tok));
        }
        let (_, _, m, tok) = cache.as_ref().unwrap();
        let mut lp = 0.0;
        let mut floored = false;
        for i in 0..len {
            let v = factor_logprob(&m[i..=i], &tok[i..=i], &s.z[i..=i]);
            if v < INPUT_LOGPROB_FLOOR || v.is_nan() {
                floored = true;
                lp += INPUT_LOGPROB_FLOOR;
            } else {
                lp += v;
            }
        }
        flagged += floored as usize;
        total += (s.log_q - lp) / len as f64;
    }
    Ok(InputTerm {
        bits_per_token: nats_to_bits(total / samples.len() as f64),
        flagged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::MASK;
    use crate::model::ModelDims;

    #[test]
    fn copy_identity_gives_zero() {
        let nat = NatModel::new(ModelDims::small(16), true, 1).unwrap();
        let t = TokenSeq(vec![5, 6, 7]);
        let ex = NatExample {
            x: TokenSeq(vec![8, 9]),
            z: t.clone(),
            t,
        };
        assert_eq!(l_nat(&nat, &[ex]).unwrap(), 0.0);
    }

    #[test]
    fn untrained_model_costs_about_log_vocab() {
        let nat = NatModel::new(ModelDims::small(32), false, 1).unwrap();
        let ex = NatExample {
            x: TokenSeq(vec![8, 9]),
            z: TokenSeq(vec![MASK; 4]),
            t: TokenSeq(vec![5, 6, 7, 8]),
        };
        let v = l_nat(&nat, &[ex]).unwrap();
        assert!((v - 5.0).abs() < 0.3, "{v}");
    }

    #[test]
    fn input_term_matches_direct_formula() {
        let nat = NatModel::new(ModelDims::small(16), true, 1).unwrap();
        let ip = InputPredictor::new(NatModel::new(ModelDims::small(16), false, 2).unwrap());
        let x = TokenSeq(vec![5, 6]);
        let z = TokenSeq(vec![MASK, 7, MASK]);
        let lp = crate::model::input_predictor_logprob(&nat, &ip, &x, &z).unwrap();
        let s = InputSample { x, z, log_q: -1.0 };
        let got = l_input(&nat, &ip, &[s]).unwrap();
        assert!((got.bits_per_token - nats_to_bits((-1.0 - lp) / 3.0)).abs() < 1e-12);
        assert_eq!(got.flagged, 0);
    }
}
