//! Per-sample choice among raw and distilled targets.

use crate::data::TokenSeq;
use crate::error::{invalid, Result};
use crate::metrics::sentence_bleu;

/// Raw target plus one distilled target per teacher tier, with their pairwise
/// sentence BLEU (`bleu[i][k] = S(candidates[i], candidates[k])`).
#[derive(Clone, Debug, PartialEq)]
pub struct CandidateSet {
    pub candidates: Vec<TokenSeq>,
    pub bleu: Vec<Vec<f64>>,
}

impl CandidateSet {
    pub fn new(candidates: Vec<TokenSeq>) -> Result<Self> {
        if candidates.is_empty() {
            return invalid("empty candidate set");
        }
        let bleu = candidates
            .iter()
            .map(|r| candidates.iter().map(|t| sentence_bleu(r, t)).collect())
            .collect();
        Ok(Self { candidates, bleu })
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    /// `-beta * sum_i gamma_i S(candidate_i, candidate_k)`.
    pub fn target_regularizer(&self, k: usize, beta: f64, gamma: &[f64]) -> f64 {
        -beta
            * (0..self.len())
                .map(|i| gamma[i] * self.bleu[i][k])
                .sum::<f64>()
    }
}

fn argmin(scores: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::INFINITY);
    for (i, s) in scores.enumerate() {
        if s < best.1 {
            best = (i, s);
        }
    }
    best.0
}

/// Index of the candidate minimising `nll[k] + target_regularizer(k)`, where
/// `nll[k]` is the NAT's per-token NLL of candidate `k` under a fully masked input.
/// Ties keep the earliest candidate.
pub fn dynamic_kd_select(
    set: &CandidateSet,
    nll: &[f64],
    beta: f64,
    gamma: &[f64],
) -> Result<usize> {
    if nll.len() != set.len() || gamma.len() != set.len() {
        return invalid("nll and gamma must have one entry per candidate");
    }
    Ok(argmin(
        (0..set.len()).map(|k| nll[k] + set.target_regularizer(k, beta, gamma)),
    ))
}

/// Weight search on a dev set with references: picks, coordinate by coordinate
/// over `grid`, the weights whose regularizer-only selection has the best mean
/// BLEU against the references. Ties go to the smaller grid value.
pub fn tune_gamma(dev: &[CandidateSet], refs: &[Vec<TokenSeq>], grid: &[f64]) -> Result<Vec<f64>> {
    if dev.is_empty() || dev.len() != refs.len() || refs.iter().any(|r| r.is_empty()) {
        return invalid("tune_gamma needs references for every dev example");
    }
    if grid.is_empty() {
        return invalid("empty gamma grid");
    }
    let k = dev[0].len();
    if dev.iter().any(|s| s.len() != k) {
        return invalid("every dev example needs the same number of candidates");
    }
    let grid_min = grid.iter().copied().fold(f64::INFINITY, f64::min);
    let mut sorted_grid = grid.to_vec();
    sorted_grid.sort_by(f64::total_cmp);

    // Per example and candidate: mean BLEU against the references.
    let quality: Vec<Vec<f64>> = dev
        .iter()
        .zip(refs)
        .map(|(set, rs)| {
            set.candidates
                .iter()
                .map(|t| rs.iter().map(|r| sentence_bleu(r, t)).sum::<f64>() / rs.len() as f64)
                .collect()
        })
        .collect();
    // True L_target (beta = 1) of the weights' selections.
    let objective = |gamma: &[f64]| -> f64 {
        let mut total = 0.0;
        for (set, q) in dev.iter().zip(&quality) {
            let pick = argmin((0..k).map(|c| set.target_regularizer(c, 1.0, gamma)));
            total -= q[pick];
        }
        total / dev.len() as f64
    };

    let mut gamma = vec![grid_min; k];
    let mut current = objective(&gamma);
    for _pass in 0..10 {
        let mut changed = false;
        for c in 0..k {
            let mut best = (gamma[c], current);
            for &g in &sorted_grid {
                let mut trial = gamma.clone();
                trial[c] = g;
                let v = objective(&trial);
                if v < best.1 - 1e-12 || (v <= best.1 + 1e-12 && g < best.0 && v <= current + 1e-12)
                {
                    best = (g, v);
                }
            }
            if best.0 != gamma[c] {
                gamma[c] = best.0;
                current = best.1;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    Ok(gamma)
}

/// The weight grid searched by default: 0.5 to 3.0 in steps of 0.1.
pub fn default_gamma_grid() -> Vec<f64> {
    (5..=30).map(|i| i as f64 / 10.0).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(v: &[usize]) -> TokenSeq {
        TokenSeq(v.to_vec())
    }

    #[test]
    fn single_candidate_is_selected_and_grid_minimum_returned() {
        let set = CandidateSet::new(vec![seq(&[5, 6])]).unwrap();
        assert_eq!(dynamic_kd_select(&set, &[3.0], 0.2, &[1.0]).unwrap(), 0);
        let g = tune_gamma(&[set], &[vec![seq(&[5, 6])]], &default_gamma_grid()).unwrap();
        assert_eq!(g, vec![0.5]);
    }

    #[test]
    fn zero_beta_is_pure_nll_argmin() {
        let set = CandidateSet::new(vec![seq(&[5, 6]), seq(&[7, 8]), seq(&[5, 8])]).unwrap();
        assert_eq!(
            dynamic_kd_select(&set, &[2.0, 1.0, 1.5], 0.0, &[1.0; 3]).unwrap(),
            1
        );
    }

    #[test]
    fn empty_set_rejected() {
        assert!(CandidateSet::new(Vec::new()).is_err());
    }

    #[test]
    fn tuning_favours_the_candidate_matching_references() {
        // candidate 2 equals every reference; candidates 0 and 1 agree with each other
        let a = seq(&[5, 6, 7, 8, 9]);
        let b = seq(&[5, 6, 7, 8, 10]);
        let good = seq(&[11, 12, 13, 14, 15]);
        let set = CandidateSet::new(vec![a, b, good.clone()]).unwrap();
        let dev = vec![set.clone(); 3];
        let refs = vec![vec![good.clone(), good.clone()]; 3];
        let g = tune_gamma(&dev, &refs, &default_gamma_grid()).unwrap();
        let pick = dynamic_kd_select(&set, &[0.0; 3], 1.0, &g).unwrap();
        assert_eq!(set.candidates[pick], good);
    }
}
