use std::collections::HashMap;

use crate::data::{TokenSeq, EPS};

const MAX_N: usize = 4;
const SMOOTH: f64 = 0.1;

fn ngram_counts(seq: &[usize], n: usize) -> HashMap<&[usize], usize> {
    let mut counts = HashMap::new();
    if seq.len() >= n {
        for w in seq.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

fn strip_eps(seq: &[usize]) -> Vec<usize> {
    seq.iter().copied().filter(|&t| t != EPS).collect()
}

/// Clipped matches and hypothesis n-gram count for each order.
fn match_stats(reference: &[usize], hyp: &[usize]) -> [(usize, usize); MAX_N] {
    let mut out = [(0, 0); MAX_N];
    for (k, slot) in out.iter_mut().enumerate() {
        let n = k + 1;
        let r = ngram_counts(reference, n);
        let h = ngram_counts(hyp, n);
        let m = h
            .iter()
            .map(|(g, &c)| c.min(r.get(g).copied().unwrap_or(0)))
            .sum();
        *slot = (m, hyp.len().saturating_sub(n - 1));
    }
    out
}

/// Smoothed sentence BLEU in [0,1]. A zero match count for order n is
/// replaced by `(0 + 0.1) / (c_n + 0.1)`. EPS tokens are ignored.
pub fn sentence_bleu(reference: &[usize], hyp: &[usize]) -> f64 {
    let reference = strip_eps(reference);
    let hyp = strip_eps(hyp);
    if hyp.is_empty() {
        return 0.0;
    }
    let stats = match_stats(&reference, &hyp);
    let mut log_p = 0.0;
    for (m, c) in stats {
        let p = if m == 0 {
            (m as f64 + SMOOTH) / (c as f64 + SMOOTH)
        } else {
            m as f64 / c as f64
        };
        log_p += p.ln() / MAX_N as f64;
    }
    let (r, c) = (reference.len() as f64, hyp.len() as f64);
    let bp = if c >= r { 1.0 } else { (1.0 - r / c).exp() };
    bp * log_p.exp()
}

/// `-beta` times the mean sentence BLEU of `t` against each reference.
pub fn l_target_hat(refs: &[&TokenSeq], t: &[usize], beta: f64) -> f64 {
    assert!(
        !refs.is_empty(),
        "l_target_hat needs at least one reference"
    );
    let mean = refs.iter().map(|r| sentence_bleu(r, t)).sum::<f64>() / refs.len() as f64;
    -beta * mean
}

/// Unsmoothed corpus BLEU against multiple references, in points (0-100).
/// Matches are clipped by the maximum count over references; the effective
/// reference length is the closest one (shorter wins ties).
pub fn corpus_bleu(hyps: &[TokenSeq], refs: &[Vec<&TokenSeq>]) -> f64 {
    assert_eq!(hyps.len(), refs.len());
    let mut matches = [0usize; MAX_N];
    let mut totals = [0usize; MAX_N];
    let (mut hyp_len, mut ref_len) = (0usize, 0usize);
    for (h, rs) in hyps.iter().zip(refs) {
        let h = strip_eps(h);
        let rs: Vec<Vec<usize>> = rs.iter().map(|r| strip_eps(r)).collect();
        hyp_len += h.len();
        ref_len += rs
            .iter()
            .map(|r| r.len())
            .min_by_key(|&l| ((l as isize - h.len() as isize).abs(), l))
            .unwrap_or(0);
        for k in 0..MAX_N {
            let n = k + 1;
            let hc = ngram_counts(&h, n);
            let rcs: Vec<_> = rs.iter().map(|r| ngram_counts(r, n)).collect();
            for (g, &c) in &hc {
                let max_ref = rcs
                    .iter()
                    .map(|rc| rc.get(g).copied().unwrap_or(0))
                    .max()
                    .unwrap_or(0);
                matches[k] += c.min(max_ref);
            }
            totals[k] += h.len().saturating_sub(n - 1);
        }
    }
    if hyp_len == 0 || matches.contains(&0) {
        return 0.0;
    }
    let log_p: f64 = (0..MAX_N)
        .map(|k| (matches[k] as f64 / totals[k] as f64).ln())
        .sum::<f64>()
        / MAX_N as f64;
    let bp = if hyp_len >= ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    };
    100.0 * bp * log_p.exp()
}
