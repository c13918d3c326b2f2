//! Alignment-based proxy targets: monotonic alignment with a skip penalty,
//! and order-agnostic assignment.

use crate::data::{TokenSeq, EPS};
use crate::error::{invalid, Result};

/// Probabilities are floored here before taking logs.
pub const PROB_FLOOR: f64 = 1e-30;

#[derive(Clone, Debug, PartialEq)]
pub struct AlignResult {
    /// One token per prediction; `EPS` where nothing was aligned.
    pub target: TokenSeq,
    /// Total cost in nats.
    pub cost: f64,
    /// Reference indices aligned to each prediction, in order.
    pub alignment: Vec<Vec<usize>>,
}

fn nlp(dist: &[f64], tok: usize) -> f64 {
    -dist[tok].max(PROB_FLOOR).ln()
}

fn check(pred: &[Vec<f64>], r: &[usize]) -> Result<()> {
    if pred.len() != r.len() {
        return invalid(format!(
            "{} prediction positions for a reference of length {}",
            pred.len(),
            r.len()
        ));
    }
    if let Some(&t) = r.iter().find(|&&t| pred.iter().any(|d| t >= d.len())) {
        return invalid(format!(
            "reference token {t} outside the prediction vocabulary"
        ));
    }
    Ok(())
}

/// Cost of an alignment given as the reference indices attached to each prediction.
pub fn alignment_cost(pred: &[Vec<f64>], r: &[usize], alignment: &[Vec<usize>], delta: f64) -> f64 {
    let mut cost = 0.0;
    for (i, beta) in alignment.iter().enumerate() {
        match beta.split_first() {
            None => cost += nlp(&pred[i], EPS),
            Some((&first, rest)) => {
                cost += nlp(&pred[i], r[first]);
                for &j in rest {
                    cost += delta * nlp(&pred[i], r[j]);
                }
            }
        }
    }
    cost
}

fn target_of(r: &[usize], alignment: &[Vec<usize>]) -> TokenSeq {
    TokenSeq(
        alignment
            .iter()
            .map(|b| b.first().map_or(EPS, |&j| r[j]))
            .collect(),
    )
}

#[derive(Clone, Copy, PartialEq)]
enum Step {
    Start,
    Align,
    SkipPred,
    SkipTarget,
}

/// Minimum-cost monotonic alignment of references to predictions.
///
/// DP over (predictions consumed, references consumed, whether the last
/// prediction has aligned anything). Moves: align (cost `-log P_i(r_j)`),
/// skip a prediction (`-log P_i(EPS)`), or attach one more reference to an
/// already aligned prediction (`-delta log P_i(r_j)`). Ties prefer align, then
/// skip-prediction, then skip-target.
pub fn axe_align(pred: &[Vec<f64>], r: &[usize], delta: f64) -> Result<AlignResult> {
    check(pred, r)?;
    if !(delta >= 0.0) {
        return invalid("skip penalty must be non-negative");
    }
    let (l, m) = (pred.len(), r.len());
    let idx = |i: usize, j: usize, s: usize| (i * (m + 1) + j) * 2 + s;
    let mut cost = vec![f64::INFINITY; (l + 1) * (m + 1) * 2];
    let mut from = vec![(Step::Start, 0usize); cost.len()];
    cost[idx(0, 0, 0)] = 0.0;
    for i in 0..=l {
        for j in 0..=m {
            if i == 0 {
                continue;
            }
            // state s=1: prediction i has aligned at least one reference
            if j > 0 {
                let c_align = nlp(&pred[i - 1], r[j - 1]);
                let (best_prev, s_prev) =
                    if cost[idx(i - 1, j - 1, 0)] <= cost[idx(i - 1, j - 1, 1)] {
                        (cost[idx(i - 1, j - 1, 0)], 0)
                    } else {
                        (cost[idx(i - 1, j - 1, 1)], 1)
                    };
                let mut best = best_prev + c_align;
                let mut step = (Step::Align, s_prev);
                let skip = cost[idx(i, j - 1, 1)] + delta * c_align;
                if skip < best {
                    best = skip;
                    step = (Step::SkipTarget, 1);
                }
                cost[idx(i, j, 1)] = best;
                from[idx(i, j, 1)] = step;
            }
            // state s=0: prediction i emits EPS
            let c_eps = nlp(&pred[i - 1], EPS);
            let (best_prev, s_prev) = if cost[idx(i - 1, j, 0)] <= cost[idx(i - 1, j, 1)] {
                (cost[idx(i - 1, j, 0)], 0)
            } else {
                (cost[idx(i - 1, j, 1)], 1)
            };
            cost[idx(i, j, 0)] = best_prev + c_eps;
            from[idx(i, j, 0)] = (Step::SkipPred, s_prev);
        }
    }
    // Final state: prefer having aligned (s=1) on ties.
    let mut s = if cost[idx(l, m, 1)] <= cost[idx(l, m, 0)] {
        1
    } else {
        0
    };
    let total = cost[idx(l, m, s)];
    let mut alignment = vec![Vec::new(); l];
    let (mut i, mut j) = (l, m);
    while i > 0 {
        let (step, prev_s) = from[idx(i, j, s)];
        match step {
            Step::Align => {
                alignment[i - 1].push(j - 1);
                i -= 1;
                j -= 1;
            }
            Step::SkipTarget => {
                alignment[i - 1].push(j - 1);
                j -= 1;
            }
            Step::SkipPred => i -= 1,
            Step::Start => unreachable!("start reached before consuming predictions"),
        }
        s = prev_s;
    }
    for b in &mut alignment {
        b.reverse();
    }
    Ok(AlignResult {
        target: target_of(r, &alignment),
        cost: total,
        alignment,
    })
}

/// Exhaustive search over non-decreasing maps from references to predictions.
pub fn axe_brute_force(pred: &[Vec<f64>], r: &[usize], delta: f64) -> Result<AlignResult> {
    check(pred, r)?;
    let (l, m) = (pred.len(), r.len());
    let mut best: Option<AlignResult> = None;
    let mut alpha = vec![0usize; m];
    loop {
        let mut alignment = vec![Vec::new(); l];
        for (j, &a) in alpha.iter().enumerate() {
            alignment[a].push(j);
        }
        let c = alignment_cost(pred, r, &alignment, delta);
        if best.as_ref().is_none_or(|b| c < b.cost) {
            best = Some(AlignResult {
                target: target_of(r, &alignment),
                cost: c,
                alignment,
            });
        }
        // next non-decreasing sequence in [0, l)
        let mut k = m;
        loop {
            if k == 0 {
                return Ok(best.unwrap_or(AlignResult {
                    target: TokenSeq(vec![EPS; l]),
                    cost: alignment_cost(pred, r, &vec![Vec::new(); l], delta),
                    alignment: vec![Vec::new(); l],
                }));
            }
            k -= 1;
            if alpha[k] + 1 < l {
                alpha[k] += 1;
                let v = alpha[k];
                for a in alpha.iter_mut().skip(k + 1) {
                    *a = v;
                }
                break;
            }
        }
    }
}

/// Minimum-cost assignment on a square matrix (shortest augmenting paths with
/// potentials). Returns the column assigned to each row.
pub fn hungarian(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    if n == 0 {
        return Vec::new();
    }
    // 1-based arrays; column 0 is a virtual start.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assign = vec![0; n];
    for j in 1..=n {
        if p[j] > 0 {
            assign[p[j] - 1] = j - 1;
        }
    }
    assign
}

fn assignment_cost(cost: &[Vec<f64>], assign: &[usize]) -> f64 {
    assign.iter().enumerate().map(|(i, &j)| cost[i][j]).sum()
}

fn tie_tol(v: f64) -> f64 {
    1e-9 * (1.0 + v.abs())
}

/// Optimal assignment, lexicographically smallest among optimal ones:
/// rows are fixed one at a time to the smallest column that keeps the optimum.
fn lexicographic_assignment(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    let opt = assignment_cost(cost, &hungarian(cost));
    let mut fixed: Vec<usize> = Vec::with_capacity(n);
    let mut fixed_cost = 0.0;
    for i in 0..n {
        let free_cols: Vec<usize> = (0..n).filter(|c| !fixed.contains(c)).collect();
        let mut chosen = None;
        for &c in &free_cols {
            let rest_rows: Vec<usize> = (i + 1..n).collect();
            let rest_cols: Vec<usize> = free_cols.iter().copied().filter(|&x| x != c).collect();
            let sub: Vec<Vec<f64>> = rest_rows
                .iter()
                .map(|&r| rest_cols.iter().map(|&cc| cost[r][cc]).collect())
                .collect();
            let rest = assignment_cost(&sub, &hungarian(&sub));
            let total = fixed_cost + cost[i][c] + rest;
            if total <= opt + tie_tol(opt) {
                chosen = Some(c);
                break;
            }
        }
        // Rounding can in principle reject every column; fall back to the cheapest.
        let c = chosen.unwrap_or_else(|| {
            free_cols
                .iter()
                .copied()
                .min_by(|&a, &b| cost[i][a].total_cmp(&cost[i][b]))
                .unwrap()
        });
        fixed_cost += cost[i][c];
        fixed.push(c);
    }
    fixed
}

fn oaxe_cost_matrix(pred: &[Vec<f64>], r: &[usize]) -> Vec<Vec<f64>> {
    pred.iter()
        .map(|d| r.iter().map(|&t| nlp(d, t)).collect())
        .collect()
}

fn permutation_result(r: &[usize], cost: &[Vec<f64>], assign: Vec<usize>) -> AlignResult {
    AlignResult {
        target: TokenSeq(assign.iter().map(|&j| r[j]).collect()),
        cost: assignment_cost(cost, &assign),
        alignment: assign.into_iter().map(|j| vec![j]).collect(),
    }
}

/// Best permutation of the reference under per-position cross-entropy.
pub fn oaxe_align(pred: &[Vec<f64>], r: &[usize]) -> Result<AlignResult> {
    check(pred, r)?;
    let cost = oaxe_cost_matrix(pred, r);
    let assign = lexicographic_assignment(&cost);
    Ok(permutation_result(r, &cost, assign))
}

/// Exhaustive search over all permutations (lexicographic order, first optimum kept).
pub fn oaxe_brute_force(pred: &[Vec<f64>], r: &[usize]) -> Result<AlignResult> {
    check(pred, r)?;
    let cost = oaxe_cost_matrix(pred, r);
    let n = r.len();
    let mut perm: Vec<usize> = (0..n).collect();
    let mut best = perm.clone();
    let mut best_cost = assignment_cost(&cost, &perm);
    // Lexicographic next_permutation.
    loop {
        let Some(k) = (0..n.saturating_sub(1))
            .rev()
            .find(|&k| perm[k] < perm[k + 1])
        else {
            break;
        };
        let l = (k + 1..n).rev().find(|&l| perm[k] < perm[l]).unwrap();
        perm.swap(k, l);
        perm[k + 1..].reverse();
        let c = assignment_cost(&cost, &perm);
        if c < best_cost - tie_tol(best_cost) {
            best_cost = c;
            best = perm.clone();
        }
    }
    Ok(permutation_result(r, &cost, best))
}

#[cfg(test)]
mod tests {
    use super::*;

    const A: usize = 5;
    const B: usize = 6;

    fn dist(entries: &[(usize, f64)]) -> Vec<f64> {
        let mut d = vec![0.0; 8];
        for &(t, p) in entries {
            d[t] = p;
        }
        d
    }

    #[test]
    fn diagonal_alignment_example() {
        let pred = vec![
            dist(&[(A, 0.9), (EPS, 0.05), (B, 0.05)]),
            dist(&[(B, 0.8), (A, 0.1), (EPS, 0.1)]),
        ];
        let res = axe_align(&pred, &[A, B], 1.0).unwrap();
        assert_eq!(res.target.ids(), &[A, B]);
        assert_eq!(res.alignment, vec![vec![0], vec![1]]);
        let expected = -(0.9f64.ln()) - 0.8f64.ln();
        assert!((res.cost - expected).abs() < 1e-12);
        assert!((res.cost - 0.328_504).abs() < 1e-6);
        let bf = axe_brute_force(&pred, &[A, B], 1.0).unwrap();
        assert!((bf.cost - res.cost).abs() < 1e-12);
    }

    #[test]
    fn dp_cost_matches_reevaluated_alignment() {
        let pred = vec![dist(&[(A, 0.5), (EPS, 0.5)]), dist(&[(EPS, 0.9), (B, 0.1)])];
        for delta in [0.0, 0.5, 1.0, 5.0] {
            let res = axe_align(&pred, &[A, B], delta).unwrap();
            let c = alignment_cost(&pred, &[A, B], &res.alignment, delta);
            assert!((c - res.cost).abs() < 1e-12);
        }
    }

    #[test]
    fn swapped_peaks_are_reordered() {
        let pred = vec![dist(&[(B, 0.9), (A, 0.1)]), dist(&[(A, 0.9), (B, 0.1)])];
        let res = oaxe_align(&pred, &[A, B]).unwrap();
        assert_eq!(res.target.ids(), &[B, A]);
        let single = oaxe_align(&[dist(&[(A, 1.0)])], &[A]).unwrap();
        assert_eq!(single.target.ids(), &[A]);
    }

    #[test]
    fn identity_wins_ties() {
        let pred = vec![dist(&[(A, 0.5), (B, 0.5)]), dist(&[(A, 0.5), (B, 0.5)])];
        let res = oaxe_align(&pred, &[A, B]).unwrap();
        assert_eq!(res.alignment, vec![vec![0], vec![1]]);
    }

    #[test]
    fn length_mismatch_rejected() {
        let pred = vec![dist(&[(A, 1.0)])];
        assert!(axe_align(&pred, &[A, B], 1.0).is_err());
        assert!(oaxe_align(&pred, &[A, B]).is_err());
    }

    #[test]
    fn hungarian_small_matrix() {
        let c = vec![
            vec![4.0, 1.0, 3.0],
            vec![2.0, 0.0, 5.0],
            vec![3.0, 2.0, 2.0],
        ];
        let a = hungarian(&c);
        assert_eq!(assignment_cost(&c, &a), 5.0);
    }
}
