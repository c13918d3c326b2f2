//! Exact information quantities on enumerable conditionals.

use std::collections::{BTreeMap, HashMap};
use std::f64::consts::LN_2;

use crate::data::{CondEntry, EnumerableCond, TokenSeq};
use crate::error::{invalid, Result};

pub const MAX_SUPPORT: usize = 1_000_000;

/// A model whose distribution over length-`len` targets factorises per position.
pub trait ProductModel {
    /// Per-position distributions over the full vocabulary for targets of length `len`.
    fn marginals(&self, x: &TokenSeq, len: usize) -> Result<Vec<Vec<f64>>>;
}

/// Explicit per-(source, length) position tables.
#[derive(Clone, Debug, Default)]
pub struct TableModel {
    pub tables: HashMap<(TokenSeq, usize), Vec<Vec<f64>>>,
}

impl ProductModel for TableModel {
    fn marginals(&self, x: &TokenSeq, len: usize) -> Result<Vec<Vec<f64>>> {
        match self.tables.get(&(x.clone(), len)) {
            Some(t) => Ok(t.clone()),
            None => invalid(format!("no table for source {:?} at length {len}", x.0)),
        }
    }
}

impl TableModel {
    /// The NAT optimum: each position's distribution equals the data marginal
    /// given the source and target length.
    pub fn marginal_matching(cond: &EnumerableCond, vocab_size: usize) -> Self {
        let mut tables = HashMap::new();
        for e in &cond.entries {
            for (len, group) in by_length(e) {
                let mass: f64 = group.iter().map(|(_, p)| p).sum();
                let mut t = vec![vec![0.0; vocab_size]; len];
                for (y, p) in group {
                    for (i, &tok) in y.iter().enumerate() {
                        t[i][tok] += p / mass;
                    }
                }
                tables.insert((e.source.clone(), len), t);
            }
        }
        Self { tables }
    }

    /// Random positive tables for every (source, length) the conditional uses.
    pub fn random<R: rand::Rng>(cond: &EnumerableCond, vocab_size: usize, rng: &mut R) -> Self {
        let mut tables = HashMap::new();
        for e in &cond.entries {
            for len in by_length(e).into_keys() {
                let t = (0..len)
                    .map(|_| {
                        let w: Vec<f64> =
                            (0..vocab_size).map(|_| rng.gen_range(1e-3..1.0)).collect();
                        let z: f64 = w.iter().sum();
                        w.into_iter().map(|v| v / z).collect()
                    })
                    .collect();
                tables.insert((e.source.clone(), len), t);
            }
        }
        Self { tables }
    }
}

fn by_length(e: &CondEntry) -> BTreeMap<usize, Vec<(&TokenSeq, f64)>> {
    let mut m: BTreeMap<usize, Vec<(&TokenSeq, f64)>> = BTreeMap::new();
    for (y, p) in &e.dist {
        m.entry(y.len()).or_default().push((y, *p));
    }
    m
}

fn entropy_bits(ps: impl Iterator<Item = f64>) -> f64 {
    -ps.filter(|&p| p > 0.0).map(|p| p * p.ln()).sum::<f64>() / LN_2
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TcValue {
    pub bits_per_sentence: f64,
    pub bits_per_token: f64,
}

fn check_support(cond: &EnumerableCond) -> Result<()> {
    if cond.support_size() > MAX_SUPPORT {
        return invalid(format!(
            "support of {} sequences exceeds the enumeration limit {MAX_SUPPORT}",
            cond.support_size()
        ));
    }
    Ok(())
}

/// Conditional total correlation `sum_i H(y_i|X) - H(Y|X)`, conditioned on
/// target length and averaged uniformly over sources.
pub fn exact_tc(cond: &EnumerableCond) -> Result<TcValue> {
    check_support(cond)?;
    if cond.entries.is_empty() {
        return invalid("empty conditional");
    }
    let (mut c_total, mut len_total) = (0.0, 0.0);
    for e in &cond.entries {
        for (len, group) in by_length(e) {
            let mass: f64 = group.iter().map(|(_, p)| p).sum();
            let joint = entropy_bits(group.iter().map(|(_, p)| p / mass));
            let mut marginal_sum = 0.0;
            for i in 0..len {
                let mut counts: BTreeMap<usize, f64> = BTreeMap::new();
                for (y, p) in &group {
                    *counts.entry(y[i]).or_insert(0.0) += p / mass;
                }
                marginal_sum += entropy_bits(counts.values().copied());
            }
            c_total += mass * (marginal_sum - joint);
            len_total += mass * len as f64;
        }
    }
    let n = cond.entries.len() as f64;
    let bits_per_sentence = c_total / n;
    let mean_len = len_total / n;
    Ok(TcValue {
        bits_per_sentence,
        bits_per_token: if mean_len > 0.0 {
            bits_per_sentence / mean_len
        } else {
            0.0
        },
    })
}

fn product_prob(table: &[Vec<f64>], y: &[usize]) -> f64 {
    y.iter().enumerate().map(|(i, &t)| table[i][t]).product()
}

/// `KL[P_data(Y|X) || P_model(Y|X)]` in bits per sentence, averaged over sources,
/// with the model evaluated at each data length. Infinite when the model gives a
/// support point zero probability.
pub fn exact_kl(cond: &EnumerableCond, model: &dyn ProductModel) -> Result<f64> {
    check_support(cond)?;
    if cond.entries.is_empty() {
        return invalid("empty conditional");
    }
    let mut total = 0.0;
    for e in &cond.entries {
        for (len, group) in by_length(e) {
            let mass: f64 = group.iter().map(|(_, p)| p).sum();
            let table = model.marginals(&e.source, len)?;
            for (y, p) in group {
                let q = product_prob(&table, y);
                if q <= 0.0 {
                    return Ok(f64::INFINITY);
                }
                // Length is conditioned on, so compare p(Y|X,len) to q(Y|X,len).
                total += p * ((p / mass) / q).ln() / LN_2;
            }
        }
    }
    Ok(total / cond.entries.len() as f64)
}

/// Probability the model puts on sequences outside the data support
/// (mode-mixing outputs), averaged over sources and data lengths.
pub fn invalid_mass(cond: &EnumerableCond, model: &dyn ProductModel) -> Result<f64> {
    let mut total = 0.0;
    for e in &cond.entries {
        for (len, group) in by_length(e) {
            let mass: f64 = group.iter().map(|(_, p)| p).sum();
            let table = model.marginals(&e.source, len)?;
            let valid: f64 = group.iter().map(|(y, _)| product_prob(&table, y)).sum();
            total += mass * (1.0 - valid);
        }
    }
    Ok(total / cond.entries.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::GeneratorSpec;

    fn single(dist: Vec<(Vec<usize>, f64)>) -> EnumerableCond {
        EnumerableCond::new(vec![CondEntry {
            source: TokenSeq(vec![5]),
            dist: dist.into_iter().map(|(y, p)| (TokenSeq(y), p)).collect(),
        }])
        .unwrap()
    }

    #[test]
    fn two_mode_toy_has_one_bit() {
        let cond = GeneratorSpec::two_mode_toy().enumerable().unwrap();
        let tc = exact_tc(&cond).unwrap();
        assert!((tc.bits_per_sentence - 1.0).abs() < 1e-12);
        assert!((tc.bits_per_token - 0.5).abs() < 1e-12);
        let m = TableModel::marginal_matching(&cond, 10);
        assert!((exact_kl(&cond, &m).unwrap() - 1.0).abs() < 1e-12);
        assert!((invalid_mass(&cond, &m).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn one_point_and_product_have_zero_tc() {
        assert_eq!(
            exact_tc(&single(vec![(vec![5, 6], 1.0)]))
                .unwrap()
                .bits_per_sentence,
            0.0
        );
        // P(y1) P(y2) with y1 in {5,6} (0.3/0.7), y2 in {7,8} (0.4/0.6)
        let mut d = Vec::new();
        for (a, pa) in [(5, 0.3), (6, 0.7)] {
            for (b, pb) in [(7, 0.4), (8, 0.6)] {
                d.push((vec![a, b], pa * pb));
            }
        }
        assert!(exact_tc(&single(d)).unwrap().bits_per_sentence.abs() < 1e-12);
    }

    #[test]
    fn zero_model_probability_gives_infinite_kl() {
        let cond = single(vec![(vec![5], 1.0)]);
        let mut m = TableModel::default();
        let mut t = vec![vec![0.0; 8]];
        t[0][6] = 1.0;
        m.tables.insert((TokenSeq(vec![5]), 1), t);
        assert!(exact_kl(&cond, &m).unwrap().is_infinite());
    }

    #[test]
    fn mixed_lengths_condition_on_length() {
        // lengths 1 and 2 each deterministic given length: C = 0
        let cond = single(vec![(vec![5], 0.5), (vec![6, 7], 0.5)]);
        assert!(exact_tc(&cond).unwrap().bits_per_sentence.abs() < 1e-12);
        let m = TableModel::marginal_matching(&cond, 8);
        assert!(exact_kl(&cond, &m).unwrap().abs() < 1e-12);
    }
}
