//! Random instances shared by the integration tests and the acceptance run.
#![allow(dead_code)]

use std::collections::HashMap;

use natlab::data::{TokenSeq, EPS, MASK};
use natlab::metrics::{exact_mple_terms, MpleProblem, MpleTerms};
use natlab::proxy_input::{GlatKind, GlatSnapshot, LambdaSchedule, MaskRule};
use natlab::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const ALIGN_VOCAB: usize = 9;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random peaked distributions over a small vocabulary (EPS included), some
/// entries exactly zero so the probability floor is exercised.
pub fn random_dists(rng: &mut ChaCha8Rng, l: usize) -> Vec<Vec<f64>> {
    (0..l)
        .map(|_| {
            let mut d: Vec<f64> = (0..ALIGN_VOCAB)
                .map(|t| {
                    if t < 2 || (t > 2 && t < 5) || rng.gen_bool(0.15) {
                        0.0
                    } else {
                        rng.gen::<f64>().powi(3)
                    }
                })
                .collect();
            if d.iter().sum::<f64>() == 0.0 {
                d[EPS] = 1.0;
            }
            let s: f64 = d.iter().sum();
            d.iter_mut().for_each(|v| *v /= s);
            d
        })
        .collect()
}

pub fn random_ref(rng: &mut ChaCha8Rng, l: usize) -> Vec<usize> {
    (0..l).map(|_| rng.gen_range(5..ALIGN_VOCAB)).collect()
}

pub fn mask_rules() -> Vec<MaskRule> {
    let schedule = LambdaSchedule {
        start: 0.5,
        end: 0.3,
        horizon: 10,
    };
    let mut v = vec![
        MaskRule::Vanilla,
        MaskRule::CmlmUniform,
        MaskRule::CmlmFixed { ratio: 0.2 },
    ];
    for kind in [
        GlatKind::Mismatch,
        GlatKind::Levenshtein,
        GlatKind::PropRef,
        GlatKind::OneMinusPRef,
    ] {
        v.push(MaskRule::Glat { kind, schedule });
    }
    v
}

/// Every way of masking a subset of `t`'s positions.
pub fn patterns(t: &TokenSeq) -> Vec<TokenSeq> {
    (0..1usize << t.len())
        .map(|m| {
            TokenSeq(
                (0..t.len())
                    .map(|i| if m >> i & 1 == 1 { t[i] } else { MASK })
                    .collect(),
            )
        })
        .collect()
}

pub fn random_snapshot(rng: &mut ChaCha8Rng, t: &TokenSeq) -> GlatSnapshot {
    GlatSnapshot {
        argmax: t
            .iter()
            .map(|&x| {
                if rng.gen_bool(0.5) {
                    x
                } else {
                    5 + rng.gen_range(0..4)
                }
            })
            .collect(),
        p_ref: t.iter().map(|_| rng.gen::<f64>()).collect(),
    }
}

fn simplex(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let w: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() + 1e-3).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

fn all_seqs(symbols: &[usize], len: usize) -> Vec<TokenSeq> {
    let mut out = vec![Vec::new()];
    for _ in 0..len {
        out = out
            .into_iter()
            .flat_map(|s: Vec<usize>| symbols.iter().map(move |&t| [s.clone(), vec![t]].concat()))
            .collect();
    }
    out.into_iter().map(TokenSeq).collect()
}

/// An enumerable latent-variable problem with a random data distribution,
/// random decoder and input predictor, and a random joint proxy `Q(Z, T)`.
pub struct MpleCase {
    pub alphabet: Vec<usize>,
    pub len: usize,
    pub data: Vec<(TokenSeq, f64)>,
    pub q: Vec<(TokenSeq, TokenSeq, f64)>,
    pub decoder: HashMap<TokenSeq, Vec<Vec<f64>>>,
    pub input: Vec<Vec<f64>>,
    pub beta: f64,
}

impl MpleCase {
    pub fn random(rng: &mut ChaCha8Rng) -> Self {
        let a = rng.gen_range(2..=3);
        let len = rng.gen_range(1..=2);
        let alphabet: Vec<usize> = (5..5 + a).collect();
        let vocab = 5 + a;
        let ys = all_seqs(&alphabet, len);
        let mut z_symbols = vec![MASK];
        z_symbols.extend(&alphabet);
        let zs = all_seqs(&z_symbols, len);

        let support: Vec<&TokenSeq> = ys.iter().filter(|_| rng.gen_bool(0.6)).collect();
        let support = if support.is_empty() {
            vec![&ys[0]]
        } else {
            support
        };
        let w = simplex(rng, support.len());
        let data = support.into_iter().cloned().zip(w).collect();

        let pairs = rng.gen_range(1..=6);
        let w = simplex(rng, pairs);
        let q = w
            .into_iter()
            .map(|p| {
                (
                    zs[rng.gen_range(0..zs.len())].clone(),
                    ys[rng.gen_range(0..ys.len())].clone(),
                    p,
                )
            })
            .collect();

        let dist = |rng: &mut ChaCha8Rng, ids: &[usize]| {
            let mut d = vec![0.0; vocab];
            for (&t, p) in ids.iter().zip(simplex(rng, ids.len())) {
                d[t] = p;
            }
            d
        };
        let decoder = zs
            .iter()
            .map(|z| (z.clone(), (0..len).map(|_| dist(rng, &alphabet)).collect()))
            .collect();
        let input = (0..len).map(|_| dist(rng, &z_symbols)).collect();
        Self {
            alphabet,
            len,
            data,
            q,
            decoder,
            input,
            beta: rng.gen_range(0.1..3.0),
        }
    }

    pub fn terms(&self) -> Result<MpleTerms> {
        let dec = |z: &TokenSeq| self.decoder[z].clone();
        exact_mple_terms(&MpleProblem {
            alphabet: &self.alphabet,
            len: self.len,
            data: &self.data,
            q: &self.q,
            decoder: &dec,
            input: &self.input,
            beta: self.beta,
        })
    }
}
