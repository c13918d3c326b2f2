//! The proxy-likelihood objective computed by full enumeration on tiny
//! fixed-length problems.
//!
//! Latent model: `P(Y|X) = sum_{T,Z} P(Y|T) P(T|Z,X) P(Z|X)` with the BLEU
//! paraphraser `P(Y|T) = exp(beta * S(Y,T)) / zeta(T)` normalised over every
//! length-L sequence of the alphabet.

use std::collections::HashMap;
use std::f64::consts::LN_2;

use super::bleu::sentence_bleu;
use crate::data::{TokenSeq, MASK};
use crate::error::{invalid, Result};

const MAX_ENUM: usize = 2_000_000;

/// Per-position decoder distributions `P(t_i | Z, X)` indexed by vocabulary id.
pub type DecoderFn<'a> = &'a dyn Fn(&TokenSeq) -> Vec<Vec<f64>>;

pub struct MpleProblem<'a> {
    pub alphabet: &'a [usize],
    pub len: usize,
    /// `P_data(Y|X)` over length-`len` sequences of the alphabet.
    pub data: &'a [(TokenSeq, f64)],
    /// Joint proxy `Q(Z, T | X)` as `(Z, T, prob)`.
    pub q: &'a [(TokenSeq, TokenSeq, f64)],
    pub decoder: DecoderFn<'a>,
    /// Per-position input-predictor distributions indexed by vocabulary id (`MASK` included).
    pub input: &'a [Vec<f64>],
    pub beta: f64,
}

/// All terms in bits per sentence.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MpleTerms {
    pub l_nat: f64,
    pub l_target: f64,
    pub l_input: f64,
    /// `l_nat + l_target + l_input`.
    pub mple: f64,
    /// The bound evaluated directly as one expectation of the log-ratio integrand.
    pub integrand: f64,
    /// Exact `-E_data log P(Y|X)` under the latent model.
    pub nll: f64,
}

fn all_sequences(symbols: &[usize], len: usize) -> Vec<TokenSeq> {
    let mut out = vec![TokenSeq(Vec::new())];
    for _ in 0..len {
        out = out
            .into_iter()
            .flat_map(|s| {
                symbols.iter().map(move |&t| {
                    let mut v = s.0.clone();
                    v.push(t);
                    TokenSeq(v)
                })
            })
            .collect();
    }
    out
}

/// Renormalised restriction of per-position distributions to `symbols`.
fn restrict(dists: &[Vec<f64>], symbols: &[usize]) -> Vec<HashMap<usize, f64>> {
    dists
        .iter()
        .map(|d| {
            let s: f64 = symbols.iter().map(|&t| d[t]).sum();
            symbols.iter().map(|&t| (t, d[t] / s)).collect()
        })
        .collect()
}

fn seq_prob(dists: &[HashMap<usize, f64>], seq: &[usize]) -> f64 {
    seq.iter().enumerate().map(|(i, t)| dists[i][t]).product()
}

pub fn exact_mple_terms(p: &MpleProblem) -> Result<MpleTerms> {
    let a = p.alphabet.len();
    let n_seq = a.pow(p.len as u32);
    let n_z = (a + 1).pow(p.len as u32);
    if n_seq.saturating_mul(n_z).saturating_mul(n_seq) > MAX_ENUM {
        return invalid("latent space too large to enumerate");
    }
    if p.data.iter().any(|(y, _)| y.len() != p.len)
        || p.q
            .iter()
            .any(|(z, t, _)| z.len() != p.len || t.len() != p.len)
    {
        return invalid("all sequences must have the problem length");
    }
    if p.input.len() != p.len {
        return invalid("input predictor length mismatch");
    }
    let ys = all_sequences(p.alphabet, p.len);
    let mut z_symbols = vec![MASK];
    z_symbols.extend_from_slice(p.alphabet);
    let zs = all_sequences(&z_symbols, p.len);
    let input = restrict(p.input, &z_symbols);

    // Paraphraser log P(Y|T) for every (Y, T) pair.
    let mut log_para: HashMap<(&TokenSeq, &TokenSeq), f64> = HashMap::new();
    for t in &ys {
        let scores: Vec<f64> = ys.iter().map(|y| p.beta * sentence_bleu(y, t)).collect();
        let log_zeta = scores.iter().map(|s| s.exp()).sum::<f64>().ln();
        for (y, s) in ys.iter().zip(scores) {
            log_para.insert((y, t), s - log_zeta);
        }
    }
    let mut dec_cache: HashMap<&TokenSeq, Vec<HashMap<usize, f64>>> = HashMap::new();
    for z in &zs {
        dec_cache.insert(z, restrict(&(p.decoder)(z), p.alphabet));
    }
    let log_pz = |z: &TokenSeq| seq_prob(&input, z).ln();
    let log_pt = |t: &TokenSeq, z: &TokenSeq| seq_prob(&dec_cache[z], t).ln();

    // Repeated (Z, T) entries are one outcome.
    let mut joint: Vec<(&TokenSeq, &TokenSeq, f64)> = Vec::new();
    for (z, t, w) in p.q {
        match joint.iter_mut().find(|(jz, jt, _)| *jz == z && *jt == t) {
            Some(e) => e.2 += w,
            None => joint.push((z, t, *w)),
        }
    }

    // Proxy marginals and conditionals.
    let mut qz: HashMap<&TokenSeq, f64> = HashMap::new();
    let mut qt: HashMap<&TokenSeq, f64> = HashMap::new();
    for &(z, t, w) in &joint {
        *qz.entry(z).or_insert(0.0) += w;
        *qt.entry(t).or_insert(0.0) += w;
    }
    let q_total: f64 = qz.values().sum();
    if (q_total - 1.0).abs() > 1e-9 {
        return invalid("proxy distribution does not sum to 1");
    }

    let mut l_nat = 0.0;
    let mut l_input = 0.0;
    for (&z, &w) in &qz {
        if w > 0.0 {
            l_input += w * (w.ln() - log_pz(z));
        }
    }
    for &(z, t, w) in &joint {
        if w > 0.0 {
            let q_t_given_z = w / qz[z];
            l_nat += w * (q_t_given_z.ln() - log_pt(t, z));
        }
    }
    let mut l_target = 0.0;
    let mut integrand = 0.0;
    for (y, py) in p.data {
        for (&t, &w) in &qt {
            l_target -= py * w * log_para[&(y, t)];
        }
        for &(z, t, w) in &joint {
            if w > 0.0 {
                let q_t_given_z = w / qz[z];
                let term =
                    log_para[&(y, t)] + log_pt(t, z) - q_t_given_z.ln() + log_pz(z) - qz[z].ln();
                integrand -= py * w * term;
            }
        }
    }

    // Exact likelihood: marginalise every T and Z.
    let mut p_t: HashMap<&TokenSeq, f64> = HashMap::new();
    for z in &zs {
        let pz = seq_prob(&input, z);
        if pz == 0.0 {
            continue;
        }
        for t in &ys {
            *p_t.entry(t).or_insert(0.0) += pz * seq_prob(&dec_cache[z], t);
        }
    }
    let mut nll = 0.0;
    for (y, py) in p.data {
        let py_model: f64 = ys.iter().map(|t| log_para[&(y, t)].exp() * p_t[t]).sum();
        nll -= py * py_model.ln();
    }

    let bits = |v: f64| v / LN_2;
    let (l_nat, l_target, l_input) = (bits(l_nat), bits(l_target), bits(l_input));
    Ok(MpleTerms {
        l_nat,
        l_target,
        l_input,
        mple: l_nat + l_target + l_input,
        integrand: bits(integrand),
        nll: bits(nll),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_point_proxy_collapses_to_plain_terms() {
        let alphabet = [5, 6];
        let y = TokenSeq(vec![5, 6]);
        let z = TokenSeq::masks(2);
        let data = [(y.clone(), 1.0)];
        let q = [(z.clone(), y.clone(), 1.0)];
        let dec = |_: &TokenSeq| vec![vec![0.0, 0.0, 0.0, 0.0, 0.0, 0.7, 0.3]; 2];
        let mut ip = vec![0.0; 7];
        ip[MASK] = 0.6;
        ip[5] = 0.2;
        ip[6] = 0.2;
        let input = vec![ip.clone(), ip];
        let prob = MpleProblem {
            alphabet: &alphabet,
            len: 2,
            data: &data,
            q: &q,
            decoder: &dec,
            input: &input,
            beta: 1.0,
        };
        let terms = exact_mple_terms(&prob).unwrap();
        let l_nat = -(0.7f64 * 0.3).log2();
        let l_input = -(0.36f64).log2();
        assert!((terms.l_nat - l_nat).abs() < 1e-12);
        assert!((terms.l_input - l_input).abs() < 1e-12);
        assert!((terms.mple - terms.integrand).abs() < 1e-9);
        assert!(terms.mple >= terms.nll - 1e-12);
    }

    #[test]
    fn repeated_proxy_entries_merge() {
        let alphabet = [5, 6];
        let data = [(TokenSeq(vec![5]), 0.3), (TokenSeq(vec![6]), 0.7)];
        let (m, a, b) = (TokenSeq::masks(1), TokenSeq(vec![5]), TokenSeq(vec![6]));
        let dec = |_: &TokenSeq| vec![vec![0.0, 0.0, 0.0, 0.0, 0.0, 0.4, 0.6]];
        let mut ip = vec![0.0; 7];
        ip[MASK] = 0.5;
        ip[5] = 0.25;
        ip[6] = 0.25;
        let input = vec![ip];
        let terms = |q: &[(TokenSeq, TokenSeq, f64)]| {
            exact_mple_terms(&MpleProblem {
                alphabet: &alphabet,
                len: 1,
                data: &data,
                q,
                decoder: &dec,
                input: &input,
                beta: 2.0,
            })
            .unwrap()
        };
        let split = terms(&[
            (m.clone(), a.clone(), 0.25),
            (m.clone(), b.clone(), 0.5),
            (m.clone(), a.clone(), 0.25),
        ]);
        let merged = terms(&[(m.clone(), a, 0.5), (m, b, 0.5)]);
        assert!((split.mple - merged.mple).abs() < 1e-12);
        assert!((split.integrand - merged.integrand).abs() < 1e-12);
        assert!(split.mple >= split.nll);
    }
}
