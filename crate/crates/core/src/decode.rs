//! Inference for the parallel decoder: fully masked decoding, decoding from a
//! sampled input, length scaling, de-duplication, and length-parallel decoding.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{TokenSeq, EPS, MASK, NUM_RESERVED};
use crate::error::{invalid, NatError, Result};
use crate::metrics::nats_to_bits;
use crate::model::{InputPredictor, NatModel};
use crate::proxy_input::round_half_up;

/// How the decoder input is chosen.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DecodeStrategy {
    /// Fully masked input.
    Default,
    /// Input sampled from the input predictor.
    InputSampling,
}

impl DecodeStrategy {
    pub fn name(&self) -> &'static str {
        match self {
            DecodeStrategy::Default => "default",
            DecodeStrategy::InputSampling => "input_sampling",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "default" => Ok(DecodeStrategy::Default),
            "input_sampling" => Ok(DecodeStrategy::InputSampling),
            other => Err(NatError::Config(format!(
                "unknown decoding strategy {other:?}"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DecodeOptions {
    pub strategy: DecodeStrategy,
    /// Multiplies the predicted length; the product is rounded half up.
    pub length_factor: f64,
    /// Collapse adjacent repeated tokens.
    pub dedup: bool,
    /// Seeds the input sampler; each source gets its own stream.
    pub seed: u64,
}

impl Default for DecodeOptions {
    fn default() -> Self {
        Self {
            strategy: DecodeStrategy::Default,
            length_factor: 1.0,
            dedup: false,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Decoded {
    /// Output with EPS removed.
    pub tokens: TokenSeq,
    /// Decoder input used.
    pub z: TokenSeq,
    /// Raw per-position argmax before EPS removal and de-duplication.
    pub positions: TokenSeq,
    /// Mean per-position natural log-probability of `positions` given `z`;
    /// minus infinity for an empty decode so any real candidate outranks it.
    pub mean_logprob: f64,
    /// Mean per-position log-probability of `z` under the input predictor
    /// (zero for the fully masked input, which is chosen deterministically).
    pub z_mean_logprob: f64,
    /// The predicted length was zero and nothing was decoded.
    pub empty: bool,
}

/// `round_half_up(len * factor)`.
pub fn scaled_length(len: usize, factor: f64) -> usize {
    round_half_up(len as f64 * factor)
}

fn argmax_over(d: &[f64], allowed: impl Iterator<Item = usize>) -> usize {
    let mut best = None;
    for t in allowed {
        match best {
            Some(b) if d[t] <= d[b] => {}
            _ => best = Some(t),
        }
    }
    best.expect("non-empty candidate set")
}

/// Collapses runs of the same token.
pub fn dedup(seq: &[usize]) -> Vec<usize> {
    let mut out: Vec<usize> = Vec::with_capacity(seq.len());
    for &t in seq {
        if out.last() != Some(&t) {
            out.push(t);
        }
    }
    out
}

fn source_rng(seed: u64, x: &[usize], len: usize) -> ChaCha8Rng {
    // A stream per (seed, source, length) keeps results independent of batching.
    let mut h: u64 = seed ^ 0x9e37_79b9_7f4a_7c15;
    for &t in x.iter().chain(std::iter::once(&len)) {
        h = (h ^ t as u64).wrapping_mul(0x0100_0000_01b3);
    }
    ChaCha8Rng::seed_from_u64(h)
}

/// Input for length `len`: all MASK, or a sampled mask pattern whose revealed
/// positions hold the frozen model's most likely content token.
fn choose_input(
    nat: &NatModel,
    ip: Option<&InputPredictor>,
    x: &[usize],
    len: usize,
    opts: &DecodeOptions,
) -> Result<(Vec<usize>, f64)> {
    match opts.strategy {
        DecodeStrategy::Default => Ok((vec![MASK; len], 0.0)),
        DecodeStrategy::InputSampling => {
            let ip = ip.expect("checked by the caller");
            let (m, tok) = ip.position_factors(nat, x, len)?;
            let mut rng = source_rng(opts.seed, x, len);
            let vocab = tok[0].len();
            let mut z = Vec::with_capacity(len);
            for i in 0..len {
                if rng.gen::<f64>() < m[i] {
                    z.push(MASK);
                } else {
                    z.push(argmax_over(&tok[i], NUM_RESERVED..vocab));
                }
            }
            let lp = crate::model::factor_logprob(&m, &tok, &z);
            Ok((z, lp / len as f64))
        }
    }
}

fn finish(z: Vec<usize>, dists: &[Vec<f64>], z_lp: f64, dedup_on: bool) -> Decoded {
    let vocab = dists[0].len();
    let positions: Vec<usize> = dists
        .iter()
        .map(|d| argmax_over(d, std::iter::once(EPS).chain(NUM_RESERVED..vocab)))
        .collect();
    let mean_logprob = positions
        .iter()
        .zip(dists)
        .map(|(&t, d)| d[t].ln())
        .sum::<f64>()
        / positions.len() as f64;
    let mut out: Vec<usize> = positions.iter().copied().filter(|&t| t != EPS).collect();
    if dedup_on {
        out = dedup(&out);
    }
    Decoded {
        tokens: TokenSeq(out),
        z: TokenSeq(z),
        positions: TokenSeq(positions),
        mean_logprob,
        z_mean_logprob: z_lp,
        empty: false,
    }
}

fn empty_result() -> Decoded {
    Decoded {
        tokens: TokenSeq(Vec::new()),
        z: TokenSeq(Vec::new()),
        positions: TokenSeq(Vec::new()),
        mean_logprob: f64::NEG_INFINITY,
        z_mean_logprob: 0.0,
        empty: true,
    }
}

/// Decodes at an explicit length for every source.
pub fn decode_at_lengths(
    nat: &NatModel,
    ip: Option<&InputPredictor>,
    xs: &[&[usize]],
    lens: &[usize],
    opts: &DecodeOptions,
) -> Result<Vec<Decoded>> {
    if xs.len() != lens.len() {
        return invalid("one length per source required");
    }
    if opts.strategy == DecodeStrategy::InputSampling && ip.is_none() {
        return invalid("input sampling needs an input predictor");
    }
    let mut inputs = Vec::with_capacity(xs.len());
    for (x, &len) in xs.iter().zip(lens) {
        inputs.push(if len == 0 {
            None
        } else {
            Some(choose_input(nat, ip, x, len, opts)?)
        });
    }
    let items: Vec<(&[usize], &[usize])> = xs
        .iter()
        .zip(&inputs)
        .filter_map(|(x, inp)| inp.as_ref().map(|(z, _)| (*x, z.as_slice())))
        .collect();
    let mut dists = nat.position_probs_batch(&items)?.into_iter();
    Ok(inputs
        .into_iter()
        .map(|inp| match inp {
            None => empty_result(),
            Some((z, lp)) => finish(z, &dists.next().unwrap(), lp, opts.dedup),
        })
        .collect())
}

/// Decodes every source at its predicted length times the length factor.
pub fn decode_batch(
    nat: &NatModel,
    ip: Option<&InputPredictor>,
    xs: &[&[usize]],
    opts: &DecodeOptions,
) -> Result<Vec<Decoded>> {
    let mut lens = Vec::with_capacity(xs.len());
    for x in xs {
        let l = scaled_length(nat.predicted_length(x)?, opts.length_factor);
        lens.push(l.min(nat.dims.max_len));
    }
    decode_at_lengths(nat, ip, xs, &lens, opts)
}

pub fn decode(
    nat: &NatModel,
    ip: Option<&InputPredictor>,
    x: &[usize],
    opts: &DecodeOptions,
) -> Result<Decoded> {
    Ok(decode_batch(nat, ip, &[x], opts)?.remove(0))
}

/// Length-parallel decoding: tries the `n` lengths centred on the predicted
/// one and keeps the output with the best mean log-probability (earlier
/// candidates, starting from the centre, win ties).
pub fn lpd(
    nat: &NatModel,
    ip: Option<&InputPredictor>,
    x: &[usize],
    n: usize,
    opts: &DecodeOptions,
) -> Result<Decoded> {
    if n == 0 || n.is_multiple_of(2) {
        return invalid("length-parallel decoding needs an odd candidate count");
    }
    let centre = scaled_length(nat.predicted_length(x)?, opts.length_factor) as i64;
    let half = (n / 2) as i64;
    let mut lens = vec![centre];
    for d in 1..=half {
        lens.push(centre - d);
        lens.push(centre + d);
    }
    let lens: Vec<usize> = lens
        .into_iter()
        .filter(|&l| l >= 1 && l <= nat.dims.max_len as i64)
        .map(|l| l as usize)
        .collect();
    if lens.is_empty() {
        return Ok(empty_result());
    }
    let xs = vec![x; lens.len()];
    let cands = decode_at_lengths(nat, ip, &xs, &lens, opts)?;
    let mut best = 0;
    for (i, c) in cands.iter().enumerate() {
        if c.mean_logprob > cands[best].mean_logprob {
            best = i;
        }
    }
    Ok(cands.into_iter().nth(best).unwrap())
}

/// Decoding confidence in bits per position: mean log-probability of the
/// chosen input under the input predictor plus that of the chosen output.
pub fn decoding_confidence(
    nat: &NatModel,
    ip: Option<&InputPredictor>,
    x: &[usize],
    opts: &DecodeOptions,
) -> Result<f64> {
    let d = decode(nat, ip, x, opts)?;
    if d.empty {
        return Ok(0.0);
    }
    Ok(nats_to_bits(d.z_mean_logprob + d.mean_logprob))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelDims;

    #[test]
    fn length_factor_rounds_half_up() {
        assert_eq!(scaled_length(20, 1.05), 21);
        assert_eq!(scaled_length(10, 1.05), 11);
        assert_eq!(scaled_length(9, 1.05), 9);
        assert_eq!(scaled_length(7, 1.0), 7);
    }

    #[test]
    fn dedup_collapses_runs() {
        assert_eq!(dedup(&[5, 5, 6, 5, 5, 5, 7]), vec![5, 6, 5, 7]);
    }

    #[test]
    fn outputs_hold_no_special_tokens_and_are_deterministic() {
        let nat = NatModel::new(ModelDims::small(16), true, 2).unwrap();
        let ip = InputPredictor::new(NatModel::new(ModelDims::small(16), false, 3).unwrap());
        for strategy in [DecodeStrategy::Default, DecodeStrategy::InputSampling] {
            let opts = DecodeOptions {
                strategy,
                seed: 9,
                ..Default::default()
            };
            let a = decode(&nat, Some(&ip), &[5, 6, 7, 8], &opts).unwrap();
            let b = decode(&nat, Some(&ip), &[5, 6, 7, 8], &opts).unwrap();
            assert_eq!(a, b);
            assert!(a.tokens.iter().all(|&t| t >= NUM_RESERVED));
        }
    }

    #[test]
    fn lpd_one_is_decode_and_wider_is_no_worse() {
        let nat = NatModel::new(ModelDims::small(16), false, 4).unwrap();
        let opts = DecodeOptions::default();
        let x = [5, 6, 7];
        let d = decode(&nat, None, &x, &opts).unwrap();
        assert_eq!(lpd(&nat, None, &x, 1, &opts).unwrap(), d);
        let mut last = f64::NEG_INFINITY;
        for n in [1, 3, 5] {
            let s = lpd(&nat, None, &x, n, &opts).unwrap().mean_logprob;
            assert!(s >= last);
            last = s;
        }
        assert!(lpd(&nat, None, &x, 2, &opts).is_err());
    }
}
