//! E-step constructors for the proxy input Z: fully masked, CMLM-style random
//! reveals, and GLAT-style reveals sized by the current model's errors.
//! Every sampler also reports the exact log-probability of the pattern it drew.

use rand::seq::index::sample;
use rand::Rng;

use crate::data::{TokenSeq, MASK};
use crate::error::{invalid, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LambdaSchedule {
    pub start: f64,
    pub end: f64,
    /// Steps over which lambda moves linearly from `start` to `end`.
    pub horizon: usize,
}

impl LambdaSchedule {
    pub fn at(&self, step: usize) -> f64 {
        if self.horizon == 0 {
            return self.end;
        }
        let f = (step as f64 / self.horizon as f64).min(1.0);
        self.start + (self.end - self.start) * f
    }
}

impl Default for LambdaSchedule {
    fn default() -> Self {
        Self {
            start: 0.5,
            end: 0.3,
            horizon: 4000,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GlatKind {
    /// Reveal count from positionwise mismatches; positions uniform.
    Mismatch,
    /// Reveal count from edit distance; positions uniform.
    Levenshtein,
    /// Positions drawn proportional to the model's probability of the reference token.
    PropRef,
    /// Positions drawn proportional to one minus that probability.
    OneMinusPRef,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum MaskRule {
    Vanilla,
    CmlmUniform,
    CmlmFixed {
        ratio: f64,
    },
    Glat {
        kind: GlatKind,
        schedule: LambdaSchedule,
    },
}

impl MaskRule {
    pub fn name(&self) -> &'static str {
        match self {
            MaskRule::Vanilla => "vanilla",
            MaskRule::CmlmUniform => "cmlm_uniform",
            MaskRule::CmlmFixed { .. } => "cmlm_fixed",
            MaskRule::Glat { kind, .. } => match kind {
                GlatKind::Mismatch => "glat",
                GlatKind::Levenshtein => "glat_levenshtein",
                GlatKind::PropRef => "glat_pref",
                GlatKind::OneMinusPRef => "glat_one_minus_pref",
            },
        }
    }

    pub fn parse(name: &str, ratio: f64, schedule: LambdaSchedule) -> Result<Self> {
        let glat = |kind| MaskRule::Glat { kind, schedule };
        Ok(match name {
            "vanilla" => MaskRule::Vanilla,
            "cmlm_uniform" | "cmlm" => MaskRule::CmlmUniform,
            "cmlm_fixed" => MaskRule::CmlmFixed { ratio },
            "glat" => glat(GlatKind::Mismatch),
            "glat_levenshtein" => glat(GlatKind::Levenshtein),
            "glat_pref" => glat(GlatKind::PropRef),
            "glat_one_minus_pref" => glat(GlatKind::OneMinusPRef),
            other => return invalid(format!("unknown mask rule {other:?}")),
        })
    }

    pub fn needs_snapshot(&self) -> bool {
        matches!(self, MaskRule::Glat { .. })
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            MaskRule::CmlmFixed { ratio } if !(0.0..=1.0).contains(ratio) => {
                invalid("mask ratio must lie in [0,1]")
            }
            MaskRule::Glat { schedule, .. }
                if !(0.0..=1.0).contains(&schedule.start)
                    || !(0.0..=1.0).contains(&schedule.end) =>
            {
                invalid("lambda must lie in [0,1]")
            }
            _ => Ok(()),
        }
    }
}

/// The current model's fully masked predictions against the proxy target.
#[derive(Clone, Debug, PartialEq)]
pub struct GlatSnapshot {
    pub argmax: Vec<usize>,
    /// Model probability of the target token at each position.
    pub p_ref: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProxyInput {
    pub z: TokenSeq,
    pub log_q: f64,
}

/// Rounds halves up; the epsilon keeps products like `0.3 * 5` on the intended side.
pub fn round_half_up(x: f64) -> usize {
    (x + 0.5 + 1e-9).floor().max(0.0) as usize
}

fn ln_choose(n: usize, k: usize) -> f64 {
    (0..k).map(|i| ((n - i) as f64 / (i + 1) as f64).ln()).sum()
}

/// `P(l = k)` for `l = max(1, round_half_up(lambda * len))`, `lambda ~ U(0,1)`.
fn cmlm_uniform_count_prob(len: usize, k: usize) -> f64 {
    if len == 0 {
        return if k == 0 { 1.0 } else { 0.0 };
    }
    if k == 0 || k > len {
        return 0.0;
    }
    let l = len as f64;
    let hi = ((k as f64 + 0.5) / l).min(1.0);
    let lo = if k == 1 {
        0.0
    } else {
        ((k as f64 - 0.5) / l).max(0.0)
    };
    (hi - lo).max(0.0)
}

fn cmlm_fixed_count(len: usize, ratio: f64) -> usize {
    ((ratio * len as f64 - 1e-9).ceil().max(0.0) as usize).min(len)
}

fn edit_distance(a: &[usize], b: &[usize]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    for (i, x) in a.iter().enumerate() {
        let mut cur = vec![i + 1; b.len() + 1];
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = (prev[j] + usize::from(x != y))
                .min(prev[j + 1] + 1)
                .min(cur[j] + 1);
        }
        prev = cur;
    }
    prev[b.len()]
}

/// Number of tokens GLAT reveals for this snapshot and step.
pub fn glat_reveal_count(
    kind: GlatKind,
    schedule: &LambdaSchedule,
    t: &[usize],
    snap: &GlatSnapshot,
    step: usize,
) -> usize {
    let errors = match kind {
        GlatKind::Levenshtein => edit_distance(&snap.argmax, t),
        _ => snap.argmax.iter().zip(t).filter(|(a, b)| a != b).count(),
    };
    round_half_up(schedule.at(step) * errors as f64).min(t.len())
}

fn glat_weights(kind: GlatKind, snap: &GlatSnapshot) -> Option<Vec<f64>> {
    match kind {
        GlatKind::PropRef => Some(snap.p_ref.iter().map(|p| p.max(1e-12)).collect()),
        GlatKind::OneMinusPRef => Some(snap.p_ref.iter().map(|p| (1.0 - p).max(1e-12)).collect()),
        _ => None,
    }
}

/// Probability that weighted sequential sampling without replacement picks
/// exactly the set `chosen` (summed over all pick orders).
fn weighted_set_logprob(weights: &[f64], chosen: &[usize]) -> f64 {
    let k = chosen.len();
    let total: f64 = weights.iter().sum();
    let mut f = vec![0.0; 1 << k];
    f[0] = 1.0;
    for mask in 1usize..(1 << k) {
        let mut acc = 0.0;
        for b in 0..k {
            if mask >> b & 1 == 1 {
                let prev = mask & !(1 << b);
                let used: f64 = (0..k)
                    .filter(|c| prev >> c & 1 == 1)
                    .map(|c| weights[chosen[c]])
                    .sum();
                acc += f[prev] * weights[chosen[b]] / (total - used);
            }
        }
        f[mask] = acc;
    }
    f[(1 << k) - 1].ln()
}

fn reveal(t: &[usize], positions: &[usize]) -> TokenSeq {
    let mut z = vec![MASK; t.len()];
    for &i in positions {
        z[i] = t[i];
    }
    TokenSeq(z)
}

pub fn vanilla_input(t: &TokenSeq) -> ProxyInput {
    ProxyInput {
        z: TokenSeq::masks(t.len()),
        log_q: 0.0,
    }
}

/// CMLM reveal: `uniform` draws the count as `max(1, round(lambda L))`, otherwise
/// `ceil(ratio L)`; positions uniformly without replacement.
pub fn sample_mask_cmlm<R: Rng>(t: &TokenSeq, rule: &MaskRule, rng: &mut R) -> Result<ProxyInput> {
    let len = t.len();
    if len == 0 {
        return invalid("cannot mask an empty target");
    }
    let count = match rule {
        MaskRule::CmlmUniform => round_half_up(rng.gen::<f64>() * len as f64).clamp(1, len),
        MaskRule::CmlmFixed { ratio } => cmlm_fixed_count(len, *ratio),
        _ => return invalid("sample_mask_cmlm needs a CMLM rule"),
    };
    let positions = sample(rng, len, count).into_vec();
    let z = reveal(t, &positions);
    let log_q = mask_pattern_logprob(rule, &z, t, None, 0)?;
    Ok(ProxyInput { z, log_q })
}

pub fn sample_mask_glat<R: Rng>(
    t: &TokenSeq,
    snap: &GlatSnapshot,
    rule: &MaskRule,
    step: usize,
    rng: &mut R,
) -> Result<ProxyInput> {
    let MaskRule::Glat { kind, schedule } = rule else {
        return invalid("sample_mask_glat needs a GLAT rule");
    };
    if snap.argmax.len() != t.len() || snap.p_ref.len() != t.len() {
        return invalid("snapshot length differs from the target");
    }
    let count = glat_reveal_count(*kind, schedule, t, snap, step);
    let positions = match glat_weights(*kind, snap) {
        None => sample(rng, t.len(), count).into_vec(),
        Some(mut w) => {
            let mut picked = Vec::with_capacity(count);
            for _ in 0..count {
                let total: f64 = w.iter().sum();
                let mut u = rng.gen::<f64>() * total;
                let mut pick = w.iter().rposition(|&x| x > 0.0).unwrap_or(0);
                for (i, &x) in w.iter().enumerate() {
                    if x > 0.0 && u < x {
                        pick = i;
                        break;
                    }
                    u -= x;
                }
                picked.push(pick);
                w[pick] = 0.0;
            }
            picked
        }
    };
    let z = reveal(t, &positions);
    let log_q = mask_pattern_logprob(rule, &z, t, Some(snap), step)?;
    Ok(ProxyInput { z, log_q })
}

/// Dispatches to the sampler for `rule`.
pub fn sample_input<R: Rng>(
    rule: &MaskRule,
    t: &TokenSeq,
    snap: Option<&GlatSnapshot>,
    step: usize,
    rng: &mut R,
) -> Result<ProxyInput> {
    match rule {
        MaskRule::Vanilla => Ok(vanilla_input(t)),
        MaskRule::CmlmUniform | MaskRule::CmlmFixed { .. } => sample_mask_cmlm(t, rule, rng),
        MaskRule::Glat { .. } => match snap {
            Some(s) => sample_mask_glat(t, s, rule, step, rng),
            None => invalid("GLAT needs a model snapshot"),
        },
    }
}

/// Exact `log Q(Z | T, X)` of a reveal pattern under `rule`; `-inf` outside the
/// rule's support.
pub fn mask_pattern_logprob(
    rule: &MaskRule,
    z: &TokenSeq,
    t: &TokenSeq,
    snap: Option<&GlatSnapshot>,
    step: usize,
) -> Result<f64> {
    if z.len() != t.len() {
        return invalid("proxy input and target lengths differ");
    }
    let revealed: Vec<usize> = (0..z.len()).filter(|&i| z[i] != MASK).collect();
    if revealed.iter().any(|&i| z[i] != t[i]) {
        return invalid("revealed input token differs from the target");
    }
    let len = t.len();
    let k = revealed.len();
    let uniform = |count: usize, p_count: f64| {
        if k != count || p_count == 0.0 {
            f64::NEG_INFINITY
        } else {
            p_count.ln() - ln_choose(len, k)
        }
    };
    Ok(match rule {
        MaskRule::Vanilla => {
            if k == 0 {
                0.0
            } else {
                f64::NEG_INFINITY
            }
        }
        MaskRule::CmlmUniform => {
            let p = cmlm_uniform_count_prob(len, k);
            if p == 0.0 {
                f64::NEG_INFINITY
            } else {
                p.ln() - ln_choose(len, k)
            }
        }
        MaskRule::CmlmFixed { ratio } => uniform(cmlm_fixed_count(len, *ratio), 1.0),
        MaskRule::Glat { kind, schedule } => {
            let Some(snap) = snap else {
                return invalid("GLAT pattern probability needs a snapshot");
            };
            if snap.argmax.len() != len || snap.p_ref.len() != len {
                return invalid("snapshot length differs from the target");
            }
            let count = glat_reveal_count(*kind, schedule, t, snap, step);
            if k != count {
                f64::NEG_INFINITY
            } else {
                match glat_weights(*kind, snap) {
                    None => -ln_choose(len, k),
                    Some(w) => weighted_set_logprob(&w, &revealed),
                }
            }
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn t(len: usize) -> TokenSeq {
        TokenSeq((5..5 + len).collect())
    }

    #[test]
    fn vanilla_masks_everything() {
        let p = vanilla_input(&t(4));
        assert_eq!(p.z, TokenSeq::masks(4));
        assert_eq!(p.log_q, 0.0);
    }

    #[test]
    fn fixed_ratio_reveals_ceiling() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = sample_mask_cmlm(&t(10), &MaskRule::CmlmFixed { ratio: 0.2 }, &mut rng).unwrap();
        assert_eq!(p.z.iter().filter(|&&x| x != MASK).count(), 2);
        assert!((p.log_q + ln_choose(10, 2)).abs() < 1e-12);
    }

    #[test]
    fn uniform_mean_reveal_fraction() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 10_000;
        let revealed: usize = (0..n)
            .map(|_| {
                let p = sample_mask_cmlm(&t(10), &MaskRule::CmlmUniform, &mut rng).unwrap();
                p.z.iter().filter(|&&x| x != MASK).count()
            })
            .sum();
        let frac = revealed as f64 / (10.0 * n as f64);
        assert!((frac - 0.5).abs() < 0.02, "{frac}");
    }

    #[test]
    fn length_one_reveals_the_token() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = sample_mask_cmlm(&t(1), &MaskRule::CmlmUniform, &mut rng).unwrap();
        assert_eq!(p.z, t(1));
        assert_eq!(p.log_q, 0.0);
    }

    #[test]
    fn two_token_uniform_pattern() {
        // P(l=1) = 0.75 for L = 2, spread over C(2,1) = 2 patterns.
        let z = TokenSeq(vec![5, MASK]);
        let lq = mask_pattern_logprob(&MaskRule::CmlmUniform, &z, &t(2), None, 0).unwrap();
        assert!((lq - (0.75f64 / 2.0).ln()).abs() < 1e-12);
    }

    #[test]
    fn glat_counts() {
        let rule = MaskRule::Glat {
            kind: GlatKind::Mismatch,
            schedule: LambdaSchedule::default(),
        };
        let target = t(8);
        let perfect = GlatSnapshot {
            argmax: target.0.clone(),
            p_ref: vec![0.9; 8],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = sample_mask_glat(&target, &perfect, &rule, 0, &mut rng).unwrap();
        assert_eq!(p.z, TokenSeq::masks(8));
        let wrong = GlatSnapshot {
            argmax: vec![20; 8],
            p_ref: vec![0.1; 8],
        };
        let p = sample_mask_glat(&target, &wrong, &rule, 0, &mut rng).unwrap();
        assert_eq!(p.z.iter().filter(|&&x| x != MASK).count(), 4);
        let sched = LambdaSchedule::default();
        assert_eq!(sched.at(0), 0.5);
        assert!((sched.at(sched.horizon) - 0.3).abs() < 1e-12);
    }

    #[test]
    fn inconsistent_pattern_rejected() {
        let z = TokenSeq(vec![6, MASK]);
        assert!(mask_pattern_logprob(&MaskRule::CmlmUniform, &z, &t(2), None, 0).is_err());
    }
}
