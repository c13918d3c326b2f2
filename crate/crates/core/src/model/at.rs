//! Left-to-right teacher model.

use natlab_compute::{ParamStore, Tape, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::transformer::{init_seq2seq, spans, Ctx, ModelDims};
use crate::data::{TokenSeq, BOS, EOS, NUM_RESERVED};
use crate::error::{invalid, Result};

#[derive(Clone, Debug)]
pub struct AtModel {
    pub dims: ModelDims,
    pub params: ParamStore,
    pub seed: u64,
    pub step: u64,
}

/// Teacher-forced scores of one target, in nats. `token_logprobs` covers the
/// target tokens only; the end-of-sentence decision is reported separately.
#[derive(Clone, Debug, PartialEq)]
pub struct AtScore {
    pub token_logprobs: Vec<f64>,
    pub sum: f64,
    pub eos_logprob: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BeamHypothesis {
    pub tokens: TokenSeq,
    /// Log-probability including the end-of-sentence step, in nats.
    pub logprob: f64,
    /// `logprob / (len + 1)^alpha`.
    pub score: f64,
    /// No end-of-sentence within the length limit.
    pub truncated: bool,
}

/// Loss and gradients for one optimisation step.
#[derive(Clone, Debug)]
pub struct BatchGrads {
    /// Mean per-token cross-entropy (with label smoothing), nats.
    pub loss: f64,
    pub tokens: usize,
    pub grads: Vec<Tensor>,
}

impl AtModel {
    pub fn new(dims: ModelDims, seed: u64) -> Result<Self> {
        dims.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        init_seq2seq(&mut params, &dims, &mut rng);
        Ok(Self {
            dims,
            params,
            seed,
            step: 0,
        })
    }

    fn check(&self, x: &[usize], y_len: usize) -> Result<()> {
        if x.is_empty() || x.len() > self.dims.max_len {
            return invalid(format!(
                "source length {} outside 1..={}",
                x.len(),
                self.dims.max_len
            ));
        }
        if y_len + 1 > self.dims.max_len {
            return invalid(format!(
                "target length {y_len} exceeds model maximum {}",
                self.dims.max_len - 1
            ));
        }
        if x.iter().any(|&t| t >= self.dims.vocab) {
            return invalid("source token outside vocabulary");
        }
        Ok(())
    }

    /// Output logits for stacked teacher-forced decoder inputs `[BOS, prefix...]`.
    fn logits(
        &self,
        ctx: &mut Ctx,
        xs: &[&[usize]],
        dec_in: &[Vec<usize>],
    ) -> Result<natlab_compute::NodeId> {
        let (enc, enc_spans) = ctx.encode(&self.dims, xs)?;
        let refs: Vec<&[usize]> = dec_in.iter().map(|v| v.as_slice()).collect();
        let h = ctx.embed(&refs)?;
        let dec_spans = spans(dec_in.iter().map(|v| v.len()));
        let h = ctx.decode(&self.dims, h, &dec_spans, enc, &enc_spans, true)?;
        ctx.linear(h, "out")
    }

    /// Cross-entropy over `[y..., EOS]` for each pair, averaged over tokens.
    pub fn batch_grads(
        &self,
        pairs: &[(&[usize], &[usize])],
        smoothing: f64,
    ) -> Result<BatchGrads> {
        if pairs.is_empty() {
            return invalid("empty batch");
        }
        for (x, y) in pairs {
            self.check(x, y.len())?;
        }
        let mut tape = Tape::new();
        let mut ctx = Ctx::new(&mut tape, &self.params, true);
        let xs: Vec<&[usize]> = pairs.iter().map(|p| p.0).collect();
        let dec_in: Vec<Vec<usize>> = pairs
            .iter()
            .map(|(_, y)| std::iter::once(BOS).chain(y.iter().copied()).collect())
            .collect();
        let logits = self.logits(&mut ctx, &xs, &dec_in)?;
        let targets: Vec<usize> = pairs
            .iter()
            .flat_map(|(_, y)| y.iter().copied().chain(std::iter::once(EOS)))
            .collect();
        let n = targets.len();
        let loss = ctx
            .tape
            .cross_entropy(logits, targets, vec![1.0 / n as f64; n], smoothing)?;
        let value = ctx.tape.value(loss).item();
        let mut grads = ctx.tape.backward(loss)?;
        let grads = ctx.bound().collect(&mut grads, &self.params);
        Ok(BatchGrads {
            loss: value,
            tokens: n,
            grads,
        })
    }

    /// Log-softmax rows for each pair's `[y..., EOS]` targets.
    fn score_rows(&self, pairs: &[(&[usize], &[usize])]) -> Result<Vec<Vec<Vec<f64>>>> {
        let mut tape = Tape::new();
        let mut ctx = Ctx::new(&mut tape, &self.params, false);
        let xs: Vec<&[usize]> = pairs.iter().map(|p| p.0).collect();
        let dec_in: Vec<Vec<usize>> = pairs
            .iter()
            .map(|(_, y)| std::iter::once(BOS).chain(y.iter().copied()).collect())
            .collect();
        let logits = self.logits(&mut ctx, &xs, &dec_in)?;
        let lp = ctx.tape.log_softmax(logits)?;
        let t = ctx.tape.value(lp);
        let mut out = Vec::with_capacity(pairs.len());
        let mut row = 0;
        for d in &dec_in {
            out.push((row..row + d.len()).map(|r| t.row(r).to_vec()).collect());
            row += d.len();
        }
        Ok(out)
    }

    /// Teacher-forced scores for a batch of pairs.
    pub fn score_batch(&self, pairs: &[(&[usize], &[usize])]) -> Result<Vec<AtScore>> {
        for (x, y) in pairs {
            if y.is_empty() {
                return invalid("at_logprob needs a non-empty target");
            }
            self.check(x, y.len())?;
        }
        if pairs.is_empty() {
            return Ok(Vec::new());
        }
        let rows = self.score_rows(pairs)?;
        Ok(pairs
            .iter()
            .zip(rows)
            .map(|((_, y), rows)| {
                let token_logprobs: Vec<f64> =
                    y.iter().enumerate().map(|(i, &t)| rows[i][t]).collect();
                let sum = token_logprobs.iter().sum();
                AtScore {
                    token_logprobs,
                    sum,
                    eos_logprob: rows[y.len()][EOS],
                }
            })
            .collect())
    }

    /// Next-token log-probabilities after each prefix (stacked, one source).
    fn next_logprobs(&self, x: &[usize], prefixes: &[Vec<usize>]) -> Result<Vec<Vec<f64>>> {
        let mut tape = Tape::new();
        let mut ctx = Ctx::new(&mut tape, &self.params, false);
        let xs: Vec<&[usize]> = vec![x; prefixes.len()];
        let dec_in: Vec<Vec<usize>> = prefixes
            .iter()
            .map(|p| std::iter::once(BOS).chain(p.iter().copied()).collect())
            .collect();
        let logits = self.logits(&mut ctx, &xs, &dec_in)?;
        let lp = ctx.tape.log_softmax(logits)?;
        let t = ctx.tape.value(lp);
        let mut out = Vec::with_capacity(prefixes.len());
        let mut row = 0;
        for d in &dec_in {
            row += d.len();
            out.push(t.row(row - 1).to_vec());
        }
        Ok(out)
    }

    /// Length-penalised beam search over content tokens. The result is never
    /// worse under the penalised score than greedy decoding.
    pub fn beam_search(&self, x: &[usize], beam: usize, alpha: f64) -> Result<BeamHypothesis> {
        if beam == 0 {
            return invalid("beam size must be at least 1");
        }
        self.check(x, 0)?;
        let best = self.beam_inner(x, beam, alpha)?;
        if beam == 1 {
            return Ok(best);
        }
        let greedy = self.beam_inner(x, 1, alpha)?;
        Ok(
            if greedy.score > best.score && !(greedy.truncated && !best.truncated) {
                greedy
            } else {
                best
            },
        )
    }

    fn beam_inner(&self, x: &[usize], beam: usize, alpha: f64) -> Result<BeamHypothesis> {
        let max_steps = self.dims.max_len - 1;
        let score = |lp: f64, len: usize| lp / ((len + 1) as f64).powf(alpha);
        let mut active: Vec<(Vec<usize>, f64)> = vec![(Vec::new(), 0.0)];
        let mut finished: Vec<BeamHypothesis> = Vec::new();
        for step in 0..=max_steps {
            let prefixes: Vec<Vec<usize>> = active.iter().map(|a| a.0.clone()).collect();
            let next = self.next_logprobs(x, &prefixes)?;
            let mut cands: Vec<(usize, usize, f64)> = Vec::new();
            for (b, lp) in next.iter().enumerate() {
                cands.push((b, EOS, active[b].1 + lp[EOS]));
                if step < max_steps {
                    for (t, &l) in lp.iter().enumerate().skip(NUM_RESERVED) {
                        cands.push((b, t, active[b].1 + l));
                    }
                }
            }
            // Highest cumulative log-probability first; ties by beam then token.
            cands.sort_by(|a, b| b.2.total_cmp(&a.2).then(a.0.cmp(&b.0)).then(a.1.cmp(&b.1)));
            let mut next_active = Vec::new();
            for (b, t, lp) in cands.into_iter().take(beam) {
                if t == EOS {
                    let len = active[b].0.len();
                    finished.push(BeamHypothesis {
                        tokens: TokenSeq(active[b].0.clone()),
                        logprob: lp,
                        score: score(lp, len),
                        truncated: false,
                    });
                } else {
                    let mut p = active[b].0.clone();
                    p.push(t);
                    next_active.push((p, lp));
                }
            }
            active = next_active;
            if active.is_empty() || finished.len() >= beam {
                break;
            }
        }
        let pick = finished.into_iter().max_by(|a, b| {
            a.score
                .total_cmp(&b.score)
                .then(b.tokens.0.cmp(&a.tokens.0))
        });
        Ok(match pick {
            Some(h) => h,
            None => {
                let (tokens, lp) = active
                    .into_iter()
                    .max_by(|a, b| a.1.total_cmp(&b.1))
                    .unwrap_or((Vec::new(), f64::NEG_INFINITY));
                let len = tokens.len();
                BeamHypothesis {
                    tokens: TokenSeq(tokens),
                    logprob: lp,
                    score: score(lp, len),
                    truncated: true,
                }
            }
        })
    }
}

/// Teacher-forced scores of `y` given `x`.
pub fn at_logprob(at: &AtModel, x: &[usize], y: &[usize]) -> Result<AtScore> {
    Ok(at.score_batch(&[(x, y)])?.remove(0))
}

/// Best hypothesis under `logprob / (len+1)^length_penalty`.
pub fn beam_search(
    at: &AtModel,
    x: &[usize],
    beam_size: usize,
    length_penalty: f64,
) -> Result<BeamHypothesis> {
    at.beam_search(x, beam_size, length_penalty)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> AtModel {
        AtModel::new(ModelDims::small(32), 3).unwrap()
    }

    #[test]
    fn untrained_model_is_near_uniform() {
        let s = at_logprob(&model(), &[5, 6, 7], &[8, 9, 10, 11]).unwrap();
        let uniform = 4.0 * (1.0f64 / 32.0).ln();
        assert!((s.sum - uniform).abs() < 0.5, "{} vs {}", s.sum, uniform);
    }

    #[test]
    fn later_tokens_do_not_affect_earlier_positions() {
        let m = model();
        let x: &[usize] = &[5, 6];
        let rows_a = m.score_rows(&[(x, &[7, 8, 9, 10][..])]).unwrap().remove(0);
        let rows_b = m.score_rows(&[(x, &[7, 8, 20, 21][..])]).unwrap().remove(0);
        // rows 0..=2 condition on BOS, y1, y2 only
        assert_eq!(rows_a[..3], rows_b[..3]);
        assert_ne!(rows_a[3], rows_b[3]);
    }

    #[test]
    fn batch_rows_are_independent() {
        let m = model();
        let alone = at_logprob(&m, &[5, 6, 7], &[8, 9]).unwrap();
        let batch = m
            .score_batch(&[(&[9, 9][..], &[5][..]), (&[5, 6, 7][..], &[8, 9][..])])
            .unwrap();
        for (a, b) in alone.token_logprobs.iter().zip(&batch[1].token_logprobs) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn errors_on_bad_lengths() {
        let m = model();
        assert!(at_logprob(&m, &[5], &[]).is_err());
        assert!(at_logprob(&m, &[5], &vec![6; 40]).is_err());
        assert!(m.beam_search(&[5], 0, 1.0).is_err());
    }

    #[test]
    fn beam_one_is_greedy_and_wider_beam_is_no_worse() {
        let m = model();
        let x = [5, 6, 7];
        let g = m.beam_search(&x, 1, 1.0).unwrap();
        // greedy by hand
        let mut prefix = Vec::new();
        let mut lp = 0.0;
        loop {
            let next = m.next_logprobs(&x, &[prefix.clone()]).unwrap().remove(0);
            let mut best = EOS;
            for t in NUM_RESERVED..next.len() {
                if next[t] > next[best] {
                    best = t;
                }
            }
            if prefix.len() == m.dims.max_len - 1 {
                best = EOS;
            }
            lp += next[best];
            if best == EOS {
                break;
            }
            prefix.push(best);
        }
        assert_eq!(g.tokens.0, prefix);
        assert!((g.logprob - lp).abs() < 1e-9);
        let b = m.beam_search(&x, 5, 1.0).unwrap();
        assert!(b.score >= g.score - 1e-12);
    }
}
