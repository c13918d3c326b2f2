//! Parallel decoder with length and mask heads, and the input predictor built on it.

use natlab_compute::{NodeId, ParamStore, Tape, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::at::BatchGrads;
use super::transformer::{init_linear, init_seq2seq, row_probs, spans, Ctx, ModelDims};
use crate::data::{TokenSeq, MASK};
use crate::error::{invalid, Result};
use crate::metrics::ProductModel;

/// Length offsets relative to the source length run from `-MAX_OFFSET` to `+MAX_OFFSET`.
pub const MAX_OFFSET: i64 = 8;
pub const LENGTH_CLASSES: usize = (2 * MAX_OFFSET + 1) as usize;

#[derive(Clone, Debug)]
pub struct NatModel {
    pub dims: ModelDims,
    pub params: ParamStore,
    /// Unmasked input tokens are copied to the output with probability one.
    pub copy: bool,
    pub seed: u64,
    pub step: u64,
}

/// One training example: source, proxy input, proxy target.
#[derive(Clone, Debug, PartialEq)]
pub struct NatExample {
    pub x: TokenSeq,
    pub z: TokenSeq,
    pub t: TokenSeq,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NatLossConfig {
    pub smoothing: f64,
    /// Weight of the length-prediction cross-entropy.
    pub length_weight: f64,
}

impl Default for NatLossConfig {
    fn default() -> Self {
        Self {
            smoothing: 0.1,
            length_weight: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NatScore {
    /// Distribution over the vocabulary at each position.
    pub dists: Vec<Vec<f64>>,
    /// `-(1/|T|) sum_i log P(t_i|Z,X)`, nats.
    pub nll: f64,
}

/// Offset class of target length `t_len` for a source of length `x_len`.
pub fn length_class(x_len: usize, t_len: usize) -> usize {
    let off = (t_len as i64 - x_len as i64).clamp(-MAX_OFFSET, MAX_OFFSET);
    (off + MAX_OFFSET) as usize
}

/// Decoder row `i` of `t_len` reads encoder row `round(i * S / t_len)`, clamped.
fn uniform_copy_index(i: usize, s_len: usize, t_len: usize) -> usize {
    ((2 * i * s_len + t_len) / (2 * t_len)).min(s_len - 1)
}

struct Forward {
    logits: NodeId,
    hidden: NodeId,
    length_logits: NodeId,
    dec_spans: Vec<(usize, usize)>,
}

impl NatModel {
    pub fn new(dims: ModelDims, copy: bool, seed: u64) -> Result<Self> {
        dims.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        init_seq2seq(&mut params, &dims, &mut rng);
        init_linear(
            &mut params,
            "len",
            dims.d_model,
            LENGTH_CLASSES,
            0.02,
            &mut rng,
        );
        init_linear(&mut params, "mask", dims.d_model, 2, 0.02, &mut rng);
        Ok(Self {
            dims,
            params,
            copy,
            seed,
            step: 0,
        })
    }

    fn check(&self, x: &[usize], z: &[usize]) -> Result<()> {
        if x.is_empty() || x.len() > self.dims.max_len {
            return invalid(format!(
                "source length {} outside 1..={}",
                x.len(),
                self.dims.max_len
            ));
        }
        if z.is_empty() || z.len() > self.dims.max_len {
            return invalid(format!(
                "target length {} outside 1..={}",
                z.len(),
                self.dims.max_len
            ));
        }
        if x.iter().chain(z).any(|&t| t >= self.dims.vocab) {
            return invalid("token outside vocabulary");
        }
        Ok(())
    }

    fn forward(&self, ctx: &mut Ctx, items: &[(&[usize], &[usize])]) -> Result<Forward> {
        let xs: Vec<&[usize]> = items.iter().map(|i| i.0).collect();
        let zs: Vec<&[usize]> = items.iter().map(|i| i.1).collect();
        let (enc, enc_spans) = ctx.encode(&self.dims, &xs)?;
        let copy_rows: Vec<usize> = enc_spans
            .iter()
            .zip(&zs)
            .flat_map(|(&(start, s_len), z)| {
                (0..z.len()).map(move |i| start + uniform_copy_index(i, s_len, z.len()))
            })
            .collect();
        let copied = ctx.tape.gather(enc, copy_rows)?;
        let emb = ctx.embed(&zs)?;
        let h = ctx.tape.add(copied, emb)?;
        let dec_spans = spans(zs.iter().map(|z| z.len()));
        let hidden = ctx.decode(&self.dims, h, &dec_spans, enc, &enc_spans, false)?;
        let logits = ctx.linear(hidden, "out")?;
        let pooled = ctx.tape.segment_mean(enc, enc_spans)?;
        let length_logits = ctx.linear(pooled, "len")?;
        Ok(Forward {
            logits,
            hidden,
            length_logits,
            dec_spans,
        })
    }

    /// Per-position output distributions for each `(x, z)`, copy mechanism applied.
    pub fn position_probs_batch(
        &self,
        items: &[(&[usize], &[usize])],
    ) -> Result<Vec<Vec<Vec<f64>>>> {
        if items.is_empty() {
            return Ok(Vec::new());
        }
        for (x, z) in items {
            self.check(x, z)?;
        }
        let mut tape = Tape::new();
        let mut ctx = Ctx::new(&mut tape, &self.params, false);
        let f = self.forward(&mut ctx, items)?;
        let probs = row_probs(ctx.tape.value(f.logits));
        let mut out = Vec::with_capacity(items.len());
        for (&(start, len), (_, z)) in f.dec_spans.iter().zip(items) {
            let mut d: Vec<Vec<f64>> = probs[start..start + len].to_vec();
            if self.copy {
                for (row, &zi) in d.iter_mut().zip(z.iter()) {
                    if zi != MASK {
                        row.iter_mut().for_each(|p| *p = 0.0);
                        row[zi] = 1.0;
                    }
                }
            }
            out.push(d);
        }
        Ok(out)
    }

    /// Per-position distributions under a fully masked input of length `len`.
    pub fn full_mask_probs(&self, x: &[usize], len: usize) -> Result<Vec<Vec<f64>>> {
        let z = vec![MASK; len];
        Ok(self.position_probs_batch(&[(x, &z)])?.remove(0))
    }

    /// Distribution over length offsets `-8..=8` for each source.
    pub fn length_probs_batch(&self, xs: &[&[usize]]) -> Result<Vec<Vec<f64>>> {
        if xs.is_empty() {
            return Ok(Vec::new());
        }
        let mut tape = Tape::new();
        let mut ctx = Ctx::new(&mut tape, &self.params, false);
        for x in xs {
            self.check(x, &[MASK])?;
        }
        let (enc, enc_spans) = ctx.encode(&self.dims, xs)?;
        let pooled = ctx.tape.segment_mean(enc, enc_spans)?;
        let logits = ctx.linear(pooled, "len")?;
        Ok(row_probs(ctx.tape.value(logits)))
    }

    /// Most likely target length, clipped to the model's range.
    pub fn predicted_length(&self, x: &[usize]) -> Result<usize> {
        let probs = predict_length(self, x)?;
        let class = argmax(&probs);
        let len = x.len() as i64 + class as i64 - MAX_OFFSET;
        Ok(len.clamp(0, self.dims.max_len as i64) as usize)
    }

    /// Output distributions and final decoder states (the mask head's
    /// features) under fully masked inputs of the given lengths.
    pub fn full_mask_outputs(
        &self,
        items: &[(&[usize], usize)],
    ) -> Result<Vec<(Vec<Vec<f64>>, Tensor)>> {
        if items.is_empty() {
            return Ok(Vec::new());
        }
        let zs: Vec<Vec<usize>> = items.iter().map(|&(_, len)| vec![MASK; len]).collect();
        let pairs: Vec<(&[usize], &[usize])> = items
            .iter()
            .zip(&zs)
            .map(|(&(x, _), z)| (x, z.as_slice()))
            .collect();
        for (x, z) in &pairs {
            self.check(x, z)?;
        }
        let mut tape = Tape::new();
        let mut ctx = Ctx::new(&mut tape, &self.params, false);
        let f = self.forward(&mut ctx, &pairs)?;
        let probs = row_probs(ctx.tape.value(f.logits));
        let hidden = ctx.tape.value(f.hidden);
        let d = hidden.cols();
        Ok(f.dec_spans
            .iter()
            .map(|&(start, len)| {
                let feats = hidden.data()[start * d..(start + len) * d].to_vec();
                (
                    probs[start..start + len].to_vec(),
                    Tensor::new(vec![len, d], feats).expect("feature block"),
                )
            })
            .collect())
    }

    /// Final decoder states under a fully masked input: the mask head's features.
    pub fn mask_features(&self, x: &[usize], len: usize) -> Result<Tensor> {
        Ok(self.full_mask_outputs(&[(x, len)])?.remove(0).1)
    }

    /// Mask probabilities from precomputed features.
    pub fn mask_probs_from_features(&self, feats: &Tensor) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let f = tape.constant(feats.clone());
        let w = tape.constant(self.param("mask.w").clone());
        let b = tape.constant(self.param("mask.b").clone());
        let y = tape.matmul(f, w)?;
        let y = tape.add(y, b)?;
        Ok(row_probs(tape.value(y)).into_iter().map(|p| p[1]).collect())
    }

    /// Probability that each of `len` positions is masked, given `x`.
    pub fn mask_probs(&self, x: &[usize], len: usize) -> Result<Vec<f64>> {
        self.mask_probs_from_features(&self.mask_features(x, len)?)
    }

    pub fn param(&self, name: &str) -> &Tensor {
        self.params
            .by_name(name)
            .unwrap_or_else(|| panic!("missing parameter {name}"))
    }

    /// Replaces a parameter of the same shape.
    pub fn set_param(&mut self, name: &str, value: Tensor) -> Result<()> {
        let Some(id) = self.params.id(name) else {
            return invalid(format!("no parameter {name}"));
        };
        if self.params.get(id).shape() != value.shape() {
            return invalid(format!("shape mismatch for {name}"));
        }
        *self.params.get_mut(id) = value;
        Ok(())
    }

    /// Mean cross-entropy of the targets plus the weighted length loss.
    /// With the copy mechanism on, unmasked positions contribute nothing.
    pub fn batch_grads(&self, batch: &[NatExample], cfg: NatLossConfig) -> Result<BatchGrads> {
        if batch.is_empty() {
            return invalid("empty batch");
        }
        for e in batch {
            self.check(&e.x, &e.z)?;
            if e.z.len() != e.t.len() {
                return invalid("proxy input and target lengths differ");
            }
            if e.t.iter().any(|&t| t >= self.dims.vocab) {
                return invalid("target token outside vocabulary");
            }
        }
        let items: Vec<(&[usize], &[usize])> = batch.iter().map(|e| (&e.x[..], &e.z[..])).collect();
        let mut tape = Tape::new();
        let mut ctx = Ctx::new(&mut tape, &self.params, true);
        let f = self.forward(&mut ctx, &items)?;
        let mut targets = Vec::new();
        let mut counted = Vec::new();
        for e in batch {
            for (&z, &t) in e.z.iter().zip(e.t.iter()) {
                targets.push(t);
                counted.push(!self.copy || z == MASK);
            }
        }
        let n = counted.iter().filter(|&&c| c).count();
        let weights: Vec<f64> = counted
            .iter()
            .map(|&c| if c { 1.0 / n.max(1) as f64 } else { 0.0 })
            .collect();
        let tok_loss = ctx
            .tape
            .cross_entropy(f.logits, targets, weights, cfg.smoothing)?;
        let len_targets: Vec<usize> = batch
            .iter()
            .map(|e| length_class(e.x.len(), e.t.len()))
            .collect();
        let b = batch.len();
        let len_loss = ctx.tape.cross_entropy(
            f.length_logits,
            len_targets,
            vec![cfg.length_weight / b as f64; b],
            0.0,
        )?;
        let total = ctx.tape.add(tok_loss, len_loss)?;
        let value = ctx.tape.value(tok_loss).item();
        let mut grads = ctx.tape.backward(total)?;
        let grads = ctx.bound().collect(&mut grads, &self.params);
        Ok(BatchGrads {
            loss: value,
            tokens: n,
            grads,
        })
    }
}

/// Loss and gradients of a two-class mask head `(w, b)` on fixed features.
/// `labels[r]` is 1 when row `r` of `feats` was masked.
pub fn mask_head_grads(
    w: &Tensor,
    b: &Tensor,
    feats: &Tensor,
    labels: &[usize],
) -> Result<(f64, Tensor, Tensor)> {
    if labels.len() != feats.rows() || labels.is_empty() {
        return invalid("one mask label per feature row required");
    }
    let mut tape = Tape::new();
    let f = tape.constant(feats.clone());
    let wn = tape.param(w.clone());
    let bn = tape.param(b.clone());
    let y = tape.matmul(f, wn)?;
    let y = tape.add(y, bn)?;
    let n = labels.len();
    let loss = tape.cross_entropy(y, labels.to_vec(), vec![1.0 / n as f64; n], 0.0)?;
    let value = tape.value(loss).item();
    let mut g = tape.backward(loss)?;
    let gw = g.take(wn).unwrap_or_else(|| Tensor::zeros(w.shape()));
    let gb = g.take(bn).unwrap_or_else(|| Tensor::zeros(b.shape()));
    Ok((value, gw, gb))
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &p) in v.iter().enumerate() {
        if p > v[best] {
            best = i;
        }
    }
    best
}

impl ProductModel for NatModel {
    fn marginals(&self, x: &TokenSeq, len: usize) -> Result<Vec<Vec<f64>>> {
        self.full_mask_probs(x, len)
    }
}

/// Per-position distributions and per-token NLL of `t` given proxy input `z`.
pub fn nat_logprob(nat: &NatModel, x: &[usize], z: &[usize], t: &[usize]) -> Result<NatScore> {
    if z.len() != t.len() {
        return invalid(format!(
            "proxy input length {} differs from target length {}",
            z.len(),
            t.len()
        ));
    }
    let dists = nat.position_probs_batch(&[(x, z)])?.remove(0);
    let nll = -t.iter().zip(&dists).map(|(&ti, d)| d[ti].ln()).sum::<f64>() / t.len() as f64;
    Ok(NatScore { dists, nll })
}

/// Distribution over length offsets `-8..=8` relative to `|x|`.
pub fn predict_length(nat: &NatModel, x: &[usize]) -> Result<Vec<f64>> {
    Ok(nat.length_probs_batch(&[x])?.remove(0))
}

/// `P(Z|X)`: a mask classifier on the trained model's trunk plus a frozen
/// vanilla model for the tokens left unmasked.
#[derive(Clone, Debug)]
pub struct InputPredictor {
    pub frozen: NatModel,
}

impl InputPredictor {
    pub fn new(frozen: NatModel) -> Self {
        Self { frozen }
    }

    /// Per-position `(p_masked, token distribution)` for targets of length `len`.
    pub fn position_factors(
        &self,
        nat: &NatModel,
        x: &[usize],
        len: usize,
    ) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
        let m = nat.mask_probs(x, len)?;
        let tok = self.frozen.full_mask_probs(x, len)?;
        Ok((m, tok))
    }
}

/// `log P(Z|X) = sum_i log P(z_i|X)`, where a mask has probability `m_i`, a
/// token `v` has `(1 - m_i) P_frozen(v|X)`, and anything else zero (giving -inf).
pub fn input_predictor_logprob(
    nat: &NatModel,
    ip: &InputPredictor,
    x: &[usize],
    z: &[usize],
) -> Result<f64> {
    if z.is_empty() {
        return invalid("empty proxy input");
    }
    let (m, tok) = ip.position_factors(nat, x, z.len())?;
    Ok(factor_logprob(&m, &tok, z))
}

pub(crate) fn factor_logprob(m: &[f64], tok: &[Vec<f64>], z: &[usize]) -> f64 {
    z.iter()
        .enumerate()
        .map(|(i, &zi)| {
            if zi == MASK {
                m[i].ln()
            } else {
                match tok[i].get(zi) {
                    Some(&p) if p > 0.0 => (1.0 - m[i]).ln() + p.ln(),
                    _ => f64::NEG_INFINITY,
                }
            }
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model(copy: bool) -> NatModel {
        NatModel::new(ModelDims::small(32), copy, 11).unwrap()
    }

    #[test]
    fn uniform_copy_is_identity_at_equal_lengths() {
        for n in 1..10 {
            for i in 0..n {
                assert_eq!(uniform_copy_index(i, n, n), i);
            }
        }
        assert_eq!(uniform_copy_index(3, 2, 4), 1);
        assert_eq!(uniform_copy_index(0, 5, 1), 0);
    }

    #[test]
    fn copy_identity_gives_zero_nll() {
        let m = model(true);
        let t = [5, 6, 7, 8];
        let s = nat_logprob(&m, &[9, 10], &t, &t).unwrap();
        assert_eq!(s.nll, 0.0);
    }

    #[test]
    fn untrained_model_is_near_uniform() {
        let m = model(false);
        let s = nat_logprob(&m, &[9, 10, 11], &[MASK; 4], &[5, 6, 7, 8]).unwrap();
        assert!((s.nll - (32f64).ln()).abs() < 0.2, "{}", s.nll);
        let lp = predict_length(&m, &[5, 6, 7]).unwrap();
        for p in lp {
            assert!((p - 1.0 / 17.0).abs() < 0.1);
        }
    }

    #[test]
    fn rejects_length_mismatch() {
        let m = model(false);
        assert!(nat_logprob(&m, &[5], &[MASK, MASK], &[5]).is_err());
    }

    #[test]
    fn length_classes_clip() {
        assert_eq!(length_class(5, 5), 8);
        assert_eq!(length_class(1, 30), 16);
        assert_eq!(length_class(20, 1), 0);
    }

    #[test]
    fn masked_loss_with_copy_equals_full_nll() {
        // With copy on, the masked-position loss equals the full-sequence NLL.
        let m = model(true);
        let x = [9, 10, 11];
        let t = [5, 6, 7, 8];
        let z = [MASK, 6, MASK, 8];
        let s = nat_logprob(&m, &x, &z, &t).unwrap();
        let g = m
            .batch_grads(
                &[NatExample {
                    x: TokenSeq(x.to_vec()),
                    z: TokenSeq(z.to_vec()),
                    t: TokenSeq(t.to_vec()),
                }],
                NatLossConfig {
                    smoothing: 0.0,
                    length_weight: 0.0,
                },
            )
            .unwrap();
        assert!((g.loss * 2.0 - s.nll * 4.0).abs() < 1e-10);
    }

    #[test]
    fn input_predictor_branches() {
        let nat = model(false);
        let ip = InputPredictor::new(model(false));
        let x = [5, 6];
        let (m, tok) = ip.position_factors(&nat, &x, 3).unwrap();
        let all_mask = input_predictor_logprob(&nat, &ip, &x, &[MASK; 3]).unwrap();
        assert!((all_mask - m.iter().map(|p| p.ln()).sum::<f64>()).abs() < 1e-12);
        let one = input_predictor_logprob(&nat, &ip, &x, &[MASK, 7, MASK]).unwrap();
        let want = m[0].ln() + (1.0 - m[1]).ln() + tok[1][7].ln() + m[2].ln();
        assert!((one - want).abs() < 1e-12);
        assert_eq!(
            factor_logprob(
                &m,
                &[vec![0.0; 32], vec![0.0; 32], vec![0.0; 32]],
                &[5, MASK, MASK]
            ),
            f64::NEG_INFINITY
        );
    }
}
