use std::collections::HashMap;

use natlab_compute::ParamStore;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::optim::{learning_rate, Adam};
use super::{average_params, keep_best, TrainConfig};
use crate::data::{ParallelCorpus, TokenSeq};
use crate::error::{NatError, Result};
use crate::metrics::nats_to_bits;
use crate::model::AtModel;

const EVAL_CHUNK: usize = 64;

#[derive(Clone, Debug)]
pub struct AtRun {
    /// Average of the best `average_k` evaluated checkpoints.
    pub model: AtModel,
    /// `(step, dev NLL in bits per token including end-of-sentence)`; step 0 is the initial model.
    pub dev_nll: Vec<(usize, f64)>,
}

/// Per-token NLL (bits) of the corpus targets, counting the end-of-sentence step.
pub fn at_corpus_nll(model: &AtModel, corpus: &ParallelCorpus) -> Result<f64> {
    let (mut total, mut count) = (0.0, 0usize);
    for chunk in corpus.pairs.chunks(EVAL_CHUNK) {
        let pairs: Vec<(&[usize], &[usize])> =
            chunk.iter().map(|(x, y)| (&x[..], &y[..])).collect();
        for (s, (_, y)) in model.score_batch(&pairs)?.iter().zip(chunk) {
            total -= s.sum + s.eos_logprob;
            count += y.len() + 1;
        }
    }
    Ok(nats_to_bits(total / count.max(1) as f64))
}

pub(crate) fn sample_batch<R: Rng>(rng: &mut R, n: usize, size: usize) -> Vec<usize> {
    (0..size).map(|_| rng.gen_range(0..n)).collect()
}

/// Trains the autoregressive teacher by maximum likelihood.
pub fn train_at(cfg: &TrainConfig, train: &ParallelCorpus, dev: &ParallelCorpus) -> Result<AtRun> {
    if train.is_empty() {
        return Err(NatError::Config("empty training corpus".into()));
    }
    let mut model = AtModel::new(cfg.dims(train.vocab().size()), cfg.seed)?;
    let mut opt = Adam::new(&model.params);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x7ea_c0de);
    let has_dev = !dev.is_empty();
    let init = if has_dev {
        at_corpus_nll(&model, dev)?
    } else {
        f64::NAN
    };
    let mut log = vec![(0, init)];
    let mut best: Vec<(f64, usize, ParamStore)> = Vec::new();
    let mut worse = 0;
    for step in 1..=cfg.steps {
        let idx = sample_batch(&mut rng, train.len(), cfg.batch_size);
        let pairs: Vec<(&[usize], &[usize])> = idx
            .iter()
            .map(|&i| (&train.pairs[i].0[..], &train.pairs[i].1[..]))
            .collect();
        let g = model.batch_grads(&pairs, cfg.label_smoothing)?;
        if !g.loss.is_finite() {
            return Err(NatError::Numeric(format!(
                "non-finite teacher loss at step {step}"
            )));
        }
        opt.step(
            &mut model.params,
            &g.grads,
            learning_rate(cfg.lr, cfg.warmup, step),
        )?;
        model.step = step as u64;
        if step % cfg.eval_every == 0 || step == cfg.steps {
            let score = if has_dev {
                let nll = at_corpus_nll(&model, dev)?;
                log.push((step, nll));
                if !nll.is_finite() {
                    return Err(NatError::Numeric(format!(
                        "non-finite dev NLL at step {step}"
                    )));
                }
                worse = if nll > init { worse + 1 } else { 0 };
                if worse >= 3 {
                    return Err(NatError::Numeric(format!(
                        "teacher diverged: dev NLL {nll:.4} above initial {init:.4} for 3 evaluations (step {step})"
                    )));
                }
                -nll
            } else {
                step as f64
            };
            keep_best(&mut best, cfg.average_k, score, step, &model.params);
        }
    }
    let stores: Vec<&ParamStore> = best.iter().map(|b| &b.2).collect();
    model.params = average_params(&stores)?;
    Ok(AtRun {
        model,
        dev_nll: log,
    })
}

/// The teacher's beam output for every source; repeated sources are decoded once.
pub fn distill(
    teacher: &AtModel,
    sources: &[&TokenSeq],
    beam: usize,
    length_penalty: f64,
) -> Result<Vec<TokenSeq>> {
    let mut cache: HashMap<&TokenSeq, TokenSeq> = HashMap::new();
    let mut out = Vec::with_capacity(sources.len());
    for &x in sources {
        if let Some(t) = cache.get(x) {
            out.push(t.clone());
            continue;
        }
        let t = teacher.beam_search(x, beam, length_penalty)?.tokens;
        cache.insert(x, t.clone());
        out.push(t);
    }
    Ok(out)
}
