//! The parallel student's training loop: each step builds proxy targets and
//! inputs against the current parameters (E-step), then takes one gradient
//! step on the proxied likelihood (M-step).

use natlab_compute::{ParamStore, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{TargetMethod, TrainConfig};
use super::optim::{learning_rate, Adam};
use super::teacher::sample_batch;
use super::{average_params, keep_best};
use crate::data::{ParallelCorpus, TokenSeq, EPS, NUM_RESERVED};
use crate::decode::{decode_batch, DecodeOptions};
use crate::error::{invalid, NatError, Result};
use crate::metrics::{corpus_bleu, l_input, l_nat, l_target_hat, InputSample, MetricsRecord};
use crate::model::{mask_head_grads, InputPredictor, NatExample, NatLossConfig, NatModel};
use crate::proxy_input::{sample_input, GlatSnapshot, MaskRule};
use crate::proxy_target::{
    axe_align, default_gamma_grid, dynamic_kd_select, oaxe_align, tune_gamma, CandidateSet,
};

const CHUNK: usize = 64;
const MASK_HEAD_EXAMPLES: usize = 256;
const EVAL_SEED: u64 = 0xe7a1;
const MASK_HEAD_SEED: u64 = 0x3a5c;

/// Teacher outputs for the training and dev sources of one teacher tier.
#[derive(Clone, Debug, PartialEq)]
pub struct Distilled {
    pub train: Vec<TokenSeq>,
    pub dev: Vec<TokenSeq>,
}

/// Everything a student run reads besides its config.
#[derive(Clone, Copy, Debug)]
pub struct NatInputs<'a> {
    pub train: &'a ParallelCorpus,
    pub dev: &'a ParallelCorpus,
    /// One entry per teacher tier; KD and alignment-on-KD use the first.
    pub distilled: &'a [Distilled],
    /// Frozen vanilla model backing the input predictor.
    pub frozen: Option<&'a NatModel>,
}

#[derive(Clone, Debug)]
pub struct NatRun {
    /// Average of the best `average_k` checkpoints by dev BLEU.
    pub model: NatModel,
    /// One record per evaluation.
    pub records: Vec<MetricsRecord>,
    /// Record of the averaged model.
    pub final_record: MetricsRecord,
    /// Dynamic KD candidate weights actually used.
    pub gamma: Vec<f64>,
    /// Training examples whose proxy construction failed.
    pub skipped: usize,
}

/// Base targets (and Dynamic KD candidates) for one split.
pub(crate) struct SplitTargets {
    pub base: Vec<TokenSeq>,
    pub candidates: Option<Vec<CandidateSet>>,
}

fn split_targets(
    cfg: &TrainConfig,
    corpus: &ParallelCorpus,
    distilled: &[&Vec<TokenSeq>],
) -> Result<SplitTargets> {
    for d in distilled {
        if d.len() != corpus.len() {
            return invalid("distilled targets do not match the corpus size");
        }
    }
    let first = || -> Result<&Vec<TokenSeq>> {
        distilled.first().copied().ok_or_else(|| {
            NatError::Config(format!(
                "target {} needs a distilled corpus",
                cfg.target.name()
            ))
        })
    };
    let base: Vec<TokenSeq> = match cfg.target {
        TargetMethod::Kd => first()?.clone(),
        TargetMethod::Axe { .. } | TargetMethod::Oaxe if cfg.align_on_kd => first()?.clone(),
        _ => corpus.pairs.iter().map(|p| p.1.clone()).collect(),
    };
    let candidates = if cfg.target == TargetMethod::DynamicKd {
        first()?;
        let mut sets = Vec::with_capacity(corpus.len());
        for (i, p) in corpus.pairs.iter().enumerate() {
            let mut c = vec![p.1.clone()];
            c.extend(distilled.iter().map(|d| d[i].clone()));
            sets.push(CandidateSet::new(c)?);
        }
        Some(sets)
    } else {
        None
    };
    Ok(SplitTargets { base, candidates })
}

/// One proxied example plus the exact log-probability of its input pattern.
pub(crate) struct Proxied {
    pub example: NatExample,
    pub log_q: f64,
    pub snapshot: Option<GlatSnapshot>,
}

fn argmax_content(d: &[f64]) -> usize {
    let mut best = EPS;
    for t in NUM_RESERVED..d.len() {
        if d[t] > d[best] {
            best = t;
        }
    }
    best
}

/// E-step for a set of examples. Reads the model, never writes it.
#[allow(clippy::too_many_arguments)]
pub(crate) fn build_proxies<R: Rng>(
    nat: &NatModel,
    cfg: &TrainConfig,
    step: usize,
    xs: &[&TokenSeq],
    base: &[&TokenSeq],
    cands: Option<&[&CandidateSet]>,
    gamma: &[f64],
    rng: &mut R,
) -> Result<Vec<Option<Proxied>>> {
    let max_len = nat.dims.max_len;
    let aligning = matches!(cfg.target, TargetMethod::Axe { .. } | TargetMethod::Oaxe)
        && step > cfg.pretrain_steps;
    let dynamic = cfg.target == TargetMethod::DynamicKd;
    let glat = cfg.mask_rule.needs_snapshot();
    let usable = |t: &TokenSeq| !t.is_empty() && t.len() <= max_len;

    // Targets, plus fully masked predictions at the target length when needed.
    let mut targets: Vec<Option<TokenSeq>> = Vec::with_capacity(xs.len());
    let mut dists: Vec<Option<Vec<Vec<f64>>>> = vec![None; xs.len()];
    if dynamic {
        let cands =
            cands.ok_or_else(|| NatError::Config("dynamic KD needs candidate sets".into()))?;
        let mut items = Vec::new();
        let mut owner = Vec::new();
        for (i, set) in cands.iter().enumerate() {
            for (k, c) in set.candidates.iter().enumerate() {
                if usable(c) {
                    items.push((&xs[i][..], c.len()));
                    owner.push((i, k));
                }
            }
        }
        let mut per: Vec<Vec<Option<Vec<Vec<f64>>>>> =
            cands.iter().map(|s| vec![None; s.len()]).collect();
        for (chunk_items, chunk_owner) in items.chunks(CHUNK).zip(owner.chunks(CHUNK)) {
            for ((d, _), &(i, k)) in nat
                .full_mask_outputs(chunk_items)?
                .into_iter()
                .zip(chunk_owner)
            {
                per[i][k] = Some(d);
            }
        }
        for (i, set) in cands.iter().enumerate() {
            let nll: Vec<f64> = set
                .candidates
                .iter()
                .zip(&per[i])
                .map(|(c, d)| match d {
                    Some(d) => {
                        -c.iter().zip(d).map(|(&t, row)| row[t].ln()).sum::<f64>() / c.len() as f64
                    }
                    None => f64::INFINITY,
                })
                .collect();
            if nll.iter().all(|v| v.is_infinite()) {
                targets.push(None);
                continue;
            }
            let k = dynamic_kd_select(set, &nll, cfg.beta, gamma)?;
            targets.push(Some(set.candidates[k].clone()));
            dists[i] = per[i][k].take();
        }
    } else {
        let need = aligning || glat;
        let mut items = Vec::new();
        let mut owner = Vec::new();
        for (i, t) in base.iter().enumerate() {
            if usable(t) {
                targets.push(Some((*t).clone()));
                if need {
                    items.push((&xs[i][..], t.len()));
                    owner.push(i);
                }
            } else {
                targets.push(None);
            }
        }
        for (chunk_items, chunk_owner) in items.chunks(CHUNK).zip(owner.chunks(CHUNK)) {
            for ((d, _), &i) in nat
                .full_mask_outputs(chunk_items)?
                .into_iter()
                .zip(chunk_owner)
            {
                dists[i] = Some(d);
            }
        }
        if aligning {
            for (i, t) in targets.iter_mut().enumerate() {
                let (Some(r), Some(d)) = (t.as_ref(), dists[i].as_ref()) else {
                    continue;
                };
                let aligned = match cfg.target {
                    TargetMethod::Axe { delta } => axe_align(d, r, delta),
                    _ => oaxe_align(d, r),
                };
                *t = aligned.ok().map(|a| a.target);
            }
        }
    }

    let mut out = Vec::with_capacity(xs.len());
    for (i, t) in targets.into_iter().enumerate() {
        let Some(t) = t else {
            out.push(None);
            continue;
        };
        let snapshot = if glat {
            dists[i].as_ref().map(|d| GlatSnapshot {
                argmax: d.iter().map(|row| argmax_content(row)).collect(),
                p_ref: t.iter().zip(d).map(|(&ti, row)| row[ti]).collect(),
            })
        } else {
            None
        };
        match sample_input(&cfg.mask_rule, &t, snapshot.as_ref(), step, rng) {
            Ok(p) => out.push(Some(Proxied {
                example: NatExample {
                    x: xs[i].clone(),
                    z: p.z,
                    t,
                },
                log_q: p.log_q,
                snapshot,
            })),
            Err(_) => out.push(None),
        }
    }
    Ok(out)
}

/// Fits the mask head to the rule's mask patterns on frozen trunk features.
pub(crate) fn fit_mask_head(
    nat: &mut NatModel,
    cfg: &TrainConfig,
    train: &ParallelCorpus,
    targets: &SplitTargets,
    gamma: &[f64],
    step: usize,
) -> Result<()> {
    if cfg.mask_rule == MaskRule::Vanilla || cfg.mask_head_steps == 0 {
        return Ok(());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ MASK_HEAD_SEED);
    let n = train.len().min(MASK_HEAD_EXAMPLES);
    let idx = sample_batch(&mut rng, train.len(), n);
    let xs: Vec<&TokenSeq> = idx.iter().map(|&i| &train.pairs[i].0).collect();
    let base: Vec<&TokenSeq> = idx.iter().map(|&i| &targets.base[i]).collect();
    let cands: Option<Vec<&CandidateSet>> = targets
        .candidates
        .as_ref()
        .map(|c| idx.iter().map(|&i| &c[i]).collect());
    let proxies = build_proxies(
        nat,
        cfg,
        step,
        &xs,
        &base,
        cands.as_deref(),
        gamma,
        &mut rng,
    )?;
    let examples: Vec<&NatExample> = proxies.iter().flatten().map(|p| &p.example).collect();
    if examples.is_empty() {
        return Ok(());
    }
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    let mut d = 0;
    for chunk in examples.chunks(CHUNK) {
        let items: Vec<(&[usize], usize)> = chunk.iter().map(|e| (&e.x[..], e.z.len())).collect();
        for ((_, feats), e) in nat.full_mask_outputs(&items)?.into_iter().zip(chunk) {
            d = feats.cols();
            rows.extend_from_slice(feats.data());
            labels.extend(e.z.iter().map(|&z| (z == crate::data::MASK) as usize));
        }
    }
    let feats = Tensor::new(vec![labels.len(), d], rows)?;
    let mut head = ParamStore::new();
    let w = head.insert("w", nat.param("mask.w").clone());
    let b = head.insert("b", nat.param("mask.b").clone());
    let mut opt = Adam::new(&head);
    for _ in 0..cfg.mask_head_steps {
        let (_, gw, gb) = mask_head_grads(head.get(w), head.get(b), &feats, &labels)?;
        opt.step(&mut head, &[gw, gb], 1e-2)?;
    }
    nat.set_param("mask.w", head.get(w).clone())?;
    nat.set_param("mask.b", head.get(b).clone())
}

/// Dev-set evaluation: proxy terms, dev BLEU, and the combined record.
pub(crate) struct Evaluator<'a> {
    pub cfg: &'a TrainConfig,
    pub dev: &'a ParallelCorpus,
    pub targets: SplitTargets,
    pub frozen: Option<&'a NatModel>,
}

impl Evaluator<'_> {
    pub fn evaluate(&self, nat: &NatModel, step: usize, gamma: &[f64]) -> Result<MetricsRecord> {
        let cfg = self.cfg;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ EVAL_SEED);
        let xs: Vec<&TokenSeq> = self.dev.pairs.iter().map(|p| &p.0).collect();
        let base: Vec<&TokenSeq> = self.targets.base.iter().collect();
        let cands: Option<Vec<&CandidateSet>> =
            self.targets.candidates.as_ref().map(|c| c.iter().collect());
        let proxies = build_proxies(
            nat,
            cfg,
            step,
            &xs,
            &base,
            cands.as_deref(),
            gamma,
            &mut rng,
        )?;

        let mut examples = Vec::new();
        let mut target_term = 0.0;
        let mut samples = Vec::new();
        for (i, p) in proxies.iter().enumerate() {
            let Some(p) = p else { continue };
            target_term += l_target_hat(&self.dev.references(i), &p.example.t, cfg.beta);
            examples.push(p.example.clone());
            if cfg.mask_rule != MaskRule::Vanilla {
                samples.push(InputSample {
                    x: p.example.x.clone(),
                    z: p.example.z.clone(),
                    log_q: p.log_q,
                });
                for _ in 1..cfg.input_samples {
                    let z = sample_input(
                        &cfg.mask_rule,
                        &p.example.t,
                        p.snapshot.as_ref(),
                        step,
                        &mut rng,
                    )?;
                    samples.push(InputSample {
                        x: p.example.x.clone(),
                        z: z.z,
                        log_q: z.log_q,
                    });
                }
            }
        }
        if examples.is_empty() {
            return Err(NatError::Numeric(
                "no dev pair yields a usable proxy".into(),
            ));
        }
        let lnat = l_nat(nat, &examples)?;
        let ltarget = target_term / examples.len() as f64;
        let ip = self.frozen.map(|f| InputPredictor::new(f.clone()));
        let linput = if cfg.mask_rule == MaskRule::Vanilla {
            0.0
        } else {
            let ip = ip.as_ref().ok_or_else(|| {
                NatError::Config(format!(
                    "mask rule {} needs a frozen vanilla model",
                    cfg.mask_rule.name()
                ))
            })?;
            l_input(nat, ip, &samples)?.bits_per_token
        };
        let bleu = dev_bleu(nat, ip.as_ref(), self.dev, cfg)?;
        Ok(MetricsRecord::new(
            &cfg.name, cfg.seed, step, lnat, linput, ltarget, bleu,
        ))
    }
}

/// Corpus BLEU (points) of the configured decoding against dev references.
pub fn dev_bleu(
    nat: &NatModel,
    ip: Option<&InputPredictor>,
    dev: &ParallelCorpus,
    cfg: &TrainConfig,
) -> Result<f64> {
    let opts = DecodeOptions {
        strategy: cfg.decode,
        seed: cfg.seed,
        ..Default::default()
    };
    let mut hyps = Vec::with_capacity(dev.len());
    for chunk in dev.pairs.chunks(CHUNK) {
        let xs: Vec<&[usize]> = chunk.iter().map(|p| &p.0[..]).collect();
        hyps.extend(
            decode_batch(nat, ip, &xs, &opts)?
                .into_iter()
                .map(|d| d.tokens),
        );
    }
    let refs: Vec<Vec<&TokenSeq>> = (0..dev.len()).map(|i| dev.references(i)).collect();
    Ok(corpus_bleu(&hyps, &refs))
}

fn resolve_gamma(
    cfg: &TrainConfig,
    dev: &ParallelCorpus,
    dev_targets: &SplitTargets,
    tiers: usize,
) -> Result<Vec<f64>> {
    if cfg.target != TargetMethod::DynamicKd {
        return Ok(Vec::new());
    }
    if !cfg.gamma.is_empty() {
        if cfg.gamma.len() != tiers + 1 {
            return Err(NatError::Config(format!(
                "gamma needs {} weights (raw plus each teacher)",
                tiers + 1
            )));
        }
        return Ok(cfg.gamma.clone());
    }
    if dev.refs.is_empty() {
        return Err(NatError::Config("tuning gamma needs dev references".into()));
    }
    let sets = dev_targets
        .candidates
        .as_ref()
        .expect("dynamic KD candidates");
    let refs: Vec<Vec<TokenSeq>> = (0..dev.len())
        .map(|i| dev.references(i).into_iter().cloned().collect())
        .collect();
    tune_gamma(sets, &refs, &default_gamma_grid())
}

/// Dev-set record of an already trained student under `cfg`'s proxies.
pub fn evaluate_nat(cfg: &TrainConfig, nat: &NatModel, inputs: NatInputs) -> Result<MetricsRecord> {
    let NatInputs {
        dev,
        distilled,
        frozen,
        ..
    } = inputs;
    if dev.is_empty() {
        return Err(NatError::Config(
            "evaluation needs a non-empty dev split".into(),
        ));
    }
    let dev_d: Vec<&Vec<TokenSeq>> = distilled.iter().map(|d| &d.dev).collect();
    let eval = Evaluator {
        cfg,
        dev,
        targets: split_targets(cfg, dev, &dev_d)?,
        frozen,
    };
    let gamma = resolve_gamma(cfg, dev, &eval.targets, distilled.len())?;
    eval.evaluate(nat, nat.step as usize, &gamma)
}

/// Trains the parallel student under the configured proxies.
pub fn train_nat(cfg: &TrainConfig, inputs: NatInputs) -> Result<NatRun> {
    let NatInputs {
        train,
        dev,
        distilled,
        frozen,
    } = inputs;
    if train.is_empty() || dev.is_empty() {
        return Err(NatError::Config(
            "student training needs non-empty train and dev splits".into(),
        ));
    }
    if cfg.mask_rule != MaskRule::Vanilla && frozen.is_none() {
        return Err(NatError::Config(format!(
            "mask rule {} needs a frozen vanilla model for the input predictor",
            cfg.mask_rule.name()
        )));
    }
    let train_d: Vec<&Vec<TokenSeq>> = distilled.iter().map(|d| &d.train).collect();
    let dev_d: Vec<&Vec<TokenSeq>> = distilled.iter().map(|d| &d.dev).collect();
    let train_targets = split_targets(cfg, train, &train_d)?;
    let eval = Evaluator {
        cfg,
        dev,
        targets: split_targets(cfg, dev, &dev_d)?,
        frozen,
    };
    let gamma = resolve_gamma(cfg, dev, &eval.targets, distilled.len())?;

    let mut nat = NatModel::new(cfg.dims(train.vocab().size()), cfg.copy_enabled(), cfg.seed)?;
    let loss_cfg = NatLossConfig {
        smoothing: cfg.label_smoothing,
        length_weight: cfg.length_weight,
    };
    let mut opt = Adam::new(&nat.params);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x57d_e7);

    let init = eval.evaluate(&nat, 0, &gamma)?;
    let mut records = Vec::new();
    let mut best: Vec<(f64, usize, ParamStore)> = Vec::new();
    let (mut worse, mut skipped, mut seen) = (0, 0usize, 0usize);
    for step in 1..=cfg.steps {
        let idx = sample_batch(&mut rng, train.len(), cfg.batch_size);
        let xs: Vec<&TokenSeq> = idx.iter().map(|&i| &train.pairs[i].0).collect();
        let base: Vec<&TokenSeq> = idx.iter().map(|&i| &train_targets.base[i]).collect();
        let cands: Option<Vec<&CandidateSet>> = train_targets
            .candidates
            .as_ref()
            .map(|c| idx.iter().map(|&i| &c[i]).collect());
        let proxies = build_proxies(
            &nat,
            cfg,
            step,
            &xs,
            &base,
            cands.as_deref(),
            &gamma,
            &mut rng,
        )?;
        seen += proxies.len();
        skipped += proxies.iter().filter(|p| p.is_none()).count();
        if seen >= 100 && skipped * 100 > seen {
            return Err(NatError::Numeric(format!(
                "{skipped} of {seen} training pairs had no usable proxy (more than 1%)"
            )));
        }
        let batch: Vec<NatExample> = proxies.into_iter().flatten().map(|p| p.example).collect();
        if batch.is_empty() {
            continue;
        }
        let g = nat.batch_grads(&batch, loss_cfg)?;
        if !g.loss.is_finite() {
            return Err(NatError::Numeric(format!(
                "non-finite student loss at step {step}"
            )));
        }
        opt.step(
            &mut nat.params,
            &g.grads,
            learning_rate(cfg.lr, cfg.warmup, step),
        )?;
        nat.step = step as u64;
        if step % cfg.eval_every == 0 || step == cfg.steps {
            fit_mask_head(&mut nat, cfg, train, &train_targets, &gamma, step)?;
            let rec = eval.evaluate(&nat, step, &gamma)?;
            if !rec.l_nat.is_finite() {
                return Err(NatError::Numeric(format!(
                    "non-finite dev L_NAT at step {step}"
                )));
            }
            worse = if rec.l_nat > init.l_nat { worse + 1 } else { 0 };
            if worse >= 3 {
                return Err(NatError::Numeric(format!(
                    "student diverged: dev L_NAT {:.4} above initial {:.4} for 3 evaluations (step {step})",
                    rec.l_nat, init.l_nat
                )));
            }
            keep_best(&mut best, cfg.average_k, rec.bleu, step, &nat.params);
            records.push(rec);
        }
    }
    let stores: Vec<&ParamStore> = best.iter().map(|b| &b.2).collect();
    nat.params = average_params(&stores)?;
    fit_mask_head(&mut nat, cfg, train, &train_targets, &gamma, cfg.steps)?;
    let final_record = eval.evaluate(&nat, cfg.steps, &gamma)?;
    Ok(NatRun {
        model: nat,
        records,
        final_record,
        gamma,
        skipped,
    })
}
