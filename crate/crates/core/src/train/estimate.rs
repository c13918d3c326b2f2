use super::config::{TargetMethod, TrainConfig};
use super::student::{train_nat, NatInputs};
use super::teacher::train_at;
use crate::data::{ParallelCorpus, MASK};
use crate::error::{NatError, Result};
use crate::metrics::nats_to_bits;
use crate::model::{length_class, AtModel, NatModel};
use crate::proxy_input::MaskRule;

/// Held-out estimate of the conditional total correlation, bits per target token.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TcEstimate {
    /// `nat_nll - (at_nll - length_nll)`.
    pub c_hat: f64,
    /// Parallel model's NLL of the targets at their true length.
    pub nat_nll: f64,
    /// Autoregressive NLL of the targets including the end-of-sentence step.
    pub at_nll: f64,
    /// Length model's NLL of the true lengths; removes the length information
    /// the end-of-sentence step carries, so both sides condition on length.
    pub length_nll: f64,
}

fn same_family(a: &TrainConfig, n: &TrainConfig) -> bool {
    (
        a.d_model,
        a.d_ff,
        a.heads,
        a.enc_layers,
        a.dec_layers,
        a.max_len,
    ) == (
        n.d_model,
        n.d_ff,
        n.heads,
        n.enc_layers,
        n.dec_layers,
        n.max_len,
    )
}

/// Trains an autoregressive and a vanilla parallel model of the same size on
/// all but the last `heldout` pairs and compares their held-out likelihoods.
pub fn estimate_tc(
    corpus: &ParallelCorpus,
    at_cfg: &TrainConfig,
    nat_cfg: &TrainConfig,
    heldout: usize,
) -> Result<TcEstimate> {
    if !same_family(at_cfg, nat_cfg) {
        return Err(NatError::Config(
            "estimate_tc needs the same trunk dimensions for both estimators".into(),
        ));
    }
    if heldout == 0 || heldout >= corpus.len() {
        return Err(NatError::Config(
            "held-out split must be non-empty and leave training pairs".into(),
        ));
    }
    let mut nat_cfg = nat_cfg.clone();
    nat_cfg.target = TargetMethod::Raw;
    nat_cfg.mask_rule = MaskRule::Vanilla;
    nat_cfg.copy = Some(false);
    let (train, test) = corpus.split_at(corpus.len() - heldout);
    let at = train_at(at_cfg, &train, &test)?.model;
    let nat = train_nat(
        &nat_cfg,
        NatInputs {
            train: &train,
            dev: &test,
            distilled: &[],
            frozen: None,
        },
    )?
    .model;
    heldout_tc(&at, &nat, &test)
}

/// The estimate from already trained models.
pub fn heldout_tc(at: &AtModel, nat: &NatModel, test: &ParallelCorpus) -> Result<TcEstimate> {
    let (mut nat_total, mut at_total, mut len_total, mut tokens) = (0.0, 0.0, 0.0, 0usize);
    for chunk in test.pairs.chunks(64) {
        let pairs: Vec<(&[usize], &[usize])> =
            chunk.iter().map(|(x, y)| (&x[..], &y[..])).collect();
        for s in at.score_batch(&pairs)? {
            at_total -= s.sum + s.eos_logprob;
        }
        let masks: Vec<Vec<usize>> = chunk.iter().map(|(_, y)| vec![MASK; y.len()]).collect();
        let items: Vec<(&[usize], &[usize])> = chunk
            .iter()
            .zip(&masks)
            .map(|((x, _), z)| (&x[..], &z[..]))
            .collect();
        for (d, (_, y)) in nat.position_probs_batch(&items)?.iter().zip(chunk) {
            nat_total -= y.iter().zip(d).map(|(&t, row)| row[t].ln()).sum::<f64>();
            tokens += y.len();
        }
        let xs: Vec<&[usize]> = chunk.iter().map(|(x, _)| &x[..]).collect();
        for (p, (x, y)) in nat.length_probs_batch(&xs)?.iter().zip(chunk) {
            len_total -= p[length_class(x.len(), y.len())].ln();
        }
    }
    let per = |v: f64| nats_to_bits(v / tokens as f64);
    Ok(TcEstimate {
        c_hat: per(nat_total - at_total + len_total),
        nat_nll: per(nat_total),
        at_nll: per(at_total),
        length_nll: per(len_total),
    })
}
