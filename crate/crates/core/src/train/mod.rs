//! Teacher training, the student's proxy-likelihood training loop, checkpoint
//! averaging, and the model-based total-correlation estimate.

mod config;
mod estimate;
mod files;
mod optim;
mod student;
mod teacher;

use std::path::Path;

use natlab_compute::ParamStore;

pub use config::{TargetMethod, TrainConfig};
pub use estimate::{estimate_tc, heldout_tc, TcEstimate};
pub use files::{
    distill_corpus, load_frozen, load_splits, load_teachers, save_at_run, save_nat_run,
};
pub use optim::{learning_rate, Adam};
pub use student::{dev_bleu, evaluate_nat, train_nat, Distilled, NatInputs, NatRun};
pub use teacher::{at_corpus_nll, distill, train_at, AtRun};

use crate::error::{invalid, Result};
use crate::model::{checkpoint_kind, AtModel, NatModel};

/// Keeps the `k` best `(score, step, params)` entries, higher scores first;
/// later steps win ties.
pub(crate) fn keep_best(
    best: &mut Vec<(f64, usize, ParamStore)>,
    k: usize,
    score: f64,
    step: usize,
    params: &ParamStore,
) {
    best.push((score, step, params.clone()));
    best.sort_by(|a, b| b.0.total_cmp(&a.0).then(b.1.cmp(&a.1)));
    best.truncate(k);
}

/// Element-wise mean of parameter stores with identical layouts.
pub fn average_params(stores: &[&ParamStore]) -> Result<ParamStore> {
    if stores.is_empty() {
        return invalid("nothing to average");
    }
    Ok(ParamStore::average(stores)?)
}

/// Averages the parameters of checkpoints of one kind; the first checkpoint
/// supplies everything else (dims, seed, step).
pub fn average_checkpoints(paths: &[&Path]) -> Result<AveragedModel> {
    if paths.is_empty() {
        return invalid("average_checkpoints needs at least one checkpoint");
    }
    match checkpoint_kind(paths[0])?.as_str() {
        "at" => {
            let models = paths
                .iter()
                .map(|p| AtModel::load(p))
                .collect::<Result<Vec<_>>>()?;
            let mut out = models[0].clone();
            out.params = average_params(&models.iter().map(|m| &m.params).collect::<Vec<_>>())?;
            Ok(AveragedModel::At(out))
        }
        _ => {
            let models = paths
                .iter()
                .map(|p| NatModel::load(p))
                .collect::<Result<Vec<_>>>()?;
            let mut out = models[0].clone();
            out.params = average_params(&models.iter().map(|m| &m.params).collect::<Vec<_>>())?;
            Ok(AveragedModel::Nat(out))
        }
    }
}

#[derive(Clone, Debug)]
pub enum AveragedModel {
    At(AtModel),
    Nat(NatModel),
}

#[cfg(test)]
mod tests {
    use super::*;
    use natlab_compute::Tensor;

    #[test]
    fn averaging_is_elementwise_mean() {
        let mut a = ParamStore::new();
        a.insert("w", Tensor::vector(vec![0.0, 0.0]));
        let mut b = ParamStore::new();
        b.insert("w", Tensor::vector(vec![2.0, 2.0]));
        let m = average_params(&[&a, &b]).unwrap();
        assert_eq!(m.by_name("w").unwrap().data(), &[1.0, 1.0]);
        assert_eq!(
            average_params(&[&a]).unwrap().by_name("w").unwrap().data(),
            a.by_name("w").unwrap().data()
        );
        let mut c = ParamStore::new();
        c.insert("w", Tensor::vector(vec![1.0]));
        assert!(average_params(&[&a, &c]).is_err());
    }

    #[test]
    fn keep_best_orders_and_truncates() {
        let p = ParamStore::new();
        let mut best = Vec::new();
        for (s, step) in [(1.0, 1), (3.0, 2), (2.0, 3), (3.0, 4)] {
            keep_best(&mut best, 2, s, step, &p);
        }
        let steps: Vec<usize> = best.iter().map(|b| b.1).collect();
        assert_eq!(steps, vec![4, 2]);
    }
}
