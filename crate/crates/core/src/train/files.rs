//! File-backed training: corpora, distilled targets and checkpoints named by a
//! [`TrainConfig`].

use std::fs;
use std::path::Path;

use super::config::TrainConfig;
use super::student::{Distilled, NatRun};
use super::teacher::{distill, AtRun};
use crate::data::{load_corpus, ParallelCorpus};
use crate::error::{NatError, Result};
use crate::metrics::write_jsonl;
use crate::model::{AtModel, NatModel};

/// Loads `cfg.corpus` and holds out its last `dev_size` pairs.
pub fn load_splits(cfg: &TrainConfig) -> Result<(ParallelCorpus, ParallelCorpus)> {
    let path = cfg
        .corpus
        .as_ref()
        .ok_or_else(|| NatError::Config("config has no corpus".into()))?;
    let corpus = load_corpus(path)?;
    if cfg.dev_size == 0 || cfg.dev_size >= corpus.len() {
        return Err(NatError::Config(format!(
            "dev_size {} must be positive and below the corpus size {}",
            cfg.dev_size,
            corpus.len()
        )));
    }
    Ok(corpus.split_at(corpus.len() - cfg.dev_size))
}

/// Reads each distilled corpus in `cfg.teachers`; every one must hold the same
/// sources, in order, as `train` followed by `dev`.
pub fn load_teachers(
    cfg: &TrainConfig,
    train: &ParallelCorpus,
    dev: &ParallelCorpus,
) -> Result<Vec<Distilled>> {
    let mut out = Vec::with_capacity(cfg.teachers.len());
    for path in &cfg.teachers {
        let d = load_corpus(path)?;
        let same = d.len() == train.len() + dev.len()
            && d.sources().eq(train.sources().chain(dev.sources()));
        if !same {
            return Err(NatError::Config(format!(
                "{} does not distill the training corpus's sources",
                path.display()
            )));
        }
        let targets: Vec<_> = d.pairs.into_iter().map(|p| p.1).collect();
        let (a, b) = targets.split_at(train.len());
        out.push(Distilled {
            train: a.to_vec(),
            dev: b.to_vec(),
        });
    }
    Ok(out)
}

pub fn load_frozen(cfg: &TrainConfig) -> Result<Option<NatModel>> {
    cfg.frozen.as_deref().map(NatModel::load).transpose()
}

/// Beam outputs of `teacher` for every source of `corpus`, with the teacher and
/// search settings recorded as notes.
pub fn distill_corpus(
    teacher: &AtModel,
    corpus: &ParallelCorpus,
    beam: usize,
    length_penalty: f64,
    label: &str,
) -> Result<ParallelCorpus> {
    let xs: Vec<_> = corpus.sources().collect();
    let mut out = corpus.with_targets(distill(teacher, &xs, beam, length_penalty)?);
    out.refs.clear();
    out.notes.insert("teacher".into(), label.to_string());
    out.notes
        .insert("teacher_step".into(), teacher.step.to_string());
    out.notes.insert("beam".into(), beam.to_string());
    out.notes
        .insert("length_penalty".into(), format!("{length_penalty:?}"));
    Ok(out)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| NatError::io(path, e))
}

/// Checkpoint plus `config.txt` and `dev_nll.tsv` (`step<TAB>bits`).
pub fn save_at_run(run: &AtRun, cfg: &TrainConfig, dir: &Path) -> Result<()> {
    run.model.save(dir)?;
    write_text(&dir.join("config.txt"), &cfg.to_text())?;
    let log: String = run
        .dev_nll
        .iter()
        .map(|(s, v)| format!("{s}\t{v:?}\n"))
        .collect();
    write_text(&dir.join("dev_nll.tsv"), &log)
}

/// Checkpoint plus `config.txt`, `metrics.jsonl` (evaluations then the
/// averaged model) and `gamma.txt` when Dynamic KD weights were used.
pub fn save_nat_run(run: &NatRun, cfg: &TrainConfig, dir: &Path) -> Result<()> {
    run.model.save(dir)?;
    write_text(&dir.join("config.txt"), &cfg.to_text())?;
    let mut records = run.records.clone();
    records.push(run.final_record.clone());
    write_jsonl(&records, &dir.join("metrics.jsonl"))?;
    if !run.gamma.is_empty() {
        let g: Vec<String> = run.gamma.iter().map(|v| format!("{v:?}")).collect();
        write_text(&dir.join("gamma.txt"), &(g.join(",") + "\n"))?;
    }
    Ok(())
}
