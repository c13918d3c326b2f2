//! Reproducible experiments driven by checked-in configs.
//!
//! Each recipe returns a [`Report`]: the metrics records of every run it
//! trained plus a flat summary of the quantities the experiment is about.

mod lab;
mod spec;

use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

pub use lab::{Lab, Tier};
pub use spec::{override_lines, CorpusKind, CorpusSpec, RecipeSpec, Splits};

use crate::data::{EnumerableCond, NUM_RESERVED};
use crate::decode::{decoding_confidence, DecodeOptions, DecodeStrategy};
use crate::error::{NatError, Result};
use crate::metrics::{
    exact_kl, exact_tc, invalid_mass, pearson, write_csv, write_jsonl, MetricsRecord, TableModel,
};
use crate::model::InputPredictor;
use crate::proxy_input::MaskRule;
use crate::train::{
    dev_bleu, distill, train_at, train_nat, Distilled, NatInputs, NatRun, TrainConfig,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Recipe {
    Theorem1,
    Fig2Multimodality,
    Fig4LnatBelowC,
    Table2ProxyTargets,
    Table3ProxyInputs,
    Fig6Confidence,
    Fig7DynamicKd,
}

impl Recipe {
    pub const ALL: [Recipe; 7] = [
        Recipe::Theorem1,
        Recipe::Fig2Multimodality,
        Recipe::Fig4LnatBelowC,
        Recipe::Table2ProxyTargets,
        Recipe::Table3ProxyInputs,
        Recipe::Fig6Confidence,
        Recipe::Fig7DynamicKd,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Recipe::Theorem1 => "theorem1",
            Recipe::Fig2Multimodality => "fig2-multimodality",
            Recipe::Fig4LnatBelowC => "fig4-lnat-below-c",
            Recipe::Table2ProxyTargets => "table2-proxy-targets",
            Recipe::Table3ProxyInputs => "table3-proxy-inputs",
            Recipe::Fig6Confidence => "fig6-confidence",
            Recipe::Fig7DynamicKd => "fig7-dynamic-kd",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|r| r.name() == name)
            .ok_or_else(|| NatError::Config(format!("unknown recipe {name:?}")))
    }

    /// The checked-in config text.
    pub fn config_text(&self) -> &'static str {
        match self {
            Recipe::Theorem1 => include_str!("../../configs/theorem1.cfg"),
            Recipe::Fig2Multimodality => include_str!("../../configs/fig2-multimodality.cfg"),
            Recipe::Fig4LnatBelowC => include_str!("../../configs/fig4-lnat-below-c.cfg"),
            Recipe::Table2ProxyTargets => include_str!("../../configs/table2-proxy-targets.cfg"),
            Recipe::Table3ProxyInputs => include_str!("../../configs/table3-proxy-inputs.cfg"),
            Recipe::Fig6Confidence => include_str!("../../configs/fig6-confidence.cfg"),
            Recipe::Fig7DynamicKd => include_str!("../../configs/fig7-dynamic-kd.cfg"),
        }
    }

    pub fn default_spec(&self) -> Result<RecipeSpec> {
        RecipeSpec::parse(self.config_text())
    }

    /// Whether the recipe trains on the shared synthetic setting.
    pub fn uses_lab(&self) -> bool {
        !matches!(self, Recipe::Theorem1 | Recipe::Fig2Multimodality)
    }

    /// Runs the recipe, reusing `lab` when it was built from a compatible spec.
    pub fn run(&self, spec: &RecipeSpec, lab: Option<&Lab>) -> Result<Report> {
        if !self.uses_lab() {
            return match self {
                Recipe::Theorem1 => theorem1(spec),
                _ => fig2_multimodality(spec),
            };
        }
        let owned;
        let lab = match lab {
            Some(l) if l.serves(spec) => l,
            _ => {
                owned = Lab::build(spec)?;
                &owned
            }
        };
        match self {
            Recipe::Fig4LnatBelowC => fig4_lnat_below_c(spec, lab),
            Recipe::Table2ProxyTargets => correlate(spec, lab, self.name()),
            Recipe::Table3ProxyInputs => table3_proxy_inputs(spec, lab),
            Recipe::Fig6Confidence => fig6_confidence(spec, lab),
            _ => fig7_dynamic_kd(spec, lab),
        }
    }
}

/// Records plus named summary values, in insertion order.
#[derive(Clone, Debug, PartialEq)]
pub struct Report {
    pub recipe: String,
    pub records: Vec<MetricsRecord>,
    pub summary: Vec<(String, f64)>,
}

impl Report {
    fn new(recipe: &str) -> Self {
        Self {
            recipe: recipe.to_string(),
            records: Vec::new(),
            summary: Vec::new(),
        }
    }

    fn put(&mut self, key: impl Into<String>, value: f64) {
        self.summary.push((key.into(), value));
    }

    fn add_run(&mut self, run: &NatRun) {
        self.records.extend(run.records.iter().cloned());
        self.records.push(run.final_record.clone());
    }

    pub fn value(&self, key: &str) -> Option<f64> {
        self.summary.iter().find(|(k, _)| k == key).map(|(_, v)| *v)
    }

    /// `key = value` lines with round-trip precision.
    pub fn summary_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.summary {
            let _ = writeln!(s, "{k} = {v:?}");
        }
        s
    }

    /// Writes `metrics.jsonl`, `metrics.csv` and `summary.txt` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| NatError::io(dir, e))?;
        write_jsonl(&self.records, &dir.join("metrics.jsonl"))?;
        write_csv(&self.records, &dir.join("metrics.csv"))?;
        let path = dir.join("summary.txt");
        std::fs::write(&path, self.summary_text()).map_err(|e| NatError::io(&path, e))
    }
}

const TOY_SEED: u64 = 0x70e5;

/// Theorem 1 on random enumerable toys (every product model's KL is at least
/// the total correlation, the marginal-matching model attains it), then a
/// vanilla student trained on the two-mode toy.
pub fn theorem1(spec: &RecipeSpec) -> Result<Report> {
    let toys: usize = spec.param_num("toys", 50)?;
    let models: usize = spec.param_num("models", 200)?;
    let max_len: usize = spec.param_num("toy_max_len", 3)?;
    let max_content: usize = spec.param_num("toy_max_vocab", 8)?;
    let sources: usize = spec.param_num("toy_sources", 3)?;
    let modes: usize = spec.param_num("toy_modes", 4)?;
    if max_content < 2 {
        return Err(NatError::Config("toy_max_vocab must be at least 2".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ TOY_SEED);
    let (mut min_margin, mut max_gap) = (f64::INFINITY, 0.0f64);
    for _ in 0..toys {
        let content = rng.gen_range(2..=max_content);
        let cond = EnumerableCond::random(&mut rng, sources.min(content), max_len, content, modes)?;
        let tc = exact_tc(&cond)?.bits_per_sentence;
        let vocab = content + NUM_RESERVED;
        let matched = TableModel::marginal_matching(&cond, vocab);
        max_gap = max_gap.max((exact_kl(&cond, &matched)? - tc).abs());
        for _ in 0..models {
            let m = TableModel::random(&cond, vocab, &mut rng);
            min_margin = min_margin.min(exact_kl(&cond, &m)? - tc);
        }
    }
    let mut report = Report::new(Recipe::Theorem1.name());
    report.put("toys", toys as f64);
    report.put("models_per_toy", models as f64);
    report.put("min_kl_minus_tc", min_margin);
    report.put("max_matching_gap", max_gap);
    let (run, cond) = toy_student(spec)?;
    let tc = exact_tc(&cond)?.bits_per_sentence;
    let kl = exact_kl(&cond, &run.model)?;
    report.put("exact_tc", tc);
    report.put("exact_kl", kl);
    report.put("gap", kl - tc);
    report.put("invalid_mass", invalid_mass(&cond, &run.model)?);
    report.add_run(&run);
    Ok(report)
}

fn toy_splits(spec: &RecipeSpec) -> Result<(Splits, EnumerableCond)> {
    let splits = spec.corpus()?.build(spec.seed)?;
    let cond = splits.cond.clone().ok_or_else(|| {
        NatError::Config(
            "this recipe needs an enumerable corpus (corpus.kind = two_mode_toy)".into(),
        )
    })?;
    Ok((splits, cond))
}

fn toy_student(spec: &RecipeSpec) -> Result<(NatRun, EnumerableCond)> {
    let (splits, cond) = toy_splits(spec)?;
    let cfg = spec.train_config("vanilla", "target=raw; mask_rule=vanilla; copy=false")?;
    let run = train_nat(
        &cfg,
        NatInputs {
            train: &splits.train,
            dev: &splits.dev,
            distilled: &[],
            frozen: None,
        },
    )?;
    Ok((run, cond))
}

/// Probability a vanilla student puts on mode-mixing outputs, trained on raw
/// two-mode data versus on a teacher's single-mode outputs.
pub fn fig2_multimodality(spec: &RecipeSpec) -> Result<Report> {
    let (splits, cond) = toy_splits(spec)?;
    let raw_cfg = spec.train_config("raw", "target=raw; mask_rule=vanilla; copy=false")?;
    let raw = train_nat(
        &raw_cfg,
        NatInputs {
            train: &splits.train,
            dev: &splits.dev,
            distilled: &[],
            frozen: None,
        },
    )?;
    let tcfg = spec.teacher_config()?;
    let teacher = train_at(&tcfg, &splits.train, &splits.dev)?;
    let xs: Vec<_> = splits.train.pairs.iter().map(|p| &p.0).collect();
    let dxs: Vec<_> = splits.dev.pairs.iter().map(|p| &p.0).collect();
    let distilled = [Distilled {
        train: distill(&teacher.model, &xs, tcfg.kd_beam, tcfg.length_penalty)?,
        dev: distill(&teacher.model, &dxs, tcfg.kd_beam, tcfg.length_penalty)?,
    }];
    let kd_cfg = spec.train_config("kd", "target=kd; mask_rule=vanilla; copy=false")?;
    let kd = train_nat(
        &kd_cfg,
        NatInputs {
            train: &splits.train,
            dev: &splits.dev,
            distilled: &distilled,
            frozen: None,
        },
    )?;
    let mut report = Report::new(Recipe::Fig2Multimodality.name());
    report.put("exact_tc", exact_tc(&cond)?.bits_per_sentence);
    report.put("raw_exact_kl", exact_kl(&cond, &raw.model)?);
    report.put("raw_invalid_mass", invalid_mass(&cond, &raw.model)?);
    report.put("kd_invalid_mass", invalid_mass(&cond, &kd.model)?);
    report.add_run(&raw);
    report.add_run(&kd);
    Ok(report)
}

/// Trains every `run.*` entry of the spec on the lab, in file order.
fn run_all(spec: &RecipeSpec, lab: &Lab) -> Result<Vec<(TrainConfig, Arc<NatRun>)>> {
    let cfgs = spec
        .runs
        .iter()
        .map(|(n, _)| spec.run_config(n))
        .collect::<Result<Vec<_>>>()?;
    if cfgs.iter().any(|c| c.mask_rule != MaskRule::Vanilla) {
        lab.frozen(spec)?;
    }
    cfgs.into_par_iter()
        .map(|c| lab.run(spec, &c).map(|r| (c, r)))
        .collect()
}

fn with_c_hat(run: &NatRun, c_hat: f64) -> NatRun {
    let mut r = run.clone();
    r.final_record.c_hat = Some(c_hat);
    r
}

fn put_estimate(report: &mut Report, lab: &Lab) {
    report.put("c_hat", lab.c_hat.c_hat);
    report.put("c_hat.nat_nll", lab.c_hat.nat_nll);
    report.put("c_hat.at_nll", lab.c_hat.at_nll);
    report.put("c_hat.length_nll", lab.c_hat.length_nll);
}

/// Dev `L_NAT` of each configured run against the raw corpus's estimated
/// total correlation.
pub fn fig4_lnat_below_c(spec: &RecipeSpec, lab: &Lab) -> Result<Report> {
    let mut report = Report::new(Recipe::Fig4LnatBelowC.name());
    put_estimate(&mut report, lab);
    for (cfg, run) in run_all(spec, lab)? {
        let l = run.final_record.l_nat;
        report.put(format!("l_nat.{}", cfg.name), l);
        report.put(
            format!("below_c.{}", cfg.name),
            f64::from(u8::from(l < lab.c_hat.c_hat)),
        );
        report.add_run(&with_c_hat(&run, lab.c_hat.c_hat));
    }
    Ok(report)
}

/// `L_MPLE` with the target term rescaled from the run's `beta` to `beta`.
fn mple_at(rec: &MetricsRecord, run_beta: f64, beta: f64) -> Result<f64> {
    if run_beta <= 0.0 {
        return Err(NatError::Config(
            "correlation grids need runs with beta > 0".into(),
        ));
    }
    Ok(rec.l_nat + rec.l_input + rec.l_target_hat * beta / run_beta)
}

fn put_correlations(
    report: &mut Report,
    tag: &str,
    rows: &[(f64, &MetricsRecord, f64)],
    betas: &[f64],
) -> Result<()> {
    for &beta in betas {
        let mple = rows
            .iter()
            .map(|(b, rec, _)| mple_at(rec, *b, beta))
            .collect::<Result<Vec<_>>>()?;
        let bleu: Vec<f64> = rows.iter().map(|r| r.2).collect();
        report.put(format!("{tag}.beta={beta}"), pearson(&mple, &bleu)?);
    }
    Ok(())
}

/// Trains the configured grid and reports the Pearson correlation between
/// `L_MPLE` and dev BLEU for each `beta` in `betas`.
pub fn correlate(spec: &RecipeSpec, lab: &Lab, name: &str) -> Result<Report> {
    let betas = spec.param_list("betas", &[0.1, 0.2, 0.5])?;
    let mut report = Report::new(name);
    put_estimate(&mut report, lab);
    let runs = run_all(spec, lab)?;
    for (cfg, run) in &runs {
        let r = &run.final_record;
        for (k, v) in [
            ("l_nat", r.l_nat),
            ("l_input", r.l_input),
            ("l_target_hat", r.l_target_hat),
            ("l_mple", r.l_mple),
            ("bleu", r.bleu),
        ] {
            report.put(format!("{k}.{}", cfg.name), v);
        }
        report.add_run(&with_c_hat(run, lab.c_hat.c_hat));
    }
    let rows: Vec<(f64, &MetricsRecord, f64)> = runs
        .iter()
        .map(|(c, r)| (c.beta, &r.final_record, r.final_record.bleu))
        .collect();
    put_correlations(&mut report, "pearson", &rows, &betas)?;
    Ok(report)
}

fn strategy_bleu(
    lab: &Lab,
    run: &NatRun,
    ip: &InputPredictor,
    cfg: &TrainConfig,
    strategy: DecodeStrategy,
) -> Result<f64> {
    let mut c = cfg.clone();
    c.decode = strategy;
    dev_bleu(&run.model, Some(ip), &lab.splits.dev, &c)
}

/// The proxy-input grid: BLEU under both decoding strategies and the
/// correlation of `L_MPLE` with each.
pub fn table3_proxy_inputs(spec: &RecipeSpec, lab: &Lab) -> Result<Report> {
    let betas = spec.param_list("betas", &[0.1, 0.2, 0.5])?;
    let mut report = Report::new(Recipe::Table3ProxyInputs.name());
    let runs = run_all(spec, lab)?;
    let ip = InputPredictor::new(lab.frozen(spec)?.model.clone());
    let mut sample = Vec::new();
    let mut default = Vec::new();
    for (cfg, run) in &runs {
        let s = strategy_bleu(lab, run, &ip, cfg, DecodeStrategy::InputSampling)?;
        let d = strategy_bleu(lab, run, &ip, cfg, DecodeStrategy::Default)?;
        let r = &run.final_record;
        for (k, v) in [
            ("l_input", r.l_input),
            ("l_nat", r.l_nat),
            ("l_mple", r.l_mple),
            ("bleu_sample", s),
            ("bleu_default", d),
        ] {
            report.put(format!("{k}.{}", cfg.name), v);
        }
        sample.push((cfg.beta, r, s));
        default.push((cfg.beta, r, d));
        report.add_run(run);
    }
    put_correlations(&mut report, "pearson_sample", &sample, &betas)?;
    put_correlations(&mut report, "pearson_default", &default, &betas)?;
    Ok(report)
}

/// Dev BLEU and mean decoding confidence (bits per position) of each run
/// under both decoding strategies.
pub fn fig6_confidence(spec: &RecipeSpec, lab: &Lab) -> Result<Report> {
    let mut report = Report::new(Recipe::Fig6Confidence.name());
    let runs = run_all(spec, lab)?;
    let ip = InputPredictor::new(lab.frozen(spec)?.model.clone());
    for (cfg, run) in &runs {
        for strategy in [DecodeStrategy::Default, DecodeStrategy::InputSampling] {
            let opts = DecodeOptions {
                strategy,
                seed: cfg.seed,
                ..Default::default()
            };
            let mut total = 0.0;
            for (x, _) in &lab.splits.dev.pairs {
                total += decoding_confidence(&run.model, Some(&ip), x, &opts)?;
            }
            let i = total / lab.splits.dev.len() as f64;
            report.put(format!("confidence.{}.{}", cfg.name, strategy.name()), i);
            report.put(
                format!("bleu.{}.{}", cfg.name, strategy.name()),
                strategy_bleu(lab, run, &ip, cfg, strategy)?,
            );
        }
        report.add_run(run);
    }
    Ok(report)
}

/// Single-teacher distillation for every tier against Dynamic KD over all
/// tiers, with and without the target regulariser.
pub fn fig7_dynamic_kd(spec: &RecipeSpec, lab: &Lab) -> Result<Report> {
    if spec.tiers.len() < 2 {
        return Err(NatError::Config(
            "fig7 needs at least two tier.* teachers".into(),
        ));
    }
    let tiers = spec
        .tiers
        .iter()
        .map(|(n, o)| lab.tier(spec, n, o))
        .collect::<Result<Vec<_>>>()?;
    let dynamic = spec.param("dynamic").unwrap_or("");
    let mut jobs: Vec<(TrainConfig, Vec<Arc<Tier>>)> = Vec::new();
    for t in &tiers {
        jobs.push((
            spec.train_config(&format!("kd_{}", t.name), "target=kd")?,
            vec![t.clone()],
        ));
    }
    jobs.push((
        spec.train_config("dynamic_kd", &format!("target=dynamic_kd; {dynamic}"))?,
        tiers.clone(),
    ));
    jobs.push((
        spec.train_config(
            "dynamic_kd_beta0",
            &format!("target=dynamic_kd; {dynamic}; beta=0"),
        )?,
        tiers.clone(),
    ));
    let runs = jobs
        .into_par_iter()
        .map(|(cfg, ts)| lab.train(&cfg, &ts, None).map(|r| (cfg, r)))
        .collect::<Result<Vec<_>>>()?;
    let mut report = Report::new(Recipe::Fig7DynamicKd.name());
    for t in &tiers {
        report.put(
            format!("teacher_dev_nll.{}", t.name),
            t.teacher.dev_nll.last().map_or(f64::NAN, |v| v.1),
        );
    }
    report.put("bleu.raw", lab.raw.final_record.bleu);
    let mut best_single = f64::NEG_INFINITY;
    for (cfg, run) in &runs {
        report.put(format!("bleu.{}", cfg.name), run.final_record.bleu);
        if cfg.name.starts_with("kd_") {
            best_single = best_single.max(run.final_record.bleu);
        }
        if cfg.name == "dynamic_kd" {
            for (i, g) in run.gamma.iter().enumerate() {
                report.put(format!("gamma.{i}"), *g);
            }
        }
        report.add_run(run);
    }
    report.put("bleu.best_single", best_single);
    Ok(report)
}
