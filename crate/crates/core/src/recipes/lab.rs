//! A trained setting shared by several recipes: corpus splits, the teacher and
//! its distilled targets, the raw-data students behind the total-correlation
//! estimate, and a cache of finished student runs.

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};

use super::spec::{RecipeSpec, Splits};
use crate::error::{NatError, Result};
use crate::model::NatModel;
use crate::proxy_input::MaskRule;
use crate::train::{
    distill, heldout_tc, train_at, train_nat, AtRun, Distilled, NatInputs, NatRun, TargetMethod,
    TcEstimate, TrainConfig,
};

/// One teacher with its beam outputs for the train and dev sources.
pub struct Tier {
    pub name: String,
    pub teacher: AtRun,
    pub distilled: Distilled,
}

pub struct Lab {
    pub spec: RecipeSpec,
    pub splits: Splits,
    pub base: Arc<Tier>,
    /// The raw-data vanilla student used for the estimate.
    pub raw: Arc<NatRun>,
    pub c_hat: TcEstimate,
    tiers: Mutex<BTreeMap<String, Arc<Tier>>>,
    runs: Mutex<BTreeMap<String, Arc<NatRun>>>,
}

fn distill_tier(name: &str, teacher: AtRun, cfg: &TrainConfig, splits: &Splits) -> Result<Tier> {
    let xs: Vec<_> = splits.train.pairs.iter().map(|p| &p.0).collect();
    let dxs: Vec<_> = splits.dev.pairs.iter().map(|p| &p.0).collect();
    let distilled = Distilled {
        train: distill(&teacher.model, &xs, cfg.kd_beam, cfg.length_penalty)?,
        dev: distill(&teacher.model, &dxs, cfg.kd_beam, cfg.length_penalty)?,
    };
    Ok(Tier {
        name: name.to_string(),
        teacher,
        distilled,
    })
}

fn same_trunk(a: &TrainConfig, b: &TrainConfig) -> bool {
    (
        a.d_model,
        a.d_ff,
        a.heads,
        a.enc_layers,
        a.dec_layers,
        a.max_len,
    ) == (
        b.d_model,
        b.d_ff,
        b.heads,
        b.enc_layers,
        b.dec_layers,
        b.max_len,
    )
}

/// Cache key: the full config without its label.
fn run_key(cfg: &TrainConfig, tiers: &[&str]) -> String {
    let mut c = cfg.clone();
    c.name.clear();
    format!("{}|{}", c.to_text(), tiers.join(","))
}

fn relabel(run: &NatRun, name: &str) -> NatRun {
    let mut r = run.clone();
    for rec in r
        .records
        .iter_mut()
        .chain(std::iter::once(&mut r.final_record))
    {
        rec.config = name.to_string();
    }
    r
}

impl Lab {
    /// Trains the teacher, distills both splits, and estimates the corpus's
    /// total correlation with the teacher and a raw-data vanilla student.
    pub fn build(spec: &RecipeSpec) -> Result<Self> {
        let splits = spec.corpus()?.build(spec.seed)?;
        let tcfg = spec.teacher_config()?;
        let raw_cfg = spec.train_config(
            "raw",
            "target=raw; mask_rule=vanilla; copy=false; decode=default",
        )?;
        if !same_trunk(&tcfg, &raw_cfg) {
            return Err(NatError::Config(
                "teacher and student must share trunk dimensions for the total-correlation estimate".into(),
            ));
        }
        let teacher = train_at(&tcfg, &splits.train, &splits.dev)?;
        let base = Arc::new(distill_tier("base", teacher, &tcfg, &splits)?);
        let raw = train_nat(
            &raw_cfg,
            NatInputs {
                train: &splits.train,
                dev: &splits.dev,
                distilled: &[],
                frozen: None,
            },
        )?;
        let c_hat = heldout_tc(&base.teacher.model, &raw.model, &splits.dev)?;
        let raw = Arc::new(raw);
        let mut runs = BTreeMap::new();
        runs.insert(run_key(&raw_cfg, &[]), raw.clone());
        Ok(Self {
            spec: spec.clone(),
            splits,
            base,
            raw,
            c_hat,
            tiers: Mutex::new(BTreeMap::new()),
            runs: Mutex::new(runs),
        })
    }

    /// Whether `other` describes the same corpus, teacher and base settings.
    pub fn serves(&self, other: &RecipeSpec) -> bool {
        self.spec.seed == other.seed
            && self.spec.corpus == other.corpus
            && self.spec.train == other.train
            && self.spec.teacher == other.teacher
    }

    /// A teacher tier by name; an override list that reproduces the base
    /// teacher's config reuses it.
    pub fn tier(&self, spec: &RecipeSpec, name: &str, overrides: &str) -> Result<Arc<Tier>> {
        let cfg = spec.tier_config(name, overrides)?;
        let mut base_cfg = spec.teacher_config()?;
        base_cfg.name = cfg.name.clone();
        if cfg == base_cfg {
            return Ok(self.base.clone());
        }
        let key = run_key(&cfg, &[]);
        if let Some(t) = self.tiers.lock().expect("tier cache").get(&key) {
            return Ok(t.clone());
        }
        let teacher = train_at(&cfg, &self.splits.train, &self.splits.dev)?;
        let tier = Arc::new(distill_tier(name, teacher, &cfg, &self.splits)?);
        self.tiers
            .lock()
            .expect("tier cache")
            .insert(key, tier.clone());
        Ok(tier)
    }

    /// Vanilla student on the configured frozen target, backing the input predictor.
    pub fn frozen(&self, spec: &RecipeSpec) -> Result<Arc<NatRun>> {
        let target = spec.param("frozen_target").unwrap_or("kd");
        let cfg = spec.train_config(
            "frozen",
            &format!("target={target}; mask_rule=vanilla; copy=auto; decode=default"),
        )?;
        self.train(&cfg, std::slice::from_ref(&self.base), None)
    }

    /// Trains (or fetches) a student on the base teacher's targets.
    pub fn run(&self, spec: &RecipeSpec, cfg: &TrainConfig) -> Result<Arc<NatRun>> {
        if cfg.mask_rule == MaskRule::Vanilla {
            return self.train(cfg, std::slice::from_ref(&self.base), None);
        }
        let frozen = self.frozen(spec)?;
        let label = format!("frozen={}", spec.param("frozen_target").unwrap_or("kd"));
        self.train(
            cfg,
            std::slice::from_ref(&self.base),
            Some((&label, &frozen.model)),
        )
    }

    /// Trains (or fetches) a student on the given tiers' targets; `frozen`
    /// carries a cache label for the input predictor's model.
    pub fn train(
        &self,
        cfg: &TrainConfig,
        tiers: &[Arc<Tier>],
        frozen: Option<(&str, &NatModel)>,
    ) -> Result<Arc<NatRun>> {
        let uses_teacher = match cfg.target {
            TargetMethod::Raw => false,
            TargetMethod::Axe { .. } | TargetMethod::Oaxe => cfg.align_on_kd,
            TargetMethod::Kd | TargetMethod::DynamicKd => true,
        };
        let mut names: Vec<&str> = if uses_teacher {
            tiers.iter().map(|t| t.name.as_str()).collect()
        } else {
            Vec::new()
        };
        names.extend(frozen.map(|f| f.0));
        let key = run_key(cfg, &names);
        if let Some(r) = self.runs.lock().expect("run cache").get(&key) {
            return Ok(Arc::new(relabel(r, &cfg.name)));
        }
        let distilled: Vec<Distilled> = tiers.iter().map(|t| t.distilled.clone()).collect();
        let inputs = NatInputs {
            train: &self.splits.train,
            dev: &self.splits.dev,
            distilled: &distilled,
            frozen: frozen.map(|f| f.1),
        };
        let run = Arc::new(train_nat(cfg, inputs)?);
        self.runs
            .lock()
            .expect("run cache")
            .insert(key, run.clone());
        Ok(run)
    }
}
