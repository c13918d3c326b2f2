//! Training configuration as flat `key = value` text. Blank lines and lines
//! starting with `#` are ignored; unknown keys are errors.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::decode::DecodeStrategy;
use crate::error::{NatError, Result};
use crate::model::ModelDims;
use crate::proxy_input::{LambdaSchedule, MaskRule};

/// How the proxy target T is built for each training pair.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum TargetMethod {
    Raw,
    Kd,
    /// Monotonic alignment of the base target with skip penalty `delta`.
    Axe {
        delta: f64,
    },
    /// Best permutation of the base target.
    Oaxe,
    /// Per-sample choice among the raw target and every teacher's output.
    DynamicKd,
}

impl TargetMethod {
    pub fn name(&self) -> &'static str {
        match self {
            TargetMethod::Raw => "raw",
            TargetMethod::Kd => "kd",
            TargetMethod::Axe { .. } => "axe",
            TargetMethod::Oaxe => "oaxe",
            TargetMethod::DynamicKd => "dynamic_kd",
        }
    }

    fn parse(name: &str, delta: f64) -> Result<Self> {
        Ok(match name {
            "raw" => TargetMethod::Raw,
            "kd" => TargetMethod::Kd,
            "axe" => TargetMethod::Axe { delta },
            "oaxe" => TargetMethod::Oaxe,
            "dynamic_kd" => TargetMethod::DynamicKd,
            other => return Err(NatError::Config(format!("unknown target method {other:?}"))),
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    /// Label used in metrics records.
    pub name: String,
    pub corpus: Option<PathBuf>,
    /// The last `dev_size` pairs of the corpus are held out.
    pub dev_size: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub heads: usize,
    pub enc_layers: usize,
    pub dec_layers: usize,
    pub max_len: usize,
    pub target: TargetMethod,
    /// Alignment-based targets start from teacher outputs instead of the raw reference.
    pub align_on_kd: bool,
    /// Steps of plain likelihood training before alignment-based targets kick in.
    pub pretrain_steps: usize,
    pub beta: f64,
    /// Dynamic KD candidate weights; empty means tune them on dev.
    pub gamma: Vec<f64>,
    pub teachers: Vec<PathBuf>,
    pub kd_beam: usize,
    pub length_penalty: f64,
    pub mask_rule: MaskRule,
    /// Copy unmasked inputs; `None` turns it on for every non-vanilla rule.
    pub copy: Option<bool>,
    /// Frozen vanilla model for the input predictor.
    pub frozen: Option<PathBuf>,
    pub lr: f64,
    pub warmup: usize,
    pub steps: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub eval_every: usize,
    pub average_k: usize,
    pub label_smoothing: f64,
    pub length_weight: f64,
    pub mask_head_steps: usize,
    pub decode: DecodeStrategy,
    /// Monte-Carlo samples of Z per dev pair for the input term.
    pub input_samples: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            name: "run".to_string(),
            corpus: None,
            dev_size: 200,
            d_model: 32,
            d_ff: 64,
            heads: 2,
            enc_layers: 1,
            dec_layers: 1,
            max_len: 24,
            target: TargetMethod::Raw,
            align_on_kd: false,
            pretrain_steps: 0,
            beta: 0.2,
            gamma: Vec::new(),
            teachers: Vec::new(),
            kd_beam: 5,
            length_penalty: 1.0,
            mask_rule: MaskRule::Vanilla,
            copy: None,
            frozen: None,
            lr: 5e-4,
            warmup: 500,
            steps: 2000,
            batch_size: 32,
            seed: 1,
            eval_every: 250,
            average_k: 3,
            label_smoothing: 0.1,
            length_weight: 0.1,
            mask_head_steps: 300,
            decode: DecodeStrategy::Default,
            input_samples: 4,
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| NatError::Config(format!("bad value {v:?} for {key}")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "on" | "yes" => Ok(true),
        "false" | "off" | "no" => Ok(false),
        _ => Err(NatError::Config(format!("bad boolean {v:?} for {key}"))),
    }
}

fn parse_list<T: std::str::FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse_num(key, s))
        .collect()
}

impl TrainConfig {
    pub fn dims(&self, vocab: usize) -> ModelDims {
        ModelDims {
            vocab,
            d_model: self.d_model,
            d_ff: self.d_ff,
            heads: self.heads,
            enc_layers: self.enc_layers,
            dec_layers: self.dec_layers,
            max_len: self.max_len,
        }
    }

    pub fn copy_enabled(&self) -> bool {
        self.copy.unwrap_or(self.mask_rule != MaskRule::Vanilla)
    }

    /// Parses config text; `base` supplies values for keys not mentioned.
    pub fn parse_with(text: &str, base: TrainConfig) -> Result<Self> {
        let mut c = base;
        let mut rule_name = c.mask_rule.name().to_string();
        let mut ratio = match c.mask_rule {
            MaskRule::CmlmFixed { ratio } => ratio,
            _ => 0.5,
        };
        let mut schedule = match c.mask_rule {
            MaskRule::Glat { schedule, .. } => schedule,
            _ => LambdaSchedule::default(),
        };
        let mut target_name = c.target.name().to_string();
        let mut delta = match c.target {
            TargetMethod::Axe { delta } => delta,
            _ => 1.0,
        };
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| NatError::Config(format!("line {}: expected key = value", n + 1)))?;
            let (k, v) = (k.trim(), v.trim());
            match k {
                "name" => c.name = v.to_string(),
                "corpus" => c.corpus = Some(PathBuf::from(v)),
                "dev_size" => c.dev_size = parse_num(k, v)?,
                "d_model" => c.d_model = parse_num(k, v)?,
                "d_ff" => c.d_ff = parse_num(k, v)?,
                "heads" => c.heads = parse_num(k, v)?,
                "enc_layers" => c.enc_layers = parse_num(k, v)?,
                "dec_layers" => c.dec_layers = parse_num(k, v)?,
                "max_len" => c.max_len = parse_num(k, v)?,
                "target" => target_name = v.to_string(),
                "axe_delta" | "skip_penalty" => delta = parse_num(k, v)?,
                "align_on_kd" => c.align_on_kd = parse_bool(k, v)?,
                "pretrain_steps" => c.pretrain_steps = parse_num(k, v)?,
                "beta" => c.beta = parse_num(k, v)?,
                "gamma" => {
                    c.gamma = if v == "auto" {
                        Vec::new()
                    } else {
                        parse_list(k, v)?
                    }
                }
                "teachers" => {
                    c.teachers = v
                        .split(',')
                        .map(str::trim)
                        .filter(|s| !s.is_empty())
                        .map(PathBuf::from)
                        .collect()
                }
                "kd_beam" => c.kd_beam = parse_num(k, v)?,
                "length_penalty" => c.length_penalty = parse_num(k, v)?,
                "mask_rule" => rule_name = v.to_string(),
                "mask_ratio" => ratio = parse_num(k, v)?,
                "lambda_start" => schedule.start = parse_num(k, v)?,
                "lambda_end" => schedule.end = parse_num(k, v)?,
                "lambda_horizon" => schedule.horizon = parse_num(k, v)?,
                "copy" => {
                    c.copy = if v == "auto" {
                        None
                    } else {
                        Some(parse_bool(k, v)?)
                    }
                }
                "frozen" => c.frozen = Some(PathBuf::from(v)),
                "lr" => c.lr = parse_num(k, v)?,
                "warmup" => c.warmup = parse_num(k, v)?,
                "steps" => c.steps = parse_num(k, v)?,
                "batch_size" => c.batch_size = parse_num(k, v)?,
                "seed" => c.seed = parse_num(k, v)?,
                "eval_every" => c.eval_every = parse_num(k, v)?,
                "average_k" => c.average_k = parse_num(k, v)?,
                "label_smoothing" => c.label_smoothing = parse_num(k, v)?,
                "length_weight" => c.length_weight = parse_num(k, v)?,
                "mask_head_steps" => c.mask_head_steps = parse_num(k, v)?,
                "decode" => c.decode = DecodeStrategy::parse(v)?,
                "input_samples" => c.input_samples = parse_num(k, v)?,
                other => {
                    return Err(NatError::Config(format!(
                        "line {}: unknown key {other:?}",
                        n + 1
                    )))
                }
            }
        }
        c.target = TargetMethod::parse(&target_name, delta)?;
        c.mask_rule = MaskRule::parse(&rule_name, ratio, schedule)
            .map_err(|e| NatError::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::parse_with(text, TrainConfig::default())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| NatError::io(path, e))?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(NatError::Config(m.to_string()));
        if self.steps == 0 || self.batch_size == 0 || self.eval_every == 0 {
            return bad("steps, batch_size and eval_every must be positive");
        }
        if self.warmup > self.steps {
            return bad("warmup must not exceed steps");
        }
        if self.average_k == 0 {
            return bad("average_k must be at least 1");
        }
        if !(self.lr > 0.0) || !(0.0..1.0).contains(&self.label_smoothing) {
            return bad("lr must be positive and label_smoothing in [0,1)");
        }
        if let TargetMethod::Axe { delta } = self.target {
            if !(delta >= 0.0) {
                return bad("axe_delta must be non-negative");
            }
        }
        if self.kd_beam == 0 {
            return bad("kd_beam must be at least 1");
        }
        self.mask_rule
            .validate()
            .map_err(|e| NatError::Config(e.to_string()))?;
        self.dims(NUM_VOCAB_PLACEHOLDER)
            .validate()
            .map_err(|e| NatError::Config(e.to_string()))
    }

    /// Text form accepted by [`TrainConfig::parse`].
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("name", self.name.clone());
        if let Some(p) = &self.corpus {
            kv("corpus", p.display().to_string());
        }
        kv("dev_size", self.dev_size.to_string());
        kv("d_model", self.d_model.to_string());
        kv("d_ff", self.d_ff.to_string());
        kv("heads", self.heads.to_string());
        kv("enc_layers", self.enc_layers.to_string());
        kv("dec_layers", self.dec_layers.to_string());
        kv("max_len", self.max_len.to_string());
        kv("target", self.target.name().to_string());
        if let TargetMethod::Axe { delta } = self.target {
            kv("axe_delta", format!("{delta:?}"));
        }
        kv("align_on_kd", self.align_on_kd.to_string());
        kv("pretrain_steps", self.pretrain_steps.to_string());
        kv("beta", format!("{:?}", self.beta));
        if self.gamma.is_empty() {
            kv("gamma", "auto".to_string());
        } else {
            kv(
                "gamma",
                self.gamma
                    .iter()
                    .map(|g| format!("{g:?}"))
                    .collect::<Vec<_>>()
                    .join(","),
            );
        }
        if !self.teachers.is_empty() {
            kv(
                "teachers",
                self.teachers
                    .iter()
                    .map(|p| p.display().to_string())
                    .collect::<Vec<_>>()
                    .join(","),
            );
        }
        kv("kd_beam", self.kd_beam.to_string());
        kv("length_penalty", format!("{:?}", self.length_penalty));
        kv("mask_rule", self.mask_rule.name().to_string());
        match self.mask_rule {
            MaskRule::CmlmFixed { ratio } => kv("mask_ratio", format!("{ratio:?}")),
            MaskRule::Glat { schedule, .. } => {
                kv("lambda_start", format!("{:?}", schedule.start));
                kv("lambda_end", format!("{:?}", schedule.end));
                kv("lambda_horizon", schedule.horizon.to_string());
            }
            _ => {}
        }
        kv(
            "copy",
            self.copy.map_or("auto".to_string(), |c| c.to_string()),
        );
        if let Some(p) = &self.frozen {
            kv("frozen", p.display().to_string());
        }
        kv("lr", format!("{:?}", self.lr));
        kv("warmup", self.warmup.to_string());
        kv("steps", self.steps.to_string());
        kv("batch_size", self.batch_size.to_string());
        kv("seed", self.seed.to_string());
        kv("eval_every", self.eval_every.to_string());
        kv("average_k", self.average_k.to_string());
        kv("label_smoothing", format!("{:?}", self.label_smoothing));
        kv("length_weight", format!("{:?}", self.length_weight));
        kv("mask_head_steps", self.mask_head_steps.to_string());
        kv("decode", self.decode.name().to_string());
        kv("input_samples", self.input_samples.to_string());
        s
    }
}

// Dimension checks that do not depend on the corpus vocabulary.
const NUM_VOCAB_PLACEHOLDER: usize = 1;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::proxy_input::GlatKind;

    #[test]
    fn text_round_trip() {
        let c = TrainConfig::parse(
            "# glat on kd\nname = g\ntarget = axe\naxe_delta = 5\nmask_rule = glat\nlambda_start = 0.4\ngamma = 1.0, 2.5\nsteps = 900\nwarmup = 100\n",
        )
        .unwrap();
        assert_eq!(c.target, TargetMethod::Axe { delta: 5.0 });
        assert!(
            matches!(c.mask_rule, MaskRule::Glat { kind: GlatKind::Mismatch, schedule } if schedule.start == 0.4)
        );
        assert_eq!(c.gamma, vec![1.0, 2.5]);
        assert!(c.copy_enabled());
        assert_eq!(TrainConfig::parse(&c.to_text()).unwrap(), c);
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(TrainConfig::parse("bogus = 1").is_err());
        assert!(TrainConfig::parse("steps = 10\nwarmup = 20").is_err());
        assert!(TrainConfig::parse("average_k = 0").is_err());
        assert!(TrainConfig::parse("target = xyz").is_err());
        assert!(TrainConfig::parse("d_model = 30\nheads = 4").is_err());
    }
}
