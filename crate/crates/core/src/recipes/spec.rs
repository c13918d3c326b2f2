//! Recipe configuration: one flat `key = value` file per experiment.
//!
//! ```text
//! seed = 1
//! corpus.kind = styles
//! corpus.pairs = 4000
//! train.steps = 1500        # base student and teacher settings
//! teacher.steps = 2000      # teacher-only overrides
//! tier.tiny = d_model=16; d_ff=32
//! run.kd = target=kd
//! betas = 0.1,0.2,0.5       # recipe-specific keys
//! ```
//!
//! `train.*` keys are [`TrainConfig`] keys. `run.NAME` and `tier.NAME` values
//! are `;`-separated `key=value` overrides of the base. Runs and tiers keep file
//! order. Every other key is recipe-specific.

use std::collections::BTreeMap;
use std::path::Path;

use crate::data::{
    gen_synthetic, gen_two_mode, EnumerableCond, GeneratorSpec, MarkovSpec, ParallelCorpus,
    StyleSpec,
};
use crate::error::{NatError, Result};
use crate::train::TrainConfig;

#[derive(Clone, Debug, PartialEq)]
pub enum CorpusKind {
    /// The single-source `A B` / `C D` toy.
    TwoModeToy,
    Styles(StyleSpec),
    Markov(MarkovSpec),
}

/// A generated corpus split into training and dev pairs.
#[derive(Clone, Debug, PartialEq)]
pub struct CorpusSpec {
    pub kind: CorpusKind,
    pub content: usize,
    pub pairs: usize,
    pub dev: usize,
    /// Generator references drawn per dev source.
    pub refs: usize,
}

pub struct Splits {
    pub train: ParallelCorpus,
    pub dev: ParallelCorpus,
    /// Exact conditional, for enumerable corpora.
    pub cond: Option<EnumerableCond>,
}

impl CorpusSpec {
    pub fn generator(&self) -> Result<GeneratorSpec> {
        match &self.kind {
            CorpusKind::TwoModeToy => Ok(GeneratorSpec::two_mode_toy()),
            CorpusKind::Styles(s) => GeneratorSpec::styles(self.content, s),
            CorpusKind::Markov(m) => GeneratorSpec::markov(
                crate::data::Vocab::with_content_size(self.content),
                m.clone(),
            ),
        }
    }

    /// Samples `pairs + dev` pairs with `seed` as one corpus; generator
    /// references are drawn for the last `dev` pairs only.
    pub fn generate(&self, seed: u64) -> Result<(ParallelCorpus, Option<EnumerableCond>)> {
        let spec = self.generator()?;
        let n = self.pairs + self.dev;
        let (mut corpus, cond) = match self.kind {
            CorpusKind::Markov(_) => (gen_synthetic(&spec, n, seed)?, None),
            CorpusKind::TwoModeToy => {
                let (c, e) = gen_two_mode(&spec, n, seed)?;
                (c, Some(e))
            }
            // Too many sources to be worth enumerating.
            CorpusKind::Styles(_) => (gen_two_mode(&spec, n, seed)?.0, None),
        };
        if self.refs > 0 {
            let mut dev = corpus.split_at(self.pairs).1;
            dev.attach_references(self.refs, seed ^ 0x5eed_0f_4ef5)?;
            corpus
                .refs
                .extend(dev.refs.into_iter().map(|(i, r)| (i + self.pairs, r)));
        }
        Ok((corpus, cond))
    }

    /// [`CorpusSpec::generate`] split into training and dev pairs.
    pub fn build(&self, seed: u64) -> Result<Splits> {
        let (corpus, cond) = self.generate(seed)?;
        let (train, dev) = corpus.split_at(self.pairs);
        Ok(Splits { train, dev, cond })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RecipeSpec {
    pub seed: u64,
    pub corpus: Option<CorpusSpec>,
    /// Base [`TrainConfig`] lines.
    pub train: Vec<(String, String)>,
    /// Teacher-only overrides applied after `train`.
    pub teacher: Vec<(String, String)>,
    pub tiers: Vec<(String, String)>,
    pub runs: Vec<(String, String)>,
    pub params: BTreeMap<String, String>,
}

fn cfg_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(NatError::Config(msg.into()))
}

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| NatError::Config(format!("{key}: cannot parse {v:?}")))
}

fn list(key: &str, v: &str) -> Result<Vec<f64>> {
    v.split(',').map(|s| num(key, s.trim())).collect()
}

fn flag(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "on" | "yes" => Ok(true),
        "false" | "off" | "no" => Ok(false),
        _ => cfg_err(format!("{key}: expected true or false, got {v:?}")),
    }
}

/// `"a=1; b=2"` as config lines.
pub fn override_lines(overrides: &str) -> Result<String> {
    let mut out = String::new();
    for part in overrides
        .split(';')
        .map(str::trim)
        .filter(|s| !s.is_empty())
    {
        let Some((k, v)) = part.split_once('=') else {
            return cfg_err(format!("override {part:?} is not key=value"));
        };
        out.push_str(&format!("{} = {}\n", k.trim(), v.trim()));
    }
    Ok(out)
}

impl RecipeSpec {
    pub fn parse(text: &str) -> Result<Self> {
        let mut spec = RecipeSpec {
            seed: 1,
            corpus: None,
            train: Vec::new(),
            teacher: Vec::new(),
            tiers: Vec::new(),
            runs: Vec::new(),
            params: BTreeMap::new(),
        };
        let mut corpus: BTreeMap<String, String> = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return cfg_err(format!("line {}: expected key = value", i + 1));
            };
            let (k, v) = (k.trim().to_string(), v.trim().to_string());
            if k == "seed" {
                spec.seed = num(&k, &v)?;
            } else if let Some(rest) = k.strip_prefix("corpus.") {
                corpus.insert(rest.to_string(), v);
            } else if let Some(rest) = k.strip_prefix("train.") {
                spec.train.push((rest.to_string(), v));
            } else if let Some(rest) = k.strip_prefix("teacher.") {
                spec.teacher.push((rest.to_string(), v));
            } else if let Some(rest) = k.strip_prefix("tier.") {
                spec.tiers.push((rest.to_string(), v));
            } else if let Some(rest) = k.strip_prefix("run.") {
                if spec.runs.iter().any(|(n, _)| n == rest) {
                    return cfg_err(format!("run {rest:?} defined twice"));
                }
                spec.runs.push((rest.to_string(), v));
            } else if spec.params.insert(k.clone(), v).is_some() {
                return cfg_err(format!("key {k:?} defined twice"));
            }
        }
        if !corpus.is_empty() {
            spec.corpus = Some(parse_corpus(&corpus)?);
        }
        // Surface bad training keys now rather than mid-run.
        spec.train_config("check", "")?;
        spec.teacher_config()?;
        for (name, o) in spec.runs.iter().chain(&spec.tiers) {
            override_lines(o)?;
            spec.train_config(name, o)?;
        }
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| NatError::io(path, e))?;
        Self::parse(&text)
    }

    fn base_text(&self) -> String {
        let mut s: String = self
            .train
            .iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect();
        s.push_str(&format!("seed = {}\n", self.seed));
        s
    }

    /// Base config with `overrides` applied and `name` as the record label.
    pub fn train_config(&self, name: &str, overrides: &str) -> Result<TrainConfig> {
        let text = format!(
            "{}{}name = {name}\n",
            self.base_text(),
            override_lines(overrides)?
        );
        TrainConfig::parse(&text)
    }

    pub fn teacher_config(&self) -> Result<TrainConfig> {
        let extra: String = self
            .teacher
            .iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect();
        TrainConfig::parse(&format!("{}{extra}name = teacher\n", self.base_text()))
    }

    /// Teacher config for a tier: teacher settings plus the tier's overrides.
    pub fn tier_config(&self, name: &str, overrides: &str) -> Result<TrainConfig> {
        let extra: String = self
            .teacher
            .iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect();
        TrainConfig::parse(&format!(
            "{}{extra}{}name = {name}\n",
            self.base_text(),
            override_lines(overrides)?
        ))
    }

    pub fn run_config(&self, name: &str) -> Result<TrainConfig> {
        let (_, o) = self
            .runs
            .iter()
            .find(|(n, _)| n == name)
            .ok_or_else(|| NatError::Config(format!("no run named {name:?}")))?;
        self.train_config(name, o)
    }

    pub fn corpus(&self) -> Result<&CorpusSpec> {
        self.corpus
            .as_ref()
            .ok_or_else(|| NatError::Config("recipe needs corpus.* keys".into()))
    }

    pub fn param(&self, key: &str) -> Option<&str> {
        self.params.get(key).map(String::as_str)
    }

    pub fn param_num<T: std::str::FromStr>(&self, key: &str, default: T) -> Result<T> {
        self.param(key).map_or(Ok(default), |v| num(key, v))
    }

    pub fn param_list(&self, key: &str, default: &[f64]) -> Result<Vec<f64>> {
        self.param(key)
            .map_or(Ok(default.to_vec()), |v| list(key, v))
    }

    /// The file text that parses back to this spec.
    pub fn to_text(&self) -> String {
        let mut s = format!("seed = {}\n", self.seed);
        if let Some(c) = &self.corpus {
            for (k, v) in corpus_keys(c) {
                s.push_str(&format!("corpus.{k} = {v}\n"));
            }
        }
        for (prefix, items) in [
            ("train", &self.train),
            ("teacher", &self.teacher),
            ("tier", &self.tiers),
            ("run", &self.runs),
        ] {
            for (k, v) in items {
                s.push_str(&format!("{prefix}.{k} = {v}\n"));
            }
        }
        for (k, v) in &self.params {
            s.push_str(&format!("{k} = {v}\n"));
        }
        s
    }
}

fn join(v: &[f64]) -> String {
    v.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

fn corpus_keys(c: &CorpusSpec) -> Vec<(&'static str, String)> {
    let mut out = vec![
        ("pairs", c.pairs.to_string()),
        ("dev", c.dev.to_string()),
        ("refs", c.refs.to_string()),
    ];
    match &c.kind {
        CorpusKind::TwoModeToy => out.insert(0, ("kind", "two_mode_toy".into())),
        CorpusKind::Styles(s) => {
            out.insert(0, ("kind", "styles".into()));
            out.extend([
                ("content", c.content.to_string()),
                ("sources", s.sources.to_string()),
                ("min_len", s.min_len.to_string()),
                ("max_len", s.max_len.to_string()),
                ("styles", s.styles.to_string()),
                ("weights", join(&s.weights)),
                ("jitter", s.jitter.to_string()),
                ("reorder", s.reorder.to_string()),
                ("context", s.context.to_string()),
                ("generator_seed", s.seed.to_string()),
            ]);
        }
        CorpusKind::Markov(_) => {
            out.insert(0, ("kind", "markov".into()));
            out.push(("content", c.content.to_string()));
        }
    }
    out
}

fn parse_corpus(kv: &BTreeMap<String, String>) -> Result<CorpusSpec> {
    let mut used = std::collections::BTreeSet::new();
    let mut get = |k: &'static str| {
        used.insert(k);
        kv.get(k).map(String::as_str)
    };
    let kind = get("kind").unwrap_or("styles");
    let pairs: usize = get("pairs").map_or(Ok(4000), |v| num("corpus.pairs", v))?;
    let dev: usize = get("dev").map_or(Ok(300), |v| num("corpus.dev", v))?;
    let refs: usize = get("refs").map_or(Ok(4), |v| num("corpus.refs", v))?;
    let content: usize = get("content").map_or(Ok(16), |v| num("corpus.content", v))?;
    let gseed: u64 = get("generator_seed").map_or(Ok(5), |v| num("corpus.generator_seed", v))?;
    let min_len: usize = get("min_len").map_or(Ok(5), |v| num("corpus.min_len", v))?;
    let max_len: usize = get("max_len").map_or(Ok(9), |v| num("corpus.max_len", v))?;
    let kind = match kind {
        "two_mode_toy" => CorpusKind::TwoModeToy,
        "styles" => {
            let styles: usize = get("styles").map_or(Ok(2), |v| num("corpus.styles", v))?;
            let weights = match get("weights") {
                Some(v) => list("corpus.weights", v)?,
                None => vec![1.0 / styles as f64; styles],
            };
            CorpusKind::Styles(StyleSpec {
                sources: get("sources")
                    .map_or(Ok(4 * (pairs + dev)), |v| num("corpus.sources", v))?,
                min_len,
                max_len,
                styles,
                weights,
                jitter: get("jitter").map_or(Ok(0.0), |v| num("corpus.jitter", v))?,
                reorder: get("reorder").map_or(Ok(true), |v| flag("corpus.reorder", v))?,
                context: get("context").map_or(Ok(false), |v| flag("corpus.context", v))?,
                seed: gseed,
            })
        }
        "markov" => {
            let branching: usize =
                get("branching").map_or(Ok(3), |v| num("corpus.branching", v))?;
            let replace: f64 =
                get("replace_rate").map_or(Ok(0.5), |v| num("corpus.replace_rate", v))?;
            let drop: f64 = get("drop_rate").map_or(Ok(0.0), |v| num("corpus.drop_rate", v))?;
            CorpusKind::Markov(MarkovSpec::random(
                content,
                branching,
                (min_len, max_len),
                replace,
                drop,
                gseed,
            ))
        }
        other => return cfg_err(format!("unknown corpus.kind {other:?}")),
    };
    if let Some(k) = kv.keys().find(|k| !used.contains(k.as_str())) {
        return cfg_err(format!("unknown key corpus.{k}"));
    }
    if pairs == 0 || dev == 0 {
        return cfg_err("corpus.pairs and corpus.dev must be positive");
    }
    Ok(CorpusSpec {
        kind,
        content,
        pairs,
        dev,
        refs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const TEXT: &str = "seed = 3\ncorpus.kind = styles\ncorpus.pairs = 50\ncorpus.dev = 10\n\
        train.steps = 20\ntrain.warmup = 5\nteacher.d_model = 16\nrun.kd = target=kd; beta=0.5\n\
        run.raw =\nbetas = 0.1,0.2\n";

    #[test]
    fn parses_sections() {
        let s = RecipeSpec::parse(TEXT).unwrap();
        assert_eq!(s.seed, 3);
        assert_eq!(s.runs.len(), 2);
        let kd = s.run_config("kd").unwrap();
        assert_eq!(kd.beta, 0.5);
        assert_eq!(kd.seed, 3);
        assert_eq!(kd.steps, 20);
        assert_eq!(s.teacher_config().unwrap().d_model, 16);
        assert_eq!(s.param_list("betas", &[]).unwrap(), vec![0.1, 0.2]);
    }

    #[test]
    fn round_trips_through_text() {
        let s = RecipeSpec::parse(TEXT).unwrap();
        assert_eq!(RecipeSpec::parse(&s.to_text()).unwrap(), s);
    }

    #[test]
    fn rejects_bad_keys() {
        assert!(RecipeSpec::parse("corpus.colour = red\n").is_err());
        assert!(RecipeSpec::parse("train.colour = red\n").is_err());
        assert!(RecipeSpec::parse("run.a = target\n").is_err());
        assert!(RecipeSpec::parse("run.a = target=kd\nrun.a = target=raw\n").is_err());
    }

    #[test]
    fn builds_deterministic_splits() {
        let s = RecipeSpec::parse(TEXT).unwrap();
        let a = s.corpus().unwrap().build(1).unwrap();
        let b = s.corpus().unwrap().build(1).unwrap();
        assert_eq!(a.train, b.train);
        assert_eq!(a.dev.len(), 10);
        assert_eq!(a.dev.references(0).len(), 4);
    }
}
