use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use natlab::data::{load_corpus, read_token_lines, save_corpus, write_token_lines};
use natlab::decode::{decode_batch, lpd, DecodeOptions, DecodeStrategy};
use natlab::metrics::MetricsRecord;
use natlab::model::{AtModel, InputPredictor, NatModel};
use natlab::recipes::{correlate, override_lines, Lab, Recipe, RecipeSpec};
use natlab::train::{
    distill_corpus, estimate_tc, evaluate_nat, load_frozen, load_splits, load_teachers,
    save_at_run, save_nat_run, train_at, train_nat, NatInputs, TrainConfig,
};
use natlab::{NatError, Result};
use rayon::prelude::*;

/// Non-autoregressive sequence learning lab.
#[derive(Parser)]
#[command(name = "natlab", version)]
struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    /// The one-source `A B` / `C D` toy.
    TwoMode,
    /// Markov chain targets with corrupted-copy sources.
    Synthetic,
    /// Whole-sentence translations in several word-map styles.
    Styles,
}

#[derive(Clone, Copy, ValueEnum)]
enum Strategy {
    Default,
    InputSampling,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a corpus file (plus `<out>.refs` when references are drawn).
    GenData {
        kind: Kind,
        #[arg(long)]
        out: PathBuf,
        /// Recipe config whose `corpus.*` keys are the starting point.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Extra `corpus.KEY=VALUE` settings, e.g. `--set content=12`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        sets: Vec<String>,
        #[arg(long)]
        pairs: Option<usize>,
        /// Trailing pairs that receive generator references.
        #[arg(long)]
        dev: Option<usize>,
        #[arg(long)]
        refs: Option<usize>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Train an autoregressive teacher.
    TrainAt {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Config overrides, e.g. `--set steps=500`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        sets: Vec<String>,
    },
    /// Replace a corpus's targets with a teacher's beam outputs.
    Distill {
        /// Teacher checkpoint directory.
        #[arg(long)]
        teacher: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 5)]
        beam: usize,
        #[arg(long, default_value_t = 1.0)]
        length_penalty: f64,
        /// Teacher name stored in the corpus notes.
        #[arg(long)]
        label: Option<String>,
    },
    /// Train a parallel student.
    TrainNat {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Config overrides, e.g. `--set target=axe`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        sets: Vec<String>,
        /// AXE penalty for aligning one prediction to several reference tokens.
        #[arg(long)]
        skip_penalty: Option<f64>,
    },
    /// Decode one source per line.
    Decode {
        /// Student checkpoint directory.
        #[arg(long)]
        model: PathBuf,
        /// Corpus supplying the vocabulary.
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = Strategy::Default)]
        strategy: Strategy,
        /// Frozen vanilla checkpoint for input sampling.
        #[arg(long)]
        frozen: Option<PathBuf>,
        #[arg(long, default_value_t = 1.0)]
        length_factor: f64,
        #[arg(long)]
        dedup: bool,
        /// Length-parallel decoding with this many (odd) candidate lengths.
        #[arg(long)]
        lpd: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Score a trained student on its config's dev split.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        config: PathBuf,
        /// Append the record to this JSON-lines file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Held-out total-correlation estimate of a corpus, bits per token.
    EstimateTc {
        #[arg(long)]
        corpus: PathBuf,
        /// Shared trunk and optimiser settings for both estimators.
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 200)]
        heldout: usize,
    },
    /// Train the `run.*` grid of a recipe config and correlate its terms with BLEU.
    Correlate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a checked-in experiment.
    Reproduce {
        /// theorem1, fig2-multimodality, fig4-lnat-below-c, table2-proxy-targets,
        /// table3-proxy-inputs, fig6-confidence or fig7-dynamic-kd
        recipe: String,
        /// Replace the checked-in config.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory (default `runs/<recipe>`).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Print the effective config and exit.
        #[arg(long)]
        print_config: bool,
    },
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| NatError::io(path, e))
}

/// The config file with `KEY=VALUE` overrides applied on top.
fn load_config(path: &Path, sets: &[String]) -> Result<TrainConfig> {
    let base = TrainConfig::load(path)?;
    if sets.is_empty() {
        return Ok(base);
    }
    TrainConfig::parse_with(&override_lines(&sets.join(";"))?, base)
}

fn json(r: &MetricsRecord) -> String {
    serde_json::to_string(r).expect("metrics records serialize")
}

fn gen_data(
    kind: Kind,
    config: Option<&Path>,
    sets: &[String],
    counts: [(&str, Option<usize>); 3],
    seed: u64,
    out: &Path,
) -> Result<()> {
    let mut text = match config {
        Some(p) => read(p)?,
        None => String::new(),
    };
    let kind = match kind {
        Kind::TwoMode => "two_mode_toy",
        Kind::Synthetic => "markov",
        Kind::Styles => "styles",
    };
    text.push_str(&format!("\ncorpus.kind = {kind}\n"));
    for (k, v) in counts {
        if let Some(v) = v {
            text.push_str(&format!("corpus.{k} = {v}\n"));
        }
    }
    for s in sets {
        let (k, v) = s
            .split_once('=')
            .ok_or_else(|| NatError::Config(format!("--set {s:?} is not KEY=VALUE")))?;
        text.push_str(&format!("corpus.{} = {}\n", k.trim(), v.trim()));
    }
    let spec = RecipeSpec::parse(&text)?;
    let (mut corpus, _) = spec.corpus()?.generate(seed)?;
    corpus.notes.insert("generator".into(), kind.into());
    save_corpus(&corpus, out)?;
    println!("wrote {} pairs to {}", corpus.len(), out.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn decode_file(
    model: &Path,
    corpus: &Path,
    input: &Path,
    out: &Path,
    strategy: Strategy,
    frozen: Option<&Path>,
    opts: DecodeOptions,
    lpd_n: Option<usize>,
) -> Result<()> {
    let nat = NatModel::load(model)?;
    let vocab = load_corpus(corpus)?.vocab().clone();
    let xs = read_token_lines(&vocab, input)?;
    let ip = match (strategy, frozen) {
        (Strategy::Default, _) => None,
        (Strategy::InputSampling, Some(p)) => Some(InputPredictor::new(NatModel::load(p)?)),
        (Strategy::InputSampling, None) => {
            return Err(NatError::Config("input sampling needs --frozen".into()));
        }
    };
    let opts = DecodeOptions {
        strategy: match strategy {
            Strategy::Default => DecodeStrategy::Default,
            Strategy::InputSampling => DecodeStrategy::InputSampling,
        },
        ..opts
    };
    let ys = match lpd_n {
        Some(n) => xs
            .par_iter()
            .map(|x| lpd(&nat, ip.as_ref(), x, n, &opts).map(|d| d.tokens))
            .collect::<Result<Vec<_>>>()?,
        None => {
            let chunks = xs
                .par_chunks(64)
                .map(|c| {
                    let refs: Vec<&[usize]> = c.iter().map(|x| &x[..]).collect();
                    decode_batch(&nat, ip.as_ref(), &refs, &opts)
                })
                .collect::<Result<Vec<_>>>()?;
            chunks.into_iter().flatten().map(|d| d.tokens).collect()
        }
    };
    write_token_lines(&vocab, &ys, out)
}

fn reproduce(
    name: &str,
    config: Option<&Path>,
    seed: Option<u64>,
    out: Option<PathBuf>,
    print: bool,
) -> Result<()> {
    let recipe = Recipe::parse(name)?;
    let mut spec = match config {
        Some(p) => RecipeSpec::load(p)?,
        None => recipe.default_spec()?,
    };
    if let Some(s) = seed {
        spec.seed = s;
    }
    if print {
        print!("{}", spec.to_text());
        return Ok(());
    }
    let report = recipe.run(&spec, None)?;
    let dir = out.unwrap_or_else(|| Path::new("runs").join(name));
    report.write(&dir)?;
    print!("{}", report.summary_text());
    eprintln!("wrote {}", dir.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::GenData {
            kind,
            out,
            config,
            sets,
            pairs,
            dev,
            refs,
            seed,
        } => gen_data(
            kind,
            config.as_deref(),
            &sets,
            [("pairs", pairs), ("dev", dev), ("refs", refs)],
            seed,
            &out,
        ),
        Cmd::TrainAt { config, out, sets } => {
            let cfg = load_config(&config, &sets)?;
            let (train, dev) = load_splits(&cfg)?;
            let run = train_at(&cfg, &train, &dev)?;
            save_at_run(&run, &cfg, &out)?;
            if let Some((step, nll)) = run.dev_nll.last() {
                println!("step {step} dev_nll {nll:?}");
            }
            Ok(())
        }
        Cmd::Distill {
            teacher,
            corpus,
            out,
            beam,
            length_penalty,
            label,
        } => {
            let at = AtModel::load(&teacher)?;
            let label = label.unwrap_or_else(|| teacher.display().to_string());
            let d = distill_corpus(&at, &load_corpus(&corpus)?, beam, length_penalty, &label)?;
            save_corpus(&d, &out)
        }
        Cmd::TrainNat {
            config,
            out,
            mut sets,
            skip_penalty,
        } => {
            sets.extend(skip_penalty.map(|d| format!("skip_penalty={d}")));
            let cfg = load_config(&config, &sets)?;
            let (train, dev) = load_splits(&cfg)?;
            let distilled = load_teachers(&cfg, &train, &dev)?;
            let frozen = load_frozen(&cfg)?;
            let run = train_nat(
                &cfg,
                NatInputs {
                    train: &train,
                    dev: &dev,
                    distilled: &distilled,
                    frozen: frozen.as_ref(),
                },
            )?;
            save_nat_run(&run, &cfg, &out)?;
            println!("{}", json(&run.final_record));
            Ok(())
        }
        Cmd::Decode {
            model,
            corpus,
            input,
            out,
            strategy,
            frozen,
            length_factor,
            dedup,
            lpd,
            seed,
        } => {
            let opts = DecodeOptions {
                strategy: DecodeStrategy::Default,
                length_factor,
                dedup,
                seed,
            };
            decode_file(
                &model,
                &corpus,
                &input,
                &out,
                strategy,
                frozen.as_deref(),
                opts,
                lpd,
            )
        }
        Cmd::Evaluate { model, config, out } => {
            let cfg = TrainConfig::load(&config)?;
            let (train, dev) = load_splits(&cfg)?;
            let distilled = load_teachers(&cfg, &train, &dev)?;
            let frozen = load_frozen(&cfg)?;
            let nat = NatModel::load(&model)?;
            let rec = evaluate_nat(
                &cfg,
                &nat,
                NatInputs {
                    train: &train,
                    dev: &dev,
                    distilled: &distilled,
                    frozen: frozen.as_ref(),
                },
            )?;
            let line = json(&rec);
            println!("{line}");
            if let Some(p) = out {
                use std::io::Write;
                let mut f = std::fs::OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(&p)
                    .map_err(|e| NatError::io(&p, e))?;
                writeln!(f, "{line}").map_err(|e| NatError::io(&p, e))?;
            }
            Ok(())
        }
        Cmd::EstimateTc {
            corpus,
            config,
            heldout,
        } => {
            let cfg = TrainConfig::load(&config)?;
            let est = estimate_tc(&load_corpus(&corpus)?, &cfg, &cfg, heldout)?;
            println!("c_hat = {:?}", est.c_hat);
            println!("nat_nll = {:?}", est.nat_nll);
            println!("at_nll = {:?}", est.at_nll);
            println!("length_nll = {:?}", est.length_nll);
            Ok(())
        }
        Cmd::Correlate { config, out } => {
            let spec = RecipeSpec::load(&config)?;
            let lab = Lab::build(&spec)?;
            let report = correlate(&spec, &lab, "correlate")?;
            report.write(&out)?;
            print!("{}", report.summary_text());
            Ok(())
        }
        Cmd::Reproduce {
            recipe,
            config,
            seed,
            out,
            print_config,
        } => reproduce(&recipe, config.as_deref(), seed, out, print_config),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            eprintln!("natlab: {e}");
            return ExitCode::from(2);
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("natlab: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
