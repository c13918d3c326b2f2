//! Decoding strategies for a masked-prediction student: fully masked input,
//! input sampling from a frozen vanilla model, length-parallel decoding, and
//! the decoding confidence of each.

use natlab::decode::{decode, decoding_confidence, lpd, DecodeOptions, DecodeStrategy};
use natlab::model::InputPredictor;
use natlab::recipes::RecipeSpec;
use natlab::train::{train_nat, NatInputs};

const SETUP: &str = "
seed = 2
corpus.kind = styles
corpus.content = 10
corpus.min_len = 3
corpus.max_len = 6
corpus.pairs = 600
corpus.dev = 50
corpus.refs = 0
train.d_model = 32
train.d_ff = 64
train.max_len = 12
train.lr = 3e-3
train.warmup = 50
train.steps = 300
train.eval_every = 150
train.batch_size = 16
";

fn main() -> natlab::Result<()> {
    let spec = RecipeSpec::parse(SETUP)?;
    let s = spec.corpus()?.build(spec.seed)?;
    let v = s.train.vocab().clone();
    let vanilla = train_nat(
        &spec.train_config("vanilla", "")?,
        NatInputs {
            train: &s.train,
            dev: &s.dev,
            distilled: &[],
            frozen: None,
        },
    )?;
    let cmlm = train_nat(
        &spec.train_config("cmlm", "mask_rule=cmlm")?,
        NatInputs {
            train: &s.train,
            dev: &s.dev,
            distilled: &[],
            frozen: Some(&vanilla.model),
        },
    )?;
    let ip = InputPredictor::new(vanilla.model.clone());

    let default = DecodeOptions::default();
    let sampling = DecodeOptions {
        strategy: DecodeStrategy::InputSampling,
        seed: 7,
        ..default
    };
    let tricks = DecodeOptions {
        dedup: true,
        length_factor: 1.1,
        ..default
    };
    for (x, y) in s.dev.pairs.iter().take(4) {
        println!("source {}  reference {}", v.decode(x), v.decode(y));
        for (name, opts) in [
            ("default", default),
            ("input sampling", sampling),
            ("dedup, x1.1 length", tricks),
        ] {
            let d = decode(&cmlm.model, Some(&ip), x, &opts)?;
            let conf = decoding_confidence(&cmlm.model, Some(&ip), x, &opts)?;
            println!(
                "  {name:<20} {}  (input [{}], confidence {conf:.2} bits)",
                v.decode(&d.tokens),
                v.display(&d.z)
            );
        }
        let d = lpd(&cmlm.model, None, x, 3, &default)?;
        println!("  {:<20} {}", "LPD n=3", v.decode(&d.tokens));
    }
    Ok(())
}
