//! Held-out total-correlation estimates: a corpus whose targets are one fixed
//! translation per source, against one with two translation styles.

use natlab::recipes::RecipeSpec;
use natlab::train::estimate_tc;

fn setup(styles: usize) -> String {
    let weights = vec![format!("{}", 1.0 / styles as f64); styles].join(",");
    format!(
        "corpus.kind = styles
corpus.styles = {styles}
corpus.weights = {weights}
corpus.content = 10
corpus.min_len = 3
corpus.max_len = 6
corpus.pairs = 900
corpus.dev = 1
corpus.refs = 0
train.d_model = 32
train.d_ff = 64
train.max_len = 12
train.lr = 3e-3
train.warmup = 50
train.steps = 400
train.eval_every = 200
train.batch_size = 16
train.label_smoothing = 0
"
    )
}

fn main() -> natlab::Result<()> {
    for styles in [1, 2] {
        let spec = RecipeSpec::parse(&setup(styles))?;
        let (corpus, _) = spec.corpus()?.generate(1)?;
        let cfg = spec.train_config("estimator", "")?;
        let est = estimate_tc(&corpus, &cfg, &cfg, 150)?;
        println!(
            "{styles} style(s): C_hat {:.3} bits/token (parallel {:.3}, autoregressive {:.3}, length {:.3})",
            est.c_hat, est.nat_nll, est.at_nll, est.length_nll
        );
    }
    Ok(())
}
