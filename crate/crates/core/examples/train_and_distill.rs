//! Teacher training, sequence-level distillation and a distilled student,
//! end to end on a small styles corpus.

use natlab::recipes::RecipeSpec;
use natlab::train::{distill, evaluate_nat, train_at, train_nat, Distilled, NatInputs};

const SETUP: &str = "
seed = 3
corpus.kind = styles
corpus.content = 10
corpus.min_len = 3
corpus.max_len = 6
corpus.pairs = 800
corpus.dev = 100
corpus.refs = 3
train.d_model = 32
train.d_ff = 64
train.max_len = 12
train.lr = 3e-3
train.warmup = 50
train.steps = 300
train.eval_every = 100
train.batch_size = 16
teacher.steps = 1500
teacher.eval_every = 500
";

fn main() -> natlab::Result<()> {
    let spec = RecipeSpec::parse(SETUP)?;
    let splits = spec.corpus()?.build(spec.seed)?;
    let v = splits.train.vocab().clone();

    let tcfg = spec.teacher_config()?;
    let teacher = train_at(&tcfg, &splits.train, &splits.dev)?;
    for (step, nll) in &teacher.dev_nll {
        println!("teacher step {step}: dev {nll:.3} bits/token");
    }

    let xs: Vec<_> = splits.train.sources().collect();
    let dxs: Vec<_> = splits.dev.sources().collect();
    let distilled = [Distilled {
        train: distill(&teacher.model, &xs, 4, 1.0)?,
        dev: distill(&teacher.model, &dxs, 4, 1.0)?,
    }];
    for i in 0..3 {
        let (x, y) = &splits.train.pairs[i];
        println!(
            "{}  data: {}  teacher: {}",
            v.decode(x),
            v.decode(y),
            v.decode(&distilled[0].train[i])
        );
    }

    let inputs = NatInputs {
        train: &splits.train,
        dev: &splits.dev,
        distilled: &distilled,
        frozen: None,
    };
    for target in ["raw", "kd"] {
        let cfg = spec.train_config(target, &format!("target={target}"))?;
        let run = train_nat(&cfg, inputs)?;
        let r = &run.final_record;
        println!(
            "{target}: L_NAT {:.3}  L_MPLE {:.3}  BLEU {:.1}",
            r.l_nat, r.l_mple, r.bleu
        );
        let again = evaluate_nat(&cfg, &run.model, inputs)?;
        assert_eq!(again.bleu, r.bleu);
    }
    Ok(())
}
