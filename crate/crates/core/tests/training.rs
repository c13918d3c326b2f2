use natlab::data::{gen_two_mode, GeneratorSpec};
use natlab::metrics::{exact_kl, exact_tc};
use natlab::model::{AtModel, NatModel};
use natlab::train::{
    distill, evaluate_nat, load_splits, load_teachers, save_at_run, save_nat_run, train_at,
    train_nat, Distilled, NatInputs, TrainConfig,
};

fn toy_config(extra: &str) -> TrainConfig {
    TrainConfig::parse(&format!(
        "max_len = 8\nlr = 3e-3\nwarmup = 50\nsteps = 300\neval_every = 100\nbatch_size = 16\nlabel_smoothing = 0\n{extra}"
    ))
    .unwrap()
}

#[test]
fn vanilla_student_learns_the_toy_marginals() {
    let spec = GeneratorSpec::two_mode_toy();
    let (c, cond) = gen_two_mode(&spec, 300, 4).unwrap();
    let (train, dev) = c.split_at(250);
    let cfg = toy_config("");
    let run = train_nat(
        &cfg,
        NatInputs {
            train: &train,
            dev: &dev,
            distilled: &[],
            frozen: None,
        },
    )
    .unwrap();
    let gap = exact_kl(&cond, &run.model).unwrap() - exact_tc(&cond).unwrap().bits_per_sentence;
    assert!((-1e-9..0.1).contains(&gap), "gap {gap}");
    assert_eq!(run.records.len(), 3);
    assert!(run.records.iter().all(|r| r.config == cfg.name));
}

#[test]
fn runs_are_deterministic_and_checkpoints_round_trip() {
    let spec = GeneratorSpec::two_mode_toy();
    let (c, _) = gen_two_mode(&spec, 200, 2).unwrap();
    let (train, dev) = c.split_at(160);
    let cfg = toy_config("steps = 200");
    let a = train_at(&cfg, &train, &dev).unwrap();
    let b = train_at(&cfg, &train, &dev).unwrap();
    assert_eq!(a.dev_nll, b.dev_nll);

    let dir = tempfile::tempdir().unwrap();
    save_at_run(&a, &cfg, &dir.path().join("at")).unwrap();
    let back = AtModel::load(&dir.path().join("at")).unwrap();
    let xs: Vec<_> = dev.sources().collect();
    assert_eq!(
        distill(&back, &xs, 3, 1.0).unwrap(),
        distill(&a.model, &xs, 3, 1.0).unwrap()
    );

    let inputs = NatInputs {
        train: &train,
        dev: &dev,
        distilled: &[],
        frozen: None,
    };
    let run = train_nat(&cfg, inputs).unwrap();
    save_nat_run(&run, &cfg, &dir.path().join("nat")).unwrap();
    let nat = NatModel::load(&dir.path().join("nat")).unwrap();
    assert_eq!(evaluate_nat(&cfg, &nat, inputs).unwrap(), run.final_record);
}

#[test]
fn file_backed_inputs_follow_the_config() {
    let dir = tempfile::tempdir().unwrap();
    let spec = GeneratorSpec::two_mode_toy();
    let (c, _) = gen_two_mode(&spec, 50, 3).unwrap();
    let corpus = dir.path().join("toy.tsv");
    natlab::data::save_corpus(&c, &corpus).unwrap();
    let mut kd = c.clone();
    for p in kd.pairs.iter_mut() {
        p.1 = c.pairs[0].1.clone();
    }
    let teacher = dir.path().join("kd.tsv");
    natlab::data::save_corpus(&kd, &teacher).unwrap();

    let cfg = toy_config(&format!(
        "corpus = {}\ndev_size = 10\nteachers = {}\n",
        corpus.display(),
        teacher.display()
    ));
    let (train, dev) = load_splits(&cfg).unwrap();
    assert_eq!((train.len(), dev.len()), (40, 10));
    let d: Vec<Distilled> = load_teachers(&cfg, &train, &dev).unwrap();
    assert_eq!(d[0].train.len(), 40);
    assert!(d[0].dev.iter().all(|t| *t == c.pairs[0].1));

    let mut other = c.clone();
    other.pairs.pop();
    natlab::data::save_corpus(&other, &teacher).unwrap();
    assert!(load_teachers(&cfg, &train, &dev).is_err());
}
