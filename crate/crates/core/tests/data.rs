use natlab::data::{
    gen_synthetic, gen_two_mode, load_corpus, save_corpus, GeneratorSpec, MarkovSpec, StyleSpec,
    Vocab,
};
use natlab::recipes::RecipeSpec;
use proptest::prelude::*;

fn styles(seed: u64) -> StyleSpec {
    StyleSpec {
        sources: 60,
        min_len: 2,
        max_len: 5,
        styles: 3,
        weights: vec![0.5, 0.3, 0.2],
        jitter: 0.2,
        reorder: true,
        context: true,
        seed,
    }
}

#[test]
fn corpora_round_trip_through_text() {
    let dir = tempfile::tempdir().unwrap();
    let spec = GeneratorSpec::styles(7, &styles(1)).unwrap();
    let (mut c, _) = gen_two_mode(&spec, 50, 2).unwrap();
    c.attach_references(2, 3).unwrap();
    c.notes.insert("teacher".into(), "base".into());
    let path = dir.path().join("s.tsv");
    save_corpus(&c, &path).unwrap();
    assert_eq!(load_corpus(&path).unwrap(), c);

    let chain = MarkovSpec::random(6, 2, (3, 6), 0.4, 0.1, 4);
    let m = gen_synthetic(
        &GeneratorSpec::markov(Vocab::with_content_size(6), chain).unwrap(),
        40,
        5,
    )
    .unwrap();
    let path = dir.path().join("m.tsv");
    save_corpus(&m, &path).unwrap();
    assert_eq!(load_corpus(&path).unwrap(), m);
    assert!(!dir.path().join("m.tsv.refs").exists());
}

#[test]
fn split_rekeys_references() {
    let spec = GeneratorSpec::two_mode_toy();
    let (mut c, _) = gen_two_mode(&spec, 10, 1).unwrap();
    c.attach_references(3, 1).unwrap();
    let (head, tail) = c.split_at(6);
    assert_eq!(head.len() + tail.len(), 10);
    assert_eq!(tail.refs[&0], c.refs[&6]);
    assert_eq!(tail.references(3).len(), 3);
}

#[test]
fn generate_and_build_agree() {
    let spec = RecipeSpec::parse(
        "corpus.kind = styles\ncorpus.pairs = 40\ncorpus.dev = 10\ncorpus.refs = 2\n",
    )
    .unwrap();
    let cs = spec.corpus().unwrap();
    let (whole, _) = cs.generate(9).unwrap();
    let s = cs.build(9).unwrap();
    assert_eq!(s.train.pairs, whole.pairs[..40]);
    assert_eq!(s.dev.pairs, whole.pairs[40..]);
    assert!(s.train.refs.is_empty());
    assert_eq!(s.dev.refs.len(), 10);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn style_corpora_are_seeded_and_in_range(gen_seed in 0u64..1000, seed in any::<u64>()) {
        let spec = GeneratorSpec::styles(7, &styles(gen_seed)).unwrap();
        let (a, _) = gen_two_mode(&spec, 30, seed).unwrap();
        let (b, _) = gen_two_mode(&spec, 30, seed).unwrap();
        prop_assert_eq!(&a, &b);
        for (x, y) in &a.pairs {
            prop_assert!(x.is_content() && y.is_content());
            prop_assert!((2..=5).contains(&x.len()));
            prop_assert_eq!(x.len(), y.len());
        }
    }
}
