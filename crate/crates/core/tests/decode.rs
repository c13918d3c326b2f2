use natlab::data::{TokenSeq, EPS, MASK, NUM_RESERVED, PAD};
use natlab::decode::{decode, decode_batch, lpd, DecodeOptions, DecodeStrategy};
use natlab::model::{InputPredictor, ModelDims, NatModel};
use proptest::prelude::*;

const VOCAB: usize = 14;

fn models() -> (NatModel, InputPredictor) {
    let nat = NatModel::new(ModelDims::small(VOCAB), true, 11).unwrap();
    let frozen = NatModel::new(ModelDims::small(VOCAB), false, 12).unwrap();
    (nat, InputPredictor::new(frozen))
}

fn source() -> impl Strategy<Value = Vec<usize>> {
    prop::collection::vec(NUM_RESERVED..VOCAB, 1..8)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn outputs_hold_content_tokens_only(x in source(), seed in any::<u64>(), dedup in any::<bool>()) {
        let (nat, ip) = models();
        for strategy in [DecodeStrategy::Default, DecodeStrategy::InputSampling] {
            let opts = DecodeOptions { strategy, seed, dedup, ..Default::default() };
            let d = decode(&nat, Some(&ip), &x, &opts).unwrap();
            prop_assert!(d.tokens.iter().all(|&t| t != MASK && t != EPS && t != PAD));
            prop_assert_eq!(&d, &decode(&nat, Some(&ip), &x, &opts).unwrap());
        }
    }

    #[test]
    fn length_parallel_scores_grow_with_candidates(x in source()) {
        let (nat, _) = models();
        let opts = DecodeOptions::default();
        prop_assert_eq!(lpd(&nat, None, &x, 1, &opts).unwrap(), decode(&nat, None, &x, &opts).unwrap());
        let mut last = f64::NEG_INFINITY;
        for n in [1, 3, 5, 7] {
            let d = lpd(&nat, None, &x, n, &opts).unwrap();
            prop_assert!(d.mean_logprob >= last);
            last = d.mean_logprob;
        }
    }
}

#[test]
fn batching_does_not_change_sampled_outputs() {
    let (nat, ip) = models();
    let xs: Vec<TokenSeq> = (0..6)
        .map(|i| TokenSeq((NUM_RESERVED..NUM_RESERVED + 2 + i).collect()))
        .collect();
    let refs: Vec<&[usize]> = xs.iter().map(|x| &x[..]).collect();
    let opts = DecodeOptions {
        strategy: DecodeStrategy::InputSampling,
        seed: 5,
        ..Default::default()
    };
    let batch = decode_batch(&nat, Some(&ip), &refs, &opts).unwrap();
    for (x, d) in xs.iter().zip(batch) {
        assert_eq!(d, decode(&nat, Some(&ip), x, &opts).unwrap());
    }
}

#[test]
fn even_lpd_counts_and_missing_predictor_are_rejected() {
    let (nat, _) = models();
    let x = [5, 6, 7];
    assert!(lpd(&nat, None, &x, 2, &DecodeOptions::default()).is_err());
    let opts = DecodeOptions {
        strategy: DecodeStrategy::InputSampling,
        ..Default::default()
    };
    assert!(decode(&nat, None, &x, &opts).is_err());
}
