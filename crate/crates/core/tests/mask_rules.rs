mod common;

use std::collections::HashMap;

use common::{mask_rules as rules, patterns, random_snapshot};
use natlab::data::{TokenSeq, MASK};
use natlab::proxy_input::{
    mask_pattern_logprob, sample_input, GlatKind, GlatSnapshot, LambdaSchedule,
};
use rand::Rng;

#[test]
fn every_rule_normalises_over_all_patterns() {
    let mut rng = common::rng(17);
    for rule in rules() {
        for len in 1..=4 {
            for trial in 0..20 {
                let t = TokenSeq((0..len).map(|_| rng.gen_range(5..9)).collect());
                let snap = random_snapshot(&mut rng, &t);
                let step = trial;
                let total: f64 = patterns(&t)
                    .iter()
                    .map(|z| {
                        mask_pattern_logprob(&rule, z, &t, Some(&snap), step)
                            .unwrap()
                            .exp()
                    })
                    .sum();
                assert!(
                    (total - 1.0).abs() < 1e-9,
                    "{} L={len}: {total}",
                    rule.name()
                );
            }
        }
    }
}

#[test]
fn sampler_frequencies_match_pattern_probabilities() {
    let mut rng = common::rng(3);
    let t = TokenSeq(vec![5, 6, 7, 8]);
    let snap = GlatSnapshot {
        argmax: vec![9, 9, 9, 8],
        p_ref: vec![0.9, 0.05, 0.5, 0.3],
    };
    for rule in rules() {
        let n = 20_000;
        let mut freq: HashMap<TokenSeq, f64> = HashMap::new();
        for _ in 0..n {
            let p = sample_input(&rule, &t, Some(&snap), 3, &mut rng).unwrap();
            let lq = mask_pattern_logprob(&rule, &p.z, &t, Some(&snap), 3).unwrap();
            assert!((lq - p.log_q).abs() < 1e-12);
            assert!(p.z.iter().zip(t.iter()).all(|(z, x)| *z == MASK || z == x));
            *freq.entry(p.z).or_insert(0.0) += 1.0 / n as f64;
        }
        for z in patterns(&t) {
            let exact = mask_pattern_logprob(&rule, &z, &t, Some(&snap), 3)
                .unwrap()
                .exp();
            let f = freq.get(&z).copied().unwrap_or(0.0);
            assert!(
                (f - exact).abs() < 0.015,
                "{} {:?}: {f} vs {exact}",
                rule.name(),
                z.0
            );
        }
    }
}

#[test]
fn glat_reveal_count_falls_with_accuracy() {
    let schedule = LambdaSchedule::default();
    let t = TokenSeq((5..13).collect());
    let mut last = usize::MAX;
    for correct in 0..=8 {
        let argmax: Vec<usize> = (0..8)
            .map(|i| if i < correct { t[i] } else { 40 })
            .collect();
        let snap = GlatSnapshot {
            argmax,
            p_ref: vec![0.5; 8],
        };
        let n = natlab::proxy_input::glat_reveal_count(GlatKind::Mismatch, &schedule, &t, &snap, 0);
        assert!(n <= last);
        last = n;
    }
    assert_eq!(last, 0);
}
