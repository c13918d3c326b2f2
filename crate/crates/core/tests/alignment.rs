mod common;

use common::{random_dists, random_ref};
use natlab::proxy_target::{
    alignment_cost, axe_align, axe_brute_force, oaxe_align, oaxe_brute_force,
};
use rand::Rng;

#[test]
fn axe_matches_brute_force() {
    let mut rng = common::rng(21);
    for n in 0..500 {
        let l = rng.gen_range(1..=6);
        let delta = [0.0, 0.5, 1.0, 5.0][n % 4];
        let pred = random_dists(&mut rng, l);
        let r = random_ref(&mut rng, l);
        let dp = axe_align(&pred, &r, delta).unwrap();
        let bf = axe_brute_force(&pred, &r, delta).unwrap();
        assert!(
            (dp.cost - bf.cost).abs() <= 1e-9 * (1.0 + bf.cost.abs()),
            "instance {n}: {} vs {}",
            dp.cost,
            bf.cost
        );
        let again = alignment_cost(&pred, &r, &dp.alignment, delta);
        assert!((again - dp.cost).abs() <= 1e-9 * (1.0 + again.abs()));
        assert_eq!(dp.target.len(), l);
        // every reference index used exactly once, in order
        let flat: Vec<usize> = dp.alignment.iter().flatten().copied().collect();
        assert_eq!(flat, (0..l).collect::<Vec<_>>());
    }
}

#[test]
fn zero_skip_penalty_finds_the_best_constrained_target() {
    // With delta = 0 the cost is the plain NLL of the induced target.
    let mut rng = common::rng(5);
    for _ in 0..100 {
        let l = rng.gen_range(1..=5);
        let pred = random_dists(&mut rng, l);
        let r = random_ref(&mut rng, l);
        let res = axe_align(&pred, &r, 0.0).unwrap();
        let nll: f64 = res
            .target
            .iter()
            .enumerate()
            .map(|(i, &t)| -pred[i][t].max(1e-30).ln())
            .sum();
        assert!((nll - res.cost).abs() < 1e-9 * (1.0 + nll));
    }
}

#[test]
fn huge_skip_penalty_forbids_multi_alignment() {
    let mut rng = common::rng(8);
    for _ in 0..200 {
        let l = rng.gen_range(1..=6);
        let pred = random_dists(&mut rng, l);
        let r = random_ref(&mut rng, l);
        let res = axe_align(&pred, &r, 1e6).unwrap();
        assert!(res.alignment.iter().all(|b| b.len() <= 1));
    }
}

#[test]
fn oaxe_matches_brute_force() {
    let mut rng = common::rng(33);
    for n in 0..500 {
        let l = rng.gen_range(1..=7);
        let pred = random_dists(&mut rng, l);
        let r = random_ref(&mut rng, l);
        let h = oaxe_align(&pred, &r).unwrap();
        let bf = oaxe_brute_force(&pred, &r).unwrap();
        assert!(
            (h.cost - bf.cost).abs() <= 1e-9 * (1.0 + bf.cost.abs()),
            "instance {n}"
        );
        assert_eq!(h.alignment, bf.alignment, "instance {n}: tie-break differs");
    }
}
