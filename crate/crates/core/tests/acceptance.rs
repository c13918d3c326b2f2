//! End-to-end acceptance run: one PASS/FAIL line per criterion, nonzero exit
//! on any failure. Pass criterion numbers as arguments to run a subset.

mod common;

use std::sync::OnceLock;
use std::time::{Duration, Instant};

use common::{mask_rules, patterns, random_dists, random_ref, random_snapshot, MpleCase};
use natlab::data::TokenSeq;
use natlab::proxy_input::mask_pattern_logprob;
use natlab::proxy_target::{axe_align, axe_brute_force, oaxe_align, oaxe_brute_force};
use natlab::recipes::{Lab, Recipe, Report};
use natlab::Result;
use natlab_compute::gradcheck::{check_points, OpCase};
use rand::Rng;

type Check = fn(&mut Shared) -> Result<(bool, String)>;

/// Recipe reports and the trained lab, computed once and shared.
#[derive(Default)]
struct Shared {
    lab: OnceLock<Lab>,
    fig2: Option<Report>,
}

impl Shared {
    fn lab(&self) -> Result<&Lab> {
        if let Some(l) = self.lab.get() {
            return Ok(l);
        }
        let lab = Lab::build(&Recipe::Fig4LnatBelowC.default_spec()?)?;
        Ok(self.lab.get_or_init(|| lab))
    }

    fn lab_report(&self, recipe: Recipe) -> Result<Report> {
        let spec = recipe.default_spec()?;
        let lab = self.lab()?;
        assert!(
            lab.serves(&spec),
            "{} does not share the lab setting",
            recipe.name()
        );
        recipe.run(&spec, Some(lab))
    }

    fn fig2(&mut self) -> Result<&Report> {
        if self.fig2.is_none() {
            let r =
                Recipe::Fig2Multimodality.run(&Recipe::Fig2Multimodality.default_spec()?, None)?;
            self.fig2 = Some(r);
        }
        Ok(self.fig2.as_ref().unwrap())
    }
}

fn get(r: &Report, key: &str) -> f64 {
    r.value(key)
        .unwrap_or_else(|| panic!("{} has no {key}", r.recipe))
}

fn gradients(_: &mut Shared) -> Result<(bool, String)> {
    let results = check_points(100, 2024);
    let worst = results.iter().map(|r| r.max_rel_error).fold(0.0, f64::max);
    let covered = OpCase::ALL
        .iter()
        .all(|op| results.iter().any(|r| r.case == *op));
    Ok((
        worst < 1e-4 && covered,
        format!("worst relative error {worst:.2e} over 100 points, all ops covered: {covered}"),
    ))
}

fn theorem1_bound(_: &mut Shared) -> Result<(bool, String)> {
    let spec = Recipe::Theorem1.default_spec()?;
    let r = Recipe::Theorem1.run(&spec, None)?;
    let (toys, models) = (get(&r, "toys"), get(&r, "models_per_toy"));
    let margin = get(&r, "min_kl_minus_tc");
    let gap = get(&r, "max_matching_gap");
    let small = spec.param_num("toy_max_len", 0usize)? <= 3
        && spec.param_num("toy_max_vocab", 0usize)? <= 8;
    let ok = toys >= 50.0 && models >= 200.0 && small && margin >= -1e-9 && gap <= 1e-6;
    Ok((
        ok,
        format!(
            "{toys} toys x {models} models: min(KL - C) = {margin:.3e}, matching gap {gap:.1e}"
        ),
    ))
}

fn theorem1_training(s: &mut Shared) -> Result<(bool, String)> {
    let r = s.fig2()?;
    let (kl, tc) = (get(r, "raw_exact_kl"), get(r, "exact_tc"));
    let ok = (tc - 1.0).abs() < 1e-12 && kl - tc <= 0.05 && kl >= tc - 1e-9;
    Ok((ok, format!("exact_kl {kl:.4} vs exact_tc {tc:.4} bits")))
}

fn multimodality(s: &mut Shared) -> Result<(bool, String)> {
    let r = s.fig2()?;
    let (raw, kd) = (get(r, "raw_invalid_mass"), get(r, "kd_invalid_mass"));
    Ok((
        raw >= 0.4 && kd <= 0.05,
        format!("invalid mass raw {raw:.4}, kd {kd:.4}"),
    ))
}

fn alignment(_: &mut Shared) -> Result<(bool, String)> {
    let mut rng = common::rng(505);
    let mut worst: f64 = 0.0;
    for n in 0..500 {
        let l = rng.gen_range(1..=6);
        let delta = [0.0, 0.5, 1.0, 5.0][n % 4];
        let pred = random_dists(&mut rng, l);
        let r = random_ref(&mut rng, l);
        let (dp, bf) = (
            axe_align(&pred, &r, delta)?,
            axe_brute_force(&pred, &r, delta)?,
        );
        worst = worst.max((dp.cost - bf.cost).abs() / (1.0 + bf.cost.abs()));
    }
    for _ in 0..500 {
        let l = rng.gen_range(1..=7);
        let pred = random_dists(&mut rng, l);
        let r = random_ref(&mut rng, l);
        let (h, bf) = (oaxe_align(&pred, &r)?, oaxe_brute_force(&pred, &r)?);
        worst = worst.max((h.cost - bf.cost).abs() / (1.0 + bf.cost.abs()));
    }
    Ok((
        worst <= 1e-9,
        format!("500 AXE + 500 OaXE instances, worst relative cost gap {worst:.1e}"),
    ))
}

fn fig4(s: &mut Shared) -> Result<(bool, String)> {
    let r = s.lab_report(Recipe::Fig4LnatBelowC)?;
    let c = get(&r, "c_hat");
    let mut ok = true;
    let mut parts = Vec::new();
    for (run, want) in [
        ("raw", false),
        ("kd", true),
        ("axe", true),
        ("oaxe", true),
        ("glat", true),
    ] {
        let l = get(&r, &format!("l_nat.{run}"));
        ok &= (l < c) == want;
        parts.push(format!("{run} {l:.3}"));
    }
    Ok((ok, format!("C_hat {c:.3}; L_NAT {}", parts.join(", "))))
}

fn table2(s: &mut Shared) -> Result<(bool, String)> {
    let r = s.lab_report(Recipe::Table2ProxyTargets)?;
    let runs = r
        .summary
        .iter()
        .filter(|(k, _)| k.starts_with("l_mple."))
        .count();
    let mut ok = runs >= 6;
    let mut parts = Vec::new();
    for beta in [0.1, 0.2, 0.5] {
        let v = get(&r, &format!("pearson.beta={beta}"));
        ok &= v <= -0.7;
        parts.push(format!("beta {beta}: r = {v:.3}"));
    }
    Ok((ok, format!("{runs} configs; {}", parts.join(", "))))
}

fn input_sampling(s: &mut Shared) -> Result<(bool, String)> {
    let r = s.lab_report(Recipe::Table3ProxyInputs)?;
    let (smp, def) = (get(&r, "bleu_sample.cmlm"), get(&r, "bleu_default.cmlm"));
    Ok((
        smp - def >= 1.0,
        format!("CMLM BLEU input sampling {smp:.2} vs default {def:.2}"),
    ))
}

fn dynamic_kd(s: &mut Shared) -> Result<(bool, String)> {
    let r = s.lab_report(Recipe::Fig7DynamicKd)?;
    let (dyn_, best, b0) = (
        get(&r, "bleu.dynamic_kd"),
        get(&r, "bleu.best_single"),
        get(&r, "bleu.dynamic_kd_beta0"),
    );
    let ok = dyn_ >= best - 0.3 && b0 < dyn_;
    Ok((
        ok,
        format!("dynamic KD {dyn_:.2}, best single tier {best:.2}, beta=0 {b0:.2}"),
    ))
}

fn mask_normalisation(_: &mut Shared) -> Result<(bool, String)> {
    let mut rng = common::rng(1010);
    let mut worst: f64 = 0.0;
    for rule in mask_rules() {
        for len in 1..=4 {
            for step in 0..20 {
                let t = TokenSeq((0..len).map(|_| rng.gen_range(5..9)).collect());
                let snap = random_snapshot(&mut rng, &t);
                let mut total = 0.0;
                for z in patterns(&t) {
                    total += mask_pattern_logprob(&rule, &z, &t, Some(&snap), step)?.exp();
                }
                worst = worst.max((total - 1.0).abs());
            }
        }
    }
    Ok((
        worst <= 1e-9,
        format!(
            "{} rules, L <= 4: worst |sum - 1| = {worst:.1e}",
            mask_rules().len()
        ),
    ))
}

fn mple_algebra(_: &mut Shared) -> Result<(bool, String)> {
    let mut rng = common::rng(1111);
    let (mut decomposition, mut slack) = (0.0f64, f64::INFINITY);
    for _ in 0..100 {
        let t = MpleCase::random(&mut rng).terms()?;
        decomposition = decomposition.max((t.mple - t.integrand).abs());
        slack = slack.min(t.mple - t.nll);
    }
    let ok = decomposition <= 1e-9 && slack >= -1e-9;
    Ok((
        ok,
        format!(
            "100 random Q: decomposition error {decomposition:.1e}, min(bound - NLL) = {slack:.3e}"
        ),
    ))
}

fn determinism(_: &mut Shared) -> Result<(bool, String)> {
    let mut spec = Recipe::Theorem1.default_spec()?;
    spec.seed = 7;
    let dir = tempfile::tempdir().map_err(|e| natlab::NatError::io(std::env::temp_dir(), e))?;
    let mut logs = Vec::new();
    for i in 0..2 {
        let out = dir.path().join(i.to_string());
        Recipe::Theorem1.run(&spec, None)?.write(&out)?;
        let path = out.join("metrics.jsonl");
        logs.push(std::fs::read(&path).map_err(|e| natlab::NatError::io(&path, e))?);
    }
    let same = logs[0] == logs[1] && !logs[0].is_empty();
    Ok((
        same,
        format!(
            "two seed-7 runs, {} bytes each, identical: {same}",
            logs[0].len()
        ),
    ))
}

const CRITERIA: [(usize, &str, u64, Check); 12] = [
    (1, "gradient oracle", 60, gradients),
    (2, "theorem 1 lower bound", 60, theorem1_bound),
    (3, "theorem 1 via training", 300, theorem1_training),
    (4, "multi-modality mass", 300, multimodality),
    (5, "alignment oracles", 120, alignment),
    (6, "L_NAT below C_hat", 1800, fig4),
    (7, "MPLE-BLEU correlation", 2700, table2),
    (8, "input sampling", 1200, input_sampling),
    (9, "dynamic KD", 2700, dynamic_kd),
    (10, "mask-rule normalisation", 60, mask_normalisation),
    (11, "MPLE algebra", 60, mple_algebra),
    (12, "determinism", 120, determinism),
];

fn main() {
    let only: Vec<usize> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let mut shared = Shared::default();
    let mut failed = 0;
    for (n, name, budget, check) in CRITERIA {
        if !only.is_empty() && !only.contains(&n) {
            continue;
        }
        let start = Instant::now();
        let outcome = check(&mut shared);
        let took = start.elapsed();
        let over = took > Duration::from_secs(budget);
        let (pass, detail) = match outcome {
            Ok((ok, d)) => (ok && !over, d),
            Err(e) => (false, format!("error: {e}")),
        };
        let limit = if over {
            format!(", over the {budget}s limit")
        } else {
            String::new()
        };
        println!(
            "{} {n:>2} {name}: {detail} ({:.1}s{limit})",
            if pass { "PASS" } else { "FAIL" },
            took.as_secs_f64()
        );
        failed += usize::from(!pass);
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
