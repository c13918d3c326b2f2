//! Per-sample choice among the raw target and several teachers' outputs.

use natlab::data::Vocab;
use natlab::proxy_target::{dynamic_kd_select, tune_gamma, CandidateSet};

fn main() -> natlab::Result<()> {
    let v = Vocab::new(&["a", "b", "c", "d", "e", "f"])?;
    let cands = ["a b c d", "a b c e", "a b f e"]
        .iter()
        .map(|s| v.encode(s))
        .collect::<natlab::Result<Vec<_>>>()?;
    let set = CandidateSet::new(cands.clone())?;
    // Student NLL (bits per token) of each candidate.
    let nll = [2.1, 1.2, 0.9];
    for beta in [0.0, 0.5, 5.0] {
        let k = dynamic_kd_select(&set, &nll, beta, &[1.0, 1.0, 1.0])?;
        println!("beta {beta}: picks [{}]", v.display(&set.candidates[k]));
    }
    let refs = vec![vec![v.encode("a b c e")?]];
    let gamma = tune_gamma(&[set], &refs, &[0.5, 1.0, 2.0, 3.0])?;
    println!("tuned weights {gamma:?}");
    Ok(())
}
