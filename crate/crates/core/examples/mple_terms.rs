//! The proxy-likelihood objective by enumeration on a two-token problem: its
//! three terms, and the bound it places on the exact negative log-likelihood.

use natlab::data::{TokenSeq, MASK};
use natlab::metrics::{exact_mple_terms, MpleProblem};

fn main() -> natlab::Result<()> {
    let (a, b) = (5, 6);
    let alphabet = [a, b];
    let y = |s: [usize; 2]| TokenSeq(s.to_vec());
    let data = [(y([a, b]), 0.5), (y([b, a]), 0.5)];
    // Proxy: reveal the first token of either mode, predict the rest.
    let q = [
        (y([a, MASK]), y([a, b]), 0.5),
        (y([b, MASK]), y([b, a]), 0.5),
    ];
    let decoder = |z: &TokenSeq| {
        let mut rows = vec![vec![0.0; 7]; 2];
        let second = match z[0] {
            t if t == a => [0.1, 0.9],
            t if t == b => [0.9, 0.1],
            _ => [0.5, 0.5],
        };
        rows[0][a] = 0.5;
        rows[0][b] = 0.5;
        rows[1][a] = second[0];
        rows[1][b] = second[1];
        rows
    };
    let mut ip = vec![0.0; 7];
    ip[MASK] = 0.5;
    ip[a] = 0.25;
    ip[b] = 0.25;
    let input = [ip.clone(), ip];
    for beta in [0.5, 2.0, 8.0] {
        let t = exact_mple_terms(&MpleProblem {
            alphabet: &alphabet,
            len: 2,
            data: &data,
            q: &q,
            decoder: &decoder,
            input: &input,
            beta,
        })?;
        println!(
            "beta {beta}: L_NAT {:.3} + L_target {:.3} + L_input {:.3} = {:.3} >= NLL {:.3}",
            t.l_nat, t.l_target, t.l_input, t.mple, t.nll
        );
    }
    Ok(())
}
