//! Alignment-based proxy targets for one set of position predictions.

use natlab::data::{Vocab, EPS};
use natlab::proxy_target::{axe_align, oaxe_align};

fn main() -> natlab::Result<()> {
    let v = Vocab::new(&["the", "cat", "sat"])?;
    let id = |s| v.id(s).unwrap();
    let reference: Vec<usize> = ["the", "cat", "sat"].iter().map(|s| id(s)).collect();

    // The model predicts the words shifted by one place.
    let mut pred = vec![vec![0.01; v.size()]; 3];
    pred[0][EPS] = 0.6;
    pred[1][id("the")] = 0.8;
    pred[2][id("cat")] = 0.5;
    pred[2][id("sat")] = 0.4;
    for row in pred.iter_mut() {
        let s: f64 = row.iter().sum();
        row.iter_mut().for_each(|p| *p /= s);
    }

    for delta in [0.0, 1.0, 5.0] {
        let a = axe_align(&pred, &reference, delta)?;
        println!(
            "AXE delta={delta}: target [{}], cost {:.3} nats, alignment {:?}",
            v.display(&a.target),
            a.cost,
            a.alignment
        );
    }
    let o = oaxe_align(&pred, &reference)?;
    println!(
        "OaXE: target [{}], cost {:.3} nats",
        v.display(&o.target),
        o.cost
    );
    Ok(())
}
