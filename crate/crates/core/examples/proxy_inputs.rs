//! Decoder inputs drawn by each masking rule, with their exact probabilities.

use natlab::data::{TokenSeq, Vocab};
use natlab::proxy_input::{sample_input, GlatKind, GlatSnapshot, LambdaSchedule, MaskRule};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> natlab::Result<()> {
    let v = Vocab::new(&["a", "b", "c", "d", "e"])?;
    let t = v.encode("a b c d e")?;
    // A model that gets the first two positions right.
    let snap = GlatSnapshot {
        argmax: vec![t[0], t[1], t[0], t[0], t[0]],
        p_ref: vec![0.9, 0.7, 0.2, 0.1, 0.3],
    };
    let schedule = LambdaSchedule::default();
    let rules = [
        MaskRule::Vanilla,
        MaskRule::CmlmUniform,
        MaskRule::CmlmFixed { ratio: 0.4 },
        MaskRule::Glat {
            kind: GlatKind::Mismatch,
            schedule,
        },
        MaskRule::Glat {
            kind: GlatKind::PropRef,
            schedule,
        },
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for rule in &rules {
        for _ in 0..2 {
            let p = sample_input(rule, &t, Some(&snap), 0, &mut rng)?;
            println!(
                "{:<22} [{}]  log Q = {:.3}",
                rule.name(),
                v.display(&p.z),
                p.log_q
            );
        }
    }
    assert_eq!(TokenSeq::masks(5).len(), t.len());
    Ok(())
}
