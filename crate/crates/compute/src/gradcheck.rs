//! Randomised comparison of tape gradients against central differences,
//! one small graph per op kind.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::graph::{AttentionLayout, NodeId, Segment, Tape};
use crate::{finite_diff_grad, max_relative_error, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OpCase {
    MatMul,
    Add,
    AddBroadcast,
    Mul,
    Scale,
    Relu,
    Gather,
    LayerNorm,
    Softmax,
    LogSoftmax,
    Attention,
    CausalAttention,
    CrossEntropy,
    Sum,
    Mean,
    SegmentMean,
    TwoLayerNet,
}

impl OpCase {
    pub const ALL: [OpCase; 17] = [
        OpCase::MatMul,
        OpCase::Add,
        OpCase::AddBroadcast,
        OpCase::Mul,
        OpCase::Scale,
        OpCase::Relu,
        OpCase::Gather,
        OpCase::LayerNorm,
        OpCase::Softmax,
        OpCase::LogSoftmax,
        OpCase::Attention,
        OpCase::CausalAttention,
        OpCase::CrossEntropy,
        OpCase::Sum,
        OpCase::Mean,
        OpCase::SegmentMean,
        OpCase::TwoLayerNet,
    ];
}

#[derive(Clone, Debug)]
pub struct CaseResult {
    pub case: OpCase,
    pub max_rel_error: f64,
}

/// A differentiable scalar function of a list of parameter tensors.
type Builder = Box<dyn Fn(&mut Tape, &[NodeId]) -> NodeId>;

struct Case {
    params: Vec<Tensor>,
    build: Builder,
}

fn weighted_sum(tape: &mut Tape, x: NodeId, weights: Tensor) -> NodeId {
    let w = tape.constant(weights);
    let m = tape.mul(x, w).unwrap();
    tape.sum(m).unwrap()
}

fn make_case(case: OpCase, rng: &mut ChaCha8Rng) -> Case {
    let rows = rng.gen_range(2..5);
    let cols = rng.gen_range(2..5);
    let mut r = |shape: &[usize]| Tensor::randn(shape, 1.0, rng);
    let w_out = r(&[rows, cols]);
    match case {
        OpCase::MatMul => {
            let k = cols + 1;
            let w = r(&[rows, cols]);
            Case {
                params: vec![r(&[rows, k]), r(&[k, cols])],
                build: Box::new(move |t, p| {
                    let y = t.matmul(p[0], p[1]).unwrap();
                    weighted_sum(t, y, w.clone())
                }),
            }
        }
        OpCase::Add | OpCase::Mul => Case {
            params: vec![r(&[rows, cols]), r(&[rows, cols])],
            build: Box::new(move |t, p| {
                let y = if case == OpCase::Add {
                    t.add(p[0], p[1]).unwrap()
                } else {
                    t.mul(p[0], p[1]).unwrap()
                };
                weighted_sum(t, y, w_out.clone())
            }),
        },
        OpCase::AddBroadcast => Case {
            params: vec![r(&[rows, cols]), r(&[cols])],
            build: Box::new(move |t, p| {
                let y = t.add(p[0], p[1]).unwrap();
                weighted_sum(t, y, w_out.clone())
            }),
        },
        OpCase::Scale => Case {
            params: vec![r(&[rows, cols])],
            build: Box::new(move |t, p| {
                let y = t.scale(p[0], -1.7).unwrap();
                weighted_sum(t, y, w_out.clone())
            }),
        },
        OpCase::Relu => Case {
            params: vec![r(&[rows, cols])],
            build: Box::new(move |t, p| {
                let y = t.relu(p[0]).unwrap();
                weighted_sum(t, y, w_out.clone())
            }),
        },
        OpCase::Gather => {
            let table_rows = rows + 2;
            let picks: Vec<usize> = (0..rows).map(|i| (i * 7 + 1) % table_rows).collect();
            Case {
                params: vec![r(&[table_rows, cols])],
                build: Box::new(move |t, p| {
                    let y = t.gather(p[0], picks.clone()).unwrap();
                    weighted_sum(t, y, w_out.clone())
                }),
            }
        }
        OpCase::LayerNorm => Case {
            params: vec![r(&[rows, cols]), r(&[cols]), r(&[cols])],
            build: Box::new(move |t, p| {
                let y = t.layer_norm(p[0], p[1], p[2]).unwrap();
                weighted_sum(t, y, w_out.clone())
            }),
        },
        OpCase::Softmax | OpCase::LogSoftmax => Case {
            params: vec![r(&[rows, cols])],
            build: Box::new(move |t, p| {
                let y = if case == OpCase::Softmax {
                    t.softmax(p[0]).unwrap()
                } else {
                    t.log_softmax(p[0]).unwrap()
                };
                weighted_sum(t, y, w_out.clone())
            }),
        },
        OpCase::Attention | OpCase::CausalAttention => {
            let causal = case == OpCase::CausalAttention;
            let heads = 2;
            let d = 4;
            let (nq, nk) = if causal { (5, 5) } else { (5, 6) };
            let segments = if causal {
                vec![
                    Segment {
                        q_start: 0,
                        q_len: 2,
                        k_start: 0,
                        k_len: 2,
                    },
                    Segment {
                        q_start: 2,
                        q_len: 3,
                        k_start: 2,
                        k_len: 3,
                    },
                ]
            } else {
                vec![
                    Segment {
                        q_start: 0,
                        q_len: 2,
                        k_start: 0,
                        k_len: 4,
                    },
                    Segment {
                        q_start: 2,
                        q_len: 3,
                        k_start: 4,
                        k_len: 2,
                    },
                ]
            };
            let layout = AttentionLayout {
                heads,
                causal,
                segments,
            };
            let w = r(&[nq, d]);
            Case {
                params: vec![r(&[nq, d]), r(&[nk, d]), r(&[nk, d])],
                build: Box::new(move |t, p| {
                    let y = t.attention(p[0], p[1], p[2], layout.clone()).unwrap();
                    weighted_sum(t, y, w.clone())
                }),
            }
        }
        OpCase::CrossEntropy => {
            let targets: Vec<usize> = (0..rows).map(|i| (i * 3) % cols).collect();
            let weights: Vec<f64> = (0..rows).map(|i| 0.5 + i as f64 * 0.25).collect();
            Case {
                params: vec![r(&[rows, cols])],
                build: Box::new(move |t, p| {
                    t.cross_entropy(p[0], targets.clone(), weights.clone(), 0.1)
                        .unwrap()
                }),
            }
        }
        OpCase::Sum | OpCase::Mean => Case {
            params: vec![r(&[rows, cols])],
            build: Box::new(move |t, p| {
                let sq = t.mul(p[0], p[0]).unwrap();
                if case == OpCase::Sum {
                    t.sum(sq).unwrap()
                } else {
                    t.mean(sq).unwrap()
                }
            }),
        },
        OpCase::SegmentMean => {
            let n = rows + 2;
            let segs = vec![(0, 2), (2, n - 2)];
            let w = r(&[2, cols]);
            Case {
                params: vec![r(&[n, cols])],
                build: Box::new(move |t, p| {
                    let y = t.segment_mean(p[0], segs.clone()).unwrap();
                    weighted_sum(t, y, w.clone())
                }),
            }
        }
        OpCase::TwoLayerNet => {
            let (din, hidden, classes) = (3, 5, 4);
            let x = r(&[rows, din]);
            let targets: Vec<usize> = (0..rows).map(|i| i % classes).collect();
            Case {
                params: vec![
                    r(&[din, hidden]),
                    r(&[hidden]),
                    r(&[hidden, classes]),
                    r(&[classes]),
                ],
                build: Box::new(move |t, p| {
                    let xin = t.constant(x.clone());
                    let h = t.matmul(xin, p[0]).unwrap();
                    let h = t.add(h, p[1]).unwrap();
                    let h = t.relu(h).unwrap();
                    let o = t.matmul(h, p[2]).unwrap();
                    let o = t.add(o, p[3]).unwrap();
                    let n = targets.len();
                    t.cross_entropy(o, targets.clone(), vec![1.0 / n as f64; n], 0.0)
                        .unwrap()
                }),
            }
        }
    }
}

fn eval_case(case: &Case, params: &[Tensor]) -> f64 {
    let mut tape = Tape::new();
    let ids: Vec<NodeId> = params.iter().map(|p| tape.param(p.clone())).collect();
    let loss = (case.build)(&mut tape, &ids);
    tape.value(loss).item()
}

/// Checks one random instance of `op`; returns the worst relative error over all parameters.
pub fn check_case(op: OpCase, seed: u64) -> CaseResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let case = make_case(op, &mut rng);
    let mut tape = Tape::new();
    let ids: Vec<NodeId> = case.params.iter().map(|p| tape.param(p.clone())).collect();
    let loss = (case.build)(&mut tape, &ids);
    let grads = tape.backward(loss).expect("scalar loss");
    let mut worst: f64 = 0.0;
    for (k, id) in ids.iter().enumerate() {
        let analytic = grads.get(*id).expect("leaf gradient");
        let numeric = finite_diff_grad(
            |x| {
                let mut ps = case.params.clone();
                ps[k] = x.clone();
                eval_case(&case, &ps)
            },
            &case.params[k],
            1e-5,
        );
        worst = worst.max(max_relative_error(analytic, &numeric, 1e-6));
    }
    CaseResult {
        case: op,
        max_rel_error: worst,
    }
}

/// `points` random instances cycling through every op kind.
pub fn check_points(points: usize, seed: u64) -> Vec<CaseResult> {
    (0..points)
        .map(|i| {
            check_case(
                OpCase::ALL[i % OpCase::ALL.len()],
                seed.wrapping_add(i as u64),
            )
        })
        .collect()
}
