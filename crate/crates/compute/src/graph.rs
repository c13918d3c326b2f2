//! Recorded computation graphs with eager evaluation and reverse-mode gradients.
//!
//! A [`Tape`] records each op as it is applied and evaluates it immediately, so
//! model code reads like ordinary numeric code. The recorded [`Graph`] can be
//! re-evaluated against fresh leaf values with [`Graph::forward`], and
//! [`Graph::backward`] propagates gradients from any scalar node.

use crate::tensor::{
    log_softmax_in_place, matmul_at_into, matmul_bt_into, matmul_into, softmax_in_place,
};
use crate::{ComputeError, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// One block of an attention op: query rows `q_start..q_start+q_len` attend to
/// key/value rows `k_start..k_start+k_len`.
#[derive(Clone, Debug, PartialEq)]
pub struct Segment {
    pub q_start: usize,
    pub q_len: usize,
    pub k_start: usize,
    pub k_len: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttentionLayout {
    pub heads: usize,
    /// Query `i` of a segment only sees keys `0..=i` of the same segment.
    pub causal: bool,
    pub segments: Vec<Segment>,
}

#[derive(Clone, Debug)]
pub enum Op {
    Leaf {
        requires_grad: bool,
    },
    MatMul(NodeId, NodeId),
    /// Elementwise add; the right operand may also be a row vector broadcast over rows.
    Add(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    Relu(NodeId),
    /// Embedding lookup: picks rows of `table`.
    Gather {
        table: NodeId,
        rows: Vec<usize>,
    },
    LayerNorm {
        x: NodeId,
        gain: NodeId,
        bias: NodeId,
        eps: f64,
    },
    Softmax(NodeId),
    LogSoftmax(NodeId),
    Attention {
        q: NodeId,
        k: NodeId,
        v: NodeId,
        layout: AttentionLayout,
    },
    /// `sum_r w_r * CE(logits_r, target_r)` with optional label smoothing.
    CrossEntropy {
        logits: NodeId,
        targets: Vec<usize>,
        weights: Vec<f64>,
        smoothing: f64,
    },
    Sum(NodeId),
    Mean(NodeId),
    /// Row means over `(start, len)` row ranges.
    SegmentMean {
        x: NodeId,
        segments: Vec<(usize, usize)>,
    },
}

impl Op {
    fn inputs(&self) -> Vec<NodeId> {
        match self {
            Op::Leaf { .. } => vec![],
            Op::MatMul(a, b) | Op::Add(a, b) | Op::Mul(a, b) => vec![*a, *b],
            Op::Scale(a, _) | Op::Relu(a) | Op::Softmax(a) | Op::LogSoftmax(a) => vec![*a],
            Op::Sum(a) | Op::Mean(a) => vec![*a],
            Op::Gather { table, .. } => vec![*table],
            Op::LayerNorm { x, gain, bias, .. } => vec![*x, *gain, *bias],
            Op::Attention { q, k, v, .. } => vec![*q, *k, *v],
            Op::CrossEntropy { logits, .. } => vec![*logits],
            Op::SegmentMean { x, .. } => vec![*x],
        }
    }
}

#[derive(Clone, Debug)]
struct Node {
    op: Op,
    shape: Vec<usize>,
}

/// Topologically ordered op list. Every non-leaf node consumes only earlier nodes.
#[derive(Clone, Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    leaves: Vec<NodeId>,
}

/// Node values (and cached intermediates) for one evaluation of a graph.
#[derive(Clone, Debug, Default)]
pub struct Evaluation {
    values: Vec<Tensor>,
    aux: Vec<Vec<f64>>,
}

impl Evaluation {
    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.values[id.0]
    }
}

/// Gradients of a scalar loss with respect to graph nodes.
#[derive(Clone, Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, id: NodeId) -> Option<Tensor> {
        self.grads.get_mut(id.0).and_then(|g| g.take())
    }
}

impl Graph {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Leaf nodes in creation order; [`Graph::forward`] binds its inputs to these.
    pub fn leaves(&self) -> &[NodeId] {
        &self.leaves
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        &self.nodes[id.0].shape
    }

    pub fn op(&self, id: NodeId) -> &Op {
        &self.nodes[id.0].op
    }

    /// Re-evaluates every node with new leaf values.
    pub fn forward(&self, leaf_values: &[Tensor]) -> Result<Evaluation, ComputeError> {
        if leaf_values.len() != self.leaves.len() {
            return Err(ComputeError::LeafCount {
                expected: self.leaves.len(),
                got: leaf_values.len(),
            });
        }
        let mut eval = Evaluation::default();
        let mut next_leaf = 0;
        for (i, node) in self.nodes.iter().enumerate() {
            let (value, aux) = match &node.op {
                Op::Leaf { .. } => {
                    let v = &leaf_values[next_leaf];
                    next_leaf += 1;
                    if v.shape() != node.shape.as_slice() {
                        return Err(ComputeError::ShapeMismatch {
                            node: i,
                            detail: format!("leaf declared {:?}, got {:?}", node.shape, v.shape()),
                        });
                    }
                    (v.clone(), Vec::new())
                }
                op => evaluate(op, &eval.values, i)?,
            };
            eval.values.push(value);
            eval.aux.push(aux);
        }
        Ok(eval)
    }

    /// Reverse-mode sweep from a scalar node. Only nodes that depend on a
    /// `requires_grad` leaf receive gradients.
    pub fn backward(&self, eval: &Evaluation, loss: NodeId) -> Result<Gradients, ComputeError> {
        let n = self.nodes.len();
        if loss.0 >= n {
            return Err(ComputeError::UnknownNode(loss.0));
        }
        if eval.values[loss.0].numel() != 1 {
            return Err(ComputeError::NonScalarLoss {
                node: loss.0,
                shape: eval.values[loss.0].shape().to_vec(),
            });
        }
        let mut needs = vec![false; n];
        for (i, node) in self.nodes.iter().enumerate() {
            needs[i] = match &node.op {
                Op::Leaf { requires_grad } => *requires_grad,
                op => op.inputs().iter().any(|inp| needs[inp.0]),
            };
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; n];
        if needs[loss.0] {
            grads[loss.0] = Some(Tensor::filled(eval.values[loss.0].shape(), 1.0));
        }
        for i in (0..=loss.0).rev() {
            if !needs[i] {
                continue;
            }
            let Some(upstream) = grads[i].take() else {
                continue;
            };
            backprop(&self.nodes[i].op, i, &upstream, eval, &needs, &mut grads);
            grads[i] = Some(upstream);
        }
        // Intermediate nodes keep their gradient; leaves without grad stay None.
        for (i, node) in self.nodes.iter().enumerate() {
            if let Op::Leaf { requires_grad } = node.op {
                if requires_grad && grads[i].is_none() {
                    grads[i] = Some(Tensor::zeros(&node.shape));
                }
            }
        }
        Ok(Gradients { grads })
    }
}

fn accumulate(grads: &mut [Option<Tensor>], needs: &[bool], id: NodeId, g: Tensor) {
    if !needs[id.0] {
        return;
    }
    match &mut grads[id.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

fn mismatch(node: usize, detail: String) -> ComputeError {
    ComputeError::ShapeMismatch { node, detail }
}

fn expect_matrix(t: &Tensor, node: usize, what: &str) -> Result<(usize, usize), ComputeError> {
    if t.shape().len() != 2 {
        return Err(mismatch(
            node,
            format!("{what} must be a matrix, got {:?}", t.shape()),
        ));
    }
    Ok((t.shape()[0], t.shape()[1]))
}

fn evaluate(op: &Op, values: &[Tensor], node: usize) -> Result<(Tensor, Vec<f64>), ComputeError> {
    let get = |id: NodeId| -> Result<&Tensor, ComputeError> {
        if id.0 >= node {
            return Err(ComputeError::UnknownNode(id.0));
        }
        Ok(&values[id.0])
    };
    let out = match op {
        Op::Leaf { .. } => unreachable!("leaves are bound, not evaluated"),
        Op::MatMul(a, b) => {
            let (a, b) = (get(*a)?, get(*b)?);
            let (m, k) = expect_matrix(a, node, "matmul lhs")?;
            let (k2, n) = expect_matrix(b, node, "matmul rhs")?;
            if k != k2 {
                return Err(mismatch(
                    node,
                    format!("matmul {:?} x {:?}", a.shape(), b.shape()),
                ));
            }
            let mut out = vec![0.0; m * n];
            matmul_into(a.data(), b.data(), &mut out, m, k, n);
            (Tensor::new(vec![m, n], out)?, Vec::new())
        }
        Op::Add(a, b) => {
            let (a, b) = (get(*a)?, get(*b)?);
            let mut out = a.clone();
            if a.shape() == b.shape() {
                out.add_assign(b);
            } else if b.shape().len() == 1 && b.numel() == a.cols() {
                let c = a.cols();
                for (i, v) in out.data_mut().iter_mut().enumerate() {
                    *v += b.data()[i % c];
                }
            } else {
                return Err(mismatch(
                    node,
                    format!("add {:?} + {:?}", a.shape(), b.shape()),
                ));
            }
            (out, Vec::new())
        }
        Op::Mul(a, b) => {
            let (a, b) = (get(*a)?, get(*b)?);
            if a.shape() != b.shape() {
                return Err(mismatch(
                    node,
                    format!("mul {:?} * {:?}", a.shape(), b.shape()),
                ));
            }
            let data = a.data().iter().zip(b.data()).map(|(x, y)| x * y).collect();
            (Tensor::new(a.shape().to_vec(), data)?, Vec::new())
        }
        Op::Scale(a, c) => {
            let a = get(*a)?;
            let data = a.data().iter().map(|x| x * c).collect();
            (Tensor::new(a.shape().to_vec(), data)?, Vec::new())
        }
        Op::Relu(a) => {
            let a = get(*a)?;
            let data = a.data().iter().map(|x| x.max(0.0)).collect();
            (Tensor::new(a.shape().to_vec(), data)?, Vec::new())
        }
        Op::Gather { table, rows } => {
            let t = get(*table)?;
            let (n, d) = expect_matrix(t, node, "gather table")?;
            let mut data = Vec::with_capacity(rows.len() * d);
            for &r in rows {
                if r >= n {
                    return Err(mismatch(node, format!("gather row {r} of {n}")));
                }
                data.extend_from_slice(t.row(r));
            }
            (Tensor::new(vec![rows.len(), d], data)?, Vec::new())
        }
        Op::LayerNorm { x, gain, bias, eps } => {
            let (x, g, b) = (get(*x)?, get(*gain)?, get(*bias)?);
            let d = x.cols();
            if g.numel() != d || b.numel() != d {
                return Err(mismatch(
                    node,
                    format!("layer norm over {d} with gain {:?}", g.shape()),
                ));
            }
            let mut out = x.clone();
            let mut aux = Vec::with_capacity(2 * x.rows());
            for r in 0..x.rows() {
                let row = x.row(r);
                let mean = row.iter().sum::<f64>() / d as f64;
                let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d as f64;
                let rstd = 1.0 / (var + eps).sqrt();
                for (c, o) in out.row_mut(r).iter_mut().enumerate() {
                    *o = (row[c] - mean) * rstd * g.data()[c] + b.data()[c];
                }
                aux.push(mean);
                aux.push(rstd);
            }
            (out, aux)
        }
        Op::Softmax(a) => {
            let mut out = get(*a)?.clone();
            for r in 0..out.rows() {
                softmax_in_place(out.row_mut(r));
            }
            (out, Vec::new())
        }
        Op::LogSoftmax(a) => {
            let mut out = get(*a)?.clone();
            for r in 0..out.rows() {
                log_softmax_in_place(out.row_mut(r));
            }
            (out, Vec::new())
        }
        Op::Attention { q, k, v, layout } => {
            attention_forward(get(*q)?, get(*k)?, get(*v)?, layout, node)?
        }
        Op::CrossEntropy {
            logits,
            targets,
            weights,
            smoothing,
        } => {
            let l = get(*logits)?;
            let (m, c) = expect_matrix(l, node, "cross-entropy logits")?;
            if targets.len() != m || weights.len() != m {
                return Err(mismatch(
                    node,
                    format!(
                        "cross-entropy over {m} rows with {} targets, {} weights",
                        targets.len(),
                        weights.len()
                    ),
                ));
            }
            let mut probs = Vec::with_capacity(m * c);
            let mut total = 0.0;
            for r in 0..m {
                if targets[r] >= c {
                    return Err(mismatch(
                        node,
                        format!("target {} of {c} classes", targets[r]),
                    ));
                }
                let mut lp = l.row(r).to_vec();
                log_softmax_in_place(&mut lp);
                if weights[r] != 0.0 {
                    let mut row_loss = -(1.0 - smoothing) * lp[targets[r]];
                    if *smoothing > 0.0 {
                        row_loss -= smoothing / c as f64 * lp.iter().sum::<f64>();
                    }
                    total += weights[r] * row_loss;
                }
                probs.extend(lp.iter().map(|v| v.exp()));
            }
            (Tensor::scalar(total), probs)
        }
        Op::Sum(a) => (Tensor::scalar(get(*a)?.data().iter().sum()), Vec::new()),
        Op::Mean(a) => {
            let a = get(*a)?;
            (
                Tensor::scalar(a.data().iter().sum::<f64>() / a.numel() as f64),
                Vec::new(),
            )
        }
        Op::SegmentMean { x, segments } => {
            let x = get(*x)?;
            let d = x.cols();
            let mut data = vec![0.0; segments.len() * d];
            for (s, &(start, len)) in segments.iter().enumerate() {
                if len == 0 || start + len > x.rows() {
                    return Err(mismatch(
                        node,
                        format!("segment {start}+{len} of {}", x.rows()),
                    ));
                }
                let out = &mut data[s * d..(s + 1) * d];
                for r in start..start + len {
                    for (o, v) in out.iter_mut().zip(x.row(r)) {
                        *o += v / len as f64;
                    }
                }
            }
            (Tensor::new(vec![segments.len(), d], data)?, Vec::new())
        }
    };
    Ok(out)
}

fn attention_forward(
    q: &Tensor,
    k: &Tensor,
    v: &Tensor,
    layout: &AttentionLayout,
    node: usize,
) -> Result<(Tensor, Vec<f64>), ComputeError> {
    let (nq, d) = expect_matrix(q, node, "attention query")?;
    let (nk, dk) = expect_matrix(k, node, "attention key")?;
    let (nv, dv) = expect_matrix(v, node, "attention value")?;
    if dk != d || dv != d || nv != nk {
        return Err(mismatch(
            node,
            format!(
                "attention q {:?} k {:?} v {:?}",
                q.shape(),
                k.shape(),
                v.shape()
            ),
        ));
    }
    if layout.heads == 0 || d % layout.heads != 0 {
        return Err(mismatch(
            node,
            format!("{} heads over width {d}", layout.heads),
        ));
    }
    let dh = d / layout.heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut out = vec![0.0; nq * d];
    let mut probs = Vec::new();
    for seg in &layout.segments {
        if seg.q_start + seg.q_len > nq || seg.k_start + seg.k_len > nk || seg.k_len == 0 {
            return Err(mismatch(
                node,
                format!("attention segment {seg:?} out of range"),
            ));
        }
        if layout.causal && seg.q_len != seg.k_len {
            return Err(mismatch(node, "causal segment must be square".into()));
        }
        for h in 0..layout.heads {
            let cols = h * dh..(h + 1) * dh;
            for i in 0..seg.q_len {
                let qrow = &q.row(seg.q_start + i)[cols.clone()];
                let visible = if layout.causal { i + 1 } else { seg.k_len };
                let mut p = vec![f64::NEG_INFINITY; seg.k_len];
                for (j, pj) in p.iter_mut().enumerate().take(visible) {
                    let krow = &k.row(seg.k_start + j)[cols.clone()];
                    *pj = scale * qrow.iter().zip(krow).map(|(a, b)| a * b).sum::<f64>();
                }
                softmax_in_place(&mut p);
                let orow = &mut out[(seg.q_start + i) * d..(seg.q_start + i + 1) * d];
                for (j, &pj) in p.iter().enumerate().take(visible) {
                    let vrow = &v.row(seg.k_start + j)[cols.clone()];
                    for (o, vv) in orow[cols.clone()].iter_mut().zip(vrow) {
                        *o += pj * vv;
                    }
                }
                probs.extend_from_slice(&p);
            }
        }
    }
    Ok((Tensor::new(vec![nq, d], out)?, probs))
}

fn backprop(
    op: &Op,
    node: usize,
    up: &Tensor,
    eval: &Evaluation,
    needs: &[bool],
    grads: &mut [Option<Tensor>],
) {
    let val = |id: NodeId| &eval.values[id.0];
    match op {
        Op::Leaf { .. } => {}
        Op::MatMul(a, b) => {
            let (av, bv) = (val(*a), val(*b));
            let (m, k) = (av.shape()[0], av.shape()[1]);
            let n = bv.shape()[1];
            if needs[a.0] {
                let mut ga = vec![0.0; m * k];
                matmul_bt_into(up.data(), bv.data(), &mut ga, m, n, k);
                accumulate(grads, needs, *a, Tensor::new(vec![m, k], ga).unwrap());
            }
            if needs[b.0] {
                let mut gb = vec![0.0; k * n];
                matmul_at_into(av.data(), up.data(), &mut gb, m, k, n);
                accumulate(grads, needs, *b, Tensor::new(vec![k, n], gb).unwrap());
            }
        }
        Op::Add(a, b) => {
            accumulate(grads, needs, *a, up.clone());
            if needs[b.0] {
                let bv = val(*b);
                if bv.shape() == up.shape() {
                    accumulate(grads, needs, *b, up.clone());
                } else {
                    let c = bv.numel();
                    let mut gb = vec![0.0; c];
                    for (i, g) in up.data().iter().enumerate() {
                        gb[i % c] += g;
                    }
                    accumulate(
                        grads,
                        needs,
                        *b,
                        Tensor::new(bv.shape().to_vec(), gb).unwrap(),
                    );
                }
            }
        }
        Op::Mul(a, b) => {
            let (av, bv) = (val(*a), val(*b));
            if needs[a.0] {
                let g = up
                    .data()
                    .iter()
                    .zip(bv.data())
                    .map(|(u, y)| u * y)
                    .collect();
                accumulate(
                    grads,
                    needs,
                    *a,
                    Tensor::new(av.shape().to_vec(), g).unwrap(),
                );
            }
            if needs[b.0] {
                let g = up
                    .data()
                    .iter()
                    .zip(av.data())
                    .map(|(u, x)| u * x)
                    .collect();
                accumulate(
                    grads,
                    needs,
                    *b,
                    Tensor::new(bv.shape().to_vec(), g).unwrap(),
                );
            }
        }
        Op::Scale(a, c) => {
            let g = up.data().iter().map(|u| u * c).collect();
            accumulate(
                grads,
                needs,
                *a,
                Tensor::new(up.shape().to_vec(), g).unwrap(),
            );
        }
        Op::Relu(a) => {
            let av = val(*a);
            let g = up
                .data()
                .iter()
                .zip(av.data())
                .map(|(u, x)| if *x > 0.0 { *u } else { 0.0 })
                .collect();
            accumulate(
                grads,
                needs,
                *a,
                Tensor::new(up.shape().to_vec(), g).unwrap(),
            );
        }
        Op::Gather { table, rows } => {
            let mut g = Tensor::zeros(val(*table).shape());
            for (i, &r) in rows.iter().enumerate() {
                for (o, u) in g.row_mut(r).iter_mut().zip(up.row(i)) {
                    *o += u;
                }
            }
            accumulate(grads, needs, *table, g);
        }
        Op::LayerNorm { x, gain, bias, .. } => {
            let xv = val(*x);
            let gv = val(*gain);
            let aux = &eval.aux[node];
            let d = xv.cols();
            let mut gx = Tensor::zeros(xv.shape());
            let mut gg = vec![0.0; d];
            let mut gb = vec![0.0; d];
            for r in 0..xv.rows() {
                let (mean, rstd) = (aux[2 * r], aux[2 * r + 1]);
                let xr = xv.row(r);
                let ur = up.row(r);
                let xhat: Vec<f64> = xr.iter().map(|v| (v - mean) * rstd).collect();
                let dxhat: Vec<f64> = ur.iter().zip(gv.data()).map(|(u, g)| u * g).collect();
                let mean_d = dxhat.iter().sum::<f64>() / d as f64;
                let mean_dx = dxhat.iter().zip(&xhat).map(|(a, b)| a * b).sum::<f64>() / d as f64;
                for (c, o) in gx.row_mut(r).iter_mut().enumerate() {
                    *o = rstd * (dxhat[c] - mean_d - xhat[c] * mean_dx);
                    gg[c] += ur[c] * xhat[c];
                    gb[c] += ur[c];
                }
            }
            accumulate(grads, needs, *x, gx);
            let gshape = gv.shape().to_vec();
            accumulate(grads, needs, *gain, Tensor::new(gshape, gg).unwrap());
            let bshape = val(*bias).shape().to_vec();
            accumulate(grads, needs, *bias, Tensor::new(bshape, gb).unwrap());
        }
        Op::Softmax(a) => {
            let y = &eval.values[node];
            let mut g = Tensor::zeros(y.shape());
            for r in 0..y.rows() {
                let (yr, ur) = (y.row(r), up.row(r));
                let dot: f64 = yr.iter().zip(ur).map(|(a, b)| a * b).sum();
                for (c, o) in g.row_mut(r).iter_mut().enumerate() {
                    *o = yr[c] * (ur[c] - dot);
                }
            }
            accumulate(grads, needs, *a, g);
        }
        Op::LogSoftmax(a) => {
            let y = &eval.values[node];
            let mut g = Tensor::zeros(y.shape());
            for r in 0..y.rows() {
                let (yr, ur) = (y.row(r), up.row(r));
                let total: f64 = ur.iter().sum();
                for (c, o) in g.row_mut(r).iter_mut().enumerate() {
                    *o = ur[c] - yr[c].exp() * total;
                }
            }
            accumulate(grads, needs, *a, g);
        }
        Op::Attention { q, k, v, layout } => attention_backward(
            val(*q),
            val(*k),
            val(*v),
            layout,
            &eval.aux[node],
            up,
            (*q, *k, *v),
            needs,
            grads,
        ),
        Op::CrossEntropy {
            logits,
            targets,
            weights,
            smoothing,
        } => {
            let lv = val(*logits);
            let (m, c) = (lv.shape()[0], lv.shape()[1]);
            let probs = &eval.aux[node];
            let scale = up.item();
            let mut g = vec![0.0; m * c];
            for r in 0..m {
                let w = weights[r] * scale;
                if w == 0.0 {
                    continue;
                }
                for j in 0..c {
                    let mut target = smoothing / c as f64;
                    if j == targets[r] {
                        target += 1.0 - smoothing;
                    }
                    g[r * c + j] = w * (probs[r * c + j] - target);
                }
            }
            accumulate(grads, needs, *logits, Tensor::new(vec![m, c], g).unwrap());
        }
        Op::Sum(a) => {
            let shape = val(*a).shape().to_vec();
            accumulate(grads, needs, *a, Tensor::filled(&shape, up.item()));
        }
        Op::Mean(a) => {
            let av = val(*a);
            let g = up.item() / av.numel() as f64;
            accumulate(grads, needs, *a, Tensor::filled(av.shape(), g));
        }
        Op::SegmentMean { x, segments } => {
            let xv = val(*x);
            let mut g = Tensor::zeros(xv.shape());
            for (s, &(start, len)) in segments.iter().enumerate() {
                for r in start..start + len {
                    for (o, u) in g.row_mut(r).iter_mut().zip(up.row(s)) {
                        *o += u / len as f64;
                    }
                }
            }
            accumulate(grads, needs, *x, g);
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn attention_backward(
    q: &Tensor,
    k: &Tensor,
    v: &Tensor,
    layout: &AttentionLayout,
    probs: &[f64],
    up: &Tensor,
    ids: (NodeId, NodeId, NodeId),
    needs: &[bool],
    grads: &mut [Option<Tensor>],
) {
    let d = q.cols();
    let dh = d / layout.heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut gq = Tensor::zeros(q.shape());
    let mut gk = Tensor::zeros(k.shape());
    let mut gv = Tensor::zeros(v.shape());
    let mut offset = 0;
    for seg in &layout.segments {
        for h in 0..layout.heads {
            let cols = h * dh..(h + 1) * dh;
            for i in 0..seg.q_len {
                let p = &probs[offset..offset + seg.k_len];
                offset += seg.k_len;
                let qi = seg.q_start + i;
                let urow = &up.row(qi)[cols.clone()];
                let visible = if layout.causal { i + 1 } else { seg.k_len };
                let mut dp = vec![0.0; visible];
                for (j, dpj) in dp.iter_mut().enumerate() {
                    let kj = seg.k_start + j;
                    let vrow = &v.row(kj)[cols.clone()];
                    *dpj = urow.iter().zip(vrow).map(|(a, b)| a * b).sum();
                    for (o, u) in gv.row_mut(kj)[cols.clone()].iter_mut().zip(urow) {
                        *o += p[j] * u;
                    }
                }
                let dot: f64 = dp.iter().zip(p).map(|(a, b)| a * b).sum();
                for (j, dpj) in dp.iter().enumerate() {
                    let ds = p[j] * (dpj - dot) * scale;
                    if ds == 0.0 {
                        continue;
                    }
                    let kj = seg.k_start + j;
                    let krow = k.row(kj)[cols.clone()].to_vec();
                    for (o, kv) in gq.row_mut(qi)[cols.clone()].iter_mut().zip(&krow) {
                        *o += ds * kv;
                    }
                    let qrow = q.row(qi)[cols.clone()].to_vec();
                    for (o, qv) in gk.row_mut(kj)[cols.clone()].iter_mut().zip(&qrow) {
                        *o += ds * qv;
                    }
                }
            }
        }
    }
    accumulate(grads, needs, ids.0, gq);
    accumulate(grads, needs, ids.1, gk);
    accumulate(grads, needs, ids.2, gv);
}

/// Builds a graph while evaluating it eagerly.
#[derive(Clone, Debug, Default)]
pub struct Tape {
    graph: Graph,
    eval: Evaluation,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        self.eval.value(id)
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> NodeId {
        let id = NodeId(self.graph.nodes.len());
        self.graph.nodes.push(Node {
            op: Op::Leaf { requires_grad },
            shape: value.shape().to_vec(),
        });
        self.graph.leaves.push(id);
        self.eval.values.push(value);
        self.eval.aux.push(Vec::new());
        id
    }

    /// A leaf that never receives gradient.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.leaf(value, false)
    }

    pub fn param(&mut self, value: Tensor) -> NodeId {
        self.leaf(value, true)
    }

    pub fn push(&mut self, op: Op) -> Result<NodeId, ComputeError> {
        if matches!(op, Op::Leaf { .. }) {
            return Err(ComputeError::LeafViaPush);
        }
        let index = self.graph.nodes.len();
        let (value, aux) = evaluate(&op, &self.eval.values, index)?;
        self.graph.nodes.push(Node {
            op,
            shape: value.shape().to_vec(),
        });
        self.eval.values.push(value);
        self.eval.aux.push(aux);
        Ok(NodeId(index))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, ComputeError> {
        self.push(Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, ComputeError> {
        self.push(Op::Add(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, ComputeError> {
        self.push(Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> Result<NodeId, ComputeError> {
        self.push(Op::Scale(a, c))
    }

    pub fn relu(&mut self, a: NodeId) -> Result<NodeId, ComputeError> {
        self.push(Op::Relu(a))
    }

    pub fn gather(&mut self, table: NodeId, rows: Vec<usize>) -> Result<NodeId, ComputeError> {
        self.push(Op::Gather { table, rows })
    }

    pub fn layer_norm(
        &mut self,
        x: NodeId,
        gain: NodeId,
        bias: NodeId,
    ) -> Result<NodeId, ComputeError> {
        self.push(Op::LayerNorm {
            x,
            gain,
            bias,
            eps: 1e-5,
        })
    }

    pub fn softmax(&mut self, a: NodeId) -> Result<NodeId, ComputeError> {
        self.push(Op::Softmax(a))
    }

    pub fn log_softmax(&mut self, a: NodeId) -> Result<NodeId, ComputeError> {
        self.push(Op::LogSoftmax(a))
    }

    pub fn attention(
        &mut self,
        q: NodeId,
        k: NodeId,
        v: NodeId,
        layout: AttentionLayout,
    ) -> Result<NodeId, ComputeError> {
        self.push(Op::Attention { q, k, v, layout })
    }

    pub fn cross_entropy(
        &mut self,
        logits: NodeId,
        targets: Vec<usize>,
        weights: Vec<f64>,
        smoothing: f64,
    ) -> Result<NodeId, ComputeError> {
        self.push(Op::CrossEntropy {
            logits,
            targets,
            weights,
            smoothing,
        })
    }

    pub fn sum(&mut self, a: NodeId) -> Result<NodeId, ComputeError> {
        self.push(Op::Sum(a))
    }

    pub fn mean(&mut self, a: NodeId) -> Result<NodeId, ComputeError> {
        self.push(Op::Mean(a))
    }

    pub fn segment_mean(
        &mut self,
        x: NodeId,
        segments: Vec<(usize, usize)>,
    ) -> Result<NodeId, ComputeError> {
        self.push(Op::SegmentMean { x, segments })
    }

    pub fn backward(&self, loss: NodeId) -> Result<Gradients, ComputeError> {
        self.graph.backward(&self.eval, loss)
    }

    pub fn into_parts(self) -> (Graph, Evaluation) {
        (self.graph, self.eval)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_graph_forward() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::vector(vec![1.0, 2.0]));
        let eval = tape
            .graph()
            .forward(&[Tensor::vector(vec![1.0, 2.0])])
            .unwrap();
        assert_eq!(eval.value(x).data(), &[1.0, 2.0]);
    }

    #[test]
    fn uniform_softmax() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::matrix(1, 3, vec![0.0; 3]).unwrap());
        let s = tape.softmax(x).unwrap();
        for v in tape.value(s).data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn nll_of_two_class_logits() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::matrix(1, 2, vec![3.0, 1.0]).unwrap());
        let lp = tape.log_softmax(x).unwrap();
        let expected = (1.0 + (-2.0f64).exp()).ln();
        assert!((-tape.value(lp).data()[0] - expected).abs() < 1e-12);
        let ce = tape.cross_entropy(x, vec![0], vec![1.0], 0.0).unwrap();
        assert!((tape.value(ce).item() - expected).abs() < 1e-12);
        assert!((expected - 0.1269).abs() < 1e-4);
    }

    #[test]
    fn square_has_gradient_six_at_three() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::vector(vec![3.0]));
        let y = tape.mul(x, x).unwrap();
        let s = tape.sum(y).unwrap();
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[6.0]);
    }

    #[test]
    fn constant_function_has_zero_gradient() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::vector(vec![3.0]));
        let c = tape.constant(Tensor::vector(vec![5.0]));
        let s = tape.sum(c).unwrap();
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[0.0]);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::vector(vec![1.0, 2.0]));
        assert!(matches!(
            tape.backward(x),
            Err(ComputeError::NonScalarLoss { .. })
        ));
    }

    #[test]
    fn shape_mismatch_reports_node() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::zeros(&[2, 3]));
        let b = tape.constant(Tensor::zeros(&[2, 3]));
        match tape.matmul(a, b) {
            Err(ComputeError::ShapeMismatch { node, .. }) => assert_eq!(node, 2),
            other => panic!("expected mismatch, got {other:?}"),
        }
        // the failed op is not recorded
        assert_eq!(tape.graph().len(), 2);
    }

    #[test]
    fn forward_rejects_wrong_leaf_shape() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::zeros(&[2, 2]));
        tape.sum(a).unwrap();
        let err = tape.graph().forward(&[Tensor::zeros(&[3])]).unwrap_err();
        assert!(matches!(err, ComputeError::ShapeMismatch { node: 0, .. }));
    }

    #[test]
    fn causal_attention_ignores_future_keys() {
        let layout = AttentionLayout {
            heads: 1,
            causal: true,
            segments: vec![Segment {
                q_start: 0,
                q_len: 3,
                k_start: 0,
                k_len: 3,
            }],
        };
        let base = Tensor::matrix(3, 2, vec![0.1, 0.2, 0.3, -0.4, 0.5, 0.6]).unwrap();
        let mut changed = base.clone();
        changed.row_mut(2).copy_from_slice(&[9.0, -9.0]);
        let run = |x: &Tensor| {
            let mut tape = Tape::new();
            let n = tape.constant(x.clone());
            let a = tape.attention(n, n, n, layout.clone()).unwrap();
            tape.value(a).clone()
        };
        let (a, b) = (run(&base), run(&changed));
        assert_eq!(a.row(0), b.row(0));
        assert_eq!(a.row(1), b.row(1));
        assert_ne!(a.row(2), b.row(2));
    }
}
