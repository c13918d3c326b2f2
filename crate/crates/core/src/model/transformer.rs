//! Pre-LN transformer blocks shared by the autoregressive and parallel decoders.
//! Examples in a batch are stacked as rows; attention segments keep them apart.

use std::collections::HashMap;

use natlab_compute::{AttentionLayout, Bound, NodeId, ParamStore, Segment, Tape, Tensor};
use rand::Rng;

use crate::error::{invalid, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelDims {
    pub vocab: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub heads: usize,
    pub enc_layers: usize,
    pub dec_layers: usize,
    /// Longest sequence (source, target, or decoder prefix) the position table covers.
    pub max_len: usize,
}

impl ModelDims {
    pub fn small(vocab: usize) -> Self {
        Self {
            vocab,
            d_model: 32,
            d_ff: 64,
            heads: 2,
            enc_layers: 1,
            dec_layers: 1,
            max_len: 24,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.heads == 0 || !self.d_model.is_multiple_of(self.heads) {
            return invalid("d_model must be a positive multiple of heads");
        }
        if self.vocab == 0 || self.max_len == 0 || self.d_ff == 0 {
            return invalid("model dimensions must be positive");
        }
        Ok(())
    }
}

pub(crate) fn init_linear<R: Rng>(
    store: &mut ParamStore,
    name: &str,
    din: usize,
    dout: usize,
    std: f64,
    rng: &mut R,
) {
    store.insert(&format!("{name}.w"), Tensor::randn(&[din, dout], std, rng));
    store.insert(&format!("{name}.b"), Tensor::zeros(&[dout]));
}

pub(crate) fn init_norm(store: &mut ParamStore, name: &str, d: usize) {
    store.insert(&format!("{name}.g"), Tensor::filled(&[d], 1.0));
    store.insert(&format!("{name}.b"), Tensor::zeros(&[d]));
}

fn init_attention<R: Rng>(store: &mut ParamStore, name: &str, d: usize, rng: &mut R) {
    let std = 1.0 / (d as f64).sqrt();
    for part in ["q", "k", "v", "o"] {
        init_linear(store, &format!("{name}.{part}"), d, d, std, rng);
    }
}

fn init_ffn<R: Rng>(store: &mut ParamStore, name: &str, d: usize, d_ff: usize, rng: &mut R) {
    init_linear(
        store,
        &format!("{name}.in"),
        d,
        d_ff,
        1.0 / (d as f64).sqrt(),
        rng,
    );
    init_linear(
        store,
        &format!("{name}.out"),
        d_ff,
        d,
        1.0 / (d_ff as f64).sqrt(),
        rng,
    );
}

/// Embeddings, encoder, decoder stack with cross-attention, and the output layer.
pub(crate) fn init_seq2seq<R: Rng>(store: &mut ParamStore, dims: &ModelDims, rng: &mut R) {
    let d = dims.d_model;
    let emb_std = 1.0 / (d as f64).sqrt();
    store.insert("tok_emb", Tensor::randn(&[dims.vocab, d], emb_std, rng));
    store.insert("pos_emb", Tensor::randn(&[dims.max_len, d], emb_std, rng));
    for l in 0..dims.enc_layers {
        init_norm(store, &format!("enc.{l}.ln1"), d);
        init_attention(store, &format!("enc.{l}.att"), d, rng);
        init_norm(store, &format!("enc.{l}.ln2"), d);
        init_ffn(store, &format!("enc.{l}.ffn"), d, dims.d_ff, rng);
    }
    init_norm(store, "enc.ln", d);
    for l in 0..dims.dec_layers {
        init_norm(store, &format!("dec.{l}.ln1"), d);
        init_attention(store, &format!("dec.{l}.self"), d, rng);
        init_norm(store, &format!("dec.{l}.ln2"), d);
        init_attention(store, &format!("dec.{l}.cross"), d, rng);
        init_norm(store, &format!("dec.{l}.ln3"), d);
        init_ffn(store, &format!("dec.{l}.ffn"), d, dims.d_ff, rng);
    }
    init_norm(store, "dec.ln", d);
    // Small output weights keep the untrained model close to uniform.
    init_linear(store, "out", d, dims.vocab, 0.02, rng);
}

/// Graph-building context over a bound parameter store.
pub(crate) struct Ctx<'a> {
    pub tape: &'a mut Tape,
    bound: Bound,
    ids: HashMap<String, NodeId>,
}

impl<'a> Ctx<'a> {
    pub fn new(tape: &'a mut Tape, store: &ParamStore, trainable: bool) -> Self {
        let bound = Bound::new(tape, store, trainable);
        let ids = store
            .iter()
            .map(|(name, _)| (name.to_string(), bound.node(store.id(name).unwrap())))
            .collect();
        Self { tape, bound, ids }
    }

    pub fn bound(&self) -> &Bound {
        &self.bound
    }

    pub fn p(&self, name: &str) -> NodeId {
        *self
            .ids
            .get(name)
            .unwrap_or_else(|| panic!("missing parameter {name}"))
    }

    pub fn linear(&mut self, x: NodeId, name: &str) -> Result<NodeId> {
        let w = self.p(&format!("{name}.w"));
        let b = self.p(&format!("{name}.b"));
        let y = self.tape.matmul(x, w)?;
        Ok(self.tape.add(y, b)?)
    }

    pub fn norm(&mut self, x: NodeId, name: &str) -> Result<NodeId> {
        let g = self.p(&format!("{name}.g"));
        let b = self.p(&format!("{name}.b"));
        Ok(self.tape.layer_norm(x, g, b)?)
    }

    fn attention(
        &mut self,
        x: NodeId,
        mem: NodeId,
        name: &str,
        layout: AttentionLayout,
    ) -> Result<NodeId> {
        let q = self.linear(x, &format!("{name}.q"))?;
        let k = self.linear(mem, &format!("{name}.k"))?;
        let v = self.linear(mem, &format!("{name}.v"))?;
        let a = self.tape.attention(q, k, v, layout)?;
        self.linear(a, &format!("{name}.o"))
    }

    fn ffn(&mut self, x: NodeId, name: &str) -> Result<NodeId> {
        let h = self.linear(x, &format!("{name}.in"))?;
        let h = self.tape.relu(h)?;
        self.linear(h, &format!("{name}.out"))
    }

    /// Token plus position embeddings for stacked sequences.
    pub fn embed(&mut self, seqs: &[&[usize]]) -> Result<NodeId> {
        let toks: Vec<usize> = seqs.iter().flat_map(|s| s.iter().copied()).collect();
        let pos: Vec<usize> = seqs.iter().flat_map(|s| 0..s.len()).collect();
        let te = self.tape.gather(self.p("tok_emb"), toks)?;
        let pe = self.tape.gather(self.p("pos_emb"), pos)?;
        Ok(self.tape.add(te, pe)?)
    }

    /// Encodes stacked sources; returns final states and each source's row range.
    pub fn encode(
        &mut self,
        dims: &ModelDims,
        xs: &[&[usize]],
    ) -> Result<(NodeId, Vec<(usize, usize)>)> {
        let spans = spans(xs.iter().map(|x| x.len()));
        let segs: Vec<Segment> = spans
            .iter()
            .map(|&(s, l)| Segment {
                q_start: s,
                q_len: l,
                k_start: s,
                k_len: l,
            })
            .collect();
        let layout = AttentionLayout {
            heads: dims.heads,
            causal: false,
            segments: segs,
        };
        let mut h = self.embed(xs)?;
        for l in 0..dims.enc_layers {
            let n = self.norm(h, &format!("enc.{l}.ln1"))?;
            let a = self.attention(n, n, &format!("enc.{l}.att"), layout.clone())?;
            h = self.tape.add(h, a)?;
            let n = self.norm(h, &format!("enc.{l}.ln2"))?;
            let f = self.ffn(n, &format!("enc.{l}.ffn"))?;
            h = self.tape.add(h, f)?;
        }
        let h = self.norm(h, "enc.ln")?;
        Ok((h, spans))
    }

    /// Decoder stack over `h` (already embedded); returns the normalised final states.
    pub fn decode(
        &mut self,
        dims: &ModelDims,
        mut h: NodeId,
        dec_spans: &[(usize, usize)],
        enc: NodeId,
        enc_spans: &[(usize, usize)],
        causal: bool,
    ) -> Result<NodeId> {
        let self_layout = AttentionLayout {
            heads: dims.heads,
            causal,
            segments: dec_spans
                .iter()
                .map(|&(s, l)| Segment {
                    q_start: s,
                    q_len: l,
                    k_start: s,
                    k_len: l,
                })
                .collect(),
        };
        let cross_layout = AttentionLayout {
            heads: dims.heads,
            causal: false,
            segments: dec_spans
                .iter()
                .zip(enc_spans)
                .map(|(&(s, l), &(es, el))| Segment {
                    q_start: s,
                    q_len: l,
                    k_start: es,
                    k_len: el,
                })
                .collect(),
        };
        for l in 0..dims.dec_layers {
            let n = self.norm(h, &format!("dec.{l}.ln1"))?;
            let a = self.attention(n, n, &format!("dec.{l}.self"), self_layout.clone())?;
            h = self.tape.add(h, a)?;
            let n = self.norm(h, &format!("dec.{l}.ln2"))?;
            let a = self.attention(n, enc, &format!("dec.{l}.cross"), cross_layout.clone())?;
            h = self.tape.add(h, a)?;
            let n = self.norm(h, &format!("dec.{l}.ln3"))?;
            let f = self.ffn(n, &format!("dec.{l}.ffn"))?;
            h = self.tape.add(h, f)?;
        }
        self.norm(h, "dec.ln")
    }
}

/// Consecutive `(start, len)` row ranges.
pub(crate) fn spans(lens: impl Iterator<Item = usize>) -> Vec<(usize, usize)> {
    let mut start = 0;
    lens.map(|l| {
        let s = (start, l);
        start += l;
        s
    })
    .collect()
}

/// Row-wise softmax of a logits tensor.
pub(crate) fn row_probs(t: &Tensor) -> Vec<Vec<f64>> {
    (0..t.rows())
        .map(|r| natlab_compute::softmax(t.row(r)))
        .collect()
}
