//! Building blocks shared by the denoiser, the ControlNet and the feature
//! extractor.

use rand::Rng;

use crate::autodiff::{Graph, Var};
use crate::params::{Bound, Params};
use crate::tensor::Tensor;

pub const INIT_STD: f64 = 0.02;
pub const LN_EPS: f64 = 1e-6;

/// Inserts `{prefix}.w` (`[d_in × d_out]`, normal with `std`) and a zero
/// `{prefix}.b`.
pub fn insert_linear<R: Rng + ?Sized>(
    params: &mut Params,
    prefix: &str,
    d_in: usize,
    d_out: usize,
    std: f64,
    rng: &mut R,
) {
    let w = if std == 0.0 {
        Tensor::zeros(d_in, d_out)
    } else {
        Tensor::randn(d_in, d_out, std, rng)
    };
    params.insert(format!("{prefix}.w"), w);
    params.insert(format!("{prefix}.b"), Tensor::zeros(1, d_out));
}

pub fn linear(g: &mut Graph, p: &Bound<'_>, prefix: &str, x: Var) -> Var {
    let w = p.var(&format!("{prefix}.w"));
    let b = p.var(&format!("{prefix}.b"));
    g.linear(x, w, b)
}

/// Multi-head attention geometry.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttentionShape {
    pub d_model: usize,
    pub n_heads: usize,
    pub d_heads: usize,
}

impl AttentionShape {
    pub fn inner(&self) -> usize {
        self.n_heads * self.d_heads
    }
}

/// Query/key/value projections `d_model → n_heads·d_heads` and an output
/// projection back to `d_model` (scaled by `out_scale`).
pub fn insert_attention<R: Rng + ?Sized>(
    params: &mut Params,
    prefix: &str,
    shape: AttentionShape,
    out_scale: f64,
    rng: &mut R,
) {
    let inner = shape.inner();
    for name in ["q", "k", "v"] {
        insert_linear(params, &format!("{prefix}.{name}"), shape.d_model, inner, INIT_STD, rng);
    }
    insert_linear(
        params,
        &format!("{prefix}.o"),
        inner,
        shape.d_model,
        INIT_STD * out_scale,
        rng,
    );
}

/// Scaled dot-product attention with queries from `query_src` and keys and
/// values from `kv_src`. Returns the projected output and each head's
/// attention matrix.
pub fn attention(
    g: &mut Graph,
    p: &Bound<'_>,
    prefix: &str,
    shape: AttentionShape,
    query_src: Var,
    kv_src: Var,
) -> (Var, Vec<Var>) {
    let q = linear(g, p, &format!("{prefix}.q"), query_src);
    let k = linear(g, p, &format!("{prefix}.k"), kv_src);
    let v = linear(g, p, &format!("{prefix}.v"), kv_src);
    let temp = 1.0 / (shape.d_heads as f64).sqrt();
    let mut heads = Vec::with_capacity(shape.n_heads);
    let mut probs = Vec::with_capacity(shape.n_heads);
    for h in 0..shape.n_heads {
        let off = h * shape.d_heads;
        let qh = g.slice_cols(q, off, shape.d_heads);
        let kh = g.slice_cols(k, off, shape.d_heads);
        let vh = g.slice_cols(v, off, shape.d_heads);
        let kt = g.transpose(kh);
        let scores = g.matmul(qh, kt);
        let scores = g.scale(scores, temp);
        let a = g.softmax_rows(scores);
        heads.push(g.matmul(a, vh));
        probs.push(a);
    }
    let cat = if heads.len() == 1 {
        heads[0]
    } else {
        g.concat_cols(&heads)
    };
    (linear(g, p, &format!("{prefix}.o"), cat), probs)
}

/// `x ⊙ (1 + scale) + shift` with `[1 × d]` scale and shift rows.
pub fn modulate(g: &mut Graph, x: Var, shift: Var, scale: Var) -> Var {
    let s = g.add_scalar(scale, 1.0);
    let y = g.mul_row(x, s);
    g.add_row(y, shift)
}
