//! A small reverse-mode automatic differentiation tape over [`Tensor`]s.
//!
//! A [`Graph`] records every operation applied to its [`Var`]s; calling
//! [`Graph::backward`] on a scalar node walks the tape in reverse and returns
//! the gradient of that scalar with respect to every node that requires one.
//! Leaves created with [`Graph::constant`] never receive gradients, and
//! subgraphs built only from constants are skipped during the backward pass.

use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    MulCol(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Gelu(Var),
    Silu(Var),
    LayerNorm {
        x: Var,
        xhat: Tensor,
        inv_std: Vec<f64>,
    },
    InstanceNorm {
        x: Var,
        xhat: Tensor,
        inv_std: Vec<f64>,
        floored: Vec<bool>,
    },
    SoftmaxRows(Var),
    Transpose(Var),
    SliceCols(Var, usize),
    SliceRows(Var, usize),
    ConcatCols(Vec<Var>),
    MeanRows(Var),
    Unfold(Var, usize),
    RowDiff(Var),
    MeanAll(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// A leaf that receives gradients.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A leaf that never receives gradients.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).matmul(self.value(b));
        let rg = self.rg(&[a, b]);
        self.push(value, Op::MatMul(a, b), rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.value(a).shape(), self.value(b).shape(), "add shape");
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y);
        let rg = self.rg(&[a, b]);
        self.push(value, Op::Add(a, b), rg)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.value(a).shape(), self.value(b).shape(), "sub shape");
        let value = self.value(a).zip_map(self.value(b), |x, y| x - y);
        let rg = self.rg(&[a, b]);
        self.push(value, Op::Sub(a, b), rg)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.value(a).shape(), self.value(b).shape(), "mul shape");
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y);
        let rg = self.rg(&[a, b]);
        self.push(value, Op::Mul(a, b), rg)
    }

    /// Adds a `[1 × c]` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (av, rv) = (self.value(a), self.value(row));
        assert_eq!((1, av.cols()), rv.shape(), "add_row shape");
        let mut value = av.clone();
        for r in 0..value.rows() {
            for (x, b) in value.row_mut(r).iter_mut().zip(rv.data()) {
                *x += b;
            }
        }
        let rg = self.rg(&[a, row]);
        self.push(value, Op::AddRow(a, row), rg)
    }

    /// Multiplies every row of `a` elementwise by a `[1 × c]` row.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Var {
        let (av, rv) = (self.value(a), self.value(row));
        assert_eq!((1, av.cols()), rv.shape(), "mul_row shape");
        let mut value = av.clone();
        for r in 0..value.rows() {
            for (x, b) in value.row_mut(r).iter_mut().zip(rv.data()) {
                *x *= b;
            }
        }
        let rg = self.rg(&[a, row]);
        self.push(value, Op::MulRow(a, row), rg)
    }

    /// Multiplies row `i` of `a` by the scalar `col[i]` of an `[r × 1]` column.
    pub fn mul_col(&mut self, a: Var, col: Var) -> Var {
        let (av, cv) = (self.value(a), self.value(col));
        assert_eq!((av.rows(), 1), cv.shape(), "mul_col shape");
        let mut value = av.clone();
        for r in 0..value.rows() {
            let k = cv.get(r, 0);
            for x in value.row_mut(r) {
                *x *= k;
            }
        }
        let rg = self.rg(&[a, col]);
        self.push(value, Op::MulCol(a, col), rg)
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let value = self.value(a).map(|x| x * k);
        let rg = self.rg(&[a]);
        self.push(value, Op::Scale(a, k), rg)
    }

    pub fn add_scalar(&mut self, a: Var, k: f64) -> Var {
        let value = self.value(a).map(|x| x + k);
        let rg = self.rg(&[a]);
        self.push(value, Op::AddScalar(a), rg)
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(gelu);
        let rg = self.rg(&[a]);
        self.push(value, Op::Gelu(a), rg)
    }

    pub fn silu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| x * sigmoid(x));
        let rg = self.rg(&[a]);
        self.push(value, Op::Silu(a), rg)
    }

    /// Normalizes each row to zero mean and unit variance (no affine part).
    pub fn layer_norm(&mut self, a: Var, eps: f64) -> Var {
        let x = self.value(a);
        let (n, c) = x.shape();
        let mut xhat = Tensor::zeros(n, c);
        let mut inv_std = Vec::with_capacity(n);
        for r in 0..n {
            let row = x.row(r);
            let mu = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / c as f64;
            let inv = 1.0 / (var + eps).sqrt();
            for (o, v) in xhat.row_mut(r).iter_mut().zip(row) {
                *o = (v - mu) * inv;
            }
            inv_std.push(inv);
        }
        let rg = self.rg(&[a]);
        self.push(
            xhat.clone(),
            Op::LayerNorm {
                x: a,
                xhat,
                inv_std,
            },
            rg,
        )
    }

    /// Standardizes each column over the time (row) axis. Variances below
    /// `var_floor` are replaced by the floor.
    pub fn instance_norm(&mut self, a: Var, var_floor: f64) -> Var {
        let x = self.value(a);
        let (n, c) = x.shape();
        let mut xhat = Tensor::zeros(n, c);
        let mut inv_std = Vec::with_capacity(c);
        let mut floored = Vec::with_capacity(c);
        for ch in 0..c {
            let mu = (0..n).map(|r| x.get(r, ch)).sum::<f64>() / n as f64;
            let var = (0..n)
                .map(|r| (x.get(r, ch) - mu).powi(2))
                .sum::<f64>()
                / n as f64;
            let low = var < var_floor;
            let inv = 1.0 / var.max(var_floor).sqrt();
            for r in 0..n {
                xhat.set(r, ch, (x.get(r, ch) - mu) * inv);
            }
            inv_std.push(inv);
            floored.push(low);
        }
        let rg = self.rg(&[a]);
        self.push(
            xhat.clone(),
            Op::InstanceNorm {
                x: a,
                xhat,
                inv_std,
                floored,
            },
            rg,
        )
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let value = softmax_rows(self.value(a));
        let rg = self.rg(&[a]);
        self.push(value, Op::SoftmaxRows(a), rg)
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).transpose();
        let rg = self.rg(&[a]);
        self.push(value, Op::Transpose(a), rg)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        assert!(start + len <= self.value(a).cols(), "slice_cols range");
        let value = self.value(a).slice_cols(start, len);
        let rg = self.rg(&[a]);
        self.push(value, Op::SliceCols(a, start), rg)
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        assert!(start + len <= self.value(a).rows(), "slice_rows range");
        let value = self.value(a).slice_rows(start, len);
        let rg = self.rg(&[a]);
        self.push(value, Op::SliceRows(a, start), rg)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat of nothing");
        let rows = self.value(parts[0]).rows();
        let total: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut value = Tensor::zeros(rows, total);
        let mut off = 0;
        for &p in parts {
            let pv = self.value(p);
            assert_eq!(pv.rows(), rows, "concat_cols row mismatch");
            for r in 0..rows {
                value.row_mut(r)[off..off + pv.cols()].copy_from_slice(pv.row(r));
            }
            off += pv.cols();
        }
        let rg = self.rg(parts);
        self.push(value, Op::ConcatCols(parts.to_vec()), rg)
    }

    /// Column means, `[n × c] → [1 × c]`.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let n = x.rows() as f64;
        let value = Tensor::from_fn(1, x.cols(), |_, c| {
            (0..x.rows()).map(|r| x.get(r, c)).sum::<f64>() / n
        });
        let rg = self.rg(&[a]);
        self.push(value, Op::MeanRows(a), rg)
    }

    /// Gathers a centered temporal neighbourhood of `kernel` rows into each
    /// output row (zero padded), so a 1-D convolution becomes a matmul.
    /// Output column `j·c + ch` holds input row `i + j − kernel/2`.
    pub fn unfold(&mut self, a: Var, kernel: usize) -> Var {
        let x = self.value(a);
        let (n, c) = x.shape();
        let half = kernel / 2;
        let mut value = Tensor::zeros(n, c * kernel);
        for i in 0..n {
            for j in 0..kernel {
                let src = i as isize + j as isize - half as isize;
                if src >= 0 && (src as usize) < n {
                    value.row_mut(i)[j * c..(j + 1) * c].copy_from_slice(x.row(src as usize));
                }
            }
        }
        let rg = self.rg(&[a]);
        self.push(value, Op::Unfold(a, kernel), rg)
    }

    /// First differences along rows, `[n × c] → [(n−1) × c]`.
    pub fn row_diff(&mut self, a: Var) -> Var {
        let x = self.value(a);
        assert!(x.rows() >= 2, "row_diff needs two rows");
        let value = Tensor::from_fn(x.rows() - 1, x.cols(), |r, c| x.get(r + 1, c) - x.get(r, c));
        let rg = self.rg(&[a]);
        self.push(value, Op::RowDiff(a), rg)
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).mean());
        let rg = self.rg(&[a]);
        self.push(value, Op::MeanAll(a), rg)
    }

    /// `x · w + b` with `b` a `[1 × out]` row.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Var {
        let y = self.matmul(x, w);
        self.add_row(y, b)
    }

    /// Mean of `(a − b)²` over all elements.
    pub fn mse(&mut self, a: Var, b: Var) -> Var {
        let d = self.sub(a, b);
        let sq = self.mul(d, d);
        self.mean_all(sq)
    }

    /// Reverse pass from a `[1 × 1]` node.
    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(self.value(loss).shape(), (1, 1), "backward needs a scalar");
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));
        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Gradients { grads }
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn propagate(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[idx];
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.requires_grad(*a) {
                    let ga = g.matmul_t(self.value(*b));
                    self.accumulate(grads, *a, ga);
                }
                if self.requires_grad(*b) {
                    let gb = self.value(*a).t_matmul(g);
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.map(|x| -x));
            }
            Op::Mul(a, b) => {
                if self.requires_grad(*a) {
                    let ga = g.zip_map(self.value(*b), |x, y| x * y);
                    self.accumulate(grads, *a, ga);
                }
                if self.requires_grad(*b) {
                    let gb = g.zip_map(self.value(*a), |x, y| x * y);
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::AddRow(a, row) => {
                self.accumulate(grads, *a, g.clone());
                if self.requires_grad(*row) {
                    self.accumulate(grads, *row, col_sums(g));
                }
            }
            Op::MulRow(a, row) => {
                let rv = self.value(*row);
                if self.requires_grad(*a) {
                    let mut ga = g.clone();
                    for r in 0..ga.rows() {
                        for (x, k) in ga.row_mut(r).iter_mut().zip(rv.data()) {
                            *x *= k;
                        }
                    }
                    self.accumulate(grads, *a, ga);
                }
                if self.requires_grad(*row) {
                    let prod = g.zip_map(self.value(*a), |x, y| x * y);
                    self.accumulate(grads, *row, col_sums(&prod));
                }
            }
            Op::MulCol(a, col) => {
                let cv = self.value(*col);
                if self.requires_grad(*a) {
                    let mut ga = g.clone();
                    for r in 0..ga.rows() {
                        let k = cv.get(r, 0);
                        for x in ga.row_mut(r) {
                            *x *= k;
                        }
                    }
                    self.accumulate(grads, *a, ga);
                }
                if self.requires_grad(*col) {
                    let av = self.value(*a);
                    let gc = Tensor::from_fn(g.rows(), 1, |r, _| {
                        g.row(r).iter().zip(av.row(r)).map(|(x, y)| x * y).sum()
                    });
                    self.accumulate(grads, *col, gc);
                }
            }
            Op::Scale(a, k) => {
                let k = *k;
                self.accumulate(grads, *a, g.map(|x| x * k));
            }
            Op::AddScalar(a) => self.accumulate(grads, *a, g.clone()),
            Op::Gelu(a) => {
                let ga = g.zip_map(self.value(*a), |gy, x| gy * gelu_grad(x));
                self.accumulate(grads, *a, ga);
            }
            Op::Silu(a) => {
                let ga = g.zip_map(self.value(*a), |gy, x| {
                    let s = sigmoid(x);
                    gy * s * (1.0 + x * (1.0 - s))
                });
                self.accumulate(grads, *a, ga);
            }
            Op::LayerNorm { x, xhat, inv_std } => {
                let (n, c) = xhat.shape();
                let mut gx = Tensor::zeros(n, c);
                for r in 0..n {
                    let gy = g.row(r);
                    let xh = xhat.row(r);
                    let mean_g = gy.iter().sum::<f64>() / c as f64;
                    let mean_gx = gy.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>() / c as f64;
                    for ((o, &gv), &xv) in gx.row_mut(r).iter_mut().zip(gy).zip(xh) {
                        *o = inv_std[r] * (gv - mean_g - xv * mean_gx);
                    }
                }
                self.accumulate(grads, *x, gx);
            }
            Op::InstanceNorm {
                x,
                xhat,
                inv_std,
                floored,
            } => {
                let (n, c) = xhat.shape();
                let mut gx = Tensor::zeros(n, c);
                for ch in 0..c {
                    let mean_g = (0..n).map(|r| g.get(r, ch)).sum::<f64>() / n as f64;
                    let mean_gx = if floored[ch] {
                        0.0
                    } else {
                        (0..n).map(|r| g.get(r, ch) * xhat.get(r, ch)).sum::<f64>() / n as f64
                    };
                    for r in 0..n {
                        let v = inv_std[ch] * (g.get(r, ch) - mean_g - xhat.get(r, ch) * mean_gx);
                        gx.set(r, ch, v);
                    }
                }
                self.accumulate(grads, *x, gx);
            }
            Op::SoftmaxRows(a) => {
                let y = &node.value;
                let mut ga = Tensor::zeros(y.rows(), y.cols());
                for r in 0..y.rows() {
                    let dot: f64 = g.row(r).iter().zip(y.row(r)).map(|(a, b)| a * b).sum();
                    for ((o, &gv), &yv) in ga.row_mut(r).iter_mut().zip(g.row(r)).zip(y.row(r)) {
                        *o = yv * (gv - dot);
                    }
                }
                self.accumulate(grads, *a, ga);
            }
            Op::Transpose(a) => self.accumulate(grads, *a, g.transpose()),
            Op::SliceCols(a, start) => {
                let av = self.value(*a);
                let mut ga = Tensor::zeros(av.rows(), av.cols());
                for r in 0..g.rows() {
                    ga.row_mut(r)[*start..*start + g.cols()].copy_from_slice(g.row(r));
                }
                self.accumulate(grads, *a, ga);
            }
            Op::SliceRows(a, start) => {
                let av = self.value(*a);
                let mut ga = Tensor::zeros(av.rows(), av.cols());
                for r in 0..g.rows() {
                    ga.row_mut(start + r).copy_from_slice(g.row(r));
                }
                self.accumulate(grads, *a, ga);
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    if self.requires_grad(p) {
                        self.accumulate(grads, p, g.slice_cols(off, w));
                    }
                    off += w;
                }
            }
            Op::MeanRows(a) => {
                let av = self.value(*a);
                let n = av.rows() as f64;
                let ga = Tensor::from_fn(av.rows(), av.cols(), |_, c| g.get(0, c) / n);
                self.accumulate(grads, *a, ga);
            }
            Op::Unfold(a, kernel) => {
                let av = self.value(*a);
                let (n, c) = av.shape();
                let half = kernel / 2;
                let mut ga = Tensor::zeros(n, c);
                for i in 0..n {
                    for j in 0..*kernel {
                        let src = i as isize + j as isize - half as isize;
                        if src >= 0 && (src as usize) < n {
                            let src = src as usize;
                            for ch in 0..c {
                                let v = ga.get(src, ch) + g.get(i, j * c + ch);
                                ga.set(src, ch, v);
                            }
                        }
                    }
                }
                self.accumulate(grads, *a, ga);
            }
            Op::RowDiff(a) => {
                let av = self.value(*a);
                let mut ga = Tensor::zeros(av.rows(), av.cols());
                for r in 0..g.rows() {
                    for c in 0..g.cols() {
                        let d = g.get(r, c);
                        ga.set(r + 1, c, ga.get(r + 1, c) + d);
                        ga.set(r, c, ga.get(r, c) - d);
                    }
                }
                self.accumulate(grads, *a, ga);
            }
            Op::MeanAll(a) => {
                let av = self.value(*a);
                let k = g.get(0, 0) / av.len() as f64;
                self.accumulate(grads, *a, Tensor::filled(av.rows(), av.cols(), k));
            }
        }
    }
}

fn col_sums(g: &Tensor) -> Tensor {
    let mut out = Tensor::zeros(1, g.cols());
    for r in 0..g.rows() {
        for (o, v) in out.data_mut().iter_mut().zip(g.row(r)) {
            *o += v;
        }
    }
    out
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

#[inline]
fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + GELU_A * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

/// Numerically stable row-wise softmax.
pub fn softmax_rows(x: &Tensor) -> Tensor {
    let mut out = x.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut s = 0.0;
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            s += *v;
        }
        for v in row.iter_mut() {
            *v /= s;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    /// Central-difference check of d(loss)/d(input) for a graph builder.
    fn check(build: impl Fn(&mut Graph, Var) -> Var, input: Tensor) {
        let mut g = Graph::new();
        let x = g.param(input.clone());
        let out = build(&mut g, x);
        let loss = g.mean_all(out);
        let grads = g.backward(loss);
        let analytic = grads.get(x).unwrap().clone();
        let h = 1e-5;
        for i in 0..input.len() {
            let eval = |delta: f64| {
                let mut t = input.clone();
                t.data_mut()[i] += delta;
                let mut g = Graph::new();
                let x = g.param(t);
                let out = build(&mut g, x);
                let l = g.mean_all(out);
                g.value(l).get(0, 0)
            };
            let numeric = (eval(h) - eval(-h)) / (2.0 * h);
            let a = analytic.data()[i];
            assert!(
                (a - numeric).abs() <= 1e-7 + 1e-5 * numeric.abs(),
                "element {i}: analytic {a} numeric {numeric}"
            );
        }
    }

    fn rand_input(rows: usize, cols: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::randn(rows, cols, 1.0, &mut rng)
    }

    // Weight the output so mean_all is not blind to permutations/sign.
    fn weighted(g: &mut Graph, y: Var) -> Var {
        let (r, c) = g.value(y).shape();
        let w = g.constant(Tensor::from_fn(r, c, |i, j| {
            1.0 + 0.37 * i as f64 - 0.21 * j as f64
        }));
        let p = g.mul(y, w);
        g.mul(p, p)
    }

    #[test]
    fn elementwise_and_broadcast_ops_have_correct_gradients() {
        check(
            |g, x| {
                let y = g.gelu(x);
                weighted(g, y)
            },
            rand_input(3, 4, 1),
        );
        check(
            |g, x| {
                let y = g.silu(x);
                weighted(g, y)
            },
            rand_input(3, 4, 2),
        );
        check(
            |g, x| {
                let row = g.slice_cols(x, 0, 1);
                let row = g.transpose(row);
                let row = g.slice_cols(row, 0, 3);
                let y = g.mul_row(x, row);
                let y = g.add_row(y, row);
                weighted(g, y)
            },
            rand_input(3, 3, 3),
        );
        check(
            |g, x| {
                let col = g.slice_cols(x, 1, 1);
                let y = g.mul_col(x, col);
                weighted(g, y)
            },
            rand_input(4, 3, 4),
        );
    }

    #[test]
    fn normalization_and_softmax_have_correct_gradients() {
        check(
            |g, x| {
                let y = g.layer_norm(x, 1e-6);
                weighted(g, y)
            },
            rand_input(3, 5, 5),
        );
        check(
            |g, x| {
                let y = g.instance_norm(x, 1e-5);
                weighted(g, y)
            },
            rand_input(5, 3, 6),
        );
        check(
            |g, x| {
                let y = g.softmax_rows(x);
                weighted(g, y)
            },
            rand_input(3, 4, 7),
        );
    }

    #[test]
    fn structural_ops_have_correct_gradients() {
        check(
            |g, x| {
                let y = g.unfold(x, 3);
                weighted(g, y)
            },
            rand_input(5, 2, 8),
        );
        check(
            |g, x| {
                let y = g.row_diff(x);
                weighted(g, y)
            },
            rand_input(5, 2, 9),
        );
        check(
            |g, x| {
                let m = g.mean_rows(x);
                let a = g.slice_cols(x, 0, 2);
                let b = g.slice_cols(x, 2, 1);
                let c = g.concat_cols(&[b, a]);
                let c = g.add_row(c, m);
                let top = g.slice_rows(c, 1, 2);
                let bottom = g.slice_rows(c, 0, 2);
                let tb = g.add(top, bottom);
                let tb = g.transpose(tb);
                let p = g.matmul(c, tb);
                weighted(g, p)
            },
            rand_input(4, 3, 10),
        );
    }

    #[test]
    fn constant_subgraphs_receive_no_gradient() {
        let mut g = Graph::new();
        let c = g.constant(Tensor::filled(2, 2, 1.0));
        let p = g.param(Tensor::filled(2, 2, 2.0));
        let cc = g.gelu(c);
        let y = g.mul(cc, p);
        let l = g.mean_all(y);
        let grads = g.backward(l);
        assert!(grads.get(c).is_none());
        assert!(grads.get(cc).is_none());
        assert!(grads.get(p).is_some());
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let x = rand_input(6, 9, 11).map(|v| 30.0 * v);
        let s = softmax_rows(&x);
        for r in 0..s.rows() {
            assert!((s.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
