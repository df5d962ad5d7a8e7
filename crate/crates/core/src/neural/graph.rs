//! Tape-based reverse-mode differentiation over [`Tensor2`].
//!
//! A [`Graph`] records every operation as it is evaluated. Calling
//! [`Graph::backward`] on a 1×1 node walks the tape in reverse and returns
//! gradients for every node that depends on a parameter leaf.

use super::tensor::{dot, Tensor2};
use crate::error::{Error, Result};

/// LayerNorm variance epsilon.
pub const LAYER_NORM_EPS: f64 = 1e-5;
/// Probability floor inside the cross-entropy logarithm.
pub const PROB_FLOOR: f64 = 1e-12;

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMulT {
        x: Var,
        w: Var,
    },
    AddBias {
        x: Var,
        b: Var,
    },
    Add {
        a: Var,
        b: Var,
    },
    Silu {
        x: Var,
    },
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Tensor2,
        inv_std: Vec<f64>,
    },
    Softmax {
        x: Var,
    },
    ConcatCols {
        a: Var,
        b: Var,
    },
    SliceCols {
        x: Var,
        start: usize,
    },
    Reshape {
        x: Var,
    },
    BroadcastRows {
        x: Var,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        shape: AttentionShape,
        probs: Vec<f64>,
    },
    CrossEntropy {
        p: Var,
        targets: Vec<usize>,
    },
}

/// Token layout for [`Graph::attention`]: each row of q/k/v holds one
/// sample's tokens back to back, each `width` wide and split into `heads`
/// equal slices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttentionShape {
    pub q_tokens: usize,
    pub kv_tokens: usize,
    pub width: usize,
    pub heads: usize,
}

impl AttentionShape {
    fn head_dim(&self) -> usize {
        self.width / self.heads
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor2,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients returned by [`Graph::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor2>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor2> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of `v`, or zeros shaped like it when nothing flowed there.
    pub fn get_or_zeros(&self, v: Var, shape: (usize, usize)) -> Tensor2 {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor2::zeros(shape.0, shape.1))
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn silu_scalar(x: f64) -> f64 {
    x * sigmoid(x)
}

fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
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

    fn push(&mut self, value: Tensor2, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Constant input; no gradient is tracked.
    pub fn input(&mut self, value: Tensor2) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor2) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn value(&self, v: Var) -> &Tensor2 {
        &self.nodes[v.0].value
    }

    /// Softmax weights recorded by an attention node, laid out as
    /// `[sample][head][query][key]`.
    pub fn attention_probs(&self, v: Var) -> Option<&[f64]> {
        match &self.nodes[v.0].op {
            Op::Attention { probs, .. } => Some(probs),
            _ => None,
        }
    }

    /// `x · wᵀ` for a batch of row vectors `x` (B×in) and weights `w` (out×in).
    pub fn matmul_t(&mut self, x: Var, w: Var) -> Result<Var> {
        let value = self.value(x).matmul_t(self.value(w))?;
        let rg = self.needs(x) || self.needs(w);
        Ok(self.push(value, Op::MatMulT { x, w }, rg))
    }

    /// Adds a 1×1 scalar bias or a 1×cols row bias to every row.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(b));
        let mut out = xv.clone();
        match bv.shape() {
            (1, 1) => {
                let s = bv.data()[0];
                out.data_mut().iter_mut().for_each(|v| *v += s);
            }
            (1, c) if c == xv.cols() => {
                for r in 0..out.rows() {
                    for (o, &bb) in out.row_mut(r).iter_mut().zip(bv.data()) {
                        *o += bb;
                    }
                }
            }
            _ => {
                return Err(Error::ShapeMismatch {
                    op: "add_bias",
                    lhs: xv.shape(),
                    rhs: bv.shape(),
                })
            }
        }
        let rg = self.needs(x) || self.needs(b);
        Ok(self.push(out, Op::AddBias { x, b }, rg))
    }

    /// `x · wᵀ + b`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let y = self.matmul_t(x, w)?;
        self.add_bias(y, b)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).add(self.value(b))?;
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Add { a, b }, rg))
    }

    pub fn silu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(silu_scalar);
        let rg = self.needs(x);
        self.push(value, Op::Silu { x }, rg)
    }

    /// Per-row normalization with learnable per-feature scale and shift.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let xv = self.value(x);
        let (rows, cols) = xv.shape();
        for p in [gamma, beta] {
            if self.value(p).shape() != (1, cols) {
                return Err(Error::ShapeMismatch {
                    op: "layer_norm",
                    lhs: xv.shape(),
                    rhs: self.value(p).shape(),
                });
            }
        }
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        let mut xhat = Tensor2::zeros(rows, cols);
        let mut out = Tensor2::zeros(rows, cols);
        let mut inv_std = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = xv.row(r);
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
            let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std.push(inv);
            let xh = xhat.row_mut(r);
            for (h, &v) in xh.iter_mut().zip(row) {
                *h = (v - mean) * inv;
            }
            let xh = xhat.row(r).to_vec();
            for (c, o) in out.row_mut(r).iter_mut().enumerate() {
                *o = g[c] * xh[c] + b[c];
            }
        }
        let rg = self.needs(x) || self.needs(gamma) || self.needs(beta);
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            rg,
        ))
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let mut out = self.value(x).clone();
        for r in 0..out.rows() {
            softmax_in_place(out.row_mut(r));
        }
        let rg = self.needs(x);
        self.push(out, Op::Softmax { x }, rg)
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.rows() != bv.rows() {
            return Err(Error::ShapeMismatch {
                op: "concat_cols",
                lhs: av.shape(),
                rhs: bv.shape(),
            });
        }
        let cols = av.cols() + bv.cols();
        let mut data = Vec::with_capacity(av.rows() * cols);
        for r in 0..av.rows() {
            data.extend_from_slice(av.row(r));
            data.extend_from_slice(bv.row(r));
        }
        let value = Tensor2::new(av.rows(), cols, data)?;
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::ConcatCols { a, b }, rg))
    }

    /// Columns `[start, start+len)`.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let xv = self.value(x);
        if start + len > xv.cols() {
            return Err(Error::InvalidArgument(format!(
                "column slice {start}..{} of {} columns",
                start + len,
                xv.cols()
            )));
        }
        let mut data = Vec::with_capacity(xv.rows() * len);
        for r in 0..xv.rows() {
            data.extend_from_slice(&xv.row(r)[start..start + len]);
        }
        let value = Tensor2::new(xv.rows(), len, data)?;
        let rg = self.needs(x);
        Ok(self.push(value, Op::SliceCols { x, start }, rg))
    }

    /// Reinterpret the row-major data with a new shape.
    pub fn reshape(&mut self, x: Var, rows: usize, cols: usize) -> Result<Var> {
        let value = self.value(x).reshaped(rows, cols)?;
        let rg = self.needs(x);
        Ok(self.push(value, Op::Reshape { x }, rg))
    }

    /// Repeat a single row `n` times.
    pub fn broadcast_rows(&mut self, x: Var, n: usize) -> Result<Var> {
        let xv = self.value(x);
        if xv.rows() != 1 {
            return Err(Error::InvalidArgument(format!(
                "broadcast_rows needs one row, got {}",
                xv.rows()
            )));
        }
        let data = xv.data().repeat(n);
        let value = Tensor2::new(n, xv.cols(), data)?;
        let rg = self.needs(x);
        Ok(self.push(value, Op::BroadcastRows { x }, rg))
    }

    /// Multi-head scaled dot-product attention, independently per row.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, shape: AttentionShape) -> Result<Var> {
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let AttentionShape {
            q_tokens,
            kv_tokens,
            width,
            heads,
        } = shape;
        if heads == 0 || width % heads != 0 {
            return Err(Error::InvalidArgument(format!(
                "token width {width} not divisible into {heads} heads"
            )));
        }
        let batch = qv.rows();
        if qv.cols() != q_tokens * width
            || kv.shape() != (batch, kv_tokens * width)
            || vv.shape() != kv.shape()
        {
            return Err(Error::ShapeMismatch {
                op: "attention",
                lhs: qv.shape(),
                rhs: kv.shape(),
            });
        }
        let dk = shape.head_dim();
        let scale = 1.0 / (dk as f64).sqrt();
        let mut out = Tensor2::zeros(batch, q_tokens * width);
        let mut probs = Vec::with_capacity(batch * heads * q_tokens * kv_tokens);
        let mut scores = vec![0.0; kv_tokens];
        for b in 0..batch {
            let (qr, kr, vr) = (qv.row(b), kv.row(b), vv.row(b));
            for h in 0..heads {
                for i in 0..q_tokens {
                    let qs = &qr[i * width + h * dk..i * width + (h + 1) * dk];
                    for (j, s) in scores.iter_mut().enumerate() {
                        let ks = &kr[j * width + h * dk..j * width + (h + 1) * dk];
                        *s = dot(qs, ks) * scale;
                    }
                    softmax_in_place(&mut scores);
                    let base = i * width + h * dk;
                    let orow = out.row_mut(b);
                    for c in 0..dk {
                        let mut acc = scores[0] * vr[h * dk + c];
                        for (j, &p) in scores.iter().enumerate().skip(1) {
                            acc += p * vr[j * width + h * dk + c];
                        }
                        orow[base + c] = acc;
                    }
                    probs.extend_from_slice(&scores);
                }
            }
        }
        let rg = self.needs(q) || self.needs(k) || self.needs(v);
        Ok(self.push(
            out,
            Op::Attention {
                q,
                k,
                v,
                shape,
                probs,
            },
            rg,
        ))
    }

    /// Mean over rows of `-ln(max(p[row, target], 1e-12))`; `p` holds
    /// probability rows.
    pub fn cross_entropy(&mut self, p: Var, targets: &[usize]) -> Result<Var> {
        let pv = self.value(p);
        if targets.len() != pv.rows() {
            return Err(Error::LengthMismatch {
                expected: pv.rows(),
                actual: targets.len(),
            });
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= pv.cols()) {
            return Err(Error::InvalidArgument(format!(
                "class index {bad} out of range for {} classes",
                pv.cols()
            )));
        }
        let loss = targets
            .iter()
            .enumerate()
            .map(|(r, &t)| -pv.get(r, t).max(PROB_FLOOR).ln())
            .sum::<f64>()
            / targets.len().max(1) as f64;
        let rg = self.needs(p);
        Ok(self.push(
            Tensor2::scalar(loss),
            Op::CrossEntropy {
                p,
                targets: targets.to_vec(),
            },
            rg,
        ))
    }

    /// Reverse sweep from a 1×1 node.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        if self.value(root).shape() != (1, 1) {
            return Err(Error::InvalidArgument(format!(
                "backward root must be 1x1, got {:?}",
                self.value(root).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor2>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(Tensor2::scalar(1.0));
        for idx in (0..=root.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(dy) = grads[idx].take() else {
                continue;
            };
            self.propagate(node, &dy, &mut grads)?;
            grads[idx] = Some(dy);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor2>], v: Var, g: Tensor2) {
        if !self.needs(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn propagate(&self, node: &Node, dy: &Tensor2, grads: &mut [Option<Tensor2>]) -> Result<()> {
        match &node.op {
            Op::Leaf => {}
            Op::MatMulT { x, w } => {
                if self.needs(*x) {
                    let dx = dy.matmul(self.value(*w))?;
                    self.accumulate(grads, *x, dx);
                }
                if self.needs(*w) {
                    let dw = dy.t_matmul(self.value(*x))?;
                    self.accumulate(grads, *w, dw);
                }
            }
            Op::AddBias { x, b } => {
                self.accumulate(grads, *x, dy.clone());
                if self.needs(*b) {
                    let db = match self.value(*b).shape() {
                        (1, 1) => Tensor2::scalar(dy.data().iter().sum()),
                        (1, c) => {
                            let mut s = vec![0.0; c];
                            for r in 0..dy.rows() {
                                for (acc, &g) in s.iter_mut().zip(dy.row(r)) {
                                    *acc += g;
                                }
                            }
                            Tensor2::row_vector(s)
                        }
                        _ => unreachable!("bias shape validated in forward"),
                    };
                    self.accumulate(grads, *b, db);
                }
            }
            Op::Add { a, b } => {
                self.accumulate(grads, *a, dy.clone());
                self.accumulate(grads, *b, dy.clone());
            }
            Op::Silu { x } => {
                let xv = self.value(*x);
                let mut dx = dy.clone();
                for (g, &v) in dx.data_mut().iter_mut().zip(xv.data()) {
                    let s = sigmoid(v);
                    *g *= s * (1.0 + v * (1.0 - s));
                }
                self.accumulate(grads, *x, dx);
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let g = self.value(*gamma).data();
                let (rows, cols) = dy.shape();
                if self.needs(*gamma) || self.needs(*beta) {
                    let mut dg = vec![0.0; cols];
                    let mut db = vec![0.0; cols];
                    for r in 0..rows {
                        for c in 0..cols {
                            dg[c] += dy.get(r, c) * xhat.get(r, c);
                            db[c] += dy.get(r, c);
                        }
                    }
                    self.accumulate(grads, *gamma, Tensor2::row_vector(dg));
                    self.accumulate(grads, *beta, Tensor2::row_vector(db));
                }
                if self.needs(*x) {
                    let mut dx = Tensor2::zeros(rows, cols);
                    for r in 0..rows {
                        let dxhat: Vec<f64> =
                            dy.row(r).iter().zip(g).map(|(d, gg)| d * gg).collect();
                        let xh = xhat.row(r);
                        let mean_d = dxhat.iter().sum::<f64>() / cols as f64;
                        let mean_dx = dxhat.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>()
                            / cols as f64;
                        for (c, o) in dx.row_mut(r).iter_mut().enumerate() {
                            *o = inv_std[r] * (dxhat[c] - mean_d - xh[c] * mean_dx);
                        }
                    }
                    self.accumulate(grads, *x, dx);
                }
            }
            Op::Softmax { x } => {
                let p = &node.value;
                let mut dx = Tensor2::zeros(p.rows(), p.cols());
                for r in 0..p.rows() {
                    let s = dot(dy.row(r), p.row(r));
                    for (c, o) in dx.row_mut(r).iter_mut().enumerate() {
                        *o = p.get(r, c) * (dy.get(r, c) - s);
                    }
                }
                self.accumulate(grads, *x, dx);
            }
            Op::ConcatCols { a, b } => {
                let ca = self.value(*a).cols();
                let cb = self.value(*b).cols();
                let mut ga = Vec::with_capacity(dy.rows() * ca);
                let mut gb = Vec::with_capacity(dy.rows() * cb);
                for r in 0..dy.rows() {
                    ga.extend_from_slice(&dy.row(r)[..ca]);
                    gb.extend_from_slice(&dy.row(r)[ca..]);
                }
                self.accumulate(grads, *a, Tensor2::new(dy.rows(), ca, ga)?);
                self.accumulate(grads, *b, Tensor2::new(dy.rows(), cb, gb)?);
            }
            Op::SliceCols { x, start } => {
                let (rows, cols) = self.value(*x).shape();
                let mut dx = Tensor2::zeros(rows, cols);
                for r in 0..rows {
                    dx.row_mut(r)[*start..*start + dy.cols()].copy_from_slice(dy.row(r));
                }
                self.accumulate(grads, *x, dx);
            }
            Op::Reshape { x } => {
                let (rows, cols) = self.value(*x).shape();
                self.accumulate(grads, *x, dy.reshaped(rows, cols)?);
            }
            Op::BroadcastRows { x } => {
                let mut s = vec![0.0; dy.cols()];
                for r in 0..dy.rows() {
                    for (acc, &g) in s.iter_mut().zip(dy.row(r)) {
                        *acc += g;
                    }
                }
                self.accumulate(grads, *x, Tensor2::row_vector(s));
            }
            Op::Attention {
                q,
                k,
                v,
                shape,
                probs,
            } => self.attention_backward(*q, *k, *v, *shape, probs, dy, grads),
            Op::CrossEntropy { p, targets } => {
                let pv = self.value(*p);
                let n = targets.len().max(1) as f64;
                let seed = dy.data()[0];
                let mut dp = Tensor2::zeros(pv.rows(), pv.cols());
                for (r, &t) in targets.iter().enumerate() {
                    let prob = pv.get(r, t);
                    if prob >= PROB_FLOOR {
                        dp.set(r, t, -seed / (n * prob));
                    }
                }
                self.accumulate(grads, *p, dp);
            }
        }
        Ok(())
    }

    #[allow(clippy::too_many_arguments)]
    fn attention_backward(
        &self,
        q: Var,
        k: Var,
        v: Var,
        shape: AttentionShape,
        probs: &[f64],
        dy: &Tensor2,
        grads: &mut [Option<Tensor2>],
    ) {
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let AttentionShape {
            q_tokens: tq,
            kv_tokens: tk,
            width,
            heads,
        } = shape;
        let dk = shape.head_dim();
        let scale = 1.0 / (dk as f64).sqrt();
        let mut dq = Tensor2::zeros(qv.rows(), qv.cols());
        let mut dkm = Tensor2::zeros(kv.rows(), kv.cols());
        let mut dv = Tensor2::zeros(vv.rows(), vv.cols());
        let mut dp = vec![0.0; tk];
        for b in 0..qv.rows() {
            for h in 0..heads {
                for i in 0..tq {
                    let p = &probs[((b * heads + h) * tq + i) * tk..][..tk];
                    let qo = i * width + h * dk;
                    let d_out = &dy.row(b)[qo..qo + dk];
                    for j in 0..tk {
                        let ko = j * width + h * dk;
                        dp[j] = dot(d_out, &vv.row(b)[ko..ko + dk]);
                        let dvr = &mut dv.row_mut(b)[ko..ko + dk];
                        for (d, &g) in dvr.iter_mut().zip(d_out) {
                            *d += p[j] * g;
                        }
                    }
                    let s = dot(&dp, p);
                    for j in 0..tk {
                        let ds = p[j] * (dp[j] - s) * scale;
                        if ds == 0.0 {
                            continue;
                        }
                        let ko = j * width + h * dk;
                        for c in 0..dk {
                            let qc = qv.row(b)[qo + c];
                            let kc = kv.row(b)[ko + c];
                            dq.row_mut(b)[qo + c] += ds * kc;
                            dkm.row_mut(b)[ko + c] += ds * qc;
                        }
                    }
                }
            }
        }
        self.accumulate(grads, q, dq);
        self.accumulate(grads, k, dkm);
        self.accumulate(grads, v, dv);
    }
}
