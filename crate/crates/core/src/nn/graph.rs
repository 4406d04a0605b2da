//! Reverse-mode automatic differentiation over a linear tape.
//!
//! A [`Graph`] records every operation applied during a forward pass. Nodes
//! are only ever appended, so the tape order is a valid topological order and
//! the backward pass is a single reverse sweep.

use std::collections::HashMap;

use super::tensor::gemm;
use super::{NnError, ParamId, ParamStore, Tensor};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op {
    Input,
    Param,
    MatMul(Var, Var),
    /// `a · bᵀ`
    MatMulNt(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    /// `[m, n] + [n]`, the bias broadcast over rows.
    AddRow(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Gelu(Var),
    SoftmaxRows(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    SliceCols {
        x: Var,
        start: usize,
    },
    SliceRows {
        x: Var,
        start: usize,
    },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    Reshape(Var),
    Conv2d {
        x: Var,
        w: Var,
        b: Var,
        geom: ConvGeom,
        cols: Vec<f64>,
    },
    MaxPool2d {
        x: Var,
        argmax: Vec<usize>,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        probs: Vec<f64>,
    },
    WeightedSum {
        x: Var,
        weights: Vec<f64>,
    },
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Spatial bookkeeping shared by the convolution forward and backward passes.
#[derive(Clone, Copy, Debug)]
struct ConvGeom {
    c_in: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    h_out: usize,
    w_out: usize,
}

/// Output length of a sliding window: `floor((n + 2·pad − k) / stride) + 1`.
pub fn window_output_len(n: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = n + 2 * pad;
    if stride == 0 || k == 0 || k > padded {
        return None;
    }
    Some((padded - k) / stride + 1)
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
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

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn dims(&self, v: Var) -> Result<(usize, usize), NnError> {
        self.value(v).dims2()
    }

    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Input)
    }

    /// Parameter leaf. Each parameter is placed on the tape once per graph.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let mut t = store.get(id).clone();
        t.grad = None;
        let v = self.push(t, Op::Param);
        self.params.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        let out = self.value(a).matmul(self.value(b))?;
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        let (m, k) = self.dims(a)?;
        let (n, k2) = self.dims(b)?;
        if k != k2 {
            return Err(NnError::Shape(format!(
                "a·bᵀ inner dims differ: [{m}x{k}] vs [{n}x{k2}]"
            )));
        }
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            self.value(a).data(),
            false,
            self.value(b).data(),
            true,
            &mut out,
            0.0,
        );
        let t = Tensor::new(vec![m, n], out)?;
        Ok(self.push(t, Op::MatMulNt(a, b)))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var, NnError> {
        let t = self.value(x).transpose2()?;
        Ok(self.push(t, Op::Transpose(x)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(NnError::Shape(format!(
                "add: {:?} vs {:?}",
                ta.shape(),
                tb.shape()
            )));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x + y).collect();
        let t = Tensor::new(ta.shape().to_vec(), data)?;
        Ok(self.push(t, Op::Add(a, b)))
    }

    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var, NnError> {
        let (m, n) = self.dims(x)?;
        let b = self.value(bias);
        if b.len() != n {
            return Err(NnError::Shape(format!(
                "row broadcast: bias of {} values for {n} columns",
                b.len()
            )));
        }
        let mut data = self.value(x).data().to_vec();
        for row in data.chunks_mut(n) {
            for (v, bj) in row.iter_mut().zip(b.data()) {
                *v += bj;
            }
        }
        let t = Tensor::new(vec![m, n], data)?;
        Ok(self.push(t, Op::AddRow(x, bias)))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let t = self.value(x).map(|v| v * s);
        self.push(t, Op::Scale(x, s))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let t = self.value(x).map(|v| v.max(0.0));
        self.push(t, Op::Relu(x))
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let t = self.value(x).map(gelu);
        self.push(t, Op::Gelu(x))
    }

    pub fn softmax_rows(&mut self, x: Var) -> Result<Var, NnError> {
        let xt = self.value(x);
        let t = xt.softmax(xt.rank() - 1)?;
        Ok(self.push(t, Op::SoftmaxRows(x)))
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var, NnError> {
        let (m, n) = self.dims(x)?;
        let (g, b) = (self.value(gamma), self.value(beta));
        if g.len() != n || b.len() != n {
            return Err(NnError::Shape(format!(
                "layer norm over {n} features with gain {} / shift {}",
                g.len(),
                b.len()
            )));
        }
        let xd = self.value(x).data();
        let mut xhat = vec![0.0; m * n];
        let mut rstd = vec![0.0; m];
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &xd[i * n..(i + 1) * n];
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
            let r = 1.0 / (var + eps).sqrt();
            rstd[i] = r;
            for j in 0..n {
                let h = (row[j] - mean) * r;
                xhat[i * n + j] = h;
                out[i * n + j] = h * g.data()[j] + b.data()[j];
            }
        }
        let t = Tensor::new(vec![m, n], out)?;
        Ok(self.push(
            t,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            },
        ))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var, NnError> {
        let (m, n) = self.dims(x)?;
        if len == 0 || start + len > n {
            return Err(NnError::Shape(format!(
                "column slice {start}..{} of {n}",
                start + len
            )));
        }
        let xd = self.value(x).data();
        let mut out = Vec::with_capacity(m * len);
        for i in 0..m {
            out.extend_from_slice(&xd[i * n + start..i * n + start + len]);
        }
        let t = Tensor::new(vec![m, len], out)?;
        Ok(self.push(t, Op::SliceCols { x, start }))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var, NnError> {
        let (m, n) = self.dims(x)?;
        if len == 0 || start + len > m {
            return Err(NnError::Shape(format!(
                "row slice {start}..{} of {m}",
                start + len
            )));
        }
        let out = self.value(x).data()[start * n..(start + len) * n].to_vec();
        let t = Tensor::new(vec![len, n], out)?;
        Ok(self.push(t, Op::SliceRows { x, start }))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, NnError> {
        let m = self.dims(parts[0])?.0;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (pm, pn) = self.dims(p)?;
            if pm != m {
                return Err(NnError::Shape(format!("concat_cols: {pm} rows vs {m}")));
            }
            widths.push(pn);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(m * total);
        for i in 0..m {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p).data()[i * w..(i + 1) * w]);
            }
        }
        let t = Tensor::new(vec![m, total], out)?;
        Ok(self.push(t, Op::ConcatCols(parts.to_vec())))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, NnError> {
        let n = self.dims(parts[0])?.1;
        let mut rows = 0;
        let mut out = Vec::new();
        for &p in parts {
            let (pm, pn) = self.dims(p)?;
            if pn != n {
                return Err(NnError::Shape(format!("concat_rows: {pn} cols vs {n}")));
            }
            rows += pm;
            out.extend_from_slice(self.value(p).data());
        }
        let t = Tensor::new(vec![rows, n], out)?;
        Ok(self.push(t, Op::ConcatRows(parts.to_vec())))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var, NnError> {
        let t = self.value(x).clone().reshape(shape)?;
        Ok(self.push(t, Op::Reshape(x)))
    }

    /// Cross-correlation of `x: [C_in, H, W]` with `w: [C_out, C_in, k, k]`
    /// plus per-channel bias `b: [C_out]`.
    pub fn conv2d(
        &mut self,
        x: Var,
        w: Var,
        b: Var,
        stride: usize,
        pad: usize,
    ) -> Result<Var, NnError> {
        let xs = self.value(x).shape().to_vec();
        let ws = self.value(w).shape().to_vec();
        let (c_in, h, wd) = match xs[..] {
            [c, h, w] => (c, h, w),
            _ => return Err(NnError::Shape(format!("conv2d input must be [C,H,W], got {xs:?}"))),
        };
        let (c_out, k) = match ws[..] {
            [co, ci, k1, k2] if ci == c_in && k1 == k2 => (co, k1),
            _ => {
                return Err(NnError::Shape(format!(
                    "conv2d kernel {ws:?} incompatible with {c_in} input channels"
                )))
            }
        };
        if self.value(b).len() != c_out {
            return Err(NnError::Shape("conv2d bias length".into()));
        }
        let (h_out, w_out) = match (
            window_output_len(h, k, stride, pad),
            window_output_len(wd, k, stride, pad),
        ) {
            (Some(a), Some(b)) => (a, b),
            _ => {
                return Err(NnError::Shape(format!(
                    "kernel {k} (stride {stride}) does not fit {h}x{wd} input padded by {pad}"
                )))
            }
        };
        let geom = ConvGeom {
            c_in,
            h,
            w: wd,
            k,
            stride,
            pad,
            h_out,
            w_out,
        };
        let cols = im2col(self.value(x).data(), &geom);
        let spatial = h_out * w_out;
        let mut out = vec![0.0; c_out * spatial];
        for (co, row) in out.chunks_mut(spatial).enumerate() {
            row.fill(self.value(b).data()[co]);
        }
        gemm(
            c_out,
            c_in * k * k,
            spatial,
            self.value(w).data(),
            false,
            &cols,
            false,
            &mut out,
            1.0,
        );
        let t = Tensor::new(vec![c_out, h_out, w_out], out)?;
        Ok(self.push(t, Op::Conv2d { x, w, b, geom, cols }))
    }

    /// Max pooling over `[C, H, W]` with implicit `-inf` padding.
    pub fn max_pool2d(&mut self, x: Var, k: usize, stride: usize, pad: usize) -> Result<Var, NnError> {
        let xs = self.value(x).shape().to_vec();
        let (c, h, w) = match xs[..] {
            [c, h, w] => (c, h, w),
            _ => return Err(NnError::Shape(format!("max_pool2d input must be [C,H,W], got {xs:?}"))),
        };
        let (ho, wo) = match (
            window_output_len(h, k, stride, pad),
            window_output_len(w, k, stride, pad),
        ) {
            (Some(a), Some(b)) => (a, b),
            _ => return Err(NnError::Shape(format!("pool window {k} does not fit {h}x{w}"))),
        };
        let xd = self.value(x).data();
        let mut out = Vec::with_capacity(c * ho * wo);
        let mut argmax = Vec::with_capacity(c * ho * wo);
        for ch in 0..c {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_i = usize::MAX;
                    for ky in 0..k {
                        let iy = (oy * stride + ky) as isize - pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..k {
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            let idx = (ch * h + iy as usize) * w + ix as usize;
                            if xd[idx] > best {
                                best = xd[idx];
                                best_i = idx;
                            }
                        }
                    }
                    out.push(best);
                    argmax.push(best_i);
                }
            }
        }
        let t = Tensor::new(vec![c, ho, wo], out)?;
        Ok(self.push(t, Op::MaxPool2d { x, argmax }))
    }

    /// Mean negative log-likelihood of `targets` under row-wise softmax of
    /// `logits: [batch, classes]`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var, NnError> {
        let (b, c) = self.dims(logits)?;
        if targets.len() != b {
            return Err(NnError::Shape(format!(
                "{} targets for a batch of {b}",
                targets.len()
            )));
        }
        if let Some(&t) = targets.iter().find(|&&t| t >= c) {
            return Err(NnError::Index(format!("target {t} outside 0..{c}")));
        }
        let probs = self.value(logits).softmax(1)?;
        let loss = targets
            .iter()
            .enumerate()
            .map(|(i, &t)| -log_softmax_at(self.value(logits).row(i), t))
            .sum::<f64>()
            / b as f64;
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs: probs.into_data(),
            },
        ))
    }

    /// `Σ x ⊙ weights`, a scalar probe used by gradient checks.
    pub fn weighted_sum(&mut self, x: Var, weights: &Tensor) -> Result<Var, NnError> {
        if self.value(x).shape() != weights.shape() {
            return Err(NnError::Shape("weighted_sum weights shape".into()));
        }
        let s = self
            .value(x)
            .data()
            .iter()
            .zip(weights.data())
            .map(|(a, b)| a * b)
            .sum();
        Ok(self.push(
            Tensor::scalar(s),
            Op::WeightedSum {
                x,
                weights: weights.data().to_vec(),
            },
        ))
    }

    /// Back-propagates from the scalar `root` and returns the gradient for
    /// every parameter that appeared on the tape.
    pub fn backward(&self, root: Var) -> Result<Gradients, NnError> {
        if self.value(root).len() != 1 {
            return Err(NnError::Shape("backward needs a scalar root".into()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; root.0 + 1];
        grads[root.0] = Some(vec![1.0]);

        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Input => {}
                Op::Param => {
                    grads[idx] = Some(g);
                }
                Op::MatMul(a, b) => {
                    let (m, k) = self.dims(*a)?;
                    let n = self.dims(*b)?.1;
                    let mut da = vec![0.0; m * k];
                    gemm(m, n, k, &g, false, self.value(*b).data(), true, &mut da, 0.0);
                    let mut db = vec![0.0; k * n];
                    gemm(k, m, n, self.value(*a).data(), true, &g, false, &mut db, 0.0);
                    accumulate(&mut grads, *a, &da);
                    accumulate(&mut grads, *b, &db);
                }
                Op::MatMulNt(a, b) => {
                    // out = a bᵀ, a: [m,k], b: [n,k]
                    let (m, k) = self.dims(*a)?;
                    let n = self.dims(*b)?.0;
                    let mut da = vec![0.0; m * k];
                    gemm(m, n, k, &g, false, self.value(*b).data(), false, &mut da, 0.0);
                    let mut db = vec![0.0; n * k];
                    gemm(n, m, k, &g, true, self.value(*a).data(), false, &mut db, 0.0);
                    accumulate(&mut grads, *a, &da);
                    accumulate(&mut grads, *b, &db);
                }
                Op::Transpose(x) => {
                    let (r, c) = self.dims(*x)?;
                    let mut dx = vec![0.0; r * c];
                    for i in 0..r {
                        for j in 0..c {
                            dx[i * c + j] = g[j * r + i];
                        }
                    }
                    accumulate(&mut grads, *x, &dx);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, &g);
                    accumulate(&mut grads, *b, &g);
                }
                Op::AddRow(x, bias) => {
                    let n = self.dims(*x)?.1;
                    let mut db = vec![0.0; n];
                    for row in g.chunks(n) {
                        for (d, v) in db.iter_mut().zip(row) {
                            *d += v;
                        }
                    }
                    accumulate(&mut grads, *x, &g);
                    accumulate(&mut grads, *bias, &db);
                }
                Op::Scale(x, s) => {
                    let dx: Vec<f64> = g.iter().map(|v| v * s).collect();
                    accumulate(&mut grads, *x, &dx);
                }
                Op::Relu(x) => {
                    let dx: Vec<f64> = g
                        .iter()
                        .zip(self.value(*x).data())
                        .map(|(gv, xv)| if *xv > 0.0 { *gv } else { 0.0 })
                        .collect();
                    accumulate(&mut grads, *x, &dx);
                }
                Op::Gelu(x) => {
                    let dx: Vec<f64> = g
                        .iter()
                        .zip(self.value(*x).data())
                        .map(|(gv, xv)| gv * gelu_grad(*xv))
                        .collect();
                    accumulate(&mut grads, *x, &dx);
                }
                Op::SoftmaxRows(x) => {
                    let y = node.value.data();
                    let n = *node.value.shape().last().unwrap();
                    let mut dx = vec![0.0; y.len()];
                    for ((dxr, yr), gr) in dx.chunks_mut(n).zip(y.chunks(n)).zip(g.chunks(n)) {
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for j in 0..n {
                            dxr[j] = yr[j] * (gr[j] - dot);
                        }
                    }
                    accumulate(&mut grads, *x, &dx);
                }
                Op::LayerNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    rstd,
                } => {
                    let (m, n) = self.dims(*x)?;
                    let gd = self.value(*gamma).data();
                    let mut dx = vec![0.0; m * n];
                    let mut dgamma = vec![0.0; n];
                    let mut dbeta = vec![0.0; n];
                    for i in 0..m {
                        let gr = &g[i * n..(i + 1) * n];
                        let hr = &xhat[i * n..(i + 1) * n];
                        let mut sum_dh = 0.0;
                        let mut sum_dh_h = 0.0;
                        for j in 0..n {
                            let dh = gr[j] * gd[j];
                            sum_dh += dh;
                            sum_dh_h += dh * hr[j];
                            dgamma[j] += gr[j] * hr[j];
                            dbeta[j] += gr[j];
                        }
                        let nf = n as f64;
                        for j in 0..n {
                            let dh = gr[j] * gd[j];
                            dx[i * n + j] = rstd[i] / nf * (nf * dh - sum_dh - hr[j] * sum_dh_h);
                        }
                    }
                    accumulate(&mut grads, *x, &dx);
                    accumulate(&mut grads, *gamma, &dgamma);
                    accumulate(&mut grads, *beta, &dbeta);
                }
                Op::SliceCols { x, start } => {
                    let (m, n) = self.dims(*x)?;
                    let len = node.value.shape()[1];
                    let mut dx = vec![0.0; m * n];
                    for i in 0..m {
                        dx[i * n + start..i * n + start + len]
                            .copy_from_slice(&g[i * len..(i + 1) * len]);
                    }
                    accumulate(&mut grads, *x, &dx);
                }
                Op::SliceRows { x, start } => {
                    let (m, n) = self.dims(*x)?;
                    let mut dx = vec![0.0; m * n];
                    dx[start * n..start * n + g.len()].copy_from_slice(&g);
                    accumulate(&mut grads, *x, &dx);
                }
                Op::ConcatCols(parts) => {
                    let (m, total) = node.value.dims2()?;
                    let mut offset = 0;
                    for &p in parts {
                        let w = self.dims(p)?.1;
                        let mut dp = Vec::with_capacity(m * w);
                        for i in 0..m {
                            dp.extend_from_slice(&g[i * total + offset..i * total + offset + w]);
                        }
                        accumulate(&mut grads, p, &dp);
                        offset += w;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let len = self.value(p).len();
                        accumulate(&mut grads, p, &g[offset..offset + len]);
                        offset += len;
                    }
                }
                Op::Reshape(x) => accumulate(&mut grads, *x, &g),
                Op::Conv2d { x, w, b, geom, cols } => {
                    let c_out = self.value(*w).shape()[0];
                    let spatial = geom.h_out * geom.w_out;
                    let ckk = geom.c_in * geom.k * geom.k;
                    let mut dw = vec![0.0; c_out * ckk];
                    gemm(c_out, spatial, ckk, &g, false, cols, true, &mut dw, 0.0);
                    let db: Vec<f64> = g.chunks(spatial).map(|r| r.iter().sum()).collect();
                    let mut dcols = vec![0.0; ckk * spatial];
                    gemm(ckk, c_out, spatial, self.value(*w).data(), true, &g, false, &mut dcols, 0.0);
                    let dx = col2im(&dcols, geom);
                    accumulate(&mut grads, *x, &dx);
                    accumulate(&mut grads, *w, &dw);
                    accumulate(&mut grads, *b, &db);
                }
                Op::MaxPool2d { x, argmax } => {
                    let mut dx = vec![0.0; self.value(*x).len()];
                    for (gv, &i) in g.iter().zip(argmax) {
                        if i != usize::MAX {
                            dx[i] += gv;
                        }
                    }
                    accumulate(&mut grads, *x, &dx);
                }
                Op::CrossEntropy {
                    logits,
                    targets,
                    probs,
                } => {
                    let (bsz, c) = self.dims(*logits)?;
                    let scale = g[0] / bsz as f64;
                    let mut dl: Vec<f64> = probs.iter().map(|p| p * scale).collect();
                    for (i, &t) in targets.iter().enumerate() {
                        dl[i * c + t] -= scale;
                    }
                    accumulate(&mut grads, *logits, &dl);
                }
                Op::WeightedSum { x, weights } => {
                    let dx: Vec<f64> = weights.iter().map(|w| w * g[0]).collect();
                    accumulate(&mut grads, *x, &dx);
                }
            }
        }

        let mut by_param = Vec::with_capacity(self.params.len());
        for (&id, &v) in &self.params {
            if v.0 > root.0 {
                continue;
            }
            let shape = self.value(v).shape().to_vec();
            let data = grads[v.0]
                .take()
                .unwrap_or_else(|| vec![0.0; self.value(v).len()]);
            by_param.push((id, Tensor::new(shape, data)?));
        }
        by_param.sort_by_key(|(id, _)| id.0);
        Ok(Gradients(by_param))
    }
}

/// Parameter gradients from one backward pass, ordered by [`ParamId`].
#[derive(Debug, Clone)]
pub struct Gradients(pub Vec<(ParamId, Tensor)>);

impl Gradients {
    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.0.iter().find(|(p, _)| *p == id).map(|(_, t)| t)
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], v: Var, g: &[f64]) {
    match &mut grads[v.0] {
        Some(existing) => {
            for (e, x) in existing.iter_mut().zip(g) {
                *e += x;
            }
        }
        slot @ None => *slot = Some(g.to_vec()),
    }
}

fn log_softmax_at(row: &[f64], t: usize) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    row[t] - lse
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

/// GELU, tanh approximation.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

fn im2col(x: &[f64], g: &ConvGeom) -> Vec<f64> {
    let spatial = g.h_out * g.w_out;
    let mut cols = vec![0.0; g.c_in * g.k * g.k * spatial];
    for c in 0..g.c_in {
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (c * g.k + ky) * g.k + kx;
                let dst = &mut cols[row * spatial..(row + 1) * spatial];
                for oy in 0..g.h_out {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    for ox in 0..g.w_out {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix < 0 || ix >= g.w as isize {
                            continue;
                        }
                        dst[oy * g.w_out + ox] = x[(c * g.h + iy as usize) * g.w + ix as usize];
                    }
                }
            }
        }
    }
    cols
}

fn col2im(cols: &[f64], g: &ConvGeom) -> Vec<f64> {
    let spatial = g.h_out * g.w_out;
    let mut x = vec![0.0; g.c_in * g.h * g.w];
    for c in 0..g.c_in {
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (c * g.k + ky) * g.k + kx;
                let src = &cols[row * spatial..(row + 1) * spatial];
                for oy in 0..g.h_out {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    for ox in 0..g.w_out {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix < 0 || ix >= g.w as isize {
                            continue;
                        }
                        x[(c * g.h + iy as usize) * g.w + ix as usize] += src[oy * g.w_out + ox];
                    }
                }
            }
        }
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn output_length_formula() {
        assert_eq!(window_output_len(224, 7, 2, 3), Some(112));
        assert_eq!(window_output_len(32, 3, 2, 1), Some(16));
        assert_eq!(window_output_len(2, 5, 1, 1), None);
    }

    #[test]
    fn cross_entropy_of_uniform_logits_is_ln2() {
        let mut g = Graph::new();
        let l = g.input(Tensor::zeros(&[1, 2]));
        for t in 0..2 {
            let loss = g.cross_entropy(l, &[t]).unwrap();
            assert!((g.value(loss).data()[0] - 2f64.ln()).abs() < 1e-15);
        }
    }

    #[test]
    fn cross_entropy_vanishes_for_dominant_target() {
        let mut g = Graph::new();
        let l = g.input(Tensor::new(vec![1, 3], vec![60.0, 0.0, -3.0]).unwrap());
        let loss = g.cross_entropy(l, &[0]).unwrap();
        assert!(g.value(loss).data()[0] < 1e-25);
    }

    #[test]
    fn cross_entropy_rejects_out_of_range_target() {
        let mut g = Graph::new();
        let l = g.input(Tensor::zeros(&[2, 3]));
        assert!(matches!(g.cross_entropy(l, &[0, 3]), Err(NnError::Index(_))));
    }

    #[test]
    fn max_pool_routes_gradient_to_argmax() {
        let mut store = ParamStore::default();
        let id = store.insert("x", Tensor::new(vec![1, 2, 2], vec![1.0, 4.0, 3.0, 2.0]).unwrap());
        let mut g = Graph::new();
        let x = g.param(&store, id);
        let p = g.max_pool2d(x, 2, 2, 0).unwrap();
        assert_eq!(g.value(p).data(), &[4.0]);
        let grads = g.backward(p).unwrap();
        assert_eq!(grads.get(id).unwrap().data(), &[0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn gelu_derivative_matches_difference_quotient() {
        for &x in &[-3.0, -0.7, 0.0, 0.4, 2.5] {
            let h = 1e-6;
            let num = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((num - gelu_grad(x)).abs() < 1e-9);
        }
    }
}
