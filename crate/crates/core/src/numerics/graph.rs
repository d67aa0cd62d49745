//! Reverse-mode gradient tape.
//!
//! A [`Graph`] records every operation applied to its variables. Calling
//! [`Graph::backward`] on a scalar node walks the record in reverse and
//! returns the gradient of every variable created with [`Graph::param`].

use std::collections::BTreeMap;

use super::kernels::{
    self, axpy, cross_entropy_fwd, dot, gelu_grad_scalar, gemm_nn, gemm_nt, gemm_tn, layer_norm_fwd, softmax_in_place,
};
use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T: Real> {
    Leaf,
    MatMul(Var, Var),
    MatMulBt(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, T),
    Sum(Var),
    Gelu(Var),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        mean: Vec<T>,
        rstd: Vec<T>,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        probs: Tensor<T>,
    },
    Embedding {
        table: Var,
        ids: Vec<usize>,
    },
    CausalAttention {
        qkv: Var,
        batch: usize,
        seq: usize,
        heads: usize,
        probs: Vec<T>,
    },
}

struct Node<T: Real> {
    value: Tensor<T>,
    op: Op<T>,
    is_param: bool,
    needs_grad: bool,
}

/// Operation record plus values for one forward computation.
pub struct Graph<T: Real = f32> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients keyed by parameter variable.
#[derive(Debug)]
pub struct Gradients<T: Real> {
    grads: BTreeMap<Var, Tensor<T>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(&v)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.remove(&v)
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    /// Trainable input; receives a gradient on backward.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push_leaf(value, true)
    }

    /// Frozen input; never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push_leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push_leaf(&mut self, value: Tensor<T>, is_param: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            is_param,
            needs_grad: is_param,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node {
            value,
            op,
            is_param: false,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn check(&self, v: Var) -> Result<()> {
        if v.0 >= self.nodes.len() {
            return Err(Error::State(format!("variable {} was not recorded on this graph", v.0)));
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check(a)?;
        self.check(b)?;
        let out = kernels::matmul(self.value(a), self.value(b))?;
        Ok(self.push(out, Op::MatMul(a, b), &[a, b]))
    }

    /// `a * b^T` with `b` rank 2.
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check(a)?;
        self.check(b)?;
        let out = kernels::matmul_bt(self.value(a), self.value(b))?;
        Ok(self.push(out, Op::MatMulBt(a, b), &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check(a)?;
        self.check(b)?;
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(Error::dim("add", format!("{:?} vs {:?}", x.shape(), y.shape())));
        }
        let data = x.data().iter().zip(y.data()).map(|(p, q)| *p + *q).collect();
        let out = Tensor::from_parts_unchecked(x.shape().to_vec(), data);
        Ok(self.push(out, Op::Add(a, b), &[a, b]))
    }

    /// Elementwise product of equal-shape tensors.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check(a)?;
        self.check(b)?;
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(Error::dim("mul", format!("{:?} vs {:?}", x.shape(), y.shape())));
        }
        let data = x.data().iter().zip(y.data()).map(|(p, q)| *p * *q).collect();
        let out = Tensor::from_parts_unchecked(x.shape().to_vec(), data);
        Ok(self.push(out, Op::Mul(a, b), &[a, b]))
    }

    /// Adds a bias vector to every row.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        self.check(a)?;
        self.check(bias)?;
        let (x, b) = (self.value(a), self.value(bias));
        if b.len() != x.cols() {
            return Err(Error::dim(
                "add_row",
                format!("bias of {} for rows of {}", b.len(), x.cols()),
            ));
        }
        let mut data = x.data().to_vec();
        for row in data.chunks_exact_mut(b.len()) {
            for (r, bv) in row.iter_mut().zip(b.data()) {
                *r += *bv;
            }
        }
        let out = Tensor::from_parts_unchecked(x.shape().to_vec(), data);
        Ok(self.push(out, Op::AddRow(a, bias), &[a, bias]))
    }

    pub fn scale(&mut self, a: Var, c: T) -> Result<Var> {
        self.check(a)?;
        let out = self.value(a).map(|v| v * c);
        Ok(self.push(out, Op::Scale(a, c), &[a]))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        self.check(a)?;
        let mut s = T::ZERO;
        for &v in self.value(a).data() {
            s += v;
        }
        Ok(self.push(Tensor::scalar(s), Op::Sum(a), &[a]))
    }

    pub fn gelu(&mut self, a: Var) -> Result<Var> {
        self.check(a)?;
        let out = kernels::gelu(self.value(a));
        Ok(self.push(out, Op::Gelu(a), &[a]))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        self.check(a)?;
        let out = kernels::softmax_rows(self.value(a));
        Ok(self.push(out, Op::Softmax(a), &[a]))
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        for v in [x, gain, bias] {
            self.check(v)?;
        }
        let (out, mean, rstd) = layer_norm_fwd(self.value(x), self.value(gain), self.value(bias), eps)?;
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                mean,
                rstd,
            },
            &[x, gain, bias],
        ))
    }

    /// Mean cross-entropy over rows; yields a scalar node.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        self.check(logits)?;
        let (loss, probs) = cross_entropy_fwd(self.value(logits), targets)?;
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            &[logits],
        ))
    }

    /// Gathers rows `ids` of a rank-2 table into an `[ids.len(), cols]` tensor.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        self.check(table)?;
        let t = self.value(table);
        if t.shape().len() != 2 {
            return Err(Error::dim(
                "embedding",
                format!("table must be rank 2, got {:?}", t.shape()),
            ));
        }
        if ids.is_empty() {
            return Err(Error::Input("embedding lookup with no ids".into()));
        }
        let (rows, cols) = (t.shape()[0], t.shape()[1]);
        let mut data = Vec::with_capacity(ids.len() * cols);
        for &id in ids {
            if id >= rows {
                return Err(Error::Index(format!("embedding id {id} outside table of {rows} rows")));
            }
            data.extend_from_slice(t.row(id));
        }
        let out = Tensor::from_parts_unchecked(vec![ids.len(), cols], data);
        Ok(self.push(
            out,
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
            &[table],
        ))
    }

    /// Multi-head causal self-attention.
    ///
    /// `qkv` has shape `[batch * seq, 3 * d]` holding the query, key and value
    /// projections side by side; head `h` uses columns `h * d / heads ..` of
    /// each block. Output is `[batch * seq, d]`. Scores are scaled by
    /// `1 / sqrt(d / heads)` and position `t` attends to positions `0..=t`.
    pub fn causal_attention(&mut self, qkv: Var, batch: usize, seq: usize, heads: usize) -> Result<Var> {
        self.check(qkv)?;
        let x = self.value(qkv);
        if x.shape().len() != 2 || x.shape()[0] != batch * seq || !x.cols().is_multiple_of(3) {
            return Err(Error::dim(
                "causal_attention",
                format!("qkv {:?} for batch {batch} x seq {seq}", x.shape()),
            ));
        }
        let d = x.cols() / 3;
        if heads == 0 || !d.is_multiple_of(heads) {
            return Err(Error::dim(
                "causal_attention",
                format!("width {d} not divisible by {heads} heads"),
            ));
        }
        let hd = d / heads;
        let scale = T::from_f64(1.0 / (hd as f64).sqrt());
        let w = 3 * d;
        let src = x.data();
        let mut out = vec![T::ZERO; batch * seq * d];
        let mut probs = vec![T::ZERO; batch * heads * seq * seq];
        for b in 0..batch {
            for h in 0..heads {
                let pbase = (b * heads + h) * seq * seq;
                for t in 0..seq {
                    let qrow = (b * seq + t) * w + h * hd;
                    let q = &src[qrow..qrow + hd];
                    let p = &mut probs[pbase + t * seq..pbase + t * seq + t + 1];
                    for (s, ps) in p.iter_mut().enumerate() {
                        let krow = (b * seq + s) * w + d + h * hd;
                        *ps = dot(q, &src[krow..krow + hd]) * scale;
                    }
                    softmax_in_place(p);
                    let orow = (b * seq + t) * d + h * hd;
                    let o = &mut out[orow..orow + hd];
                    for (s, &ps) in p.iter().enumerate() {
                        let vrow = (b * seq + s) * w + 2 * d + h * hd;
                        axpy(o, ps, &src[vrow..vrow + hd]);
                    }
                }
            }
        }
        let out = Tensor::from_parts_unchecked(vec![batch * seq, d], out);
        Ok(self.push(
            out,
            Op::CausalAttention {
                qkv,
                batch,
                seq,
                heads,
                probs,
            },
            &[qkv],
        ))
    }

    /// Gradients of the scalar `loss` with respect to every parameter that
    /// influences it.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        self.check(loss)?;
        if self.value(loss).len() != 1 {
            return Err(Error::State(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::ONE]);

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            if let Op::Leaf = node.op {
                grads[i] = Some(g);
                continue;
            }
            self.backprop_node(node, &g, &mut grads)?;
        }

        let mut out = BTreeMap::new();
        for (i, g) in grads.into_iter().enumerate() {
            let node = &self.nodes[i];
            if let (Some(g), true) = (g, node.is_param) {
                if g.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite(format!("gradient of parameter node {i}")));
                }
                out.insert(Var(i), Tensor::from_parts_unchecked(node.value.shape().to_vec(), g));
            }
        }
        Ok(Gradients { grads: out })
    }

    fn backprop_node(&self, node: &Node<T>, g: &[T], grads: &mut [Option<Vec<T>>]) -> Result<()> {
        let needs = |v: Var| self.nodes[v.0].needs_grad;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (n, k, m) = (av.rows(), av.cols(), bv.cols());
                if needs(*a) {
                    gemm_nt(g, bv.data(), acc(grads, *a, av.len()), n, m, k);
                }
                if needs(*b) {
                    gemm_tn(av.data(), g, acc(grads, *b, bv.len()), n, k, m);
                }
            }
            Op::MatMulBt(a, b) => {
                // out[n, m] = a[n, k] * b[m, k]^T
                let (av, bv) = (self.value(*a), self.value(*b));
                let (n, k, m) = (av.rows(), av.cols(), bv.shape()[0]);
                if needs(*a) {
                    gemm_nn(g, bv.data(), acc(grads, *a, av.len()), n, m, k);
                }
                if needs(*b) {
                    gemm_tn(g, av.data(), acc(grads, *b, bv.len()), n, m, k);
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if needs(v) {
                        add_into(acc(grads, v, g.len()), g);
                    }
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if needs(*a) {
                    let ga = acc(grads, *a, g.len());
                    for ((d, gi), y) in ga.iter_mut().zip(g).zip(bv.data()) {
                        *d += *gi * *y;
                    }
                }
                if needs(*b) {
                    let gb = acc(grads, *b, g.len());
                    for ((d, gi), x) in gb.iter_mut().zip(g).zip(av.data()) {
                        *d += *gi * *x;
                    }
                }
            }
            Op::AddRow(a, bias) => {
                if needs(*a) {
                    add_into(acc(grads, *a, g.len()), g);
                }
                if needs(*bias) {
                    let c = self.value(*bias).len();
                    let gb = acc(grads, *bias, c);
                    for row in g.chunks_exact(c) {
                        add_into(gb, row);
                    }
                }
            }
            Op::Scale(a, c) => {
                let ga = acc(grads, *a, g.len());
                for (d, gi) in ga.iter_mut().zip(g) {
                    *d += *gi * *c;
                }
            }
            Op::Sum(a) => {
                let n = self.value(*a).len();
                let ga = acc(grads, *a, n);
                for d in ga.iter_mut() {
                    *d += g[0];
                }
            }
            Op::Gelu(a) => {
                let x = self.value(*a).data();
                let ga = acc(grads, *a, g.len());
                for ((d, gi), xi) in ga.iter_mut().zip(g).zip(x) {
                    *d += *gi * gelu_grad_scalar(*xi);
                }
            }
            Op::Softmax(a) => {
                let y = &node.value;
                let c = y.cols();
                let ga = acc(grads, *a, g.len());
                for r in 0..y.rows() {
                    let yr = y.row(r);
                    let gr = &g[r * c..(r + 1) * c];
                    let inner = dot(yr, gr);
                    for j in 0..c {
                        ga[r * c + j] += yr[j] * (gr[j] - inner);
                    }
                }
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                mean,
                rstd,
            } => {
                let xv = self.value(*x);
                let gv = self.value(*gain).data();
                let c = xv.cols();
                let inv_c = T::from_f64(1.0 / c as f64);
                let rows = xv.rows();
                let mut dgain = vec![T::ZERO; c];
                let mut dbias = vec![T::ZERO; c];
                let mut dx = if needs(*x) { vec![T::ZERO; xv.len()] } else { Vec::new() };
                let mut xhat = vec![T::ZERO; c];
                let mut dxhat = vec![T::ZERO; c];
                for r in 0..rows {
                    let xr = xv.row(r);
                    let gr = &g[r * c..(r + 1) * c];
                    let mut mean_dxhat = T::ZERO;
                    let mut mean_dxhat_xhat = T::ZERO;
                    for j in 0..c {
                        xhat[j] = (xr[j] - mean[r]) * rstd[r];
                        dgain[j] += gr[j] * xhat[j];
                        dbias[j] += gr[j];
                        dxhat[j] = gr[j] * gv[j];
                        mean_dxhat += dxhat[j];
                        mean_dxhat_xhat += dxhat[j] * xhat[j];
                    }
                    if !dx.is_empty() {
                        mean_dxhat *= inv_c;
                        mean_dxhat_xhat *= inv_c;
                        for j in 0..c {
                            dx[r * c + j] = rstd[r] * (dxhat[j] - mean_dxhat - xhat[j] * mean_dxhat_xhat);
                        }
                    }
                }
                if needs(*x) {
                    add_into(acc(grads, *x, xv.len()), &dx);
                }
                if needs(*gain) {
                    add_into(acc(grads, *gain, c), &dgain);
                }
                if needs(*bias) {
                    add_into(acc(grads, *bias, c), &dbias);
                }
            }
            Op::CrossEntropy { logits, targets, probs } => {
                let v = probs.cols();
                let scale = g[0] / T::from_f64(targets.len() as f64);
                let gl = acc(grads, *logits, probs.len());
                for (r, &t) in targets.iter().enumerate() {
                    let pr = probs.row(r);
                    let dst = &mut gl[r * v..(r + 1) * v];
                    for j in 0..v {
                        dst[j] += pr[j] * scale;
                    }
                    dst[t] -= scale;
                }
            }
            Op::Embedding { table, ids } => {
                let tv = self.value(*table);
                let c = tv.cols();
                let gt = acc(grads, *table, tv.len());
                for (i, &id) in ids.iter().enumerate() {
                    add_into(&mut gt[id * c..(id + 1) * c], &g[i * c..(i + 1) * c]);
                }
            }
            Op::CausalAttention {
                qkv,
                batch,
                seq,
                heads,
                probs,
            } => {
                let (batch, seq, heads) = (*batch, *seq, *heads);
                let xv = self.value(*qkv);
                let src = xv.data();
                let w = xv.cols();
                let d = w / 3;
                let hd = d / heads;
                let scale = T::from_f64(1.0 / (hd as f64).sqrt());
                let gq = acc(grads, *qkv, xv.len());
                let mut dp = vec![T::ZERO; seq];
                for b in 0..batch {
                    for h in 0..heads {
                        let pbase = (b * heads + h) * seq * seq;
                        for t in 0..seq {
                            let p = &probs[pbase + t * seq..pbase + t * seq + t + 1];
                            let orow = (b * seq + t) * d + h * hd;
                            let dout = &g[orow..orow + hd];
                            // d(probs) and d(values)
                            for s in 0..=t {
                                let vrow = (b * seq + s) * w + 2 * d + h * hd;
                                dp[s] = dot(dout, &src[vrow..vrow + hd]);
                                axpy(&mut gq[vrow..vrow + hd], p[s], dout);
                            }
                            // softmax backward into scaled scores
                            let inner = dot(p, &dp[..=t]);
                            let qrow = (b * seq + t) * w + h * hd;
                            for s in 0..=t {
                                let ds = p[s] * (dp[s] - inner) * scale;
                                let krow = (b * seq + s) * w + d + h * hd;
                                for j in 0..hd {
                                    let kj = src[krow + j];
                                    let qj = src[qrow + j];
                                    gq[qrow + j] += ds * kj;
                                    gq[krow + j] += ds * qj;
                                }
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

fn acc<T: Real>(grads: &mut [Option<Vec<T>>], v: Var, len: usize) -> &mut [T] {
    grads[v.0].get_or_insert_with(|| vec![T::ZERO; len])
}

fn add_into<T: Real>(dst: &mut [T], src: &[T]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += *s;
    }
}
