//! Tensor-level reverse-mode differentiation.
//!
//! A [`Tape`] records one forward pass as a list of nodes in evaluation
//! order. Each node keeps its value plus whatever the backward rule needs
//! (softmax probabilities, layer-norm statistics). [`Tape::backward`] walks
//! the list in reverse, accumulating gradients into every parent, and
//! returns the gradients of the recorded parameter leaves.

use crate::error::{Error, Result};

use super::tensor::{matmul_a_bt_acc, matmul_acc, matmul_at_b_acc, transpose, Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NodeId(usize);

pub(crate) const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044715;

#[derive(Debug)]
enum Op<T> {
    Leaf,
    /// `x[n,i] W[i,o] + b[o]`
    Linear {
        x: usize,
        w: usize,
        b: usize,
    },
    Add {
        a: usize,
        b: usize,
    },
    /// Row `r` of `x` gets row `r / group` of `emb`.
    AddGrouped {
        x: usize,
        emb: usize,
        group: usize,
    },
    /// Stacks `row` (a `[d]` vector) on top of `x[n,d]`.
    PrependRow {
        row: usize,
        x: usize,
    },
    LayerNorm {
        x: usize,
        gamma: usize,
        beta: usize,
        xhat: Vec<T>,
        rstd: Vec<T>,
    },
    Gelu {
        x: usize,
    },
    /// Multi-head scaled dot-product attention; `probs` is `[heads, s, s]`.
    Attention {
        q: usize,
        k: usize,
        v: usize,
        heads: usize,
        probs: Vec<T>,
    },
    SelectRow {
        x: usize,
        row: usize,
    },
    CrossEntropy {
        logits: usize,
        label: usize,
        probs: Vec<T>,
    },
    Scale {
        x: usize,
        s: T,
    },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    /// False for constants and anything computed only from constants.
    grad: bool,
}

/// Gradient tape for one forward pass.
#[derive(Debug, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    params: Vec<usize>,
    loss: Option<usize>,
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            params: Vec::new(),
            loss: None,
        }
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> NodeId {
        let grad = match &op {
            Op::Leaf => false,
            Op::Linear { x, w, b } => self.any_grad(&[*x, *w, *b]),
            Op::Add { a, b } => self.any_grad(&[*a, *b]),
            Op::AddGrouped { x, emb, .. } => self.any_grad(&[*x, *emb]),
            Op::PrependRow { row, x } => self.any_grad(&[*row, *x]),
            Op::LayerNorm { x, gamma, beta, .. } => self.any_grad(&[*x, *gamma, *beta]),
            Op::Attention { q, k, v, .. } => self.any_grad(&[*q, *k, *v]),
            Op::Gelu { x } | Op::SelectRow { x, .. } | Op::Scale { x, .. } => self.any_grad(&[*x]),
            Op::CrossEntropy { logits, .. } => self.any_grad(&[*logits]),
        };
        self.nodes.push(Node { value, op, grad });
        NodeId(self.nodes.len() - 1)
    }

    fn any_grad(&self, ids: &[usize]) -> bool {
        ids.iter().any(|&i| self.nodes[i].grad)
    }

    /// Node that [`Tape::backward`] differentiates, if any.
    pub fn loss(&self) -> Option<NodeId> {
        self.loss.map(NodeId)
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    /// Constant input; receives no gradient output.
    pub fn constant(&mut self, value: Tensor<T>) -> NodeId {
        self.push(value, Op::Leaf)
    }

    /// Parameter leaf; its gradient is returned by [`Tape::backward`] in registration order.
    pub fn param(&mut self, value: Tensor<T>) -> NodeId {
        let id = self.push(value, Op::Leaf);
        self.nodes[id.0].grad = true;
        self.params.push(id.0);
        id
    }

    pub fn linear(&mut self, x: NodeId, w: NodeId, b: NodeId) -> NodeId {
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        let (n, i, o) = (xv.rows(), xv.cols(), wv.cols());
        assert_eq!(wv.rows(), i, "linear: inner dims");
        assert_eq!(bv.len(), o, "linear: bias width");
        let mut out = Vec::with_capacity(n * o);
        for _ in 0..n {
            out.extend_from_slice(bv.data());
        }
        matmul_acc(xv.data(), wv.data(), &mut out, n, i, o);
        self.push(
            Tensor::from_vec(&[n, o], out),
            Op::Linear {
                x: x.0,
                w: w.0,
                b: b.0,
            },
        )
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.shape(), bv.shape(), "add: shapes");
        let data = av
            .data()
            .iter()
            .zip(bv.data())
            .map(|(&p, &q)| p + q)
            .collect();
        let shape = av.shape().to_vec();
        self.push(Tensor::from_vec(&shape, data), Op::Add { a: a.0, b: b.0 })
    }

    pub fn add_grouped(&mut self, x: NodeId, emb: NodeId, group: usize) -> NodeId {
        let (xv, ev) = (self.value(x), self.value(emb));
        let (n, d) = (xv.rows(), xv.cols());
        assert_eq!(ev.cols(), d);
        assert_eq!(ev.rows() * group, n, "add_grouped: group count");
        let mut data = xv.data().to_vec();
        for r in 0..n {
            let e = &ev.data()[(r / group) * d..(r / group + 1) * d];
            for (y, &v) in data[r * d..(r + 1) * d].iter_mut().zip(e) {
                *y = *y + v;
            }
        }
        self.push(
            Tensor::from_vec(&[n, d], data),
            Op::AddGrouped {
                x: x.0,
                emb: emb.0,
                group,
            },
        )
    }

    pub fn prepend_row(&mut self, row: NodeId, x: NodeId) -> NodeId {
        let (rv, xv) = (self.value(row), self.value(x));
        let d = xv.cols();
        assert_eq!(rv.len(), d);
        let mut data = Vec::with_capacity(rv.len() + xv.len());
        data.extend_from_slice(rv.data());
        data.extend_from_slice(xv.data());
        let n = xv.rows() + 1;
        self.push(
            Tensor::from_vec(&[n, d], data),
            Op::PrependRow { row: row.0, x: x.0 },
        )
    }

    pub fn layer_norm(&mut self, x: NodeId, gamma: NodeId, beta: NodeId) -> NodeId {
        let (xv, gv, bv) = (self.value(x), self.value(gamma), self.value(beta));
        let (n, d) = (xv.rows(), xv.cols());
        let inv_d = T::lit(1.0 / d as f64);
        let eps = T::lit(LN_EPS);
        let mut xhat = Vec::with_capacity(n * d);
        let mut rstd = Vec::with_capacity(n);
        let mut out = Vec::with_capacity(n * d);
        for r in 0..n {
            let row = &xv.data()[r * d..(r + 1) * d];
            let mean = row.iter().copied().sum::<T>() * inv_d;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_d;
            let rs = (var + eps).sqrt().recip();
            rstd.push(rs);
            for (j, &v) in row.iter().enumerate() {
                let h = (v - mean) * rs;
                xhat.push(h);
                out.push(h * gv.data()[j] + bv.data()[j]);
            }
        }
        self.push(
            Tensor::from_vec(&[n, d], out),
            Op::LayerNorm {
                x: x.0,
                gamma: gamma.0,
                beta: beta.0,
                xhat,
                rstd,
            },
        )
    }

    pub fn gelu(&mut self, x: NodeId) -> NodeId {
        let xv = self.value(x);
        let (c, a, half) = (T::lit(GELU_C), T::lit(GELU_A), T::lit(0.5));
        let data = xv
            .data()
            .iter()
            .map(|&v| half * v * (T::one() + (c * (v + a * v * v * v)).tanh()))
            .collect();
        let shape = xv.shape().to_vec();
        self.push(Tensor::from_vec(&shape, data), Op::Gelu { x: x.0 })
    }

    /// Multi-head scaled dot-product attention; each query skips its own key.
    pub fn attention(&mut self, q: NodeId, k: NodeId, v: NodeId, heads: usize) -> NodeId {
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let (s, d) = (qv.rows(), qv.cols());
        assert!(
            heads > 0 && d % heads == 0,
            "attention: heads must divide width"
        );
        assert!(s >= 2, "attention: needs at least two tokens");
        assert_eq!(kv.shape(), qv.shape());
        assert_eq!(vv.shape(), qv.shape());
        let dh = d / heads;
        let scale = T::lit(1.0 / (dh as f64).sqrt());
        let mut probs = vec![T::zero(); heads * s * s];
        let mut out = vec![T::zero(); s * d];
        for h in 0..heads {
            let qh = head_cols(qv.data(), s, d, h, dh);
            let kh_t = transpose(&head_cols(kv.data(), s, d, h, dh), s, dh);
            let vh = head_cols(vv.data(), s, d, h, dh);
            let p = &mut probs[h * s * s..(h + 1) * s * s];
            matmul_acc(&qh, &kh_t, p, s, dh, s);
            for (i, row) in p.chunks_exact_mut(s).enumerate() {
                row[i] = T::neg_infinity();
                softmax_in_place(row, scale);
            }
            let mut oh = vec![T::zero(); s * dh];
            matmul_acc(p, &vh, &mut oh, s, s, dh);
            scatter_head_cols(&oh, &mut out, s, d, h, dh);
        }
        self.push(
            Tensor::from_vec(&[s, d], out),
            Op::Attention {
                q: q.0,
                k: k.0,
                v: v.0,
                heads,
                probs,
            },
        )
    }

    pub fn select_row(&mut self, x: NodeId, row: usize) -> NodeId {
        let xv = self.value(x);
        let d = xv.cols();
        let data = xv.data()[row * d..(row + 1) * d].to_vec();
        self.push(
            Tensor::from_vec(&[1, d], data),
            Op::SelectRow { x: x.0, row },
        )
    }

    pub fn scale(&mut self, x: NodeId, s: T) -> NodeId {
        let xv = self.value(x);
        let data = xv.data().iter().map(|&v| v * s).collect();
        let shape = xv.shape().to_vec();
        let id = self.push(Tensor::from_vec(&shape, data), Op::Scale { x: x.0, s });
        if self.loss == Some(x.0) {
            self.loss = Some(id.0);
        }
        id
    }

    /// `-log softmax(logits)[label]`; marks the result as the loss to differentiate.
    pub fn cross_entropy(&mut self, logits: NodeId, label: usize) -> NodeId {
        let lv = self.value(logits);
        assert!(label < lv.len(), "label {label} out of range");
        let mut probs = lv.data().to_vec();
        softmax_in_place(&mut probs, T::one());
        let loss = cross_entropy_value(lv.data(), label);
        let id = self.push(
            Tensor::from_vec(&[1], vec![loss]),
            Op::CrossEntropy {
                logits: logits.0,
                label,
                probs,
            },
        );
        self.loss = Some(id.0);
        id
    }

    /// Gradient of the recorded loss with respect to every parameter leaf, in
    /// registration order.
    pub fn backward(&self) -> Result<Vec<Tensor<T>>> {
        let mut acc: Vec<Tensor<T>> = self
            .params
            .iter()
            .map(|&p| Tensor::zeros(self.nodes[p].value.shape()))
            .collect();
        self.backward_into(&mut acc)?;
        Ok(acc)
    }

    /// Adds the parameter gradients of the recorded loss into `acc`, which
    /// holds one tensor per parameter leaf in registration order.
    pub fn backward_into(&self, acc: &mut [Tensor<T>]) -> Result<()> {
        let loss = self
            .loss
            .ok_or_else(|| Error::State("backward called before a loss was recorded".into()))?;
        if acc.len() != self.params.len() {
            return Err(Error::Argument(format!(
                "{} accumulators for {} parameters",
                acc.len(),
                self.params.len()
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        for (&p, a) in self.params.iter().zip(acc.iter_mut()) {
            if a.shape() != self.nodes[p].value.shape() {
                return Err(Error::Argument(format!(
                    "accumulator {:?} for parameter {:?}",
                    a.shape(),
                    self.nodes[p].value.shape()
                )));
            }
            grads[p] = Some(std::mem::replace(a, Tensor::zeros(&[0])));
        }
        grads[loss] = Some(Tensor::filled(self.nodes[loss].value.shape(), T::one()));

        for id in (0..=loss).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            if !node.grad {
                continue;
            }
            match &node.op {
                Op::Leaf => {
                    grads[id] = Some(g);
                }
                Op::Linear { x, w, b } => {
                    let (xv, wv) = (&self.nodes[*x].value, &self.nodes[*w].value);
                    let (n, i, o) = (xv.rows(), xv.cols(), wv.cols());
                    if self.nodes[*x].grad {
                        matmul_a_bt_acc(
                            g.data(),
                            wv.data(),
                            grad_of(&mut grads, *x, xv).data_mut(),
                            n,
                            o,
                            i,
                        );
                    }
                    matmul_at_b_acc(
                        xv.data(),
                        g.data(),
                        grad_of(&mut grads, *w, wv).data_mut(),
                        n,
                        i,
                        o,
                    );
                    let gb = grad_of(&mut grads, *b, &self.nodes[*b].value).data_mut();
                    for row in g.data().chunks_exact(o) {
                        for (acc, &v) in gb.iter_mut().zip(row) {
                            *acc = *acc + v;
                        }
                    }
                }
                Op::Add { a, b } => {
                    grad_of(&mut grads, *a, &self.nodes[*a].value).add_assign(&g);
                    grad_of(&mut grads, *b, &self.nodes[*b].value).add_assign(&g);
                }
                Op::AddGrouped { x, emb, group } => {
                    grad_of(&mut grads, *x, &self.nodes[*x].value).add_assign(&g);
                    let d = g.cols();
                    let ge = grad_of(&mut grads, *emb, &self.nodes[*emb].value).data_mut();
                    for (r, row) in g.data().chunks_exact(d).enumerate() {
                        let dst = &mut ge[(r / group) * d..(r / group + 1) * d];
                        for (acc, &v) in dst.iter_mut().zip(row) {
                            *acc = *acc + v;
                        }
                    }
                }
                Op::PrependRow { row, x } => {
                    let d = g.cols();
                    let gr = grad_of(&mut grads, *row, &self.nodes[*row].value).data_mut();
                    for (acc, &v) in gr.iter_mut().zip(&g.data()[..d]) {
                        *acc = *acc + v;
                    }
                    let gx = grad_of(&mut grads, *x, &self.nodes[*x].value).data_mut();
                    for (acc, &v) in gx.iter_mut().zip(&g.data()[d..]) {
                        *acc = *acc + v;
                    }
                }
                Op::LayerNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    rstd,
                } => {
                    let d = g.cols();
                    let gv = self.nodes[*gamma].value.data();
                    let inv_d = T::lit(1.0 / d as f64);
                    {
                        let gg = grad_of(&mut grads, *gamma, &self.nodes[*gamma].value).data_mut();
                        for (row, xh) in g.data().chunks_exact(d).zip(xhat.chunks_exact(d)) {
                            for j in 0..d {
                                gg[j] = gg[j] + row[j] * xh[j];
                            }
                        }
                    }
                    {
                        let gbeta = grad_of(&mut grads, *beta, &self.nodes[*beta].value).data_mut();
                        for row in g.data().chunks_exact(d) {
                            for j in 0..d {
                                gbeta[j] = gbeta[j] + row[j];
                            }
                        }
                    }
                    let gx = grad_of(&mut grads, *x, &self.nodes[*x].value).data_mut();
                    let mut dxhat = vec![T::zero(); d];
                    for (r, row) in g.data().chunks_exact(d).enumerate() {
                        let xh = &xhat[r * d..(r + 1) * d];
                        for j in 0..d {
                            dxhat[j] = row[j] * gv[j];
                        }
                        let mean_d = dxhat.iter().copied().sum::<T>() * inv_d;
                        let mean_dx = dxhat.iter().zip(xh).map(|(&a, &b)| a * b).sum::<T>() * inv_d;
                        let dst = &mut gx[r * d..(r + 1) * d];
                        for j in 0..d {
                            dst[j] = dst[j] + rstd[r] * (dxhat[j] - mean_d - xh[j] * mean_dx);
                        }
                    }
                }
                Op::Gelu { x } => {
                    let xv = &self.nodes[*x].value;
                    let (c, a, half) = (T::lit(GELU_C), T::lit(GELU_A), T::lit(0.5));
                    let three_a = T::lit(3.0 * GELU_A);
                    let gx = grad_of(&mut grads, *x, xv).data_mut();
                    for ((acc, &v), &dy) in gx.iter_mut().zip(xv.data()).zip(g.data()) {
                        let t = (c * (v + a * v * v * v)).tanh();
                        let dt = (T::one() - t * t) * c * (T::one() + three_a * v * v);
                        *acc = *acc + dy * (half * (T::one() + t) + half * v * dt);
                    }
                }
                Op::Attention {
                    q,
                    k,
                    v,
                    heads,
                    probs,
                } => {
                    let (qv, kv, vv) = (
                        &self.nodes[*q].value,
                        &self.nodes[*k].value,
                        &self.nodes[*v].value,
                    );
                    let (s, d) = (qv.rows(), qv.cols());
                    let dh = d / heads;
                    let scale = T::lit(1.0 / (dh as f64).sqrt());
                    let mut gq = vec![T::zero(); s * d];
                    let mut gk = vec![T::zero(); s * d];
                    let mut gvv = vec![T::zero(); s * d];
                    for h in 0..*heads {
                        let p = &probs[h * s * s..(h + 1) * s * s];
                        let qh = head_cols(qv.data(), s, d, h, dh);
                        let kh = head_cols(kv.data(), s, d, h, dh);
                        let vh = head_cols(vv.data(), s, d, h, dh);
                        let goh = head_cols(g.data(), s, d, h, dh);
                        // dV = P^T dO
                        let mut dvh = vec![T::zero(); s * dh];
                        matmul_at_b_acc(p, &goh, &mut dvh, s, s, dh);
                        // dP = dO V^T
                        let mut dp = vec![T::zero(); s * s];
                        matmul_acc(&goh, &transpose(&vh, s, dh), &mut dp, s, dh, s);
                        // dS = P * (dP - rowsum(dP * P)), folded with the 1/sqrt(dh) scale
                        for (prow, dprow) in p.chunks_exact(s).zip(dp.chunks_exact_mut(s)) {
                            let dot = prow
                                .iter()
                                .zip(dprow.iter())
                                .map(|(&a, &b)| a * b)
                                .sum::<T>();
                            for (x, &pv) in dprow.iter_mut().zip(prow) {
                                *x = pv * (*x - dot) * scale;
                            }
                        }
                        let mut dqh = vec![T::zero(); s * dh];
                        matmul_acc(&dp, &kh, &mut dqh, s, s, dh);
                        let mut dkh = vec![T::zero(); s * dh];
                        matmul_at_b_acc(&dp, &qh, &mut dkh, s, s, dh);
                        scatter_head_cols(&dqh, &mut gq, s, d, h, dh);
                        scatter_head_cols(&dkh, &mut gk, s, d, h, dh);
                        scatter_head_cols(&dvh, &mut gvv, s, d, h, dh);
                    }
                    accumulate(grad_of(&mut grads, *q, qv), &gq);
                    accumulate(grad_of(&mut grads, *k, kv), &gk);
                    accumulate(grad_of(&mut grads, *v, vv), &gvv);
                }
                Op::SelectRow { x, row } => {
                    let d = g.cols();
                    let gx = grad_of(&mut grads, *x, &self.nodes[*x].value).data_mut();
                    for (acc, &v) in gx[row * d..(row + 1) * d].iter_mut().zip(g.data()) {
                        *acc = *acc + v;
                    }
                }
                Op::CrossEntropy {
                    logits,
                    label,
                    probs,
                } => {
                    let dy = g.data()[0];
                    let gl = grad_of(&mut grads, *logits, &self.nodes[*logits].value).data_mut();
                    for (j, (acc, &p)) in gl.iter_mut().zip(probs).enumerate() {
                        let target = if j == *label { T::one() } else { T::zero() };
                        *acc = *acc + dy * (p - target);
                    }
                }
                Op::Scale { x, s } => {
                    let gx = grad_of(&mut grads, *x, &self.nodes[*x].value).data_mut();
                    for (acc, &v) in gx.iter_mut().zip(g.data()) {
                        *acc = *acc + v * *s;
                    }
                }
            }
        }

        for (&p, a) in self.params.iter().zip(acc.iter_mut()) {
            *a = grads[p].take().expect("parameter accumulator");
        }
        Ok(())
    }
}

fn grad_of<'a, T: Real>(
    grads: &'a mut [Option<Tensor<T>>],
    id: usize,
    like: &Tensor<T>,
) -> &'a mut Tensor<T> {
    grads[id].get_or_insert_with(|| Tensor::zeros(like.shape()))
}

fn accumulate<T: Real>(dst: &mut Tensor<T>, src: &[T]) {
    for (a, &b) in dst.data_mut().iter_mut().zip(src) {
        *a = *a + b;
    }
}

fn head_cols<T: Real>(m: &[T], s: usize, d: usize, h: usize, dh: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(s * dh);
    for r in 0..s {
        out.extend_from_slice(&m[r * d + h * dh..r * d + (h + 1) * dh]);
    }
    out
}

fn scatter_head_cols<T: Real>(src: &[T], dst: &mut [T], s: usize, d: usize, h: usize, dh: usize) {
    for r in 0..s {
        dst[r * d + h * dh..r * d + (h + 1) * dh].copy_from_slice(&src[r * dh..(r + 1) * dh]);
    }
}

/// Softmax of `scale * row`, max-subtracted.
fn softmax_in_place<T: Real>(row: &mut [T], scale: T) {
    let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
    let mut sum = T::zero();
    for v in row.iter_mut() {
        *v = ((*v - max) * scale).exp();
        sum = sum + *v;
    }
    let inv = sum.recip();
    for v in row.iter_mut() {
        *v = *v * inv;
    }
}

/// `-log softmax(logits)[label]` with max subtraction.
pub fn cross_entropy_value<T: Real>(logits: &[T], label: usize) -> T {
    let max = logits.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
    let lse = logits.iter().map(|&v| (v - max).exp()).sum::<T>().ln();
    lse - (logits[label] - max)
}

/// Probabilities `softmax(logits)`.
pub fn softmax<T: Real>(logits: &[T]) -> Vec<T> {
    let mut p = logits.to_vec();
    softmax_in_place(&mut p, T::one());
    p
}
