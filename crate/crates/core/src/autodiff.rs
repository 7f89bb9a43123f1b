//! Tape-based reverse-mode differentiation over [`Tensor`] values.
//!
//! A [`Graph`] records each operation as a node whose parents were created
//! before it, so node order is already a topological order. [`Graph::backward`]
//! walks the tape in reverse and accumulates (never overwrites) gradients,
//! which keeps parameter sharing safe.

use std::borrow::Cow;

use crate::error::{Error, Result};
use crate::tensor::{self, ActivationKind, RowStats, Tensor};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    Activation(Var, ActivationKind),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        stats: RowStats,
    },
    Embedding {
        table: Var,
        ids: Vec<usize>,
    },
    CausalAttention {
        q: Var,
        k: Var,
        v: Var,
        shape: AttentionShape,
        probs: Vec<f32>,
    },
    MaskColumns {
        x: Var,
        keep: Vec<bool>,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<Option<usize>>,
        probs: Vec<f32>,
        count: usize,
    },
    Sum(Var),
}

impl Op {
    fn parents(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::MatMul(a, b) | Op::Add(a, b) | Op::Mul(a, b) => vec![*a, *b],
            Op::Activation(x, _) | Op::MaskColumns { x, .. } | Op::Sum(x) => vec![*x],
            Op::LayerNorm { x, gain, bias, .. } => vec![*x, *gain, *bias],
            Op::Embedding { table, .. } => vec![*table],
            Op::CausalAttention { q, k, v, .. } => vec![*q, *k, *v],
            Op::CrossEntropy { logits, .. } => vec![*logits],
        }
    }
}

/// Layout of a packed `[batch*seq, d_model]` activation for attention.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AttentionShape {
    pub batch: usize,
    pub seq: usize,
    pub heads: usize,
}

struct Node<'a> {
    value: Cow<'a, Tensor>,
    op: Op,
    requires_grad: bool,
}

/// Recorded computation. Confined to one thread; values borrowed from
/// the caller (usually model weights) are never copied.
#[derive(Default)]
pub struct Graph<'a> {
    nodes: Vec<Node<'a>>,
    grads: Vec<Option<Tensor>>,
}

impl<'a> Graph<'a> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Cow<'a, Tensor>, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn derived(&mut self, name: &'static str, value: Tensor, op: Op) -> Result<Var> {
        value.ensure_finite(name)?;
        let requires_grad = op.parents().iter().any(|p| self.nodes[p.0].requires_grad);
        Ok(self.push(Cow::Owned(value), op, requires_grad))
    }

    /// Trainable leaf owning its value.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(Cow::Owned(value), Op::Leaf, true)
    }

    /// Trainable leaf borrowing its value.
    pub fn param_ref(&mut self, value: &'a Tensor) -> Var {
        self.push(Cow::Borrowed(value), Op::Leaf, true)
    }

    /// Constant leaf; never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(Cow::Owned(value), Op::Leaf, false)
    }

    pub fn constant_ref(&mut self, value: &'a Tensor) -> Var {
        self.push(Cow::Borrowed(value), Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Accumulated gradient of the last `backward` call, if `v` was reached.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }

    pub fn take_grad(&mut self, v: Var) -> Option<Tensor> {
        self.grads[v.0].take()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = tensor::matmul(self.value(a), self.value(b))?;
        self.derived("matmul", out, Op::MatMul(a, b))
    }

    /// [`matmul`](Self::matmul) with `f64` accumulation in the forward pass.
    pub fn matmul_wide(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = tensor::matmul_wide(self.value(a), self.value(b))?;
        self.derived("matmul", out, Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::Dimension(format!(
                "add of {:?} and {:?}",
                ta.shape(),
                tb.shape()
            )));
        }
        let mut out = ta.clone();
        out.add_assign(tb);
        self.derived("add", out, Op::Add(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::Dimension(format!(
                "mul of {:?} and {:?}",
                ta.shape(),
                tb.shape()
            )));
        }
        let mut out = ta.clone();
        for (o, &y) in out.data_mut().iter_mut().zip(tb.data()) {
            *o *= y;
        }
        self.derived("mul", out, Op::Mul(a, b))
    }

    pub fn activation(&mut self, x: Var, kind: ActivationKind) -> Result<Var> {
        let mut out = self.value(x).clone();
        for o in out.data_mut() {
            *o = kind.apply(*o);
        }
        self.derived("activation", out, Op::Activation(x, kind))
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let (out, stats) = tensor::layer_norm(self.value(x), self.value(gain), self.value(bias))?;
        self.derived(
            "layer_norm",
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                stats,
            },
        )
    }

    /// Gathers rows of a `[vocab×d]` table.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let t = self.value(table);
        let (rows, d) = t.dims2()?;
        let mut data = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= rows {
                return Err(Error::Input(format!("row id {id} outside table of {rows}")));
            }
            data.extend_from_slice(t.row(id));
        }
        let out = Tensor::new(vec![ids.len(), d], data)?;
        self.derived(
            "embedding",
            out,
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
        )
    }

    /// Multi-head causal self-attention over packed `[batch*seq, d]` inputs.
    pub fn causal_attention(&mut self, q: Var, k: Var, v: Var, shape: AttentionShape) -> Result<Var> {
        let (rows, d) = self.value(q).dims2()?;
        for other in [k, v] {
            if self.value(other).shape() != [rows, d] {
                return Err(Error::Dimension("attention q/k/v shapes differ".into()));
            }
        }
        if rows != shape.batch * shape.seq || shape.heads == 0 || d % shape.heads != 0 {
            return Err(Error::Dimension(format!(
                "attention layout {shape:?} incompatible with [{rows}x{d}]"
            )));
        }
        let (out, probs) = attention_forward(
            self.value(q).data(),
            self.value(k).data(),
            self.value(v).data(),
            d,
            shape,
        );
        let out = Tensor::new(vec![rows, d], out)?;
        self.derived(
            "causal_attention",
            out,
            Op::CausalAttention {
                q,
                k,
                v,
                shape,
                probs,
            },
        )
    }

    /// Multiplies every row by a 0/1 column selector (`keep[j] == false`
    /// zeroes column `j`).
    pub fn mask_columns(&mut self, x: Var, keep: &[bool]) -> Result<Var> {
        let t = self.value(x);
        let c = t.last_dim();
        if keep.len() != c {
            return Err(Error::Dimension(format!(
                "column mask of {} for rows of {c}",
                keep.len()
            )));
        }
        let mut out = t.clone();
        for (i, o) in out.data_mut().iter_mut().enumerate() {
            if !keep[i % c] {
                *o = 0.0;
            }
        }
        self.derived(
            "mask_columns",
            out,
            Op::MaskColumns {
                x,
                keep: keep.to_vec(),
            },
        )
    }

    /// Mean next-token cross entropy over rows whose target is `Some`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[Option<usize>]) -> Result<Var> {
        let t = self.value(logits);
        let (rows, vocab) = t.dims2()?;
        if targets.len() != rows {
            return Err(Error::Dimension(format!(
                "{} targets for {rows} logit rows",
                targets.len()
            )));
        }
        let mut probs = vec![0.0f32; rows * vocab];
        let mut total = 0.0f64;
        let mut count = 0usize;
        for (i, target) in targets.iter().enumerate() {
            let Some(target) = *target else { continue };
            if target >= vocab {
                return Err(Error::Input(format!("target {target} outside vocabulary {vocab}")));
            }
            let logp = tensor::log_softmax(t.row(i));
            total -= logp[target];
            for (p, lp) in probs[i * vocab..(i + 1) * vocab].iter_mut().zip(&logp) {
                *p = lp.exp() as f32;
            }
            count += 1;
        }
        if count == 0 {
            return Err(Error::Usage("cross entropy with no targets".into()));
        }
        let out = Tensor::vector(vec![(total / count as f64) as f32]);
        self.derived(
            "cross_entropy",
            out,
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
                count,
            },
        )
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().map(|&v| f64::from(v)).sum::<f64>();
        self.derived("sum", Tensor::vector(vec![s as f32]), Op::Sum(x))
    }

    /// Back-propagates from a scalar node. Gradients accumulate into every
    /// node that requires one and is reachable from `loss`.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(Error::Usage(format!(
                "backward from non-scalar node of shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut seed = Tensor::filled(self.value(loss).shape(), 1.0);
        if let Some(existing) = self.grads[loss.0].take() {
            seed.add_assign(&existing);
        }
        self.grads[loss.0] = Some(seed);

        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(upstream) = self.grads[i].take() else {
                continue;
            };
            let contributions = self.local_grads(i, &upstream)?;
            self.grads[i] = Some(upstream);
            for (parent, g) in contributions {
                if !self.nodes[parent.0].requires_grad {
                    continue;
                }
                g.ensure_finite("backward")?;
                match &mut self.grads[parent.0] {
                    Some(acc) => acc.add_assign(&g),
                    slot @ None => *slot = Some(g),
                }
            }
        }
        Ok(())
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn local_grads(&self, i: usize, up: &Tensor) -> Result<Vec<(Var, Tensor)>> {
        let node = &self.nodes[i];
        let mut out = Vec::new();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                if self.needs(*a) {
                    let (d, r, c) = tensor::matmul_raw(up.data(), up.dims2()?, false, tb.data(), tb.dims2()?, true)?;
                    out.push((*a, Tensor::new(vec![r, c], d)?));
                }
                if self.needs(*b) {
                    let (d, r, c) = tensor::matmul_raw(ta.data(), ta.dims2()?, true, up.data(), up.dims2()?, false)?;
                    out.push((*b, Tensor::new(vec![r, c], d)?));
                }
            }
            Op::Add(a, b) => {
                out.push((*a, up.clone()));
                out.push((*b, up.clone()));
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                if self.needs(*a) {
                    let mut g = up.clone();
                    g.data_mut().iter_mut().zip(tb.data()).for_each(|(g, &y)| *g *= y);
                    out.push((*a, g));
                }
                if self.needs(*b) {
                    let mut g = up.clone();
                    g.data_mut().iter_mut().zip(ta.data()).for_each(|(g, &x)| *g *= x);
                    out.push((*b, g));
                }
            }
            Op::Activation(x, kind) => {
                let mut g = up.clone();
                for (g, &xv) in g.data_mut().iter_mut().zip(self.value(*x).data()) {
                    *g *= kind.derivative(xv);
                }
                out.push((*x, g));
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                stats,
            } => {
                let tx = self.value(*x);
                let tg = self.value(*gain);
                let c = tx.last_dim();
                let rows = tx.len() / c;
                let mut dx = Tensor::zeros(tx.shape());
                let mut dgain = vec![0.0f64; c];
                let mut dbias = vec![0.0f64; c];
                let mut xhat = vec![0.0f64; c];
                let mut dxhat = vec![0.0f64; c];
                for r in 0..rows {
                    let (mean, rstd) = (stats.mean[r], stats.rstd[r]);
                    let xr = tx.row(r);
                    let ur = up.row(r);
                    let mut mean_d = 0.0;
                    let mut mean_dx = 0.0;
                    for j in 0..c {
                        xhat[j] = (f64::from(xr[j]) - mean) * rstd;
                        let u = f64::from(ur[j]);
                        dgain[j] += u * xhat[j];
                        dbias[j] += u;
                        dxhat[j] = u * f64::from(tg.data()[j]);
                        mean_d += dxhat[j];
                        mean_dx += dxhat[j] * xhat[j];
                    }
                    mean_d /= c as f64;
                    mean_dx /= c as f64;
                    let o = dx.row_mut(r);
                    for j in 0..c {
                        o[j] = (rstd * (dxhat[j] - mean_d - xhat[j] * mean_dx)) as f32;
                    }
                }
                out.push((*x, dx));
                let to_tensor = |v: Vec<f64>, like: &Tensor| {
                    Tensor::new(like.shape().to_vec(), v.into_iter().map(|x| x as f32).collect())
                };
                out.push((*gain, to_tensor(dgain, tg)?));
                out.push((*bias, to_tensor(dbias, self.value(*bias))?));
            }
            Op::Embedding { table, ids } => {
                let tt = self.value(*table);
                let mut g = Tensor::zeros(tt.shape());
                for (r, &id) in ids.iter().enumerate() {
                    for (gv, &uv) in g.row_mut(id).iter_mut().zip(up.row(r)) {
                        *gv += uv;
                    }
                }
                out.push((*table, g));
            }
            Op::CausalAttention {
                q,
                k,
                v,
                shape,
                probs,
            } => {
                let (tq, tk, tv) = (self.value(*q), self.value(*k), self.value(*v));
                let d = tq.last_dim();
                let (dq, dk, dv) = attention_backward(tq.data(), tk.data(), tv.data(), up.data(), probs, d, *shape);
                out.push((*q, Tensor::new(tq.shape().to_vec(), dq)?));
                out.push((*k, Tensor::new(tk.shape().to_vec(), dk)?));
                out.push((*v, Tensor::new(tv.shape().to_vec(), dv)?));
            }
            Op::MaskColumns { x, keep } => {
                let mut g = up.clone();
                let c = keep.len();
                for (idx, gv) in g.data_mut().iter_mut().enumerate() {
                    if !keep[idx % c] {
                        *gv = 0.0;
                    }
                }
                out.push((*x, g));
            }
            Op::CrossEntropy {
                logits,
                targets,
                probs,
                count,
            } => {
                let tl = self.value(*logits);
                let vocab = tl.last_dim();
                let scale = f64::from(up.data()[0]) / *count as f64;
                let mut g = Tensor::zeros(tl.shape());
                for (r, target) in targets.iter().enumerate() {
                    let Some(target) = *target else { continue };
                    let row = g.row_mut(r);
                    for j in 0..vocab {
                        let mut p = f64::from(probs[r * vocab + j]);
                        if j == target {
                            p -= 1.0;
                        }
                        row[j] = (p * scale) as f32;
                    }
                }
                out.push((*logits, g));
            }
            Op::Sum(x) => {
                out.push((*x, Tensor::filled(self.value(*x).shape(), up.data()[0])));
            }
        }
        Ok(out)
    }
}

/// `C = alpha·A·B + beta·C` on strided `f64` blocks.
#[allow(clippy::too_many_arguments)]
fn gemm(
    (m, k, n): (usize, usize, usize),
    alpha: f64,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
    (rsc, csc): (usize, usize),
) {
    let last = |rows: usize, cols: usize, rs: usize, cs: usize| (rows - 1) * rs + (cols - 1) * cs;
    assert!(last(m, k, rsa, csa) < a.len() && last(k, n, rsb, csb) < b.len() && last(m, n, rsc, csc) < c.len());
    // SAFETY: the assertion above keeps every strided access in bounds.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            csc as isize,
        );
    }
}

fn widen(x: &[f32]) -> Vec<f64> {
    x.iter().map(|&v| f64::from(v)).collect()
}

fn narrow(x: Vec<f64>) -> Vec<f32> {
    x.into_iter().map(|v| v as f32).collect()
}

fn attention_forward(q: &[f32], k: &[f32], v: &[f32], d: usize, s: AttentionShape) -> (Vec<f32>, Vec<f32>) {
    let dh = d / s.heads;
    let t = s.seq;
    let scale = 1.0 / (dh as f64).sqrt();
    let (q, k, v) = (widen(q), widen(k), widen(v));
    let mut out = vec![0.0f64; s.batch * t * d];
    let mut probs = vec![0.0f32; s.batch * s.heads * t * t];
    let mut scores = vec![0.0f64; t * t];
    for b in 0..s.batch {
        for h in 0..s.heads {
            let base = b * t * d + h * dh;
            // scores = scale · Q_h K_hᵀ
            gemm((t, dh, t), scale, &q[base..], (d, 1), &k[base..], (1, d), 0.0, &mut scores, (t, 1));
            for i in 0..t {
                let row = &mut scores[i * t..(i + 1) * t];
                let max = row[..=i].iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let mut z = 0.0;
                for sj in &mut row[..=i] {
                    *sj = (*sj - max).exp();
                    z += *sj;
                }
                for sj in &mut row[..=i] {
                    *sj /= z;
                }
                row[i + 1..].iter_mut().for_each(|x| *x = 0.0);
            }
            let pbase = (b * s.heads + h) * t * t;
            for (p, &x) in probs[pbase..pbase + t * t].iter_mut().zip(&scores) {
                *p = x as f32;
            }
            gemm((t, t, dh), 1.0, &scores, (t, 1), &v[base..], (d, 1), 0.0, &mut out[base..], (d, 1));
        }
    }
    (narrow(out), probs)
}

#[allow(clippy::too_many_arguments)]
fn attention_backward(
    q: &[f32],
    k: &[f32],
    v: &[f32],
    up: &[f32],
    probs: &[f32],
    d: usize,
    s: AttentionShape,
) -> (Vec<f32>, Vec<f32>, Vec<f32>) {
    let dh = d / s.heads;
    let t = s.seq;
    let scale = 1.0 / (dh as f64).sqrt();
    let (q, k, v, up) = (widen(q), widen(k), widen(v), widen(up));
    let n = s.batch * t * d;
    let mut dq = vec![0.0f64; n];
    let mut dk = vec![0.0f64; n];
    let mut dv = vec![0.0f64; n];
    let mut p = vec![0.0f64; t * t];
    let mut dp = vec![0.0f64; t * t];
    for b in 0..s.batch {
        for h in 0..s.heads {
            let base = b * t * d + h * dh;
            let pbase = (b * s.heads + h) * t * t;
            for (x, &y) in p.iter_mut().zip(&probs[pbase..pbase + t * t]) {
                *x = f64::from(y);
            }
            // dV = Pᵀ·dO, dP = dO·Vᵀ
            gemm((t, t, dh), 1.0, &p, (1, t), &up[base..], (d, 1), 0.0, &mut dv[base..], (d, 1));
            gemm((t, dh, t), 1.0, &up[base..], (d, 1), &v[base..], (1, d), 0.0, &mut dp, (t, 1));
            // dS = P ∘ (dP − rowsum(P ∘ dP)) · scale, stored in dp
            for i in 0..t {
                let pr = &p[i * t..(i + 1) * t];
                let dr = &mut dp[i * t..(i + 1) * t];
                let weighted: f64 = pr[..=i].iter().zip(&dr[..=i]).map(|(a, b)| a * b).sum();
                for j in 0..t {
                    dr[j] = if j <= i { pr[j] * (dr[j] - weighted) * scale } else { 0.0 };
                }
            }
            // dQ = dS·K, dK = dSᵀ·Q
            gemm((t, t, dh), 1.0, &dp, (t, 1), &k[base..], (d, 1), 0.0, &mut dq[base..], (d, 1));
            gemm((t, t, dh), 1.0, &dp, (1, t), &q[base..], (d, 1), 0.0, &mut dk[base..], (d, 1));
        }
    }
    (narrow(dq), narrow(dk), narrow(dv))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_gradient_is_ones() {
        let mut g = Graph::new();
        let w = g.param(Tensor::from_rows(&[vec![1.0, -2.0, 3.0], vec![0.5, 0.0, 9.0]]));
        let s = g.sum(w).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(w).unwrap(), &Tensor::filled(&[2, 3], 1.0));
        assert_eq!(g.grad(s).unwrap().data(), &[1.0]);
    }

    #[test]
    fn square_gradient() {
        let mut g = Graph::new();
        let w = g.param(Tensor::vector(vec![1.0, 2.0]));
        let sq = g.mul(w, w).unwrap();
        let s = g.sum(sq).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(w).unwrap().data(), &[2.0, 4.0]);
    }

    #[test]
    fn backward_requires_scalar() {
        let mut g = Graph::new();
        let w = g.param(Tensor::vector(vec![1.0, 2.0]));
        let y = g.mul(w, w).unwrap();
        assert!(matches!(g.backward(y), Err(Error::Usage(_))));
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut g = Graph::new();
        let c = g.constant(Tensor::vector(vec![3.0]));
        let w = g.param(Tensor::vector(vec![2.0]));
        let y = g.mul(c, w).unwrap();
        let s = g.sum(y).unwrap();
        g.backward(s).unwrap();
        assert!(g.grad(c).is_none());
        assert_eq!(g.grad(w).unwrap().data(), &[3.0]);
    }

    #[test]
    fn overflow_is_reported() {
        let mut g = Graph::new();
        let w = g.param(Tensor::vector(vec![3e38]));
        let y = g.add(w, w);
        assert!(matches!(y, Err(Error::NonFinite("add"))));
    }

    #[test]
    fn attention_first_position_copies_value() {
        let mut g = Graph::new();
        let q = g.constant(Tensor::from_rows(&[vec![1.0, 2.0], vec![0.3, -1.0]]));
        let k = g.constant(Tensor::from_rows(&[vec![0.5, 0.1], vec![2.0, 2.0]]));
        let v = g.constant(Tensor::from_rows(&[vec![7.0, -3.0], vec![1.0, 1.0]]));
        let shape = AttentionShape {
            batch: 1,
            seq: 2,
            heads: 1,
        };
        let o = g.causal_attention(q, k, v, shape).unwrap();
        assert_eq!(g.value(o).row(0), &[7.0, -3.0]);
    }
}
