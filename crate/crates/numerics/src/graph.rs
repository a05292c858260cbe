//! Tape of recorded operations and its reverse replay.
//!
//! A [`Graph`] is built fresh for every batch: each operator call evaluates
//! eagerly, appends a node holding its value, and returns a [`Var`] handle.
//! Nodes are appended in evaluation order, so replaying the tape backwards
//! is already a valid reverse topological order.

use crate::error::{NumericsError, Result};
use crate::kernels::{gemm_nn, gemm_nt, gemm_tn, permute};
use crate::optim::{ParamId, ParamStore};
use crate::tensor::{Real, Tensor};

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Param(ParamId),
    MatMul { a: Var, b: Var },
    BatchMatMul { a: Var, b: Var, trans_b: bool },
    AddBroadcast { x: Var, y: Var },
    Add { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Scale { x: Var, factor: T },
    Relu { x: Var },
    Sigmoid { x: Var },
    Softmax { x: Var },
    LayerNorm { x: Var, gain: Var, bias: Var },
    Concat { a: Var, b: Var },
    Reshape { x: Var },
    Permute { x: Var, axes: Vec<usize> },
    SelectRows { x: Var, rows: Vec<usize> },
    Sum { x: Var },
    Mean { x: Var },
    BceLlr { llr: Var, labels: Vec<T> },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
    /// Op-specific forward intermediates needed by the backward rule.
    saved: Vec<T>,
}

#[derive(Debug, Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

/// Result of [`Graph::backward`]: one gradient buffer per recorded node.
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
    numels: Vec<usize>,
}

impl<T: Real> Gradients<T> {
    /// Gradient of the loss with respect to `v`; zeros if `v` was not reached.
    pub fn of(&self, v: Var) -> Vec<T> {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => vec![T::zero(); self.numels[v.0]],
        }
    }

    pub fn reached(&self, v: Var) -> bool {
        self.grads[v.0].is_some()
    }
}

fn accumulate<T: Real>(slot: &mut Option<Vec<T>>, numel: usize, f: impl FnOnce(&mut [T])) {
    let buf = slot.get_or_insert_with(|| vec![T::zero(); numel]);
    f(buf);
}

fn add_into<T: Real>(slot: &mut Option<Vec<T>>, g: &[T]) {
    match slot {
        Some(buf) => buf.iter_mut().zip(g).for_each(|(a, &b)| *a = *a + b),
        None => *slot = Some(g.to_vec()),
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(
        &mut self,
        op_name: &'static str,
        value: Tensor<T>,
        op: Op<T>,
        needs_grad: bool,
        saved: Vec<T>,
    ) -> Result<Var> {
        if !value.all_finite() {
            return Err(NumericsError::NonFinite { op: op_name });
        }
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
            saved,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Records an input. Gradients flow to it iff `tensor.requires_grad()`.
    pub fn leaf(&mut self, tensor: Tensor<T>) -> Result<Var> {
        let needs = tensor.requires_grad();
        self.push("leaf", tensor, Op::Leaf, needs, Vec::new())
    }

    /// Records a snapshot of a stored parameter.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Result<Var> {
        let t = store.get(id).tensor.clone();
        self.push("param", t, Op::Param(id), true, Vec::new())
    }

    /// Binds every parameter of `store`, indexed by [`ParamId::index`].
    pub fn bind_all(&mut self, store: &ParamStore<T>) -> Result<Vec<Var>> {
        store.ids().map(|id| self.param(store, id)).collect()
    }

    /// `a[..., M, K] · b[K, N]`, batched over the leading axes of `a`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() < 2 || sb.len() != 2 || sa[sa.len() - 1] != sb[0] {
            return Err(NumericsError::shape("matmul", format!("{sa:?} · {sb:?}")));
        }
        let (k, n) = (sb[0], sb[1]);
        let rows = self.value(a).numel() / k;
        let mut out = vec![T::zero(); rows * n];
        gemm_nn(self.value(a).data(), self.value(b).data(), &mut out, rows, k, n);
        let mut shape = sa.clone();
        *shape.last_mut().unwrap() = n;
        let needs = self.needs(a) || self.needs(b);
        self.push(
            "matmul",
            Tensor::new(shape, out)?,
            Op::MatMul { a, b },
            needs,
            Vec::new(),
        )
    }

    /// `a[B, M, K] · b[B, K, N]`, or `a · bᵀ` per batch with `b[B, N, K]`
    /// when `trans_b` is set.
    pub fn bmm(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let bad = || NumericsError::shape("bmm", format!("{sa:?} · {sb:?} (trans_b={trans_b})"));
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] {
            return Err(bad());
        }
        let (batch, m, k) = (sa[0], sa[1], sa[2]);
        let n = if trans_b {
            if sb[2] != k {
                return Err(bad());
            }
            sb[1]
        } else {
            if sb[1] != k {
                return Err(bad());
            }
            sb[2]
        };
        let mut out = vec![T::zero(); batch * m * n];
        {
            let (ad, bd) = (self.value(a).data(), self.value(b).data());
            for bi in 0..batch {
                let ab = &ad[bi * m * k..(bi + 1) * m * k];
                let bb = &bd[bi * k * n..(bi + 1) * k * n];
                let cb = &mut out[bi * m * n..(bi + 1) * m * n];
                if trans_b {
                    gemm_nt(ab, bb, cb, m, k, n);
                } else {
                    gemm_nn(ab, bb, cb, m, k, n);
                }
            }
        }
        let needs = self.needs(a) || self.needs(b);
        self.push(
            "bmm",
            Tensor::new(vec![batch, m, n], out)?,
            Op::BatchMatMul { a, b, trans_b },
            needs,
            Vec::new(),
        )
    }

    /// `x + y` where `y`'s shape is a trailing suffix of `x`'s (bias add,
    /// positional tables shared over a batch).
    pub fn add_broadcast(&mut self, x: Var, y: Var) -> Result<Var> {
        let (sx, sy) = (self.shape(x).to_vec(), self.shape(y).to_vec());
        if sy.len() > sx.len() || sx[sx.len() - sy.len()..] != sy[..] {
            return Err(NumericsError::shape("add_broadcast", format!("{sx:?} + {sy:?}")));
        }
        let yd = self.value(y).data();
        let period = yd.len();
        let out: Vec<T> = self
            .value(x)
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| v + yd[i % period])
            .collect();
        let needs = self.needs(x) || self.needs(y);
        self.push(
            "add_broadcast",
            Tensor::new(sx, out)?,
            Op::AddBroadcast { x, y },
            needs,
            Vec::new(),
        )
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<Vec<usize>> {
        if self.shape(a) != self.shape(b) {
            return Err(NumericsError::shape(
                op,
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        Ok(self.shape(a).to_vec())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let shape = self.same_shape("add", a, b)?;
        let out = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x + y)
            .collect();
        let needs = self.needs(a) || self.needs(b);
        self.push("add", Tensor::new(shape, out)?, Op::Add { a, b }, needs, Vec::new())
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let shape = self.same_shape("mul", a, b)?;
        let out = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x * y)
            .collect();
        let needs = self.needs(a) || self.needs(b);
        self.push("mul", Tensor::new(shape, out)?, Op::Mul { a, b }, needs, Vec::new())
    }

    pub fn scale(&mut self, x: Var, factor: T) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let out = self.value(x).data().iter().map(|&v| v * factor).collect();
        let needs = self.needs(x);
        self.push(
            "scale",
            Tensor::new(shape, out)?,
            Op::Scale { x, factor },
            needs,
            Vec::new(),
        )
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let out = self
            .value(x)
            .data()
            .iter()
            .map(|&v| if v > T::zero() { v } else { T::zero() })
            .collect();
        let needs = self.needs(x);
        self.push("relu", Tensor::new(shape, out)?, Op::Relu { x }, needs, Vec::new())
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let out = self.value(x).data().iter().map(|&v| sigmoid(v)).collect();
        let needs = self.needs(x);
        self.push(
            "sigmoid",
            Tensor::new(shape, out)?,
            Op::Sigmoid { x },
            needs,
            Vec::new(),
        )
    }

    /// Softmax over the last axis, stabilized by subtracting the row max.
    pub fn softmax_lastaxis(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let cols = *shape.last().unwrap();
        let mut out = self.value(x).data().to_vec();
        for row in out.chunks_mut(cols) {
            let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
            let mut total = T::zero();
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                total = total + *v;
            }
            let inv = total.recip();
            row.iter_mut().for_each(|v| *v = *v * inv);
        }
        let needs = self.needs(x);
        self.push(
            "softmax",
            Tensor::new(shape, out)?,
            Op::Softmax { x },
            needs,
            Vec::new(),
        )
    }

    /// Per-row normalization over the last axis followed by `gain`/`bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: T) -> Result<Var> {
        if eps <= T::zero() {
            return Err(NumericsError::contract("layer_norm", "eps must be positive"));
        }
        let shape = self.shape(x).to_vec();
        let cols = *shape.last().unwrap();
        if self.shape(gain) != [cols] || self.shape(bias) != [cols] {
            return Err(NumericsError::shape(
                "layer_norm",
                format!(
                    "input {shape:?} with gain {:?} and bias {:?}",
                    self.shape(gain),
                    self.shape(bias)
                ),
            ));
        }
        let xd = self.value(x).data();
        let (gd, bd) = (self.value(gain).data(), self.value(bias).data());
        let rows = xd.len() / cols;
        let n = T::from_usize(cols).unwrap();
        let mut out = vec![T::zero(); xd.len()];
        // saved layout: xhat (rows*cols), then rstd (rows)
        let mut saved = vec![T::zero(); xd.len() + rows];
        for r in 0..rows {
            let row = &xd[r * cols..(r + 1) * cols];
            let mean = row.iter().copied().sum::<T>() / n;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
            let rstd = (var + eps).sqrt().recip();
            for c in 0..cols {
                let xhat = (row[c] - mean) * rstd;
                saved[r * cols + c] = xhat;
                out[r * cols + c] = xhat * gd[c] + bd[c];
            }
            saved[xd.len() + r] = rstd;
        }
        let needs = self.needs(x) || self.needs(gain) || self.needs(bias);
        self.push(
            "layer_norm",
            Tensor::new(shape, out)?,
            Op::LayerNorm { x, gain, bias },
            needs,
            saved,
        )
    }

    /// Concatenation along the last axis; leading axes must agree.
    pub fn concat_lastaxis(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != sb.len() || sa[..sa.len() - 1] != sb[..sb.len() - 1] {
            return Err(NumericsError::shape("concat_lastaxis", format!("{sa:?} ++ {sb:?}")));
        }
        let (ca, cb) = (sa[sa.len() - 1], sb[sb.len() - 1]);
        let (ad, bd) = (self.value(a).data(), self.value(b).data());
        let rows = ad.len() / ca;
        let mut out = Vec::with_capacity(ad.len() + bd.len());
        for r in 0..rows {
            out.extend_from_slice(&ad[r * ca..(r + 1) * ca]);
            out.extend_from_slice(&bd[r * cb..(r + 1) * cb]);
        }
        let mut shape = sa;
        *shape.last_mut().unwrap() = ca + cb;
        let needs = self.needs(a) || self.needs(b);
        self.push(
            "concat_lastaxis",
            Tensor::new(shape, out)?,
            Op::Concat { a, b },
            needs,
            Vec::new(),
        )
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x).reshaped(shape)?;
        let needs = self.needs(x);
        self.push("reshape", t, Op::Reshape { x }, needs, Vec::new())
    }

    /// Output axis `d` is input axis `axes[d]`.
    pub fn permute(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let mut seen = vec![false; shape.len()];
        if axes.len() != shape.len()
            || axes
                .iter()
                .any(|&a| a >= shape.len() || std::mem::replace(&mut seen[a], true))
        {
            return Err(NumericsError::shape(
                "permute",
                format!("axes {axes:?} for shape {shape:?}"),
            ));
        }
        let (out, out_shape) = permute(self.value(x).data(), &shape, axes);
        let needs = self.needs(x);
        self.push(
            "permute",
            Tensor::new(out_shape, out)?,
            Op::Permute { x, axes: axes.to_vec() },
            needs,
            Vec::new(),
        )
    }

    /// Swaps the last two axes.
    pub fn transpose_last2(&mut self, x: Var) -> Result<Var> {
        let rank = self.shape(x).len();
        if rank < 2 {
            return Err(NumericsError::shape("transpose", "rank must be at least 2"));
        }
        let mut axes: Vec<usize> = (0..rank).collect();
        axes.swap(rank - 2, rank - 1);
        self.permute(x, &axes)
    }

    /// Picks rows along axis 1 of a rank-3 tensor: `[B, T, C] -> [B, rows.len(), C]`.
    pub fn select_rows(&mut self, x: Var, rows: &[usize]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() != 3 || rows.is_empty() || rows.iter().any(|&r| r >= shape[1]) {
            return Err(NumericsError::shape(
                "select_rows",
                format!("{} rows from {shape:?}", rows.len()),
            ));
        }
        let (b, t, c) = (shape[0], shape[1], shape[2]);
        let xd = self.value(x).data();
        let mut out = Vec::with_capacity(b * rows.len() * c);
        for bi in 0..b {
            for &r in rows {
                let start = (bi * t + r) * c;
                out.extend_from_slice(&xd[start..start + c]);
            }
        }
        let needs = self.needs(x);
        self.push(
            "select_rows",
            Tensor::new(vec![b, rows.len(), c], out)?,
            Op::SelectRows { x, rows: rows.to_vec() },
            needs,
            Vec::new(),
        )
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().copied().sum::<T>();
        let needs = self.needs(x);
        self.push("sum", Tensor::scalar(s), Op::Sum { x }, needs, Vec::new())
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let d = self.value(x).data();
        let s = d.iter().copied().sum::<T>() / T::from_usize(d.len()).unwrap();
        let needs = self.needs(x);
        self.push("mean", Tensor::scalar(s), Op::Mean { x }, needs, Vec::new())
    }

    /// Mean bit-wise binary cross-entropy between LLRs and 0/1 labels.
    ///
    /// LLRs follow `log P(bit=0)/P(bit=1)`, so the probability of a one is
    /// `sigmoid(-llr)` and the per-bit loss reduces to
    /// `softplus(llr) - (1 - label) * llr`.
    pub fn bce_llr(&mut self, llr: Var, labels: &[T]) -> Result<Var> {
        let d = self.value(llr).data();
        if d.len() != labels.len() {
            return Err(NumericsError::shape(
                "bce_llr",
                format!("{} LLRs vs {} labels", d.len(), labels.len()),
            ));
        }
        let mut total = T::zero();
        for (&l, &y) in d.iter().zip(labels) {
            total = total + softplus(l) - (T::one() - y) * l;
        }
        let loss = total / T::from_usize(d.len()).unwrap();
        let needs = self.needs(llr);
        self.push(
            "bce_llr",
            Tensor::scalar(loss),
            Op::BceLlr {
                llr,
                labels: labels.to_vec(),
            },
            needs,
            Vec::new(),
        )
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let loss_val = self.value(loss);
        if loss_val.numel() != 1 {
            return Err(NumericsError::NonScalarLoss(loss_val.shape().to_vec()));
        }
        let numels: Vec<usize> = self.nodes.iter().map(|n| n.value.numel()).collect();
        let mut grads: Vec<Option<Vec<T>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![T::one()]);

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(gout) = grads[i].take() else { continue };
            self.backward_node(node, &gout, &mut grads, &numels);
            grads[i] = Some(gout);
        }
        Ok(Gradients { grads, numels })
    }

    fn backward_node(&self, node: &Node<T>, gout: &[T], grads: &mut [Option<Vec<T>>], numels: &[usize]) {
        match &node.op {
            Op::Leaf | Op::Param(_) => {}
            Op::MatMul { a, b } => {
                let sb = self.shape(*b);
                let (k, n) = (sb[0], sb[1]);
                let rows = numels[a.0] / k;
                if self.needs(*a) {
                    let bd = self.value(*b).data();
                    accumulate(&mut grads[a.0], numels[a.0], |ga| gemm_nt(gout, bd, ga, rows, n, k));
                }
                if self.needs(*b) {
                    let ad = self.value(*a).data();
                    accumulate(&mut grads[b.0], numels[b.0], |gb| gemm_tn(ad, gout, gb, k, rows, n));
                }
            }
            Op::BatchMatMul { a, b, trans_b } => {
                let sa = self.shape(*a);
                let (batch, m, k) = (sa[0], sa[1], sa[2]);
                let n = node.value.shape()[2];
                let (ad, bd) = (self.value(*a).data(), self.value(*b).data());
                if self.needs(*a) {
                    accumulate(&mut grads[a.0], numels[a.0], |ga| {
                        for bi in 0..batch {
                            let g = &gout[bi * m * n..(bi + 1) * m * n];
                            let bb = &bd[bi * k * n..(bi + 1) * k * n];
                            let dst = &mut ga[bi * m * k..(bi + 1) * m * k];
                            if *trans_b {
                                gemm_nn(g, bb, dst, m, n, k);
                            } else {
                                gemm_nt(g, bb, dst, m, n, k);
                            }
                        }
                    });
                }
                if self.needs(*b) {
                    accumulate(&mut grads[b.0], numels[b.0], |gb| {
                        for bi in 0..batch {
                            let g = &gout[bi * m * n..(bi + 1) * m * n];
                            let ab = &ad[bi * m * k..(bi + 1) * m * k];
                            let dst = &mut gb[bi * k * n..(bi + 1) * k * n];
                            if *trans_b {
                                gemm_tn(g, ab, dst, n, m, k);
                            } else {
                                gemm_tn(ab, g, dst, k, m, n);
                            }
                        }
                    });
                }
            }
            Op::AddBroadcast { x, y } => {
                if self.needs(*x) {
                    add_into(&mut grads[x.0], gout);
                }
                if self.needs(*y) {
                    let period = numels[y.0];
                    accumulate(&mut grads[y.0], period, |gy| {
                        for chunk in gout.chunks(period) {
                            gy.iter_mut().zip(chunk).for_each(|(a, &b)| *a = *a + b);
                        }
                    });
                }
            }
            Op::Add { a, b } => {
                if self.needs(*a) {
                    add_into(&mut grads[a.0], gout);
                }
                if self.needs(*b) {
                    add_into(&mut grads[b.0], gout);
                }
            }
            Op::Mul { a, b } => {
                let (ad, bd) = (self.value(*a).data(), self.value(*b).data());
                if self.needs(*a) {
                    accumulate(&mut grads[a.0], numels[a.0], |ga| {
                        for ((g, &o), &y) in ga.iter_mut().zip(gout).zip(bd) {
                            *g = *g + o * y;
                        }
                    });
                }
                if self.needs(*b) {
                    accumulate(&mut grads[b.0], numels[b.0], |gb| {
                        for ((g, &o), &x) in gb.iter_mut().zip(gout).zip(ad) {
                            *g = *g + o * x;
                        }
                    });
                }
            }
            Op::Scale { x, factor } => {
                accumulate(&mut grads[x.0], numels[x.0], |gx| {
                    gx.iter_mut().zip(gout).for_each(|(g, &o)| *g = *g + o * *factor);
                });
            }
            Op::Relu { x } => {
                let out = node.value.data();
                accumulate(&mut grads[x.0], numels[x.0], |gx| {
                    for ((g, &o), &y) in gx.iter_mut().zip(gout).zip(out) {
                        if y > T::zero() {
                            *g = *g + o;
                        }
                    }
                });
            }
            Op::Sigmoid { x } => {
                let out = node.value.data();
                accumulate(&mut grads[x.0], numels[x.0], |gx| {
                    for ((g, &o), &s) in gx.iter_mut().zip(gout).zip(out) {
                        *g = *g + o * s * (T::one() - s);
                    }
                });
            }
            Op::Softmax { x } => {
                let out = node.value.data();
                let cols = *node.value.shape().last().unwrap();
                accumulate(&mut grads[x.0], numels[x.0], |gx| {
                    for ((g, o), s) in gx.chunks_mut(cols).zip(gout.chunks(cols)).zip(out.chunks(cols)) {
                        let dot = o.iter().zip(s).map(|(&a, &b)| a * b).sum::<T>();
                        for c in 0..cols {
                            g[c] = g[c] + s[c] * (o[c] - dot);
                        }
                    }
                });
            }
            Op::LayerNorm { x, gain, bias } => {
                let cols = *node.value.shape().last().unwrap();
                let total = numels[x.0];
                let rows = total / cols;
                let (xhat, rstd) = node.saved.split_at(total);
                let gd = self.value(*gain).data();
                if self.needs(*gain) {
                    accumulate(&mut grads[gain.0], cols, |gg| {
                        for (o, xh) in gout.chunks(cols).zip(xhat.chunks(cols)) {
                            for c in 0..cols {
                                gg[c] = gg[c] + o[c] * xh[c];
                            }
                        }
                    });
                }
                if self.needs(*bias) {
                    accumulate(&mut grads[bias.0], cols, |gb| {
                        for o in gout.chunks(cols) {
                            gb.iter_mut().zip(o).for_each(|(a, &b)| *a = *a + b);
                        }
                    });
                }
                if self.needs(*x) {
                    let n = T::from_usize(cols).unwrap();
                    accumulate(&mut grads[x.0], total, |gx| {
                        let mut dxhat = vec![T::zero(); cols];
                        for r in 0..rows {
                            let o = &gout[r * cols..(r + 1) * cols];
                            let xh = &xhat[r * cols..(r + 1) * cols];
                            let mut mean_d = T::zero();
                            let mut mean_dx = T::zero();
                            for c in 0..cols {
                                dxhat[c] = o[c] * gd[c];
                                mean_d = mean_d + dxhat[c];
                                mean_dx = mean_dx + dxhat[c] * xh[c];
                            }
                            mean_d = mean_d / n;
                            mean_dx = mean_dx / n;
                            let g = &mut gx[r * cols..(r + 1) * cols];
                            for c in 0..cols {
                                g[c] = g[c] + rstd[r] * (dxhat[c] - mean_d - xh[c] * mean_dx);
                            }
                        }
                    });
                }
            }
            Op::Concat { a, b } => {
                let (ca, cb) = (*self.shape(*a).last().unwrap(), *self.shape(*b).last().unwrap());
                let width = ca + cb;
                if self.needs(*a) {
                    accumulate(&mut grads[a.0], numels[a.0], |ga| {
                        for (dst, src) in ga.chunks_mut(ca).zip(gout.chunks(width)) {
                            dst.iter_mut().zip(&src[..ca]).for_each(|(x, &y)| *x = *x + y);
                        }
                    });
                }
                if self.needs(*b) {
                    accumulate(&mut grads[b.0], numels[b.0], |gb| {
                        for (dst, src) in gb.chunks_mut(cb).zip(gout.chunks(width)) {
                            dst.iter_mut().zip(&src[ca..]).for_each(|(x, &y)| *x = *x + y);
                        }
                    });
                }
            }
            Op::Reshape { x } => add_into(&mut grads[x.0], gout),
            Op::Permute { x, axes } => {
                let mut inverse = vec![0; axes.len()];
                for (d, &a) in axes.iter().enumerate() {
                    inverse[a] = d;
                }
                let (g, _) = permute(gout, node.value.shape(), &inverse);
                add_into(&mut grads[x.0], &g);
            }
            Op::SelectRows { x, rows } => {
                let s = self.shape(*x);
                let (b, t, c) = (s[0], s[1], s[2]);
                accumulate(&mut grads[x.0], numels[x.0], |gx| {
                    let mut src = gout.chunks(c);
                    for bi in 0..b {
                        for &r in rows {
                            let dst = &mut gx[(bi * t + r) * c..(bi * t + r + 1) * c];
                            let g = src.next().unwrap();
                            dst.iter_mut().zip(g).for_each(|(a, &v)| *a = *a + v);
                        }
                    }
                });
            }
            Op::Sum { x } => {
                accumulate(&mut grads[x.0], numels[x.0], |gx| {
                    gx.iter_mut().for_each(|g| *g = *g + gout[0]);
                });
            }
            Op::Mean { x } => {
                let scale = gout[0] / T::from_usize(numels[x.0]).unwrap();
                accumulate(&mut grads[x.0], numels[x.0], |gx| {
                    gx.iter_mut().for_each(|g| *g = *g + scale);
                });
            }
            Op::BceLlr { llr, labels } => {
                let d = self.value(*llr).data();
                let scale = gout[0] / T::from_usize(d.len()).unwrap();
                accumulate(&mut grads[llr.0], numels[llr.0], |gl| {
                    for ((g, &l), &y) in gl.iter_mut().zip(d).zip(labels) {
                        *g = *g + scale * (sigmoid(l) - (T::one() - y));
                    }
                });
            }
        }
    }

    /// Parameter nodes recorded on this graph, in recording order.
    pub(crate) fn param_nodes(&self) -> impl Iterator<Item = (Var, ParamId)> + '_ {
        self.nodes.iter().enumerate().filter_map(|(i, n)| match n.op {
            Op::Param(id) => Some((Var(i), id)),
            _ => None,
        })
    }
}

pub(crate) fn sigmoid<T: Real>(v: T) -> T {
    if v >= T::zero() {
        (T::one() + (-v).exp()).recip()
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

fn softplus<T: Real>(v: T) -> T {
    v.max(T::zero()) + (-v.abs()).exp().ln_1p()
}
