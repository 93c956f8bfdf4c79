use std::sync::Arc;

use super::shape::{broadcast_shape, for_each_broadcast, permute_source_indices, split_axis};
use super::{Result, Scalar, Tensor, TensorError};

/// Handle to a node recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OpKind {
    Leaf,
    MatMul,
    Add,
    Sub,
    Mul,
    Scale,
    AddScalar,
    Relu,
    Sigmoid,
    Exp,
    Softplus,
    Softmax,
    LayerNorm,
    Concat,
    Slice,
    Sum,
    Mean,
    Max,
    SumAll,
    MeanAll,
    Reshape,
    Permute,
    Gather,
}

/// Deliberate corruption of a backward rule, used to prove the gradient
/// checker catches broken derivatives.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Fault {
    FlipBackwardSign(OpKind),
}

/// Sparse row-combination table: output row `r` is
/// `sum_e weight[e] * src_row[index[e]]` over the entries of row `r`.
///
/// Bilinear feature lookup, im2col and nearest-neighbour upsampling are all
/// expressed with it.
#[derive(Clone, Debug)]
pub struct GatherPlan<T> {
    width: usize,
    offsets: Vec<usize>,
    index: Vec<usize>,
    weight: Vec<T>,
}

impl<T: Scalar> GatherPlan<T> {
    pub fn new(width: usize) -> Self {
        Self {
            width,
            offsets: vec![0],
            index: Vec::new(),
            weight: Vec::new(),
        }
    }

    pub fn with_capacity(width: usize, rows: usize, entries: usize) -> Self {
        let mut offsets = Vec::with_capacity(rows + 1);
        offsets.push(0);
        Self {
            width,
            offsets,
            index: Vec::with_capacity(entries),
            weight: Vec::with_capacity(entries),
        }
    }

    pub fn push_row(&mut self, entries: impl IntoIterator<Item = (usize, T)>) {
        for (i, w) in entries {
            self.index.push(i);
            self.weight.push(w);
        }
        self.offsets.push(self.index.len());
    }

    pub fn rows(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub(crate) fn row(&self, r: usize) -> impl Iterator<Item = (usize, T)> + '_ {
        let span = self.offsets[r]..self.offsets[r + 1];
        self.index[span.clone()]
            .iter()
            .copied()
            .zip(self.weight[span].iter().copied())
    }

    fn max_index(&self) -> Option<usize> {
        self.index.iter().copied().max()
    }
}

pub(crate) enum Op<T> {
    Leaf,
    MatMul { a: Var, b: Var, trans_b: bool },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    Relu(Var),
    Sigmoid(Var),
    Exp(Var),
    Softplus(Var),
    Softmax { x: Var, axis: usize, mask: Option<Arc<Vec<bool>>> },
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<T>, rstd: Vec<T> },
    Concat { inputs: Vec<Var>, axis: usize },
    Slice { x: Var, axis: usize, start: usize },
    Sum { x: Var, axis: usize },
    Mean { x: Var, axis: usize },
    Max { x: Var, argmax: Vec<usize> },
    SumAll(Var),
    MeanAll(Var),
    Reshape(Var),
    Permute { x: Var, perm: Vec<usize> },
    Gather { src: Var, plan: Arc<GatherPlan<T>> },
}

impl<T> Op<T> {
    pub(crate) fn kind(&self) -> OpKind {
        match self {
            Op::Leaf => OpKind::Leaf,
            Op::MatMul { .. } => OpKind::MatMul,
            Op::Add(..) => OpKind::Add,
            Op::Sub(..) => OpKind::Sub,
            Op::Mul(..) => OpKind::Mul,
            Op::Scale(..) => OpKind::Scale,
            Op::AddScalar(..) => OpKind::AddScalar,
            Op::Relu(..) => OpKind::Relu,
            Op::Sigmoid(..) => OpKind::Sigmoid,
            Op::Exp(..) => OpKind::Exp,
            Op::Softplus(..) => OpKind::Softplus,
            Op::Softmax { .. } => OpKind::Softmax,
            Op::LayerNorm { .. } => OpKind::LayerNorm,
            Op::Concat { .. } => OpKind::Concat,
            Op::Slice { .. } => OpKind::Slice,
            Op::Sum { .. } => OpKind::Sum,
            Op::Mean { .. } => OpKind::Mean,
            Op::Max { .. } => OpKind::Max,
            Op::SumAll(..) => OpKind::SumAll,
            Op::MeanAll(..) => OpKind::MeanAll,
            Op::Reshape(..) => OpKind::Reshape,
            Op::Permute { .. } => OpKind::Permute,
            Op::Gather { .. } => OpKind::Gather,
        }
    }
}

pub(crate) struct Node<T> {
    pub(crate) value: Tensor<T>,
    pub(crate) op: Op<T>,
    pub(crate) needs_grad: bool,
}

/// Ordered record of executed operations. Confined to a single worker.
pub struct Graph<T> {
    pub(crate) nodes: Vec<Node<T>>,
    pub(crate) leaf_grads: Vec<Option<Vec<T>>>,
    pub(crate) fault: Option<Fault>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            leaf_grads: Vec::new(),
            fault: None,
        }
    }

    #[doc(hidden)]
    pub fn inject_fault(&mut self, fault: Fault) {
        self.fault = Some(fault);
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: requires_grad,
        });
        self.leaf_grads.push(None);
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Accumulated gradient of a leaf after [`Graph::backward`].
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.leaf_grads[v.0].as_deref()
    }

    pub fn zero_grad(&mut self) {
        self.leaf_grads.iter_mut().for_each(|g| *g = None);
    }

    fn push(&mut self, name: &'static str, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Result<Var> {
        if !value.is_finite() {
            return Err(TensorError::NonFinite { op: name });
        }
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node { value, op, needs_grad });
        self.leaf_grads.push(None);
        Ok(Var(self.nodes.len() - 1))
    }

    fn check_axis(&self, op: &'static str, x: Var, axis: usize) -> Result<()> {
        if axis >= self.shape(x).len() {
            return Err(TensorError::Contract {
                op,
                msg: format!("axis {axis} out of range for shape {:?}", self.shape(x)),
            });
        }
        Ok(())
    }

    // ---- linear algebra -------------------------------------------------

    /// Batched matrix product `[.., m, k] x [.., k, n]`. The right operand may
    /// be a plain matrix shared across the batch.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, false)
    }

    /// `a x bᵀ` over the last two axes, without materializing the transpose.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, true)
    }

    fn matmul_impl(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let dims = matmul_dims(self.shape(a), self.shape(b), trans_b)?;
        let av = self.value(a);
        let bv = self.value(b);
        let mut out_shape = av.shape()[..av.rank() - 1].to_vec();
        out_shape.push(dims.n);
        let mut out = vec![T::zero(); dims.batch * dims.m * dims.n];
        let b_strides = if trans_b { (1, dims.k) } else { (dims.n, 1) };
        if dims.shared_b {
            T::gemm(
                dims.batch * dims.m,
                dims.k,
                dims.n,
                av.data(),
                (dims.k, 1),
                bv.data(),
                b_strides,
                T::zero(),
                &mut out,
                (dims.n, 1),
            );
        } else {
            let (sa, sb, sc) = (dims.m * dims.k, dims.k * dims.n, dims.m * dims.n);
            for i in 0..dims.batch {
                T::gemm(
                    dims.m,
                    dims.k,
                    dims.n,
                    &av.data()[i * sa..(i + 1) * sa],
                    (dims.k, 1),
                    &bv.data()[i * sb..(i + 1) * sb],
                    b_strides,
                    T::zero(),
                    &mut out[i * sc..(i + 1) * sc],
                    (dims.n, 1),
                );
            }
        }
        let value = Tensor::new(out_shape, out)?;
        self.push("matmul", value, Op::MatMul { a, b, trans_b }, &[a, b])
    }

    /// `x·w + b` for `w: [in, out]`, `b: [out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let y = self.matmul(x, w)?;
        self.add(y, b)
    }

    // ---- broadcasting elementwise --------------------------------------

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(T, T) -> T,
        op: Op<T>,
    ) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let out_shape = broadcast_shape(&sa, &sb).ok_or_else(|| TensorError::Shape {
            op: name,
            lhs: sa.clone(),
            rhs: sb.clone(),
        })?;
        let numel = out_shape.iter().product();
        let mut out = vec![T::zero(); numel];
        {
            let (ad, bd) = (self.value(a).data(), self.value(b).data());
            for_each_broadcast(&sa, &sb, &out_shape, |o, ia, ib| out[o] = f(ad[ia], bd[ib]));
        }
        let value = Tensor::new(out_shape, out)?;
        self.push(name, value, op, &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    fn unary(&mut self, name: &'static str, x: Var, f: impl Fn(T) -> T, op: Op<T>) -> Result<Var> {
        let xv = self.value(x);
        let data = xv.data().iter().map(|&v| f(v)).collect();
        let value = Tensor::new(xv.shape().to_vec(), data)?;
        self.push(name, value, op, &[x])
    }

    pub fn scale(&mut self, x: Var, c: T) -> Result<Var> {
        self.unary("scale", x, |v| v * c, Op::Scale(x, c))
    }

    pub fn add_scalar(&mut self, x: Var, c: T) -> Result<Var> {
        self.unary("add_scalar", x, |v| v + c, Op::AddScalar(x))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.unary("relu", x, |v| if v > T::zero() { v } else { T::zero() }, Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary("sigmoid", x, sigmoid, Op::Sigmoid(x))
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        self.unary("exp", x, |v| v.exp(), Op::Exp(x))
    }

    /// `ln(1 + eˣ)`, evaluated without overflow.
    pub fn softplus(&mut self, x: Var) -> Result<Var> {
        self.unary("softplus", x, softplus, Op::Softplus(x))
    }

    // ---- normalization -------------------------------------------------

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.softmax_impl(x, axis, None)
    }

    /// Softmax where entries with `mask == false` act as `-inf` logits.
    /// A slice with no valid entry falls back to a uniform distribution.
    pub fn masked_softmax(&mut self, x: Var, axis: usize, mask: Arc<Vec<bool>>) -> Result<Var> {
        if mask.len() != self.value(x).numel() {
            return Err(TensorError::Shape {
                op: "masked_softmax",
                lhs: self.shape(x).to_vec(),
                rhs: vec![mask.len()],
            });
        }
        self.softmax_impl(x, axis, Some(mask))
    }

    fn softmax_impl(&mut self, x: Var, axis: usize, mask: Option<Arc<Vec<bool>>>) -> Result<Var> {
        self.check_axis("softmax", x, axis)?;
        let xv = self.value(x);
        let (outer, n, inner) = split_axis(xv.shape(), axis);
        let xd = xv.data();
        let mut out = vec![T::zero(); xd.len()];
        let valid = |i: usize| mask.as_ref().map_or(true, |m| m[i]);
        for o in 0..outer {
            for j in 0..inner {
                let base = o * n * inner + j;
                let idx = |t: usize| base + t * inner;
                let mut max = T::neg_infinity();
                for t in 0..n {
                    if valid(idx(t)) && xd[idx(t)] > max {
                        max = xd[idx(t)];
                    }
                }
                if max == T::neg_infinity() {
                    let u = T::one() / T::of(n as f64);
                    (0..n).for_each(|t| out[idx(t)] = u);
                    continue;
                }
                let mut sum = T::zero();
                for t in 0..n {
                    if valid(idx(t)) {
                        let e = (xd[idx(t)] - max).exp();
                        out[idx(t)] = e;
                        sum += e;
                    }
                }
                let inv = T::one() / sum;
                (0..n).for_each(|t| out[idx(t)] *= inv);
            }
        }
        let value = Tensor::new(xv.shape().to_vec(), out)?;
        self.push("softmax", value, Op::Softmax { x, axis, mask }, &[x])
    }

    /// Normalizes over the last axis, then applies `gamma`/`beta`.
    pub fn layernorm(&mut self, x: Var, gamma: Var, beta: Var, eps: T) -> Result<Var> {
        let xv = self.value(x);
        let d = *xv.shape().last().ok_or(TensorError::Contract {
            op: "layernorm",
            msg: "input must have rank >= 1".into(),
        })?;
        for p in [gamma, beta] {
            if self.shape(p) != [d] {
                return Err(TensorError::Shape {
                    op: "layernorm",
                    lhs: xv.shape().to_vec(),
                    rhs: self.shape(p).to_vec(),
                });
            }
        }
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        let rows = xv.numel() / d.max(1);
        let inv_d = T::one() / T::of(d as f64);
        let mut xhat = vec![T::zero(); xv.numel()];
        let mut rstd = vec![T::zero(); rows];
        let mut out = vec![T::zero(); xv.numel()];
        for r in 0..rows {
            let row = &xv.data()[r * d..(r + 1) * d];
            let mean = row.iter().copied().sum::<T>() * inv_d;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_d;
            let rs = T::one() / (var + eps).sqrt();
            rstd[r] = rs;
            for c in 0..d {
                let h = (row[c] - mean) * rs;
                xhat[r * d + c] = h;
                out[r * d + c] = h * g[c] + b[c];
            }
        }
        let value = Tensor::new(xv.shape().to_vec(), out)?;
        self.push(
            "layernorm",
            value,
            Op::LayerNorm { x, gamma, beta, xhat, rstd },
            &[x, gamma, beta],
        )
    }

    // ---- structural ----------------------------------------------------

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = *inputs.first().ok_or(TensorError::Contract {
            op: "concat",
            msg: "no inputs".into(),
        })?;
        self.check_axis("concat", first, axis)?;
        let base = self.shape(first).to_vec();
        let mut total = 0;
        for &v in inputs {
            let s = self.shape(v);
            let compatible = s.len() == base.len()
                && s.iter().zip(&base).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(TensorError::Shape {
                    op: "concat",
                    lhs: base,
                    rhs: s.to_vec(),
                });
            }
            total += s[axis];
        }
        let mut out_shape = base.clone();
        out_shape[axis] = total;
        let (outer, _, inner) = split_axis(&out_shape, axis);
        let mut out = Vec::with_capacity(out_shape.iter().product());
        for o in 0..outer {
            for &v in inputs {
                let xv = self.value(v);
                let chunk = xv.shape()[axis] * inner;
                out.extend_from_slice(&xv.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let value = Tensor::new(out_shape, out)?;
        self.push(
            "concat",
            value,
            Op::Concat { inputs: inputs.to_vec(), axis },
            inputs,
        )
    }

    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        self.check_axis("slice", x, axis)?;
        let xv = self.value(x);
        let (outer, n, inner) = split_axis(xv.shape(), axis);
        if start + len > n {
            return Err(TensorError::Contract {
                op: "slice",
                msg: format!("range {start}..{} exceeds axis length {n}", start + len),
            });
        }
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let from = (o * n + start) * inner;
            out.extend_from_slice(&xv.data()[from..from + len * inner]);
        }
        let mut shape = xv.shape().to_vec();
        shape[axis] = len;
        let value = Tensor::new(shape, out)?;
        self.push("slice", value, Op::Slice { x, axis, start }, &[x])
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshaped(shape)?;
        self.push("reshape", value, Op::Reshape(x), &[x])
    }

    pub fn permute(&mut self, x: Var, perm: &[usize]) -> Result<Var> {
        let xv = self.value(x);
        let rank = xv.rank();
        let mut seen = vec![false; rank];
        if perm.len() != rank || perm.iter().any(|&p| p >= rank || std::mem::replace(&mut seen[p], true)) {
            return Err(TensorError::Contract {
                op: "permute",
                msg: format!("{perm:?} is not a permutation of {rank} axes"),
            });
        }
        let src = permute_source_indices(xv.shape(), perm);
        let data = src.iter().map(|&i| xv.data()[i]).collect();
        let shape = perm.iter().map(|&p| xv.shape()[p]).collect();
        let value = Tensor::new(shape, data)?;
        self.push("permute", value, Op::Permute { x, perm: perm.to_vec() }, &[x])
    }

    /// Row gather/combination: `src` is viewed as `[rows, plan.width()]`.
    pub fn gather(&mut self, src: Var, plan: Arc<GatherPlan<T>>, out_shape: &[usize]) -> Result<Var> {
        let sv = self.value(src);
        let w = plan.width();
        let numel: usize = out_shape.iter().product();
        if w == 0 || sv.numel() % w != 0 || numel != plan.rows() * w {
            return Err(TensorError::Shape {
                op: "gather",
                lhs: sv.shape().to_vec(),
                rhs: out_shape.to_vec(),
            });
        }
        let src_rows = sv.numel() / w;
        if plan.max_index().is_some_and(|m| m >= src_rows) {
            return Err(TensorError::Contract {
                op: "gather",
                msg: format!("row index out of range for {src_rows} source rows"),
            });
        }
        let sd = sv.data();
        let mut out = vec![T::zero(); numel];
        for r in 0..plan.rows() {
            let dst = &mut out[r * w..(r + 1) * w];
            for (i, wt) in plan.row(r) {
                let s = &sd[i * w..(i + 1) * w];
                dst.iter_mut().zip(s).for_each(|(d, &v)| *d += wt * v);
            }
        }
        let value = Tensor::new(out_shape.to_vec(), out)?;
        self.push("gather", value, Op::Gather { src, plan }, &[src])
    }

    // ---- reductions ----------------------------------------------------

    pub fn sum(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.reduce_linear("sum", x, axis, false)
    }

    pub fn mean(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.reduce_linear("mean", x, axis, true)
    }

    fn reduce_linear(&mut self, name: &'static str, x: Var, axis: usize, mean: bool) -> Result<Var> {
        self.check_axis(name, x, axis)?;
        let xv = self.value(x);
        let (outer, n, inner) = split_axis(xv.shape(), axis);
        let mut out = vec![T::zero(); outer * inner];
        for o in 0..outer {
            for t in 0..n {
                let row = &xv.data()[(o * n + t) * inner..(o * n + t + 1) * inner];
                out[o * inner..(o + 1) * inner]
                    .iter_mut()
                    .zip(row)
                    .for_each(|(a, &b)| *a += b);
            }
        }
        if mean {
            let inv = T::one() / T::of(n as f64);
            out.iter_mut().for_each(|v| *v *= inv);
        }
        let mut shape = xv.shape().to_vec();
        shape.remove(axis);
        let value = Tensor::new(shape, out)?;
        let op = if mean { Op::Mean { x, axis } } else { Op::Sum { x, axis } };
        self.push(name, value, op, &[x])
    }

    pub fn max(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.max_impl(x, axis, None)
    }

    /// Max over entries with `mask == true`; a slice with no valid entry yields 0
    /// and passes no gradient.
    pub fn masked_max(&mut self, x: Var, axis: usize, mask: &[bool]) -> Result<Var> {
        if mask.len() != self.value(x).numel() {
            return Err(TensorError::Shape {
                op: "masked_max",
                lhs: self.shape(x).to_vec(),
                rhs: vec![mask.len()],
            });
        }
        self.max_impl(x, axis, Some(mask))
    }

    fn max_impl(&mut self, x: Var, axis: usize, mask: Option<&[bool]>) -> Result<Var> {
        self.check_axis("max", x, axis)?;
        let xv = self.value(x);
        let (outer, n, inner) = split_axis(xv.shape(), axis);
        let xd = xv.data();
        let mut out = vec![T::zero(); outer * inner];
        let mut argmax = vec![usize::MAX; outer * inner];
        for o in 0..outer {
            for j in 0..inner {
                let mut best: Option<(usize, T)> = None;
                for t in 0..n {
                    let i = (o * n + t) * inner + j;
                    if mask.is_some_and(|m| !m[i]) {
                        continue;
                    }
                    // strict comparison keeps the first index on ties
                    if best.map_or(true, |(_, b)| xd[i] > b) {
                        best = Some((i, xd[i]));
                    }
                }
                if let Some((i, v)) = best {
                    out[o * inner + j] = v;
                    argmax[o * inner + j] = i;
                }
            }
        }
        let mut shape = xv.shape().to_vec();
        shape.remove(axis);
        let value = Tensor::new(shape, out)?;
        self.push("max", value, Op::Max { x, argmax }, &[x])
    }

    pub fn sum_all(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().copied().sum::<T>();
        self.push("sum_all", Tensor::scalar(s), Op::SumAll(x), &[x])
    }

    pub fn mean_all(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let s = xv.data().iter().copied().sum::<T>() / T::of(xv.numel().max(1) as f64);
        self.push("mean_all", Tensor::scalar(s), Op::MeanAll(x), &[x])
    }
}

pub(crate) fn sigmoid<T: Scalar>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

pub(crate) fn softplus<T: Scalar>(v: T) -> T {
    v.max(T::zero()) + (-v.abs()).exp().ln_1p()
}

pub(crate) struct MatmulDims {
    pub batch: usize,
    pub m: usize,
    pub k: usize,
    pub n: usize,
    pub shared_b: bool,
}

pub(crate) fn matmul_dims(a: &[usize], b: &[usize], trans_b: bool) -> Result<MatmulDims> {
    let err = || TensorError::Shape {
        op: "matmul",
        lhs: a.to_vec(),
        rhs: b.to_vec(),
    };
    if a.len() < 2 || b.len() < 2 {
        return Err(err());
    }
    let (m, k) = (a[a.len() - 2], a[a.len() - 1]);
    let (bk, n) = if trans_b {
        (b[b.len() - 1], b[b.len() - 2])
    } else {
        (b[b.len() - 2], b[b.len() - 1])
    };
    if bk != k {
        return Err(err());
    }
    let batch: usize = a[..a.len() - 2].iter().product();
    let shared_b = b.len() == 2;
    if !shared_b && b[..b.len() - 2] != a[..a.len() - 2] {
        return Err(err());
    }
    Ok(MatmulDims { batch, m, k, n, shared_b })
}
