use super::graph::{matmul_dims, sigmoid, Fault, Graph, Op, Var};
use super::shape::{for_each_broadcast, permute_source_indices, split_axis};
use super::{Result, Scalar, TensorError};

fn buf<'a, T: Scalar>(grads: &'a mut [Option<Vec<T>>], v: Var, numel: usize) -> &'a mut [T] {
    grads[v.0].get_or_insert_with(|| vec![T::zero(); numel])
}

impl<T: Scalar> Graph<T> {
    /// Backpropagates from a scalar `loss`. Leaf gradients accumulate across calls
    /// until [`Graph::zero_grad`].
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(TensorError::Contract {
                op: "backward",
                msg: format!("loss must be a scalar, got shape {:?}", self.shape(loss)),
            });
        }
        self.backward_seeded(loss, vec![T::one()])
    }

    /// Backpropagates an upstream gradient `seed` (same size as `out`),
    /// accumulating into leaf gradients.
    pub fn backward_seeded(&mut self, out: Var, seed: Vec<T>) -> Result<()> {
        if seed.len() != self.value(out).numel() {
            return Err(TensorError::Contract {
                op: "backward",
                msg: format!("seed has {} values for shape {:?}", seed.len(), self.shape(out)),
            });
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; self.nodes.len()];
        grads[out.0] = Some(seed);
        for id in (0..=out.0).rev() {
            let node = &self.nodes[id];
            if !node.needs_grad {
                continue;
            }
            let Some(mut g) = grads[id].take() else {
                continue;
            };
            if let Op::Leaf = node.op {
                match &mut self.leaf_grads[id] {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, &b)| *a += b),
                    slot @ None => *slot = Some(g),
                }
                continue;
            }
            if self.fault == Some(Fault::FlipBackwardSign(node.op.kind())) {
                g.iter_mut().for_each(|v| *v = -*v);
            }
            self.backward_node(id, &g, &mut grads);
        }
        Ok(())
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn backward_node(&self, id: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[id];
        let out = node.value.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul { a, b, trans_b } => self.matmul_backward(*a, *b, *trans_b, g, grads),
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(node.op, Op::Sub(..)) { -T::one() } else { T::one() };
                let (sa, sb) = (self.shape(*a).to_vec(), self.shape(*b).to_vec());
                let shape = node.value.shape();
                if self.needs(*a) {
                    let ga = buf(grads, *a, self.value(*a).numel());
                    for_each_broadcast(&sa, &sb, shape, |o, ia, _| ga[ia] += g[o]);
                }
                if self.needs(*b) {
                    let gb = buf(grads, *b, self.value(*b).numel());
                    for_each_broadcast(&sa, &sb, shape, |o, _, ib| gb[ib] += sign * g[o]);
                }
            }
            Op::Mul(a, b) => {
                let (sa, sb) = (self.shape(*a).to_vec(), self.shape(*b).to_vec());
                let (ad, bd) = (self.value(*a).data(), self.value(*b).data());
                let shape = node.value.shape();
                if self.needs(*a) {
                    let ga = buf(grads, *a, ad.len());
                    for_each_broadcast(&sa, &sb, shape, |o, ia, ib| ga[ia] += g[o] * bd[ib]);
                }
                if self.needs(*b) {
                    let gb = buf(grads, *b, bd.len());
                    for_each_broadcast(&sa, &sb, shape, |o, ia, ib| gb[ib] += g[o] * ad[ia]);
                }
            }
            Op::Scale(x, c) => self.elementwise(*x, grads, |i| g[i] * *c),
            Op::AddScalar(x) => self.elementwise(*x, grads, |i| g[i]),
            Op::Relu(x) => self.elementwise(*x, grads, |i| if out[i] > T::zero() { g[i] } else { T::zero() }),
            Op::Sigmoid(x) => self.elementwise(*x, grads, |i| g[i] * out[i] * (T::one() - out[i])),
            Op::Exp(x) => self.elementwise(*x, grads, |i| g[i] * out[i]),
            Op::Softplus(x) => {
                let xd = self.value(*x).data();
                self.elementwise(*x, grads, |i| g[i] * sigmoid(xd[i]))
            }
            Op::Softmax { x, axis, mask } => {
                if !self.needs(*x) {
                    return;
                }
                let (outer, n, inner) = split_axis(node.value.shape(), *axis);
                let valid = |i: usize| mask.as_ref().map_or(true, |m| m[i]);
                let gx = buf(grads, *x, out.len());
                for o in 0..outer {
                    for j in 0..inner {
                        let base = o * n * inner + j;
                        let mut dot = T::zero();
                        let mut any = false;
                        for t in 0..n {
                            let i = base + t * inner;
                            if valid(i) {
                                dot += out[i] * g[i];
                                any = true;
                            }
                        }
                        if !any {
                            continue;
                        }
                        for t in 0..n {
                            let i = base + t * inner;
                            if valid(i) {
                                gx[i] += out[i] * (g[i] - dot);
                            }
                        }
                    }
                }
            }
            Op::LayerNorm { x, gamma, beta, xhat, rstd } => {
                let d = self.value(*gamma).numel();
                let rows = rstd.len();
                let gam = self.value(*gamma).data();
                if self.needs(*gamma) {
                    let gg = buf(grads, *gamma, d);
                    for r in 0..rows {
                        for c in 0..d {
                            gg[c] += g[r * d + c] * xhat[r * d + c];
                        }
                    }
                }
                if self.needs(*beta) {
                    let gb = buf(grads, *beta, d);
                    for r in 0..rows {
                        for c in 0..d {
                            gb[c] += g[r * d + c];
                        }
                    }
                }
                if self.needs(*x) {
                    let gx = buf(grads, *x, rows * d);
                    let inv_d = T::one() / T::of(d as f64);
                    let mut dxhat = vec![T::zero(); d];
                    for r in 0..rows {
                        let (mut m1, mut m2) = (T::zero(), T::zero());
                        for c in 0..d {
                            dxhat[c] = g[r * d + c] * gam[c];
                            m1 += dxhat[c];
                            m2 += dxhat[c] * xhat[r * d + c];
                        }
                        m1 *= inv_d;
                        m2 *= inv_d;
                        for c in 0..d {
                            gx[r * d + c] += rstd[r] * (dxhat[c] - m1 - xhat[r * d + c] * m2);
                        }
                    }
                }
            }
            Op::Concat { inputs, axis } => {
                let (outer, total, inner) = split_axis(node.value.shape(), *axis);
                let mut offset = 0;
                for v in inputs {
                    let len = self.shape(*v)[*axis];
                    if self.needs(*v) {
                        let gv = buf(grads, *v, self.value(*v).numel());
                        let chunk = len * inner;
                        for o in 0..outer {
                            let src = &g[o * total * inner + offset * inner..][..chunk];
                            gv[o * chunk..(o + 1) * chunk]
                                .iter_mut()
                                .zip(src)
                                .for_each(|(a, &b)| *a += b);
                        }
                    }
                    offset += len;
                }
            }
            Op::Slice { x, axis, start } => {
                if !self.needs(*x) {
                    return;
                }
                let (outer, n, inner) = split_axis(self.shape(*x), *axis);
                let len = node.value.shape()[*axis];
                let gx = buf(grads, *x, outer * n * inner);
                for o in 0..outer {
                    let dst = &mut gx[(o * n + start) * inner..][..len * inner];
                    let src = &g[o * len * inner..(o + 1) * len * inner];
                    dst.iter_mut().zip(src).for_each(|(a, &b)| *a += b);
                }
            }
            Op::Sum { x, axis } | Op::Mean { x, axis } => {
                if !self.needs(*x) {
                    return;
                }
                let (outer, n, inner) = split_axis(self.shape(*x), *axis);
                let scale = if matches!(node.op, Op::Mean { .. }) {
                    T::one() / T::of(n as f64)
                } else {
                    T::one()
                };
                let gx = buf(grads, *x, outer * n * inner);
                for o in 0..outer {
                    for t in 0..n {
                        let dst = &mut gx[(o * n + t) * inner..][..inner];
                        let src = &g[o * inner..(o + 1) * inner];
                        dst.iter_mut().zip(src).for_each(|(a, &b)| *a += b * scale);
                    }
                }
            }
            Op::Max { x, argmax } => {
                if !self.needs(*x) {
                    return;
                }
                let gx = buf(grads, *x, self.value(*x).numel());
                for (o, &i) in argmax.iter().enumerate() {
                    if i != usize::MAX {
                        gx[i] += g[o];
                    }
                }
            }
            Op::SumAll(x) => self.elementwise(*x, grads, |_| g[0]),
            Op::MeanAll(x) => {
                let inv = T::one() / T::of(self.value(*x).numel().max(1) as f64);
                self.elementwise(*x, grads, |_| g[0] * inv)
            }
            Op::Reshape(x) => self.elementwise(*x, grads, |i| g[i]),
            Op::Permute { x, perm } => {
                if !self.needs(*x) {
                    return;
                }
                let src = permute_source_indices(self.shape(*x), perm);
                let gx = buf(grads, *x, src.len());
                for (o, &i) in src.iter().enumerate() {
                    gx[i] += g[o];
                }
            }
            Op::Gather { src, plan } => {
                if !self.needs(*src) {
                    return;
                }
                let w = plan.width();
                let gs = buf(grads, *src, self.value(*src).numel());
                for r in 0..plan.rows() {
                    let go = &g[r * w..(r + 1) * w];
                    for (i, wt) in plan.row(r) {
                        gs[i * w..(i + 1) * w]
                            .iter_mut()
                            .zip(go)
                            .for_each(|(a, &b)| *a += wt * b);
                    }
                }
            }
        }
    }

    fn elementwise(&self, x: Var, grads: &mut [Option<Vec<T>>], f: impl Fn(usize) -> T) {
        if !self.needs(x) {
            return;
        }
        let gx = buf(grads, x, self.value(x).numel());
        gx.iter_mut().enumerate().for_each(|(i, a)| *a += f(i));
    }

    fn matmul_backward(&self, a: Var, b: Var, trans_b: bool, g: &[T], grads: &mut [Option<Vec<T>>]) {
        // shapes were validated on the forward pass
        let dims = matmul_dims(self.shape(a), self.shape(b), trans_b).expect("matmul shapes");
        let (batch, m, k, n) = (dims.batch, dims.m, dims.k, dims.n);
        let (ad, bd) = (self.value(a).data(), self.value(b).data());
        if self.needs(a) {
            let ga = buf(grads, a, ad.len());
            // dA = dC · op(B)ᵀ
            let b_strides = if trans_b { (k, 1) } else { (1, n) };
            if dims.shared_b {
                T::gemm(batch * m, n, k, g, (n, 1), bd, b_strides, T::one(), ga, (k, 1));
            } else {
                for i in 0..batch {
                    T::gemm(
                        m,
                        n,
                        k,
                        &g[i * m * n..(i + 1) * m * n],
                        (n, 1),
                        &bd[i * k * n..(i + 1) * k * n],
                        b_strides,
                        T::one(),
                        &mut ga[i * m * k..(i + 1) * m * k],
                        (k, 1),
                    );
                }
            }
        }
        if self.needs(b) {
            let gb = buf(grads, b, bd.len());
            let rows = if dims.shared_b { batch * m } else { m };
            let batches = if dims.shared_b { 1 } else { batch };
            for i in 0..batches {
                let ai = &ad[i * rows * k..(i + 1) * rows * k];
                let gi = &g[i * rows * n..(i + 1) * rows * n];
                let bi = &mut gb[i * k * n..(i + 1) * k * n];
                if trans_b {
                    // dB[n,k] = dCᵀ · A
                    T::gemm(n, rows, k, gi, (1, n), ai, (k, 1), T::one(), bi, (k, 1));
                } else {
                    // dB[k,n] = Aᵀ · dC
                    T::gemm(k, rows, n, ai, (1, k), gi, (n, 1), T::one(), bi, (n, 1));
                }
            }
        }
    }
}
