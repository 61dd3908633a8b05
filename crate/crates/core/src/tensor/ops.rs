//! Differentiable tensor operations recorded on a [`Tape`].

use super::kernels::{
    broadcast_shape, broadcast_strides, for_each_broadcast, gemm, reduce_to_shape, split_at_axis,
};
use super::{check_axis, Tape, Tensor, Var};
use crate::error::{shape_err, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReduceKind {
    Max,
    Sum,
    Mean,
}

#[derive(Clone, Copy)]
enum Binary {
    Add,
    Sub,
    Mul,
}

impl Tape {
    fn unary(
        &self,
        x: Var,
        f: impl Fn(f64) -> f64,
        df: impl Fn(f64, f64) -> f64 + 'static,
    ) -> Var {
        let [xv] = self.values([x]);
        let out = Tensor::from_parts(xv.shape().to_vec(), xv.data().iter().map(|&v| f(v)).collect());
        self.push(out, &[x], move |g, p, y| {
            let data = g
                .data()
                .iter()
                .zip(p[0].data())
                .zip(y.data())
                .map(|((&g, &x), &y)| g * df(x, y))
                .collect();
            vec![Some(Tensor::from_parts(g.shape().to_vec(), data))]
        })
    }

    /// Rectifier; the subgradient at 0 is 0.
    pub fn relu(&self, x: Var) -> Var {
        self.unary(x, |v| v.max(0.0), |x, _| if x > 0.0 { 1.0 } else { 0.0 })
    }

    pub fn exp(&self, x: Var) -> Var {
        self.unary(x, f64::exp, |_, y| y)
    }

    /// Natural log; every input must be strictly positive.
    pub fn log(&self, x: Var) -> Result<Var> {
        if let Some(bad) = self.value(x).data().iter().find(|v| !(**v > 0.0)) {
            return Err(Error::Domain(format!("log of nonpositive value {bad}")));
        }
        Ok(self.unary(x, f64::ln, |x, _| 1.0 / x))
    }

    pub fn sigmoid(&self, x: Var) -> Var {
        self.unary(
            x,
            |v| {
                if v >= 0.0 {
                    1.0 / (1.0 + (-v).exp())
                } else {
                    let e = v.exp();
                    e / (1.0 + e)
                }
            },
            |_, y| y * (1.0 - y),
        )
    }

    pub fn tanh(&self, x: Var) -> Var {
        self.unary(x, f64::tanh, |_, y| 1.0 - y * y)
    }

    /// Absolute value; the subgradient at 0 is 0.
    pub fn abs(&self, x: Var) -> Var {
        self.unary(x, f64::abs, |x, _| {
            if x > 0.0 {
                1.0
            } else if x < 0.0 {
                -1.0
            } else {
                0.0
            }
        })
    }

    /// `x^p` for a constant exponent. Inputs must be nonnegative unless `p` is an integer.
    pub fn powf(&self, x: Var, p: f64) -> Var {
        self.unary(x, move |v| v.powf(p), move |x, _| {
            if p == 0.0 {
                0.0
            } else {
                p * x.powf(p - 1.0)
            }
        })
    }

    /// Clamps into `[lo, hi]`; gradient passes only where the input is inside.
    pub fn clamp(&self, x: Var, lo: f64, hi: f64) -> Var {
        self.unary(x, move |v| v.clamp(lo, hi), move |x, _| {
            if (lo..=hi).contains(&x) {
                1.0
            } else {
                0.0
            }
        })
    }

    pub fn scale(&self, x: Var, c: f64) -> Var {
        self.unary(x, move |v| v * c, move |_, _| c)
    }

    pub fn add_scalar(&self, x: Var, c: f64) -> Var {
        self.unary(x, move |v| v + c, |_, _| 1.0)
    }

    pub fn neg(&self, x: Var) -> Var {
        self.scale(x, -1.0)
    }

    fn binary(&self, a: Var, b: Var, kind: Binary) -> Result<Var> {
        let [av, bv] = self.values([a, b]);
        let out_shape = broadcast_shape(av.shape(), bv.shape())?;
        let apply = |x: f64, y: f64| match kind {
            Binary::Add => x + y,
            Binary::Sub => x - y,
            Binary::Mul => x * y,
        };
        let n: usize = out_shape.iter().product();
        let mut out = vec![0.0; n];
        let (ad, bd) = (av.data(), bv.data());
        if av.shape() == bv.shape() {
            for i in 0..n {
                out[i] = apply(ad[i], bd[i]);
            }
        } else if bd.len() == 1 {
            for i in 0..n {
                out[i] = apply(ad[i], bd[0]);
            }
        } else {
            let sa = broadcast_strides(av.shape(), &out_shape);
            let sb = broadcast_strides(bv.shape(), &out_shape);
            for_each_broadcast(&out_shape, &sa, &sb, |o, i, j| out[o] = apply(ad[i], bd[j]));
        }
        let out = Tensor::from_parts(out_shape.clone(), out);
        Ok(self.push(out, &[a, b], move |g, p, _| {
            let (ash, bsh) = (p[0].shape(), p[1].shape());
            let gd = g.data();
            let (ga, gb): (Vec<f64>, Vec<f64>) = match kind {
                Binary::Add => (gd.to_vec(), gd.to_vec()),
                Binary::Sub => (gd.to_vec(), gd.iter().map(|v| -v).collect()),
                Binary::Mul => {
                    let sa = broadcast_strides(ash, g.shape());
                    let sb = broadcast_strides(bsh, g.shape());
                    let (ad, bd) = (p[0].data(), p[1].data());
                    let mut ga = vec![0.0; gd.len()];
                    let mut gb = vec![0.0; gd.len()];
                    for_each_broadcast(g.shape(), &sa, &sb, |o, i, j| {
                        ga[o] = gd[o] * bd[j];
                        gb[o] = gd[o] * ad[i];
                    });
                    (ga, gb)
                }
            };
            vec![
                Some(Tensor::from_parts(ash.to_vec(), reduce_to_shape(&ga, g.shape(), ash))),
                Some(Tensor::from_parts(bsh.to_vec(), reduce_to_shape(&gb, g.shape(), bsh))),
            ]
        }))
    }

    /// Elementwise sum with numpy-style broadcasting.
    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Binary::Add)
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Binary::Sub)
    }

    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Binary::Mul)
    }

    pub fn sum_all(&self, x: Var) -> Var {
        let [xv] = self.values([x]);
        let s: f64 = xv.data().iter().sum();
        self.push(Tensor::scalar(s), &[x], |g, p, _| {
            vec![Some(Tensor::full(p[0].shape(), g.item()))]
        })
    }

    pub fn mean_all(&self, x: Var) -> Var {
        let n = self.value(x).numel() as f64;
        self.scale(self.sum_all(x), 1.0 / n)
    }

    /// Matrix product over the last two axes. `b` is either a plain matrix shared
    /// by every batch entry of `a`, or carries the same leading batch axes as `a`.
    pub fn matmul(&self, a: Var, b: Var) -> Result<Var> {
        let [av, bv] = self.values([a, b]);
        let (ash, bsh) = (av.shape(), bv.shape());
        if ash.len() < 2 || bsh.len() < 2 {
            return shape_err(format!("matmul needs rank >= 2, got {ash:?} x {bsh:?}"));
        }
        let (m, k) = (ash[ash.len() - 2], ash[ash.len() - 1]);
        let (k2, n) = (bsh[bsh.len() - 2], bsh[bsh.len() - 1]);
        if k != k2 {
            return shape_err(format!("matmul inner dimensions differ: {ash:?} x {bsh:?}"));
        }
        let batch_a = &ash[..ash.len() - 2];
        let batch_b = &bsh[..bsh.len() - 2];
        let shared_b = batch_b.is_empty();
        if !shared_b && batch_a != batch_b {
            return shape_err(format!("matmul batch axes differ: {ash:?} x {bsh:?}"));
        }
        let batches: usize = batch_a.iter().product();
        let mut out = vec![0.0; batches * m * n];
        for bi in 0..batches {
            let bs = if shared_b { 0 } else { bi };
            gemm(
                m,
                k,
                n,
                &av.data()[bi * m * k..][..m * k],
                false,
                &bv.data()[bs * k * n..][..k * n],
                false,
                &mut out[bi * m * n..][..m * n],
                false,
            );
        }
        let mut out_shape = batch_a.to_vec();
        out_shape.extend([m, n]);
        let out = Tensor::from_parts(out_shape, out);
        Ok(self.push(out, &[a, b], move |g, p, _| {
            let (ad, bd, gd) = (p[0].data(), p[1].data(), g.data());
            let mut ga = vec![0.0; ad.len()];
            let mut gb = vec![0.0; bd.len()];
            for bi in 0..batches {
                let bs = if shared_b { 0 } else { bi };
                let gsl = &gd[bi * m * n..][..m * n];
                // dA = dC · Bᵀ
                gemm(m, n, k, gsl, false, &bd[bs * k * n..][..k * n], true, &mut ga[bi * m * k..][..m * k], false);
                // dB (+)= Aᵀ · dC
                gemm(k, m, n, &ad[bi * m * k..][..m * k], true, gsl, false, &mut gb[bs * k * n..][..k * n], shared_b);
            }
            vec![
                Some(Tensor::from_parts(p[0].shape().to_vec(), ga)),
                Some(Tensor::from_parts(p[1].shape().to_vec(), gb)),
            ]
        }))
    }

    /// Swaps the last two axes.
    pub fn transpose(&self, x: Var) -> Result<Var> {
        let [xv] = self.values([x]);
        let sh = xv.shape();
        if sh.len() < 2 {
            return shape_err(format!("transpose needs rank >= 2, got {sh:?}"));
        }
        let (r, c) = (sh[sh.len() - 2], sh[sh.len() - 1]);
        let transpose_data = move |d: &[f64]| {
            let mut out = vec![0.0; d.len()];
            for (src, dst) in d.chunks(r * c).zip(out.chunks_mut(r * c)) {
                for i in 0..r {
                    for j in 0..c {
                        dst[j * r + i] = src[i * c + j];
                    }
                }
            }
            out
        };
        let mut out_shape = sh.to_vec();
        let len = out_shape.len();
        out_shape.swap(len - 1, len - 2);
        let out = Tensor::from_parts(out_shape, transpose_data(xv.data()));
        Ok(self.push(out, &[x], move |g, p, _| {
            // the gradient has the transposed layout (c×r), so swap back with roles exchanged
            let mut back = vec![0.0; g.numel()];
            for (src, dst) in g.data().chunks(r * c).zip(back.chunks_mut(r * c)) {
                for j in 0..c {
                    for i in 0..r {
                        dst[i * c + j] = src[j * r + i];
                    }
                }
            }
            vec![Some(Tensor::from_parts(p[0].shape().to_vec(), back))]
        }))
    }

    pub fn reshape(&self, x: Var, shape: &[usize]) -> Result<Var> {
        let [xv] = self.values([x]);
        let out = xv.reshape(shape)?;
        Ok(self.push(out, &[x], |g, p, _| {
            vec![Some(Tensor::from_parts(p[0].shape().to_vec(), g.data().to_vec()))]
        }))
    }

    /// Softmax along `axis`, stabilized by subtracting the running maximum.
    pub fn softmax(&self, x: Var, axis: usize) -> Result<Var> {
        let [xv] = self.values([x]);
        check_axis(axis, xv.rank())?;
        let (outer, len, inner) = split_at_axis(xv.shape(), axis);
        let xd = xv.data();
        let mut out = vec![0.0; xd.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |j: usize| (o * len + j) * inner + i;
                let mx = (0..len).map(|j| xd[at(j)]).fold(f64::NEG_INFINITY, f64::max);
                let mut sum = 0.0;
                for j in 0..len {
                    let e = (xd[at(j)] - mx).exp();
                    out[at(j)] = e;
                    sum += e;
                }
                for j in 0..len {
                    out[at(j)] /= sum;
                }
            }
        }
        let out = Tensor::from_parts(xv.shape().to_vec(), out);
        Ok(self.push(out, &[x], move |g, _, y| {
            let (gd, yd) = (g.data(), y.data());
            let mut gx = vec![0.0; gd.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let at = |j: usize| (o * len + j) * inner + i;
                    let dot: f64 = (0..len).map(|j| gd[at(j)] * yd[at(j)]).sum();
                    for j in 0..len {
                        gx[at(j)] = yd[at(j)] * (gd[at(j)] - dot);
                    }
                }
            }
            vec![Some(Tensor::from_parts(y.shape().to_vec(), gx))]
        }))
    }

    /// Reduces `axis` away. Max routes its gradient to the first maximal element.
    pub fn reduce(&self, x: Var, axis: usize, kind: ReduceKind) -> Result<Var> {
        let [xv] = self.values([x]);
        check_axis(axis, xv.rank())?;
        let (outer, len, inner) = split_at_axis(xv.shape(), axis);
        let xd = xv.data();
        let mut out = vec![0.0; outer * inner];
        let mut argmax = Vec::new();
        if kind == ReduceKind::Max {
            argmax = vec![0usize; outer * inner];
        }
        for o in 0..outer {
            for i in 0..inner {
                let at = |j: usize| (o * len + j) * inner + i;
                let dst = o * inner + i;
                match kind {
                    ReduceKind::Max => {
                        let mut best = 0;
                        for j in 1..len {
                            if xd[at(j)] > xd[at(best)] {
                                best = j;
                            }
                        }
                        argmax[dst] = best;
                        out[dst] = xd[at(best)];
                    }
                    ReduceKind::Sum | ReduceKind::Mean => {
                        let s: f64 = (0..len).map(|j| xd[at(j)]).sum();
                        out[dst] = if kind == ReduceKind::Mean { s / len as f64 } else { s };
                    }
                }
            }
        }
        let mut out_shape: Vec<usize> = xv.shape().to_vec();
        out_shape.remove(axis);
        if out_shape.is_empty() {
            out_shape.push(1);
        }
        let out = Tensor::from_parts(out_shape, out);
        Ok(self.push(out, &[x], move |g, p, _| {
            let gd = g.data();
            let mut gx = vec![0.0; p[0].numel()];
            for o in 0..outer {
                for i in 0..inner {
                    let src = o * inner + i;
                    let at = |j: usize| (o * len + j) * inner + i;
                    match kind {
                        ReduceKind::Max => gx[at(argmax[src])] += gd[src],
                        ReduceKind::Sum => (0..len).for_each(|j| gx[at(j)] += gd[src]),
                        ReduceKind::Mean => {
                            let v = gd[src] / len as f64;
                            (0..len).for_each(|j| gx[at(j)] += v)
                        }
                    }
                }
            }
            vec![Some(Tensor::from_parts(p[0].shape().to_vec(), gx))]
        }))
    }

    /// Concatenates along `axis`; all other extents must agree.
    pub fn concat(&self, xs: &[Var], axis: usize) -> Result<Var> {
        if xs.is_empty() {
            return Err(Error::Invalid("concat of zero tensors".into()));
        }
        let vals: Vec<_> = xs.iter().map(|&v| self.value(v)).collect();
        let first = vals[0].shape();
        check_axis(axis, first.len())?;
        for v in &vals[1..] {
            let s = v.shape();
            if s.len() != first.len()
                || s.iter().zip(first).enumerate().any(|(i, (a, b))| i != axis && a != b)
            {
                return shape_err(format!("concat along {axis}: {first:?} vs {s:?}"));
            }
        }
        let (outer, _, inner) = split_at_axis(first, axis);
        let lens: Vec<usize> = vals.iter().map(|v| v.shape()[axis]).collect();
        let total: usize = lens.iter().sum();
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (v, &l) in vals.iter().zip(&lens) {
                out.extend_from_slice(&v.data()[o * l * inner..][..l * inner]);
            }
        }
        let mut shape = first.to_vec();
        shape[axis] = total;
        let out = Tensor::from_parts(shape, out);
        Ok(self.push(out, xs, move |g, p, _| {
            let gd = g.data();
            let mut grads: Vec<Vec<f64>> = lens.iter().map(|&l| Vec::with_capacity(outer * l * inner)).collect();
            for o in 0..outer {
                let mut off = o * total * inner;
                for (gv, &l) in grads.iter_mut().zip(&lens) {
                    gv.extend_from_slice(&gd[off..off + l * inner]);
                    off += l * inner;
                }
            }
            grads
                .into_iter()
                .zip(p)
                .map(|(gv, pv)| Some(Tensor::from_parts(pv.shape().to_vec(), gv)))
                .collect()
        }))
    }

    /// Slice `[start, start+len)` of `axis`.
    pub fn narrow(&self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let [xv] = self.values([x]);
        check_axis(axis, xv.rank())?;
        let (outer, full, inner) = split_at_axis(xv.shape(), axis);
        if len == 0 || start + len > full {
            return shape_err(format!("narrow [{start}, {}) outside axis of {full}", start + len));
        }
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            out.extend_from_slice(&xv.data()[(o * full + start) * inner..][..len * inner]);
        }
        let mut shape = xv.shape().to_vec();
        shape[axis] = len;
        let out = Tensor::from_parts(shape, out);
        Ok(self.push(out, &[x], move |g, p, _| {
            let mut gx = vec![0.0; p[0].numel()];
            for o in 0..outer {
                gx[(o * full + start) * inner..][..len * inner]
                    .copy_from_slice(&g.data()[o * len * inner..][..len * inner]);
            }
            vec![Some(Tensor::from_parts(p[0].shape().to_vec(), gx))]
        }))
    }

    /// Selects rows (axis 0) in the given order; the gradient scatters additively.
    pub fn gather_rows(&self, x: Var, indices: &[usize]) -> Result<Var> {
        let [xv] = self.values([x]);
        let n = xv.shape()[0];
        let row = xv.numel() / n;
        if let Some(&bad) = indices.iter().find(|&&i| i >= n) {
            return Err(Error::Index { index: bad, len: n });
        }
        if indices.is_empty() {
            return Err(Error::Invalid("gather of zero rows".into()));
        }
        let mut out = Vec::with_capacity(indices.len() * row);
        for &i in indices {
            out.extend_from_slice(&xv.data()[i * row..][..row]);
        }
        let mut shape = xv.shape().to_vec();
        shape[0] = indices.len();
        let idx = indices.to_vec();
        let out = Tensor::from_parts(shape, out);
        Ok(self.push(out, &[x], move |g, p, _| {
            let mut gx = vec![0.0; p[0].numel()];
            for (k, &i) in idx.iter().enumerate() {
                let src = &g.data()[k * row..][..row];
                for (d, s) in gx[i * row..][..row].iter_mut().zip(src) {
                    *d += s;
                }
            }
            vec![Some(Tensor::from_parts(p[0].shape().to_vec(), gx))]
        }))
    }

    /// Picks individual elements by flat row-major index into a 1-D tensor.
    pub fn take(&self, x: Var, flat: &[usize]) -> Result<Var> {
        let [xv] = self.values([x]);
        let n = xv.numel();
        if let Some(&bad) = flat.iter().find(|&&i| i >= n) {
            return Err(Error::Index { index: bad, len: n });
        }
        if flat.is_empty() {
            return Err(Error::Invalid("take of zero elements".into()));
        }
        let out = Tensor::vector(flat.iter().map(|&i| xv.data()[i]).collect());
        let idx = flat.to_vec();
        Ok(self.push(out, &[x], move |g, p, _| {
            let mut gx = vec![0.0; p[0].numel()];
            for (k, &i) in idx.iter().enumerate() {
                gx[i] += g.data()[k];
            }
            vec![Some(Tensor::from_parts(p[0].shape().to_vec(), gx))]
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], d: &[f64]) -> Tensor {
        Tensor::new(shape, d.to_vec()).unwrap()
    }

    #[test]
    fn matmul_examples() {
        let tape = Tape::new();
        let a = tape.constant(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let b = tape.constant(t(&[2, 1], &[5.0, 6.0]));
        assert_eq!(tape.value(tape.matmul(a, b).unwrap()).data(), &[17.0, 39.0]);
        let eye = tape.constant(t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
        assert_eq!(tape.value(tape.matmul(eye, a).unwrap()).data(), &[1.0, 2.0, 3.0, 4.0]);
        let z = tape.constant(Tensor::zeros(&[2, 2]));
        assert_eq!(tape.value(tape.matmul(z, a).unwrap()).data(), &[0.0; 4]);
        let bad = tape.constant(Tensor::zeros(&[3, 1]));
        assert!(tape.matmul(a, bad).is_err());
    }

    #[test]
    fn batched_matmul() {
        let tape = Tape::new();
        let a = tape.constant(t(&[2, 1, 2], &[1.0, 2.0, 3.0, 4.0]));
        let b = tape.constant(t(&[2, 2, 1], &[1.0, 1.0, 2.0, 0.0]));
        assert_eq!(tape.value(tape.matmul(a, b).unwrap()).data(), &[3.0, 6.0]);
        let shared = tape.constant(t(&[2, 1], &[1.0, 1.0]));
        assert_eq!(tape.value(tape.matmul(a, shared).unwrap()).data(), &[3.0, 7.0]);
    }

    #[test]
    fn softmax_examples() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::vector(vec![1.0; 4]));
        assert_eq!(tape.value(tape.softmax(x, 0).unwrap()).data(), &[0.25; 4]);
        let y = tape.constant(Tensor::vector(vec![0.0, 3f64.ln()]));
        let s = tape.value(tape.softmax(y, 0).unwrap());
        assert!((s.data()[0] - 0.25).abs() < 1e-15 && (s.data()[1] - 0.75).abs() < 1e-15);
        let big = tape.constant(Tensor::vector(vec![1000.0, 1000.0]));
        assert_eq!(tape.value(tape.softmax(big, 0).unwrap()).data(), &[0.5, 0.5]);
        assert!(matches!(tape.softmax(x, 1), Err(Error::Axis { .. })));
    }

    #[test]
    fn pointwise_examples() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::vector(vec![-1.0, 2.0]));
        assert_eq!(tape.value(tape.relu(x)).data(), &[0.0, 2.0]);
        let z = tape.constant(Tensor::scalar(0.0));
        assert_eq!(tape.value(tape.sigmoid(z)).data(), &[0.5]);
        let a = tape.constant(Tensor::vector(vec![1.0, 2.0]));
        let b = tape.constant(Tensor::vector(vec![3.0]));
        assert_eq!(tape.value(tape.concat(&[a, b], 0).unwrap()).data(), &[1.0, 2.0, 3.0]);
        assert!(matches!(tape.log(x), Err(Error::Domain(_))));
        assert!(tape.log(z).is_err());
    }

    #[test]
    fn broadcasting_add_and_gradient() {
        let tape = Tape::new();
        let x = tape.leaf(t(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]), true);
        let b = tape.leaf(t(&[3], &[10.0, 20.0, 30.0]), true);
        let y = tape.add(x, b).unwrap();
        assert_eq!(tape.value(y).data(), &[11.0, 22.0, 33.0, 14.0, 25.0, 36.0]);
        let c = tape.leaf(t(&[2, 1], &[2.0, 3.0]), true);
        let loss = tape.sum_all(tape.mul(y, c).unwrap());
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(b).unwrap().data(), &[5.0, 5.0, 5.0]);
        assert_eq!(g.get(c).unwrap().data(), &[66.0, 75.0]);
    }

    #[test]
    fn reduce_examples() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![3.0, 1.0, 2.0]), true);
        assert_eq!(tape.value(tape.reduce(x, 0, ReduceKind::Max).unwrap()).item(), 3.0);
        let s = tape.constant(Tensor::vector(vec![1.0, 2.0, 3.0]));
        assert_eq!(tape.value(tape.reduce(s, 0, ReduceKind::Sum).unwrap()).item(), 6.0);
        let m = tape.constant(Tensor::vector(vec![2.0, 4.0]));
        assert_eq!(tape.value(tape.reduce(m, 0, ReduceKind::Mean).unwrap()).item(), 3.0);
        assert!(tape.reduce(m, 1, ReduceKind::Sum).is_err());
    }

    #[test]
    fn max_tie_routes_to_first() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![2.0, 5.0, 5.0]), true);
        let loss = tape.reduce(x, 0, ReduceKind::Max).unwrap();
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn gather_duplicates_accumulate() {
        let tape = Tape::new();
        let x = tape.leaf(t(&[3, 2], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]), true);
        let y = tape.gather_rows(x, &[2, 2]).unwrap();
        assert_eq!(tape.value(y).data(), &[5.0, 6.0, 5.0, 6.0]);
        let g = tape.backward(tape.sum_all(y)).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[0.0, 0.0, 0.0, 0.0, 2.0, 2.0]);
        let sw = tape.gather_rows(x, &[1, 0]).unwrap();
        assert_eq!(tape.value(sw).data(), &[3.0, 4.0, 1.0, 2.0]);
        assert!(matches!(tape.gather_rows(x, &[3]), Err(Error::Index { .. })));
    }

    #[test]
    fn narrow_and_transpose() {
        let tape = Tape::new();
        let x = tape.constant(t(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let n = tape.narrow(x, 1, 1, 2).unwrap();
        assert_eq!(tape.value(n).data(), &[2.0, 3.0, 5.0, 6.0]);
        let tr = tape.transpose(x).unwrap();
        assert_eq!(tape.value(tr).shape(), &[3, 2]);
        assert_eq!(tape.value(tr).data(), &[1.0, 4.0, 2.0, 5.0, 3.0, 6.0]);
    }
}
