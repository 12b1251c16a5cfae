//! Primitive operation catalog for the tape.
//!
//! Each method records the forward value plus an adjoint closure. Shape
//! mismatches are rejected up front with the op name and both shapes.

use super::buffer::{Buffer, Scalar};
use super::tape::{NodeId, Tape};
use crate::{Error, Result};

fn same_shape<S: Scalar>(op: &'static str, a: &Buffer<S>, b: &Buffer<S>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(op, format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

impl<S: Scalar> Tape<S> {
    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        same_shape("add", self.value(a), self.value(b))?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x + y)
            .collect();
        let value = Buffer::new(data, self.value(a).shape().to_vec())?;
        Ok(self.custom(
            "add",
            vec![a, b],
            value,
            Box::new(move |ctx| {
                let g = ctx.out_grad().data().to_vec();
                for (dst, &src) in ctx.grad_mut(a).iter_mut().zip(&g) {
                    *dst = *dst + src;
                }
                for (dst, &src) in ctx.grad_mut(b).iter_mut().zip(&g) {
                    *dst = *dst + src;
                }
            }),
        ))
    }

    pub fn subtract(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        same_shape("subtract", self.value(a), self.value(b))?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x - y)
            .collect();
        let value = Buffer::new(data, self.value(a).shape().to_vec())?;
        Ok(self.custom(
            "subtract",
            vec![a, b],
            value,
            Box::new(move |ctx| {
                let g = ctx.out_grad().data().to_vec();
                for (dst, &src) in ctx.grad_mut(a).iter_mut().zip(&g) {
                    *dst = *dst + src;
                }
                for (dst, &src) in ctx.grad_mut(b).iter_mut().zip(&g) {
                    *dst = *dst - src;
                }
            }),
        ))
    }

    pub fn multiply(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        same_shape("multiply", self.value(a), self.value(b))?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x * y)
            .collect();
        let value = Buffer::new(data, self.value(a).shape().to_vec())?;
        Ok(self.custom(
            "multiply",
            vec![a, b],
            value,
            Box::new(move |ctx| {
                let g = ctx.out_grad().data().to_vec();
                let av = ctx.val(a).data().to_vec();
                let bv = ctx.val(b).data().to_vec();
                for ((dst, &src), &y) in ctx.grad_mut(a).iter_mut().zip(&g).zip(&bv) {
                    *dst = *dst + src * y;
                }
                for ((dst, &src), &x) in ctx.grad_mut(b).iter_mut().zip(&g).zip(&av) {
                    *dst = *dst + src * x;
                }
            }),
        ))
    }

    /// Elementwise `a / max(b, eps)`, gradient through the clamped value.
    pub fn divide_eps(&mut self, a: NodeId, b: NodeId, eps: f64) -> Result<NodeId> {
        if eps <= 0.0 {
            return Err(Error::Config("divide_eps requires eps > 0".into()));
        }
        same_shape("divide_eps", self.value(a), self.value(b))?;
        let e = S::from_f64(eps);
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x / y.max(e))
            .collect();
        let value = Buffer::new(data, self.value(a).shape().to_vec())?;
        Ok(self.custom(
            "divide_eps",
            vec![a, b],
            value,
            Box::new(move |ctx| {
                let g = ctx.out_grad().data().to_vec();
                let av = ctx.val(a).data().to_vec();
                let bv = ctx.val(b).data().to_vec();
                {
                    let ga = ctx.grad_mut(a);
                    for i in 0..g.len() {
                        ga[i] = ga[i] + g[i] / bv[i].max(e);
                    }
                }
                let gb = ctx.grad_mut(b);
                for i in 0..g.len() {
                    if bv[i] >= e {
                        gb[i] = gb[i] - g[i] * av[i] / (bv[i] * bv[i]);
                    }
                }
            }),
        ))
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let data = self.value(x).data().iter().map(|&v| v.max(S::zero())).collect();
        let value = Buffer::new(data, self.value(x).shape().to_vec()).expect("same shape");
        self.custom(
            "relu",
            vec![x],
            value,
            Box::new(move |ctx| {
                let g = ctx.out_grad().data().to_vec();
                let xv = ctx.val(x).data().to_vec();
                let gx = ctx.grad_mut(x);
                for i in 0..g.len() {
                    if xv[i] > S::zero() {
                        gx[i] = gx[i] + g[i];
                    }
                }
            }),
        )
    }

    pub fn tanh_op(&mut self, x: NodeId) -> NodeId {
        let data: Vec<S> = self.value(x).data().iter().map(|&v| v.tanh()).collect();
        let value = Buffer::new(data, self.value(x).shape().to_vec()).expect("same shape");
        let out_cache = value.data().to_vec();
        self.custom(
            "tanh",
            vec![x],
            value,
            Box::new(move |ctx| {
                let g = ctx.out_grad().data().to_vec();
                let gx = ctx.grad_mut(x);
                for i in 0..g.len() {
                    let t = out_cache[i];
                    gx[i] = gx[i] + g[i] * (S::one() - t * t);
                }
            }),
        )
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let data: Vec<S> = self
            .value(x)
            .data()
            .iter()
            .map(|&v| S::one() / (S::one() + (-v).exp()))
            .collect();
        let value = Buffer::new(data, self.value(x).shape().to_vec()).expect("same shape");
        let out_cache = value.data().to_vec();
        self.custom(
            "sigmoid",
            vec![x],
            value,
            Box::new(move |ctx| {
                let g = ctx.out_grad().data().to_vec();
                let gx = ctx.grad_mut(x);
                for i in 0..g.len() {
                    let s = out_cache[i];
                    gx[i] = gx[i] + g[i] * s * (S::one() - s);
                }
            }),
        )
    }

    /// Row-wise softmax: 1-D buffers normalize as a whole (`axis` 0), 2-D
    /// buffers along `axis` 1.
    pub fn softmax(&mut self, x: NodeId, axis: usize) -> Result<NodeId> {
        let v = self.value(x);
        let ok = (v.shape().len() == 1 && axis == 0) || (v.shape().len() == 2 && axis == 1);
        if !ok {
            return Err(Error::shape(
                "softmax",
                format!("axis {} unsupported for shape {:?}", axis, v.shape()),
            ));
        }
        let (rows, cols) = v.rows_cols()?;
        let mut data = vec![S::zero(); rows * cols];
        for r in 0..rows {
            let row = &v.data()[r * cols..(r + 1) * cols];
            let max = row.iter().cloned().fold(S::neg_infinity(), S::max);
            let mut denom = S::zero();
            for (o, &val) in data[r * cols..(r + 1) * cols].iter_mut().zip(row) {
                let e = (val - max).exp();
                *o = e;
                denom = denom + e;
            }
            for o in &mut data[r * cols..(r + 1) * cols] {
                *o = *o / denom;
            }
        }
        let value = Buffer::new(data, v.shape().to_vec())?;
        let out_cache = value.data().to_vec();
        Ok(self.custom(
            "softmax",
            vec![x],
            value,
            Box::new(move |ctx| {
                let g = ctx.out_grad().data().to_vec();
                let gx = ctx.grad_mut(x);
                for r in 0..rows {
                    let s = &out_cache[r * cols..(r + 1) * cols];
                    let gr = &g[r * cols..(r + 1) * cols];
                    let dot: S = s.iter().zip(gr).map(|(&si, &gi)| si * gi).sum();
                    for c in 0..cols {
                        gx[r * cols + c] = gx[r * cols + c] + s[c] * (gr[c] - dot);
                    }
                }
            }),
        ))
    }

    /// Affine map `y = x Wᵀ + b` applied per row. `w` is `[out, in]`,
    /// `b` is `[out]`, `x` is `[in]` or `[n, in]`.
    pub fn dense(&mut self, w: NodeId, b: NodeId, x: NodeId) -> Result<NodeId> {
        let (wv, bv, xv) = (self.value(w), self.value(b), self.value(x));
        if wv.shape().len() != 2 {
            return Err(Error::shape("dense", format!("weights must be 2-D, got {:?}", wv.shape())));
        }
        let (out_dim, in_dim) = (wv.shape()[0], wv.shape()[1]);
        if bv.shape() != [out_dim] {
            return Err(Error::shape(
                "dense",
                format!("bias {:?} vs out dim {}", bv.shape(), out_dim),
            ));
        }
        let (rows, cols) = xv.rows_cols()?;
        if cols != in_dim {
            return Err(Error::shape(
                "dense",
                format!("input {:?} vs weight in dim {}", xv.shape(), in_dim),
            ));
        }
        let mut data = vec![S::zero(); rows * out_dim];
        {
            let wd = wv.data();
            let bd = bv.data();
            let xd = xv.data();
            for r in 0..rows {
                let xr = &xd[r * in_dim..(r + 1) * in_dim];
                let yr = &mut data[r * out_dim..(r + 1) * out_dim];
                for o in 0..out_dim {
                    let wrow = &wd[o * in_dim..(o + 1) * in_dim];
                    let mut acc = bd[o];
                    for i in 0..in_dim {
                        acc = acc + wrow[i] * xr[i];
                    }
                    yr[o] = acc;
                }
            }
        }
        let shape = if xv.shape().len() == 1 { vec![out_dim] } else { vec![rows, out_dim] };
        let value = Buffer::new(data, shape)?;
        Ok(self.custom(
            "dense",
            vec![w, b, x],
            value,
            Box::new(move |ctx| {
                let g = ctx.out_grad().data().to_vec();
                let wd = ctx.val(w).data().to_vec();
                let xd = ctx.val(x).data().to_vec();
                {
                    let gx = ctx.grad_mut(x);
                    for r in 0..rows {
                        let gr = &g[r * out_dim..(r + 1) * out_dim];
                        let gxr = &mut gx[r * in_dim..(r + 1) * in_dim];
                        for o in 0..out_dim {
                            let go = gr[o];
                            if go == S::zero() {
                                continue;
                            }
                            let wrow = &wd[o * in_dim..(o + 1) * in_dim];
                            for i in 0..in_dim {
                                gxr[i] = gxr[i] + go * wrow[i];
                            }
                        }
                    }
                }
                {
                    let gw = ctx.grad_mut(w);
                    for r in 0..rows {
                        let gr = &g[r * out_dim..(r + 1) * out_dim];
                        let xr = &xd[r * in_dim..(r + 1) * in_dim];
                        for o in 0..out_dim {
                            let go = gr[o];
                            if go == S::zero() {
                                continue;
                            }
                            let gwrow = &mut gw[o * in_dim..(o + 1) * in_dim];
                            for i in 0..in_dim {
                                gwrow[i] = gwrow[i] + go * xr[i];
                            }
                        }
                    }
                }
                let gb = ctx.grad_mut(b);
                for r in 0..rows {
                    let gr = &g[r * out_dim..(r + 1) * out_dim];
                    for o in 0..out_dim {
                        gb[o] = gb[o] + gr[o];
                    }
                }
            }),
        ))
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let total: S = self.value(x).data().iter().cloned().sum();
        self.custom(
            "sum",
            vec![x],
            Buffer::scalar(total),
            Box::new(move |ctx| {
                let g = ctx.out_grad().data()[0];
                for dst in ctx.grad_mut(x) {
                    *dst = *dst + g;
                }
            }),
        )
    }

    pub fn mean(&mut self, x: NodeId) -> NodeId {
        let n = self.value(x).len().max(1);
        let total: S = self.value(x).data().iter().cloned().sum();
        let inv = S::one() / S::from_f64(n as f64);
        self.custom(
            "mean",
            vec![x],
            Buffer::scalar(total * inv),
            Box::new(move |ctx| {
                let g = ctx.out_grad().data()[0] * inv;
                for dst in ctx.grad_mut(x) {
                    *dst = *dst + g;
                }
            }),
        )
    }

    pub fn l2_norm(&mut self, x: NodeId) -> NodeId {
        let norm = self
            .value(x)
            .data()
            .iter()
            .map(|&v| v * v)
            .sum::<S>()
            .sqrt();
        self.custom(
            "l2_norm",
            vec![x],
            Buffer::scalar(norm),
            Box::new(move |ctx| {
                let g = ctx.out_grad().data()[0];
                let n = ctx.out_val().data()[0];
                if n.as_f64() < 1e-12 {
                    return;
                }
                let xv = ctx.val(x).data().to_vec();
                let gx = ctx.grad_mut(x);
                for i in 0..xv.len() {
                    gx[i] = gx[i] + g * xv[i] / n;
                }
            }),
        )
    }

    /// Mean absolute error between two same-shape buffers.
    pub fn l1_loss(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        same_shape("l1_loss", self.value(a), self.value(b))?;
        let n = self.value(a).len().max(1);
        let inv = S::one() / S::from_f64(n as f64);
        let total: S = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| (x - y).abs())
            .sum();
        Ok(self.custom(
            "l1_loss",
            vec![a, b],
            Buffer::scalar(total * inv),
            Box::new(move |ctx| {
                let g = ctx.out_grad().data()[0] * inv;
                let av = ctx.val(a).data().to_vec();
                let bv = ctx.val(b).data().to_vec();
                {
                    let ga = ctx.grad_mut(a);
                    for i in 0..av.len() {
                        let d = av[i] - bv[i];
                        let s = if d > S::zero() {
                            S::one()
                        } else if d < S::zero() {
                            -S::one()
                        } else {
                            S::zero()
                        };
                        ga[i] = ga[i] + g * s;
                    }
                }
                let gb = ctx.grad_mut(b);
                for i in 0..av.len() {
                    let d = av[i] - bv[i];
                    let s = if d > S::zero() {
                        S::one()
                    } else if d < S::zero() {
                        -S::one()
                    } else {
                        S::zero()
                    };
                    gb[i] = gb[i] - g * s;
                }
            }),
        ))
    }

    /// Mean binary cross-entropy from logits, numerically stable form
    /// `max(z,0) - z t + ln(1 + e^{-|z|})`.
    pub fn bce_with_logits(&mut self, logits: NodeId, targets: NodeId) -> Result<NodeId> {
        same_shape("bce_with_logits", self.value(logits), self.value(targets))?;
        let n = self.value(logits).len().max(1);
        let inv = S::one() / S::from_f64(n as f64);
        let total: S = self
            .value(logits)
            .data()
            .iter()
            .zip(self.value(targets).data())
            .map(|(&z, &t)| z.max(S::zero()) - z * t + (S::one() + (-z.abs()).exp()).ln())
            .sum();
        Ok(self.custom(
            "bce_with_logits",
            vec![logits, targets],
            Buffer::scalar(total * inv),
            Box::new(move |ctx| {
                let g = ctx.out_grad().data()[0] * inv;
                let zv = ctx.val(logits).data().to_vec();
                let tv = ctx.val(targets).data().to_vec();
                {
                    let gz = ctx.grad_mut(logits);
                    for i in 0..zv.len() {
                        let s = S::one() / (S::one() + (-zv[i]).exp());
                        gz[i] = gz[i] + g * (s - tv[i]);
                    }
                }
                let gt = ctx.grad_mut(targets);
                for i in 0..zv.len() {
                    gt[i] = gt[i] - g * zv[i];
                }
            }),
        ))
    }

    /// Concatenation along the last axis; 2-D inputs must share row count.
    pub fn concat(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (av, bv) = (self.value(a), self.value(b));
        let (ra, ca) = av.rows_cols()?;
        let (rb, cb) = bv.rows_cols()?;
        if ra != rb || av.shape().len() != bv.shape().len() {
            return Err(Error::shape(
                "concat",
                format!("{:?} vs {:?}", av.shape(), bv.shape()),
            ));
        }
        let cols = ca + cb;
        let mut data = vec![S::zero(); ra * cols];
        for r in 0..ra {
            data[r * cols..r * cols + ca].copy_from_slice(&av.data()[r * ca..(r + 1) * ca]);
            data[r * cols + ca..(r + 1) * cols].copy_from_slice(&bv.data()[r * cb..(r + 1) * cb]);
        }
        let shape = if av.shape().len() == 1 { vec![cols] } else { vec![ra, cols] };
        let value = Buffer::new(data, shape)?;
        Ok(self.custom(
            "concat",
            vec![a, b],
            value,
            Box::new(move |ctx| {
                let g = ctx.out_grad().data().to_vec();
                {
                    let ga = ctx.grad_mut(a);
                    for r in 0..ra {
                        for c in 0..ca {
                            ga[r * ca + c] = ga[r * ca + c] + g[r * cols + c];
                        }
                    }
                }
                let gb = ctx.grad_mut(b);
                for r in 0..ra {
                    for c in 0..cb {
                        gb[r * cb + c] = gb[r * cb + c] + g[r * cols + ca + c];
                    }
                }
            }),
        ))
    }

    /// Column range `[start, end)` of a 1-D or 2-D buffer.
    pub fn slice_cols(&mut self, x: NodeId, start: usize, end: usize) -> Result<NodeId> {
        let v = self.value(x);
        let (rows, cols) = v.rows_cols()?;
        if start >= end || end > cols {
            return Err(Error::shape(
                "slice_cols",
                format!("range {start}..{end} out of {cols} columns"),
            ));
        }
        let width = end - start;
        let mut data = vec![S::zero(); rows * width];
        for r in 0..rows {
            data[r * width..(r + 1) * width]
                .copy_from_slice(&v.data()[r * cols + start..r * cols + end]);
        }
        let shape = if v.shape().len() == 1 { vec![width] } else { vec![rows, width] };
        let value = Buffer::new(data, shape)?;
        Ok(self.custom(
            "slice_cols",
            vec![x],
            value,
            Box::new(move |ctx| {
                let g = ctx.out_grad().data().to_vec();
                let gx = ctx.grad_mut(x);
                for r in 0..rows {
                    for c in 0..width {
                        gx[r * cols + start + c] = gx[r * cols + start + c] + g[r * width + c];
                    }
                }
            }),
        ))
    }

    /// Passes the value through and contributes exactly zero gradient.
    pub fn stop_gradient(&mut self, x: NodeId) -> NodeId {
        let value = self.value(x).clone();
        self.custom("stop_gradient", vec![x], value, Box::new(|_| {}))
    }

    /// Multiplies by a fixed scalar.
    pub fn scale(&mut self, x: NodeId, factor: f64) -> NodeId {
        let c = S::from_f64(factor);
        let data = self.value(x).data().iter().map(|&v| v * c).collect();
        let value = Buffer::new(data, self.value(x).shape().to_vec()).expect("same shape");
        self.custom(
            "scale",
            vec![x],
            value,
            Box::new(move |ctx| {
                let g = ctx.out_grad().data().to_vec();
                let gx = ctx.grad_mut(x);
                for i in 0..g.len() {
                    gx[i] = gx[i] + g[i] * c;
                }
            }),
        )
    }

    /// Reinterprets the buffer with a new shape of equal length.
    pub fn reshape(&mut self, x: NodeId, shape: Vec<usize>) -> Result<NodeId> {
        let n: usize = shape.iter().product();
        if n != self.value(x).len() {
            return Err(Error::shape(
                "reshape",
                format!("{:?} -> {:?}", self.value(x).shape(), shape),
            ));
        }
        let value = Buffer::new(self.value(x).data().to_vec(), shape)?;
        Ok(self.custom(
            "reshape",
            vec![x],
            value,
            Box::new(move |ctx| {
                let g = ctx.out_grad().data().to_vec();
                let gx = ctx.grad_mut(x);
                for i in 0..g.len() {
                    gx[i] = gx[i] + g[i];
                }
            }),
        ))
    }
}
