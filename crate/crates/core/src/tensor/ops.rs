//! Tensor operations with local-gradient closures.
//!
//! Shape errors here are programming errors and panic; the validated
//! fallible surface is [`super::apply`]. Every op computes its forward value
//! eagerly and, when any input is tracked, records a closure mapping the
//! upstream gradient to per-input gradients.

use super::tape::{record, should_record};
use super::Tensor;

/// How the right-hand side of an elementwise op lines up with the left.
enum Broadcast {
    Same,
    /// rhs is a single element applied everywhere.
    Scalar,
    /// rhs is a 1-D vector matching the last dimension.
    LastDim,
}

fn broadcast_kind(lhs: &Tensor, rhs: &Tensor, op: &str) -> Broadcast {
    if lhs.shape() == rhs.shape() {
        Broadcast::Same
    } else if rhs.len() == 1 {
        Broadcast::Scalar
    } else if rhs.ndim() == 1 && rhs.len() == *lhs.shape().last().unwrap_or(&0) {
        Broadcast::LastDim
    } else {
        panic!(
            "{op}: incompatible shapes {:?} and {:?}",
            lhs.shape(),
            rhs.shape()
        );
    }
}

fn colsum(grad: &[f64], cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; cols];
    for (i, g) in grad.iter().enumerate() {
        out[i % cols] += g;
    }
    out
}

impl Tensor {
    /// Matrix product. `self` must be 2-D `[m, k]`; `rhs` may have any rank
    /// with leading dimension `k`, giving an output of shape `[m, rest...]`.
    pub fn matmul(&self, rhs: &Tensor) -> Tensor {
        assert_eq!(self.ndim(), 2, "matmul lhs must be 2-D, got {:?}", self.shape());
        assert!(rhs.ndim() >= 1, "matmul rhs must have rank >= 1");
        let (m, k) = (self.shape()[0], self.shape()[1]);
        assert_eq!(
            rhs.shape()[0],
            k,
            "matmul inner dims: lhs {:?} rhs {:?}",
            self.shape(),
            rhs.shape()
        );
        let n: usize = rhs.shape()[1..].iter().product::<usize>().max(1);

        let a = self.data();
        let b = rhs.data();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for l in 0..k {
                let av = a[i * k + l];
                if av == 0.0 {
                    continue;
                }
                let brow = &b[l * n..(l + 1) * n];
                let orow = &mut out[i * n..(i + 1) * n];
                for j in 0..n {
                    orow[j] += av * brow[j];
                }
            }
        }
        let mut out_shape = vec![m];
        out_shape.extend_from_slice(&rhs.shape()[1..]);
        let out = Tensor::raw(out_shape, out, false);

        if !should_record(&[self, rhs]) {
            return out;
        }
        let a_arc = self.data_arc();
        let b_arc = rhs.data_arc();
        record(
            &[self, rhs],
            out,
            Box::new(move |g| {
                // dA[i,l] = sum_j g[i,j] * B[l,j]
                let mut da = vec![0.0; m * k];
                for i in 0..m {
                    for l in 0..k {
                        let mut acc = 0.0;
                        let grow = &g[i * n..(i + 1) * n];
                        let brow = &b_arc[l * n..(l + 1) * n];
                        for j in 0..n {
                            acc += grow[j] * brow[j];
                        }
                        da[i * k + l] = acc;
                    }
                }
                // dB[l,j] = sum_i A[i,l] * g[i,j]
                let mut db = vec![0.0; k * n];
                for i in 0..m {
                    for l in 0..k {
                        let av = a_arc[i * k + l];
                        if av == 0.0 {
                            continue;
                        }
                        let grow = &g[i * n..(i + 1) * n];
                        let brow = &mut db[l * n..(l + 1) * n];
                        for j in 0..n {
                            brow[j] += av * grow[j];
                        }
                    }
                }
                vec![da, db]
            }),
        )
    }

    /// Elementwise addition; rhs may be a scalar or a last-dimension vector.
    pub fn add(&self, rhs: &Tensor) -> Tensor {
        let kind = broadcast_kind(self, rhs, "add");
        let cols = *self.shape().last().unwrap_or(&1);
        let data: Vec<f64> = match kind {
            Broadcast::Same => self.data().iter().zip(rhs.data()).map(|(a, b)| a + b).collect(),
            Broadcast::Scalar => {
                let b = rhs.data()[0];
                self.data().iter().map(|a| a + b).collect()
            }
            Broadcast::LastDim => {
                let b = rhs.data();
                self.data()
                    .iter()
                    .enumerate()
                    .map(|(i, a)| a + b[i % cols])
                    .collect()
            }
        };
        let out = Tensor::raw(self.shape().to_vec(), data, false);
        if !should_record(&[self, rhs]) {
            return out;
        }
        record(
            &[self, rhs],
            out,
            Box::new(move |g| {
                let db = match kind {
                    Broadcast::Same => g.to_vec(),
                    Broadcast::Scalar => vec![g.iter().sum()],
                    Broadcast::LastDim => colsum(g, cols),
                };
                vec![g.to_vec(), db]
            }),
        )
    }

    /// Elementwise subtraction with the same broadcast rules as `add`.
    pub fn sub(&self, rhs: &Tensor) -> Tensor {
        let kind = broadcast_kind(self, rhs, "sub");
        let cols = *self.shape().last().unwrap_or(&1);
        let data: Vec<f64> = match kind {
            Broadcast::Same => self.data().iter().zip(rhs.data()).map(|(a, b)| a - b).collect(),
            Broadcast::Scalar => {
                let b = rhs.data()[0];
                self.data().iter().map(|a| a - b).collect()
            }
            Broadcast::LastDim => {
                let b = rhs.data();
                self.data()
                    .iter()
                    .enumerate()
                    .map(|(i, a)| a - b[i % cols])
                    .collect()
            }
        };
        let out = Tensor::raw(self.shape().to_vec(), data, false);
        if !should_record(&[self, rhs]) {
            return out;
        }
        record(
            &[self, rhs],
            out,
            Box::new(move |g| {
                let db = match kind {
                    Broadcast::Same => g.iter().map(|v| -v).collect(),
                    Broadcast::Scalar => vec![-g.iter().sum::<f64>()],
                    Broadcast::LastDim => colsum(g, cols).iter().map(|v| -v).collect(),
                };
                vec![g.to_vec(), db]
            }),
        )
    }

    /// Elementwise (Hadamard) product with the same broadcast rules as `add`.
    pub fn mul(&self, rhs: &Tensor) -> Tensor {
        let kind = broadcast_kind(self, rhs, "mul");
        let cols = *self.shape().last().unwrap_or(&1);
        let data: Vec<f64> = match kind {
            Broadcast::Same => self.data().iter().zip(rhs.data()).map(|(a, b)| a * b).collect(),
            Broadcast::Scalar => {
                let b = rhs.data()[0];
                self.data().iter().map(|a| a * b).collect()
            }
            Broadcast::LastDim => {
                let b = rhs.data();
                self.data()
                    .iter()
                    .enumerate()
                    .map(|(i, a)| a * b[i % cols])
                    .collect()
            }
        };
        let out = Tensor::raw(self.shape().to_vec(), data, false);
        if !should_record(&[self, rhs]) {
            return out;
        }
        let a_arc = self.data_arc();
        let b_arc = rhs.data_arc();
        record(
            &[self, rhs],
            out,
            Box::new(move |g| {
                let (da, db): (Vec<f64>, Vec<f64>) = match kind {
                    Broadcast::Same => (
                        g.iter().zip(b_arc.iter()).map(|(g, b)| g * b).collect(),
                        g.iter().zip(a_arc.iter()).map(|(g, a)| g * a).collect(),
                    ),
                    Broadcast::Scalar => (
                        g.iter().map(|g| g * b_arc[0]).collect(),
                        vec![g.iter().zip(a_arc.iter()).map(|(g, a)| g * a).sum()],
                    ),
                    Broadcast::LastDim => {
                        let da = g
                            .iter()
                            .enumerate()
                            .map(|(i, g)| g * b_arc[i % cols])
                            .collect();
                        let weighted: Vec<f64> =
                            g.iter().zip(a_arc.iter()).map(|(g, a)| g * a).collect();
                        (da, colsum(&weighted, cols))
                    }
                };
                vec![da, db]
            }),
        )
    }

    /// Multiply by a constant.
    pub fn scale(&self, factor: f64) -> Tensor {
        self.affine(factor, 0.0)
    }

    /// Negate.
    pub fn neg(&self) -> Tensor {
        self.affine(-1.0, 0.0)
    }

    /// `a * x + b` with constant scalars.
    pub fn affine(&self, a: f64, b: f64) -> Tensor {
        let data: Vec<f64> = self.data().iter().map(|x| a * x + b).collect();
        let out = Tensor::raw(self.shape().to_vec(), data, false);
        if !should_record(&[self]) {
            return out;
        }
        record(
            &[self],
            out,
            Box::new(move |g| vec![g.iter().map(|v| a * v).collect()]),
        )
    }

    /// Per-row affine transform of a tensor whose first dimension indexes
    /// rows: `y[r, ...] = x[r, ...] * scale[r] + offset[r]`. The scale and
    /// offset are constants (no gradient is produced for them).
    pub fn rows_affine(&self, scale: &[f64], offset: &[f64]) -> Tensor {
        let rows = self.shape()[0];
        assert_eq!(scale.len(), rows, "rows_affine scale length");
        assert_eq!(offset.len(), rows, "rows_affine offset length");
        let inner = self.len() / rows.max(1);
        let mut data = vec![0.0; self.len()];
        for r in 0..rows {
            for j in 0..inner {
                data[r * inner + j] = self.data()[r * inner + j] * scale[r] + offset[r];
            }
        }
        let out = Tensor::raw(self.shape().to_vec(), data, false);
        if !should_record(&[self]) {
            return out;
        }
        let scale = scale.to_vec();
        record(
            &[self],
            out,
            Box::new(move |g| {
                let mut dx = vec![0.0; g.len()];
                for r in 0..rows {
                    for j in 0..inner {
                        dx[r * inner + j] = g[r * inner + j] * scale[r];
                    }
                }
                vec![dx]
            }),
        )
    }

    /// Numerically stable logistic function.
    pub fn sigmoid(&self) -> Tensor {
        let data: Vec<f64> = self.data().iter().map(|&x| stable_sigmoid(x)).collect();
        let out = Tensor::raw(self.shape().to_vec(), data, false);
        if !should_record(&[self]) {
            return out;
        }
        let y = out.data_arc();
        record(
            &[self],
            out,
            Box::new(move |g| {
                vec![g
                    .iter()
                    .zip(y.iter())
                    .map(|(g, y)| g * y * (1.0 - y))
                    .collect()]
            }),
        )
    }

    pub fn tanh(&self) -> Tensor {
        let data: Vec<f64> = self.data().iter().map(|x| x.tanh()).collect();
        let out = Tensor::raw(self.shape().to_vec(), data, false);
        if !should_record(&[self]) {
            return out;
        }
        let y = out.data_arc();
        record(
            &[self],
            out,
            Box::new(move |g| {
                vec![g
                    .iter()
                    .zip(y.iter())
                    .map(|(g, y)| g * (1.0 - y * y))
                    .collect()]
            }),
        )
    }

    pub fn relu(&self) -> Tensor {
        let data: Vec<f64> = self.data().iter().map(|x| x.max(0.0)).collect();
        let out = Tensor::raw(self.shape().to_vec(), data, false);
        if !should_record(&[self]) {
            return out;
        }
        let x = self.data_arc();
        record(
            &[self],
            out,
            Box::new(move |g| {
                vec![g
                    .iter()
                    .zip(x.iter())
                    .map(|(g, x)| if *x > 0.0 { *g } else { 0.0 })
                    .collect()]
            }),
        )
    }

    /// Elementwise absolute value; subgradient 0 at the origin.
    pub fn abs(&self) -> Tensor {
        let data: Vec<f64> = self.data().iter().map(|x| x.abs()).collect();
        let out = Tensor::raw(self.shape().to_vec(), data, false);
        if !should_record(&[self]) {
            return out;
        }
        let x = self.data_arc();
        record(
            &[self],
            out,
            Box::new(move |g| {
                vec![g
                    .iter()
                    .zip(x.iter())
                    .map(|(g, x)| g * sign(*x))
                    .collect()]
            }),
        )
    }

    /// Softmax over the last dimension, with max subtraction for stability.
    pub fn softmax_lastdim(&self) -> Tensor {
        let cols = *self.shape().last().expect("softmax on empty shape");
        assert!(cols > 0);
        let rows = self.len() / cols;
        let mut data = vec![0.0; self.len()];
        for r in 0..rows {
            let row = &self.data()[r * cols..(r + 1) * cols];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut denom = 0.0;
            for (j, v) in row.iter().enumerate() {
                let e = (v - max).exp();
                data[r * cols + j] = e;
                denom += e;
            }
            for j in 0..cols {
                data[r * cols + j] /= denom;
            }
        }
        let out = Tensor::raw(self.shape().to_vec(), data, false);
        if !should_record(&[self]) {
            return out;
        }
        let y = out.data_arc();
        record(
            &[self],
            out,
            Box::new(move |g| {
                let mut dx = vec![0.0; g.len()];
                for r in 0..rows {
                    let base = r * cols;
                    let dot: f64 = (0..cols).map(|j| g[base + j] * y[base + j]).sum();
                    for j in 0..cols {
                        dx[base + j] = y[base + j] * (g[base + j] - dot);
                    }
                }
                vec![dx]
            }),
        )
    }

    /// Sum of all elements, as a `[1]`-shaped tensor.
    pub fn sum(&self) -> Tensor {
        let total: f64 = self.data().iter().sum();
        let out = Tensor::raw(vec![1], vec![total], false);
        if !should_record(&[self]) {
            return out;
        }
        let n = self.len();
        record(&[self], out, Box::new(move |g| vec![vec![g[0]; n]]))
    }

    /// Mean of all elements, as a `[1]`-shaped tensor.
    pub fn mean(&self) -> Tensor {
        let n = self.len();
        assert!(n > 0, "mean of empty tensor");
        let total: f64 = self.data().iter().sum();
        let out = Tensor::raw(vec![1], vec![total / n as f64], false);
        if !should_record(&[self]) {
            return out;
        }
        record(
            &[self],
            out,
            Box::new(move |g| vec![vec![g[0] / n as f64; n]]),
        )
    }

    /// Concatenate tensors along `axis`. All other dimensions must match.
    pub fn concat(axis: usize, parts: &[&Tensor]) -> Tensor {
        assert!(!parts.is_empty(), "concat of nothing");
        let ndim = parts[0].ndim();
        assert!(axis < ndim, "concat axis {axis} out of range for rank {ndim}");
        for p in parts {
            assert_eq!(p.ndim(), ndim, "concat rank mismatch");
            for d in 0..ndim {
                if d != axis {
                    assert_eq!(
                        p.shape()[d],
                        parts[0].shape()[d],
                        "concat dim {d} mismatch"
                    );
                }
            }
        }
        let outer: usize = parts[0].shape()[..axis].iter().product();
        let inner: usize = parts[0].shape()[axis + 1..].iter().product();
        let axis_sizes: Vec<usize> = parts.iter().map(|p| p.shape()[axis]).collect();
        let total_axis: usize = axis_sizes.iter().sum();

        let mut out_shape = parts[0].shape().to_vec();
        out_shape[axis] = total_axis;
        let mut data = vec![0.0; outer * total_axis * inner];
        for o in 0..outer {
            let mut offset = 0;
            for (p, &sz) in parts.iter().zip(&axis_sizes) {
                let src = &p.data()[o * sz * inner..(o + 1) * sz * inner];
                let dst_start = (o * total_axis + offset) * inner;
                data[dst_start..dst_start + sz * inner].copy_from_slice(src);
                offset += sz;
            }
        }
        let out = Tensor::raw(out_shape, data, false);
        if !should_record(parts) {
            return out;
        }
        record(
            parts,
            out,
            Box::new(move |g| {
                let mut grads: Vec<Vec<f64>> = axis_sizes
                    .iter()
                    .map(|sz| vec![0.0; outer * sz * inner])
                    .collect();
                for o in 0..outer {
                    let mut offset = 0;
                    for (gi, &sz) in grads.iter_mut().zip(&axis_sizes) {
                        let src_start = (o * total_axis + offset) * inner;
                        gi[o * sz * inner..(o + 1) * sz * inner]
                            .copy_from_slice(&g[src_start..src_start + sz * inner]);
                        offset += sz;
                    }
                }
                grads
            }),
        )
    }

    /// Contiguous slice `[start, start+len)` along `axis`.
    pub fn slice(&self, axis: usize, start: usize, len: usize) -> Tensor {
        let ndim = self.ndim();
        assert!(axis < ndim, "slice axis {axis} out of range for rank {ndim}");
        let dim = self.shape()[axis];
        assert!(
            start + len <= dim,
            "slice [{start}, {}) out of range for dim {dim}",
            start + len
        );
        let outer: usize = self.shape()[..axis].iter().product();
        let inner: usize = self.shape()[axis + 1..].iter().product();

        let mut out_shape = self.shape().to_vec();
        out_shape[axis] = len;
        let mut data = vec![0.0; outer * len * inner];
        for o in 0..outer {
            let src_start = (o * dim + start) * inner;
            data[o * len * inner..(o + 1) * len * inner]
                .copy_from_slice(&self.data()[src_start..src_start + len * inner]);
        }
        let out = Tensor::raw(out_shape, data, false);
        if !should_record(&[self]) {
            return out;
        }
        let full = self.len();
        record(
            &[self],
            out,
            Box::new(move |g| {
                let mut dx = vec![0.0; full];
                for o in 0..outer {
                    let dst_start = (o * dim + start) * inner;
                    dx[dst_start..dst_start + len * inner]
                        .copy_from_slice(&g[o * len * inner..(o + 1) * len * inner]);
                }
                vec![dx]
            }),
        )
    }

    /// Transpose of a 2-D tensor.
    pub fn transpose(&self) -> Tensor {
        assert_eq!(self.ndim(), 2, "transpose requires a 2-D tensor");
        let (m, n) = (self.shape()[0], self.shape()[1]);
        let mut data = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                data[j * m + i] = self.data()[i * n + j];
            }
        }
        let out = Tensor::raw(vec![n, m], data, false);
        if !should_record(&[self]) {
            return out;
        }
        record(
            &[self],
            out,
            Box::new(move |g| {
                let mut dx = vec![0.0; m * n];
                for j in 0..n {
                    for i in 0..m {
                        dx[i * n + j] = g[j * m + i];
                    }
                }
                vec![dx]
            }),
        )
    }

    /// View with a new shape of equal element count.
    pub fn reshape(&self, shape: &[usize]) -> Tensor {
        let numel: usize = shape.iter().product();
        assert_eq!(numel, self.len(), "reshape {:?} -> {:?}", self.shape(), shape);
        let out = Tensor::raw(shape.to_vec(), self.data().to_vec(), false);
        if !should_record(&[self]) {
            return out;
        }
        record(&[self], out, Box::new(move |g| vec![g.to_vec()]))
    }

    /// Causal dilated 1-D convolution over the trailing time axis.
    ///
    /// `self` is `[batch, in_ch, T]`, `weight` is `[out_ch, in_ch, k]`.
    /// The input is implicitly left-padded with `(k-1)*dilation` zeros so
    /// the output has shape `[batch, out_ch, T]` and position `t` never sees
    /// inputs later than `t`.
    pub fn conv1d_dilated(&self, weight: &Tensor, bias: Option<&Tensor>, dilation: usize) -> Tensor {
        assert_eq!(self.ndim(), 3, "conv input must be [batch, ch, time]");
        assert_eq!(weight.ndim(), 3, "conv weight must be [out, in, k]");
        assert!(dilation >= 1, "dilation must be >= 1");
        let (batch, in_ch, t_len) = (self.shape()[0], self.shape()[1], self.shape()[2]);
        let (out_ch, w_in, k) = (weight.shape()[0], weight.shape()[1], weight.shape()[2]);
        assert_eq!(in_ch, w_in, "conv channel mismatch");
        if let Some(b) = bias {
            assert_eq!(b.len(), out_ch, "conv bias length");
        }

        let pad = (k - 1) * dilation;
        let x = self.data();
        let w = weight.data();
        let mut data = vec![0.0; batch * out_ch * t_len];
        for bi in 0..batch {
            for o in 0..out_ch {
                let base = (bi * out_ch + o) * t_len;
                if let Some(b) = bias {
                    let bv = b.data()[o];
                    for t in 0..t_len {
                        data[base + t] = bv;
                    }
                }
                for i in 0..in_ch {
                    let xrow = &x[(bi * in_ch + i) * t_len..(bi * in_ch + i + 1) * t_len];
                    for j in 0..k {
                        let wv = w[(o * in_ch + i) * k + j];
                        if wv == 0.0 {
                            continue;
                        }
                        // padded index t + j*dilation maps to input t + j*d - pad
                        let shift = pad - j * dilation;
                        for t in shift..t_len {
                            data[base + t] += wv * xrow[t - shift];
                        }
                    }
                }
            }
        }
        let out = Tensor::raw(vec![batch, out_ch, t_len], data, false);

        let mut inputs: Vec<&Tensor> = vec![self, weight];
        if let Some(b) = bias {
            inputs.push(b);
        }
        if !should_record(&inputs) {
            return out;
        }
        let x_arc = self.data_arc();
        let w_arc = weight.data_arc();
        let has_bias = bias.is_some();
        record(
            &inputs,
            out,
            Box::new(move |g| {
                let mut dx = vec![0.0; batch * in_ch * t_len];
                let mut dw = vec![0.0; out_ch * in_ch * k];
                for bi in 0..batch {
                    for o in 0..out_ch {
                        let grow = &g[(bi * out_ch + o) * t_len..(bi * out_ch + o + 1) * t_len];
                        for i in 0..in_ch {
                            let xbase = (bi * in_ch + i) * t_len;
                            for j in 0..k {
                                let shift = pad - j * dilation;
                                let wv = w_arc[(o * in_ch + i) * k + j];
                                let mut wacc = 0.0;
                                for t in shift..t_len {
                                    let src = t - shift;
                                    wacc += grow[t] * x_arc[xbase + src];
                                    dx[xbase + src] += grow[t] * wv;
                                }
                                dw[(o * in_ch + i) * k + j] += wacc;
                            }
                        }
                    }
                }
                let mut grads = vec![dx, dw];
                if has_bias {
                    let mut db = vec![0.0; out_ch];
                    for bi in 0..batch {
                        for o in 0..out_ch {
                            let grow =
                                &g[(bi * out_ch + o) * t_len..(bi * out_ch + o + 1) * t_len];
                            db[o] += grow.iter().sum::<f64>();
                        }
                    }
                    grads.push(db);
                }
                grads
            }),
        )
    }

    /// Real discrete Fourier transform over the trailing time axis.
    ///
    /// Input `[..., T]` yields `[..., 2, B]` with `B = floor(T/2) + 1`:
    /// index 0 of the new axis holds the real parts, index 1 the imaginary
    /// parts of the onesided spectrum.
    pub fn dft_real(&self) -> Tensor {
        let t_len = *self.shape().last().expect("dft on empty shape");
        assert!(t_len >= 1);
        let bins = t_len / 2 + 1;
        let series = self.len() / t_len;
        let (cos_tab, sin_tab) = trig_tables(t_len, bins);

        let mut data = vec![0.0; series * 2 * bins];
        for s in 0..series {
            let x = &self.data()[s * t_len..(s + 1) * t_len];
            for b in 0..bins {
                let mut re = 0.0;
                let mut im = 0.0;
                for (t, &xv) in x.iter().enumerate() {
                    re += xv * cos_tab[b * t_len + t];
                    im -= xv * sin_tab[b * t_len + t];
                }
                data[(s * 2) * bins + b] = re;
                data[(s * 2 + 1) * bins + b] = im;
            }
        }
        let mut out_shape = self.shape()[..self.ndim() - 1].to_vec();
        out_shape.push(2);
        out_shape.push(bins);
        let out = Tensor::raw(out_shape, data, false);
        if !should_record(&[self]) {
            return out;
        }
        record(
            &[self],
            out,
            Box::new(move |g| {
                let (cos_tab, sin_tab) = trig_tables(t_len, bins);
                let mut dx = vec![0.0; series * t_len];
                for s in 0..series {
                    for t in 0..t_len {
                        let mut acc = 0.0;
                        for b in 0..bins {
                            acc += g[(s * 2) * bins + b] * cos_tab[b * t_len + t]
                                - g[(s * 2 + 1) * bins + b] * sin_tab[b * t_len + t];
                        }
                        dx[s * t_len + t] = acc;
                    }
                }
                vec![dx]
            }),
        )
    }

    /// Inverse of [`Tensor::dft_real`]: `[..., 2, B]` back to `[..., t_len]`.
    pub fn idft_real(&self, t_len: usize) -> Tensor {
        assert!(self.ndim() >= 2, "idft input must be [..., 2, bins]");
        let bins = *self.shape().last().unwrap();
        assert_eq!(self.shape()[self.ndim() - 2], 2, "idft expects a re/im axis");
        assert_eq!(bins, t_len / 2 + 1, "idft bin count vs t_len");
        let series = self.len() / (2 * bins);
        let coef = bin_coefficients(t_len, bins);
        let (cos_tab, sin_tab) = trig_tables(t_len, bins);

        let mut data = vec![0.0; series * t_len];
        for s in 0..series {
            let re = &self.data()[(s * 2) * bins..(s * 2 + 1) * bins];
            let im = &self.data()[(s * 2 + 1) * bins..(s * 2 + 2) * bins];
            for t in 0..t_len {
                let mut acc = 0.0;
                for b in 0..bins {
                    acc += coef[b]
                        * (re[b] * cos_tab[b * t_len + t] - im[b] * sin_tab[b * t_len + t]);
                }
                data[s * t_len + t] = acc / t_len as f64;
            }
        }
        let mut out_shape = self.shape()[..self.ndim() - 2].to_vec();
        out_shape.push(t_len);
        let out = Tensor::raw(out_shape, data, false);
        if !should_record(&[self]) {
            return out;
        }
        record(
            &[self],
            out,
            Box::new(move |g| {
                let coef = bin_coefficients(t_len, bins);
                let (cos_tab, sin_tab) = trig_tables(t_len, bins);
                let mut ds = vec![0.0; series * 2 * bins];
                for s in 0..series {
                    let grow = &g[s * t_len..(s + 1) * t_len];
                    for b in 0..bins {
                        let mut dre = 0.0;
                        let mut dim = 0.0;
                        for (t, &gv) in grow.iter().enumerate() {
                            dre += gv * cos_tab[b * t_len + t];
                            dim -= gv * sin_tab[b * t_len + t];
                        }
                        ds[(s * 2) * bins + b] = coef[b] * dre / t_len as f64;
                        ds[(s * 2 + 1) * bins + b] = coef[b] * dim / t_len as f64;
                    }
                }
                vec![ds]
            }),
        )
    }

    /// Centered moving average over the trailing axis with edge replication.
    /// `window` must be odd.
    pub fn moving_avg_centered(&self, window: usize) -> Tensor {
        assert!(window >= 1 && window % 2 == 1, "window must be odd, got {window}");
        let t_len = *self.shape().last().expect("moving average on empty shape");
        assert!(window <= t_len, "window {window} exceeds length {t_len}");
        let series = self.len() / t_len;
        let radius = (window / 2) as isize;
        let w = window as f64;

        let clamp = |t: isize| -> usize { t.clamp(0, t_len as isize - 1) as usize };
        let mut data = vec![0.0; self.len()];
        for s in 0..series {
            let x = &self.data()[s * t_len..(s + 1) * t_len];
            for t in 0..t_len {
                let mut acc = 0.0;
                for j in -radius..=radius {
                    acc += x[clamp(t as isize + j)];
                }
                data[s * t_len + t] = acc / w;
            }
        }
        let out = Tensor::raw(self.shape().to_vec(), data, false);
        if !should_record(&[self]) {
            return out;
        }
        record(
            &[self],
            out,
            Box::new(move |g| {
                let clamp = |t: isize| -> usize { t.clamp(0, t_len as isize - 1) as usize };
                let mut dx = vec![0.0; g.len()];
                for s in 0..series {
                    for t in 0..t_len {
                        let gv = g[s * t_len + t] / w;
                        for j in -radius..=radius {
                            dx[s * t_len + clamp(t as isize + j)] += gv;
                        }
                    }
                }
                vec![dx]
            }),
        )
    }
}

pub(crate) fn stable_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// cos/sin lookup tables indexed `[bin * t_len + t]` at angle `2*pi*b*t/T`.
fn trig_tables(t_len: usize, bins: usize) -> (Vec<f64>, Vec<f64>) {
    let mut cos_tab = vec![0.0; bins * t_len];
    let mut sin_tab = vec![0.0; bins * t_len];
    let step = 2.0 * std::f64::consts::PI / t_len as f64;
    for b in 0..bins {
        for t in 0..t_len {
            let angle = step * (b * t % t_len) as f64;
            cos_tab[b * t_len + t] = angle.cos();
            sin_tab[b * t_len + t] = angle.sin();
        }
    }
    (cos_tab, sin_tab)
}

/// Reconstruction weight per onesided bin: 1 for DC and (even T) Nyquist,
/// 2 for every interior bin.
fn bin_coefficients(t_len: usize, bins: usize) -> Vec<f64> {
    (0..bins)
        .map(|b| {
            if b == 0 || (t_len % 2 == 0 && b == bins - 1) {
                1.0
            } else {
                2.0
            }
        })
        .collect()
}
