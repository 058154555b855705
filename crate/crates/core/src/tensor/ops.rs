use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::array::Tensor;
use super::tape::{Node, Tape, Var};
use super::{EXP_CEIL, LOG_FLOOR};

/// Shape-preserving single-input operations.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Unary<S> {
    Elu,
    Relu,
    Tanh,
    Negate,
    Scale(S),
    Exp,
    Log,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Binary {
    Add,
    Sub,
    Mul,
}

pub(crate) enum Op<S> {
    Leaf,
    MatMul {
        a: usize,
        b: usize,
        m: usize,
        k: usize,
        n: usize,
    },
    Transpose {
        x: usize,
        rows: usize,
        cols: usize,
    },
    ConvTemporal {
        x: usize,
        kernel: usize,
        geom: TemporalGeom,
    },
    ConvSpatial {
        x: usize,
        kernel: usize,
        geom: SpatialGeom,
    },
    ChannelAffine {
        x: usize,
        gain: usize,
        bias: usize,
        axes: FeatureAxes,
    },
    AddBias {
        x: usize,
        bias: usize,
        axes: FeatureAxes,
    },
    AvgPool {
        x: usize,
        outer: usize,
        t_in: usize,
        width: usize,
        t_out: usize,
    },
    Reshape {
        x: usize,
    },
    Unary {
        x: usize,
        kind: Unary<S>,
    },
    Binary {
        a: usize,
        b: usize,
        kind: Binary,
    },
    Cosine {
        w: usize,
        v: usize,
        rows_w: usize,
        rows_v: usize,
        d: usize,
        w_hat: Vec<S>,
        v_hat: Vec<S>,
        w_norm: Vec<S>,
        v_norm: Vec<S>,
    },
    LogSoftmax {
        x: usize,
        rows: usize,
        cols: usize,
        axis: usize,
    },
    Trace {
        x: usize,
        n: usize,
    },
    Sum {
        x: usize,
    },
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct TemporalGeom {
    n: usize,
    c: usize,
    t: usize,
    filters: usize,
    width: usize,
    stride: usize,
    t_out: usize,
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct SpatialGeom {
    n: usize,
    c_in: usize,
    t: usize,
    filters: usize,
    groups: usize,
}

/// `x` viewed as `[outer, features, inner]`.
#[derive(Clone, Copy, Debug)]
pub(crate) struct FeatureAxes {
    outer: usize,
    features: usize,
    inner: usize,
}

impl<S> Op<S> {
    pub(crate) fn inputs(&self) -> Vec<usize> {
        match *self {
            Op::Leaf => vec![],
            Op::MatMul { a, b, .. } | Op::Binary { a, b, .. } => vec![a, b],
            Op::ConvTemporal { x, kernel, .. } | Op::ConvSpatial { x, kernel, .. } => {
                vec![x, kernel]
            }
            Op::ChannelAffine { x, gain, bias, .. } => vec![x, gain, bias],
            Op::AddBias { x, bias, .. } => vec![x, bias],
            Op::Cosine { w, v, .. } => vec![w, v],
            Op::Transpose { x, .. }
            | Op::AvgPool { x, .. }
            | Op::Reshape { x }
            | Op::Unary { x, .. }
            | Op::LogSoftmax { x, .. }
            | Op::Trace { x, .. }
            | Op::Sum { x } => vec![x],
        }
    }
}

/// `(batched, n, channels, time)` for a `[C, T]` or `[n, C, T]` tensor.
fn signal_dims(dims: &[usize]) -> Result<(bool, usize, usize, usize)> {
    match *dims {
        [c, t] => Ok((false, 1, c, t)),
        [n, c, t] => Ok((true, n, c, t)),
        _ => Err(Error::shape(format!(
            "expected a [C, T] or [n, C, T] signal, got {dims:?}"
        ))),
    }
}

fn feature_axes(dims: &[usize], axis: usize) -> Result<FeatureAxes> {
    if axis >= dims.len() {
        return Err(Error::shape(format!("axis {axis} out of range for {dims:?}")));
    }
    Ok(FeatureAxes {
        outer: dims[..axis].iter().product(),
        features: dims[axis],
        inner: dims[axis + 1..].iter().product(),
    })
}

impl<S: Scalar> Tape<S> {
    /// `c[i, j] = Σ_t a[i, t] · b[t, j]`
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (m, k, k2, n) = match (ta.dims(), tb.dims()) {
            (&[m, k], &[k2, n]) => (m, k, k2, n),
            (da, db) => return Err(Error::shape(format!("matmul of {da:?} and {db:?}"))),
        };
        if k != k2 {
            return Err(Error::shape(format!(
                "matmul inner dims differ: [{m}, {k}] x [{k2}, {n}]"
            )));
        }
        let out = matmul_raw(ta.data(), tb.data(), m, k, n);
        let value = Tensor::new([m, n], out)?;
        Ok(self.push(value, Op::MatMul { a: a.0, b: b.0, m, k, n }))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let tx = self.value(x);
        let &[rows, cols] = tx.dims() else {
            return Err(Error::shape(format!("transpose of {:?}", tx.dims())));
        };
        let out = transpose_raw(tx.data(), rows, cols);
        let value = Tensor::new([cols, rows], out)?;
        Ok(self.push(value, Op::Transpose { x: x.0, rows, cols }))
    }

    /// Valid cross-correlation of every input channel with every filter.
    ///
    /// `x` is `[C, T]` or `[n, C, T]`, `kernel` is `[F, 1, K]`; output row
    /// `f·C + c` holds channel `c` filtered by `f`, length `(T − K)/stride + 1`.
    pub fn conv_temporal(&mut self, x: Var, kernel: Var, stride: usize) -> Result<Var> {
        let (tx, tk) = (self.value(x), self.value(kernel));
        let (batched, n, c, t) = signal_dims(tx.dims())?;
        let &[filters, 1, width] = tk.dims() else {
            return Err(Error::shape(format!(
                "temporal kernel must be [F, 1, K], got {:?}",
                tk.dims()
            )));
        };
        if stride == 0 {
            return Err(Error::param("stride must be positive"));
        }
        if width == 0 || width > t {
            return Err(Error::shape(format!(
                "temporal kernel width {width} does not fit {t} samples"
            )));
        }
        let t_out = (t - width) / stride + 1;
        let geom = TemporalGeom {
            n,
            c,
            t,
            filters,
            width,
            stride,
            t_out,
        };
        let mut out = vec![S::zero(); n * filters * c * t_out];
        let (xd, kd) = (tx.data(), tk.data());
        out.par_chunks_mut((filters * c * t_out).max(1))
            .enumerate()
            .for_each(|(b, ob)| {
                let xb = &xd[b * c * t..(b + 1) * c * t];
                for f in 0..filters {
                    let kf = &kd[f * width..(f + 1) * width];
                    for ch in 0..c {
                        let xc = &xb[ch * t..(ch + 1) * t];
                        let orow = &mut ob[(f * c + ch) * t_out..(f * c + ch + 1) * t_out];
                        if stride == 1 {
                            for (j, &kv) in kf.iter().enumerate() {
                                axpy(kv, &xc[j..j + t_out], orow);
                            }
                        } else {
                            for (to, o) in orow.iter_mut().enumerate() {
                                let s = &xc[to * stride..to * stride + width];
                                *o = dot(s, kf);
                            }
                        }
                    }
                }
            });
        let dims = if batched {
            vec![n, filters * c, t_out]
        } else {
            vec![filters * c, t_out]
        };
        let value = Tensor::new(dims, out)?;
        Ok(self.push(
            value,
            Op::ConvTemporal {
                x: x.0,
                kernel: kernel.0,
                geom,
            },
        ))
    }

    /// Per-timepoint channel projection: `out[f, t] = Σ_c kernel[f, c] · x[c, t]`.
    pub fn conv_spatial(&mut self, x: Var, kernel: Var) -> Result<Var> {
        self.conv_spatial_grouped(x, kernel, 1)
    }

    /// Grouped spatial convolution. Input rows are split into `groups`
    /// contiguous blocks; filter `f` sees only block `f / (F / groups)`.
    /// `kernel` is `[F, C / groups, 1]`.
    pub fn conv_spatial_grouped(&mut self, x: Var, kernel: Var, groups: usize) -> Result<Var> {
        let (tx, tk) = (self.value(x), self.value(kernel));
        let (batched, n, c_in, t) = signal_dims(tx.dims())?;
        let &[filters, span, 1] = tk.dims() else {
            return Err(Error::shape(format!(
                "spatial kernel must be [F, C, 1], got {:?}",
                tk.dims()
            )));
        };
        if groups == 0 || c_in % groups != 0 || filters % groups != 0 {
            return Err(Error::shape(format!(
                "{groups} groups do not divide {c_in} channels and {filters} filters"
            )));
        }
        if span != c_in / groups {
            return Err(Error::shape(format!(
                "spatial kernel spans {span} channels, input group has {}",
                c_in / groups
            )));
        }
        let geom = SpatialGeom {
            n,
            c_in,
            t,
            filters,
            groups,
        };
        let per_group = filters / groups;
        let mut out = vec![S::zero(); n * filters * t];
        let (xd, kd) = (tx.data(), tk.data());
        out.par_chunks_mut((filters * t).max(1))
            .enumerate()
            .for_each(|(b, ob)| {
                let xb = &xd[b * c_in * t..(b + 1) * c_in * t];
                for f in 0..filters {
                    let g = f / per_group;
                    let orow = &mut ob[f * t..(f + 1) * t];
                    for cc in 0..span {
                        let w = kd[f * span + cc];
                        let xrow = &xb[(g * span + cc) * t..(g * span + cc + 1) * t];
                        for (o, &xv) in orow.iter_mut().zip(xrow) {
                            *o += w * xv;
                        }
                    }
                }
            });
        let dims = if batched {
            vec![n, filters, t]
        } else {
            vec![filters, t]
        };
        let value = Tensor::new(dims, out)?;
        Ok(self.push(
            value,
            Op::ConvSpatial {
                x: x.0,
                kernel: kernel.0,
                geom,
            },
        ))
    }

    /// `y = gain[f] · x + bias[f]` along feature axis `axis`.
    pub fn channel_affine(&mut self, x: Var, gain: Var, bias: Var, axis: usize) -> Result<Var> {
        let tx = self.value(x);
        let axes = feature_axes(tx.dims(), axis)?;
        let (tg, tb) = (self.value(gain), self.value(bias));
        if tg.numel() != axes.features || tb.numel() != axes.features {
            return Err(Error::shape(format!(
                "affine parameters of {} and {} values for {} features",
                tg.numel(),
                tb.numel(),
                axes.features
            )));
        }
        let (xd, gd, bd) = (tx.data(), tg.data(), tb.data());
        let mut out = Vec::with_capacity(xd.len());
        for o in 0..axes.outer {
            for f in 0..axes.features {
                let base = (o * axes.features + f) * axes.inner;
                out.extend(xd[base..base + axes.inner].iter().map(|&v| gd[f] * v + bd[f]));
            }
        }
        let value = Tensor::new(tx.dims().to_vec(), out)?;
        Ok(self.push(
            value,
            Op::ChannelAffine {
                x: x.0,
                gain: gain.0,
                bias: bias.0,
                axes,
            },
        ))
    }

    /// `y = x + bias[f]` along feature axis `axis`.
    pub fn add_bias(&mut self, x: Var, bias: Var, axis: usize) -> Result<Var> {
        let tx = self.value(x);
        let axes = feature_axes(tx.dims(), axis)?;
        let tb = self.value(bias);
        if tb.numel() != axes.features {
            return Err(Error::shape(format!(
                "bias of {} values for {} features",
                tb.numel(),
                axes.features
            )));
        }
        let (xd, bd) = (tx.data(), tb.data());
        let mut out = Vec::with_capacity(xd.len());
        for o in 0..axes.outer {
            for f in 0..axes.features {
                let base = (o * axes.features + f) * axes.inner;
                out.extend(xd[base..base + axes.inner].iter().map(|&v| v + bd[f]));
            }
        }
        let value = Tensor::new(tx.dims().to_vec(), out)?;
        Ok(self.push(
            value,
            Op::AddBias {
                x: x.0,
                bias: bias.0,
                axes,
            },
        ))
    }

    /// Non-overlapping mean pooling along the last axis; a trailing
    /// remainder shorter than `width` is dropped.
    pub fn avg_pool_time(&mut self, x: Var, width: usize) -> Result<Var> {
        let tx = self.value(x);
        let Some((&t_in, lead)) = tx.dims().split_last() else {
            return Err(Error::shape("pooling a rank-0 tensor"));
        };
        if width == 0 || width > t_in {
            return Err(Error::shape(format!(
                "pool width {width} does not fit {t_in} samples"
            )));
        }
        let t_out = t_in / width;
        let outer: usize = lead.iter().product();
        let inv = S::one() / S::of_usize(width);
        let xd = tx.data();
        let mut out = Vec::with_capacity(outer * t_out);
        for o in 0..outer {
            let row = &xd[o * t_in..(o + 1) * t_in];
            for p in 0..t_out {
                let s: S = row[p * width..(p + 1) * width].iter().copied().sum();
                out.push(s * inv);
            }
        }
        let mut dims = lead.to_vec();
        dims.push(t_out);
        let value = Tensor::new(dims, out)?;
        Ok(self.push(
            value,
            Op::AvgPool {
                x: x.0,
                outer,
                t_in,
                width,
                t_out,
            },
        ))
    }

    pub fn reshape(&mut self, x: Var, dims: &[usize]) -> Result<Var> {
        let tx = self.value(x);
        if dims.iter().product::<usize>() != tx.numel() {
            return Err(Error::shape(format!(
                "cannot reshape {:?} into {dims:?}",
                tx.dims()
            )));
        }
        let value = Tensor::new(dims.to_vec(), tx.data().to_vec())?;
        Ok(self.push(value, Op::Reshape { x: x.0 }))
    }

    pub fn unary(&mut self, x: Var, kind: Unary<S>) -> Var {
        let tx = self.value(x);
        let floor = S::of(LOG_FLOOR);
        let ceil = S::of(EXP_CEIL);
        let f = |v: S| -> S {
            match kind {
                Unary::Elu => {
                    if v > S::zero() {
                        v
                    } else {
                        v.exp_m1()
                    }
                }
                Unary::Relu => v.max(S::zero()),
                Unary::Tanh => v.tanh(),
                Unary::Negate => -v,
                Unary::Scale(s) => s * v,
                Unary::Exp => v.min(ceil).exp(),
                Unary::Log => v.max(floor).ln(),
            }
        };
        let value = tx.map(f);
        self.push(value, Op::Unary { x: x.0, kind })
    }

    pub fn elu(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Elu)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Relu)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Tanh)
    }

    pub fn neg(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Negate)
    }

    pub fn scale(&mut self, x: Var, s: S) -> Var {
        self.unary(x, Unary::Scale(s))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Exp)
    }

    pub fn log(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Log)
    }

    fn binary(&mut self, a: Var, b: Var, kind: Binary) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.dims() != tb.dims() {
            return Err(Error::shape(format!(
                "{kind:?} of {:?} and {:?}",
                ta.dims(),
                tb.dims()
            )));
        }
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(&x, &y)| match kind {
                Binary::Add => x + y,
                Binary::Sub => x - y,
                Binary::Mul => x * y,
            })
            .collect();
        let value = Tensor::new(ta.dims().to_vec(), data)?;
        Ok(self.push(value, Op::Binary { a: a.0, b: b.0, kind }))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Binary::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Binary::Sub)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Binary::Mul)
    }

    /// `S[i, j] = ⟨w_i, v_j⟩ / (‖w_i‖ ‖v_j‖)` for `W: [N, d]`, `V: [M, d]`.
    pub fn cosine_similarity_matrix(&mut self, w: Var, v: Var) -> Result<Var> {
        let (tw, tv) = (self.value(w), self.value(v));
        let (rows_w, d, rows_v, d2) = match (tw.dims(), tv.dims()) {
            (&[a, b], &[c, e]) => (a, b, c, e),
            (dw, dv) => {
                return Err(Error::shape(format!(
                    "cosine similarity of {dw:?} and {dv:?}"
                )))
            }
        };
        if d != d2 || d == 0 {
            return Err(Error::shape(format!(
                "cosine similarity needs equal nonzero widths, got {d} and {d2}"
            )));
        }
        let (w_hat, w_norm) = normalize_rows(tw.data(), d, "left")?;
        let (v_hat, v_norm) = normalize_rows(tv.data(), d, "right")?;
        let one = S::one();
        let mut out = matmul_nt_raw(&w_hat, &v_hat, rows_w, d, rows_v);
        for s in &mut out {
            *s = s.max(-one).min(one);
        }
        let value = Tensor::new([rows_w, rows_v], out)?;
        Ok(self.push(
            value,
            Op::Cosine {
                w: w.0,
                v: v.0,
                rows_w,
                rows_v,
                d,
                w_hat,
                v_hat,
                w_norm,
                v_norm,
            },
        ))
    }

    /// Log-softmax of a matrix along `axis` (1 = within rows, 0 = within columns).
    pub fn log_softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let tx = self.value(x);
        let &[rows, cols] = tx.dims() else {
            return Err(Error::shape(format!("log_softmax of {:?}", tx.dims())));
        };
        if axis > 1 {
            return Err(Error::shape(format!("log_softmax axis {axis}")));
        }
        let xd = tx.data();
        let mut out = vec![S::zero(); xd.len()];
        let (lines, len) = if axis == 1 { (rows, cols) } else { (cols, rows) };
        let at = |line: usize, i: usize| {
            if axis == 1 {
                line * cols + i
            } else {
                i * cols + line
            }
        };
        for line in 0..lines {
            let max = (0..len).map(|i| xd[at(line, i)]).fold(S::neg_infinity(), S::max);
            let lse = max + (0..len).map(|i| (xd[at(line, i)] - max).exp()).sum::<S>().ln();
            for i in 0..len {
                out[at(line, i)] = xd[at(line, i)] - lse;
            }
        }
        let value = Tensor::new([rows, cols], out)?;
        Ok(self.push(value, Op::LogSoftmax { x: x.0, rows, cols, axis }))
    }

    pub fn trace(&mut self, x: Var) -> Result<Var> {
        let tx = self.value(x);
        let &[n, n2] = tx.dims() else {
            return Err(Error::shape(format!("trace of {:?}", tx.dims())));
        };
        if n != n2 {
            return Err(Error::shape(format!("trace of non-square [{n}, {n2}]")));
        }
        let s = (0..n).map(|i| tx.data()[i * n + i]).sum();
        Ok(self.push(Tensor::scalar(s), Op::Trace { x: x.0, n }))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().copied().sum();
        self.push(Tensor::scalar(s), Op::Sum { x: x.0 })
    }
}

/// Four interleaved partial sums, combined in a fixed order.
#[inline]
fn dot<S: Scalar>(a: &[S], b: &[S]) -> S {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [S::zero(); 4];
    let mut ca = a.chunks_exact(4);
    let mut cb = b.chunks_exact(4);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for l in 0..4 {
            acc[l] += x[l] * y[l];
        }
    }
    let mut tail = S::zero();
    for (&x, &y) in ca.remainder().iter().zip(cb.remainder()) {
        tail += x * y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
fn axpy<S: Scalar>(alpha: S, x: &[S], y: &mut [S]) {
    for (o, &v) in y.iter_mut().zip(x) {
        *o += alpha * v;
    }
}

fn normalize_rows<S: Scalar>(data: &[S], d: usize, side: &str) -> Result<(Vec<S>, Vec<S>)> {
    let mut hat = Vec::with_capacity(data.len());
    let mut norms = Vec::with_capacity(data.len() / d);
    for (i, row) in data.chunks(d).enumerate() {
        let norm = dot(row, row).sqrt();
        if norm == S::zero() || !norm.is_finite() {
            return Err(Error::degenerate(format!(
                "{side} operand row {i} has norm {norm}"
            )));
        }
        norms.push(norm);
        hat.extend(row.iter().map(|&v| v / norm));
    }
    Ok((hat, norms))
}

pub(crate) fn matmul_raw<S: Scalar>(a: &[S], b: &[S], m: usize, k: usize, n: usize) -> Vec<S> {
    let mut out = vec![S::zero(); m * n];
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for t in 0..k {
            let av = a[i * k + t];
            if av == S::zero() {
                continue;
            }
            for (o, &bv) in orow.iter_mut().zip(&b[t * n..(t + 1) * n]) {
                *o += av * bv;
            }
        }
    }
    out
}

/// `a: [m, k]` times the transpose of `b: [n, k]`.
pub(crate) fn matmul_nt_raw<S: Scalar>(a: &[S], b: &[S], m: usize, k: usize, n: usize) -> Vec<S> {
    let mut out = Vec::with_capacity(m * n);
    for i in 0..m {
        let ar = &a[i * k..(i + 1) * k];
        for j in 0..n {
            out.push(dot(ar, &b[j * k..(j + 1) * k]));
        }
    }
    out
}

pub(crate) fn transpose_raw<S: Scalar>(x: &[S], rows: usize, cols: usize) -> Vec<S> {
    let mut out = vec![S::zero(); x.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = x[r * cols + c];
        }
    }
    out
}

fn accumulate<S: Scalar>(
    nodes: &[Node<S>],
    grads: &mut [Option<Vec<S>>],
    idx: usize,
    contribution: Vec<S>,
) {
    if !nodes[idx].value.requires_grad() {
        return;
    }
    match &mut grads[idx] {
        Some(existing) => {
            for (e, c) in existing.iter_mut().zip(contribution) {
                *e += c;
            }
        }
        slot @ None => *slot = Some(contribution),
    }
}

fn needs(nodes: &[Node<impl Scalar>], idx: usize) -> bool {
    nodes[idx].value.requires_grad()
}

/// Propagates the gradient `g` of node `i` into its inputs.
pub(crate) fn backward_node<S: Scalar>(
    nodes: &[Node<S>],
    i: usize,
    g: &[S],
    grads: &mut [Option<Vec<S>>],
) {
    let out = &nodes[i].value;
    match &nodes[i].op {
        Op::Leaf => {}
        &Op::MatMul { a, b, m, k, n } => {
            if needs(nodes, a) {
                let bd = nodes[b].value.data();
                let da = matmul_nt_raw(g, bd, m, n, k);
                accumulate(nodes, grads, a, da);
            }
            if needs(nodes, b) {
                let at = transpose_raw(nodes[a].value.data(), m, k);
                let db = matmul_raw(&at, g, k, m, n);
                accumulate(nodes, grads, b, db);
            }
        }
        &Op::Transpose { x, rows, cols } => {
            accumulate(nodes, grads, x, transpose_raw(g, cols, rows));
        }
        &Op::ConvTemporal { x, kernel, geom } => {
            conv_temporal_backward(nodes, grads, x, kernel, geom, g);
        }
        &Op::ConvSpatial { x, kernel, geom } => {
            conv_spatial_backward(nodes, grads, x, kernel, geom, g);
        }
        &Op::ChannelAffine { x, gain, bias, axes } => {
            let xd = nodes[x].value.data();
            let gd = nodes[gain].value.data();
            let mut dg = vec![S::zero(); axes.features];
            let mut db = vec![S::zero(); axes.features];
            let mut dx = needs(nodes, x).then(|| vec![S::zero(); xd.len()]);
            for o in 0..axes.outer {
                for f in 0..axes.features {
                    let base = (o * axes.features + f) * axes.inner;
                    for j in base..base + axes.inner {
                        dg[f] += g[j] * xd[j];
                        db[f] += g[j];
                        if let Some(dx) = dx.as_mut() {
                            dx[j] = g[j] * gd[f];
                        }
                    }
                }
            }
            if let Some(dx) = dx {
                accumulate(nodes, grads, x, dx);
            }
            accumulate(nodes, grads, gain, dg);
            accumulate(nodes, grads, bias, db);
        }
        &Op::AddBias { x, bias, axes } => {
            let mut db = vec![S::zero(); axes.features];
            for o in 0..axes.outer {
                for (f, dbf) in db.iter_mut().enumerate() {
                    let base = (o * axes.features + f) * axes.inner;
                    *dbf += g[base..base + axes.inner].iter().copied().sum::<S>();
                }
            }
            accumulate(nodes, grads, x, g.to_vec());
            accumulate(nodes, grads, bias, db);
        }
        &Op::AvgPool {
            x,
            outer,
            t_in,
            width,
            t_out,
        } => {
            let inv = S::one() / S::of_usize(width);
            let mut dx = vec![S::zero(); outer * t_in];
            for o in 0..outer {
                for p in 0..t_out {
                    let gv = g[o * t_out + p] * inv;
                    for v in &mut dx[o * t_in + p * width..o * t_in + (p + 1) * width] {
                        *v = gv;
                    }
                }
            }
            accumulate(nodes, grads, x, dx);
        }
        &Op::Reshape { x } => accumulate(nodes, grads, x, g.to_vec()),
        &Op::Unary { x, kind } => {
            let xd = nodes[x].value.data();
            let yd = out.data();
            let floor = S::of(LOG_FLOOR);
            let ceil = S::of(EXP_CEIL);
            let dx = g
                .iter()
                .zip(xd.iter().zip(yd))
                .map(|(&gv, (&xv, &yv))| {
                    let local = match kind {
                        Unary::Elu => {
                            if xv > S::zero() {
                                S::one()
                            } else {
                                yv + S::one()
                            }
                        }
                        Unary::Relu => {
                            if xv > S::zero() {
                                S::one()
                            } else {
                                S::zero()
                            }
                        }
                        Unary::Tanh => S::one() - yv * yv,
                        Unary::Negate => -S::one(),
                        Unary::Scale(s) => s,
                        Unary::Exp => {
                            if xv <= ceil {
                                yv
                            } else {
                                S::zero()
                            }
                        }
                        Unary::Log => {
                            if xv >= floor {
                                S::one() / xv
                            } else {
                                S::zero()
                            }
                        }
                    };
                    gv * local
                })
                .collect();
            accumulate(nodes, grads, x, dx);
        }
        &Op::Binary { a, b, kind } => match kind {
            Binary::Add => {
                accumulate(nodes, grads, a, g.to_vec());
                accumulate(nodes, grads, b, g.to_vec());
            }
            Binary::Sub => {
                accumulate(nodes, grads, a, g.to_vec());
                accumulate(nodes, grads, b, g.iter().map(|&v| -v).collect());
            }
            Binary::Mul => {
                let (ad, bd) = (nodes[a].value.data(), nodes[b].value.data());
                if needs(nodes, a) {
                    accumulate(nodes, grads, a, g.iter().zip(bd).map(|(&x, &y)| x * y).collect());
                }
                if needs(nodes, b) {
                    accumulate(nodes, grads, b, g.iter().zip(ad).map(|(&x, &y)| x * y).collect());
                }
            }
        },
        Op::Cosine {
            w,
            v,
            rows_w,
            rows_v,
            d,
            w_hat,
            v_hat,
            w_norm,
            v_norm,
        } => {
            let (rows_w, rows_v, d) = (*rows_w, *rows_v, *d);
            let sd = out.data();
            if needs(nodes, *w) {
                let mut dw = vec![S::zero(); rows_w * d];
                for i in 0..rows_w {
                    let wi = &w_hat[i * d..(i + 1) * d];
                    let dwi = &mut dw[i * d..(i + 1) * d];
                    for j in 0..rows_v {
                        let gij = g[i * rows_v + j];
                        let sij = sd[i * rows_v + j];
                        let vj = &v_hat[j * d..(j + 1) * d];
                        for t in 0..d {
                            dwi[t] += gij * (vj[t] - sij * wi[t]);
                        }
                    }
                    for val in dwi.iter_mut() {
                        *val /= w_norm[i];
                    }
                }
                accumulate(nodes, grads, *w, dw);
            }
            if needs(nodes, *v) {
                let mut dv = vec![S::zero(); rows_v * d];
                for i in 0..rows_w {
                    let wi = &w_hat[i * d..(i + 1) * d];
                    for j in 0..rows_v {
                        let gij = g[i * rows_v + j];
                        let sij = sd[i * rows_v + j];
                        let vj = &v_hat[j * d..(j + 1) * d];
                        let dvj = &mut dv[j * d..(j + 1) * d];
                        for t in 0..d {
                            dvj[t] += gij * (wi[t] - sij * vj[t]);
                        }
                    }
                }
                for j in 0..rows_v {
                    for val in &mut dv[j * d..(j + 1) * d] {
                        *val /= v_norm[j];
                    }
                }
                accumulate(nodes, grads, *v, dv);
            }
        }
        &Op::LogSoftmax { x, rows, cols, axis } => {
            let yd = out.data();
            let mut dx = vec![S::zero(); rows * cols];
            let (lines, len) = if axis == 1 { (rows, cols) } else { (cols, rows) };
            let at = |line: usize, i: usize| {
                if axis == 1 {
                    line * cols + i
                } else {
                    i * cols + line
                }
            };
            for line in 0..lines {
                let gsum: S = (0..len).map(|i| g[at(line, i)]).sum();
                for i in 0..len {
                    let k = at(line, i);
                    dx[k] = g[k] - yd[k].exp() * gsum;
                }
            }
            accumulate(nodes, grads, x, dx);
        }
        &Op::Trace { x, n } => {
            let mut dx = vec![S::zero(); n * n];
            for k in 0..n {
                dx[k * n + k] = g[0];
            }
            accumulate(nodes, grads, x, dx);
        }
        &Op::Sum { x } => {
            let len = nodes[x].value.numel();
            accumulate(nodes, grads, x, vec![g[0]; len]);
        }
    }
}

fn conv_temporal_backward<S: Scalar>(
    nodes: &[Node<S>],
    grads: &mut [Option<Vec<S>>],
    x: usize,
    kernel: usize,
    geom: TemporalGeom,
    g: &[S],
) {
    let TemporalGeom {
        n,
        c,
        t,
        filters,
        width,
        stride,
        t_out,
    } = geom;
    let xd = nodes[x].value.data();
    let kd = nodes[kernel].value.data();
    let per_out = filters * c * t_out;

    if needs(nodes, kernel) {
        // per-sample partials reduced in sample order keep the sum independent
        // of the thread count
        let partials: Vec<Vec<S>> = (0..n)
            .into_par_iter()
            .map(|b| {
                let xb = &xd[b * c * t..(b + 1) * c * t];
                let gb = &g[b * per_out..(b + 1) * per_out];
                let mut dk = vec![S::zero(); filters * width];
                for f in 0..filters {
                    let dkf = &mut dk[f * width..(f + 1) * width];
                    for ch in 0..c {
                        let xc = &xb[ch * t..(ch + 1) * t];
                        let grow = &gb[(f * c + ch) * t_out..(f * c + ch + 1) * t_out];
                        for (j, dkj) in dkf.iter_mut().enumerate() {
                            *dkj += if stride == 1 {
                                dot(grow, &xc[j..j + t_out])
                            } else {
                                let mut acc = S::zero();
                                for (to, &gv) in grow.iter().enumerate() {
                                    acc += gv * xc[to * stride + j];
                                }
                                acc
                            };
                        }
                    }
                }
                dk
            })
            .collect();
        let mut dk = vec![S::zero(); filters * width];
        for p in partials {
            for (a, b) in dk.iter_mut().zip(p) {
                *a += b;
            }
        }
        accumulate(nodes, grads, kernel, dk);
    }

    if needs(nodes, x) {
        let mut dx = vec![S::zero(); n * c * t];
        dx.par_chunks_mut(c * t).enumerate().for_each(|(b, dxb)| {
            let gb = &g[b * per_out..(b + 1) * per_out];
            for f in 0..filters {
                let kf = &kd[f * width..(f + 1) * width];
                for ch in 0..c {
                    let grow = &gb[(f * c + ch) * t_out..(f * c + ch + 1) * t_out];
                    let dxc = &mut dxb[ch * t..(ch + 1) * t];
                    if stride == 1 {
                        for (j, &kv) in kf.iter().enumerate() {
                            axpy(kv, grow, &mut dxc[j..j + t_out]);
                        }
                    } else {
                        for (to, &gv) in grow.iter().enumerate() {
                            for (j, &kv) in kf.iter().enumerate() {
                                dxc[to * stride + j] += gv * kv;
                            }
                        }
                    }
                }
            }
        });
        accumulate(nodes, grads, x, dx);
    }
}

fn conv_spatial_backward<S: Scalar>(
    nodes: &[Node<S>],
    grads: &mut [Option<Vec<S>>],
    x: usize,
    kernel: usize,
    geom: SpatialGeom,
    g: &[S],
) {
    let SpatialGeom {
        n,
        c_in,
        t,
        filters,
        groups,
    } = geom;
    let span = c_in / groups;
    let per_group = filters / groups;
    let xd = nodes[x].value.data();
    let kd = nodes[kernel].value.data();

    if needs(nodes, kernel) {
        let partials: Vec<Vec<S>> = (0..n)
            .into_par_iter()
            .map(|b| {
                let xb = &xd[b * c_in * t..(b + 1) * c_in * t];
                let gb = &g[b * filters * t..(b + 1) * filters * t];
                let mut dk = vec![S::zero(); filters * span];
                for f in 0..filters {
                    let grp = f / per_group;
                    let grow = &gb[f * t..(f + 1) * t];
                    for cc in 0..span {
                        let xrow = &xb[(grp * span + cc) * t..(grp * span + cc + 1) * t];
                        dk[f * span + cc] = dot(grow, xrow);
                    }
                }
                dk
            })
            .collect();
        let mut dk = vec![S::zero(); filters * span];
        for p in partials {
            for (a, b) in dk.iter_mut().zip(p) {
                *a += b;
            }
        }
        accumulate(nodes, grads, kernel, dk);
    }

    if needs(nodes, x) {
        let mut dx = vec![S::zero(); n * c_in * t];
        dx.par_chunks_mut(c_in * t).enumerate().for_each(|(b, dxb)| {
            let gb = &g[b * filters * t..(b + 1) * filters * t];
            for f in 0..filters {
                let grp = f / per_group;
                let grow = &gb[f * t..(f + 1) * t];
                for cc in 0..span {
                    let w = kd[f * span + cc];
                    let row = &mut dxb[(grp * span + cc) * t..(grp * span + cc + 1) * t];
                    for (d, &gv) in row.iter_mut().zip(grow) {
                        *d += w * gv;
                    }
                }
            }
        });
        accumulate(nodes, grads, x, dx);
    }
}
