//! Matrix products, token-space layers, and shape surgery.
//!
//! The matmul kernels are plain row-major triple loops with the k-loop
//! innermost replaced by row-axpy so the compiler can vectorize over the
//! output row. Parallelism splits over disjoint output rows only, which
//! keeps results bit-identical for any thread count.

use std::sync::Arc;

use super::autograd::Op;
use super::par::maybe_par_chunks_mut;
use super::{fl, Result, Scalar, Tensor, TensorError};

/// C[m,n] = sum_k A[m,k] * B[k,n]
pub(crate) fn mm<F: Scalar>(a: &[F], b: &[F], m: usize, k: usize, n: usize) -> Vec<F> {
    let mut c = vec![F::zero(); m * n];
    maybe_par_chunks_mut(&mut c, n, |row, crow| {
        let arow = &a[row * k..(row + 1) * k];
        for (kk, &av) in arow.iter().enumerate() {
            if av == F::zero() {
                continue;
            }
            let brow = &b[kk * n..(kk + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow.iter()) {
                *cv += av * bv;
            }
        }
    });
    c
}

/// C[m,n] = sum_k A[m,k] * B[n,k]  (A · Bᵀ, B stored [n,k])
pub(crate) fn mm_bt<F: Scalar>(a: &[F], b: &[F], m: usize, k: usize, n: usize) -> Vec<F> {
    let mut c = vec![F::zero(); m * n];
    maybe_par_chunks_mut(&mut c, n, |row, crow| {
        let arow = &a[row * k..(row + 1) * k];
        for (j, cv) in crow.iter_mut().enumerate() {
            let brow = &b[j * k..(j + 1) * k];
            let mut acc = F::zero();
            for (&av, &bv) in arow.iter().zip(brow.iter()) {
                acc += av * bv;
            }
            *cv = acc;
        }
    });
    c
}

/// C[k,n] = sum_m A[m,k] * B[m,n]  (Aᵀ · B)
pub(crate) fn mm_at<F: Scalar>(a: &[F], b: &[F], m: usize, k: usize, n: usize) -> Vec<F> {
    let mut c = vec![F::zero(); k * n];
    maybe_par_chunks_mut(&mut c, n, |kk, crow| {
        for mm_ in 0..m {
            let av = a[mm_ * k + kk];
            if av == F::zero() {
                continue;
            }
            let brow = &b[mm_ * n..(mm_ + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow.iter()) {
                *cv += av * bv;
            }
        }
    });
    c
}

pub(crate) fn transpose_raw<F: Scalar>(a: &[F], rows: usize, cols: usize) -> Vec<F> {
    let mut out = vec![F::zero(); rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = a[r * cols + c];
        }
    }
    out
}

pub(crate) fn column_sums<F: Scalar>(a: &[F], rows: usize, cols: usize) -> Vec<F> {
    let mut out = vec![F::zero(); cols];
    for r in 0..rows {
        for (o, &v) in out.iter_mut().zip(a[r * cols..(r + 1) * cols].iter()) {
            *o += v;
        }
    }
    out
}

impl<F: Scalar> Tensor<F> {
    /// Rank-2 matrix product.
    pub fn matmul(&self, rhs: &Self) -> Result<Self> {
        if self.shape().len() != 2 || rhs.shape().len() != 2 {
            return Err(TensorError::InvalidArgument {
                op: "matmul",
                msg: format!(
                    "expected rank-2 operands, got {:?} and {:?}",
                    self.shape(),
                    rhs.shape()
                ),
            });
        }
        let (m, k) = (self.shape()[0], self.shape()[1]);
        if rhs.shape()[0] != k {
            return Err(rhs.shape_err("matmul", [k, rhs.shape()[1]]));
        }
        let n = rhs.shape()[1];
        let data = mm(self.data(), rhs.data(), m, k, n);
        Ok(Self::from_op(
            vec![m, n],
            data,
            Op::Matmul(self.clone(), rhs.clone()),
        ))
    }

    pub fn transpose2d(&self) -> Result<Self> {
        if self.shape().len() != 2 {
            return Err(TensorError::InvalidArgument {
                op: "transpose2d",
                msg: format!("expected rank-2, got {:?}", self.shape()),
            });
        }
        let (r, c) = (self.shape()[0], self.shape()[1]);
        let data = transpose_raw(self.data(), r, c);
        Ok(Self::from_op(vec![c, r], data, Op::Transpose2d(self.clone())))
    }

    /// Fully connected layer over the last axis: `out[..., j] =
    /// sum_i in[..., i] W[i, j] (+ b[j])`.
    pub fn dense(&self, weight: &Self, bias: Option<&Self>) -> Result<Self> {
        if weight.shape().len() != 2 {
            return Err(TensorError::InvalidArgument {
                op: "dense",
                msg: format!("weight must be rank-2 [Din, Dout], got {:?}", weight.shape()),
            });
        }
        let din = weight.shape()[0];
        let dout = weight.shape()[1];
        let last = *self.shape().last().ok_or(TensorError::InvalidArgument {
            op: "dense",
            msg: "input must have at least rank 1".into(),
        })?;
        if last != din {
            return Err(self.shape_err("dense", format!("[..., {din}]")));
        }
        if let Some(b) = bias {
            if b.shape() != [dout] {
                return Err(b.shape_err("dense", [dout]));
            }
        }
        let rows = self.numel() / din;
        let mut data = mm(self.data(), weight.data(), rows, din, dout);
        if let Some(b) = bias {
            let bd = b.data();
            for row in data.chunks_mut(dout) {
                for (v, &bv) in row.iter_mut().zip(bd.iter()) {
                    *v += bv;
                }
            }
        }
        let mut shape = self.shape().to_vec();
        *shape.last_mut().unwrap() = dout;
        Ok(Self::from_op(
            shape,
            data,
            Op::Dense {
                input: self.clone(),
                weight: weight.clone(),
                bias: bias.cloned(),
            },
        ))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.numel() {
            return Err(TensorError::DataLength {
                op: "reshape",
                shape: shape.to_vec(),
                expected: n,
                got: self.numel(),
            });
        }
        Ok(Self::from_op(
            shape.to_vec(),
            self.data().to_vec(),
            Op::Reshape(self.clone()),
        ))
    }

    /// Slice `[start, start+len)` of the last axis.
    pub fn slice_last(&self, start: usize, len: usize) -> Result<Self> {
        let last = *self.shape().last().unwrap_or(&0);
        if start + len > last || len == 0 {
            return Err(TensorError::InvalidArgument {
                op: "slice_last",
                msg: format!("slice {start}..{} out of last axis {last}", start + len),
            });
        }
        let rows = self.numel() / last;
        let mut data = Vec::with_capacity(rows * len);
        for r in 0..rows {
            let base = r * last + start;
            data.extend_from_slice(&self.data()[base..base + len]);
        }
        let mut shape = self.shape().to_vec();
        *shape.last_mut().unwrap() = len;
        Ok(Self::from_op(
            shape,
            data,
            Op::SliceLast {
                input: self.clone(),
                start,
                len,
            },
        ))
    }

    /// Concatenate along the last axis; leading shapes must match.
    pub fn concat_last(parts: &[Self]) -> Result<Self> {
        if parts.is_empty() {
            return Err(TensorError::InvalidArgument {
                op: "concat_last",
                msg: "need at least one tensor".into(),
            });
        }
        let lead = &parts[0].shape()[..parts[0].shape().len() - 1];
        for p in parts {
            if &p.shape()[..p.shape().len() - 1] != lead {
                return Err(p.shape_err("concat_last", format!("{lead:?} + [*]")));
            }
        }
        let rows: usize = lead.iter().product();
        let widths: Vec<usize> = parts.iter().map(|p| *p.shape().last().unwrap()).collect();
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (p, &w) in parts.iter().zip(widths.iter()) {
                data.extend_from_slice(&p.data()[r * w..(r + 1) * w]);
            }
        }
        let mut shape = lead.to_vec();
        shape.push(total);
        Ok(Self::from_op(shape, data, Op::ConcatLast(parts.to_vec())))
    }

    /// Channel concatenation of NHWC tensors.
    pub fn concat_channels(parts: &[Self]) -> Result<Self> {
        for p in parts {
            p.dims4("concat_channels")?;
        }
        Self::concat_last(parts)
    }

    /// Numerically safe softmax along `axis` (max-subtracted).
    pub fn softmax(&self, axis: usize) -> Result<Self> {
        if axis >= self.shape().len() {
            return Err(TensorError::InvalidArgument {
                op: "softmax",
                msg: format!("axis {axis} out of range for {:?}", self.shape()),
            });
        }
        let lane = self.shape()[axis];
        let inner: usize = self.shape()[axis + 1..].iter().product();
        let outer: usize = self.shape()[..axis].iter().product();
        let src = self.data();
        let mut data = vec![F::zero(); self.numel()];
        for o in 0..outer {
            for i in 0..inner {
                let base = o * lane * inner + i;
                let mut mx = F::neg_infinity();
                for l in 0..lane {
                    mx = mx.max(src[base + l * inner]);
                }
                let mut denom = F::zero();
                for l in 0..lane {
                    let e = (src[base + l * inner] - mx).exp();
                    data[base + l * inner] = e;
                    denom += e;
                }
                for l in 0..lane {
                    data[base + l * inner] = data[base + l * inner] / denom;
                }
            }
        }
        let saved = Arc::new(data.clone());
        Ok(Self::from_op(
            self.shape().to_vec(),
            data,
            Op::Softmax {
                input: self.clone(),
                axis,
                output: saved,
            },
        ))
    }

    /// Layer normalization over the channel axis (last) per position, with
    /// per-channel gain and shift.
    pub fn layer_norm(&self, gain: &Self, shift: &Self, eps: F) -> Result<Self> {
        let c = *self.shape().last().ok_or(TensorError::InvalidArgument {
            op: "layer_norm",
            msg: "input must have rank >= 1".into(),
        })?;
        if gain.shape() != [c] {
            return Err(gain.shape_err("layer_norm", [c]));
        }
        if shift.shape() != [c] {
            return Err(shift.shape_err("layer_norm", [c]));
        }
        let lanes = self.numel() / c;
        let src = self.data();
        let gd = gain.data();
        let sd = shift.data();
        let inv_c = F::one() / fl::<F>(c as f64);
        let mut out = vec![F::zero(); self.numel()];
        let mut normalized = vec![F::zero(); self.numel()];
        let mut inv_std = vec![F::zero(); lanes];
        for lane in 0..lanes {
            let base = lane * c;
            let x = &src[base..base + c];
            let mut mean = F::zero();
            for &v in x {
                mean += v;
            }
            mean = mean * inv_c;
            let mut var = F::zero();
            for &v in x {
                let d = v - mean;
                var += d * d;
            }
            var = var * inv_c;
            let inv = (var + eps).sqrt().recip();
            inv_std[lane] = inv;
            for j in 0..c {
                let xhat = (x[j] - mean) * inv;
                normalized[base + j] = xhat;
                out[base + j] = gd[j] * xhat + sd[j];
            }
        }
        Ok(Self::from_op(
            self.shape().to_vec(),
            out,
            Op::LayerNorm {
                input: self.clone(),
                gain: gain.clone(),
                shift: shift.clone(),
                normalized: Arc::new(normalized),
                inv_std: Arc::new(inv_std),
            },
        ))
    }
}

// ── backward helpers ─────────────────────────────────────────────────────

pub(crate) fn slice_last_backward<F: Scalar>(
    g: &Tensor<F>,
    input_shape: &[usize],
    start: usize,
    len: usize,
) -> Tensor<F> {
    let last = *input_shape.last().unwrap();
    let rows: usize = input_shape.iter().product::<usize>() / last;
    let mut data = vec![F::zero(); rows * last];
    for r in 0..rows {
        let dst = r * last + start;
        data[dst..dst + len].copy_from_slice(&g.data()[r * len..(r + 1) * len]);
    }
    Tensor::plain(input_shape.to_vec(), data)
}

pub(crate) fn concat_last_backward<F: Scalar>(
    g: &Tensor<F>,
    parts: &[Tensor<F>],
) -> Vec<Tensor<F>> {
    let widths: Vec<usize> = parts.iter().map(|p| *p.shape().last().unwrap()).collect();
    let total: usize = widths.iter().sum();
    let rows = g.numel() / total;
    let mut grads: Vec<Vec<F>> = widths.iter().map(|&w| Vec::with_capacity(rows * w)).collect();
    for r in 0..rows {
        let mut off = r * total;
        for (gv, &w) in grads.iter_mut().zip(widths.iter()) {
            gv.extend_from_slice(&g.data()[off..off + w]);
            off += w;
        }
    }
    parts
        .iter()
        .zip(grads)
        .map(|(p, gv)| Tensor::plain(p.shape().to_vec(), gv))
        .collect()
}

pub(crate) fn softmax_backward<F: Scalar>(
    g: &Tensor<F>,
    y: &Arc<Vec<F>>,
    shape: &[usize],
    axis: usize,
) -> Tensor<F> {
    let lane = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    let outer: usize = shape[..axis].iter().product();
    let gd = g.data();
    let mut dx = vec![F::zero(); gd.len()];
    for o in 0..outer {
        for i in 0..inner {
            let base = o * lane * inner + i;
            let mut dot = F::zero();
            for l in 0..lane {
                let idx = base + l * inner;
                dot += gd[idx] * y[idx];
            }
            for l in 0..lane {
                let idx = base + l * inner;
                dx[idx] = y[idx] * (gd[idx] - dot);
            }
        }
    }
    Tensor::plain(shape.to_vec(), dx)
}

pub(crate) fn layer_norm_backward<F: Scalar>(
    g: &Tensor<F>,
    normalized: &Arc<Vec<F>>,
    inv_std: &Arc<Vec<F>>,
    gain: &[F],
    shape: &[usize],
) -> (Vec<F>, Vec<F>, Vec<F>) {
    let c = *shape.last().unwrap();
    let lanes = g.numel() / c;
    let inv_c = F::one() / fl::<F>(c as f64);
    let gd = g.data();
    let mut dx = vec![F::zero(); gd.len()];
    let mut dgain = vec![F::zero(); c];
    let mut dshift = vec![F::zero(); c];
    for lane in 0..lanes {
        let base = lane * c;
        let inv = inv_std[lane];
        let mut sum_gp = F::zero();
        let mut sum_gp_xhat = F::zero();
        for j in 0..c {
            let gy = gd[base + j];
            let xhat = normalized[base + j];
            let gp = gy * gain[j];
            sum_gp += gp;
            sum_gp_xhat += gp * xhat;
            dgain[j] += gy * xhat;
            dshift[j] += gy;
        }
        let mean_gp = sum_gp * inv_c;
        let mean_gp_xhat = sum_gp_xhat * inv_c;
        for j in 0..c {
            let gp = gd[base + j] * gain[j];
            let xhat = normalized[base + j];
            dx[base + j] = inv * (gp - mean_gp - xhat * mean_gp_xhat);
        }
    }
    (dx, dgain, dshift)
}

#[cfg(test)]
mod tests {
    use super::super::backward;
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::from_vec(shape, data.to_vec()).unwrap()
    }

    #[test]
    fn dense_identity_passthrough() {
        let x = t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let eye = t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]);
        let y = x.dense(&eye, None).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn dense_hand_case() {
        // input [1,2], W = I2, bias [10,20] -> [11,22]
        let x = t(&[1, 2], &[1.0, 2.0]);
        let w = t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]);
        let b = t(&[2], &[10.0, 20.0]);
        let y = x.dense(&w, Some(&b)).unwrap();
        assert_eq!(y.data(), &[11.0, 22.0]);
    }

    #[test]
    fn dense_zero_weight_gives_bias() {
        let x = t(&[3, 2], &[5.0; 6]);
        let w = Tensor::zeros(&[2, 4]);
        let b = t(&[4], &[1.0, 2.0, 3.0, 4.0]);
        let y = x.dense(&w, Some(&b)).unwrap();
        for row in y.data().chunks(4) {
            assert_eq!(row, &[1.0, 2.0, 3.0, 4.0]);
        }
    }

    #[test]
    fn dense_rejects_din_mismatch() {
        let x = t(&[1, 3], &[1.0; 3]);
        let w = t(&[2, 2], &[1.0; 4]);
        assert!(x.dense(&w, None).is_err());
    }

    #[test]
    fn dense_weight_gradient() {
        // loss = sum(dense(x, W)), x = [1, 2] -> dW rows [1,1],[2,2]
        let x = t(&[1, 2], &[1.0, 2.0]);
        let w = t(&[2, 2], &[0.3, -0.7, 0.1, 0.9]).tracked();
        let loss = x.dense(&w, None).unwrap().sum_all();
        let grads = backward(&loss).unwrap();
        assert_eq!(grads.get(&w).unwrap().data(), &[1.0, 1.0, 2.0, 2.0]);
    }

    #[test]
    fn softmax_uniform_row() {
        let x = Tensor::<f64>::full(&[1, 5], 3.25);
        let y = x.softmax(1).unwrap();
        for &v in y.data() {
            assert!((v - 0.2).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_closed_form() {
        // [0, ln 3] -> [0.25, 0.75]
        let x = t(&[1, 2], &[0.0, 3.0f64.ln()]);
        let y = x.softmax(1).unwrap();
        assert!((y.data()[0] - 0.25).abs() < 1e-12);
        assert!((y.data()[1] - 0.75).abs() < 1e-12);
    }

    #[test]
    fn softmax_shift_invariant() {
        let x = t(&[1, 3], &[0.3, -1.2, 2.0]);
        let shifted = x.add_const(100.0);
        let a = x.softmax(1).unwrap();
        let b = shifted.softmax(1).unwrap();
        for (&u, &v) in a.data().iter().zip(b.data().iter()) {
            assert!((u - v).abs() < 1e-12);
        }
    }

    #[test]
    fn layer_norm_pair() {
        // channel vector [1,3], gain 1, shift 0 -> [-1, 1] as eps -> 0
        let x = t(&[1, 1, 1, 2], &[1.0, 3.0]);
        let gain = Tensor::ones(&[2]);
        let shift = Tensor::zeros(&[2]);
        let y = x.layer_norm(&gain, &shift, 1e-12).unwrap();
        assert!((y.data()[0] + 1.0).abs() < 1e-5);
        assert!((y.data()[1] - 1.0).abs() < 1e-5);
    }

    #[test]
    fn layer_norm_constant_vector_stays_finite() {
        let x = Tensor::<f64>::full(&[1, 1, 1, 4], 7.0);
        let y = x
            .layer_norm(&Tensor::ones(&[4]), &Tensor::zeros(&[4]), 1e-5)
            .unwrap();
        for &v in y.data() {
            assert!(v.abs() < 1e-9);
        }
    }

    #[test]
    fn layer_norm_zero_gain_gives_shift() {
        let x = t(&[1, 1, 1, 3], &[1.0, -5.0, 2.0]);
        let y = x
            .layer_norm(&Tensor::zeros(&[3]), &Tensor::full(&[3], 4.5), 1e-5)
            .unwrap();
        assert_eq!(y.data(), &[4.5, 4.5, 4.5]);
    }

    #[test]
    fn concat_and_slice_roundtrip() {
        let a = t(&[2, 1], &[1.0, 2.0]);
        let b = t(&[2, 2], &[3.0, 4.0, 5.0, 6.0]);
        let cat = Tensor::concat_last(&[a.clone(), b.clone()]).unwrap();
        assert_eq!(cat.shape(), &[2, 3]);
        assert_eq!(cat.data(), &[1.0, 3.0, 4.0, 2.0, 5.0, 6.0]);
        let back = cat.slice_last(1, 2).unwrap();
        assert_eq!(back.data(), b.data());
    }

    #[test]
    fn matmul_transpose_gradients() {
        let a = t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]).tracked();
        let b = t(&[2, 2], &[0.5, 0.3, 0.7, 0.1]);
        let loss = a.matmul(&b).unwrap().sum_all();
        let grads = backward(&loss).unwrap();
        // dA = ones @ Bᵀ
        for &v in grads.get(&a).unwrap().data() {
            assert!((v - 0.8).abs() < 1e-12);
        }
    }
}
