//! Pointwise operators, limited broadcasting, reductions, and the soft
//! histogram.
//!
//! Broadcasting is deliberately narrow: same shape, a single-element
//! operand against anything, or a per-channel `[1,1,1,C]` descriptor
//! against `[N,H,W,C]` (the excite gating needs exactly that). Nothing
//! else is accepted.

use std::sync::Arc;

use super::autograd::Op;
use super::{fl, Result, Scalar, Tensor, TensorError};

/// How one operand's linear index maps onto the broadcast output index.
#[derive(Clone, Copy)]
enum IndexMap {
    Full,
    Scalar,
    Channel(usize),
}

impl IndexMap {
    #[inline]
    fn apply(self, i: usize) -> usize {
        match self {
            IndexMap::Full => i,
            IndexMap::Scalar => 0,
            IndexMap::Channel(c) => i % c,
        }
    }
}

fn broadcast_plan<F: Scalar>(
    op: &'static str,
    a: &Tensor<F>,
    b: &Tensor<F>,
) -> Result<(Vec<usize>, IndexMap, IndexMap)> {
    if a.shape() == b.shape() {
        return Ok((a.shape().to_vec(), IndexMap::Full, IndexMap::Full));
    }
    if b.numel() == 1 {
        return Ok((a.shape().to_vec(), IndexMap::Full, IndexMap::Scalar));
    }
    if a.numel() == 1 {
        return Ok((b.shape().to_vec(), IndexMap::Scalar, IndexMap::Full));
    }
    let channel_desc = |t: &Tensor<F>| {
        t.shape().len() == 4 && t.shape()[0] == 1 && t.shape()[1] == 1 && t.shape()[2] == 1
    };
    if a.shape().len() == 4 && channel_desc(b) && b.shape()[3] == a.shape()[3] {
        return Ok((
            a.shape().to_vec(),
            IndexMap::Full,
            IndexMap::Channel(b.shape()[3]),
        ));
    }
    if b.shape().len() == 4 && channel_desc(a) && a.shape()[3] == b.shape()[3] {
        return Ok((
            b.shape().to_vec(),
            IndexMap::Channel(a.shape()[3]),
            IndexMap::Full,
        ));
    }
    Err(TensorError::ShapeMismatch {
        op,
        expected: format!("{:?} broadcast-compatible with {:?}", a.shape(), b.shape()),
        got: format!("{:?}", b.shape()),
    })
}

fn binary_raw<F: Scalar>(
    op: &'static str,
    a: &Tensor<F>,
    b: &Tensor<F>,
    f: impl Fn(F, F) -> F,
) -> Result<(Vec<usize>, Vec<F>)> {
    let (shape, ia, ib) = broadcast_plan(op, a, b)?;
    let n: usize = shape.iter().product();
    let ad = a.data();
    let bd = b.data();
    let mut out = Vec::with_capacity(n);
    match (ia, ib) {
        (IndexMap::Full, IndexMap::Full) => {
            out.extend(ad.iter().zip(bd.iter()).map(|(&x, &y)| f(x, y)));
        }
        (IndexMap::Full, IndexMap::Scalar) => {
            let y = bd[0];
            out.extend(ad.iter().map(|&x| f(x, y)));
        }
        (IndexMap::Scalar, IndexMap::Full) => {
            let x = ad[0];
            out.extend(bd.iter().map(|&y| f(x, y)));
        }
        _ => {
            for i in 0..n {
                out.push(f(ad[ia.apply(i)], bd[ib.apply(i)]));
            }
        }
    }
    Ok((shape, out))
}

/// Sum a broadcast-shaped gradient back down to an operand's shape.
pub(crate) fn reduce_to_shape<F: Scalar>(g: &Tensor<F>, target: &[usize]) -> Tensor<F> {
    if g.shape() == target {
        return g.detached();
    }
    let target_numel: usize = target.iter().product();
    if target_numel == 1 {
        let mut acc = F::zero();
        for &v in g.data() {
            acc += v;
        }
        return Tensor::plain(target.to_vec(), vec![acc]);
    }
    // channel descriptor [1,1,1,C]: sum over all positions per channel
    let c = target[3];
    let mut acc = vec![F::zero(); c];
    for (i, &v) in g.data().iter().enumerate() {
        acc[i % c] += v;
    }
    Tensor::plain(target.to_vec(), acc)
}

// ── plain (non-recording) helpers used by the backward pass ─────────────

pub(crate) fn add_plain<F: Scalar>(a: &Tensor<F>, b: &Tensor<F>) -> Tensor<F> {
    debug_assert_eq!(a.shape(), b.shape());
    let data = a
        .data()
        .iter()
        .zip(b.data().iter())
        .map(|(&x, &y)| x + y)
        .collect();
    Tensor::plain(a.shape().to_vec(), data)
}

pub(crate) fn neg_plain<F: Scalar>(a: &Tensor<F>) -> Tensor<F> {
    Tensor::plain(a.shape().to_vec(), a.data().iter().map(|&x| -x).collect())
}

pub(crate) fn mul_bcast_plain<F: Scalar>(a: &Tensor<F>, b: &Tensor<F>) -> Result<Tensor<F>> {
    let (shape, data) = binary_raw("mul", a, b, |x, y| x * y)?;
    Ok(Tensor::plain(shape, data))
}

pub(crate) fn div_bcast_plain<F: Scalar>(a: &Tensor<F>, b: &Tensor<F>) -> Result<Tensor<F>> {
    let (shape, data) = binary_raw("div", a, b, |x, y| x / y)?;
    Ok(Tensor::plain(shape, data))
}

pub(crate) fn zip_plain<F: Scalar>(
    g: &Tensor<F>,
    a: &Tensor<F>,
    f: impl Fn(F, F) -> F,
) -> Tensor<F> {
    debug_assert_eq!(g.shape(), a.shape());
    let data = g
        .data()
        .iter()
        .zip(a.data().iter())
        .map(|(&gv, &av)| f(gv, av))
        .collect();
    Tensor::plain(a.shape().to_vec(), data)
}

// ── public tensor API ────────────────────────────────────────────────────

impl<F: Scalar> Tensor<F> {
    pub fn add(&self, rhs: &Self) -> Result<Self> {
        let (shape, data) = binary_raw("add", self, rhs, |x, y| x + y)?;
        Ok(Self::from_op(shape, data, Op::Add(self.clone(), rhs.clone())))
    }

    pub fn sub(&self, rhs: &Self) -> Result<Self> {
        let (shape, data) = binary_raw("sub", self, rhs, |x, y| x - y)?;
        Ok(Self::from_op(shape, data, Op::Sub(self.clone(), rhs.clone())))
    }

    pub fn mul(&self, rhs: &Self) -> Result<Self> {
        let (shape, data) = binary_raw("mul", self, rhs, |x, y| x * y)?;
        Ok(Self::from_op(shape, data, Op::Mul(self.clone(), rhs.clone())))
    }

    pub fn div(&self, rhs: &Self) -> Result<Self> {
        let (shape, data) = binary_raw("div", self, rhs, |x, y| x / y)?;
        Ok(Self::from_op(shape, data, Op::Div(self.clone(), rhs.clone())))
    }

    pub fn neg(&self) -> Self {
        let data = self.data().iter().map(|&x| -x).collect();
        Self::from_op(self.shape().to_vec(), data, Op::Neg(self.clone()))
    }

    pub fn relu(&self) -> Self {
        let data = self.data().iter().map(|&x| x.max(F::zero())).collect();
        Self::from_op(self.shape().to_vec(), data, Op::Relu(self.clone()))
    }

    pub fn tanh(&self) -> Self {
        let data: Vec<F> = self.data().iter().map(|&x| x.tanh()).collect();
        let saved = Arc::new(data.clone());
        Self::from_op(self.shape().to_vec(), data, Op::Tanh(self.clone(), saved))
    }

    pub fn abs(&self) -> Self {
        let data = self.data().iter().map(|&x| x.abs()).collect();
        Self::from_op(self.shape().to_vec(), data, Op::Abs(self.clone()))
    }

    /// Natural logarithm. Inputs must be strictly positive; clamp first.
    pub fn ln(&self) -> Self {
        let data = self.data().iter().map(|&x| x.ln()).collect();
        Self::from_op(self.shape().to_vec(), data, Op::Ln(self.clone()))
    }

    /// Elementwise `x^p` for constant `p`. Inputs must be positive when `p`
    /// is fractional.
    pub fn powf_const(&self, p: F) -> Self {
        let data = self.data().iter().map(|&x| x.powf(p)).collect();
        Self::from_op(self.shape().to_vec(), data, Op::PowConst(self.clone(), p))
    }

    pub fn clamp_min(&self, c: F) -> Self {
        let data = self.data().iter().map(|&x| x.max(c)).collect();
        Self::from_op(self.shape().to_vec(), data, Op::ClampMin(self.clone(), c))
    }

    pub fn scale(&self, k: F) -> Self {
        let data = self.data().iter().map(|&x| x * k).collect();
        Self::from_op(self.shape().to_vec(), data, Op::Scale(self.clone(), k))
    }

    pub fn add_const(&self, k: F) -> Self {
        let data = self.data().iter().map(|&x| x + k).collect();
        Self::from_op(self.shape().to_vec(), data, Op::AddConst(self.clone()))
    }

    /// Elementwise smooth-L1 penalty of a difference tensor:
    /// `0.5 d^2 / beta` for `|d| < beta`, else `|d| - 0.5 beta`.
    pub fn huber(&self, beta: F) -> Self {
        let half = fl::<F>(0.5);
        let data = self
            .data()
            .iter()
            .map(|&d| {
                if d.abs() < beta {
                    half * d * d / beta
                } else {
                    d.abs() - half * beta
                }
            })
            .collect();
        Self::from_op(self.shape().to_vec(), data, Op::Huber(self.clone(), beta))
    }

    pub fn sum_all(&self) -> Self {
        let mut acc = F::zero();
        for &v in self.data() {
            acc += v;
        }
        Self::from_op(vec![1], vec![acc], Op::SumAll(self.clone()))
    }

    pub fn mean_all(&self) -> Self {
        let mut acc = F::zero();
        for &v in self.data() {
            acc += v;
        }
        let mean = acc / fl::<F>(self.numel() as f64);
        Self::from_op(vec![1], vec![mean], Op::MeanAll(self.clone()))
    }

    /// Per-channel soft histogram of an NHWC tensor over `[0, 1]`.
    ///
    /// Each pixel spreads Gaussian mass (std `bandwidth`) over bin centers
    /// `(k + 0.5) / bins`; per channel the masses are normalized to sum to
    /// one. Output shape `[C, bins]`. Kernel tails are truncated at eight
    /// standard deviations, consistently in forward and backward.
    pub fn soft_histogram(&self, bins: usize, bandwidth: F) -> Result<Self> {
        let (_, _, _, c) = self.dims4("soft_histogram")?;
        if bins < 2 {
            return Err(TensorError::InvalidArgument {
                op: "soft_histogram",
                msg: format!("need at least 2 bins, got {bins}"),
            });
        }
        let mut raw = vec![F::zero(); c * bins];
        let inv_bins = 1.0 / bins as f64;
        let bw = bandwidth.to_f64().unwrap();
        let inv_two_bw2 = 1.0 / (2.0 * bw * bw);
        let reach = 8.0 * bw;
        for (i, &v) in self.data().iter().enumerate() {
            let ch = i % c;
            let x = v.to_f64().unwrap();
            let (k0, k1) = bin_range(x, bins, inv_bins, reach);
            for k in k0..k1 {
                let center = (k as f64 + 0.5) * inv_bins;
                let d = x - center;
                let w = (-d * d * inv_two_bw2).exp();
                raw[ch * bins + k] += fl::<F>(w);
            }
        }
        // Per-channel normalization; the epsilon keeps fully out-of-range
        // channels defined (uniform gradient of zero there).
        let mut mass = vec![F::zero(); c];
        for ch in 0..c {
            let mut s = F::zero();
            for k in 0..bins {
                s += raw[ch * bins + k];
            }
            mass[ch] = s.max(fl::<F>(1e-12));
            for k in 0..bins {
                raw[ch * bins + k] = raw[ch * bins + k] / mass[ch];
            }
        }
        let output = Arc::new(raw.clone());
        let channel_mass = Arc::new(mass);
        Ok(Self::from_op(
            vec![c, bins],
            raw,
            Op::SoftHistogram {
                input: self.clone(),
                bins,
                bandwidth,
                output,
                channel_mass,
            },
        ))
    }
}

#[inline]
fn bin_range(x: f64, bins: usize, inv_bins: f64, reach: f64) -> (usize, usize) {
    // centers are (k + 0.5) * inv_bins; include every bin within `reach`
    let lo = (x - reach) / inv_bins - 0.5;
    let hi = (x + reach) / inv_bins - 0.5;
    let k0 = lo.ceil().max(0.0) as usize;
    let k1 = (hi.floor() as isize + 1).clamp(0, bins as isize) as usize;
    (k0.min(bins), k1)
}

/// Gradient of the normalized soft histogram w.r.t. the input pixels.
///
/// With raw masses `u_k`, channel mass `S` and `h_k = u_k / S`:
/// `dL/dx = (1/S) * sum_k (g_k - sum_j g_j h_j) * u_k'(x)`
/// where `u_k'(x) = w_k(x) * (center_k - x) / bw^2`.
pub(crate) fn soft_histogram_backward<F: Scalar>(
    g: &Tensor<F>,
    input: &Tensor<F>,
    bins: usize,
    bandwidth: F,
    output: &Arc<Vec<F>>,
    channel_mass: &Arc<Vec<F>>,
) -> Tensor<F> {
    let c = input.shape()[3];
    let gd = g.data();
    // per-channel projection of the upstream gradient onto the histogram
    let mut proj = vec![0.0f64; c];
    for ch in 0..c {
        let mut acc = 0.0;
        for k in 0..bins {
            acc += gd[ch * bins + k].to_f64().unwrap() * output[ch * bins + k].to_f64().unwrap();
        }
        proj[ch] = acc;
    }
    let inv_bins = 1.0 / bins as f64;
    let bw = bandwidth.to_f64().unwrap();
    let inv_bw2 = 1.0 / (bw * bw);
    let inv_two_bw2 = 0.5 * inv_bw2;
    let reach = 8.0 * bw;
    let mut dx = Vec::with_capacity(input.numel());
    for (i, &v) in input.data().iter().enumerate() {
        let ch = i % c;
        let x = v.to_f64().unwrap();
        let inv_mass = 1.0 / channel_mass[ch].to_f64().unwrap();
        let (k0, k1) = bin_range(x, bins, inv_bins, reach);
        let mut acc = 0.0;
        for k in k0..k1 {
            let center = (k as f64 + 0.5) * inv_bins;
            let d = x - center;
            let w = (-d * d * inv_two_bw2).exp();
            let gk = gd[ch * bins + k].to_f64().unwrap();
            acc += (gk - proj[ch]) * w * (center - x) * inv_bw2;
        }
        dx.push(fl::<F>(acc * inv_mass));
    }
    Tensor::plain(input.shape().to_vec(), dx)
}

#[cfg(test)]
mod tests {
    use super::super::backward;
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::from_vec(shape, data.to_vec()).unwrap()
    }

    #[test]
    fn relu_values() {
        let x = t(&[3], &[-1.0, 0.0, 2.0]);
        assert_eq!(x.relu().data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn tanh_zero() {
        let x = t(&[1], &[0.0]);
        assert_eq!(x.tanh().data(), &[0.0]);
    }

    #[test]
    fn add_rejects_incompatible() {
        let a = t(&[2, 2], &[1.0; 4]);
        let b = t(&[3], &[1.0; 3]);
        assert!(a.add(&b).is_err());
    }

    #[test]
    fn channel_broadcast_both_sides() {
        let x = t(&[1, 2, 1, 2], &[1.0, 2.0, 3.0, 4.0]);
        let s = t(&[1, 1, 1, 2], &[10.0, 100.0]);
        let a = x.mul(&s).unwrap();
        assert_eq!(a.data(), &[10.0, 200.0, 30.0, 400.0]);
        let b = s.mul(&x).unwrap();
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn broadcast_gradient_reduces() {
        let x = t(&[1, 2, 1, 2], &[1.0, 2.0, 3.0, 4.0]).tracked();
        let s = t(&[1, 1, 1, 2], &[10.0, 100.0]).tracked();
        let loss = x.mul(&s).unwrap().sum_all();
        let grads = backward(&loss).unwrap();
        // d/ds sums the matching channel entries of x
        assert_eq!(grads.get(&s).unwrap().data(), &[4.0, 6.0]);
        assert_eq!(grads.get(&x).unwrap().data(), &[10.0, 100.0, 10.0, 100.0]);
    }

    #[test]
    fn sum_of_squares_gradient() {
        let x = t(&[3], &[1.0, 2.0, 3.0]).tracked();
        let loss = x.mul(&x).unwrap().sum_all();
        let grads = backward(&loss).unwrap();
        assert_eq!(grads.get(&x).unwrap().data(), &[2.0, 4.0, 6.0]);
    }

    #[test]
    fn unused_leaf_gets_zero_gradient() {
        let x = t(&[2], &[1.0, 2.0]).tracked();
        let unused = t(&[2], &[5.0, 6.0]).tracked();
        let loss = x.sum_all();
        let grads = backward(&loss).unwrap();
        assert!(grads.get(&unused).is_none());
        assert_eq!(grads.get_or_zeros(&unused).data(), &[0.0, 0.0]);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let x = t(&[2], &[1.0, 2.0]).tracked();
        assert!(matches!(
            backward(&x),
            Err(TensorError::NonScalarLoss { numel: 2 })
        ));
    }

    #[test]
    fn huber_values() {
        let d = t(&[2], &[0.5, 2.0]);
        let h = d.huber(1.0);
        assert_eq!(h.data(), &[0.125, 1.5]);
    }

    #[test]
    fn soft_histogram_sums_to_one() {
        let x = Tensor::<f64>::from_vec(
            &[1, 2, 2, 2],
            vec![0.1, 0.9, 0.4, 0.5, 0.35, 0.2, 0.8, 0.65],
        )
        .unwrap();
        let h = x.soft_histogram(64, 1.0 / 64.0).unwrap();
        assert_eq!(h.shape(), &[2, 64]);
        for ch in 0..2 {
            let s: f64 = h.data()[ch * 64..(ch + 1) * 64].iter().sum();
            assert!((s - 1.0).abs() < 1e-9, "channel {ch} sums to {s}");
        }
    }
}
