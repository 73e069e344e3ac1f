//! The six component losses. Every one is differentiable through the
//! tensor engine; expected values in the tests come from closed-form or
//! independently reimplemented oracles.

use super::extractor::FeatureExtractor;
use super::LossWeights;
use crate::tensor::{fl, Padding, Result, Scalar, Tensor, TensorError};

fn check_same_shape<F: Scalar>(
    op: &'static str,
    pred: &Tensor<F>,
    target: &Tensor<F>,
) -> Result<()> {
    if pred.shape() != target.shape() {
        return Err(TensorError::ShapeMismatch {
            op,
            expected: format!("{:?}", pred.shape()),
            got: format!("{:?}", target.shape()),
        });
    }
    Ok(())
}

/// Mean smooth-L1: `0.5 d^2/beta` inside `|d| < beta`, `|d| - beta/2`
/// outside.
pub fn smooth_l1<F: Scalar>(pred: &Tensor<F>, target: &Tensor<F>, beta: f64) -> Result<Tensor<F>> {
    check_same_shape("smooth_l1", pred, target)?;
    Ok(pred.sub(target)?.huber(fl::<F>(beta)).mean_all())
}

/// Mean squared feature difference per extractor tap, averaged over taps.
pub fn perceptual_loss<F: Scalar>(
    pred: &Tensor<F>,
    target: &Tensor<F>,
    extractor: &FeatureExtractor<F>,
) -> Result<Tensor<F>> {
    check_same_shape("perceptual_loss", pred, target)?;
    let fp = extractor.features(pred)?;
    let ft = extractor.features(target)?;
    let mut acc: Option<Tensor<F>> = None;
    let count = fp.len();
    for (a, b) in fp.iter().zip(ft.iter()) {
        let d = a.sub(b)?;
        let mse = d.mul(&d)?.mean_all();
        acc = Some(match acc {
            None => mse,
            Some(s) => s.add(&mse)?,
        });
    }
    Ok(acc.expect("extractor yields at least one tap").scale(fl::<F>(1.0 / count as f64)))
}

/// L1 distance between per-channel soft histograms, averaged over
/// channels. Soft binning keeps the distribution alignment differentiable.
pub fn histogram_loss<F: Scalar>(
    pred: &Tensor<F>,
    target: &Tensor<F>,
    weights: &LossWeights,
) -> Result<Tensor<F>> {
    check_same_shape("histogram_loss", pred, target)?;
    let c = *pred.shape().last().unwrap();
    let bw = fl::<F>(weights.hist_bandwidth);
    let hp = pred.soft_histogram(weights.hist_bins, bw)?;
    let ht = target.soft_histogram(weights.hist_bins, bw)?;
    Ok(hp
        .sub(&ht)?
        .abs()
        .sum_all()
        .scale(fl::<F>(1.0 / c as f64)))
}

/// `40 - PSNR` with the MSE floored at 1e-8 (so identical images yield
/// -40): bounded above per batch, unbounded below by the floor cap.
pub fn psnr_loss<F: Scalar>(pred: &Tensor<F>, target: &Tensor<F>) -> Result<Tensor<F>> {
    check_same_shape("psnr_loss", pred, target)?;
    let d = pred.sub(target)?;
    let mse = d.mul(&d)?.mean_all().clamp_min(fl::<F>(1e-8));
    // 40 - 10*log10(1/mse) = 40 + 10*ln(mse)/ln(10)
    Ok(mse
        .ln()
        .scale(fl::<F>(10.0 / std::f64::consts::LN_10))
        .add_const(fl::<F>(40.0)))
}

/// Mean over channels of the absolute difference in per-channel means.
pub fn color_loss<F: Scalar>(pred: &Tensor<F>, target: &Tensor<F>) -> Result<Tensor<F>> {
    check_same_shape("color_loss", pred, target)?;
    let mp = pred.global_avg_pool()?;
    let mt = target.global_avg_pool()?;
    Ok(mp.sub(&mt)?.abs().mean_all())
}

/// `1 - MS-SSIM` over an auto-selected number of dyadic scales.
///
/// Standard 11x11 Gaussian window (sigma 1.5), K1 = 0.01, K2 = 0.03,
/// dynamic range 1. The published five scale weights are truncated to the
/// usable scale count and renormalized to sum to one (as published they
/// sum to 1.0001). Contrast terms are clamped at 1e-6 before the weight
/// exponents.
pub fn ms_ssim_loss<F: Scalar>(
    pred: &Tensor<F>,
    target: &Tensor<F>,
    max_scales: usize,
) -> Result<Tensor<F>> {
    check_same_shape("ms_ssim_loss", pred, target)?;
    let (_, h, w, _) = pred.dims4("ms_ssim_loss")?;
    let usable = usable_scales(h, w, max_scales);
    if usable == 0 {
        return Err(TensorError::InvalidArgument {
            op: "ms_ssim_loss",
            msg: format!("image {h}x{w} is smaller than the 11x11 window"),
        });
    }
    if usable < max_scales {
        log::warn!(
            "ms_ssim: {h}x{w} supports only {usable} of {max_scales} scales; weights renormalized"
        );
    }
    let weights = scale_weights(usable);
    let mut x = pred.clone();
    let mut y = target.clone();
    let mut product: Option<Tensor<F>> = None;
    for (i, &wt) in weights.iter().enumerate() {
        if i > 0 {
            x = x.avg_pool(2, 2)?;
            y = y.avg_pool(2, 2)?;
        }
        let (l_map, cs_map) = ssim_component_maps(&x, &y)?;
        let stat = if i + 1 == weights.len() {
            l_map.mul(&cs_map)?.mean_all()
        } else {
            cs_map.mean_all()
        };
        let term = stat.clamp_min(fl::<F>(1e-6)).powf_const(fl::<F>(wt));
        product = Some(match product {
            None => term,
            Some(p) => p.mul(&term)?,
        });
    }
    Ok(product.unwrap().neg().add_const(F::one()))
}

/// Published MS-SSIM scale weights.
pub const MSSSIM_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];

pub(crate) fn usable_scales(h: usize, w: usize, max_scales: usize) -> usize {
    let mut scales = 0;
    let (mut h, mut w) = (h, w);
    while scales < max_scales && h >= 11 && w >= 11 {
        scales += 1;
        h /= 2;
        w /= 2;
    }
    scales
}

pub(crate) fn scale_weights(scales: usize) -> Vec<f64> {
    let picked = &MSSSIM_WEIGHTS[..scales];
    let sum: f64 = picked.iter().sum();
    picked.iter().map(|w| w / sum).collect()
}

/// 11-tap Gaussian, sigma 1.5, normalized.
pub fn gaussian_taps() -> [f64; 11] {
    let mut taps = [0.0; 11];
    let sigma = 1.5f64;
    let mut sum = 0.0;
    for (i, t) in taps.iter_mut().enumerate() {
        let d = i as f64 - 5.0;
        *t = (-d * d / (2.0 * sigma * sigma)).exp();
        sum += *t;
    }
    for t in taps.iter_mut() {
        *t /= sum;
    }
    taps
}

fn gaussian_window_weight<F: Scalar>(channels: usize) -> Tensor<F> {
    let taps = gaussian_taps();
    let mut data = vec![F::zero(); 11 * 11 * channels];
    for (i, &ti) in taps.iter().enumerate() {
        for (j, &tj) in taps.iter().enumerate() {
            let v = fl::<F>(ti * tj);
            for c in 0..channels {
                data[(i * 11 + j) * channels + c] = v;
            }
        }
    }
    Tensor::from_vec(&[11, 11, channels], data).unwrap()
}

/// Luminance and contrast-structure maps of single-scale SSIM over valid
/// 11x11 Gaussian windows.
fn ssim_component_maps<F: Scalar>(
    x: &Tensor<F>,
    y: &Tensor<F>,
) -> Result<(Tensor<F>, Tensor<F>)> {
    let (_, _, _, c) = x.dims4("ssim")?;
    let window = gaussian_window_weight::<F>(c);
    let blur = |t: &Tensor<F>| t.depthwise_conv2d(&window, None, Padding::Valid);
    let c1 = fl::<F>(1e-4);
    let c2 = fl::<F>(9e-4);
    let mu_x = blur(x)?;
    let mu_y = blur(y)?;
    let mu_x2 = mu_x.mul(&mu_x)?;
    let mu_y2 = mu_y.mul(&mu_y)?;
    let mu_xy = mu_x.mul(&mu_y)?;
    let sigma_x2 = blur(&x.mul(x)?)?.sub(&mu_x2)?;
    let sigma_y2 = blur(&y.mul(y)?)?.sub(&mu_y2)?;
    let sigma_xy = blur(&x.mul(y)?)?.sub(&mu_xy)?;
    let l_map = mu_xy
        .scale(fl::<F>(2.0))
        .add_const(c1)
        .div(&mu_x2.add(&mu_y2)?.add_const(c1))?;
    let cs_map = sigma_xy
        .scale(fl::<F>(2.0))
        .add_const(c2)
        .div(&sigma_x2.add(&sigma_y2)?.add_const(c2))?;
    Ok((l_map, cs_map))
}
