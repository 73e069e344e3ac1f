//! The hybrid training objective:
//! `L = L_S + a1 L_Perc + a2 L_Hist + a3 L_PSNR + a4 L_Color + a5 L_MS-SSIM`.

mod components;
mod extractor;

pub use components::{
    color_loss, histogram_loss, ms_ssim_loss, perceptual_loss, psnr_loss, smooth_l1,
    MSSSIM_WEIGHTS,
};
pub use components::gaussian_taps as ssim_window_taps;
pub use extractor::{FeatureExtractor, DEFAULT_EXTRACTOR_SEED};

use crate::tensor::{fl, Result, Scalar, Tensor};
use serde::{Deserialize, Serialize};

/// Combination coefficients and sub-loss settings.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct LossWeights {
    pub alpha_perceptual: f64,
    pub alpha_histogram: f64,
    pub alpha_psnr: f64,
    pub alpha_color: f64,
    pub alpha_ms_ssim: f64,
    pub smooth_l1_beta: f64,
    pub hist_bins: usize,
    pub hist_bandwidth: f64,
    pub msssim_scales: usize,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha_perceptual: 0.06,
            alpha_histogram: 0.05,
            alpha_psnr: 0.0083,
            alpha_color: 0.25,
            alpha_ms_ssim: 0.5,
            smooth_l1_beta: 1.0,
            hist_bins: 256,
            hist_bandwidth: 1.0 / 256.0,
            msssim_scales: 5,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> std::result::Result<(), String> {
        let alphas = [
            self.alpha_perceptual,
            self.alpha_histogram,
            self.alpha_psnr,
            self.alpha_color,
            self.alpha_ms_ssim,
        ];
        if alphas.iter().any(|&a| a < 0.0 || !a.is_finite()) {
            return Err("loss alphas must be finite and >= 0".into());
        }
        if self.hist_bins < 2 {
            return Err(format!("hist_bins must be >= 2, got {}", self.hist_bins));
        }
        if !(1..=5).contains(&self.msssim_scales) {
            return Err(format!(
                "msssim_scales must be in 1..=5, got {}",
                self.msssim_scales
            ));
        }
        if self.smooth_l1_beta <= 0.0 || self.hist_bandwidth <= 0.0 {
            return Err("smooth_l1_beta and hist_bandwidth must be > 0".into());
        }
        Ok(())
    }
}

/// Component values of one hybrid-loss evaluation; `total` stays attached
/// to the tape, the individual terms are logged per step.
pub struct HybridLoss<F: Scalar> {
    pub total: Tensor<F>,
    pub smooth_l1: F,
    pub perceptual: F,
    pub histogram: F,
    pub psnr: F,
    pub color: F,
    pub ms_ssim: F,
}

/// Evaluate all six components and their weighted sum on the tape.
pub fn hybrid_loss<F: Scalar>(
    pred: &Tensor<F>,
    target: &Tensor<F>,
    weights: &LossWeights,
    extractor: &FeatureExtractor<F>,
) -> Result<HybridLoss<F>> {
    let l_s = smooth_l1(pred, target, weights.smooth_l1_beta)?;
    let l_perc = perceptual_loss(pred, target, extractor)?;
    let l_hist = histogram_loss(pred, target, weights)?;
    let l_psnr = psnr_loss(pred, target)?;
    let l_color = color_loss(pred, target)?;
    let l_msssim = ms_ssim_loss(pred, target, weights.msssim_scales)?;
    let total = l_s
        .add(&l_perc.scale(fl::<F>(weights.alpha_perceptual)))?
        .add(&l_hist.scale(fl::<F>(weights.alpha_histogram)))?
        .add(&l_psnr.scale(fl::<F>(weights.alpha_psnr)))?
        .add(&l_color.scale(fl::<F>(weights.alpha_color)))?
        .add(&l_msssim.scale(fl::<F>(weights.alpha_ms_ssim)))?;
    Ok(HybridLoss {
        total,
        smooth_l1: l_s.item(),
        perceptual: l_perc.item(),
        histogram: l_hist.item(),
        psnr: l_psnr.item(),
        color: l_color.item(),
        ms_ssim: l_msssim.item(),
    })
}
