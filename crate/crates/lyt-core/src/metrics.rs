//! Evaluation metrics: PSNR, single-scale SSIM, CIEDE2000 color
//! difference, and ground-truth mean-brightness alignment.
//!
//! These run outside the tape in f64. Predictions should be clamped to
//! `[0,1]` before entering (the eval pipeline does this); the functions
//! themselves compute on the values given.

use crate::color::{luminance, srgb_pixel_to_lab};
use crate::tensor::{Result, Scalar, Tensor, TensorError};
use serde::{Deserialize, Serialize};

/// PSNR cap reported for (near-)identical images, avoiding infinities in
/// result tables.
pub const PSNR_CAP_DB: f64 = 99.0;

/// Per-image evaluation row; serialized as one CSV line.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct EvalRecord {
    pub id: String,
    pub psnr: f64,
    pub ssim: f64,
    pub ciede2000: f64,
    pub gt_mean_applied: bool,
}

pub const EVAL_CSV_HEADER: &str = "id,psnr,ssim,ciede2000,gt_mean_applied";

impl EvalRecord {
    pub fn csv_line(&self) -> String {
        format!(
            "{},{:.4},{:.6},{:.4},{}",
            self.id, self.psnr, self.ssim, self.ciede2000, self.gt_mean_applied
        )
    }
}

fn same_shape<F: Scalar>(op: &'static str, a: &Tensor<F>, b: &Tensor<F>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(TensorError::ShapeMismatch {
            op,
            expected: format!("{:?}", a.shape()),
            got: format!("{:?}", b.shape()),
        });
    }
    Ok(())
}

/// Peak signal-to-noise ratio in dB against peak 1.0, capped at 99 dB.
pub fn psnr<F: Scalar>(pred: &Tensor<F>, target: &Tensor<F>) -> Result<f64> {
    same_shape("psnr", pred, target)?;
    let mut acc = 0.0f64;
    for (&p, &t) in pred.data().iter().zip(target.data().iter()) {
        let d = p.to_f64().unwrap() - t.to_f64().unwrap();
        acc += d * d;
    }
    let mse = acc / pred.numel() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP_DB))
}

/// Single-scale SSIM: 11x11 Gaussian window (sigma 1.5), K1 = 0.01,
/// K2 = 0.03, dynamic range 1, averaged over valid windows and channels.
pub fn ssim<F: Scalar>(pred: &Tensor<F>, target: &Tensor<F>) -> Result<f64> {
    same_shape("ssim", pred, target)?;
    let (n, h, w, c) = pred.dims4("ssim")?;
    if h < 11 || w < 11 {
        return Err(TensorError::InvalidArgument {
            op: "ssim",
            msg: format!("image {h}x{w} is smaller than the 11x11 window"),
        });
    }
    let taps = crate::loss::ssim_window_taps();
    let (c1, c2) = (1e-4f64, 9e-4f64);
    let (oh, ow) = (h - 10, w - 10);
    let mut total = 0.0f64;
    let mut count = 0usize;
    for n_i in 0..n {
        for ch in 0..c {
            // extract one channel plane in f64
            let mut plane_p = vec![0.0f64; h * w];
            let mut plane_t = vec![0.0f64; h * w];
            for i in 0..h * w {
                plane_p[i] = pred.data()[(n_i * h * w + i) * c + ch].to_f64().unwrap();
                plane_t[i] = target.data()[(n_i * h * w + i) * c + ch].to_f64().unwrap();
            }
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut mx = 0.0;
                    let mut my = 0.0;
                    let mut xx = 0.0;
                    let mut yy = 0.0;
                    let mut xy = 0.0;
                    for dy in 0..11 {
                        let wy = taps[dy];
                        for dx in 0..11 {
                            let wgt = wy * taps[dx];
                            let pv = plane_p[(oy + dy) * w + ox + dx];
                            let tv = plane_t[(oy + dy) * w + ox + dx];
                            mx += wgt * pv;
                            my += wgt * tv;
                            xx += wgt * pv * pv;
                            yy += wgt * tv * tv;
                            xy += wgt * pv * tv;
                        }
                    }
                    let sx = xx - mx * mx;
                    let sy = yy - my * my;
                    let sxy = xy - mx * my;
                    let val = ((2.0 * mx * my + c1) * (2.0 * sxy + c2))
                        / ((mx * mx + my * my + c1) * (sx + sy + c2));
                    total += val;
                    count += 1;
                }
            }
        }
    }
    Ok(total / count as f64)
}

/// CIEDE2000 color difference between two Lab triples, including the hue
/// rotation term.
pub fn ciede2000(lab1: [f64; 3], lab2: [f64; 3]) -> f64 {
    const POW7_25: f64 = 6103515625.0; // 25^7
    let (l1, a1, b1) = (lab1[0], lab1[1], lab1[2]);
    let (l2, a2, b2) = (lab2[0], lab2[1], lab2[2]);

    let c1 = (a1 * a1 + b1 * b1).sqrt();
    let c2 = (a2 * a2 + b2 * b2).sqrt();
    let cbar = 0.5 * (c1 + c2);
    let cbar7 = cbar.powi(7);
    let g = 0.5 * (1.0 - (cbar7 / (cbar7 + POW7_25)).sqrt());
    let a1p = (1.0 + g) * a1;
    let a2p = (1.0 + g) * a2;
    let c1p = (a1p * a1p + b1 * b1).sqrt();
    let c2p = (a2p * a2p + b2 * b2).sqrt();

    let hp = |b: f64, ap: f64| -> f64 {
        if b == 0.0 && ap == 0.0 {
            0.0
        } else {
            let h = b.atan2(ap).to_degrees();
            if h < 0.0 {
                h + 360.0
            } else {
                h
            }
        }
    };
    let h1p = hp(b1, a1p);
    let h2p = hp(b2, a2p);

    let dl = l2 - l1;
    let dc = c2p - c1p;
    let dh_angle = if c1p * c2p == 0.0 {
        0.0
    } else {
        let d = h2p - h1p;
        if d.abs() <= 180.0 {
            d
        } else if d > 180.0 {
            d - 360.0
        } else {
            d + 360.0
        }
    };
    let dh = 2.0 * (c1p * c2p).sqrt() * (dh_angle.to_radians() / 2.0).sin();

    let lbar = 0.5 * (l1 + l2);
    let cbarp = 0.5 * (c1p + c2p);
    let hbar = if c1p * c2p == 0.0 {
        h1p + h2p
    } else {
        let sum = h1p + h2p;
        if (h1p - h2p).abs() <= 180.0 {
            0.5 * sum
        } else if sum < 360.0 {
            0.5 * (sum + 360.0)
        } else {
            0.5 * (sum - 360.0)
        }
    };

    let t = 1.0 - 0.17 * (hbar - 30.0).to_radians().cos()
        + 0.24 * (2.0 * hbar).to_radians().cos()
        + 0.32 * (3.0 * hbar + 6.0).to_radians().cos()
        - 0.20 * (4.0 * hbar - 63.0).to_radians().cos();

    let dtheta = 30.0 * (-((hbar - 275.0) / 25.0).powi(2)).exp();
    let cbarp7 = cbarp.powi(7);
    let rc = 2.0 * (cbarp7 / (cbarp7 + POW7_25)).sqrt();
    let rt = -(2.0 * dtheta).to_radians().sin() * rc;

    let sl = 1.0 + 0.015 * (lbar - 50.0).powi(2) / (20.0 + (lbar - 50.0).powi(2)).sqrt();
    let sc = 1.0 + 0.045 * cbarp;
    let sh = 1.0 + 0.015 * cbarp * t;

    ((dl / sl).powi(2)
        + (dc / sc).powi(2)
        + (dh / sh).powi(2)
        + rt * (dc / sc) * (dh / sh))
        .sqrt()
}

/// Mean CIEDE2000 over all pixels of two sRGB images (converted to Lab).
pub fn image_ciede2000<F: Scalar>(pred: &Tensor<F>, target: &Tensor<F>) -> Result<f64> {
    same_shape("image_ciede2000", pred, target)?;
    let (_, _, _, c) = pred.dims4("image_ciede2000")?;
    if c != 3 {
        return Err(TensorError::InvalidArgument {
            op: "image_ciede2000",
            msg: format!("expected RGB, got {c} channels"),
        });
    }
    let mut total = 0.0;
    let pixels = pred.numel() / 3;
    for i in 0..pixels {
        let p = &pred.data()[i * 3..i * 3 + 3];
        let t = &target.data()[i * 3..i * 3 + 3];
        let lab_p = srgb_pixel_to_lab(
            p[0].to_f64().unwrap(),
            p[1].to_f64().unwrap(),
            p[2].to_f64().unwrap(),
        );
        let lab_t = srgb_pixel_to_lab(
            t[0].to_f64().unwrap(),
            t[1].to_f64().unwrap(),
            t[2].to_f64().unwrap(),
        );
        total += ciede2000(lab_p, lab_t);
    }
    Ok(total / pixels as f64)
}

/// Brightness-alignment convention before metric computation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GtMeanMode {
    None,
    /// Scale the prediction by mean(Y_target) / mean(Y_pred).
    Scale,
    /// Solve mean_lum(pred^gamma) = mean_lum(target) by bisection.
    Gamma,
}

impl std::str::FromStr for GtMeanMode {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "none" => Ok(Self::None),
            "scale" => Ok(Self::Scale),
            "gamma" => Ok(Self::Gamma),
            other => Err(format!("unknown gt-mean mode '{other}' (none|scale|gamma)")),
        }
    }
}

fn mean_luminance<F: Scalar>(img: &Tensor<F>) -> f64 {
    let mut acc = 0.0;
    for px in img.data().chunks(3) {
        acc += luminance(px[0], px[1], px[2]).to_f64().unwrap();
    }
    acc / (img.numel() / 3) as f64
}

/// Align the prediction's mean luminance with the target's; returns the
/// adjusted image and whether the adjustment was applied (a too-dark
/// prediction is passed through with a warning).
pub fn gt_mean_adjust<F: Scalar>(
    pred: &Tensor<F>,
    target: &Tensor<F>,
    mode: GtMeanMode,
) -> Result<(Tensor<F>, bool)> {
    same_shape("gt_mean_adjust", pred, target)?;
    let clamp01 = |t: &Tensor<F>| -> Tensor<F> {
        let data = t
            .data()
            .iter()
            .map(|&v| v.max(F::zero()).min(F::one()))
            .collect();
        Tensor::from_vec(t.shape(), data).unwrap()
    };
    match mode {
        GtMeanMode::None => Ok((clamp01(pred), false)),
        GtMeanMode::Scale => {
            let mp = mean_luminance(pred);
            let mt = mean_luminance(target);
            if mp < 1e-6 {
                log::warn!("gt_mean_adjust: prediction luminance {mp:.2e} too small, skipping");
                return Ok((clamp01(pred), false));
            }
            let s = F::from_f64(mt / mp).unwrap();
            let data = pred
                .data()
                .iter()
                .map(|&v| (v * s).max(F::zero()).min(F::one()))
                .collect();
            Ok((Tensor::from_vec(pred.shape(), data)?, true))
        }
        GtMeanMode::Gamma => {
            let clamped = clamp01(pred);
            let mp = mean_luminance(&clamped);
            let mt = mean_luminance(target);
            if mp < 1e-6 {
                log::warn!("gt_mean_adjust: prediction luminance {mp:.2e} too small, skipping");
                return Ok((clamped, false));
            }
            // mean luminance of pred^gamma decreases monotonically in gamma
            let mean_at = |gamma: f64| -> f64 {
                let mut acc = 0.0;
                for px in clamped.data().chunks(3) {
                    let r = px[0].to_f64().unwrap().powf(gamma);
                    let g = px[1].to_f64().unwrap().powf(gamma);
                    let b = px[2].to_f64().unwrap().powf(gamma);
                    acc += 0.299 * r + 0.587 * g + 0.114 * b;
                }
                acc / (clamped.numel() / 3) as f64
            };
            let (mut lo, mut hi) = (0.02f64, 50.0f64);
            if mean_at(lo) < mt || mean_at(hi) > mt {
                // target mean unreachable by a gamma curve; fall through
                log::warn!("gt_mean_adjust: gamma solve out of range, skipping");
                return Ok((clamped, false));
            }
            for _ in 0..80 {
                let mid = 0.5 * (lo + hi);
                if mean_at(mid) > mt {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            let gamma = 0.5 * (lo + hi);
            let data = clamped
                .data()
                .iter()
                .map(|&v| F::from_f64(v.to_f64().unwrap().powf(gamma)).unwrap())
                .collect();
            Ok((Tensor::from_vec(pred.shape(), data)?, true))
        }
    }
}

/// Full per-image evaluation: optional brightness alignment, then PSNR,
/// SSIM, and mean CIEDE2000.
pub fn evaluate_pair<F: Scalar>(
    id: &str,
    pred_raw: &Tensor<F>,
    target: &Tensor<F>,
    mode: GtMeanMode,
) -> Result<EvalRecord> {
    let (adjusted, applied) = gt_mean_adjust(pred_raw, target, mode)?;
    Ok(EvalRecord {
        id: id.to_string(),
        psnr: psnr(&adjusted, target)?,
        ssim: ssim(&adjusted, target)?,
        ciede2000: image_ciede2000(&adjusted, target)?,
        gt_mean_applied: applied,
    })
}
