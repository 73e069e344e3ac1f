//! Luminance path and full-network assembly.
//!
//! The luminance channel is smoothed through pooling and attention rather
//! than denoised: conv3x3 to the base width, 8x average pooling, attention
//! at the reduced resolution, bilinear x8 back up, conv3x3, and an
//! additive skip from the pre-pool features. Chrominance runs through the
//! denoiser (plus fusion), both paths concatenate, and the head convs
//! predict the output image directly.

use super::cwd::{cwd_forward, CwdParams};
use super::mhsa::{mhsa_forward, MhsaParams};
use super::msef::{msef_forward, MsefParams};
use super::{ModelConfig, ModelError, ModelParams, Result};
use crate::color::rgb_to_yuv;
use crate::tensor::{Padding, Scalar, Tensor};

type Conv<F> = (Tensor<F>, Tensor<F>);

fn conv_pair<F: Scalar>(params: &ModelParams<F>, name: &str) -> Result<Conv<F>> {
    Ok((
        params.get(&format!("{name}.w"))?.clone(),
        params.get(&format!("{name}.b"))?.clone(),
    ))
}

/// Parameters of the luminance branch.
#[derive(Clone)]
pub enum YPathParams<F: Scalar> {
    /// conv → avg-pool x8 → attention → bilinear x8 → conv → +skip
    PoolAttention {
        conv_in: Conv<F>,
        mhsa: MhsaParams<F>,
        conv_out: Conv<F>,
    },
    /// ablation toggle: a full denoiser on the single luminance channel
    Denoiser(CwdParams<F>),
}

impl<F: Scalar> YPathParams<F> {
    pub fn from_params(params: &ModelParams<F>, cfg: &ModelConfig) -> Result<Self> {
        if cfg.use_y_cwd {
            Ok(Self::Denoiser(CwdParams::from_params(
                params,
                "y.cwd",
                cfg.mhsa_heads,
            )?))
        } else {
            Ok(Self::PoolAttention {
                conv_in: conv_pair(params, "y.conv_in")?,
                mhsa: MhsaParams::from_params(params, "y.mhsa", cfg.mhsa_heads)?,
                conv_out: conv_pair(params, "y.conv_out")?,
            })
        }
    }
}

pub fn luminance_path_forward<F: Scalar>(
    y: &Tensor<F>,
    p: &YPathParams<F>,
) -> Result<Tensor<F>> {
    let (_, h, w, c) = y.dims4("luminance_path_forward")?;
    if c != 1 {
        return Err(ModelError::InvalidConfig(format!(
            "luminance path expects a single channel, got {c}"
        )));
    }
    if h % 8 != 0 || w % 8 != 0 {
        return Err(ModelError::InvalidConfig(format!(
            "luminance path input must have spatial dims divisible by 8, got {h}x{w}"
        )));
    }
    match p {
        YPathParams::Denoiser(cwd) => cwd_forward(y, cwd),
        YPathParams::PoolAttention {
            conv_in,
            mhsa,
            conv_out,
        } => {
            let feats = y
                .conv2d(&conv_in.0, Some(&conv_in.1), 1, Padding::Same)?
                .relu();
            let pooled = feats.avg_pool(8, 8)?;
            let attended = mhsa_forward(&pooled, mhsa)?;
            let up = attended.upsample_bilinear(8)?;
            let refined = up.conv2d(&conv_out.0, Some(&conv_out.1), 1, Padding::Same)?;
            Ok(refined.add(&feats)?)
        }
    }
}

/// Parameters of the chrominance branch.
#[derive(Clone)]
enum UvPathParams<F: Scalar> {
    Denoiser(CwdParams<F>),
    Plain { conv1: Conv<F>, conv2: Conv<F> },
}

/// Assembled network ready to run. Construction resolves every named
/// tensor once; `forward` can then be called repeatedly.
#[derive(Clone)]
pub struct Network<F: Scalar> {
    cfg: ModelConfig,
    y_path: YPathParams<F>,
    uv_path: UvPathParams<F>,
    msef: Option<MsefParams<F>>,
    head: Vec<Conv<F>>,
}

impl<F: Scalar> Network<F> {
    pub fn new(cfg: &ModelConfig, params: &ModelParams<F>) -> Result<Self> {
        cfg.validate()?;
        let y_path = YPathParams::from_params(params, cfg)?;
        let uv_path = if cfg.use_uv_cwd {
            UvPathParams::Denoiser(CwdParams::from_params(params, "uv.cwd", cfg.mhsa_heads)?)
        } else {
            UvPathParams::Plain {
                conv1: conv_pair(params, "uv.plain.conv1")?,
                conv2: conv_pair(params, "uv.plain.conv2")?,
            }
        };
        let msef = if cfg.use_msef {
            Some(MsefParams::from_params(params, cfg.layer_norm_eps)?)
        } else {
            None
        };
        let head = (0..cfg.final_head_widths.len())
            .map(|i| conv_pair(params, &format!("head.{i}")))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            cfg: cfg.clone(),
            y_path,
            uv_path,
            msef,
            head,
        })
    }

    /// Enhance one RGB image `[1,H,W,3]` (values nominally in `[0,1]`).
    /// Any size >= 16x16 is accepted: the image is reflect-padded to a
    /// multiple of 8, processed, and cropped back. The output is the raw
    /// network prediction; clamp at encoding/metric boundaries.
    pub fn forward(&self, rgb: &Tensor<F>) -> Result<Tensor<F>> {
        let (n, h, w, c) = rgb.dims4("model_forward")?;
        if n != 1 || c != 3 {
            return Err(ModelError::InvalidConfig(format!(
                "expected [1,H,W,3] input, got {:?}",
                rgb.shape()
            )));
        }
        if h < 16 || w < 16 {
            return Err(ModelError::InvalidConfig(format!(
                "image too small: {h}x{w}, need at least 16x16"
            )));
        }
        let ph = h.div_ceil(8) * 8;
        let pw = w.div_ceil(8) * 8;
        let padded = if ph != h || pw != w {
            rgb.reflect_pad_hw(ph - h, pw - w)?
        } else {
            rgb.clone()
        };
        let yuv = rgb_to_yuv(&padded)?;
        let y = yuv.slice_last(0, 1)?;
        let uv = yuv.slice_last(1, 2)?;

        let y_feats = luminance_path_forward(&y, &self.y_path)?;
        let mut uv_feats = match &self.uv_path {
            UvPathParams::Denoiser(cwd) => cwd_forward(&uv, cwd)?,
            UvPathParams::Plain { conv1, conv2 } => uv
                .conv2d(&conv1.0, Some(&conv1.1), 1, Padding::Same)?
                .relu()
                .conv2d(&conv2.0, Some(&conv2.1), 1, Padding::Same)?
                .relu(),
        };
        if let Some(msef) = &self.msef {
            uv_feats = msef_forward(&uv_feats, msef)?;
        }
        let mut features = Tensor::concat_channels(&[y_feats, uv_feats])?;
        let last = self.head.len() - 1;
        for (i, (wt, b)) in self.head.iter().enumerate() {
            features = features.conv2d(wt, Some(b), 1, Padding::Same)?;
            if i != last {
                features = features.relu();
            }
        }
        let mut out = features;
        if self.cfg.global_residual {
            out = out.add(&padded)?;
        }
        if ph != h || pw != w {
            out = out.crop_hw(h, w)?;
        }
        Ok(out)
    }
}

/// One-shot convenience wrapper over [`Network`].
pub fn model_forward<F: Scalar>(
    rgb: &Tensor<F>,
    params: &ModelParams<F>,
    cfg: &ModelConfig,
) -> Result<Tensor<F>> {
    Network::new(cfg, params)?.forward(rgb)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::init_params;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_img(seed: u64, h: usize, w: usize) -> Tensor<f32> {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..h * w * 3).map(|_| r.gen_range(0.0..1.0)).collect();
        Tensor::from_vec(&[1, h, w, 3], data).unwrap()
    }

    #[test]
    fn output_shape_matches_input_shape() {
        let cfg = ModelConfig::default();
        let params = init_params::<f32>(&cfg, 5).unwrap();
        let net = Network::new(&cfg, &params).unwrap();
        for (h, w) in [(17, 23), (64, 64), (40, 33)] {
            let img = rand_img(h as u64 * 100 + w as u64, h, w);
            let out = net.forward(&img).unwrap();
            assert_eq!(out.shape(), &[1, h, w, 3], "{h}x{w}");
        }
    }

    #[test]
    fn too_small_image_rejected() {
        let cfg = ModelConfig::default();
        let params = init_params::<f32>(&cfg, 5).unwrap();
        let net = Network::new(&cfg, &params).unwrap();
        assert!(net.forward(&rand_img(1, 15, 40)).is_err());
    }

    #[test]
    fn zero_params_give_constant_bias_output() {
        let cfg = ModelConfig::default();
        let mut params = crate::model::ModelParams::<f32>::new();
        for spec in crate::model::parameter_specs(&cfg) {
            // keep layer-norm gain at one, everything else zero
            let t = if spec.init == crate::model::InitKind::Ones {
                Tensor::ones(&spec.shape)
            } else {
                Tensor::zeros(&spec.shape)
            };
            params.insert(spec.name.clone(), t);
        }
        let net = Network::new(&cfg, &params).unwrap();
        let a = net.forward(&rand_img(9, 24, 24)).unwrap();
        let b = net.forward(&rand_img(10, 24, 24)).unwrap();
        // fully zero weights: output is the head bias, independent of input
        assert_eq!(a.data(), b.data());
        assert!(a.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn all_variants_run() {
        for (y, uv, msef) in [
            (false, true, true),
            (true, false, false),
            (true, true, true),
            (false, false, true),
            (false, false, false),
        ] {
            let cfg = ModelConfig {
                use_y_cwd: y,
                use_uv_cwd: uv,
                use_msef: msef,
                ..Default::default()
            };
            let params = init_params::<f32>(&cfg, 3).unwrap();
            let out = model_forward(&rand_img(4, 32, 32), &params, &cfg).unwrap();
            assert_eq!(out.shape(), &[1, 32, 32, 3]);
        }
    }

    #[test]
    fn luminance_path_skip_dominates_when_attention_masked() {
        // zero the attention output projection and the refinement conv:
        // the path must reduce to exactly its skip branch (conv_in + relu)
        let cfg = ModelConfig::default();
        let params = init_params::<f32>(&cfg, 8).unwrap();
        let mut masked = crate::model::ModelParams::<f32>::new();
        for (n, t) in params.iter() {
            let t = if n == "y.mhsa.wo" || n == "y.mhsa.bo" || n == "y.conv_out.w"
                || n == "y.conv_out.b"
            {
                Tensor::zeros(t.shape())
            } else {
                t.clone()
            };
            masked.insert(n.to_string(), t);
        }
        let y_path = YPathParams::from_params(&masked, &cfg).unwrap();
        let mut r = ChaCha8Rng::seed_from_u64(12);
        let y: Vec<f32> = (0..24 * 24).map(|_| r.gen_range(0.0..1.0)).collect();
        let y = Tensor::from_vec(&[1, 24, 24, 1], y).unwrap();
        let out = luminance_path_forward(&y, &y_path).unwrap();
        // reference: the skip branch alone
        let (w, b) = (
            masked.get("y.conv_in.w").unwrap(),
            masked.get("y.conv_in.b").unwrap(),
        );
        let skip = y.conv2d(w, Some(b), 1, Padding::Same).unwrap().relu();
        assert_eq!(out.data(), skip.data());
    }
}
