//! Channel-wise denoiser: a U-shaped conv network with attention at the
//! bottleneck and interpolation-based upsampling.
//!
//! Encoder: one stride-1 conv3x3 to the full feature width, then three
//! stride-2 conv3x3 stages at the internal width, each ReLU-activated.
//! The bottleneck applies self-attention at 1/8 resolution. Decoder:
//! three stages of (bilinear x2, conv3x3, ReLU, additive skip from the
//! matching encoder level). The last stage returns to the full width, so
//! the output shape matches the input's spatial extent.

use super::mhsa::{mhsa_forward, MhsaParams};
use super::{ModelError, ModelParams, Result};
use crate::tensor::{Padding, Scalar, Tensor};

#[derive(Clone)]
pub struct CwdParams<F: Scalar> {
    pub enc: [(Tensor<F>, Tensor<F>); 4],
    pub mhsa: MhsaParams<F>,
    pub dec: [(Tensor<F>, Tensor<F>); 3],
}

impl<F: Scalar> CwdParams<F> {
    pub fn from_params(params: &ModelParams<F>, prefix: &str, heads: usize) -> Result<Self> {
        let conv = |name: &str| -> Result<(Tensor<F>, Tensor<F>)> {
            Ok((
                params.get(&format!("{prefix}.{name}.w"))?.clone(),
                params.get(&format!("{prefix}.{name}.b"))?.clone(),
            ))
        };
        Ok(Self {
            enc: [conv("enc1")?, conv("enc2")?, conv("enc3")?, conv("enc4")?],
            mhsa: MhsaParams::from_params(params, &format!("{prefix}.mhsa"), heads)?,
            dec: [conv("dec1")?, conv("dec2")?, conv("dec3")?],
        })
    }
}

pub fn cwd_forward<F: Scalar>(f_in: &Tensor<F>, p: &CwdParams<F>) -> Result<Tensor<F>> {
    let (_, h, w, _) = f_in.dims4("cwd_forward")?;
    if h % 8 != 0 || w % 8 != 0 {
        return Err(ModelError::InvalidConfig(format!(
            "denoiser input must have spatial dims divisible by 8, got {h}x{w}"
        )));
    }
    let e1 = f_in
        .conv2d(&p.enc[0].0, Some(&p.enc[0].1), 1, Padding::Same)?
        .relu();
    let e2 = e1
        .conv2d(&p.enc[1].0, Some(&p.enc[1].1), 2, Padding::Same)?
        .relu();
    let e3 = e2
        .conv2d(&p.enc[2].0, Some(&p.enc[2].1), 2, Padding::Same)?
        .relu();
    let e4 = e3
        .conv2d(&p.enc[3].0, Some(&p.enc[3].1), 2, Padding::Same)?
        .relu();
    let bottleneck = mhsa_forward(&e4, &p.mhsa)?;
    let d1 = bottleneck
        .upsample_bilinear(2)?
        .conv2d(&p.dec[0].0, Some(&p.dec[0].1), 1, Padding::Same)?
        .relu()
        .add(&e3)?;
    let d2 = d1
        .upsample_bilinear(2)?
        .conv2d(&p.dec[1].0, Some(&p.dec[1].1), 1, Padding::Same)?
        .relu()
        .add(&e2)?;
    let d3 = d2
        .upsample_bilinear(2)?
        .conv2d(&p.dec[2].0, Some(&p.dec[2].1), 1, Padding::Same)?
        .relu()
        .add(&e1)?;
    Ok(d3)
}
