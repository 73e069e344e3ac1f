//! Squeeze-excite fusion with a depthwise-conv modulated residual.
//!
//! One shared layer normalization feeds three uses: the squeeze pipeline
//! (global pool, reduce, ReLU, expand, Tanh), the gating product, and the
//! depthwise conv branch. With the expansion weights at zero the Tanh gate
//! is zero and the block returns its input bit-exactly.

use super::{ModelParams, Result};
use crate::tensor::{fl, Padding, Scalar, Tensor};

#[derive(Clone)]
pub struct MsefParams<F: Scalar> {
    pub ln_gain: Tensor<F>,
    pub ln_shift: Tensor<F>,
    pub w1: Tensor<F>,
    pub b1: Tensor<F>,
    pub w2: Tensor<F>,
    pub b2: Tensor<F>,
    pub dw_weight: Tensor<F>,
    pub dw_bias: Tensor<F>,
    pub ln_eps: f64,
}

impl<F: Scalar> MsefParams<F> {
    pub fn from_params(params: &ModelParams<F>, ln_eps: f64) -> Result<Self> {
        Ok(Self {
            ln_gain: params.get("msef.ln.gain")?.clone(),
            ln_shift: params.get("msef.ln.shift")?.clone(),
            w1: params.get("msef.w1")?.clone(),
            b1: params.get("msef.b1")?.clone(),
            w2: params.get("msef.w2")?.clone(),
            b2: params.get("msef.b2")?.clone(),
            dw_weight: params.get("msef.dw.w")?.clone(),
            dw_bias: params.get("msef.dw.b")?.clone(),
            ln_eps,
        })
    }
}

pub fn msef_forward<F: Scalar>(f_in: &Tensor<F>, p: &MsefParams<F>) -> Result<Tensor<F>> {
    let (n, _, _, c) = f_in.dims4("msef_forward")?;
    // single layer norm evaluation shared by the squeeze and conv branches
    let normed = f_in.layer_norm(&p.ln_gain, &p.ln_shift, fl::<F>(p.ln_eps))?;
    let pooled = normed.global_avg_pool()?.reshape(&[n, c])?;
    let reduced = pooled.dense(&p.w1, Some(&p.b1))?.relu();
    let gate = reduced
        .dense(&p.w2, Some(&p.b2))?
        .tanh()
        .reshape(&[n, 1, 1, c])?;
    let expanded = gate.mul(&normed)?;
    let conv = normed.depthwise_conv2d(&p.dw_weight, Some(&p.dw_bias), Padding::Same)?;
    Ok(conv.mul(&expanded)?.add(f_in)?)
}
