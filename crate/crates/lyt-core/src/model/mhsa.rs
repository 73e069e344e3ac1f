//! Multi-head self-attention over the flattened spatial positions of a
//! feature map. No positional encoding: the block is equivariant under any
//! permutation of the token order.

use super::{ModelError, ModelParams, Result};
use crate::tensor::{fl, Scalar, Tensor};

/// Projection weights of one attention block. Query/key/value are
/// bias-free; the output projection carries a bias.
#[derive(Clone)]
pub struct MhsaParams<F: Scalar> {
    pub wq: Tensor<F>,
    pub wk: Tensor<F>,
    pub wv: Tensor<F>,
    pub wo: Tensor<F>,
    pub bo: Tensor<F>,
    pub heads: usize,
}

impl<F: Scalar> MhsaParams<F> {
    pub fn from_params(params: &ModelParams<F>, prefix: &str, heads: usize) -> Result<Self> {
        Ok(Self {
            wq: params.get(&format!("{prefix}.wq"))?.clone(),
            wk: params.get(&format!("{prefix}.wk"))?.clone(),
            wv: params.get(&format!("{prefix}.wv"))?.clone(),
            wo: params.get(&format!("{prefix}.wo"))?.clone(),
            bo: params.get(&format!("{prefix}.bo"))?.clone(),
            heads,
        })
    }

    pub fn embed_dim(&self) -> usize {
        self.wq.shape()[1]
    }
}

/// Scaled dot-product attention over `H*W` tokens of a `[1,H,W,C]` map.
///
/// Tokens are projected to queries/keys/values of width `D`, split into
/// `heads` slices of width `D/heads`, attended independently with a
/// `1/sqrt(d_k)` score scale, concatenated, projected back to `C` and
/// reshaped to the original spatial layout.
pub fn mhsa_forward<F: Scalar>(f_in: &Tensor<F>, p: &MhsaParams<F>) -> Result<Tensor<F>> {
    let (n, h, w, c) = f_in.dims4("mhsa_forward")?;
    if n != 1 {
        return Err(ModelError::InvalidConfig(format!(
            "attention expects a single image, got batch {n}"
        )));
    }
    let d = p.embed_dim();
    if d % p.heads != 0 {
        return Err(ModelError::InvalidConfig(format!(
            "embed dim {d} not divisible by {} heads",
            p.heads
        )));
    }
    let d_k = d / p.heads;
    let tokens = f_in.reshape(&[h * w, c])?;
    let q = tokens.dense(&p.wq, None)?;
    let k = tokens.dense(&p.wk, None)?;
    let v = tokens.dense(&p.wv, None)?;
    let scale = fl::<F>(1.0 / (d_k as f64).sqrt());
    let mut head_outputs = Vec::with_capacity(p.heads);
    for i in 0..p.heads {
        let qi = q.slice_last(i * d_k, d_k)?;
        let ki = k.slice_last(i * d_k, d_k)?;
        let vi = v.slice_last(i * d_k, d_k)?;
        let scores = qi.matmul(&ki.transpose2d()?)?.scale(scale);
        let attn = scores.softmax(1)?;
        head_outputs.push(attn.matmul(&vi)?);
    }
    let merged = Tensor::concat_last(&head_outputs)?;
    let projected = merged.dense(&p.wo, Some(&p.bo))?;
    Ok(projected.reshape(&[1, h, w, c])?)
}
