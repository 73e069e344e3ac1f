//! Low-light image enhancement with a lightweight dual-path
//! luminance/chrominance transformer, built on a minimal dense-tensor
//! engine with reverse-mode differentiation.
//!
//! Modules:
//! - [`tensor`]: NHWC tensors, forward operators, tape and backward pass.
//! - [`color`]: RGB↔YUV decomposition and sRGB→Lab.
//! - [`model`]: the attention / denoiser / fusion blocks and full network.
//! - [`loss`]: the six-term hybrid training objective.
//! - [`metrics`]: PSNR, SSIM, CIEDE2000 and ground-truth mean alignment.
//! - [`data`]: paired low/normal-light dataset loading and augmentation.
//! - [`train`]: ADAM with cosine annealing, training loop, checkpoints.

pub mod color;
pub mod data;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod tensor;
pub mod train;

pub use tensor::{Tensor, TensorError};
