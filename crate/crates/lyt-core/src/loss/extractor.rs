//! Frozen feature extractor for the perceptual loss.
//!
//! A pretrained classification backbone is deliberately not bundled; the
//! default extractor is a seed-fixed three-stage conv stack (8→16→32
//! channels, stride 2 between stages, ReLU) whose weights never train.
//! External weights can be loaded from a checkpoint container instead, so
//! the loss structure is preserved whichever feature stack is plugged in.

use crate::tensor::{Padding, Result, Scalar, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const DEFAULT_EXTRACTOR_SEED: u64 = 0x4c59;
const STAGE_CHANNELS: [usize; 3] = [8, 16, 32];

#[derive(Clone)]
pub struct FeatureExtractor<F: Scalar> {
    stages: Vec<(Tensor<F>, usize)>,
    identity: bool,
}

impl<F: Scalar> FeatureExtractor<F> {
    /// The self-contained default: deterministic random stack from a seed.
    pub fn default_seeded(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut stages = Vec::new();
        let mut cin = 3usize;
        for (i, &cout) in STAGE_CHANNELS.iter().enumerate() {
            let fan_in = 9 * cin;
            let bound = 1.0 / (fan_in as f64).sqrt();
            let n = 9 * cin * cout;
            let data: Vec<F> = (0..n)
                .map(|_| F::from_f64(rng.gen_range(-bound..bound)).unwrap())
                .collect();
            let weight = Tensor::from_vec(&[3, 3, cin, cout], data).unwrap();
            let stride = if i == 0 { 1 } else { 2 };
            stages.push((weight, stride));
            cin = cout;
        }
        Self {
            stages,
            identity: false,
        }
    }

    /// Tap the raw image itself; with this extractor the perceptual loss
    /// equals plain MSE.
    pub fn identity() -> Self {
        Self {
            stages: Vec::new(),
            identity: true,
        }
    }

    /// Build from externally supplied stage weights `[3,3,cin,cout]` with
    /// their strides (checkpoint-loaded extractors enter here).
    pub fn from_stages(stages: Vec<(Tensor<F>, usize)>) -> Self {
        let identity = stages.is_empty();
        Self { stages, identity }
    }

    pub fn stages(&self) -> &[(Tensor<F>, usize)] {
        &self.stages
    }

    /// Feature maps tapped after each stage (or the input itself for the
    /// identity extractor). Weights are detached: gradients flow through
    /// the stack into the image, never into the extractor.
    pub fn features(&self, img: &Tensor<F>) -> Result<Vec<Tensor<F>>> {
        if self.identity {
            return Ok(vec![img.clone()]);
        }
        let mut taps = Vec::with_capacity(self.stages.len());
        let mut x = img.clone();
        for (weight, stride) in &self.stages {
            x = x
                .conv2d(&weight.detached(), None, *stride, Padding::Same)?
                .relu();
            taps.push(x.clone());
        }
        Ok(taps)
    }
}

impl<F: Scalar> Default for FeatureExtractor<F> {
    fn default() -> Self {
        Self::default_seeded(DEFAULT_EXTRACTOR_SEED)
    }
}
