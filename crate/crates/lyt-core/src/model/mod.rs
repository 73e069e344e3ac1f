//! The enhancement network: a luminance path with attention at reduced
//! resolution, a U-shaped chrominance denoiser with an attention
//! bottleneck, squeeze-excite fusion, and a convolutional head that
//! predicts the restored RGB image.

mod cwd;
mod mhsa;
mod msef;
mod net;

pub use cwd::{cwd_forward, CwdParams};
pub use mhsa::{mhsa_forward, MhsaParams};
pub use msef::{msef_forward, MsefParams};
pub use net::{luminance_path_forward, model_forward, YPathParams};

use crate::tensor::{Scalar, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("missing parameter '{0}'")]
    MissingParameter(String),
    #[error("parameter '{name}': expected shape {expected:?}, got {got:?}")]
    ParameterShape {
        name: String,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error(transparent)]
    Tensor(#[from] crate::tensor::TensorError),
}

pub type Result<T> = std::result::Result<T, ModelError>;

/// Architecture hyperparameters. The defaults land the full default
/// variant at 44,909 trainable scalars (reference budget 44,923) with the
/// fusion block contributing exactly 546.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct ModelConfig {
    /// Feature width of the luminance path, denoiser endpoints and fusion.
    pub base_width: usize,
    /// Embedding dim of the luminance-path attention block.
    pub mhsa_embed_dim: usize,
    /// Attention heads (shared by all attention blocks).
    pub mhsa_heads: usize,
    /// Internal width of the denoiser's strided encoder/decoder levels.
    pub cwd_width: usize,
    /// Hidden units of the squeeze-excite reduction.
    pub msef_hidden: usize,
    /// Route luminance through a denoiser instead of pool + attention.
    pub use_y_cwd: bool,
    /// Route chrominance through the denoiser (plain conv stack when off).
    pub use_uv_cwd: bool,
    /// Apply squeeze-excite fusion to the chrominance features.
    pub use_msef: bool,
    /// Channel widths of the final conv stack; last entry must be 3.
    pub final_head_widths: Vec<usize>,
    /// Predict a residual over the input instead of the image directly.
    pub global_residual: bool,
    /// Layer normalization epsilon.
    pub layer_norm_eps: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            base_width: 32,
            mhsa_embed_dim: 16,
            mhsa_heads: 4,
            cwd_width: 12,
            msef_hidden: 2,
            use_y_cwd: false,
            use_uv_cwd: true,
            use_msef: true,
            final_head_widths: vec![32, 3],
            global_residual: false,
            layer_norm_eps: 1e-5,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.mhsa_heads == 0 {
            return Err(ModelError::InvalidConfig("mhsa_heads must be >= 1".into()));
        }
        if self.mhsa_embed_dim % self.mhsa_heads != 0 {
            return Err(ModelError::InvalidConfig(format!(
                "mhsa_embed_dim {} must be divisible by mhsa_heads {}",
                self.mhsa_embed_dim, self.mhsa_heads
            )));
        }
        if self.cwd_width % self.mhsa_heads != 0 {
            return Err(ModelError::InvalidConfig(format!(
                "cwd_width {} must be divisible by mhsa_heads {}",
                self.cwd_width, self.mhsa_heads
            )));
        }
        for (label, v) in [
            ("base_width", self.base_width),
            ("mhsa_embed_dim", self.mhsa_embed_dim),
            ("cwd_width", self.cwd_width),
            ("msef_hidden", self.msef_hidden),
        ] {
            if v == 0 {
                return Err(ModelError::InvalidConfig(format!("{label} must be >= 1")));
            }
        }
        if self.final_head_widths.is_empty() || *self.final_head_widths.last().unwrap() != 3 {
            return Err(ModelError::InvalidConfig(
                "final_head_widths must end in 3 (RGB output)".into(),
            ));
        }
        if self.final_head_widths.iter().any(|&w| w == 0) {
            return Err(ModelError::InvalidConfig(
                "final_head_widths must all be >= 1".into(),
            ));
        }
        Ok(())
    }

    /// Table-style variant label, e.g. `uv_cwd,msef`.
    pub fn variant_label(&self) -> String {
        let mut parts = Vec::new();
        if self.use_y_cwd {
            parts.push("y_cwd");
        }
        if self.use_uv_cwd {
            parts.push("uv_cwd");
        }
        if self.use_msef {
            parts.push("msef");
        }
        if parts.is_empty() {
            "plain".into()
        } else {
            parts.join(",")
        }
    }
}

/// How a parameter tensor is initialized.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InitKind {
    /// Uniform in `±1/sqrt(fan_in)` — convolution kernels.
    ConvFanIn,
    /// Truncated normal, std 0.02, clipped at two sigma — dense/attention.
    TruncNormal,
    Zeros,
    Ones,
}

/// Name, shape and initializer of one trainable tensor.
#[derive(Clone, Debug)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: InitKind,
}

impl ParamSpec {
    fn conv(name: impl Into<String>, kh: usize, kw: usize, cin: usize, cout: usize) -> [Self; 2] {
        let name = name.into();
        [
            Self {
                name: format!("{name}.w"),
                shape: vec![kh, kw, cin, cout],
                init: InitKind::ConvFanIn,
            },
            Self {
                name: format!("{name}.b"),
                shape: vec![cout],
                init: InitKind::Zeros,
            },
        ]
    }

    fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

fn mhsa_specs(prefix: &str, channels: usize, embed: usize) -> Vec<ParamSpec> {
    let mut specs = Vec::new();
    for nm in ["wq", "wk", "wv"] {
        specs.push(ParamSpec {
            name: format!("{prefix}.{nm}"),
            shape: vec![channels, embed],
            init: InitKind::TruncNormal,
        });
    }
    specs.push(ParamSpec {
        name: format!("{prefix}.wo"),
        shape: vec![embed, channels],
        init: InitKind::TruncNormal,
    });
    specs.push(ParamSpec {
        name: format!("{prefix}.bo"),
        shape: vec![channels],
        init: InitKind::Zeros,
    });
    specs
}

fn cwd_specs(prefix: &str, cin: usize, cfg: &ModelConfig) -> Vec<ParamSpec> {
    let full = cfg.base_width;
    let w = cfg.cwd_width;
    let mut specs = Vec::new();
    specs.extend(ParamSpec::conv(format!("{prefix}.enc1"), 3, 3, cin, full));
    specs.extend(ParamSpec::conv(format!("{prefix}.enc2"), 3, 3, full, w));
    specs.extend(ParamSpec::conv(format!("{prefix}.enc3"), 3, 3, w, w));
    specs.extend(ParamSpec::conv(format!("{prefix}.enc4"), 3, 3, w, w));
    specs.extend(mhsa_specs(&format!("{prefix}.mhsa"), w, w));
    specs.extend(ParamSpec::conv(format!("{prefix}.dec1"), 3, 3, w, w));
    specs.extend(ParamSpec::conv(format!("{prefix}.dec2"), 3, 3, w, w));
    specs.extend(ParamSpec::conv(format!("{prefix}.dec3"), 3, 3, w, full));
    specs
}

/// The full ordered parameter inventory of a configuration. Checkpoint
/// blobs, initialization and the count audit all derive from this list.
pub fn parameter_specs(cfg: &ModelConfig) -> Vec<ParamSpec> {
    let c = cfg.base_width;
    let mut specs = Vec::new();
    if cfg.use_y_cwd {
        specs.extend(cwd_specs("y.cwd", 1, cfg));
    } else {
        specs.extend(ParamSpec::conv("y.conv_in", 3, 3, 1, c));
        specs.extend(mhsa_specs("y.mhsa", c, cfg.mhsa_embed_dim));
        specs.extend(ParamSpec::conv("y.conv_out", 3, 3, c, c));
    }
    if cfg.use_uv_cwd {
        specs.extend(cwd_specs("uv.cwd", 2, cfg));
    } else {
        specs.extend(ParamSpec::conv("uv.plain.conv1", 3, 3, 2, c));
        specs.extend(ParamSpec::conv("uv.plain.conv2", 3, 3, c, c));
    }
    if cfg.use_msef {
        specs.push(ParamSpec {
            name: "msef.ln.gain".into(),
            shape: vec![c],
            init: InitKind::Ones,
        });
        specs.push(ParamSpec {
            name: "msef.ln.shift".into(),
            shape: vec![c],
            init: InitKind::Zeros,
        });
        specs.push(ParamSpec {
            name: "msef.w1".into(),
            shape: vec![c, cfg.msef_hidden],
            init: InitKind::TruncNormal,
        });
        specs.push(ParamSpec {
            name: "msef.b1".into(),
            shape: vec![cfg.msef_hidden],
            init: InitKind::Zeros,
        });
        specs.push(ParamSpec {
            name: "msef.w2".into(),
            shape: vec![cfg.msef_hidden, c],
            init: InitKind::TruncNormal,
        });
        specs.push(ParamSpec {
            name: "msef.b2".into(),
            shape: vec![c],
            init: InitKind::Zeros,
        });
        specs.push(ParamSpec {
            name: "msef.dw.w".into(),
            shape: vec![3, 3, c],
            init: InitKind::ConvFanIn,
        });
        specs.push(ParamSpec {
            name: "msef.dw.b".into(),
            shape: vec![c],
            init: InitKind::Zeros,
        });
    }
    let mut cin = 2 * c;
    for (i, &width) in cfg.final_head_widths.iter().enumerate() {
        specs.extend(ParamSpec::conv(format!("head.{i}"), 3, 3, cin, width));
        cin = width;
    }
    specs
}

/// Trainable scalar count of a configuration.
pub fn count_for_config(cfg: &ModelConfig) -> usize {
    parameter_specs(cfg).iter().map(|s| s.numel()).sum()
}

/// Named weight collection; entry order is fixed by [`parameter_specs`]
/// and shared with the checkpoint blob layout.
#[derive(Clone)]
pub struct ModelParams<F: Scalar> {
    entries: Vec<(String, Tensor<F>)>,
}

impl<F: Scalar> ModelParams<F> {
    pub fn new() -> Self {
        Self {
            entries: Vec::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor<F>) {
        self.entries.push((name.into(), tensor));
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<F>> {
        self.entries
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| ModelError::MissingParameter(name.into()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<F>)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Exact count of trainable scalars.
    pub fn count_params(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.numel()).sum()
    }

    /// All tensors marked as differentiation leaves (for training).
    pub fn tracked(&self) -> Self {
        Self {
            entries: self
                .entries
                .iter()
                .map(|(n, t)| (n.clone(), t.tracked()))
                .collect(),
        }
    }

    /// All tensors stripped of tape linkage (for inference).
    pub fn detached(&self) -> Self {
        Self {
            entries: self
                .entries
                .iter()
                .map(|(n, t)| (n.clone(), t.detached()))
                .collect(),
        }
    }

    pub fn cast<G: Scalar>(&self) -> ModelParams<G> {
        ModelParams {
            entries: self
                .entries
                .iter()
                .map(|(n, t)| (n.clone(), t.cast::<G>()))
                .collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.entries.iter().all(|(_, t)| t.is_finite())
    }

    /// Verify the collection matches a configuration's inventory exactly;
    /// reports the first mismatch.
    pub fn validate_against(&self, cfg: &ModelConfig) -> Result<()> {
        let specs = parameter_specs(cfg);
        for spec in &specs {
            let t = self.get(&spec.name)?;
            if t.shape() != spec.shape.as_slice() {
                return Err(ModelError::ParameterShape {
                    name: spec.name.clone(),
                    expected: spec.shape.clone(),
                    got: t.shape().to_vec(),
                });
            }
        }
        if self.len() != specs.len() {
            return Err(ModelError::InvalidConfig(format!(
                "parameter collection has {} entries, config expects {}",
                self.len(),
                specs.len()
            )));
        }
        Ok(())
    }
}

impl<F: Scalar> Default for ModelParams<F> {
    fn default() -> Self {
        Self::new()
    }
}

/// Standard normal via Box–Muller, truncated at two sigma.
fn trunc_normal(rng: &mut ChaCha8Rng, std: f64) -> f64 {
    loop {
        let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
        let u2: f64 = rng.gen_range(0.0..1.0);
        let z = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
        if z.abs() <= 2.0 {
            return z * std;
        }
    }
}

/// Deterministic parameter initialization from a seed: truncated-normal
/// (std 0.02) for dense/attention weights, fan-in-scaled uniform for
/// convolutions, zeros for biases, identity layer norm.
pub fn init_params<F: Scalar>(cfg: &ModelConfig, seed: u64) -> Result<ModelParams<F>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ModelParams::new();
    for spec in parameter_specs(cfg) {
        let n = spec.numel();
        let data: Vec<F> = match spec.init {
            InitKind::Zeros => vec![F::zero(); n],
            InitKind::Ones => vec![F::one(); n],
            InitKind::TruncNormal => (0..n)
                .map(|_| F::from_f64(trunc_normal(&mut rng, 0.02)).unwrap())
                .collect(),
            InitKind::ConvFanIn => {
                // weight layout [kh, kw, cin, cout] (or [kh, kw, c] depthwise):
                // fan-in is everything but the output channel axis
                let fan_in: usize = if spec.shape.len() == 4 {
                    spec.shape[0] * spec.shape[1] * spec.shape[2]
                } else {
                    spec.shape[0] * spec.shape[1]
                };
                let bound = 1.0 / (fan_in as f64).sqrt();
                (0..n)
                    .map(|_| F::from_f64(rng.gen_range(-bound..bound)).unwrap())
                    .collect()
            }
        };
        params.insert(spec.name.clone(), Tensor::from_vec(&spec.shape, data)?);
    }
    Ok(params)
}

/// Per-block subtotals for the parameter audit table.
pub fn count_by_block(cfg: &ModelConfig) -> Vec<(String, usize)> {
    let mut blocks: Vec<(String, usize)> = Vec::new();
    for spec in parameter_specs(cfg) {
        let block = spec.name.split('.').next().unwrap_or("?").to_string();
        match blocks.iter_mut().find(|(b, _)| *b == block) {
            Some((_, n)) => *n += spec.numel(),
            None => blocks.push((block, spec.numel())),
        }
    }
    blocks
}

/// Parameter cost of the denoiser decoder as built (bilinear upsampling +
/// 3x3 refinement convs) versus the same decoder with each zero-parameter
/// upsample replaced by a learned 4x4 stride-2 transposed convolution.
pub fn decoder_param_comparison(cfg: &ModelConfig) -> (usize, usize) {
    let w = cfg.cwd_width;
    let full = cfg.base_width;
    let refine = (9 * w * w + w) + (9 * w * w + w) + (9 * w * full + full);
    let transposed_upsamplers = 3 * (16 * w * w + w);
    (refine, refine + transposed_upsamplers)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid() {
        ModelConfig::default().validate().unwrap();
    }

    #[test]
    fn embed_dim_must_divide_heads() {
        let cfg = ModelConfig {
            mhsa_embed_dim: 30,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn default_variant_parameter_count() {
        // reference budget is 44,923; the chosen widths land 14 below
        assert_eq!(count_for_config(&ModelConfig::default()), 44_909);
    }

    #[test]
    fn msef_adds_exactly_546() {
        let with = ModelConfig::default();
        let without = ModelConfig {
            use_msef: false,
            ..Default::default()
        };
        assert_eq!(
            count_for_config(&with) - count_for_config(&without),
            546,
            "squeeze-excite fusion block cost"
        );
    }

    #[test]
    fn msef_closed_form_count() {
        // 2C + (C h + h) + (h C + C) + (9C + C) with C=32, h=2
        let c = 32;
        let h = 2;
        let expected = 2 * c + (c * h + h) + (h * c + c) + (9 * c + c);
        assert_eq!(expected, 546);
    }

    #[test]
    fn msef_delta_constant_across_cwd_toggles() {
        for (y, uv) in [(false, true), (true, false), (true, true), (false, false)] {
            let base = ModelConfig {
                use_y_cwd: y,
                use_uv_cwd: uv,
                use_msef: false,
                ..Default::default()
            };
            let with = ModelConfig {
                use_msef: true,
                ..base.clone()
            };
            assert_eq!(count_for_config(&with) - count_for_config(&base), 546);
        }
    }

    #[test]
    fn y_cwd_and_uv_cwd_differ_by_input_channels_only() {
        // a denoiser instance differs between 1- and 2-channel input by
        // exactly the first conv's extra input channel: 9 * base_width
        let cfg = ModelConfig::default();
        let y: usize = cwd_specs("x", 1, &cfg).iter().map(|s| s.numel()).sum();
        let uv: usize = cwd_specs("x", 2, &cfg).iter().map(|s| s.numel()).sum();
        assert_eq!(uv - y, 9 * cfg.base_width);
    }

    #[test]
    fn init_is_deterministic_and_matches_specs() {
        let cfg = ModelConfig::default();
        let a = init_params::<f32>(&cfg, 7).unwrap();
        let b = init_params::<f32>(&cfg, 7).unwrap();
        assert_eq!(a.len(), b.len());
        for ((_, ta), (_, tb)) in a.iter().zip(b.iter()).map(|(x, y)| (x, y)) {
            assert_eq!(ta.data(), tb.data());
        }
        a.validate_against(&cfg).unwrap();
        assert_eq!(a.count_params(), 44_909);
        // layer norm gain starts at one
        assert!(a.get("msef.ln.gain").unwrap().data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn single_dense_count_example() {
        // dense 2 -> 3 with bias = 9 scalars
        let w = Tensor::<f32>::zeros(&[2, 3]);
        let b = Tensor::<f32>::zeros(&[3]);
        let mut p = ModelParams::new();
        p.insert("w", w);
        p.insert("b", b);
        assert_eq!(p.count_params(), 9);
    }

    #[test]
    fn interpolation_decoder_under_half_of_transposed() {
        let (interp, transposed) = decoder_param_comparison(&ModelConfig::default());
        assert!(
            (interp as f64) < 0.5 * transposed as f64,
            "{interp} vs {transposed}"
        );
    }

    #[test]
    fn variant_counts_are_monotone() {
        let mk = |y: bool, uv: bool, msef: bool| {
            count_for_config(&ModelConfig {
                use_y_cwd: y,
                use_uv_cwd: uv,
                use_msef: msef,
                ..Default::default()
            })
        };
        // matching the ablation table ordering
        assert!(mk(true, false, false) < mk(false, true, false));
        assert!(mk(false, true, false) < mk(true, true, false));
        assert!(mk(true, false, true) < mk(false, true, true));
        assert!(mk(false, true, true) < mk(true, true, true));
    }
}
