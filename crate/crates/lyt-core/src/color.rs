//! Color-space conversions: the RGB↔YUV decomposition feeding the
//! dual-path network, and sRGB→Lab for perceptual color-difference
//! evaluation.
//!
//! YUV is BT.601 full-range analog with zero-centered chroma:
//! `Y = 0.299 R + 0.587 G + 0.114 B`, `U = 0.492 (B − Y)`,
//! `V = 0.877 (R − Y)`. Gray inputs therefore map to exactly `U = V = 0`,
//! which makes the denoiser's "no color" state the zero tensor.

use crate::tensor::{Result, Scalar, Tensor, TensorError};

pub const YUV_WR: f64 = 0.299;
pub const YUV_WG: f64 = 0.587;
pub const YUV_WB: f64 = 0.114;
pub const YUV_KU: f64 = 0.492;
pub const YUV_KV: f64 = 0.877;

fn expect_rgb<F: Scalar>(op: &'static str, img: &Tensor<F>) -> Result<(usize, usize, usize)> {
    let (n, h, w, c) = img.dims4(op)?;
    if c != 3 {
        return Err(TensorError::InvalidArgument {
            op,
            msg: format!("expected 3 channels, got {c}"),
        });
    }
    Ok((n, h, w))
}

/// Per-pixel RGB→YUV. Output channel order is `[Y, U, V]` with
/// `Y ∈ [0, 1]` and zero-centered `U`, `V`.
pub fn rgb_to_yuv<F: Scalar>(img: &Tensor<F>) -> Result<Tensor<F>> {
    expect_rgb("rgb_to_yuv", img)?;
    let (wr, wg, wb) = (F::from_f64(YUV_WR).unwrap(), F::from_f64(YUV_WG).unwrap(), F::from_f64(YUV_WB).unwrap());
    let (ku, kv) = (F::from_f64(YUV_KU).unwrap(), F::from_f64(YUV_KV).unwrap());
    let mut out = Vec::with_capacity(img.numel());
    for px in img.data().chunks(3) {
        let (r, g, b) = (px[0], px[1], px[2]);
        let y = wr * r + wg * g + wb * b;
        out.push(y);
        // B−Y and R−Y expanded with the weights summing to one, so the
        // gray axis lands at exactly U = V = 0 in floating point.
        out.push(ku * (wr * (b - r) + wg * (b - g)));
        out.push(kv * (wg * (r - g) + wb * (r - b)));
    }
    Tensor::from_vec(img.shape(), out)
}

/// Exact algebraic inverse of [`rgb_to_yuv`]. Set `clamp` to restrict the
/// result to `[0, 1]` at an output boundary; conversions inside the model
/// stay unclamped.
pub fn yuv_to_rgb<F: Scalar>(img: &Tensor<F>, clamp: bool) -> Result<Tensor<F>> {
    expect_rgb("yuv_to_rgb", img)?;
    let (wr, wg, wb) = (F::from_f64(YUV_WR).unwrap(), F::from_f64(YUV_WG).unwrap(), F::from_f64(YUV_WB).unwrap());
    let (ku, kv) = (F::from_f64(YUV_KU).unwrap(), F::from_f64(YUV_KV).unwrap());
    let mut out = Vec::with_capacity(img.numel());
    for px in img.data().chunks(3) {
        let (y, u, v) = (px[0], px[1], px[2]);
        let b = y + u / ku;
        let r = y + v / kv;
        let g = (y - wr * r - wb * b) / wg;
        for ch in [r, g, b] {
            out.push(if clamp {
                ch.max(F::zero()).min(F::one())
            } else {
                ch
            });
        }
    }
    Tensor::from_vec(img.shape(), out)
}

// sRGB→XYZ matrix (D65, 2° observer). The white point is the matrix image
// of (1,1,1), so the gray axis lands at exactly a = b = 0.
const SRGB_TO_XYZ: [[f64; 3]; 3] = [
    [0.412_456_4, 0.357_576_1, 0.180_437_5],
    [0.212_672_9, 0.715_152_2, 0.072_175_0],
    [0.019_333_9, 0.119_192_0, 0.950_304_1],
];

fn white_point() -> [f64; 3] {
    let m = &SRGB_TO_XYZ;
    [
        m[0][0] + m[0][1] + m[0][2],
        m[1][0] + m[1][1] + m[1][2],
        m[2][0] + m[2][1] + m[2][2],
    ]
}

fn srgb_eotf(v: f64) -> f64 {
    if v <= 0.04045 {
        v / 12.92
    } else {
        ((v + 0.055) / 1.055).powf(2.4)
    }
}

fn lab_f(t: f64) -> f64 {
    const DELTA: f64 = 6.0 / 29.0;
    if t > DELTA * DELTA * DELTA {
        t.cbrt()
    } else {
        t / (3.0 * DELTA * DELTA) + 4.0 / 29.0
    }
}

/// One sRGB pixel (components in `[0,1]`) to CIE Lab under D65.
pub fn srgb_pixel_to_lab(r: f64, g: f64, b: f64) -> [f64; 3] {
    let (rl, gl, bl) = (srgb_eotf(r), srgb_eotf(g), srgb_eotf(b));
    let m = &SRGB_TO_XYZ;
    let white = white_point();
    let x = (m[0][0] * rl + m[0][1] * gl + m[0][2] * bl) / white[0];
    let y = (m[1][0] * rl + m[1][1] * gl + m[1][2] * bl) / white[1];
    let z = (m[2][0] * rl + m[2][1] * gl + m[2][2] * bl) / white[2];
    let (fx, fy, fz) = (lab_f(x), lab_f(y), lab_f(z));
    [116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)]
}

/// sRGB image in `[0,1]` to a Lab image (channels `[L, a, b]`).
pub fn srgb_to_lab<F: Scalar>(img: &Tensor<F>) -> Result<Tensor<F>> {
    expect_rgb("srgb_to_lab", img)?;
    let mut out = Vec::with_capacity(img.numel());
    for px in img.data().chunks(3) {
        let lab = srgb_pixel_to_lab(
            px[0].to_f64().unwrap(),
            px[1].to_f64().unwrap(),
            px[2].to_f64().unwrap(),
        );
        out.extend(lab.iter().map(|&v| F::from_f64(v).unwrap()));
    }
    Tensor::from_vec(img.shape(), out)
}

/// BT.601 luminance of one RGB pixel.
pub fn luminance<F: Scalar>(r: F, g: F, b: F) -> F {
    F::from_f64(YUV_WR).unwrap() * r + F::from_f64(YUV_WG).unwrap() * g
        + F::from_f64(YUV_WB).unwrap() * b
}
