//! Spatial operators over NHWC tensors: convolution (im2col + matmul),
//! depthwise convolution, pooling, bilinear upsampling, reflect padding
//! and cropping.
//!
//! Same-padding follows the TensorFlow convention: output extent is
//! `ceil(in / stride)` and any odd padding goes to the bottom/right. The
//! bilinear kernel is align-corners-false with edge clamping; source
//! coordinate `(dst + 0.5) / scale - 0.5`. These conventions are locked by
//! the unit tests.

use super::autograd::Op;
use super::linalg::{column_sums, mm, mm_at, mm_bt};
use super::par::maybe_par_chunks_mut;
use super::{fl, Result, Scalar, Tensor, TensorError};
use std::sync::Arc;

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Padding {
    Same,
    Valid,
}

/// (out_extent, pad_before) for one spatial axis.
fn padded_extent(input: usize, kernel: usize, stride: usize, padding: Padding) -> (usize, usize) {
    match padding {
        Padding::Same => {
            let out = input.div_ceil(stride);
            let total = ((out - 1) * stride + kernel).saturating_sub(input);
            (out, total / 2)
        }
        Padding::Valid => ((input - kernel) / stride + 1, 0),
    }
}

struct ConvGeometry {
    n: usize,
    h: usize,
    w: usize,
    cin: usize,
    kh: usize,
    kw: usize,
    cout: usize,
    oh: usize,
    ow: usize,
    pad_top: usize,
    pad_left: usize,
    stride: usize,
}

fn conv_geometry<F: Scalar>(
    input: &Tensor<F>,
    weight: &Tensor<F>,
    stride: usize,
    padding: Padding,
) -> Result<ConvGeometry> {
    let (n, h, w, cin) = input.dims4("conv2d")?;
    if weight.shape().len() != 4 {
        return Err(TensorError::InvalidArgument {
            op: "conv2d",
            msg: format!("weight must be [kh,kw,Cin,Cout], got {:?}", weight.shape()),
        });
    }
    let (kh, kw) = (weight.shape()[0], weight.shape()[1]);
    if weight.shape()[2] != cin {
        return Err(TensorError::ShapeMismatch {
            op: "conv2d",
            expected: format!("weight Cin {} to match input channels", cin),
            got: format!("weight shape {:?}", weight.shape()),
        });
    }
    let cout = weight.shape()[3];
    if stride == 0 {
        return Err(TensorError::InvalidArgument {
            op: "conv2d",
            msg: "stride must be >= 1".into(),
        });
    }
    if padding == Padding::Valid && (h < kh || w < kw) {
        return Err(TensorError::InvalidArgument {
            op: "conv2d",
            msg: format!("valid padding needs input >= kernel, got {h}x{w} vs {kh}x{kw}"),
        });
    }
    let (oh, pad_top) = padded_extent(h, kh, stride, padding);
    let (ow, pad_left) = padded_extent(w, kw, stride, padding);
    Ok(ConvGeometry {
        n,
        h,
        w,
        cin,
        kh,
        kw,
        cout,
        oh,
        ow,
        pad_top,
        pad_left,
        stride,
    })
}

/// Unfold input patches into a `[N*OH*OW, kh*kw*Cin]` matrix; out-of-bounds
/// taps read zero.
fn im2col<F: Scalar>(x: &[F], geo: &ConvGeometry) -> Vec<F> {
    let k = geo.kh * geo.kw * geo.cin;
    let rows = geo.n * geo.oh * geo.ow;
    let mut cols = vec![F::zero(); rows * k];
    let (w, cin, stride) = (geo.w, geo.cin, geo.stride);
    let row_stride = w * cin;
    maybe_par_chunks_mut(&mut cols, k, |row, out| {
        let ow_i = row % geo.ow;
        let oh_i = (row / geo.ow) % geo.oh;
        let n_i = row / (geo.ow * geo.oh);
        let base_n = n_i * geo.h * row_stride;
        let ih0 = (oh_i * stride) as isize - geo.pad_top as isize;
        let iw0 = (ow_i * stride) as isize - geo.pad_left as isize;
        let mut dst = 0;
        for dy in 0..geo.kh {
            let ih = ih0 + dy as isize;
            if ih < 0 || ih >= geo.h as isize {
                dst += geo.kw * cin;
                continue;
            }
            let base_h = base_n + ih as usize * row_stride;
            for dx in 0..geo.kw {
                let iw = iw0 + dx as isize;
                if iw < 0 || iw >= w as isize {
                    dst += cin;
                    continue;
                }
                let src = base_h + iw as usize * cin;
                out[dst..dst + cin].copy_from_slice(&x[src..src + cin]);
                dst += cin;
            }
        }
    });
    cols
}

/// Fold a column-space gradient back onto the input (scatter-add).
fn col2im<F: Scalar>(dcols: &[F], geo: &ConvGeometry) -> Vec<F> {
    let k = geo.kh * geo.kw * geo.cin;
    let mut dx = vec![F::zero(); geo.n * geo.h * geo.w * geo.cin];
    let row_stride = geo.w * geo.cin;
    for row in 0..geo.n * geo.oh * geo.ow {
        let ow_i = row % geo.ow;
        let oh_i = (row / geo.ow) % geo.oh;
        let n_i = row / (geo.ow * geo.oh);
        let base_n = n_i * geo.h * row_stride;
        let ih0 = (oh_i * geo.stride) as isize - geo.pad_top as isize;
        let iw0 = (ow_i * geo.stride) as isize - geo.pad_left as isize;
        let src_row = &dcols[row * k..(row + 1) * k];
        let mut src = 0;
        for dy in 0..geo.kh {
            let ih = ih0 + dy as isize;
            if ih < 0 || ih >= geo.h as isize {
                src += geo.kw * geo.cin;
                continue;
            }
            let base_h = base_n + ih as usize * row_stride;
            for dx_i in 0..geo.kw {
                let iw = iw0 + dx_i as isize;
                if iw < 0 || iw >= geo.w as isize {
                    src += geo.cin;
                    continue;
                }
                let dst = base_h + iw as usize * geo.cin;
                for c in 0..geo.cin {
                    dx[dst + c] += src_row[src + c];
                }
                src += geo.cin;
            }
        }
    }
    dx
}

impl<F: Scalar> Tensor<F> {
    /// 2-D convolution (cross-correlation) with weight `[kh,kw,Cin,Cout]`.
    pub fn conv2d(
        &self,
        weight: &Self,
        bias: Option<&Self>,
        stride: usize,
        padding: Padding,
    ) -> Result<Self> {
        let geo = conv_geometry(self, weight, stride, padding)?;
        if let Some(b) = bias {
            if b.shape() != [geo.cout] {
                return Err(b.shape_err("conv2d", [geo.cout]));
            }
        }
        let rows = geo.n * geo.oh * geo.ow;
        let k = geo.kh * geo.kw * geo.cin;
        let cols = im2col(self.data(), &geo);
        let mut out = mm(&cols, weight.data(), rows, k, geo.cout);
        if let Some(b) = bias {
            let bd = b.data();
            for row in out.chunks_mut(geo.cout) {
                for (v, &bv) in row.iter_mut().zip(bd.iter()) {
                    *v += bv;
                }
            }
        }
        Ok(Self::from_op(
            vec![geo.n, geo.oh, geo.ow, geo.cout],
            out,
            Op::Conv2d {
                input: self.clone(),
                weight: weight.clone(),
                bias: bias.cloned(),
                stride,
                padding,
            },
        ))
    }

    /// Per-channel spatial convolution, stride 1, weight `[kh,kw,C]`.
    pub fn depthwise_conv2d(
        &self,
        weight: &Self,
        bias: Option<&Self>,
        padding: Padding,
    ) -> Result<Self> {
        let (n, h, w, c) = self.dims4("depthwise_conv2d")?;
        if weight.shape().len() != 3 || weight.shape()[2] != c {
            return Err(TensorError::ShapeMismatch {
                op: "depthwise_conv2d",
                expected: format!("weight [kh,kw,{c}]"),
                got: format!("{:?}", weight.shape()),
            });
        }
        let (kh, kw) = (weight.shape()[0], weight.shape()[1]);
        if padding == Padding::Valid && (h < kh || w < kw) {
            return Err(TensorError::InvalidArgument {
                op: "depthwise_conv2d",
                msg: format!("valid padding needs input >= kernel, got {h}x{w} vs {kh}x{kw}"),
            });
        }
        if let Some(b) = bias {
            if b.shape() != [c] {
                return Err(b.shape_err("depthwise_conv2d", [c]));
            }
        }
        let (oh, pad_top) = padded_extent(h, kh, 1, padding);
        let (ow, pad_left) = padded_extent(w, kw, 1, padding);
        let x = self.data();
        let wd = weight.data();
        let mut out = vec![F::zero(); n * oh * ow * c];
        let row_stride = w * c;
        maybe_par_chunks_mut(&mut out, ow * c, |row, dst| {
            let oh_i = row % oh;
            let n_i = row / oh;
            let base_n = n_i * h * row_stride;
            for ow_i in 0..ow {
                let cell = &mut dst[ow_i * c..(ow_i + 1) * c];
                if let Some(b) = bias {
                    cell.copy_from_slice(b.data());
                }
                let ih0 = (oh_i) as isize - pad_top as isize;
                let iw0 = (ow_i) as isize - pad_left as isize;
                for dy in 0..kh {
                    let ih = ih0 + dy as isize;
                    if ih < 0 || ih >= h as isize {
                        continue;
                    }
                    let base_h = base_n + ih as usize * row_stride;
                    for dx in 0..kw {
                        let iw = iw0 + dx as isize;
                        if iw < 0 || iw >= w as isize {
                            continue;
                        }
                        let src = &x[base_h + iw as usize * c..base_h + iw as usize * c + c];
                        let tap = &wd[(dy * kw + dx) * c..(dy * kw + dx) * c + c];
                        for ((o, &xv), &wv) in cell.iter_mut().zip(src.iter()).zip(tap.iter()) {
                            *o += xv * wv;
                        }
                    }
                }
            }
        });
        Ok(Self::from_op(
            vec![n, oh, ow, c],
            out,
            Op::DepthwiseConv2d {
                input: self.clone(),
                weight: weight.clone(),
                bias: bias.cloned(),
                padding,
            },
        ))
    }

    /// Average pooling over square windows, no padding.
    pub fn avg_pool(&self, window: usize, stride: usize) -> Result<Self> {
        let (n, h, w, c) = self.dims4("avg_pool")?;
        check_window("avg_pool", window, h, w)?;
        let oh = (h - window) / stride + 1;
        let ow = (w - window) / stride + 1;
        let x = self.data();
        let inv = F::one() / fl::<F>((window * window) as f64);
        let mut out = vec![F::zero(); n * oh * ow * c];
        for n_i in 0..n {
            for oh_i in 0..oh {
                for ow_i in 0..ow {
                    let dst = ((n_i * oh + oh_i) * ow + ow_i) * c;
                    for dy in 0..window {
                        for dx in 0..window {
                            let src =
                                ((n_i * h + oh_i * stride + dy) * w + ow_i * stride + dx) * c;
                            for ch in 0..c {
                                out[dst + ch] += x[src + ch];
                            }
                        }
                    }
                    for ch in 0..c {
                        out[dst + ch] = out[dst + ch] * inv;
                    }
                }
            }
        }
        Ok(Self::from_op(
            vec![n, oh, ow, c],
            out,
            Op::AvgPool {
                input: self.clone(),
                window,
                stride,
            },
        ))
    }

    /// Max pooling over square windows, no padding. Ties resolve to the
    /// first element in scan order.
    pub fn max_pool(&self, window: usize, stride: usize) -> Result<Self> {
        let (n, h, w, c) = self.dims4("max_pool")?;
        check_window("max_pool", window, h, w)?;
        let oh = (h - window) / stride + 1;
        let ow = (w - window) / stride + 1;
        let x = self.data();
        let mut out = vec![F::zero(); n * oh * ow * c];
        let mut argmax = vec![0usize; n * oh * ow * c];
        for n_i in 0..n {
            for oh_i in 0..oh {
                for ow_i in 0..ow {
                    let dst = ((n_i * oh + oh_i) * ow + ow_i) * c;
                    for ch in 0..c {
                        let mut best = F::neg_infinity();
                        let mut best_idx = 0usize;
                        for dy in 0..window {
                            for dx in 0..window {
                                let src = ((n_i * h + oh_i * stride + dy) * w
                                    + ow_i * stride
                                    + dx)
                                    * c
                                    + ch;
                                if x[src] > best {
                                    best = x[src];
                                    best_idx = src;
                                }
                            }
                        }
                        out[dst + ch] = best;
                        argmax[dst + ch] = best_idx;
                    }
                }
            }
        }
        Ok(Self::from_op(
            vec![n, oh, ow, c],
            out,
            Op::MaxPool {
                input: self.clone(),
                argmax: Arc::new(argmax),
            },
        ))
    }

    /// Spatial mean per channel: `[N,H,W,C] -> [N,1,1,C]`.
    pub fn global_avg_pool(&self) -> Result<Self> {
        let (n, h, w, c) = self.dims4("global_avg_pool")?;
        let x = self.data();
        let inv = F::one() / fl::<F>((h * w) as f64);
        let mut out = vec![F::zero(); n * c];
        for n_i in 0..n {
            for p in 0..h * w {
                let src = (n_i * h * w + p) * c;
                for ch in 0..c {
                    out[n_i * c + ch] += x[src + ch];
                }
            }
            for ch in 0..c {
                out[n_i * c + ch] = out[n_i * c + ch] * inv;
            }
        }
        Ok(Self::from_op(
            vec![n, 1, 1, c],
            out,
            Op::GlobalAvgPool(self.clone()),
        ))
    }

    /// Integer-factor bilinear upsampling (align-corners-false, edges
    /// clamped).
    pub fn upsample_bilinear(&self, scale: usize) -> Result<Self> {
        let (n, h, w, c) = self.dims4("upsample_bilinear")?;
        if scale == 0 {
            return Err(TensorError::InvalidArgument {
                op: "upsample_bilinear",
                msg: "scale must be >= 1".into(),
            });
        }
        let oh = h * scale;
        let ow = w * scale;
        let hmap = bilinear_axis::<F>(h, scale);
        let wmap = bilinear_axis::<F>(w, scale);
        let x = self.data();
        let mut out = vec![F::zero(); n * oh * ow * c];
        maybe_par_chunks_mut(&mut out, ow * c, |row, dst| {
            let oh_i = row % oh;
            let n_i = row / oh;
            let (h0, h1, fh) = hmap[oh_i];
            let one = F::one();
            for ow_i in 0..ow {
                let (w0, w1, fw) = wmap[ow_i];
                let b00 = ((n_i * h + h0) * w + w0) * c;
                let b01 = ((n_i * h + h0) * w + w1) * c;
                let b10 = ((n_i * h + h1) * w + w0) * c;
                let b11 = ((n_i * h + h1) * w + w1) * c;
                let w00 = (one - fh) * (one - fw);
                let w01 = (one - fh) * fw;
                let w10 = fh * (one - fw);
                let w11 = fh * fw;
                let cell = &mut dst[ow_i * c..(ow_i + 1) * c];
                for (ch, o) in cell.iter_mut().enumerate() {
                    *o = w00 * x[b00 + ch] + w01 * x[b01 + ch] + w10 * x[b10 + ch]
                        + w11 * x[b11 + ch];
                }
            }
        });
        Ok(Self::from_op(
            vec![n, oh, ow, c],
            out,
            Op::UpsampleBilinear {
                input: self.clone(),
                scale,
            },
        ))
    }

    /// Reflect-pad the bottom/right spatial edges (no repeated edge pixel).
    pub fn reflect_pad_hw(&self, pad_bottom: usize, pad_right: usize) -> Result<Self> {
        let (n, h, w, c) = self.dims4("reflect_pad_hw")?;
        if pad_bottom >= h || pad_right >= w {
            return Err(TensorError::InvalidArgument {
                op: "reflect_pad_hw",
                msg: format!("padding ({pad_bottom},{pad_right}) must be smaller than ({h},{w})"),
            });
        }
        let oh = h + pad_bottom;
        let ow = w + pad_right;
        let x = self.data();
        let mut out = vec![F::zero(); n * oh * ow * c];
        for n_i in 0..n {
            for oh_i in 0..oh {
                let sh = reflect_index(oh_i, h);
                for ow_i in 0..ow {
                    let sw = reflect_index(ow_i, w);
                    let src = ((n_i * h + sh) * w + sw) * c;
                    let dst = ((n_i * oh + oh_i) * ow + ow_i) * c;
                    out[dst..dst + c].copy_from_slice(&x[src..src + c]);
                }
            }
        }
        Ok(Self::from_op(
            vec![n, oh, ow, c],
            out,
            Op::ReflectPad {
                input: self.clone(),
                pad_bottom,
                pad_right,
            },
        ))
    }

    /// Keep the top-left `height x width` spatial region.
    pub fn crop_hw(&self, height: usize, width: usize) -> Result<Self> {
        let (n, h, w, c) = self.dims4("crop_hw")?;
        if height > h || width > w || height == 0 || width == 0 {
            return Err(TensorError::InvalidArgument {
                op: "crop_hw",
                msg: format!("crop {height}x{width} invalid for input {h}x{w}"),
            });
        }
        let x = self.data();
        let mut out = Vec::with_capacity(n * height * width * c);
        for n_i in 0..n {
            for hh in 0..height {
                let src = ((n_i * h + hh) * w) * c;
                out.extend_from_slice(&x[src..src + width * c]);
            }
        }
        Ok(Self::from_op(
            vec![n, height, width, c],
            out,
            Op::CropHw {
                input: self.clone(),
            },
        ))
    }
}

fn check_window(op: &'static str, window: usize, h: usize, w: usize) -> Result<()> {
    if window == 0 || window > h || window > w {
        return Err(TensorError::WindowTooLarge {
            op,
            window,
            extent: h.min(w),
        });
    }
    Ok(())
}

#[inline]
fn reflect_index(i: usize, extent: usize) -> usize {
    if i < extent {
        i
    } else {
        2 * extent - 2 - i
    }
}

/// Per-destination (src0, src1, frac) for one upsampled axis.
fn bilinear_axis<F: Scalar>(extent: usize, scale: usize) -> Vec<(usize, usize, F)> {
    let mut map = Vec::with_capacity(extent * scale);
    let inv = 1.0 / scale as f64;
    for o in 0..extent * scale {
        let src = (o as f64 + 0.5) * inv - 0.5;
        let src = src.clamp(0.0, (extent - 1) as f64);
        let i0 = src.floor() as usize;
        let i1 = (i0 + 1).min(extent - 1);
        map.push((i0, i1, fl::<F>(src - i0 as f64)));
    }
    map
}

// ── backward kernels ─────────────────────────────────────────────────────

type ConvGrads<F> = (Option<Tensor<F>>, Option<Tensor<F>>, Option<Tensor<F>>);

pub(crate) fn conv2d_backward<F: Scalar>(
    g: &Tensor<F>,
    input: &Tensor<F>,
    weight: &Tensor<F>,
    stride: usize,
    padding: Padding,
    need_dx: bool,
    need_dw: bool,
    need_db: bool,
) -> Result<ConvGrads<F>> {
    let geo = conv_geometry(input, weight, stride, padding)?;
    let rows = geo.n * geo.oh * geo.ow;
    let k = geo.kh * geo.kw * geo.cin;
    let dx = if need_dx {
        let dcols = mm_bt(g.data(), weight.data(), rows, geo.cout, k);
        Some(Tensor::plain(input.shape().to_vec(), col2im(&dcols, &geo)))
    } else {
        None
    };
    let dw = if need_dw {
        let cols = im2col(input.data(), &geo);
        let dw = mm_at(&cols, g.data(), rows, k, geo.cout);
        Some(Tensor::plain(weight.shape().to_vec(), dw))
    } else {
        None
    };
    let db = if need_db {
        Some(Tensor::plain(
            vec![geo.cout],
            column_sums(g.data(), rows, geo.cout),
        ))
    } else {
        None
    };
    Ok((dx, dw, db))
}

pub(crate) fn depthwise_backward<F: Scalar>(
    g: &Tensor<F>,
    input: &Tensor<F>,
    weight: &Tensor<F>,
    padding: Padding,
    need_dx: bool,
    need_dw: bool,
    need_db: bool,
) -> Result<ConvGrads<F>> {
    let (n, h, w, c) = input.dims4("depthwise_conv2d")?;
    let (kh, kw) = (weight.shape()[0], weight.shape()[1]);
    let (oh, pad_top) = padded_extent(h, kh, 1, padding);
    let (ow, pad_left) = padded_extent(w, kw, 1, padding);
    let gd = g.data();
    let x = input.data();
    let wd = weight.data();
    let mut dx = if need_dx {
        Some(vec![F::zero(); input.numel()])
    } else {
        None
    };
    let mut dw = if need_dw {
        Some(vec![F::zero(); weight.numel()])
    } else {
        None
    };
    for n_i in 0..n {
        for oh_i in 0..oh {
            for ow_i in 0..ow {
                let gbase = ((n_i * oh + oh_i) * ow + ow_i) * c;
                let ih0 = oh_i as isize - pad_top as isize;
                let iw0 = ow_i as isize - pad_left as isize;
                for dy in 0..kh {
                    let ih = ih0 + dy as isize;
                    if ih < 0 || ih >= h as isize {
                        continue;
                    }
                    for dxk in 0..kw {
                        let iw = iw0 + dxk as isize;
                        if iw < 0 || iw >= w as isize {
                            continue;
                        }
                        let xbase = ((n_i * h + ih as usize) * w + iw as usize) * c;
                        let tap = (dy * kw + dxk) * c;
                        for ch in 0..c {
                            let gv = gd[gbase + ch];
                            if let Some(dx) = dx.as_mut() {
                                dx[xbase + ch] += wd[tap + ch] * gv;
                            }
                            if let Some(dw) = dw.as_mut() {
                                dw[tap + ch] += x[xbase + ch] * gv;
                            }
                        }
                    }
                }
            }
        }
    }
    let db = if need_db {
        Some(Tensor::plain(
            vec![c],
            column_sums(gd, n * oh * ow, c),
        ))
    } else {
        None
    };
    Ok((
        dx.map(|v| Tensor::plain(input.shape().to_vec(), v)),
        dw.map(|v| Tensor::plain(weight.shape().to_vec(), v)),
        db,
    ))
}

pub(crate) fn avg_pool_backward<F: Scalar>(
    g: &Tensor<F>,
    input_shape: &[usize],
    window: usize,
    stride: usize,
) -> Tensor<F> {
    let (n, h, w, c) = (
        input_shape[0],
        input_shape[1],
        input_shape[2],
        input_shape[3],
    );
    let oh = (h - window) / stride + 1;
    let ow = (w - window) / stride + 1;
    let inv = F::one() / fl::<F>((window * window) as f64);
    let gd = g.data();
    let mut dx = vec![F::zero(); n * h * w * c];
    for n_i in 0..n {
        for oh_i in 0..oh {
            for ow_i in 0..ow {
                let src = ((n_i * oh + oh_i) * ow + ow_i) * c;
                for dy in 0..window {
                    for dxk in 0..window {
                        let dst = ((n_i * h + oh_i * stride + dy) * w + ow_i * stride + dxk) * c;
                        for ch in 0..c {
                            dx[dst + ch] += gd[src + ch] * inv;
                        }
                    }
                }
            }
        }
    }
    Tensor::plain(input_shape.to_vec(), dx)
}

pub(crate) fn max_pool_backward<F: Scalar>(
    g: &Tensor<F>,
    input_shape: &[usize],
    argmax: &Arc<Vec<usize>>,
) -> Tensor<F> {
    let mut dx = vec![F::zero(); input_shape.iter().product()];
    for (i, &src) in argmax.iter().enumerate() {
        dx[src] += g.data()[i];
    }
    Tensor::plain(input_shape.to_vec(), dx)
}

pub(crate) fn global_avg_pool_backward<F: Scalar>(
    g: &Tensor<F>,
    input_shape: &[usize],
) -> Tensor<F> {
    let (n, h, w, c) = (
        input_shape[0],
        input_shape[1],
        input_shape[2],
        input_shape[3],
    );
    let inv = F::one() / fl::<F>((h * w) as f64);
    let gd = g.data();
    let mut dx = vec![F::zero(); n * h * w * c];
    for n_i in 0..n {
        for p in 0..h * w {
            let dst = (n_i * h * w + p) * c;
            for ch in 0..c {
                dx[dst + ch] = gd[n_i * c + ch] * inv;
            }
        }
    }
    Tensor::plain(input_shape.to_vec(), dx)
}

pub(crate) fn upsample_bilinear_backward<F: Scalar>(
    g: &Tensor<F>,
    input_shape: &[usize],
    scale: usize,
) -> Tensor<F> {
    let (n, h, w, c) = (
        input_shape[0],
        input_shape[1],
        input_shape[2],
        input_shape[3],
    );
    let oh = h * scale;
    let ow = w * scale;
    let hmap = bilinear_axis::<F>(h, scale);
    let wmap = bilinear_axis::<F>(w, scale);
    let gd = g.data();
    let one = F::one();
    let mut dx = vec![F::zero(); n * h * w * c];
    for n_i in 0..n {
        for oh_i in 0..oh {
            let (h0, h1, fh) = hmap[oh_i];
            for ow_i in 0..ow {
                let (w0, w1, fw) = wmap[ow_i];
                let src = ((n_i * oh + oh_i) * ow + ow_i) * c;
                let b00 = ((n_i * h + h0) * w + w0) * c;
                let b01 = ((n_i * h + h0) * w + w1) * c;
                let b10 = ((n_i * h + h1) * w + w0) * c;
                let b11 = ((n_i * h + h1) * w + w1) * c;
                let w00 = (one - fh) * (one - fw);
                let w01 = (one - fh) * fw;
                let w10 = fh * (one - fw);
                let w11 = fh * fw;
                for ch in 0..c {
                    let gv = gd[src + ch];
                    dx[b00 + ch] += w00 * gv;
                    dx[b01 + ch] += w01 * gv;
                    dx[b10 + ch] += w10 * gv;
                    dx[b11 + ch] += w11 * gv;
                }
            }
        }
    }
    Tensor::plain(input_shape.to_vec(), dx)
}

pub(crate) fn reflect_pad_backward<F: Scalar>(
    g: &Tensor<F>,
    input_shape: &[usize],
    pad_bottom: usize,
    pad_right: usize,
) -> Tensor<F> {
    let (n, h, w, c) = (
        input_shape[0],
        input_shape[1],
        input_shape[2],
        input_shape[3],
    );
    let oh = h + pad_bottom;
    let ow = w + pad_right;
    let gd = g.data();
    let mut dx = vec![F::zero(); n * h * w * c];
    for n_i in 0..n {
        for oh_i in 0..oh {
            let sh = reflect_index(oh_i, h);
            for ow_i in 0..ow {
                let sw = reflect_index(ow_i, w);
                let src = ((n_i * oh + oh_i) * ow + ow_i) * c;
                let dst = ((n_i * h + sh) * w + sw) * c;
                for ch in 0..c {
                    dx[dst + ch] += gd[src + ch];
                }
            }
        }
    }
    Tensor::plain(input_shape.to_vec(), dx)
}

pub(crate) fn crop_hw_backward<F: Scalar>(g: &Tensor<F>, input_shape: &[usize]) -> Tensor<F> {
    let (n, h, w, c) = (
        input_shape[0],
        input_shape[1],
        input_shape[2],
        input_shape[3],
    );
    let (gh, gw) = (g.shape()[1], g.shape()[2]);
    let gd = g.data();
    let mut dx = vec![F::zero(); n * h * w * c];
    for n_i in 0..n {
        for hh in 0..gh {
            let src = ((n_i * gh + hh) * gw) * c;
            let dst = ((n_i * h + hh) * w) * c;
            dx[dst..dst + gw * c].copy_from_slice(&gd[src..src + gw * c]);
        }
    }
    Tensor::plain(input_shape.to_vec(), dx)
}
