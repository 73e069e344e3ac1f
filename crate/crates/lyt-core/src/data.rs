//! Paired low/normal-light dataset ingestion, the PNG codec boundary, and
//! training augmentation.
//!
//! Directory layout: `<root>/<split>/low/*.png` and `<root>/<split>/high/
//! *.png`, paired by identical filename. Entries are ordered
//! lexicographically so iteration is reproducible. Augmentation applies
//! one geometric transform (crop window, flips, quarter-turn rotation) to
//! both images of a pair; its randomness is a per-(epoch, index) stream,
//! so prefetch order can never change results.

use std::fmt;
use std::path::{Path, PathBuf};

use crate::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error(
        "missing directory {0}: expected layout <root>/<split>/low and <root>/<split>/high \
         with same-named 8-bit RGB PNG files"
    )]
    MissingDirectory(PathBuf),
    #[error("dataset is empty at {0}: expected 8-bit RGB PNG files under low/ and high/")]
    EmptyDataset(PathBuf),
    #[error("unpaired files: {0}")]
    Unpaired(UnpairedReport),
    #[error("{path}: {source}")]
    Png {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
    #[error("{path}: 16-bit PNG not supported, re-encode as 8-bit RGB")]
    SixteenBit { path: PathBuf },
    #[error("{path}: unsupported pixel format {format}, expected 8-bit RGB")]
    UnsupportedFormat { path: PathBuf, format: String },
    #[error("{path}: failed to write: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("pair {low} / {high}: image sizes differ ({a} vs {b})")]
    SizeMismatch {
        low: PathBuf,
        high: PathBuf,
        a: String,
        b: String,
    },
}

#[derive(Debug)]
pub struct UnpairedReport {
    pub missing_high: Vec<String>,
    pub missing_low: Vec<String>,
}

impl fmt::Display for UnpairedReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if !self.missing_high.is_empty() {
            write!(f, "low images without a high partner: {:?}", self.missing_high)?;
        }
        if !self.missing_low.is_empty() {
            if !self.missing_high.is_empty() {
                write!(f, "; ")?;
            }
            write!(f, "high images without a low partner: {:?}", self.missing_low)?;
        }
        Ok(())
    }
}

pub type Result<T> = std::result::Result<T, DataError>;

/// An aligned low-light / normal-light RGB pair in `[0,1]`.
#[derive(Clone)]
pub struct ImagePair {
    pub low: Tensor<f32>,
    pub high: Tensor<f32>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn dir_name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split '{other}' (train|test)")),
        }
    }
}

/// Filename-paired dataset entries (paths only; images decode lazily).
#[derive(Debug)]
pub struct PairedDataset {
    pub root: PathBuf,
    pub split: Split,
    pub entries: Vec<(PathBuf, PathBuf)>,
}

impl PairedDataset {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Decode the pair at `index`.
    pub fn load(&self, index: usize) -> Result<ImagePair> {
        let (low_path, high_path) = &self.entries[index];
        let low = decode_png(low_path)?;
        let high = decode_png(high_path)?;
        if low.shape() != high.shape() {
            return Err(DataError::SizeMismatch {
                low: low_path.clone(),
                high: high_path.clone(),
                a: format!("{:?}", low.shape()),
                b: format!("{:?}", high.shape()),
            });
        }
        Ok(ImagePair { low, high })
    }
}

fn list_pngs(dir: &Path) -> Result<Vec<String>> {
    if !dir.is_dir() {
        return Err(DataError::MissingDirectory(dir.to_path_buf()));
    }
    let mut names: Vec<String> = std::fs::read_dir(dir)
        .map_err(|source| DataError::Io {
            path: dir.to_path_buf(),
            source,
        })?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().extension().is_some_and(|x| x == "png"))
        .filter_map(|e| e.file_name().into_string().ok())
        .collect();
    names.sort();
    Ok(names)
}

/// Expected split sizes of the LOL-v1 layout; other counts only warn.
const LOL_V1_EXPECTED: [(Split, usize); 2] = [(Split::Train, 485), (Split::Test, 15)];

/// Scan `<root>/<split>/{low,high}` and pair files by name.
pub fn load_dataset(root: &Path, split: Split) -> Result<PairedDataset> {
    let low_dir = root.join(split.dir_name()).join("low");
    let high_dir = root.join(split.dir_name()).join("high");
    let low_names = list_pngs(&low_dir)?;
    let high_names = list_pngs(&high_dir)?;
    if low_names.is_empty() && high_names.is_empty() {
        return Err(DataError::EmptyDataset(root.join(split.dir_name())));
    }
    let missing_high: Vec<String> = low_names
        .iter()
        .filter(|n| !high_names.contains(n))
        .cloned()
        .collect();
    let missing_low: Vec<String> = high_names
        .iter()
        .filter(|n| !low_names.contains(n))
        .cloned()
        .collect();
    if !missing_high.is_empty() || !missing_low.is_empty() {
        return Err(DataError::Unpaired(UnpairedReport {
            missing_high,
            missing_low,
        }));
    }
    let entries: Vec<(PathBuf, PathBuf)> = low_names
        .iter()
        .map(|n| (low_dir.join(n), high_dir.join(n)))
        .collect();
    for (s, expected) in LOL_V1_EXPECTED {
        if s == split && entries.len() != expected {
            log::warn!(
                "{} split has {} pairs (LOL-v1 reference layout has {})",
                split.dir_name(),
                entries.len(),
                expected
            );
        }
    }
    log::info!(
        "loaded {} split: {} pairs from {}",
        split.dir_name(),
        entries.len(),
        root.display()
    );
    Ok(PairedDataset {
        root: root.to_path_buf(),
        split,
        entries,
    })
}

/// Decode an 8-bit RGB PNG into `[1,H,W,3]` scalars via value/255.
pub fn decode_png(path: &Path) -> Result<Tensor<f32>> {
    let img = image::open(path).map_err(|source| DataError::Png {
        path: path.to_path_buf(),
        source,
    })?;
    use image::DynamicImage::*;
    let rgb = match img {
        ImageRgb8(img) => img,
        ImageRgba8(img) => image::DynamicImage::ImageRgba8(img).to_rgb8(),
        ImageLuma8(img) => image::DynamicImage::ImageLuma8(img).to_rgb8(),
        ImageLumaA8(img) => image::DynamicImage::ImageLumaA8(img).to_rgb8(),
        ImageRgb16(_) | ImageRgba16(_) | ImageLuma16(_) | ImageLumaA16(_) => {
            return Err(DataError::SixteenBit {
                path: path.to_path_buf(),
            })
        }
        other => {
            return Err(DataError::UnsupportedFormat {
                path: path.to_path_buf(),
                format: format!("{:?}", other.color()),
            })
        }
    };
    let (w, h) = rgb.dimensions();
    let data: Vec<f32> = rgb.as_raw().iter().map(|&v| v as f32 / 255.0).collect();
    Ok(Tensor::from_vec(&[1, h as usize, w as usize, 3], data).unwrap())
}

/// Encode to 8-bit RGB PNG: clamp to `[0,1]`, scale by 255, round
/// half-away-from-zero.
pub fn encode_png(img: &Tensor<f32>, path: &Path) -> Result<()> {
    let shape = img.shape();
    assert_eq!(shape.len(), 4, "encode_png expects [1,H,W,3]");
    let (h, w) = (shape[1], shape[2]);
    let bytes: Vec<u8> = img
        .data()
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    let buf: image::RgbImage =
        image::ImageBuffer::from_raw(w as u32, h as u32, bytes).expect("buffer size");
    buf.save(path).map_err(|source| DataError::Png {
        path: path.to_path_buf(),
        source,
    })
}

/// Augmentation geometry: identical for both images of a pair.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Augmentation {
    pub crop_y: usize,
    pub crop_x: usize,
    pub flip_h: bool,
    pub flip_v: bool,
    pub quarter_turns: u8,
}

/// Deterministic RNG stream for the sample at `(epoch, index)` derived
/// from the master seed via splitmix64 steps.
pub fn augmentation_rng(seed: u64, epoch: u64, index: u64) -> ChaCha8Rng {
    let mut z = seed;
    for salt in [0x9e3779b97f4a7c15u64, epoch, index] {
        z = z.wrapping_add(salt).wrapping_add(0x9e3779b97f4a7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
        z ^= z >> 31;
    }
    ChaCha8Rng::seed_from_u64(z)
}

fn bilinear_resize(img: &Tensor<f32>, nh: usize, nw: usize) -> Tensor<f32> {
    let (_, h, w, c) = (img.shape()[0], img.shape()[1], img.shape()[2], img.shape()[3]);
    let src = img.data();
    let mut out = vec![0.0f32; nh * nw * c];
    for oy in 0..nh {
        let sy = ((oy as f64 + 0.5) * h as f64 / nh as f64 - 0.5).clamp(0.0, (h - 1) as f64);
        let y0 = sy.floor() as usize;
        let y1 = (y0 + 1).min(h - 1);
        let fy = (sy - y0 as f64) as f32;
        for ox in 0..nw {
            let sx = ((ox as f64 + 0.5) * w as f64 / nw as f64 - 0.5).clamp(0.0, (w - 1) as f64);
            let x0 = sx.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            let fx = (sx - x0 as f64) as f32;
            for ch in 0..c {
                let p00 = src[(y0 * w + x0) * c + ch];
                let p01 = src[(y0 * w + x1) * c + ch];
                let p10 = src[(y1 * w + x0) * c + ch];
                let p11 = src[(y1 * w + x1) * c + ch];
                out[(oy * nw + ox) * c + ch] = (1.0 - fy) * ((1.0 - fx) * p00 + fx * p01)
                    + fy * ((1.0 - fx) * p10 + fx * p11);
            }
        }
    }
    Tensor::from_vec(&[1, nh, nw, c], out).unwrap()
}

fn apply_geometry(img: &Tensor<f32>, aug: &Augmentation, crop: usize) -> Tensor<f32> {
    let (_, h, w, c) = (img.shape()[0], img.shape()[1], img.shape()[2], img.shape()[3]);
    debug_assert!(aug.crop_y + crop <= h && aug.crop_x + crop <= w);
    let src = img.data();
    let mut out = vec![0.0f32; crop * crop * c];
    for y in 0..crop {
        for x in 0..crop {
            // inverse-map through rotation then flips to the crop window
            let (mut sy, mut sx) = (y, x);
            for _ in 0..aug.quarter_turns {
                // rotate output 90 degrees clockwise == read source rotated ccw
                let (ny, nx) = (crop - 1 - sx, sy);
                sy = ny;
                sx = nx;
            }
            if aug.flip_h {
                sx = crop - 1 - sx;
            }
            if aug.flip_v {
                sy = crop - 1 - sy;
            }
            let si = ((aug.crop_y + sy) * w + aug.crop_x + sx) * c;
            out[(y * crop + x) * c..(y * crop + x) * c + c]
                .copy_from_slice(&src[si..si + c]);
        }
    }
    Tensor::from_vec(&[1, crop, crop, c], out).unwrap()
}

/// Draw a random crop window, flips, and quarter-turn count, and apply the
/// identical transform to both images. Images smaller than the crop are
/// bilinearly resized (shorter side up to the crop size) first.
pub fn augment_pair(pair: &ImagePair, crop: usize, rng: &mut ChaCha8Rng) -> ImagePair {
    let (h, w) = (pair.low.shape()[1], pair.low.shape()[2]);
    let (low, high) = if h < crop || w < crop {
        log::info!("augment: {h}x{w} smaller than crop {crop}, resizing shorter side");
        let scale = (crop as f64 / h as f64).max(crop as f64 / w as f64);
        let nh = (h as f64 * scale).ceil() as usize;
        let nw = (w as f64 * scale).ceil() as usize;
        (
            bilinear_resize(&pair.low, nh, nw),
            bilinear_resize(&pair.high, nh, nw),
        )
    } else {
        (pair.low.clone(), pair.high.clone())
    };
    let (h, w) = (low.shape()[1], low.shape()[2]);
    let aug = Augmentation {
        crop_y: rng.gen_range(0..=h - crop),
        crop_x: rng.gen_range(0..=w - crop),
        flip_h: rng.gen_bool(0.5),
        flip_v: rng.gen_bool(0.5),
        quarter_turns: rng.gen_range(0..4u8),
    };
    ImagePair {
        low: apply_geometry(&low, &aug, crop),
        high: apply_geometry(&high, &aug, crop),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_png(dir: &Path, name: &str, w: u32, h: u32, seed: u8) {
        let img: image::RgbImage = image::ImageBuffer::from_fn(w, h, |x, y| {
            image::Rgb([
                (x as u8).wrapping_mul(seed),
                (y as u8).wrapping_add(seed),
                seed,
            ])
        });
        img.save(dir.join(name)).unwrap();
    }

    fn make_dataset(root: &Path, split: &str, names: &[&str], orphan_high: &[&str]) {
        let low = root.join(split).join("low");
        let high = root.join(split).join("high");
        std::fs::create_dir_all(&low).unwrap();
        std::fs::create_dir_all(&high).unwrap();
        for (i, n) in names.iter().enumerate() {
            write_png(&low, n, 24, 20, i as u8 + 1);
            write_png(&high, n, 24, 20, i as u8 + 100);
        }
        for (i, n) in orphan_high.iter().enumerate() {
            write_png(&high, n, 24, 20, i as u8 + 50);
        }
    }

    #[test]
    fn pairs_by_filename_in_lexicographic_order() {
        let tmp = tempfile::tempdir().unwrap();
        make_dataset(tmp.path(), "train", &["b.png", "a.png", "c.png"], &[]);
        let ds = load_dataset(tmp.path(), Split::Train).unwrap();
        assert_eq!(ds.len(), 3);
        let names: Vec<String> = ds
            .entries
            .iter()
            .map(|(l, _)| l.file_name().unwrap().to_string_lossy().into_owned())
            .collect();
        assert_eq!(names, ["a.png", "b.png", "c.png"]);
        let pair = ds.load(0).unwrap();
        assert_eq!(pair.low.shape(), &[1, 20, 24, 3]);
    }

    #[test]
    fn missing_directory_names_expected_layout() {
        let tmp = tempfile::tempdir().unwrap();
        let err = load_dataset(tmp.path(), Split::Test).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("low"), "{msg}");
        assert!(msg.contains("layout"), "{msg}");
    }

    #[test]
    fn orphan_files_are_named() {
        let tmp = tempfile::tempdir().unwrap();
        make_dataset(tmp.path(), "train", &["a.png"], &["zz.png"]);
        let err = load_dataset(tmp.path(), Split::Train).unwrap_err();
        assert!(err.to_string().contains("zz.png"), "{err}");
    }

    #[test]
    fn empty_dataset_rejected() {
        let tmp = tempfile::tempdir().unwrap();
        std::fs::create_dir_all(tmp.path().join("train/low")).unwrap();
        std::fs::create_dir_all(tmp.path().join("train/high")).unwrap();
        assert!(matches!(
            load_dataset(tmp.path(), Split::Train),
            Err(DataError::EmptyDataset(_))
        ));
    }

    #[test]
    fn png_roundtrip_is_byte_identical() {
        let tmp = tempfile::tempdir().unwrap();
        let p1 = tmp.path().join("img.png");
        write_png(tmp.path(), "img.png", 13, 9, 37);
        let decoded = decode_png(&p1).unwrap();
        let p2 = tmp.path().join("copy.png");
        encode_png(&decoded, &p2).unwrap();
        let a = std::fs::read(&p1).unwrap();
        let b = image::open(&p2).unwrap().to_rgb8();
        let orig = image::open(&p1).unwrap().to_rgb8();
        assert_eq!(orig.as_raw(), b.as_raw());
        let _ = a;
    }

    #[test]
    fn decode_scales_by_255() {
        let tmp = tempfile::tempdir().unwrap();
        let img: image::RgbImage =
            image::ImageBuffer::from_pixel(2, 1, image::Rgb([128, 0, 255]));
        let p = tmp.path().join("px.png");
        img.save(&p).unwrap();
        let t = decode_png(&p).unwrap();
        assert_eq!(t.data()[0], 128.0 / 255.0);
        assert_eq!(t.data()[1], 0.0);
        assert_eq!(t.data()[2], 1.0);
    }

    #[test]
    fn encode_clamps_out_of_range() {
        let tmp = tempfile::tempdir().unwrap();
        let t = Tensor::from_vec(&[1, 1, 2, 3], vec![1.3, -0.2, 0.5, 0.0, 1.0, 0.9999]).unwrap();
        let p = tmp.path().join("clamp.png");
        encode_png(&t, &p).unwrap();
        let back = image::open(&p).unwrap().to_rgb8();
        assert_eq!(back.as_raw()[0], 255);
        assert_eq!(back.as_raw()[1], 0);
        assert_eq!(back.as_raw()[4], 255);
    }

    #[test]
    fn sixteen_bit_rejected_with_message() {
        let tmp = tempfile::tempdir().unwrap();
        let img = image::ImageBuffer::<image::Rgb<u16>, Vec<u16>>::from_pixel(
            2,
            2,
            image::Rgb([1000, 2000, 3000]),
        );
        let p = tmp.path().join("deep.png");
        image::DynamicImage::ImageRgb16(img).save(&p).unwrap();
        let err = decode_png(&p).unwrap_err();
        assert!(err.to_string().contains("16-bit"), "{err}");
    }

    fn coordinate_image(h: usize, w: usize) -> Tensor<f32> {
        // channel 0 encodes x, channel 1 encodes y, channel 2 a checksum
        let mut data = Vec::with_capacity(h * w * 3);
        for y in 0..h {
            for x in 0..w {
                data.push(x as f32);
                data.push(y as f32);
                data.push((x * 31 + y * 7) as f32);
            }
        }
        Tensor::from_vec(&[1, h, w, 3], data).unwrap()
    }

    #[test]
    fn augmentation_is_deterministic_given_stream() {
        let img = coordinate_image(40, 40);
        let pair = ImagePair {
            low: img.clone(),
            high: img.scale(2.0),
        };
        let a = augment_pair(&pair, 16, &mut augmentation_rng(9, 3, 14));
        let b = augment_pair(&pair, 16, &mut augmentation_rng(9, 3, 14));
        assert_eq!(a.low.data(), b.low.data());
        assert_eq!(a.high.data(), b.high.data());
    }

    #[test]
    fn both_images_get_identical_geometry() {
        // the high image is the low image doubled, so after any shared
        // geometric transform that relation must hold pixelwise
        let img = coordinate_image(48, 36);
        let pair = ImagePair {
            low: img.clone(),
            high: img.scale(2.0),
        };
        for idx in 0..12 {
            let out = augment_pair(&pair, 24, &mut augmentation_rng(1, 0, idx));
            for (&l, &h) in out.low.data().iter().zip(out.high.data().iter()) {
                assert_eq!(h, l * 2.0);
            }
        }
    }

    #[test]
    fn two_quarter_turns_twice_restore_orientation() {
        let img = coordinate_image(20, 20);
        let aug = Augmentation {
            crop_y: 0,
            crop_x: 0,
            flip_h: false,
            flip_v: false,
            quarter_turns: 2,
        };
        let once = apply_geometry(&img, &aug, 20);
        let twice = apply_geometry(&once, &aug, 20);
        assert_eq!(twice.data(), img.data());
    }

    #[test]
    fn crop_window_always_in_bounds() {
        let img = coordinate_image(33, 47);
        let pair = ImagePair {
            low: img.clone(),
            high: img.clone(),
        };
        for idx in 0..10_000u64 {
            let out = augment_pair(&pair, 16, &mut augmentation_rng(5, 0, idx));
            // x coordinates live in channel 0, y in channel 1
            for px in out.low.data().chunks(3) {
                assert!(px[0] < 47.0 && px[1] < 33.0);
            }
        }
    }

    #[test]
    fn undersized_image_resized_then_cropped() {
        let img = coordinate_image(10, 14);
        let pair = ImagePair {
            low: img.clone(),
            high: img.clone(),
        };
        let out = augment_pair(&pair, 16, &mut augmentation_rng(2, 1, 0));
        assert_eq!(out.low.shape(), &[1, 16, 16, 3]);
    }
}
