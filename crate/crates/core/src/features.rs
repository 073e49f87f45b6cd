//! Deterministic multi-scale feature extraction and the precomputed-feature
//! file format.
//!
//! Each pyramid level is a box-downsampled image augmented with oriented
//! gradient channels, then lifted by a fixed seeded linear map to the
//! configured channel count. Finer levels carry fewer channels (div 4 -> 16,
//! div 8 -> 32, div 16 -> 64 by default) so that volumes built per stage
//! match the {16^3 x 64, 32^3 x 32, 64^3 x 16} shapes. Externally computed
//! (e.g. learned) feature maps can replace the built-in extractor through
//! [`load_precomputed`].

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::Raster;

/// Feature extraction settings. Pyramids are a pure function of
/// `(image, config, seed)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureConfig {
    /// Scale divisors, finest first.
    pub divisors: Vec<usize>,
    /// Output channels per level, aligned with `divisors`.
    pub channels: Vec<usize>,
    /// Unsigned gradient orientation bins.
    pub orient_bins: usize,
    /// Seed for the channel-lift matrices.
    pub seed: u64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            divisors: vec![4, 8, 16],
            channels: vec![16, 32, 64],
            orient_bins: 6,
            seed: 0x5eed,
        }
    }
}

impl FeatureConfig {
    pub fn validate(&self) -> Result<()> {
        if self.divisors.is_empty() || self.divisors.len() != self.channels.len() {
            return Err(Error::Config(
                "feature divisors and channels must be non-empty and aligned".into(),
            ));
        }
        if self.orient_bins < 2 {
            return Err(Error::Config("need at least 2 orientation bins".into()));
        }
        Ok(())
    }

    pub fn raw_channels(&self) -> usize {
        3 + self.orient_bins
    }

    /// Index of the level with the given divisor.
    pub fn level_of_divisor(&self, div: usize) -> Option<usize> {
        self.divisors.iter().position(|d| *d == div)
    }
}

/// One pyramid level: feature raster at `ceil(W/div) x ceil(H/div)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PyramidLevel {
    pub divisor: usize,
    pub raster: Raster,
}

/// Multi-scale feature stack for one image.
#[derive(Debug, Clone, PartialEq)]
pub struct FeaturePyramid {
    pub levels: Vec<PyramidLevel>,
    pub src_width: usize,
    pub src_height: usize,
}

impl FeaturePyramid {
    pub fn level_by_divisor(&self, div: usize) -> Option<&PyramidLevel> {
        self.levels.iter().find(|l| l.divisor == div)
    }
}

/// Full-resolution pixel coordinate of a texel center at scale `div`.
pub fn texel_to_pixel(texel: f64, div: usize) -> f64 {
    (texel + 0.5) * div as f64 - 0.5
}

/// Texel coordinate at scale `div` of a full-resolution pixel.
pub fn pixel_to_texel(pixel: f64, div: usize) -> f64 {
    (pixel + 0.5) / div as f64 - 0.5
}

fn ceil_div(a: usize, b: usize) -> usize {
    a.div_ceil(b)
}

/// Box-downsample an RGB raster by `div` (partial edge blocks average the
/// available pixels).
fn box_downsample(img: &Raster, div: usize) -> Raster {
    let w = ceil_div(img.width, div);
    let h = ceil_div(img.height, div);
    let c = img.channels;
    let mut out = Raster::zeros(w, h, c);
    for by in 0..h {
        for bx in 0..w {
            let x1 = ((bx + 1) * div).min(img.width);
            let y1 = ((by + 1) * div).min(img.height);
            let x0 = bx * div;
            let y0 = by * div;
            let n = ((x1 - x0) * (y1 - y0)) as f32;
            let acc = out.pixel_mut(bx, by);
            for yy in y0..y1 {
                let row = (yy * img.width + x0) * c;
                let row = &img.data[row..row + (x1 - x0) * c];
                for px in row.chunks_exact(c) {
                    for ch in 0..c {
                        acc[ch] += px[ch];
                    }
                }
            }
            for ch in 0..c {
                acc[ch] /= n;
            }
        }
    }
    out
}

/// Raw per-level features: color channels followed by `bins` unsigned
/// oriented-gradient channels (soft-assigned gradient magnitude).
fn raw_features(level_img: &Raster, bins: usize) -> Raster {
    let (w, h) = (level_img.width, level_img.height);
    let c_in = level_img.channels;
    let c_out = c_in + bins;
    let mut out = Raster::zeros(w, h, c_out);

    // grayscale for gradients
    let mut gray = vec![0.0f32; w * h];
    for i in 0..w * h {
        let px = &level_img.data[i * c_in..(i + 1) * c_in];
        gray[i] = px.iter().sum::<f32>() / c_in as f32;
    }

    let at = |x: isize, y: isize| -> f32 {
        let x = x.clamp(0, w as isize - 1) as usize;
        let y = y.clamp(0, h as isize - 1) as usize;
        gray[y * w + x]
    };

    for y in 0..h {
        for x in 0..w {
            let px = out.pixel_mut(x, y);
            px[..c_in].copy_from_slice(level_img.pixel(x, y));
            let gx = (at(x as isize + 1, y as isize) - at(x as isize - 1, y as isize)) * 0.5;
            let gy = (at(x as isize, y as isize + 1) - at(x as isize, y as isize - 1)) * 0.5;
            let mag = (gx * gx + gy * gy).sqrt();
            if mag > 0.0 {
                // unsigned orientation in [0, pi), soft-assigned to the two
                // nearest bins (circular)
                let mut theta = (gy as f64).atan2(gx as f64);
                if theta < 0.0 {
                    theta += std::f64::consts::PI;
                }
                if theta >= std::f64::consts::PI {
                    theta -= std::f64::consts::PI;
                }
                let pos = theta / std::f64::consts::PI * bins as f64;
                let b0 = pos.floor() as usize % bins;
                let b1 = (b0 + 1) % bins;
                let f = (pos - pos.floor()) as f32;
                px[c_in + b0] += mag * (1.0 - f);
                px[c_in + b1] += mag * f;
            }
        }
    }
    out
}

/// Seeded channel-lift matrix for one level, row-major `c_out x raw`.
pub fn channel_lift(cfg: &FeatureConfig, level: usize) -> Vec<f32> {
    let raw = cfg.raw_channels();
    let c_out = cfg.channels[level];
    let mut rng = ChaCha8Rng::seed_from_u64(
        cfg.seed ^ (cfg.divisors[level] as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15),
    );
    let scale = 1.0 / (raw as f32).sqrt();
    (0..c_out * raw)
        .map(|_| rng.gen_range(-1.0f32..1.0f32) * scale)
        .collect()
}

fn apply_lift(raw: &Raster, lift: &[f32], c_out: usize) -> Raster {
    let c_in = raw.channels;
    debug_assert_eq!(lift.len(), c_out * c_in);
    let mut out = Raster::zeros(raw.width, raw.height, c_out);
    for i in 0..raw.width * raw.height {
        let src = &raw.data[i * c_in..(i + 1) * c_in];
        let dst = &mut out.data[i * c_out..(i + 1) * c_out];
        for (co, row) in lift.chunks_exact(c_in).enumerate() {
            let mut acc = 0.0f32;
            for k in 0..c_in {
                acc += row[k] * src[k];
            }
            dst[co] = acc;
        }
    }
    out
}

/// Build the feature pyramid for an image. Deterministic given
/// `(image, cfg)`; images smaller than 32x32 are rejected.
pub fn build_pyramid(img: &Raster, cfg: &FeatureConfig) -> Result<FeaturePyramid> {
    cfg.validate()?;
    const MIN_SIDE: usize = 32;
    if img.width < MIN_SIDE || img.height < MIN_SIDE {
        return Err(Error::ImageTooSmall {
            width: img.width,
            height: img.height,
            min: MIN_SIDE,
        });
    }
    let mut levels = Vec::with_capacity(cfg.divisors.len());
    for (li, div) in cfg.divisors.iter().enumerate() {
        let down = box_downsample(img, *div);
        let raw = raw_features(&down, cfg.orient_bins);
        let lift = channel_lift(cfg, li);
        let raster = apply_lift(&raw, &lift, cfg.channels[li]);
        levels.push(PyramidLevel {
            divisor: *div,
            raster,
        });
    }
    Ok(FeaturePyramid {
        levels,
        src_width: img.width,
        src_height: img.height,
    })
}

/// Zero-mean normalized cross-correlation of two equally long feature
/// sequences, in `[-1, 1]`. Constant input correlates to 0 by definition.
pub fn ncc(a: &[f32], b: &[f32]) -> f64 {
    assert_eq!(a.len(), b.len(), "ncc requires equal lengths");
    assert!(a.len() >= 2, "ncc requires at least 2 samples");
    let n = a.len() as f64;
    let mut sa = 0.0f64;
    let mut sb = 0.0f64;
    for i in 0..a.len() {
        sa += a[i] as f64;
        sb += b[i] as f64;
    }
    let ma = sa / n;
    let mb = sb / n;
    let mut cov = 0.0f64;
    let mut va = 0.0f64;
    let mut vb = 0.0f64;
    for i in 0..a.len() {
        let da = a[i] as f64 - ma;
        let db = b[i] as f64 - mb;
        cov += da * db;
        va += da * da;
        vb += db * db;
    }
    if va <= 1e-24 || vb <= 1e-24 {
        return 0.0;
    }
    (cov / (va.sqrt() * vb.sqrt())).clamp(-1.0, 1.0)
}

const CFPX_MAGIC: &[u8; 4] = b"CFPX";

/// Write a pyramid in the portable binary format: magic "CFPX", u32 level
/// count, then per level u32 `(w, h, c)` followed by `w*h*c` little-endian
/// float32, row-major, channels-last.
pub fn save_precomputed(path: &Path, pyr: &FeaturePyramid) -> Result<()> {
    let file = fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    w.write_all(CFPX_MAGIC)?;
    w.write_all(&(pyr.levels.len() as u32).to_le_bytes())?;
    for level in &pyr.levels {
        let r = &level.raster;
        w.write_all(&(r.width as u32).to_le_bytes())?;
        w.write_all(&(r.height as u32).to_le_bytes())?;
        w.write_all(&(r.channels as u32).to_le_bytes())?;
        for v in &r.data {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

/// Load an externally produced feature pyramid. Levels are assigned dyadic
/// divisors `4 * 2^i` and must be consistent: each level's dimensions must
/// equal the ceil-half of the previous level's.
pub fn load_precomputed(path: &Path) -> Result<FeaturePyramid> {
    let bytes = fs::read(path)?;
    let fail = |msg: &str| Error::Format(format!("{}: {}", path.display(), msg));
    if bytes.len() < 8 || &bytes[0..4] != CFPX_MAGIC {
        return Err(fail("missing CFPX magic"));
    }
    let mut pos = 4usize;
    let read_u32 = |pos: &mut usize| -> Result<u32> {
        if *pos + 4 > bytes.len() {
            return Err(fail("truncated header"));
        }
        let v = u32::from_le_bytes(bytes[*pos..*pos + 4].try_into().unwrap());
        *pos += 4;
        Ok(v)
    };
    let n_levels = read_u32(&mut pos)? as usize;
    if n_levels == 0 || n_levels > 16 {
        return Err(fail("implausible level count"));
    }
    let mut levels = Vec::with_capacity(n_levels);
    for li in 0..n_levels {
        let w = read_u32(&mut pos)? as usize;
        let h = read_u32(&mut pos)? as usize;
        let c = read_u32(&mut pos)? as usize;
        if w == 0 || h == 0 || c == 0 {
            return Err(fail("zero-sized level"));
        }
        let count = w * h * c;
        if pos + count * 4 > bytes.len() {
            return Err(fail("truncated payload"));
        }
        let mut data = Vec::with_capacity(count);
        for i in 0..count {
            let off = pos + i * 4;
            data.push(f32::from_le_bytes(bytes[off..off + 4].try_into().unwrap()));
        }
        pos += count * 4;
        levels.push(PyramidLevel {
            divisor: 4 << li,
            raster: Raster::from_data(w, h, c, data),
        });
    }
    // dyadic consistency between adjacent levels
    for i in 1..levels.len() {
        let prev = &levels[i - 1].raster;
        let cur = &levels[i].raster;
        if cur.width != ceil_div(prev.width, 2) || cur.height != ceil_div(prev.height, 2) {
            return Err(Error::Dimension(format!(
                "{}: level {} is {}x{}, expected {}x{} from divisor ladder",
                path.display(),
                i,
                cur.width,
                cur.height,
                ceil_div(prev.width, 2),
                ceil_div(prev.height, 2)
            )));
        }
    }
    let src_width = levels[0].raster.width * 4;
    let src_height = levels[0].raster.height * 4;
    Ok(FeaturePyramid {
        levels,
        src_width,
        src_height,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn noise_image(w: usize, h: usize, seed: u64) -> Raster {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut img = Raster::zeros(w, h, 3);
        for v in img.data.iter_mut() {
            *v = rng.gen_range(0.0..1.0);
        }
        img
    }

    #[test]
    fn level_shapes_follow_ceil_division() {
        let img = noise_image(64, 64, 1);
        let pyr = build_pyramid(&img, &FeatureConfig::default()).unwrap();
        let dims: Vec<(usize, usize)> = pyr
            .levels
            .iter()
            .map(|l| (l.raster.width, l.raster.height))
            .collect();
        assert_eq!(dims, vec![(16, 16), (8, 8), (4, 4)]);
        // finer levels carry fewer channels
        let chans: Vec<usize> = pyr.levels.iter().map(|l| l.raster.channels).collect();
        assert_eq!(chans, vec![16, 32, 64]);
    }

    #[test]
    fn constant_image_has_zero_gradient_channels() {
        let mut img = Raster::zeros(48, 48, 3);
        for px in img.data.chunks_exact_mut(3) {
            px.copy_from_slice(&[0.2, 0.5, 0.7]);
        }
        let down = box_downsample(&img, 4);
        let raw = raw_features(&down, 6);
        for y in 0..raw.height {
            for x in 0..raw.width {
                let px = raw.pixel(x, y);
                for g in &px[3..] {
                    assert_eq!(*g, 0.0);
                }
            }
        }
        // lifted features are then exactly the lift of the color alone
        let cfg = FeatureConfig::default();
        let pyr = build_pyramid(&img, &cfg).unwrap();
        let lift = channel_lift(&cfg, 0);
        let raw_c = cfg.raw_channels();
        let expect: Vec<f32> = (0..cfg.channels[0])
            .map(|co| {
                lift[co * raw_c] * 0.2 + lift[co * raw_c + 1] * 0.5 + lift[co * raw_c + 2] * 0.7
            })
            .collect();
        let level = &pyr.levels[0].raster;
        for px in level.data.chunks_exact(level.channels) {
            for (a, b) in px.iter().zip(&expect) {
                assert!((a - b).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn pyramids_are_deterministic() {
        let img = noise_image(64, 48, 3);
        let cfg = FeatureConfig::default();
        let a = build_pyramid(&img, &cfg).unwrap();
        let b = build_pyramid(&img, &cfg).unwrap();
        for (la, lb) in a.levels.iter().zip(&b.levels) {
            assert_eq!(la.raster.data, lb.raster.data);
        }
    }

    #[test]
    fn small_image_rejected() {
        let img = Raster::zeros(16, 64, 3);
        assert!(matches!(
            build_pyramid(&img, &FeatureConfig::default()),
            Err(Error::ImageTooSmall { .. })
        ));
    }

    #[test]
    fn shift_by_divisor_shifts_level_by_one_texel() {
        let mut a = Raster::zeros(64, 64, 3);
        let mut b = Raster::zeros(64, 64, 3);
        // impulse away from the borders, shifted by exactly one block
        a.pixel_mut(24, 28).copy_from_slice(&[1.0, 0.5, 0.25]);
        b.pixel_mut(28, 28).copy_from_slice(&[1.0, 0.5, 0.25]);
        let cfg = FeatureConfig::default();
        let pa = build_pyramid(&a, &cfg).unwrap();
        let pb = build_pyramid(&b, &cfg).unwrap();
        let (ra, rb) = (&pa.levels[0].raster, &pb.levels[0].raster);
        for y in 1..ra.height - 1 {
            for x in 1..ra.width - 2 {
                let va = ra.pixel(x, y);
                let vb = rb.pixel(x + 1, y);
                for (u, v) in va.iter().zip(vb) {
                    assert!((u - v).abs() < 1e-6, "mismatch at {x},{y}");
                }
            }
        }
    }

    #[test]
    fn ncc_examples() {
        assert!((ncc(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]) - 1.0).abs() < 1e-12);
        assert!((ncc(&[1.0, 2.0, 3.0], &[-1.0, -2.0, -3.0]) + 1.0).abs() < 1e-12);
        assert_eq!(ncc(&[1.0, 1.0, 1.0], &[0.3, 0.9, 0.1]), 0.0);
    }

    #[test]
    fn cfpx_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("feat.cfpx");
        let img = noise_image(64, 64, 9);
        let pyr = build_pyramid(&img, &FeatureConfig::default()).unwrap();
        save_precomputed(&path, &pyr).unwrap();
        let back = load_precomputed(&path).unwrap();
        assert_eq!(back.levels.len(), 3);
        for (la, lb) in pyr.levels.iter().zip(&back.levels) {
            assert_eq!(la.divisor, lb.divisor);
            assert_eq!(la.raster, lb.raster);
        }
    }

    #[test]
    fn cfpx_truncated_payload_is_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.cfpx");
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"CFPX");
        bytes.extend_from_slice(&1u32.to_le_bytes());
        bytes.extend_from_slice(&4u32.to_le_bytes());
        bytes.extend_from_slice(&4u32.to_le_bytes());
        bytes.extend_from_slice(&2u32.to_le_bytes());
        bytes.extend_from_slice(&[0u8; 16]); // far fewer than 4*4*2 floats
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(load_precomputed(&path), Err(Error::Format(_))));
    }

    #[test]
    fn cfpx_inconsistent_ladder_is_dimension_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad_dims.cfpx");
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"CFPX");
        bytes.extend_from_slice(&2u32.to_le_bytes());
        for (w, h, c) in [(8u32, 8u32, 1u32), (5u32, 4u32, 1u32)] {
            bytes.extend_from_slice(&w.to_le_bytes());
            bytes.extend_from_slice(&h.to_le_bytes());
            bytes.extend_from_slice(&c.to_le_bytes());
            bytes.extend(std::iter::repeat(0u8).take((w * h * c * 4) as usize));
        }
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(load_precomputed(&path), Err(Error::Dimension(_))));
    }
}
