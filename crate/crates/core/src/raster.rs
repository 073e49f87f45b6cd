//! Multi-channel `f32` rasters (channels-last) plus PPM/PGM i/o.
//!
//! The same container backs RGB images (3 channels, values in `[0,1]`),
//! feature maps (arbitrary channel count) and heatmaps (1 channel).
//! Integer coordinates address pixel centers.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Dense row-major raster, channels-last: `data[(y*w + x)*c + ch]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl Raster {
    pub fn zeros(width: usize, height: usize, channels: usize) -> Self {
        Raster {
            width,
            height,
            channels,
            data: vec![0.0; width * height * channels],
        }
    }

    pub fn from_data(width: usize, height: usize, channels: usize, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), width * height * channels);
        Raster {
            width,
            height,
            channels,
            data,
        }
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> &[f32] {
        let i = (y * self.width + x) * self.channels;
        &self.data[i..i + self.channels]
    }

    #[inline]
    pub fn pixel_mut(&mut self, x: usize, y: usize) -> &mut [f32] {
        let i = (y * self.width + x) * self.channels;
        &mut self.data[i..i + self.channels]
    }

    /// Bilinear sample at `(x, y)` into `out`; returns `false` (leaving `out`
    /// zeroed) when the point lies outside `[0, w-1] x [0, h-1]`.
    pub fn sample_bilinear(&self, x: f64, y: f64, out: &mut [f32]) -> bool {
        debug_assert_eq!(out.len(), self.channels);
        if !(x >= 0.0 && y >= 0.0 && x <= (self.width - 1) as f64 && y <= (self.height - 1) as f64)
        {
            out.fill(0.0);
            return false;
        }
        let x0 = (x.floor() as usize).min(self.width - 1);
        let y0 = (y.floor() as usize).min(self.height - 1);
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let fx = (x - x0 as f64) as f32;
        let fy = (y - y0 as f64) as f32;
        let w00 = (1.0 - fx) * (1.0 - fy);
        let w10 = fx * (1.0 - fy);
        let w01 = (1.0 - fx) * fy;
        let w11 = fx * fy;
        let p00 = self.pixel(x0, y0);
        let p10 = self.pixel(x1, y0);
        let p01 = self.pixel(x0, y1);
        let p11 = self.pixel(x1, y1);
        for ch in 0..self.channels {
            out[ch] = w00 * p00[ch] + w10 * p10[ch] + w01 * p01[ch] + w11 * p11[ch];
        }
        true
    }

    /// Copy of the rectangle `[x0, x0+w) x [y0, y0+h)`; caller guarantees bounds.
    pub fn view(&self, x0: usize, y0: usize, w: usize, h: usize) -> Raster {
        assert!(x0 + w <= self.width && y0 + h <= self.height);
        let mut out = Raster::zeros(w, h, self.channels);
        for y in 0..h {
            let src = ((y0 + y) * self.width + x0) * self.channels;
            let dst = y * w * self.channels;
            out.data[dst..dst + w * self.channels]
                .copy_from_slice(&self.data[src..src + w * self.channels]);
        }
        out
    }

    /// Bilinear resize to `(w, h)`. Edge pixels map to edge pixels.
    pub fn resize(&self, w: usize, h: usize) -> Raster {
        assert!(w >= 1 && h >= 1);
        let mut out = Raster::zeros(w, h, self.channels);
        let sx = if w > 1 {
            (self.width - 1) as f64 / (w - 1) as f64
        } else {
            0.0
        };
        let sy = if h > 1 {
            (self.height - 1) as f64 / (h - 1) as f64
        } else {
            0.0
        };
        let mut buf = vec![0.0f32; self.channels];
        for y in 0..h {
            for x in 0..w {
                self.sample_bilinear(x as f64 * sx, y as f64 * sy, &mut buf);
                out.pixel_mut(x, y).copy_from_slice(&buf);
            }
        }
        out
    }

    /// Rotate by `angle_deg` counter-clockwise in pixel coordinates about the
    /// raster center; out-of-bounds samples are zero-filled.
    pub fn rotate_about_center(&self, angle_deg: f64) -> Raster {
        let mut out = Raster::zeros(self.width, self.height, self.channels);
        let cx = (self.width - 1) as f64 * 0.5;
        let cy = (self.height - 1) as f64 * 0.5;
        let (sin, cos) = angle_deg.to_radians().sin_cos();
        let mut buf = vec![0.0f32; self.channels];
        for y in 0..self.height {
            for x in 0..self.width {
                // inverse map: rotate destination by -angle
                let dx = x as f64 - cx;
                let dy = y as f64 - cy;
                let sx = cx + cos * dx + sin * dy;
                let sy = cy - sin * dx + cos * dy;
                self.sample_bilinear(sx, sy, &mut buf);
                out.pixel_mut(x, y).copy_from_slice(&buf);
            }
        }
        out
    }
}

fn clamp_u8(v: f32) -> u8 {
    (v * 255.0 + 0.5).clamp(0.0, 255.0) as u8
}

/// Write a 3-channel raster as binary PPM (P6), 8-bit.
pub fn write_ppm(path: &Path, img: &Raster) -> Result<()> {
    if img.channels != 3 {
        return Err(Error::Dimension(format!(
            "PPM output requires 3 channels, got {}",
            img.channels
        )));
    }
    let file = fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    write!(w, "P6\n{} {}\n255\n", img.width, img.height)?;
    let mut bytes = Vec::with_capacity(img.data.len());
    for v in &img.data {
        bytes.push(clamp_u8(*v));
    }
    w.write_all(&bytes)?;
    Ok(())
}

/// Write a 1-channel raster as binary PGM (P5), 8-bit, mapping `[lo, hi]`
/// linearly onto `0..=255`.
pub fn write_pgm(path: &Path, img: &Raster, lo: f32, hi: f32) -> Result<()> {
    if img.channels != 1 {
        return Err(Error::Dimension(format!(
            "PGM output requires 1 channel, got {}",
            img.channels
        )));
    }
    let file = fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    write!(w, "P5\n{} {}\n255\n", img.width, img.height)?;
    let span = (hi - lo).max(1e-12);
    let bytes: Vec<u8> = img.data.iter().map(|v| clamp_u8((v - lo) / span)).collect();
    w.write_all(&bytes)?;
    Ok(())
}

/// Read a binary PPM (P6), 8-bit, into a 3-channel raster with values in `[0,1]`.
pub fn read_ppm(path: &Path) -> Result<Raster> {
    let bytes = fs::read(path)?;
    parse_ppm(&bytes).map_err(|msg| Error::Format(format!("{}: {}", path.display(), msg)))
}

fn parse_ppm(bytes: &[u8]) -> std::result::Result<Raster, String> {
    let mut pos = 0usize;
    let token = |pos: &mut usize| -> std::result::Result<String, String> {
        // skip whitespace and comments
        loop {
            while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
                *pos += 1;
            }
            if *pos < bytes.len() && bytes[*pos] == b'#' {
                while *pos < bytes.len() && bytes[*pos] != b'\n' {
                    *pos += 1;
                }
            } else {
                break;
            }
        }
        let start = *pos;
        while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if start == *pos {
            return Err("truncated header".into());
        }
        Ok(String::from_utf8_lossy(&bytes[start..*pos]).into_owned())
    };

    let magic = token(&mut pos)?;
    if magic != "P6" {
        return Err(format!("expected P6 magic, got {magic:?}"));
    }
    let width: usize = token(&mut pos)?.parse().map_err(|_| "bad width")?;
    let height: usize = token(&mut pos)?.parse().map_err(|_| "bad height")?;
    let maxval: usize = token(&mut pos)?.parse().map_err(|_| "bad maxval")?;
    if maxval != 255 {
        return Err(format!("unsupported maxval {maxval}"));
    }
    pos += 1; // single whitespace after maxval
    let need = width * height * 3;
    if bytes.len() < pos + need {
        return Err("truncated pixel data".into());
    }
    let data: Vec<f32> = bytes[pos..pos + need]
        .iter()
        .map(|b| *b as f32 / 255.0)
        .collect();
    Ok(Raster::from_data(width, height, 3, data))
}
