//! Object detection by multi-scale template correlation.
//!
//! Support-view templates (object crops at a fixed pyramid level) are slid
//! over the target feature map at a geometric grid of scales; the peak
//! normalized cross-correlation gives the detected center and scale. All
//! ties are broken deterministically: lower scale first, then lexicographic
//! pixel order `(x, y)`, then lower view index.

use serde::{Deserialize, Serialize};

use crate::camera::{project, Intrinsics, Projection};
use crate::error::{Error, Result};
use crate::features::{pixel_to_texel, texel_to_pixel, FeaturePyramid};
use crate::initializer::SupportSet;
use crate::math::Vec3;
use crate::pose::Pose;
use crate::raster::Raster;

/// Detection settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    /// Pyramid level used for correlation.
    pub level_divisor: usize,
    /// Scale grid (target object size / template size).
    pub scales: Vec<f64>,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        // 2^{-1..1} in 7 geometric steps
        DetectorConfig {
            level_divisor: 8,
            scales: (-3..=3).map(|k| 2.0f64.powf(k as f64 / 3.0)).collect(),
        }
    }
}

/// Detector output: peak of the correlation heatmap.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DetectionResult {
    /// Object center in full-resolution pixels (sub-texel refined).
    pub center: [f64; 2],
    /// Matched scale (target object size / template size), from the grid.
    pub scale: f64,
    /// Peak correlation in `[-1, 1]`.
    pub score: f64,
    /// Support view index whose template matched best.
    pub view: usize,
    /// Side of the matched template's object box in full-resolution pixels
    /// of the support view; the detected box side is `template_size * scale`.
    pub template_size: f64,
    /// Peak-over-templates correlation at the detection level.
    #[serde(skip)]
    pub heatmap: Raster,
    /// Level divisor of the heatmap.
    pub level_divisor: usize,
}

impl DetectionResult {
    /// Heatmap texel the center falls in (sub-texel refinement stays within
    /// half a texel of the peak, so this recovers the peak texel).
    pub fn center_texel(&self) -> (usize, usize) {
        let tx = pixel_to_texel(self.center[0], self.level_divisor).round();
        let ty = pixel_to_texel(self.center[1], self.level_divisor).round();
        (
            (tx.max(0.0) as usize).min(self.heatmap.width - 1),
            (ty.max(0.0) as usize).min(self.heatmap.height - 1),
        )
    }

    /// Detected box side in full-resolution pixels.
    pub fn box_side(&self) -> f64 {
        self.template_size * self.scale
    }
}

/// Projected object box in a view: center pixel and square side, from the
/// bounding cube (side = object diameter) around the object center.
/// `None` when the center is behind the camera.
pub fn object_box(pose: &Pose, k: &Intrinsics, diameter: f64, center: Vec3) -> Option<([f64; 2], f64)> {
    let c_px = match project(k, pose.transform_point(center)) {
        Projection::Pixel(p) => p,
        Projection::Behind => return None,
    };
    let half = diameter / 2.0;
    let mut side: f64 = 0.0;
    for i in 0..8 {
        let corner = [
            center[0] + if i & 1 == 0 { -half } else { half },
            center[1] + if i & 2 == 0 { -half } else { half },
            center[2] + if i & 4 == 0 { -half } else { half },
        ];
        match project(k, pose.transform_point(corner)) {
            Projection::Pixel(p) => {
                side = side
                    .max(2.0 * (p[0] - c_px[0]).abs())
                    .max(2.0 * (p[1] - c_px[1]).abs());
            }
            Projection::Behind => return None,
        }
    }
    if side < 1.0 {
        return None;
    }
    Some((c_px, side))
}

/// Template: a crop of a support view's feature raster plus its full-res size.
struct Template {
    view: usize,
    feat: Raster,
    full_res_side: f64,
}

fn extract_template(
    pyr: &FeaturePyramid,
    pose: &Pose,
    k: &Intrinsics,
    diameter: f64,
    center: Vec3,
    div: usize,
    view: usize,
) -> Option<Template> {
    let (c_px, side) = object_box(pose, k, diameter, center)?;
    let level = pyr.level_by_divisor(div)?;
    let r = &level.raster;
    let x0 = pixel_to_texel(c_px[0] - side / 2.0, div).floor().max(0.0) as usize;
    let y0 = pixel_to_texel(c_px[1] - side / 2.0, div).floor().max(0.0) as usize;
    let x1 = (pixel_to_texel(c_px[0] + side / 2.0, div).ceil() as usize + 1).min(r.width);
    let y1 = (pixel_to_texel(c_px[1] + side / 2.0, div).ceil() as usize + 1).min(r.height);
    if x1 <= x0 + 1 || y1 <= y0 + 1 {
        return None;
    }
    Some(Template {
        view,
        feat: r.view(x0, y0, x1 - x0, y1 - y0),
        full_res_side: side,
    })
}

/// Template statistics for one scaled template: flattened values, sum and
/// sum of squares.
struct ScaledTemplate {
    w: usize,
    h: usize,
    data: Vec<f32>,
    sum: f64,
    sumsq: f64,
}

fn scaled_template(t: &Raster, scale: f64) -> Option<ScaledTemplate> {
    let w = ((t.width as f64 * scale).round() as usize).max(2);
    let h = ((t.height as f64 * scale).round() as usize).max(2);
    let r = t.resize(w, h);
    let mut sum = 0.0f64;
    let mut sumsq = 0.0f64;
    for v in &r.data {
        sum += *v as f64;
        sumsq += (*v as f64) * (*v as f64);
    }
    Some(ScaledTemplate {
        w,
        h,
        data: r.data,
        sum,
        sumsq,
    })
}

struct Candidate {
    score: f64,
    scale_idx: usize,
    tx: usize,
    ty: usize,
    view: usize,
}

fn candidate_better(new: &Candidate, old: &Candidate, scales: &[f64]) -> bool {
    if new.score != old.score {
        return new.score > old.score;
    }
    if new.scale_idx != old.scale_idx {
        return scales[new.scale_idx] < scales[old.scale_idx];
    }
    if new.tx != old.tx {
        return new.tx < old.tx;
    }
    if new.ty != old.ty {
        return new.ty < old.ty;
    }
    new.view < old.view
}

/// Locate the object in the target pyramid as a (center, scale) box.
pub fn detect(
    target: &FeaturePyramid,
    supports: &SupportSet,
    support_pyrs: &[FeaturePyramid],
    cfg: &DetectorConfig,
) -> Result<DetectionResult> {
    let div = cfg.level_divisor;
    let level = target
        .level_by_divisor(div)
        .ok_or_else(|| Error::Dimension(format!("target pyramid has no div-{div} level")))?;
    let raster = &level.raster;

    let mut templates = Vec::new();
    for (i, view) in supports.views.iter().enumerate() {
        if let Some(t) = extract_template(
            &support_pyrs[i],
            &view.pose,
            &view.intrinsics,
            supports.diameter,
            supports.center,
            div,
            i,
        ) {
            templates.push(t);
        }
    }
    if templates.is_empty() {
        return Err(Error::NoTemplate);
    }

    let mut heatmap = Raster::zeros(raster.width, raster.height, 1);
    // degenerate default: constant targets score 0 everywhere and the
    // tie-break lands on pixel (0, 0) at the lowest scale
    let mut best = Candidate {
        score: 0.0,
        scale_idx: 0,
        tx: 0,
        ty: 0,
        view: templates[0].view,
    };

    let c = raster.channels;
    for template in &templates {
        if template.feat.channels != c {
            return Err(Error::Dimension(
                "template/target channel mismatch".into(),
            ));
        }
        for (si, scale) in cfg.scales.iter().enumerate() {
            let Some(st) = scaled_template(&template.feat, *scale) else {
                continue;
            };
            if st.w > raster.width || st.h > raster.height {
                continue;
            }
            let n = (st.w * st.h * c) as f64;
            let tvar = st.sumsq - st.sum * st.sum / n;
            for y0 in 0..=(raster.height - st.h) {
                for x0 in 0..=(raster.width - st.w) {
                    // fused window statistics, no copies
                    let mut wsum = 0.0f64;
                    let mut wsumsq = 0.0f64;
                    let mut dot = 0.0f64;
                    for ty in 0..st.h {
                        let row = ((y0 + ty) * raster.width + x0) * c;
                        let wrow = &raster.data[row..row + st.w * c];
                        let trow = &st.data[ty * st.w * c..(ty + 1) * st.w * c];
                        let mut s = 0.0f32;
                        let mut ss = 0.0f32;
                        let mut d = 0.0f32;
                        for (a, b) in wrow.iter().zip(trow) {
                            s += a;
                            ss += a * a;
                            d += a * b;
                        }
                        wsum += s as f64;
                        wsumsq += ss as f64;
                        dot += d as f64;
                    }
                    let wvar = wsumsq - wsum * wsum / n;
                    let cov = dot - wsum * st.sum / n;
                    let score = if wvar <= 1e-12 || tvar <= 1e-12 {
                        0.0
                    } else {
                        (cov / (wvar.sqrt() * tvar.sqrt())).clamp(-1.0, 1.0)
                    };
                    let ctx = x0 + (st.w - 1) / 2;
                    let cty = y0 + (st.h - 1) / 2;
                    let cell = &mut heatmap.pixel_mut(ctx, cty)[0];
                    if score as f32 > *cell {
                        *cell = score as f32;
                    }
                    let cand = Candidate {
                        score,
                        scale_idx: si,
                        tx: ctx,
                        ty: cty,
                        view: template.view,
                    };
                    if candidate_better(&cand, &best, &cfg.scales) {
                        best = cand;
                    }
                }
            }
        }
    }

    // sub-texel peak refinement: per-axis 3-point parabola on the heatmap
    let refine = |p: usize, axis_len: usize, get: &dyn Fn(usize) -> f32| -> f64 {
        if p == 0 || p + 1 >= axis_len {
            return p as f64;
        }
        let (l, m, r) = (get(p - 1) as f64, get(p) as f64, get(p + 1) as f64);
        let denom = l - 2.0 * m + r;
        if denom.abs() < 1e-12 {
            return p as f64;
        }
        p as f64 + (0.5 * (l - r) / denom).clamp(-0.499, 0.499)
    };
    let hx = refine(best.tx, heatmap.width, &|x| heatmap.pixel(x, best.ty)[0]);
    let hy = refine(best.ty, heatmap.height, &|y| heatmap.pixel(best.tx, y)[0]);

    let template_size = templates
        .iter()
        .find(|t| t.view == best.view)
        .map(|t| t.full_res_side)
        .unwrap_or(1.0);

    Ok(DetectionResult {
        center: [texel_to_pixel(hx, div), texel_to_pixel(hy, div)],
        scale: cfg.scales[best.scale_idx],
        score: best.score,
        view: best.view,
        template_size,
        heatmap,
        level_divisor: div,
    })
}

/// Bilinear crop of the square window of side `window` (full-res pixels)
/// centered at `center`, resized to `out_size`; out-of-bounds area is
/// zero-filled.
pub fn crop_resize(img: &Raster, center: [f64; 2], window: f64, out_size: usize) -> Raster {
    assert!(out_size >= 16, "crop output must be at least 16 px");
    let mut out = Raster::zeros(out_size, out_size, img.channels);
    let mut buf = vec![0.0f32; img.channels];
    let step = window / out_size as f64;
    for y in 0..out_size {
        for x in 0..out_size {
            let u = center[0] - window / 2.0 + (x as f64 + 0.5) * step;
            let v = center[1] - window / 2.0 + (y as f64 + 0.5) * step;
            if img.sample_bilinear(u, v, &mut buf) {
                out.pixel_mut(x, y).copy_from_slice(&buf);
            }
        }
    }
    out
}
