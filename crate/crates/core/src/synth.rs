//! Synthetic object generator and point-splat renderer.
//!
//! Produces blob-shaped point surfaces with high-frequency procedural
//! texture, renders them with exact ground-truth poses, and writes whole
//! datasets in the on-disk layout the pipeline consumes. Everything is a
//! deterministic function of the seed.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::camera::{project, Intrinsics, Projection};
use crate::dataset::{self, DatasetMeta};
use crate::error::{Error, Result};
use crate::math::{self, Vec3};
use crate::metrics::diameter;
use crate::pose::{rotation_angle_deg, Pose, Quaternion};
use crate::raster::Raster;

/// Texture families for generated objects.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TextureMode {
    /// Unstructured high-frequency texture.
    #[default]
    Textured,
    /// Texture and shape nearly invariant under a 180-degree rotation about
    /// the object z axis, with a small symmetry-breaking term. Makes view
    /// selection deliberately ambiguous.
    NearSymmetric,
}

/// Synthetic surface: points inside the unit cube with per-point colors.
#[derive(Debug, Clone)]
pub struct SynthObject {
    pub seed: u64,
    pub points: Vec<Vec3>,
    pub colors: Vec<[f32; 3]>,
    pub diameter: f64,
}

/// Deterministic blob-like point surface with seeded texture. The surface is
/// midrange-centered per axis and scaled to exactly fit the unit cube, so
/// every coordinate lies in `[-0.5, 0.5]` and the diameter never exceeds
/// sqrt(3).
pub fn make_object(seed: u64, n_points: usize, texture: TextureMode) -> Result<SynthObject> {
    if n_points < 500 {
        return Err(Error::InvalidCount(format!(
            "synthetic object needs >= 500 points, got {n_points}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // radial bump field defining the blob surface
    let n_bumps = 6;
    let bumps: Vec<(Vec3, f64, f64)> = (0..n_bumps)
        .map(|_| {
            let dir = random_unit(&mut rng);
            let width: f64 = rng.gen_range(0.25..0.7);
            let amp: f64 = rng.gen_range(0.1..0.45);
            (dir, width, amp)
        })
        .collect();
    let radius = |v: Vec3| -> f64 {
        let mut r = 0.55;
        for (dir, width, amp) in &bumps {
            let d = 1.0 - math::dot(v, *dir);
            r += amp * (-d / (width * width)).exp();
        }
        r
    };

    // texture field: two seeded plane-wave octaves per channel
    let waves: Vec<(Vec3, f64, Vec3, f64)> = (0..3)
        .map(|_| {
            (
                math::scale(random_unit(&mut rng), rng.gen_range(9.0..16.0)),
                rng.gen_range(0.0..std::f64::consts::TAU),
                math::scale(random_unit(&mut rng), rng.gen_range(18.0..30.0)),
                rng.gen_range(0.0..std::f64::consts::TAU),
            )
        })
        .collect();
    let raw_color = |p: Vec3| -> [f32; 3] {
        let mut c = [0.0f32; 3];
        for (ch, (k1, p1, k2, p2)) in waves.iter().enumerate() {
            let v = 0.6 * (math::dot(p, *k1) + p1).sin() + 0.4 * (math::dot(p, *k2) + p2).sin();
            c[ch] = (0.5 + 0.45 * v) as f32;
        }
        c
    };

    let flip_z = |p: Vec3| [-p[0], -p[1], p[2]];
    let symmetry_mix = 0.08;

    let mut points = Vec::with_capacity(n_points);
    for _ in 0..n_points {
        let v = random_unit(&mut rng);
        let r = match texture {
            TextureMode::Textured => radius(v),
            TextureMode::NearSymmetric => {
                let sym = 0.5 * (radius(v) + radius(flip_z(v)));
                (1.0 - symmetry_mix) * sym + symmetry_mix * radius(v)
            }
        };
        points.push(math::scale(v, r));
    }

    // midrange-center per axis, then scale so the widest axis spans exactly 1
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for p in &points {
        for a in 0..3 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    let widest = (0..3).map(|a| hi[a] - lo[a]).fold(0.0f64, f64::max);
    for p in points.iter_mut() {
        for a in 0..3 {
            p[a] = (p[a] - 0.5 * (lo[a] + hi[a])) / widest;
        }
    }

    let colors: Vec<[f32; 3]> = points
        .iter()
        .map(|p| match texture {
            TextureMode::Textured => raw_color(*p),
            TextureMode::NearSymmetric => {
                let a = raw_color(*p);
                let b = raw_color(flip_z(*p));
                let mut c = [0.0f32; 3];
                for ch in 0..3 {
                    let sym = 0.5 * (a[ch] + b[ch]);
                    c[ch] = (1.0 - symmetry_mix as f32) * sym + symmetry_mix as f32 * a[ch];
                }
                c
            }
        })
        .collect();

    let diameter = diameter(&points)?;
    Ok(SynthObject {
        seed,
        points,
        colors,
        diameter,
    })
}

fn random_unit(rng: &mut ChaCha8Rng) -> Vec3 {
    loop {
        let v = [
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        ];
        let n = math::norm(v);
        if n > 1e-3 && n <= 1.0 {
            return math::scale(v, 1.0 / n);
        }
    }
}

/// Background gray level of rendered views.
pub const BACKGROUND: f32 = 0.5;

/// Z-buffered point splatting with 2x2-pixel splats on a mid-gray
/// background. Returns the image and the ground-truth coverage mask.
pub fn render_view(obj: &SynthObject, pose: &Pose, k: &Intrinsics) -> Result<(Raster, Raster)> {
    let mut img = Raster::zeros(k.width, k.height, 3);
    img.data.fill(BACKGROUND);
    let mut mask = Raster::zeros(k.width, k.height, 1);
    let mut zbuf = vec![f32::INFINITY; k.width * k.height];
    let mut covered = false;
    for (p, color) in obj.points.iter().zip(&obj.colors) {
        let x_cam = pose.transform_point(*p);
        let Projection::Pixel(px) = project(k, x_cam) else {
            continue;
        };
        let z = x_cam[2] as f32;
        // 2-px splat: the 2x2 block whose centers lie within 1 px
        let x0 = px[0].floor() as isize;
        let y0 = px[1].floor() as isize;
        for dy in 0..2isize {
            for dx in 0..2isize {
                let (x, y) = (x0 + dx, y0 + dy);
                if x < 0 || y < 0 || x >= k.width as isize || y >= k.height as isize {
                    continue;
                }
                let idx = y as usize * k.width + x as usize;
                if z < zbuf[idx] {
                    zbuf[idx] = z;
                    img.data[idx * 3..idx * 3 + 3].copy_from_slice(color);
                    mask.data[idx] = 1.0;
                    covered = true;
                }
            }
        }
    }
    if !covered {
        return Err(Error::EmptyRender);
    }
    Ok((img, mask))
}

/// Dataset generation settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_points: usize,
    pub image_size: usize,
    pub focal: f64,
    /// Fraction of the image the object roughly fills.
    pub fill: f64,
    pub texture: TextureMode,
    /// Mark the object symmetric in the dataset metadata.
    pub symmetric: bool,
    /// Max in-plane roll of target views, degrees.
    pub target_roll_deg: f64,
    /// Target distance jitter as a fraction of the support distance.
    pub distance_jitter: f64,
    /// Max off-center shift of the target object, as a fraction of the
    /// image size.
    pub offcenter: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_points: 6000,
            image_size: 128,
            focal: 140.0,
            fill: 0.55,
            texture: TextureMode::Textured,
            symmetric: false,
            target_roll_deg: 10.0,
            distance_jitter: 0.15,
            offcenter: 0.10,
        }
    }
}

impl SynthConfig {
    pub fn intrinsics(&self) -> Intrinsics {
        Intrinsics {
            fx: self.focal,
            fy: self.focal,
            cx: (self.image_size as f64 - 1.0) / 2.0,
            cy: (self.image_size as f64 - 1.0) / 2.0,
            width: self.image_size,
            height: self.image_size,
        }
    }

    /// Camera distance placing the object at the configured fill fraction.
    pub fn view_distance(&self, object_diameter: f64) -> f64 {
        self.focal * object_diameter / (self.fill * self.image_size as f64)
    }
}

/// Object-to-camera pose for a camera at `distance * dir` looking at the
/// origin, with `roll` about the optical axis. Camera y points toward
/// image-down.
pub fn look_at_pose(dir: Vec3, distance: f64, roll_deg: f64) -> Pose {
    let forward = math::scale(math::normalize(dir), -1.0); // camera z
    let up_hint = if forward[2].abs() > 0.99 {
        [1.0, 0.0, 0.0]
    } else {
        [0.0, 0.0, 1.0]
    };
    let x_c = math::normalize(math::cross(up_hint, forward));
    let y_c = math::cross(forward, x_c);
    let r = [x_c, y_c, forward]; // rows: camera axes in object frame
    let q = Quaternion::from_matrix(&r);
    let q = Quaternion::from_axis_index(2, roll_deg.to_radians()).mul(&q);
    let eye = math::scale(math::normalize(dir), distance);
    let t = math::scale(q.rotate(eye), -1.0);
    Pose::new(q, t, 1.0)
}

/// Fibonacci lattice on the unit sphere.
pub fn fibonacci_directions(n: usize) -> Vec<Vec3> {
    let golden = (1.0 + 5.0f64.sqrt()) / 2.0;
    (0..n)
        .map(|i| {
            let z = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
            let r = (1.0 - z * z).sqrt();
            let phi = std::f64::consts::TAU * (i as f64 / golden).fract();
            [r * phi.cos(), r * phi.sin(), z]
        })
        .collect()
}

/// A generated scene held in memory.
pub struct Scene {
    pub object: SynthObject,
    pub intrinsics: Intrinsics,
    pub support_poses: Vec<Pose>,
    pub target_poses: Vec<Pose>,
}

/// Generate support poses on the view sphere and target poses inside the
/// support coverage. With 16 or more supports, every target is guaranteed
/// (by construction plus resampling) to lie within 40 degrees geodesic
/// rotation of some support view.
pub fn generate_scene(
    seed: u64,
    n_support: usize,
    n_target: usize,
    cfg: &SynthConfig,
) -> Result<Scene> {
    if n_support < 3 {
        return Err(Error::InvalidCount(format!(
            "need at least 3 support views, got {n_support}"
        )));
    }
    let object = make_object(seed, cfg.n_points, cfg.texture)?;
    let k = cfg.intrinsics();
    let dist = cfg.view_distance(object.diameter);

    let support_poses: Vec<Pose> = fibonacci_directions(n_support)
        .into_iter()
        .map(|d| look_at_pose(d, dist, 0.0))
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7a17_9e75);
    let mut target_poses = Vec::with_capacity(n_target);
    let coverage_deg = 40.0;
    for _ in 0..n_target {
        let mut pose = None;
        for _attempt in 0..200 {
            let dir = random_unit(&mut rng);
            let roll = rng.gen_range(-cfg.target_roll_deg..cfg.target_roll_deg);
            let d = dist * (1.0 + rng.gen_range(-cfg.distance_jitter..cfg.distance_jitter));
            let candidate = look_at_pose(dir, d, roll);
            let nearest = support_poses
                .iter()
                .map(|sp| rotation_angle_deg(&candidate.q, &sp.q))
                .fold(f64::INFINITY, f64::min);
            if n_support < 16 || nearest <= coverage_deg {
                pose = Some(candidate);
                break;
            }
        }
        let mut pose = pose.unwrap_or_else(|| {
            // fall back to a perturbed copy of a random support view
            let base = support_poses[rng.gen_range(0..support_poses.len())];
            let axis = math::scale(random_unit(&mut rng), rng.gen_range(0.0..0.3));
            Pose::new(
                Quaternion::from_scaled_axis(axis).mul(&base.q),
                base.t,
                base.s,
            )
        });
        // shift the object off-center by a bounded pixel offset
        let px_shift = [
            rng.gen_range(-cfg.offcenter..cfg.offcenter) * k.width as f64,
            rng.gen_range(-cfg.offcenter..cfg.offcenter) * k.height as f64,
        ];
        let z = pose.transform_point([0.0; 3])[2];
        let ray = k.pixel_ray(k.cx + px_shift[0], k.cy + px_shift[1]);
        pose.t = math::scale(ray, z);
        target_poses.push(pose);
    }

    // coverage assertion: required property of generated datasets
    if n_support >= 16 {
        for (i, tp) in target_poses.iter().enumerate() {
            let nearest = support_poses
                .iter()
                .map(|sp| rotation_angle_deg(&tp.q, &sp.q))
                .fold(f64::INFINITY, f64::min);
            if nearest > coverage_deg {
                return Err(Error::Config(format!(
                    "target {i} is {nearest:.1} deg from the nearest support (limit {coverage_deg})"
                )));
            }
        }
    }

    Ok(Scene {
        object,
        intrinsics: k,
        support_poses,
        target_poses,
    })
}

/// Generate a dataset directory: meta.json, model.json, posed support and
/// target PPM renders. Regenerating with the same inputs is byte-identical.
pub fn make_dataset(
    root: &Path,
    seed: u64,
    n_support: usize,
    n_target: usize,
    cfg: &SynthConfig,
) -> Result<()> {
    let scene = generate_scene(seed, n_support, n_target, cfg)?;
    let meta = DatasetMeta {
        object_id: format!("synth-{seed:08x}"),
        diameter: scene.object.diameter,
        symmetric: cfg.symmetric,
        intrinsics: scene.intrinsics,
        center: [0.0; 3],
        n_support,
        n_target,
        seed,
    };
    dataset::write_dataset(root, &meta, &scene)
}
