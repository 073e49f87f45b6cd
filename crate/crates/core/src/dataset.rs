//! On-disk dataset layout:
//!
//! ```text
//! root/meta.json            object id, diameter, symmetry, intrinsics, ...
//! root/model.json           model points and colors (evaluation only)
//! root/support/NNN.ppm      posed reference images (binary PPM, 8-bit)
//! root/support/NNN.pose.json
//! root/target/NNN.ppm       query images; poses are ground truth and are
//! root/target/NNN.pose.json read only by the evaluator
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::camera::Intrinsics;
use crate::error::{Error, Result};
use crate::initializer::{SupportSet, SupportView};
use crate::math::Vec3;
use crate::pose::Pose;
use crate::raster::{read_ppm, write_ppm, Raster};
use crate::synth::{render_view, Scene};

/// Contents of `meta.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub object_id: String,
    pub diameter: f64,
    pub symmetric: bool,
    pub intrinsics: Intrinsics,
    pub center: Vec3,
    pub n_support: usize,
    pub n_target: usize,
    pub seed: u64,
}

/// Contents of `model.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelFile {
    pub points: Vec<Vec3>,
    pub colors: Vec<[f32; 3]>,
}

/// A loaded dataset handle; images are read lazily per id.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub root: PathBuf,
    pub meta: DatasetMeta,
    pub support_ids: Vec<String>,
    pub target_ids: Vec<String>,
}

fn list_ids(dir: &Path) -> Result<Vec<String>> {
    let mut ids = Vec::new();
    if !dir.is_dir() {
        return Err(Error::Dataset(format!("missing directory {}", dir.display())));
    }
    for entry in fs::read_dir(dir)? {
        let entry = entry?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if let Some(stem) = name.strip_suffix(".ppm") {
            ids.push(stem.to_string());
        }
    }
    ids.sort();
    Ok(ids)
}

impl Dataset {
    pub fn load(root: &Path) -> Result<Dataset> {
        let meta_path = root.join("meta.json");
        if !meta_path.is_file() {
            return Err(Error::Dataset(format!(
                "missing meta file {}",
                meta_path.display()
            )));
        }
        let meta: DatasetMeta = serde_json::from_slice(&fs::read(&meta_path)?)?;
        meta.intrinsics.validate()?;
        let support_ids = list_ids(&root.join("support"))?;
        let target_ids = list_ids(&root.join("target"))?;
        if support_ids.is_empty() {
            return Err(Error::Dataset(format!(
                "no support views under {}",
                root.join("support").display()
            )));
        }
        Ok(Dataset {
            root: root.to_path_buf(),
            meta,
            support_ids,
            target_ids,
        })
    }

    fn read_pose(path: &Path) -> Result<Pose> {
        if !path.is_file() {
            return Err(Error::Dataset(format!("missing pose file {}", path.display())));
        }
        Ok(serde_json::from_slice(&fs::read(path)?)?)
    }

    pub fn support_view(&self, id: &str) -> Result<SupportView> {
        let dir = self.root.join("support");
        Ok(SupportView {
            image: read_ppm(&dir.join(format!("{id}.ppm")))?,
            pose: Self::read_pose(&dir.join(format!("{id}.pose.json")))?,
            intrinsics: self.meta.intrinsics,
        })
    }

    /// Load every support view as a [`SupportSet`].
    pub fn load_supports(&self) -> Result<SupportSet> {
        let views = self
            .support_ids
            .iter()
            .map(|id| self.support_view(id))
            .collect::<Result<Vec<_>>>()?;
        let set = SupportSet {
            views,
            diameter: self.meta.diameter,
            symmetric: self.meta.symmetric,
            center: self.meta.center,
        };
        set.validate()?;
        Ok(set)
    }

    pub fn target_image(&self, id: &str) -> Result<Raster> {
        read_ppm(&self.root.join("target").join(format!("{id}.ppm")))
    }

    /// Ground-truth pose of a target; evaluator-only.
    pub fn target_gt(&self, id: &str) -> Result<Pose> {
        Self::read_pose(&self.root.join("target").join(format!("{id}.pose.json")))
    }

    pub fn model(&self) -> Result<ModelFile> {
        let path = self.root.join("model.json");
        if !path.is_file() {
            return Err(Error::Dataset(format!("missing model file {}", path.display())));
        }
        Ok(serde_json::from_slice(&fs::read(path)?)?)
    }
}

/// Render and write a full dataset directory for a generated scene.
pub fn write_dataset(root: &Path, meta: &DatasetMeta, scene: &Scene) -> Result<()> {
    fs::create_dir_all(root.join("support"))?;
    fs::create_dir_all(root.join("target"))?;
    fs::write(root.join("meta.json"), serde_json::to_vec_pretty(meta)?)?;
    let model = ModelFile {
        points: scene.object.points.clone(),
        colors: scene.object.colors.clone(),
    };
    fs::write(root.join("model.json"), serde_json::to_vec_pretty(&model)?)?;

    for (i, pose) in scene.support_poses.iter().enumerate() {
        let (img, _) = render_view(&scene.object, pose, &scene.intrinsics)?;
        let dir = root.join("support");
        write_ppm(&dir.join(format!("{i:03}.ppm")), &img)?;
        fs::write(
            dir.join(format!("{i:03}.pose.json")),
            serde_json::to_vec_pretty(pose)?,
        )?;
    }
    for (i, pose) in scene.target_poses.iter().enumerate() {
        let (img, _) = render_view(&scene.object, pose, &scene.intrinsics)?;
        let dir = root.join("target");
        write_ppm(&dir.join(format!("{i:03}.ppm")), &img)?;
        fs::write(
            dir.join(format!("{i:03}.pose.json")),
            serde_json::to_vec_pretty(pose)?,
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{make_dataset, SynthConfig};

    fn tiny_cfg() -> SynthConfig {
        SynthConfig {
            n_points: 1200,
            image_size: 64,
            focal: 70.0,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn dataset_roundtrip_and_regeneration_identical() {
        let dir = tempfile::tempdir().unwrap();
        let root_a = dir.path().join("a");
        let root_b = dir.path().join("b");
        make_dataset(&root_a, 77, 4, 2, &tiny_cfg()).unwrap();
        make_dataset(&root_b, 77, 4, 2, &tiny_cfg()).unwrap();

        let ds = Dataset::load(&root_a).unwrap();
        assert_eq!(ds.support_ids.len(), 4);
        assert_eq!(ds.target_ids.len(), 2);
        let supports = ds.load_supports().unwrap();
        assert_eq!(supports.views.len(), 4);
        assert!(supports.diameter > 0.0);
        let model = ds.model().unwrap();
        assert_eq!(model.points.len(), 1200);

        // byte-identical regeneration
        for rel in [
            "meta.json",
            "model.json",
            "support/000.ppm",
            "support/003.pose.json",
            "target/001.ppm",
            "target/000.pose.json",
        ] {
            let a = fs::read(root_a.join(rel)).unwrap();
            let b = fs::read(root_b.join(rel)).unwrap();
            assert_eq!(a, b, "file {rel} differs between regenerations");
        }
    }

    #[test]
    fn missing_meta_is_dataset_error_naming_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let err = Dataset::load(dir.path()).unwrap_err();
        match err {
            Error::Dataset(msg) => assert!(msg.contains("meta.json"), "{msg}"),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn gt_self_consistency_add_and_prj_zero() {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().join("ds");
        make_dataset(&root, 78, 4, 1, &tiny_cfg()).unwrap();
        let ds = Dataset::load(&root).unwrap();
        let gt = ds.target_gt("000").unwrap();
        let model = ds.model().unwrap();
        let add = crate::metrics::add_metric(&model.points, &gt, &gt).unwrap();
        let prj =
            crate::metrics::proj_error(&model.points, &ds.meta.intrinsics, &gt, &gt).unwrap();
        assert_eq!(add, 0.0);
        assert_eq!(prj, 0.0);
    }
}
