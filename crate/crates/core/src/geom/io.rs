//! Scene directory format.
//!
//! ```text
//! <dir>/manifest.json      counts, sweep offsets, 4x4 row-major poses, dtype
//! <dir>/points_<τ>.bin     N_τ x 3 little-endian f32, τ in -3..=1
//! <dir>/gt_motion.bin      N_t x 3 little-endian f32
//! <dir>/gt_speed.bin       N_t little-endian f32
//! <dir>/class_id.bin       N_t u8
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{PointCloud, RigidTransform, Scene, Sweep};
use crate::blob;
use crate::error::{Error, Result};

pub const SCENE_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry {
    pub offset: i32,
    pub points: usize,
    pub file: String,
    /// Sensor-to-world, row-major homogeneous.
    pub pose: [f64; 16],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneManifest {
    pub schema_version: u32,
    pub dtype: String,
    pub endianness: String,
    pub sweep_interval: f32,
    pub current_offset: i32,
    pub num_points: usize,
    pub tracked_points: usize,
    pub sweeps: Vec<SweepEntry>,
    pub gt_motion: String,
    pub gt_speed: String,
    pub class_id: String,
}

pub fn write_scene(dir: &Path, scene: &Scene) -> Result<()> {
    scene.validate()?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut sweeps = Vec::with_capacity(scene.sweeps.len());
    for s in &scene.sweeps {
        let file = format!("points_{}.bin", s.cloud.timestep);
        blob::write_f32(&dir.join(&file), &blob::flatten3(&s.cloud.points))?;
        sweeps.push(SweepEntry {
            offset: s.cloud.timestep,
            points: s.cloud.len(),
            file,
            pose: s.pose.to_row_major(),
        });
    }
    blob::write_f32(
        &dir.join("gt_motion.bin"),
        &blob::flatten3(&scene.gt_motion),
    )?;
    blob::write_f32(&dir.join("gt_speed.bin"), &scene.gt_speed)?;
    blob::write_u8(&dir.join("class_id.bin"), &scene.class_id)?;

    let manifest = SceneManifest {
        schema_version: SCENE_SCHEMA_VERSION,
        dtype: "f32".into(),
        endianness: "little".into(),
        sweep_interval: scene.sweep_interval,
        current_offset: scene.current().cloud.timestep,
        num_points: scene.num_points(),
        tracked_points: scene.tracked_points,
        sweeps,
        gt_motion: "gt_motion.bin".into(),
        gt_speed: "gt_speed.bin".into(),
        class_id: "class_id.bin".into(),
    };
    let path = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest)?;
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

pub fn read_scene(dir: &Path) -> Result<Scene> {
    let path = dir.join("manifest.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: SceneManifest = serde_json::from_str(&text)?;
    let format_err = |detail: String| Error::Format {
        what: "scene manifest",
        detail,
    };
    if manifest.schema_version != SCENE_SCHEMA_VERSION {
        return Err(format_err(format!(
            "unsupported schema_version {}",
            manifest.schema_version
        )));
    }
    if manifest.dtype != "f32" || manifest.endianness != "little" {
        return Err(format_err(format!(
            "expected little-endian f32, got {} {}",
            manifest.endianness, manifest.dtype
        )));
    }
    let mut sweeps = Vec::with_capacity(manifest.sweeps.len());
    for entry in &manifest.sweeps {
        let points = blob::unflatten3(&blob::read_f32(&dir.join(&entry.file))?, "points blob")?;
        if points.len() != entry.points {
            return Err(format_err(format!(
                "{} holds {} points, manifest says {}",
                entry.file,
                points.len(),
                entry.points
            )));
        }
        sweeps.push(Sweep {
            cloud: PointCloud::new(points, entry.offset),
            pose: RigidTransform::from_row_major(&entry.pose),
        });
    }
    let scene = Scene {
        sweeps,
        gt_motion: blob::unflatten3(
            &blob::read_f32(&dir.join(&manifest.gt_motion))?,
            "gt_motion",
        )?,
        class_id: blob::read_u8(&dir.join(&manifest.class_id))?,
        gt_speed: blob::read_f32(&dir.join(&manifest.gt_speed))?,
        tracked_points: manifest.tracked_points,
        sweep_interval: manifest.sweep_interval,
    };
    scene.validate()?;
    if scene.current().cloud.timestep != manifest.current_offset {
        return Err(format_err(
            "current sweep must be the second to last".into(),
        ));
    }
    Ok(scene)
}
