//! Synthetic multi-sweep scenes with exact ground-truth motion.
//!
//! A scene is a flat ground plane with uniform height jitter plus box-shaped
//! objects. Movers translate at constant velocity; parked objects stay put.
//! Object surfaces are sampled once in the body frame and reused in every
//! sweep, so the first `tracked_points` rows of each sweep correspond
//! one-to-one across sweeps. Ground points are resampled every sweep.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{PointCloud, RigidTransform};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[repr(u8)]
pub enum ObjectClass {
    Background = 0,
    Car = 1,
    OtherVehicle = 2,
    Pedestrian = 3,
    WheeledVru = 4,
}

impl ObjectClass {
    pub const FOREGROUND: [ObjectClass; 4] = [
        ObjectClass::Car,
        ObjectClass::OtherVehicle,
        ObjectClass::Pedestrian,
        ObjectClass::WheeledVru,
    ];

    pub fn from_id(id: u8) -> Option<Self> {
        match id {
            0 => Some(Self::Background),
            1 => Some(Self::Car),
            2 => Some(Self::OtherVehicle),
            3 => Some(Self::Pedestrian),
            4 => Some(Self::WheeledVru),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Background => "background",
            Self::Car => "car",
            Self::OtherVehicle => "other_vehicle",
            Self::Pedestrian => "pedestrian",
            Self::WheeledVru => "wheeled_vru",
        }
    }

    /// Box length, width, height in meters.
    fn box_size(self) -> [f64; 3] {
        match self {
            Self::Background => [0.0; 3],
            Self::Car => [4.5, 1.9, 1.6],
            Self::OtherVehicle => [7.0, 2.5, 2.8],
            Self::Pedestrian => [0.7, 0.7, 1.7],
            Self::WheeledVru => [1.8, 0.7, 1.5],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneSpec {
    /// Half-width of the square area around the ego vehicle, meters.
    pub extent: f32,
    /// Ground points per square meter per sweep.
    pub ground_density: f32,
    pub ground_z: f32,
    /// Ground heights are uniform in `ground_z ± ground_jitter`.
    pub ground_jitter: f32,
    pub movers: usize,
    /// Static foreground objects.
    pub parked: usize,
    /// Mover speed range, m/s.
    pub speed_range: [f32; 2],
    /// Fixed mover heading in radians; random when `None`.
    pub heading: Option<f32>,
    /// Fixed mover class; random foreground class when `None`.
    pub mover_class: Option<ObjectClass>,
    /// Surface points per object.
    pub object_points: usize,
    /// Multiplier on the per-class box sizes.
    pub object_scale: f32,
    /// Ego velocity in the world frame, m/s.
    pub ego_velocity: [f32; 3],
    /// Ego yaw rate, rad/s.
    pub ego_yaw_rate: f32,
    /// Sweeps t-(n-2) ..= t+1.
    pub num_sweeps: usize,
    pub sweep_interval: f32,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self::desk()
    }
}

impl SceneSpec {
    /// Small scene sized for the 64x64x8 desk grid (12.8 m square, 1.6 m tall).
    pub fn desk() -> Self {
        Self {
            extent: 6.0,
            ground_density: 6.0,
            ground_z: -0.6,
            ground_jitter: 0.05,
            movers: 3,
            parked: 1,
            speed_range: [2.0, 5.0],
            heading: None,
            mover_class: None,
            object_points: 100,
            object_scale: 0.4,
            ego_velocity: [2.0, 0.0, 0.0],
            ego_yaw_rate: 0.0,
            num_sweeps: 5,
            sweep_interval: crate::SWEEP_INTERVAL,
        }
    }

    /// Street-scale scene for the 512x512x32 grid, roughly 100k points per sweep.
    pub fn full_scale() -> Self {
        Self {
            extent: 30.0,
            ground_density: 25.0,
            ground_z: -1.8,
            ground_jitter: 0.15,
            movers: 12,
            parked: 12,
            speed_range: [1.0, 12.0],
            heading: None,
            mover_class: None,
            object_points: 1500,
            object_scale: 1.0,
            ego_velocity: [8.0, 0.0, 0.0],
            ego_yaw_rate: 0.05,
            num_sweeps: 5,
            sweep_interval: crate::SWEEP_INTERVAL,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::SceneSpec(m.to_string()));
        if !(self.extent > 0.0) || !self.extent.is_finite() {
            return bad("extent must be positive");
        }
        if !(self.ground_density >= 0.0) || !self.ground_density.is_finite() {
            return bad("ground density must be non-negative");
        }
        if !(self.ground_jitter >= 0.0) {
            return bad("ground jitter must be non-negative");
        }
        if !(self.object_scale > 0.0) {
            return bad("object scale must be positive");
        }
        let [lo, hi] = self.speed_range;
        if !(lo >= 0.0 && hi >= lo && hi.is_finite()) {
            return bad("speed range must satisfy 0 <= min <= max");
        }
        if self.num_sweeps < 2 {
            return bad("need at least two sweeps (t and t+1)");
        }
        if !(self.sweep_interval > 0.0) {
            return bad("sweep interval must be positive");
        }
        if self.mover_class == Some(ObjectClass::Background) {
            return bad("movers must have a foreground class");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sweep {
    pub cloud: PointCloud,
    /// Sensor-to-world pose.
    pub pose: RigidTransform,
}

/// One training/evaluation sample: sweeps t-3 ..= t+1 plus ground truth for sweep t.
#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub sweeps: Vec<Sweep>,
    /// Motion flow of each sweep-t point, meters per sweep interval, t+1 frame.
    pub gt_motion: Vec<[f32; 3]>,
    pub class_id: Vec<u8>,
    /// m/s
    pub gt_speed: Vec<f32>,
    /// Leading rows of every sweep that are the same physical object points.
    pub tracked_points: usize,
    pub sweep_interval: f32,
}

impl Scene {
    /// Index of sweep t inside `sweeps`.
    pub fn current_index(&self) -> usize {
        self.sweeps.len() - 2
    }

    pub fn current(&self) -> &Sweep {
        &self.sweeps[self.current_index()]
    }

    pub fn next(&self) -> &Sweep {
        &self.sweeps[self.sweeps.len() - 1]
    }

    pub fn num_points(&self) -> usize {
        self.current().cloud.len()
    }

    /// The last `count` sweeps warped into the t+1 frame, oldest first.
    pub fn warped_sweeps(&self, count: usize) -> Vec<PointCloud> {
        let target = self.next().pose;
        let start = self.sweeps.len().saturating_sub(count);
        self.sweeps[start..]
            .iter()
            .map(|s| super::warp(&s.cloud, &super::relative_transform(&s.pose, &target)))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.sweeps.len() < 2 {
            return Err(Error::SceneSpec("scene needs at least two sweeps".into()));
        }
        let n = self.num_points();
        if self.gt_motion.len() != n || self.class_id.len() != n || self.gt_speed.len() != n {
            return Err(Error::shape(
                "Scene",
                format!(
                    "{n} points but gt_motion/class_id/gt_speed have {}/{}/{} rows",
                    self.gt_motion.len(),
                    self.class_id.len(),
                    self.gt_speed.len()
                ),
            ));
        }
        if let Some(c) = self.class_id.iter().find(|&&c| c >= 5) {
            return Err(Error::SceneSpec(format!("class id {c} out of range")));
        }
        if self.sweeps.iter().any(|s| !s.cloud.all_finite()) {
            return Err(Error::NonFinite("scene point coordinates".into()));
        }
        Ok(())
    }
}

struct Object {
    class: ObjectClass,
    /// Ground-contact center at time t, world frame.
    center: [f64; 2],
    yaw: f64,
    velocity: [f64; 2],
    /// Surface samples in the body frame.
    body_points: Vec<[f64; 3]>,
}

impl Object {
    fn world_point(&self, body: [f64; 3], elapsed: f64, ground_z: f64) -> [f64; 3] {
        let (s, c) = self.yaw.sin_cos();
        [
            self.center[0] + self.velocity[0] * elapsed + c * body[0] - s * body[1],
            self.center[1] + self.velocity[1] * elapsed + s * body[0] + c * body[1],
            ground_z + body[2],
        ]
    }
}

/// Uniform samples on the four sides and the top of an axis-aligned box
/// resting on z = 0 and centered on the origin in x/y.
fn sample_box_surface(rng: &mut ChaCha8Rng, size: [f64; 3], count: usize) -> Vec<[f64; 3]> {
    let [l, w, h] = size;
    let faces = [l * h, l * h, w * h, w * h, l * w];
    let total: f64 = faces.iter().sum();
    (0..count)
        .map(|_| {
            let mut pick = rng.random::<f64>() * total;
            let mut face = 0;
            while face < 4 && pick >= faces[face] {
                pick -= faces[face];
                face += 1;
            }
            let u = rng.random::<f64>() - 0.5;
            let v = rng.random::<f64>();
            match face {
                0 => [u * l, w / 2.0, v * h],
                1 => [u * l, -w / 2.0, v * h],
                2 => [l / 2.0, u * w, v * h],
                3 => [-l / 2.0, u * w, v * h],
                _ => [u * l, (v - 0.5) * w, h],
            }
        })
        .collect()
}

fn random_foreground(rng: &mut ChaCha8Rng) -> ObjectClass {
    ObjectClass::FOREGROUND[rng.random_range(0..4)]
}

pub fn generate_scene(seed: u64, spec: &SceneSpec) -> Result<Scene> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dt = spec.sweep_interval as f64;
    let extent = spec.extent as f64;
    let ground_z = spec.ground_z as f64;
    let scale = spec.object_scale as f64;
    let place = 0.8 * extent;

    let mut objects = Vec::with_capacity(spec.movers + spec.parked);
    for k in 0..spec.movers + spec.parked {
        let moving = k < spec.movers;
        let class = match (moving, spec.mover_class) {
            (true, Some(c)) => c,
            (true, None) => random_foreground(&mut rng),
            (false, _) => {
                if rng.random::<bool>() {
                    ObjectClass::Car
                } else {
                    ObjectClass::OtherVehicle
                }
            }
        };
        let center = [
            rng.random_range(-place..=place),
            rng.random_range(-place..=place),
        ];
        let heading = match spec.heading {
            Some(h) if moving => h as f64,
            _ => rng.random::<f64>() * TAU,
        };
        let [lo, hi] = spec.speed_range;
        let speed = if moving {
            lo as f64 + (hi - lo) as f64 * rng.random::<f64>()
        } else {
            0.0
        };
        let size = class.box_size().map(|s| s * scale);
        let body_points = sample_box_surface(&mut rng, size, spec.object_points);
        objects.push(Object {
            class,
            center,
            yaw: heading,
            velocity: [speed * heading.cos(), speed * heading.sin()],
            body_points,
        });
    }

    let n_sweeps = spec.num_sweeps;
    let current = n_sweeps - 2;
    let ground_count = (spec.ground_density as f64 * (2.0 * extent).powi(2)).round() as usize;
    let ego_v = spec.ego_velocity.map(|v| v as f64);

    let mut sweeps = Vec::with_capacity(n_sweeps);
    for s in 0..n_sweeps {
        let offset = s as i32 - current as i32;
        let elapsed = offset as f64 * dt;
        let ego_pos = ego_v.map(|v| v * elapsed);
        let pose =
            RigidTransform::from_yaw_translation(spec.ego_yaw_rate as f64 * elapsed, ego_pos);
        let to_ego = pose.inverse();

        let mut points = Vec::with_capacity(objects.len() * spec.object_points + ground_count);
        for obj in &objects {
            for &b in &obj.body_points {
                let w = obj.world_point(b, elapsed, ground_z);
                let p = to_ego.apply_f64(w);
                points.push([p[0] as f32, p[1] as f32, p[2] as f32]);
            }
        }
        for _ in 0..ground_count {
            let w = [
                ego_pos[0] + rng.random_range(-extent..extent),
                ego_pos[1] + rng.random_range(-extent..extent),
                ground_z + spec.ground_jitter as f64 * (2.0 * rng.random::<f64>() - 1.0),
            ];
            let p = to_ego.apply_f64(w);
            points.push([p[0] as f32, p[1] as f32, p[2] as f32]);
        }
        sweeps.push(Sweep {
            cloud: PointCloud::new(points, offset),
            pose,
        });
    }

    // Motion flow: world displacement over one interval, rotated into the t+1 frame.
    let r_next_t = sweeps[n_sweeps - 1].pose.rotation.transpose();
    let n_t = sweeps[current].cloud.len();
    let mut gt_motion = Vec::with_capacity(n_t);
    let mut class_id = Vec::with_capacity(n_t);
    let mut gt_speed = Vec::with_capacity(n_t);
    for obj in &objects {
        let d = nalgebra::Vector3::new(obj.velocity[0] * dt, obj.velocity[1] * dt, 0.0);
        let m = r_next_t * d;
        let speed = m.norm() / dt;
        for _ in 0..obj.body_points.len() {
            gt_motion.push([m.x as f32, m.y as f32, m.z as f32]);
            class_id.push(obj.class as u8);
            gt_speed.push(speed as f32);
        }
    }
    gt_motion.resize(n_t, [0.0; 3]);
    class_id.resize(n_t, ObjectClass::Background as u8);
    gt_speed.resize(n_t, 0.0);

    let scene = Scene {
        sweeps,
        gt_motion,
        class_id,
        gt_speed,
        tracked_points: objects.len() * spec.object_points,
        sweep_interval: spec.sweep_interval,
    };
    scene.validate()?;
    Ok(scene)
}
