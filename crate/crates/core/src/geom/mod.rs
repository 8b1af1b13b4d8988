//! Point clouds, rigid transforms and ego-motion compensation.
//!
//! Frame convention: every sweep is warped into the frame of the newest sweep
//! (t+1). The ego flow of a point `p` observed at `t` is `T(p) - p` with
//! `T = inverse(pose_{t+1}) * pose_t`, so that `p + ego + motion` is the
//! point's position at t+1 expressed in the t+1 frame. Motion flow, the
//! network's target, is the world displacement rotated into the t+1 frame.

mod io;
mod synth;

use nalgebra::{Matrix3, Matrix4, Rotation3, Vector3};
use serde::{Deserialize, Serialize};

pub use io::{read_scene, write_scene, SceneManifest, SweepEntry};
pub use synth::{generate_scene, ObjectClass, Scene, SceneSpec, Sweep};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn from_translation(t: [f64; 3]) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::from(t),
        }
    }

    /// Rotation about +z by `yaw` radians followed by a translation.
    pub fn from_yaw_translation(yaw: f64, t: [f64; 3]) -> Self {
        Self {
            rotation: *Rotation3::from_axis_angle(&Vector3::z_axis(), yaw).matrix(),
            translation: Vector3::from(t),
        }
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        RigidTransform {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    pub fn apply(&self, p: [f32; 3]) -> [f32; 3] {
        let q = self.apply_f64([p[0] as f64, p[1] as f64, p[2] as f64]);
        [q[0] as f32, q[1] as f32, q[2] as f32]
    }

    pub fn apply_f64(&self, p: [f64; 3]) -> [f64; 3] {
        let q = self.rotation * Vector3::from(p) + self.translation;
        [q.x, q.y, q.z]
    }

    /// Row-major homogeneous 4x4 matrix.
    pub fn to_row_major(&self) -> [f64; 16] {
        let mut m = [0.0; 16];
        for r in 0..3 {
            for c in 0..3 {
                m[r * 4 + c] = self.rotation[(r, c)];
            }
            m[r * 4 + 3] = self.translation[r];
        }
        m[15] = 1.0;
        m
    }

    pub fn from_row_major(m: &[f64; 16]) -> Self {
        let h = Matrix4::from_row_slice(m);
        Self {
            rotation: h.fixed_view::<3, 3>(0, 0).into_owned(),
            translation: h.fixed_view::<3, 1>(0, 3).into_owned(),
        }
    }

    /// Largest deviation of `R^T R` from identity plus `|det R - 1|`.
    pub fn orthonormality_error(&self) -> f64 {
        let e = (self.rotation.transpose() * self.rotation - Matrix3::identity())
            .abs()
            .max();
        e + (self.rotation.determinant() - 1.0).abs()
    }
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PointCloud {
    pub points: Vec<[f32; 3]>,
    /// Sweep offset relative to the current sweep t (t-3 is -3, t+1 is 1).
    pub timestep: i32,
}

impl PointCloud {
    pub fn new(points: Vec<[f32; 3]>, timestep: i32) -> Self {
        Self { points, timestep }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn all_finite(&self) -> bool {
        self.points.iter().flatten().all(|v| v.is_finite())
    }
}

/// Per-point ego flow of the sweep-t cloud, meters, in the t+1 frame convention.
#[derive(Clone, Debug, PartialEq)]
pub struct EgoFlow(pub Vec<[f32; 3]>);

pub fn warp(cloud: &PointCloud, transform: &RigidTransform) -> PointCloud {
    PointCloud {
        points: cloud.points.iter().map(|&p| transform.apply(p)).collect(),
        timestep: cloud.timestep,
    }
}

/// Transform taking points of a sweep with pose `from` into the frame of a sweep with pose `to`.
pub fn relative_transform(from: &RigidTransform, to: &RigidTransform) -> RigidTransform {
    to.inverse().compose(from)
}

pub fn ego_flow(
    pose_t: &RigidTransform,
    pose_t1: &RigidTransform,
    cloud_t: &PointCloud,
) -> EgoFlow {
    let rel = relative_transform(pose_t, pose_t1);
    EgoFlow(
        cloud_t
            .points
            .iter()
            .map(|&p| {
                let q = rel.apply_f64([p[0] as f64, p[1] as f64, p[2] as f64]);
                [
                    (q[0] - p[0] as f64) as f32,
                    (q[1] - p[1] as f64) as f32,
                    (q[2] - p[2] as f64) as f32,
                ]
            })
            .collect(),
    )
}
