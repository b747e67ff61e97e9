//! Kinematic, quasi-static simulator of the tabletop block world.
//!
//! The simulator hides two kinds of parameters from the agent: cube masses
//! and whether a cube is fixed to the table. The only channels that leak
//! them are the wrist force reading and the outcome of a pick (a fixed cube
//! does not move). Everything is driven by a per-episode ChaCha RNG seeded
//! at [`reset`], so identical seeds and action sequences replay bit-exactly.

mod config;
mod world;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use config::{Bounds, MassRange, SimConfig};
pub use world::{force_reading, reset, step, CubeState, ForceContext, WorldState};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("configuration error: {0}")]
    Config(String),
}

/// Position (meters) plus a 4-component orientation quaternion.
///
/// Orientation components are kept in the order they appear on the wire.
/// For the end effector, `[1, 0, 0, 0]` is the finger-down grasp pose; for
/// cubes, `[0, 0, 0, 1]` is the unrotated pose.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose7 {
    pub position: [f64; 3],
    pub orientation: [f64; 4],
}

pub const EEF_DOWN: [f64; 4] = [1.0, 0.0, 0.0, 0.0];
pub const CUBE_IDENTITY: [f64; 4] = [0.0, 0.0, 0.0, 1.0];

impl Pose7 {
    pub const fn new(position: [f64; 3], orientation: [f64; 4]) -> Self {
        Pose7 { position, orientation }
    }

    pub fn from_slice(v: &[f64]) -> Option<Self> {
        if v.len() != 7 {
            return None;
        }
        Some(Pose7 {
            position: [v[0], v[1], v[2]],
            orientation: [v[3], v[4], v[5], v[6]],
        })
    }

    pub fn to_array(&self) -> [f64; 7] {
        let [x, y, z] = self.position;
        let [a, b, c, d] = self.orientation;
        [x, y, z, a, b, c, d]
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }

    pub fn quat_norm(&self) -> f64 {
        self.orientation.iter().map(|q| q * q).sum::<f64>().sqrt()
    }

    pub fn is_valid(&self) -> bool {
        self.is_finite() && (self.quat_norm() - 1.0).abs() <= 1e-6
    }

    /// Same pose with a unit quaternion. Zero quaternions are left alone.
    pub fn normalized(&self) -> Pose7 {
        let n = self.quat_norm();
        if n == 0.0 || !n.is_finite() {
            return *self;
        }
        let mut out = *self;
        for q in &mut out.orientation {
            *q /= n;
        }
        out
    }

    /// Rotation angle in degrees between two orientations.
    pub fn angle_to_deg(&self, other: &[f64; 4]) -> f64 {
        let a = self.normalized().orientation;
        let on = other.iter().map(|q| q * q).sum::<f64>().sqrt();
        let dot: f64 = a.iter().zip(other).map(|(x, y)| x * y / on).sum();
        2.0 * dot.abs().min(1.0).acos().to_degrees()
    }

    pub fn xy_distance(&self, other: &Pose7) -> f64 {
        let dx = self.position[0] - other.position[0];
        let dy = self.position[1] - other.position[1];
        (dx * dx + dy * dy).sqrt()
    }

    pub fn distance(&self, other: &Pose7) -> f64 {
        dist3(&self.position, &other.position)
    }
}

pub(crate) fn dist3(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    (0..3).map(|i| (a[i] - b[i]).powi(2)).sum::<f64>().sqrt()
}

/// Parameterized skill executed by the robot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Action {
    Pick { object: String },
    /// End-effector release pose. `object` is only set by the generator
    /// dialect, which names the cube being placed.
    Place {
        pose: Pose7,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        object: Option<String>,
    },
    Reach { pose: Pose7 },
    Reset,
    Wait,
}

impl Action {
    pub fn pick(object: impl Into<String>) -> Self {
        Action::Pick { object: object.into() }
    }

    pub fn place(pose: Pose7) -> Self {
        Action::Place { pose, object: None }
    }

    pub fn reach(pose: Pose7) -> Self {
        Action::Reach { pose }
    }

    pub fn verb(&self) -> &'static str {
        match self {
            Action::Pick { .. } => "PICK",
            Action::Place { .. } => "PLACE",
            Action::Reach { .. } => "REACH",
            Action::Reset => "RESET",
            Action::Wait => "WAIT",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExecStatus {
    Ok,
    Slip,
    PlaceContact,
    Collision,
    OutOfBounds,
}

impl ExecStatus {
    /// Statuses that end the episode when safety mode is on.
    pub fn is_safety_violation(self) -> bool {
        matches!(self, ExecStatus::Collision | ExecStatus::OutOfBounds)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecReport {
    pub status: ExecStatus,
    pub detail: String,
}

impl ExecReport {
    pub fn ok(detail: impl Into<String>) -> Self {
        ExecReport {
            status: ExecStatus::Ok,
            detail: detail.into(),
        }
    }

    pub fn new(status: ExecStatus, detail: impl Into<String>) -> Self {
        ExecReport {
            status,
            detail: detail.into(),
        }
    }
}

/// What the agent can see after an action. Never carries mass or fixed flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub cube_poses: BTreeMap<String, Pose7>,
    pub eef_pose: Pose7,
    pub force: [f64; 3],
    pub gripper: [f64; 2],
}

impl Observation {
    /// Length of the flat vector for `cubes` cubes: 26 for two cubes,
    /// plus 7 per additional cube.
    pub fn flat_len(cubes: usize) -> usize {
        7 * cubes + 12
    }

    /// Flat layout: per cube (position, quaternion), eef position, eef
    /// quaternion, force, left finger, right finger.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(Self::flat_len(self.cube_poses.len()));
        for pose in self.cube_poses.values() {
            out.extend_from_slice(&pose.to_array());
        }
        out.extend_from_slice(&self.eef_pose.to_array());
        out.extend_from_slice(&self.force);
        out.extend_from_slice(&self.gripper);
        out
    }

    /// Inverse of [`Observation::flatten`]; cube ids are assigned in order.
    pub fn unflatten(values: &[f64], ids: &[String]) -> Option<Observation> {
        if values.len() != Self::flat_len(ids.len()) {
            return None;
        }
        let mut cube_poses = BTreeMap::new();
        for (i, id) in ids.iter().enumerate() {
            cube_poses.insert(id.clone(), Pose7::from_slice(&values[7 * i..7 * i + 7])?);
        }
        let base = 7 * ids.len();
        Some(Observation {
            cube_poses,
            eef_pose: Pose7::from_slice(&values[base..base + 7])?,
            force: [values[base + 7], values[base + 8], values[base + 9]],
            gripper: [values[base + 10], values[base + 11]],
        })
    }

    /// Cube held between closed fingers, if any: the cube nearest the end
    /// effector within `tolerance`, provided the gripper is not fully open.
    pub fn held_cube(&self, finger_open: f64, tolerance: f64) -> Option<&str> {
        if self.gripper.iter().all(|g| *g >= finger_open - 1e-6) {
            return None;
        }
        self.cube_poses
            .iter()
            .map(|(id, p)| (id, p.distance(&self.eef_pose)))
            .filter(|(_, d)| *d <= tolerance)
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(id, _)| id.as_str())
    }
}
