use std::collections::BTreeMap;
use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;
use serde::{Deserialize, Serialize};

use super::{
    Action, ExecReport, ExecStatus, Observation, Pose7, SimConfig, SimError, CUBE_IDENTITY, EEF_DOWN,
};
use crate::task::{cube_ids, Tag, TaskSpec};

const EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CubeState {
    pub id: String,
    pub pose: Pose7,
    /// Hidden.
    pub mass: f64,
    /// Hidden.
    pub fixed: bool,
}

/// Full hidden state of one episode's scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    pub cubes: Vec<CubeState>,
    pub eef_pose: Pose7,
    pub gripper: [f64; 2],
    pub attached: Option<String>,
    pub grasp_offset: [f64; 3],
    /// Latest wrist force reading.
    pub force: [f64; 3],
    pub seed: u64,
    pub config: SimConfig,
    rng: ChaCha8Rng,
}

/// Whether the force reading follows a slip on a fixed cube.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ForceContext {
    Nominal,
    Slip,
}

/// Build the initial scene for `task` and return it with its first observation.
pub fn reset(task: &TaskSpec, seed: u64, config: &SimConfig) -> Result<(WorldState, Observation), SimError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ids = cube_ids(task.cube_count());
    let positions = sample_positions(&mut rng, config, ids.len())?;

    let mut cubes: Vec<CubeState> = ids
        .iter()
        .zip(positions)
        .map(|(id, [x, y])| {
            let yaw: f64 = rng.random_range(-PI..PI);
            CubeState {
                id: id.clone(),
                pose: Pose7::new(
                    [x, y, config.rest_z()],
                    [0.0, 0.0, (yaw / 2.0).sin(), (yaw / 2.0).cos()],
                ),
                mass: config.default_mass,
                fixed: false,
            }
        })
        .collect();

    if task.has(Tag::Mass) {
        // order[k] is the cube with mass rank k, lightest first
        let mut order: Vec<usize> = (0..cubes.len()).collect();
        for i in (1..order.len()).rev() {
            let j = rng.random_range(0..=i);
            order.swap(i, j);
        }
        let ranges = if cubes.len() == 2 {
            vec![config.light_mass_range, config.heavy_mass_range]
        } else {
            vec![config.light_mass_range, config.medium_mass_range, config.heavy_mass_range]
        };
        for (rank, &cube) in order.iter().enumerate() {
            let r = ranges[rank.min(ranges.len() - 1)];
            cubes[cube].mass = rng.random_range(r.min..=r.max);
        }
    }

    if task.has(Tag::Fix) {
        let single_movable = task.goal_schema.is_some_and(|g| g.requires_single_movable());
        if single_movable {
            let fixed = rng.random_range(0..cubes.len());
            for (i, c) in cubes.iter_mut().enumerate() {
                c.fixed = i == fixed;
            }
        } else {
            loop {
                for c in cubes.iter_mut() {
                    c.fixed = rng.random_bool(0.5);
                }
                if cubes.iter().any(|c| !c.fixed) {
                    break;
                }
            }
        }
    }

    let mut state = WorldState {
        cubes,
        eef_pose: config.reset_pose,
        gripper: [config.finger_open; 2],
        attached: None,
        grasp_offset: [0.0; 3],
        force: [0.0; 3],
        seed,
        config: config.clone(),
        rng,
    };
    state.force = force_reading(&mut state, ForceContext::Nominal);
    let obs = state.observe();
    Ok((state, obs))
}

fn sample_positions(rng: &mut ChaCha8Rng, config: &SimConfig, n: usize) -> Result<Vec<[f64; 2]>, SimError> {
    let ex = config.table_size[0] / 2.0 - config.spawn_margin;
    let ey = config.table_size[1] / 2.0 - config.spawn_margin;
    let [cx, cy] = config.table_center;
    for _ in 0..10_000 {
        let pts: Vec<[f64; 2]> = (0..n)
            .map(|_| [cx + rng.random_range(-ex..=ex), cy + rng.random_range(-ey..=ey)])
            .collect();
        let separated = pts.iter().enumerate().all(|(i, a)| {
            pts[i + 1..]
                .iter()
                .all(|b| ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt() >= config.min_initial_separation)
        });
        if separated {
            return Ok(pts);
        }
    }
    Err(SimError::Config(format!(
        "cannot place {n} cubes {} m apart inside the spawn area",
        config.min_initial_separation
    )))
}

/// Functional form of [`WorldState::apply`].
pub fn step(state: &WorldState, action: &Action) -> (WorldState, Observation, ExecReport) {
    let mut next = state.clone();
    let (obs, report) = next.apply(action);
    (next, obs, report)
}

/// Draw a wrist force reading for the current state.
pub fn force_reading(state: &mut WorldState, context: ForceContext) -> [f64; 3] {
    let cfg = &state.config;
    let sat = cfg.force_saturation;
    let mut noise = [0.0; 3];
    if !cfg.noiseless {
        let normal = Normal::new(0.0, cfg.force_noise_sigma).expect("validated sigma");
        for n in &mut noise {
            *n = state.rng.sample(normal);
        }
    }
    let load = match (&state.attached, context) {
        (_, ForceContext::Slip) => None,
        (Some(id), _) => state.cubes.iter().find(|c| &c.id == id).map(|c| c.mass),
        (None, _) => None,
    };
    let mut f = noise;
    if let Some(m) = load {
        f[2] += -m * cfg.gravity;
    }
    for v in &mut f {
        *v = v.clamp(-sat, sat);
    }
    if context == ForceContext::Slip {
        f[2] = -sat;
    }
    f
}

impl WorldState {
    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn cube(&self, id: &str) -> Option<&CubeState> {
        self.cubes.iter().find(|c| c.id == id)
    }

    fn index_of(&self, id: &str) -> Option<usize> {
        self.cubes.iter().position(|c| c.id == id)
    }

    pub fn masses(&self) -> BTreeMap<String, f64> {
        self.cubes.iter().map(|c| (c.id.clone(), c.mass)).collect()
    }

    pub fn fixed_flags(&self) -> BTreeMap<String, bool> {
        self.cubes.iter().map(|c| (c.id.clone(), c.fixed)).collect()
    }

    /// Apply the grasp-position offset used by the execution-error ablation.
    pub fn set_grasp_offset(&mut self, offset: [f64; 3]) {
        self.grasp_offset = offset;
        if let Some(i) = self.attached.as_deref().and_then(|id| self.index_of(id)) {
            self.cubes[i].pose.position = self.held_center(&self.eef_pose.position);
        }
    }

    pub fn observe(&self) -> Observation {
        Observation {
            cube_poses: self.cubes.iter().map(|c| (c.id.clone(), c.pose)).collect(),
            eef_pose: self.eef_pose,
            force: self.force,
            gripper: self.gripper,
        }
    }

    /// Execute one skill, update the force reading, and observe.
    pub fn apply(&mut self, action: &Action) -> (Observation, ExecReport) {
        let report = match action {
            Action::Pick { object } => self.pick(object),
            Action::Place { pose, .. } => self.place(pose),
            Action::Reach { pose } => self.reach(pose),
            Action::Reset => self.reset_arm(),
            Action::Wait => ExecReport::ok("waited"),
        };
        let context = if report.status == ExecStatus::Slip {
            ForceContext::Slip
        } else {
            ForceContext::Nominal
        };
        self.force = force_reading(self, context);
        (self.observe(), report)
    }

    fn held_center(&self, eef: &[f64; 3]) -> [f64; 3] {
        [
            eef[0] + self.grasp_offset[0],
            eef[1] + self.grasp_offset[1],
            eef[2] + self.grasp_offset[2],
        ]
    }

    fn pick(&mut self, object: &str) -> ExecReport {
        if let Some(held) = &self.attached {
            return ExecReport::ok(format!("already holding {held}"));
        }
        let Some(idx) = self.index_of(object) else {
            return ExecReport::ok(format!("unknown object {object}"));
        };
        let cfg = &self.config;
        let size = cfg.cube_size;
        let target = self.cubes[idx].pose.position;
        if let Some(blocker) = self.cubes.iter().enumerate().find(|(j, c)| {
            *j != idx
                && (c.pose.position[0] - target[0]).abs() < size
                && (c.pose.position[1] - target[1]).abs() < size
                && c.pose.position[2] > target[2] + EPS
        }) {
            return ExecReport::new(
                ExecStatus::Collision,
                format!("{object} is blocked by {} resting on it", blocker.1.id),
            );
        }
        let grasp = [
            target[0] - self.grasp_offset[0],
            target[1] - self.grasp_offset[1],
            target[2] - self.grasp_offset[2],
        ];
        let lift = [grasp[0], grasp[1], grasp[2] + cfg.lift_z_offset];
        if !cfg.workspace_bounds.contains(&grasp) || !cfg.workspace_bounds.contains(&lift) {
            return ExecReport::new(ExecStatus::OutOfBounds, format!("{object} is outside the workspace"));
        }
        let orientation = grasp_orientation(&self.cubes[idx].pose.orientation);
        if self.cubes[idx].fixed {
            self.eef_pose = Pose7::new([target[0], target[1], target[2] + cfg.lift_z_offset], orientation);
            self.gripper = [cfg.finger_open; 2];
            return ExecReport::new(ExecStatus::Slip, format!("{object} did not move; grasp slipped"));
        }
        self.eef_pose = Pose7::new(lift, orientation);
        self.gripper = [cfg.finger_on_cube; 2];
        self.attached = Some(object.to_string());
        self.cubes[idx].pose.position = self.held_center(&lift);
        ExecReport::ok(format!("picked {object}"))
    }

    fn checked_target(&self, pose: &Pose7, verb: &str) -> Result<Pose7, ExecReport> {
        if !pose.is_finite() || pose.quat_norm() == 0.0 {
            return Err(ExecReport::new(ExecStatus::OutOfBounds, format!("{verb} pose is not finite")));
        }
        let pose = pose.normalized();
        if !self.config.workspace_bounds.contains(&pose.position) {
            return Err(ExecReport::new(
                ExecStatus::OutOfBounds,
                format!("{verb} target {:?} is outside the workspace", pose.position),
            ));
        }
        let angle = pose.angle_to_deg(&EEF_DOWN);
        if angle > self.config.orientation_warn_deg {
            log::warn!("{verb} orientation is {angle:.1} deg from the downward grasp pose");
        }
        Ok(pose)
    }

    fn aabb_overlap(a: &[f64; 3], half_a: f64, b: &[f64; 3], half_b: f64) -> bool {
        (0..3).all(|i| (a[i] - b[i]).abs() < half_a + half_b)
    }

    fn place(&mut self, pose: &Pose7) -> ExecReport {
        let Some(held) = self.attached.clone() else {
            return ExecReport::ok("nothing held");
        };
        let pose = match self.checked_target(pose, "PLACE") {
            Ok(p) => p,
            Err(r) => return r,
        };
        let idx = self.index_of(&held).expect("attached cube exists");
        let center = self.held_center(&pose.position);
        let half = self.config.half_size();
        let inflated = half + self.config.collision_clearance;
        for (j, other) in self.cubes.iter().enumerate() {
            if j == idx {
                continue;
            }
            let p = other.pose.position;
            let in_column = (p[0] - center[0]).abs() < half && (p[1] - center[1]).abs() < half && p[2] < center[2];
            if in_column {
                continue;
            }
            if Self::aabb_overlap(&center, half, &p, inflated) {
                return ExecReport::new(
                    ExecStatus::Collision,
                    format!("placing {held} at {:?} would hit {}", pose.position, other.id),
                );
            }
        }
        self.eef_pose = pose;
        self.cubes[idx].pose.position = center;
        self.release()
    }

    fn reach(&mut self, pose: &Pose7) -> ExecReport {
        let pose = match self.checked_target(pose, "REACH") {
            Ok(p) => p,
            Err(r) => return r,
        };
        let held = self.attached.as_deref().and_then(|id| self.index_of(id));
        let center = self.held_center(&pose.position);
        let half = self.config.half_size();
        let inflated = half + self.config.collision_clearance;
        for (j, other) in self.cubes.iter().enumerate() {
            if Some(j) == held {
                continue;
            }
            let p = other.pose.position;
            let eef_hit = Self::aabb_overlap(&pose.position, 0.0, &p, inflated);
            let cube_hit = held.is_some() && Self::aabb_overlap(&center, half, &p, inflated);
            if eef_hit || cube_hit {
                return ExecReport::new(
                    ExecStatus::Collision,
                    format!("reaching {:?} would hit {}", pose.position, other.id),
                );
            }
        }
        self.eef_pose = pose;
        if let Some(i) = held {
            self.cubes[i].pose.position = center;
        }
        ExecReport::ok("reached")
    }

    fn reset_arm(&mut self) -> ExecReport {
        let report = if self.attached.is_some() {
            self.release()
        } else {
            ExecReport::ok("reset")
        };
        self.eef_pose = self.config.reset_pose;
        self.gripper = [self.config.finger_open; 2];
        report
    }

    /// Open the gripper and let the held cube fall onto its support.
    fn release(&mut self) -> ExecReport {
        let held = self.attached.take().expect("release requires a held cube");
        self.gripper = [self.config.finger_open; 2];
        let idx = self.index_of(&held).expect("attached cube exists");
        let center = self.cubes[idx].pose.position;
        let half = self.config.half_size();
        let (support_top, support) = self.support_under(idx, center[0], center[1], center[2]);
        if center[2] - half < support_top - EPS {
            let landed = self.deflect(idx, support);
            let on = support.map_or("the table".to_string(), |s| self.cubes[s].id.clone());
            return ExecReport::new(
                ExecStatus::PlaceContact,
                format!("{held} was pressed into {on} on release and landed at {}", fmt_xyz(&landed)),
            );
        }
        if let Some(edge) = self.partial_overlap(idx, center[0], center[1], center[2], support_top) {
            let landed = self.deflect(idx, Some(edge));
            return ExecReport::new(
                ExecStatus::PlaceContact,
                format!(
                    "{held} landed on the edge of {} and slid to {}",
                    self.cubes[edge].id,
                    fmt_xyz(&landed)
                ),
            );
        }
        self.cubes[idx].pose.position[2] = support_top + half;
        ExecReport::ok(format!("placed {held}"))
    }

    /// Highest top surface fully under (x, y) below height `below`, and the
    /// supporting cube if it is not the table.
    fn support_under(&self, idx: usize, x: f64, y: f64, below: f64) -> (f64, Option<usize>) {
        let half = self.config.half_size();
        let mut top = self.config.table_surface_z;
        let mut support = None;
        for (j, c) in self.cubes.iter().enumerate() {
            if j == idx {
                continue;
            }
            let p = c.pose.position;
            if (p[0] - x).abs() < half && (p[1] - y).abs() < half && p[2] < below && p[2] + half > top {
                top = p[2] + half;
                support = Some(j);
            }
        }
        (top, support)
    }

    /// A cube under the footprint that is not a full support and sticks out
    /// above `support_top`.
    fn partial_overlap(&self, idx: usize, x: f64, y: f64, below: f64, support_top: f64) -> Option<usize> {
        let half = self.config.half_size();
        let size = self.config.cube_size;
        self.cubes
            .iter()
            .enumerate()
            .filter(|(j, c)| {
                let p = c.pose.position;
                *j != idx
                    && p[2] < below
                    && (p[0] - x).abs() < size
                    && (p[1] - y).abs() < size
                    && !((p[0] - x).abs() < half && (p[1] - y).abs() < half)
                    && p[2] + half > support_top + EPS
            })
            .max_by(|a, b| a.1.pose.position[2].total_cmp(&b.1.pose.position[2]))
            .map(|(j, _)| j)
    }

    /// Knock the released cube off `from` (or jitter it on the table) and
    /// settle it. Returns the landing position.
    fn deflect(&mut self, idx: usize, from: Option<usize>) -> [f64; 3] {
        let cfg = self.config.clone();
        let size = cfg.cube_size;
        let half = cfg.half_size();
        let c = self.cubes[idx].pose.position;
        let jitter: f64 = self.rng.random_range(0.0..=cfg.contact_jitter);
        let (mut x, mut y, dir) = match from {
            Some(s) => {
                let sp = self.cubes[s].pose.position;
                let (dx, dy) = (c[0] - sp[0], c[1] - sp[1]);
                let n = (dx * dx + dy * dy).sqrt();
                let dir = if n < EPS {
                    let a: f64 = self.rng.random_range(-PI..PI);
                    [a.cos(), a.sin()]
                } else {
                    [dx / n, dy / n]
                };
                let d = size + jitter;
                (sp[0] + dir[0] * d, sp[1] + dir[1] * d, dir)
            }
            None => {
                let a: f64 = self.rng.random_range(-PI..PI);
                let dir = [a.cos(), a.sin()];
                (c[0] + dir[0] * jitter, c[1] + dir[1] * jitter, dir)
            }
        };
        let hx = cfg.table_size[0] / 2.0 - half;
        let hy = cfg.table_size[1] / 2.0 - half;
        for _ in 0..8 {
            x = x.clamp(cfg.table_center[0] - hx, cfg.table_center[0] + hx);
            y = y.clamp(cfg.table_center[1] - hy, cfg.table_center[1] + hy);
            let (top, _) = self.support_under(idx, x, y, f64::INFINITY);
            if self.partial_overlap(idx, x, y, f64::INFINITY, top - EPS).is_none() {
                break;
            }
            x += dir[0] * size;
            y += dir[1] * size;
        }
        let (top, _) = self.support_under(idx, x, y, f64::INFINITY);
        let landed = [x, y, top + half];
        self.cubes[idx].pose.position = landed;
        landed
    }

    /// Violations of the scene invariants; empty when the state is sound.
    pub fn invariant_violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        let cfg = &self.config;
        let half = cfg.half_size();
        if let Some(id) = &self.attached {
            match self.cube(id) {
                Some(c) => {
                    let want = self.held_center(&self.eef_pose.position);
                    if super::dist3(&c.pose.position, &want) >= 1e-9 {
                        out.push(format!("{id} is not coupled to the end effector"));
                    }
                }
                None => out.push(format!("attached cube {id} does not exist")),
            }
        }
        for (i, c) in self.cubes.iter().enumerate() {
            if !c.pose.is_valid() {
                out.push(format!("{} pose is invalid", c.id));
            }
            if c.mass <= 0.0 {
                out.push(format!("{} has non-positive mass", c.id));
            }
            if self.attached.as_deref() == Some(c.id.as_str()) {
                continue;
            }
            let p = c.pose.position;
            let (top, _) = self.support_under(i, p[0], p[1], p[2]);
            if (p[2] - (top + half)).abs() > 1e-9 {
                out.push(format!("{} rests at z={} but its support top is {}", c.id, p[2], top));
            }
        }
        if self.gripper.iter().any(|g| *g < 0.0 || *g > cfg.finger_open + 1e-12) {
            out.push("gripper opening out of range".into());
        }
        out
    }
}

/// End-effector orientation that aligns the fingers with a cube's yaw.
fn grasp_orientation(cube_q: &[f64; 4]) -> [f64; 4] {
    let half_yaw = cube_q[2].atan2(cube_q[3]);
    if cube_q == &CUBE_IDENTITY {
        return EEF_DOWN;
    }
    [half_yaw.cos(), half_yaw.sin(), 0.0, 0.0]
}

fn fmt_xyz(p: &[f64; 3]) -> String {
    format!("({:.3}, {:.3}, {:.3})", p[0], p[1], p[2])
}
