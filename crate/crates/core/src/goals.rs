//! Goal predicates of the evaluation tasks, evaluated over cube positions, the
//! held cube and a hidden-parameter assignment. The judge passes the true
//! parameters; the oracle passes its MAP hypothesis.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::belief::Hypothesis;
use crate::sim::{Observation, SimConfig, WorldState};
use crate::task::GoalSchema;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GoalTolerance {
    /// Strict bound on |dx| and |dy| between stacked cubes.
    pub stack_xy: f64,
    /// Strict bound on the height error of the upper cube.
    pub stack_z: f64,
    /// A cube is at a corner when its XY lies within this radius.
    pub corner_radius: f64,
}

impl Default for GoalTolerance {
    fn default() -> Self {
        GoalTolerance {
            stack_xy: 0.025,
            stack_z: 0.005,
            corner_radius: 0.1,
        }
    }
}

/// The parts of a scene the predicates look at.
#[derive(Debug, Clone, PartialEq)]
pub struct GoalScene {
    pub positions: BTreeMap<String, [f64; 3]>,
    pub held: Option<String>,
}

impl GoalScene {
    pub fn from_state(state: &WorldState) -> Self {
        GoalScene {
            positions: state.cubes.iter().map(|c| (c.id.clone(), c.pose.position)).collect(),
            held: state.attached.clone(),
        }
    }

    /// Scene as seen from an observation; the held cube is inferred from the
    /// gripper opening and proximity to the end effector.
    pub fn from_observation(obs: &Observation, cfg: &SimConfig) -> Self {
        GoalScene {
            positions: obs.cube_poses.iter().map(|(id, p)| (id.clone(), p.position)).collect(),
            held: obs.held_cube(cfg.finger_open, cfg.cube_size).map(str::to_string),
        }
    }
}

/// `a` rests on `b`.
pub fn stacked(scene: &GoalScene, a: &str, b: &str, cube_size: f64, tol: &GoalTolerance) -> bool {
    let (Some(pa), Some(pb)) = (scene.positions.get(a), scene.positions.get(b)) else {
        return false;
    };
    (pa[0] - pb[0]).abs() < tol.stack_xy
        && (pa[1] - pb[1]).abs() < tol.stack_xy
        && (pa[2] - (pb[2] + cube_size)).abs() < tol.stack_z
}

/// Index of the table corner within `radius` of `p`, if any.
pub fn corner_of(p: &[f64; 3], cfg: &SimConfig, radius: f64) -> Option<usize> {
    cfg.table_corners()
        .iter()
        .position(|c| ((p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2)).sqrt() < radius)
}

pub fn goal_holds(schema: GoalSchema, scene: &GoalScene, hyp: &Hypothesis, cfg: &SimConfig, tol: &GoalTolerance) -> bool {
    let ids: Vec<&String> = scene.positions.keys().collect();
    let movable: Vec<&String> = ids.iter().copied().filter(|id| !hyp.is_fixed(id)).collect();
    match schema {
        GoalSchema::StackAny => ids
            .iter()
            .any(|a| ids.iter().any(|b| a != b && stacked(scene, a, b, cfg.cube_size, tol))),
        GoalSchema::BlocksToCorners => {
            let mut used = Vec::new();
            for id in &ids {
                match corner_of(&scene.positions[*id], cfg, tol.corner_radius) {
                    Some(c) if !used.contains(&c) => used.push(c),
                    _ => return false,
                }
            }
            true
        }
        GoalSchema::HoldHeavier => {
            let order = hyp.by_weight_desc();
            match (order.first(), &scene.held) {
                (Some(heaviest), Some(held)) => heaviest == held,
                _ => false,
            }
        }
        GoalSchema::StackLighterOnHeavier => {
            let order = hyp.by_weight_desc();
            match (order.first(), order.last()) {
                (Some(heavy), Some(light)) if heavy != light => stacked(scene, light, heavy, cfg.cube_size, tol),
                _ => false,
            }
        }
        GoalSchema::MovableToCorner => movable
            .iter()
            .any(|id| scene.held.as_deref() != Some(id.as_str()) && corner_of(&scene.positions[*id], cfg, tol.corner_radius).is_some()),
        GoalSchema::MovableOnFixed => movable.iter().any(|m| {
            ids.iter()
                .any(|f| hyp.is_fixed(f) && stacked(scene, m, f, cfg.cube_size, tol))
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scene(a: [f64; 3], b: [f64; 3]) -> GoalScene {
        GoalScene {
            positions: [("cubeA".to_string(), a), ("cubeB".to_string(), b)].into(),
            held: None,
        }
    }

    fn hyp(heavy: &str, fixed: Option<&str>) -> Hypothesis {
        use crate::belief::MassClass;
        let light = if heavy == "cubeA" { "cubeB" } else { "cubeA" };
        Hypothesis {
            mass: Some([(heavy.to_string(), MassClass::Heavy), (light.to_string(), MassClass::Light)].into()),
            fixed: Some(["cubeA", "cubeB"].iter().map(|id| (id.to_string(), Some(*id) == fixed)).collect()),
        }
    }

    #[test]
    fn stacking_bounds_are_strict() {
        let tol = GoalTolerance::default();
        let s = scene([0.025, 0.0, 1.075], [0.0, 0.0, 1.025]);
        assert!(!stacked(&s, "cubeA", "cubeB", 0.05, &tol));
        let s = scene([0.0249, 0.0, 1.075], [0.0, 0.0, 1.025]);
        assert!(stacked(&s, "cubeA", "cubeB", 0.05, &tol));
        let s = scene([0.1, 0.0, 1.08], [0.1, 0.0, 1.025]);
        assert!(!stacked(&s, "cubeA", "cubeB", 0.05, &tol));
    }

    #[test]
    fn lighter_on_heavier_uses_hypothesis() {
        let cfg = SimConfig::default();
        let tol = GoalTolerance::default();
        let s = scene([0.1, 0.0, 1.075], [0.1, 0.0, 1.025]);
        assert!(goal_holds(GoalSchema::StackLighterOnHeavier, &s, &hyp("cubeB", None), &cfg, &tol));
        assert!(!goal_holds(GoalSchema::StackLighterOnHeavier, &s, &hyp("cubeA", None), &cfg, &tol));
        assert!(goal_holds(GoalSchema::StackAny, &s, &hyp("cubeA", None), &cfg, &tol));
        assert!(goal_holds(GoalSchema::MovableOnFixed, &s, &hyp("cubeA", Some("cubeB")), &cfg, &tol));
        assert!(!goal_holds(GoalSchema::MovableOnFixed, &s, &hyp("cubeA", Some("cubeA")), &cfg, &tol));
    }

    #[test]
    fn corners_and_holding() {
        let cfg = SimConfig::default();
        let tol = GoalTolerance::default();
        let mut s = scene([0.35, 0.35, 1.025], [-0.35, 0.35, 1.025]);
        assert!(goal_holds(GoalSchema::BlocksToCorners, &s, &hyp("cubeA", None), &cfg, &tol));
        s.positions.insert("cubeB".into(), [0.33, 0.33, 1.025]);
        assert!(!goal_holds(GoalSchema::BlocksToCorners, &s, &hyp("cubeA", None), &cfg, &tol));
        assert!(goal_holds(GoalSchema::MovableToCorner, &s, &hyp("cubeA", Some("cubeA")), &cfg, &tol));
        assert!(!goal_holds(GoalSchema::HoldHeavier, &s, &hyp("cubeA", None), &cfg, &tol));
        s.held = Some("cubeA".into());
        assert!(goal_holds(GoalSchema::HoldHeavier, &s, &hyp("cubeA", None), &cfg, &tol));
        assert!(!goal_holds(GoalSchema::HoldHeavier, &s, &hyp("cubeB", None), &cfg, &tol));
    }
}
