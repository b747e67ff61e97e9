//! Scripted planner and evaluator that play the tasks optimally from the
//! shadow belief. Everything leaves as wire text and is parsed again by the
//! loop, so the oracle exercises the same path as a remote model.

use crate::belief::{info_sufficient, map_hypothesis, Hypothesis};
use crate::goals::{corner_of, goal_holds, GoalScene, GoalTolerance};
use crate::protocol::{render_plan, render_verdict, PlanOutput, Verdict};
use crate::sim::{Action, Observation, Pose7, SimConfig, EEF_DOWN};
use crate::task::{GoalSchema, Tag};

use super::{Backend, BackendError, CallContext, ChatRequest, EpisodeView, Role};

/// Explanation prefixes; the oracle reads its own past plans by them.
pub const GATHER_PREFIX: &str = "Information is missing.";
pub const GOAL_PREFIX: &str = "Information is sufficient.";
pub const DONE_PREFIX: &str = "The task should be complete.";
pub const INFEASIBLE_PREFIX: &str = "The task is infeasible:";

/// Verdict marker for a placement that did not land where it was aimed.
pub const PLACE_FAILED: &str = "PLACE failed";

/// Extra height added to goal placements per earlier failed placement.
pub const PLACE_RAISE: f64 = 0.02;

/// How far from the table corner a cube is set down, along both axes.
pub const CORNER_INSET: f64 = 0.05;

#[derive(Debug, Default, Clone)]
pub struct OracleBackend;

impl OracleBackend {
    pub fn new() -> Self {
        OracleBackend
    }
}

impl Backend for OracleBackend {
    fn name(&self) -> &str {
        "oracle"
    }

    fn complete(&mut self, _req: &ChatRequest, ctx: &CallContext<'_>) -> Result<String, BackendError> {
        match ctx.role {
            Role::Planner => {
                let view = ctx.episode.ok_or(BackendError::OracleContext("an episode view"))?;
                Ok(render_plan(&oracle_plan(&view)))
            }
            Role::Evaluator => {
                let view = ctx.episode.ok_or(BackendError::OracleContext("an episode view"))?;
                Ok(render_verdict(&oracle_verdict(&view)))
            }
            Role::TaskGen => Ok(crate::harness::register_tasks()
                .iter()
                .enumerate()
                .map(|(i, t)| format!("### Task {}: {}\n", i + 1, t.generator_text()))
                .collect()),
            Role::InstructGen => Err(BackendError::OracleContext("a planner or evaluator role")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Target {
    OnCube(String),
    Corner([f64; 2]),
    Hold,
}

type Moves = Vec<(String, Target)>;

/// Round up to the 2-decimal wire grid so a release never ends up lower
/// than asked.
fn ceil_grid(z: f64) -> f64 {
    (z * 100.0 - 1e-6).ceil() / 100.0
}

fn pos(obs: &Observation, id: &str) -> [f64; 3] {
    obs.cube_poses.get(id).map_or([0.0; 3], |p| p.position)
}

fn place_at(x: f64, y: f64, z: f64) -> Action {
    Action::place(Pose7::new([x, y, ceil_grid(z)], EEF_DOWN))
}

/// Table corners pulled inward so the cube stays on the table, in
/// [`SimConfig::table_corners`] order.
fn inset_corners(cfg: &SimConfig) -> Vec<[f64; 2]> {
    let [cx, cy] = cfg.table_center;
    cfg.table_corners()
        .iter()
        .map(|c| [c[0] - (c[0] - cx).signum() * CORNER_INSET, c[1] - (c[1] - cy).signum() * CORNER_INSET])
        .collect()
}

fn nearest_free_corner(p: [f64; 3], cfg: &SimConfig, used: &[usize]) -> Option<usize> {
    inset_corners(cfg)
        .iter()
        .enumerate()
        .filter(|(k, _)| !used.contains(k))
        .min_by(|a, b| {
            let d = |c: &[f64; 2]| (c[0] - p[0]).powi(2) + (c[1] - p[1]).powi(2);
            d(a.1).total_cmp(&d(b.1))
        })
        .map(|(k, _)| k)
}

/// Cube moves that reach the goal under `hyp`, or why none exist.
fn goal_moves(schema: GoalSchema, hyp: &Hypothesis, obs: &Observation, cfg: &SimConfig) -> Result<Moves, String> {
    let ids: Vec<&String> = obs.cube_poses.keys().collect();
    let movable: Vec<&String> = ids.iter().copied().filter(|id| !hyp.is_fixed(id)).collect();
    let first_movable = || movable.first().map(|s| s.to_string()).ok_or_else(|| "no block can be moved".to_string());
    match schema {
        GoalSchema::StackAny => {
            let a = first_movable()?;
            let b = ids
                .iter()
                .find(|id| ***id != a)
                .ok_or_else(|| "there is only one block".to_string())?;
            Ok(vec![(a, Target::OnCube(b.to_string()))])
        }
        GoalSchema::BlocksToCorners => {
            if let Some(f) = ids.iter().find(|id| hyp.is_fixed(id)) {
                return Err(format!("{f} is fixed and cannot reach a corner"));
            }
            let radius = GoalTolerance::default().corner_radius;
            let corners = inset_corners(cfg);
            let mut used = Vec::new();
            let mut pending = Vec::new();
            for id in &ids {
                match corner_of(&pos(obs, id), cfg, radius) {
                    Some(k) if !used.contains(&k) => used.push(k),
                    _ => pending.push(id.to_string()),
                }
            }
            let mut moves = Vec::new();
            for id in pending {
                let k = nearest_free_corner(pos(obs, &id), cfg, &used).ok_or_else(|| "not enough free corners".to_string())?;
                used.push(k);
                moves.push((id, Target::Corner(corners[k])));
            }
            Ok(moves)
        }
        GoalSchema::HoldHeavier => {
            let heavy = hyp
                .by_weight_desc()
                .first()
                .cloned()
                .ok_or_else(|| "the weights are unknown".to_string())?;
            if hyp.is_fixed(&heavy) {
                return Err(format!("{heavy} is fixed and cannot be picked up"));
            }
            Ok(vec![(heavy, Target::Hold)])
        }
        GoalSchema::StackLighterOnHeavier => {
            let order = hyp.by_weight_desc();
            let (Some(heavy), Some(light)) = (order.first(), order.last()) else {
                return Err("the weights are unknown".into());
            };
            if hyp.is_fixed(light) {
                return Err(format!("{light} is fixed and cannot be picked up"));
            }
            Ok(vec![(light.clone(), Target::OnCube(heavy.clone()))])
        }
        GoalSchema::MovableToCorner => {
            let m = first_movable()?;
            let k = nearest_free_corner(pos(obs, &m), cfg, &[]).ok_or_else(|| "no corner".to_string())?;
            Ok(vec![(m, Target::Corner(inset_corners(cfg)[k]))])
        }
        GoalSchema::MovableOnFixed => {
            let f = ids
                .iter()
                .find(|id| hyp.is_fixed(id))
                .ok_or_else(|| "no block is fixed".to_string())?;
            let m = first_movable()?;
            Ok(vec![(m, Target::OnCube(f.to_string()))])
        }
    }
}

fn moves_sentence(moves: &Moves) -> String {
    let parts: Vec<String> = moves
        .iter()
        .map(|(c, t)| match t {
            Target::OnCube(s) => format!("pick up {c} and place it on top of {s}"),
            Target::Corner([x, y]) => format!("move {c} to the table corner at ({x:.2}, {y:.2})"),
            Target::Hold => format!("pick up {c} and hold it"),
        })
        .collect();
    parts.join(", then ")
}

fn moves_actions(moves: &Moves, obs: &Observation, cfg: &SimConfig, raise: f64) -> Vec<Action> {
    let mut out = Vec::new();
    let mut holds = false;
    for (c, t) in moves {
        out.push(Action::pick(c.clone()));
        match t {
            Target::OnCube(s) => {
                let p = pos(obs, s);
                out.push(place_at(p[0], p[1], p[2] + cfg.cube_size + raise));
            }
            Target::Corner([x, y]) => out.push(place_at(*x, *y, cfg.rest_z() + raise)),
            Target::Hold => holds = true,
        }
    }
    if !holds {
        out.push(Action::Reset);
    }
    out
}

fn failed_place_count(view: &EpisodeView) -> usize {
    view.rounds
        .iter()
        .filter_map(|r| r.evaluator_verdict.as_ref())
        .chain(view.verdict)
        .filter(|v| v.rationale.contains(PLACE_FAILED))
        .count()
}

fn wait_plan(explanation: String) -> PlanOutput {
    PlanOutput {
        explanation,
        actions: vec![Action::Wait],
    }
}

fn undetermined(view: &EpisodeView) -> Vec<String> {
    let (b, thr) = (view.belief, view.threshold);
    b.cube_ids
        .iter()
        .filter(|id| {
            (view.task.has(Tag::Mass) && !b.mass_determined(id, thr)) || (view.task.has(Tag::Fix) && !b.fixed_determined(id, thr))
        })
        .cloned()
        .collect()
}

fn missing_what(view: &EpisodeView) -> String {
    let mut parts = Vec::new();
    if view.task.has(Tag::Mass) {
        parts.push("the weight of the cubes");
    }
    if view.task.has(Tag::Fix) {
        parts.push("which cubes are movable");
    }
    parts.join(" and ")
}

pub fn oracle_plan(view: &EpisodeView) -> PlanOutput {
    let task = view.task;
    if !view.evaluator_enabled
        && view
            .rounds
            .iter()
            .filter_map(|r| r.plan.as_ref())
            .any(|p| p.explanation.starts_with(GOAL_PREFIX))
    {
        return wait_plan(format!("{DONE_PREFIX} The goal plan was executed in an earlier round, so I will wait."));
    }

    if task.has_uncertainty() && !info_sufficient(view.belief, view.threshold) {
        let cubes = undetermined(view);
        if !cubes.is_empty() {
            let mut actions = Vec::new();
            for c in &cubes {
                actions.push(Action::pick(c.clone()));
                if task.has(Tag::Mass) && view.belief.prob_fixed(c) < 0.5 {
                    let p = pos(view.observation, c);
                    actions.push(place_at(p[0], p[1], p[2]));
                }
                actions.push(Action::Reset);
            }
            let how = if task.has(Tag::Mass) {
                "I will pick up each block to read the force sensor and then place it back"
            } else {
                "I will try to pick up each block and check whether it moves"
            };
            return PlanOutput {
                explanation: format!("{GATHER_PREFIX} Missing {}. {how}: {}.", missing_what(view), cubes.join(", ")),
                actions,
            };
        }
    }

    let Some(schema) = task.goal_schema else {
        return wait_plan(format!("{INFEASIBLE_PREFIX} the task has no goal I can check."));
    };
    let (_, hyp, _) = map_hypothesis(view.belief);
    match goal_moves(schema, hyp, view.observation, view.sim) {
        Ok(moves) => {
            let raise = PLACE_RAISE * failed_place_count(view) as f64;
            let mut explanation = format!("{GOAL_PREFIX} To {}, I will {}.", task_phrase(&task.description), moves_sentence(&moves));
            if raise > 0.0 {
                explanation.push_str(&format!(" The placing height is raised by {raise:.2} m because an earlier placement failed."));
            }
            PlanOutput {
                explanation,
                actions: moves_actions(&moves, view.observation, view.sim, raise),
            }
        }
        Err(reason) => wait_plan(format!("{INFEASIBLE_PREFIX} {reason}.")),
    }
}

fn task_phrase(description: &str) -> String {
    let d = description.trim().trim_end_matches(['.', '*']);
    let mut chars = d.chars();
    match chars.next() {
        Some(c) => c.to_lowercase().collect::<String>() + chars.as_str(),
        None => "solve the task".into(),
    }
}

/// Last-round placement that landed away from its target, as
/// `(action index, cube, landing, target)`.
fn failed_place(view: &EpisodeView) -> Option<(usize, String, [f64; 3], [f64; 3])> {
    let round = view.rounds.last()?;
    let cfg = view.sim;
    for (i, step) in round.exec.iter().enumerate().skip(1) {
        let Action::Place { pose, .. } = &step.action else { continue };
        let before = &round.exec[i - 1].observation;
        let Some(held) = before.held_cube(cfg.finger_open, cfg.cube_size) else { continue };
        let landed = pos(&step.observation, held);
        let t = pose.position;
        if ((landed[0] - t[0]).powi(2) + (landed[1] - t[1]).powi(2)).sqrt() > cfg.half_size() {
            return Some((i, held.to_string(), landed, t));
        }
    }
    None
}

fn facts(view: &EpisodeView, hyp: &Hypothesis) -> String {
    let mut out = Vec::new();
    if view.task.has(Tag::Mass) {
        let order = hyp.by_weight_desc();
        if order.len() == 2 {
            out.push(format!("Based on the force sensor readings, {} is lighter than {}.", order[1], order[0]));
        } else if let (Some(h), Some(l)) = (order.first(), order.last()) {
            out.push(format!("Based on the force sensor readings, {h} is the heaviest and {l} is the lightest."));
        }
    }
    if view.task.has(Tag::Fix) {
        let (fixed, movable): (Vec<&String>, Vec<&String>) = view.belief.cube_ids.iter().partition(|id| hyp.is_fixed(id));
        let list = |v: &[&String]| v.iter().map(|s| s.as_str()).collect::<Vec<_>>().join(" and ");
        let mut s = String::from("Based on the pick attempts, ");
        if !fixed.is_empty() {
            s.push_str(&format!("{} {} fixed", list(&fixed), if fixed.len() == 1 { "is" } else { "are" }));
        }
        if !movable.is_empty() {
            if !fixed.is_empty() {
                s.push_str(" and ");
            }
            s.push_str(&format!("{} {} movable", list(&movable), if movable.len() == 1 { "is" } else { "are" }));
        }
        s.push('.');
        out.push(s);
    }
    out.join(" ")
}

pub fn oracle_verdict(view: &EpisodeView) -> Verdict {
    let task = view.task;
    let cfg = view.sim;
    let (_, hyp, _) = map_hypothesis(view.belief);
    let scene = GoalScene::from_observation(view.observation, cfg);
    let met = task
        .goal_schema
        .is_some_and(|s| goal_holds(s, &scene, hyp, cfg, &GoalTolerance::default()));
    let sufficient = !task.has_uncertainty() || info_sufficient(view.belief, view.threshold);
    if met && sufficient {
        return Verdict {
            done: true,
            rationale: "The robot has successfully completed the task.".into(),
        };
    }
    let fail = |rationale: String| Verdict { done: false, rationale };
    if let Some((i, cube, l, t)) = failed_place(view) {
        return fail(format!(
            "Task is not finished. Based on history the action {PLACE_FAILED} in Action {i}: {cube} landed at ({:.2}, {:.2}, {:.2}) instead of at the target ({:.2}, {:.2}). A potential solution is to change the target position to a higher position.",
            l[0], l[1], l[2], t[0], t[1]
        ));
    }
    if !sufficient {
        return fail(format!("The task is not finished. Missing information to solve the task: {}.", missing_what(view)));
    }
    let known = facts(view, hyp);
    let lead = if known.is_empty() { String::from("Task is not finished.") } else { format!("Task is not finished. {known}") };
    match task.goal_schema.map(|s| goal_moves(s, hyp, view.observation, cfg)) {
        Some(Ok(moves)) => fail(format!("{lead} The robot needs to {}.", moves_sentence(&moves))),
        Some(Err(reason)) => fail(format!("{lead} The task cannot be solved: {reason}.")),
        None => fail(format!("{lead} The goal of the task cannot be checked.")),
    }
}
