//! Brute-force posterior and random episodes shared by the belief and
//! acceptance targets.
#![allow(dead_code)]

use planner_core::belief::{BeliefState, MassClass};
use planner_core::sim::{reset, Action, MassRange, Observation, Pose7, SimConfig, EEF_DOWN};
use planner_core::task::{cube_ids, Tag, TaskSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

/// (mass classes in id order, fixed flags in id order)
pub type Key = (Option<Vec<MassClass>>, Option<Vec<bool>>);

pub struct RandomEpisode {
    pub task: TaskSpec,
    pub sim: SimConfig,
    pub ids: Vec<String>,
    pub initial: Observation,
    pub steps: Vec<(Action, Observation)>,
    pub masses: Vec<f64>,
    pub fixed: Vec<bool>,
}

/// Random tags over 2-3 cubes, then up to six random skills.
pub fn random_episode(seed: u64) -> RandomEpisode {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut tags = Vec::new();
    match rng.random_range(0..3) {
        0 => tags.push(Tag::Mass),
        1 => tags.push(Tag::Fix),
        _ => tags.extend([Tag::Mass, Tag::Fix]),
    }
    if rng.random_bool(0.5) {
        tags.push(Tag::Three);
    }
    let task = TaskSpec::new("r", tags, "Random probing episode.");
    let sim = SimConfig::default();
    let (mut state, initial) = reset(&task, seed, &sim).unwrap();
    let ids = cube_ids(task.cube_count());
    let origin: Vec<[f64; 3]> = state.cubes.iter().map(|c| c.pose.position).collect();
    let n_actions = rng.random_range(1..=6);
    let mut steps = Vec::new();
    let mut last_pick = 0usize;
    for _ in 0..n_actions {
        let action = match rng.random_range(0..5) {
            0 | 1 => {
                last_pick = rng.random_range(0..ids.len());
                Action::pick(ids[last_pick].clone())
            }
            2 => {
                let p = origin[last_pick];
                Action::place(Pose7::new([p[0], p[1], p[2] + 0.005], EEF_DOWN))
            }
            3 => Action::Reset,
            _ => Action::Wait,
        };
        let (obs, _) = state.apply(&action);
        steps.push((action, obs));
    }
    RandomEpisode {
        task,
        sim,
        ids,
        initial,
        steps,
        masses: state.cubes.iter().map(|c| c.mass).collect(),
        fixed: state.cubes.iter().map(|c| c.fixed).collect(),
    }
}

fn norm() -> Normal {
    Normal::new(0.0, 1.0).unwrap()
}

fn g_int(x: f64) -> f64 {
    // antiderivative of the standard normal cdf
    let n = norm();
    x * n.cdf(x) + n.pdf(x)
}

/// Closed-form marginal likelihood of force-z `r` for a uniform mass range.
pub fn force_likelihood(range: MassRange, r: f64, sim: &SimConfig) -> f64 {
    let (a, b) = (range.min, range.max);
    let (g, s, sigma) = (sim.gravity, sim.force_saturation, sim.force_noise_sigma);
    let w = b - a;
    if r <= -s {
        let x = |m: f64| (-s + m * g) / sigma;
        sigma / (g * w) * (g_int(x(b)) - g_int(x(a)))
    } else if r >= s {
        let y = |m: f64| (-m * g - s) / sigma;
        sigma / (g * w) * (g_int(y(a)) - g_int(y(b)))
    } else {
        let n = norm();
        (n.cdf((r + b * g) / sigma) - n.cdf((r + a * g) / sigma)) / (w * g)
    }
}

fn range_of(class: MassClass, sim: &SimConfig) -> MassRange {
    match class {
        MassClass::Light => sim.light_mass_range,
        MassClass::Medium => sim.medium_mass_range,
        MassClass::Heavy => sim.heavy_mass_range,
    }
}

/// Every legal hypothesis for the tags, uniform prior.
pub fn enumerate(task: &TaskSpec) -> Vec<Key> {
    let n = task.cube_count();
    let masses: Vec<Option<Vec<MassClass>>> = if task.has(Tag::Mass) {
        let mut out = Vec::new();
        for heavy in 0..n {
            for light in 0..n {
                if heavy != light {
                    out.push(Some(
                        (0..n)
                            .map(|i| {
                                if i == heavy {
                                    MassClass::Heavy
                                } else if i == light {
                                    MassClass::Light
                                } else {
                                    MassClass::Medium
                                }
                            })
                            .collect(),
                    ));
                }
            }
        }
        out
    } else {
        vec![None]
    };
    let fixes: Vec<Option<Vec<bool>>> = if task.has(Tag::Fix) {
        (0..(1u32 << n) - 1)
            .map(|mask| Some((0..n).map(|i| mask >> i & 1 == 1).collect()))
            .collect()
    } else {
        vec![None]
    };
    let mut out = Vec::new();
    for m in &masses {
        for f in &fixes {
            out.push((m.clone(), f.clone()));
        }
    }
    out
}

fn step_likelihood(key: &Key, ids: &[String], action: &Action, prev: &Observation, obs: &Observation, sim: &SimConfig) -> f64 {
    let fixed = |i: usize| key.1.as_ref().is_some_and(|f| f[i]);
    let mut l = 1.0;
    for (i, id) in ids.iter().enumerate() {
        let a = prev.cube_poses[id].position;
        let b = obs.cube_poses[id].position;
        let d = ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt();
        if d > 1e-4 && fixed(i) {
            return 0.0;
        }
    }
    if let Action::Pick { object } = action {
        let i = ids.iter().position(|x| x == object).unwrap();
        let a = prev.cube_poses[object].position;
        let b = obs.cube_poses[object].position;
        let unmoved = ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt() <= 1e-4;
        let e = obs.eef_pose.position;
        let at = ((e[0] - a[0]).powi(2) + (e[1] - a[1]).powi(2)).sqrt() < 1e-3;
        let open = obs.gripper.iter().all(|g| *g >= sim.finger_open - 1e-6);
        if unmoved && at && open && key.1.is_some() && !fixed(i) {
            return 0.0;
        }
    }
    let closed = obs.gripper.iter().any(|g| *g < sim.finger_open - 1e-6);
    if closed {
        let e = obs.eef_pose.position;
        let nearest = ids
            .iter()
            .enumerate()
            .map(|(i, id)| {
                let p = obs.cube_poses[id].position;
                (i, ((p[0] - e[0]).powi(2) + (p[1] - e[1]).powi(2) + (p[2] - e[2]).powi(2)).sqrt())
            })
            .filter(|(_, d)| *d <= 0.03)
            .min_by(|x, y| x.1.total_cmp(&y.1));
        if let Some((i, _)) = nearest {
            if fixed(i) {
                return 0.0;
            }
            if let Some(m) = &key.0 {
                l *= force_likelihood(range_of(m[i], sim), obs.force[2], sim);
            }
        }
    }
    l
}

/// Posterior after each prefix of the episode (the prior first), by
/// multiplying full joint likelihoods from scratch.
pub fn brute_force(ep: &RandomEpisode) -> Vec<Vec<(Key, f64)>> {
    let keys = enumerate(&ep.task);
    let mut out = Vec::new();
    for k in 0..=ep.steps.len() {
        let mut weights: Vec<f64> = keys
            .iter()
            .map(|key| {
                let mut prev = &ep.initial;
                let mut l = 1.0;
                for (action, obs) in &ep.steps[..k] {
                    l *= step_likelihood(key, &ep.ids, action, prev, obs, &ep.sim);
                    prev = obs;
                }
                l
            })
            .collect();
        let z: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= z);
        out.push(keys.iter().cloned().zip(weights).collect());
    }
    out
}

pub fn key_of(b: &BeliefState, i: usize) -> Key {
    let h = &b.hypotheses[i];
    (
        h.mass.as_ref().map(|m| b.cube_ids.iter().map(|id| m[id]).collect()),
        h.fixed.as_ref().map(|f| b.cube_ids.iter().map(|id| f[id]).collect()),
    )
}

/// Largest absolute difference between an incremental belief and the
/// brute-force posterior over the same hypotheses.
pub fn max_gap(b: &BeliefState, oracle: &[(Key, f64)]) -> f64 {
    assert_eq!(b.hypotheses.len(), oracle.len(), "hypothesis sets differ");
    (0..b.hypotheses.len())
        .map(|i| {
            let key = key_of(b, i);
            let p = oracle.iter().find(|(k, _)| *k == key).expect("hypothesis present").1;
            (b.probs[i] - p).abs()
        })
        .fold(0.0, f64::max)
}
