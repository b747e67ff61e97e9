//! Exact Bayesian belief over the static hidden parameters of a scene.
//!
//! Masses and fixed flags never change after reset, so the transition term
//! of the belief update is the identity and the posterior is just the prior
//! times the observation likelihood, renormalized.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;
use thiserror::Error;

use crate::sim::{Action, MassRange, Observation, SimConfig};
use crate::task::{Tag, TaskSpec};

/// Quadrature order for the class-conditional mass integral.
pub const QUADRATURE_POINTS: usize = 256;

/// Pose change above this counts as the cube having moved.
pub const MOVE_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BeliefError {
    #[error("cannot build a belief over an empty cube list")]
    NoCubes,
    #[error("observation is impossible under every hypothesis: {0}")]
    Inconsistent(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MassClass {
    Light,
    Medium,
    Heavy,
}

/// One complete assignment of the hidden parameters.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Hypothesis {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mass: Option<BTreeMap<String, MassClass>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixed: Option<BTreeMap<String, bool>>,
}

impl Hypothesis {
    pub fn mass_class(&self, id: &str) -> Option<MassClass> {
        self.mass.as_ref().and_then(|m| m.get(id).copied())
    }

    /// Fixed flag of `id`; cubes are movable when the fix tag is absent.
    pub fn is_fixed(&self, id: &str) -> bool {
        self.fixed.as_ref().and_then(|f| f.get(id).copied()).unwrap_or(false)
    }

    /// Cube ids ordered heaviest first. Ties keep id order.
    pub fn by_weight_desc(&self) -> Vec<String> {
        let Some(m) = &self.mass else { return Vec::new() };
        let mut ids: Vec<(&String, MassClass)> = m.iter().map(|(k, v)| (k, *v)).collect();
        ids.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        ids.into_iter().map(|(k, _)| k.clone()).collect()
    }

    pub fn describe(&self) -> String {
        let mut parts = Vec::new();
        if let Some(m) = &self.mass {
            for (id, c) in m {
                parts.push(format!("{id}={c:?}").to_lowercase());
            }
        }
        if let Some(f) = &self.fixed {
            for (id, fixed) in f {
                parts.push(format!("{id}={}", if *fixed { "fixed" } else { "movable" }));
            }
        }
        if parts.is_empty() {
            "trivial".into()
        } else {
            parts.join(",")
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeliefState {
    pub cube_ids: Vec<String>,
    pub hypotheses: Vec<Hypothesis>,
    pub probs: Vec<f64>,
}

/// Force and pose observation model; mirrors the simulator's parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LikelihoodModel {
    pub force_noise_sigma: f64,
    pub force_saturation: f64,
    pub gravity: f64,
    pub light_mass_range: MassRange,
    pub medium_mass_range: MassRange,
    pub heavy_mass_range: MassRange,
    pub finger_open: f64,
    /// Max eef-to-cube distance for a cube to count as held.
    pub hold_tolerance: f64,
}

impl LikelihoodModel {
    pub fn from_config(cfg: &SimConfig) -> Self {
        LikelihoodModel {
            force_noise_sigma: cfg.force_noise_sigma,
            force_saturation: cfg.force_saturation,
            gravity: cfg.gravity,
            light_mass_range: cfg.light_mass_range,
            medium_mass_range: cfg.medium_mass_range,
            heavy_mass_range: cfg.heavy_mass_range,
            finger_open: cfg.finger_open,
            hold_tolerance: 0.03,
        }
    }

    pub fn range(&self, class: MassClass) -> MassRange {
        match class {
            MassClass::Light => self.light_mass_range,
            MassClass::Medium => self.medium_mass_range,
            MassClass::Heavy => self.heavy_mass_range,
        }
    }

    /// Log-likelihood of a force-z reading `r` while holding a cube of the
    /// given class. Readings at the saturation limit are censored.
    pub fn force_log_likelihood(&self, class: MassClass, r: f64) -> f64 {
        let range = self.range(class);
        let (nodes, weights) = gauss_legendre(QUADRATURE_POINTS);
        let sigma = self.force_noise_sigma;
        let s = self.force_saturation;
        let half = range.width() / 2.0;
        let mid = (range.min + range.max) / 2.0;
        let terms: Vec<f64> = nodes
            .iter()
            .zip(weights)
            .map(|(x, w)| {
                let m = mid + half * x;
                let mean = -m * self.gravity;
                let lp = if r <= -s {
                    log_ndtr((-s - mean) / sigma)
                } else if r >= s {
                    log_ndtr((mean - s) / sigma)
                } else {
                    let z = (r - mean) / sigma;
                    -0.5 * z * z - sigma.ln() - 0.5 * (2.0 * PI).ln()
                };
                w.ln() + lp
            })
            .collect();
        // weights sum to 2 over [-1, 1]; divide to get the uniform average
        logsumexp(&terms) - 2f64.ln()
    }
}

/// What a single step reveals about the hidden parameters.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Evidence {
    /// Cube held after the action and the force-z reading.
    pub held: Option<(String, f64)>,
    /// Cubes whose pose changed; they must be movable.
    pub moved: Vec<String>,
    /// Cube a pick was attempted on that did not move; it must be fixed.
    pub pick_failed: Option<String>,
}

pub fn extract_evidence(action: &Action, obs: &Observation, prev_obs: &Observation, model: &LikelihoodModel) -> Evidence {
    let mut ev = Evidence::default();
    for (id, pose) in &obs.cube_poses {
        if let Some(prev) = prev_obs.cube_poses.get(id) {
            if pose.distance(prev) > MOVE_TOLERANCE {
                ev.moved.push(id.clone());
            }
        }
    }
    if let Action::Pick { object } = action {
        if let Some(prev) = prev_obs.cube_poses.get(object) {
            let unmoved = !ev.moved.contains(object);
            let at_cube = obs.eef_pose.xy_distance(prev) < 1e-3;
            let open = obs.gripper.iter().all(|g| *g >= model.finger_open - 1e-6);
            if unmoved && at_cube && open {
                ev.pick_failed = Some(object.clone());
            }
        }
    }
    if let Some(id) = obs.held_cube(model.finger_open, model.hold_tolerance) {
        ev.held = Some((id.to_string(), obs.force[2]));
    }
    ev
}

/// Log-likelihood of `ev` under one hypothesis. `-inf` marks impossibility.
pub fn evidence_log_likelihood(h: &Hypothesis, ev: &Evidence, model: &LikelihoodModel) -> f64 {
    if ev.moved.iter().any(|id| h.is_fixed(id)) {
        return f64::NEG_INFINITY;
    }
    if let Some(id) = &ev.pick_failed {
        if h.fixed.is_some() && !h.is_fixed(id) {
            return f64::NEG_INFINITY;
        }
    }
    let mut ll = 0.0;
    if let Some((id, r)) = &ev.held {
        if h.is_fixed(id) {
            return f64::NEG_INFINITY;
        }
        if let Some(class) = h.mass_class(id) {
            ll += model.force_log_likelihood(class, *r);
        }
    }
    ll
}

/// Uniform prior over every hypothesis legal for the task's tags.
pub fn init_belief(task: &TaskSpec, cube_ids: &[String]) -> Result<BeliefState, BeliefError> {
    if cube_ids.is_empty() {
        return Err(BeliefError::NoCubes);
    }
    let masses: Vec<Option<BTreeMap<String, MassClass>>> = if task.has(Tag::Mass) {
        let classes: Vec<MassClass> = if cube_ids.len() == 2 {
            vec![MassClass::Heavy, MassClass::Light]
        } else {
            let mut c = vec![MassClass::Heavy];
            c.extend(std::iter::repeat_n(MassClass::Medium, cube_ids.len().saturating_sub(2)));
            c.push(MassClass::Light);
            c
        };
        permutations(&classes)
            .into_iter()
            .map(|p| Some(cube_ids.iter().cloned().zip(p).collect()))
            .collect()
    } else {
        vec![None]
    };
    let fixes: Vec<Option<BTreeMap<String, bool>>> = if task.has(Tag::Fix) {
        let n = cube_ids.len();
        (0u32..(1 << n))
            .filter(|mask| *mask != (1 << n) - 1)
            .map(|mask| Some(cube_ids.iter().enumerate().map(|(i, id)| (id.clone(), mask >> i & 1 == 1)).collect()))
            .collect()
    } else {
        vec![None]
    };
    let mut hypotheses = Vec::new();
    for m in &masses {
        for f in &fixes {
            hypotheses.push(Hypothesis {
                mass: m.clone(),
                fixed: f.clone(),
            });
        }
    }
    let p = 1.0 / hypotheses.len() as f64;
    Ok(BeliefState {
        cube_ids: cube_ids.to_vec(),
        probs: vec![p; hypotheses.len()],
        hypotheses,
    })
}

/// Distinct permutations in lexicographic order of first appearance.
fn permutations(items: &[MassClass]) -> Vec<Vec<MassClass>> {
    if items.len() <= 1 {
        return vec![items.to_vec()];
    }
    let mut out = Vec::new();
    let mut seen = Vec::new();
    for (i, item) in items.iter().enumerate() {
        if seen.contains(item) {
            continue;
        }
        seen.push(*item);
        let mut rest = items.to_vec();
        rest.remove(i);
        for mut tail in permutations(&rest) {
            tail.insert(0, *item);
            out.push(tail);
        }
    }
    out
}

/// Bayes update for one executed action.
pub fn update(
    belief: &BeliefState,
    action: &Action,
    obs: &Observation,
    prev_obs: &Observation,
    model: &LikelihoodModel,
) -> Result<BeliefState, BeliefError> {
    let ev = extract_evidence(action, obs, prev_obs, model);
    update_with_evidence(belief, &ev, model)
}

pub fn update_with_evidence(belief: &BeliefState, ev: &Evidence, model: &LikelihoodModel) -> Result<BeliefState, BeliefError> {
    let logs: Vec<f64> = belief
        .hypotheses
        .iter()
        .zip(&belief.probs)
        .map(|(h, p)| p.ln() + evidence_log_likelihood(h, ev, model))
        .collect();
    let norm = logsumexp(&logs);
    if !norm.is_finite() {
        return Err(BeliefError::Inconsistent(format!("{ev:?}")));
    }
    Ok(BeliefState {
        cube_ids: belief.cube_ids.clone(),
        hypotheses: belief.hypotheses.clone(),
        probs: logs.iter().map(|l| (l - norm).exp()).collect(),
    })
}

/// Most probable hypothesis, its index, and its probability. Ties go to
/// the lowest index.
pub fn map_hypothesis(belief: &BeliefState) -> (usize, &Hypothesis, f64) {
    let mut best = 0;
    for (i, p) in belief.probs.iter().enumerate() {
        if *p > belief.probs[best] {
            best = i;
        }
    }
    (best, &belief.hypotheses[best], belief.probs[best])
}

pub fn info_sufficient(belief: &BeliefState, threshold: f64) -> bool {
    belief.probs.iter().cloned().fold(0.0, f64::max) >= threshold
}

impl BeliefState {
    pub fn total(&self) -> f64 {
        self.probs.iter().sum()
    }

    /// Probability that `id` is fixed.
    pub fn prob_fixed(&self, id: &str) -> f64 {
        self.marginal(|h| h.is_fixed(id))
    }

    pub fn prob_class(&self, id: &str, class: MassClass) -> f64 {
        self.marginal(|h| h.mass_class(id) == Some(class))
    }

    pub fn marginal(&self, pred: impl Fn(&Hypothesis) -> bool) -> f64 {
        self.hypotheses
            .iter()
            .zip(&self.probs)
            .filter(|(h, _)| pred(h))
            .map(|(_, p)| p)
            .sum()
    }

    /// Whether the mass class of `id` is known to `threshold`.
    pub fn mass_determined(&self, id: &str, threshold: f64) -> bool {
        [MassClass::Light, MassClass::Medium, MassClass::Heavy]
            .iter()
            .any(|c| self.prob_class(id, *c) >= threshold)
    }

    /// Whether the fixed flag of `id` is known to `threshold`.
    pub fn fixed_determined(&self, id: &str, threshold: f64) -> bool {
        let p = self.prob_fixed(id);
        p >= threshold || 1.0 - p >= threshold
    }

    /// Index of the hypothesis matching the true hidden parameters.
    pub fn true_index(&self, masses: &BTreeMap<String, f64>, fixed: &BTreeMap<String, bool>) -> Option<usize> {
        let truth = true_hypothesis(&self.cube_ids, masses, fixed);
        self.hypotheses.iter().position(|h| {
            let mass_ok = match &h.mass {
                Some(m) => Some(m) == truth.mass.as_ref(),
                None => true,
            };
            let fix_ok = match &h.fixed {
                Some(f) => Some(f) == truth.fixed.as_ref(),
                None => true,
            };
            mass_ok && fix_ok
        })
    }
}

/// Hidden parameters expressed as a hypothesis: mass classes by rank.
pub fn true_hypothesis(ids: &[String], masses: &BTreeMap<String, f64>, fixed: &BTreeMap<String, bool>) -> Hypothesis {
    let mut ranked: Vec<&String> = ids.iter().collect();
    ranked.sort_by(|a, b| masses[*a].total_cmp(&masses[*b]));
    let n = ranked.len();
    let mass = ranked
        .iter()
        .enumerate()
        .map(|(i, id)| {
            let c = if i == 0 {
                MassClass::Light
            } else if i == n - 1 {
                MassClass::Heavy
            } else {
                MassClass::Medium
            };
            ((*id).clone(), c)
        })
        .collect();
    Hypothesis {
        mass: Some(mass),
        fixed: Some(ids.iter().map(|id| (id.clone(), fixed[id])).collect()),
    }
}

pub fn logsumexp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// log of the standard normal CDF, accurate deep into the lower tail.
pub fn log_ndtr(x: f64) -> f64 {
    if x > -30.0 {
        let p = 0.5 * erfc(-x / std::f64::consts::SQRT_2);
        return p.ln();
    }
    let x2 = x * x;
    let series = 1.0 - 1.0 / x2 + 3.0 / (x2 * x2) - 15.0 / (x2 * x2 * x2);
    -0.5 * x2 - (-x).ln() - 0.5 * (2.0 * PI).ln() + series.ln()
}

/// Gauss-Legendre nodes and weights on [-1, 1].
pub fn gauss_legendre(n: usize) -> (&'static [f64], &'static [f64]) {
    static CACHE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    assert_eq!(n, QUADRATURE_POINTS, "only the default order is cached");
    let (x, w) = CACHE.get_or_init(|| compute_gauss_legendre(n));
    (x, w)
}

fn compute_gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (z * p1 - p0) / (z * z - 1.0);
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() < 1e-15 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    (x, w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{Pose7, EEF_DOWN};
    use crate::task::cube_ids;
    use statrs::distribution::{ContinuousCDF, Normal};

    fn model() -> LikelihoodModel {
        LikelihoodModel::from_config(&SimConfig::default())
    }

    #[test]
    fn quadrature_integrates_polynomials() {
        let (x, w) = gauss_legendre(QUADRATURE_POINTS);
        assert!((w.iter().sum::<f64>() - 2.0).abs() < 1e-12);
        let x4: f64 = x.iter().zip(w).map(|(x, w)| w * x.powi(4)).sum();
        assert!((x4 - 0.4).abs() < 1e-12);
    }

    #[test]
    fn force_likelihood_matches_closed_form() {
        let m = model();
        let n = Normal::new(0.0, 1.0).unwrap();
        for r in [-1.5, -2.5, -3.0, -3.92, -4.4, -4.99] {
            for class in [MassClass::Light, MassClass::Heavy] {
                let range = m.range(class);
                let (a, b, g, s) = (range.min, range.max, m.gravity, m.force_noise_sigma);
                let (hi, lo) = ((r + b * g) / s, (r + a * g) / s);
                // upper-tail form when both arguments are positive avoids 1 - 1
                let mass = if lo > 0.0 { n.sf(lo) - n.sf(hi) } else { n.cdf(hi) - n.cdf(lo) };
                let want = mass / (g * range.width());
                let got = m.force_log_likelihood(class, r).exp();
                assert!((got - want).abs() <= 1e-9 * want, "{class:?} {r}: {got} vs {want}");
            }
        }
    }

    #[test]
    fn saturated_reading_matches_censored_closed_form() {
        // P = mean over m of Phi((m g - S) / sigma); the antiderivative of
        // Phi(u) is u Phi(u) + phi(u)
        let m = model();
        let n = Normal::new(0.0, 1.0).unwrap();
        let anti = |u: f64| u * n.cdf(u) + (-0.5 * u * u).exp() / (2.0 * PI).sqrt();
        for class in [MassClass::Light, MassClass::Medium, MassClass::Heavy] {
            let range = m.range(class);
            let (g, s, sd) = (m.gravity, m.force_saturation, m.force_noise_sigma);
            let u = |mass: f64| (mass * g - s) / sd;
            let want = (anti(u(range.max)) - anti(u(range.min))) * sd / (g * range.width());
            let got = m.force_log_likelihood(class, -s).exp();
            // erfc carries ~1e-12 absolute error, so compare absolutely
            assert!((got - want).abs() <= 1e-10, "{class:?}: {got} vs {want}");
        }
    }

    #[test]
    fn priors_have_expected_sizes() {
        let ids = cube_ids(2);
        let b = init_belief(&TaskSpec::new("3", [Tag::Mass], "x"), &ids).unwrap();
        assert_eq!(b.probs, vec![0.5, 0.5]);
        assert_eq!(b.hypotheses[0].mass_class("cubeA"), Some(MassClass::Heavy));
        let b = init_belief(&TaskSpec::new("5", [Tag::Fix], "x"), &ids).unwrap();
        assert_eq!(b.hypotheses.len(), 3);
        assert!(b.probs.iter().all(|p| (p - 1.0 / 3.0).abs() < 1e-15));
        let b = init_belief(&TaskSpec::new("1", [], "x"), &ids).unwrap();
        assert_eq!(b.probs, vec![1.0]);
        assert!(init_belief(&TaskSpec::new("1", [], "x"), &[]).is_err());
        let b = init_belief(&TaskSpec::new("x", [Tag::Mass, Tag::Three], "x"), &cube_ids(3)).unwrap();
        assert_eq!(b.hypotheses.len(), 6);
    }

    #[test]
    fn ties_break_to_lowest_index() {
        let b = init_belief(&TaskSpec::new("3", [Tag::Mass], "x"), &cube_ids(2)).unwrap();
        let (i, _, p) = map_hypothesis(&b);
        assert_eq!((i, p), (0, 0.5));
        assert!(!info_sufficient(&b, 0.95));
    }

    #[test]
    fn log_ndtr_tail_is_finite() {
        assert!(log_ndtr(-100.0).is_finite());
        assert!((log_ndtr(-29.999) - log_ndtr(-30.001)).abs() < 0.1);
        assert!(log_ndtr(5.0) < 0.0 && log_ndtr(5.0) > -1e-6);
    }

    #[test]
    fn unmoved_pick_rules_out_movable() {
        let ids = cube_ids(2);
        let b = init_belief(&TaskSpec::new("5", [Tag::Fix], "x"), &ids).unwrap();
        let cube = |x: f64| Pose7::new([x, 0.0, 1.025], [0.0, 0.0, 0.0, 1.0]);
        let prev = Observation {
            cube_poses: [("cubeA".to_string(), cube(0.1)), ("cubeB".to_string(), cube(-0.1))].into(),
            eef_pose: Pose7::new([0.0, 0.0, 1.2], EEF_DOWN),
            force: [0.0; 3],
            gripper: [0.04; 2],
        };
        let mut obs = prev.clone();
        obs.eef_pose = Pose7::new([0.1, 0.0, 1.175], EEF_DOWN);
        obs.force = [0.0, 0.0, -5.0];
        let post = update(&b, &Action::pick("cubeA"), &obs, &prev, &model()).unwrap();
        assert!(post.prob_fixed("cubeA") > 1.0 - 1e-12);
        assert!(post.hypotheses.iter().zip(&post.probs).all(|(h, p)| h.is_fixed("cubeA") || *p == 0.0));
    }
}
