//! The closed planning loop: evaluator, planner, execution, history.
//!
//! A shadow belief is updated from the observations after every action. It
//! feeds the oracle backend and the judge and never appears in a prompt.

use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{Backend, BackendError, CallContext, EpisodeView, RequestSettings, Role};
use crate::belief::{init_belief, update, BeliefError, BeliefState, LikelihoodModel};
use crate::harness::EpisodeResult;
use crate::prompts::{EnvVariant, Prompts, TemplateError};
use crate::protocol::{parse_plan, parse_verdict, HistoryRound, ParseError, PlanOutput, Verdict};
use crate::sim::{self, Action, ExecReport, Observation, SimConfig, SimError, WorldState};
use crate::task::{cube_ids, TaskSpec};

/// Largest grasp offset accepted by [`run_with_ablation`], per norm.
pub const MAX_GRASP_OFFSET: f64 = 0.02;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LoopConfig {
    pub max_rounds: usize,
    pub max_actions_per_round: usize,
    pub parse_retries: usize,
    pub evaluator_enabled: bool,
    pub safety_abort: bool,
    pub confidence_threshold: f64,
    pub prompt_variant: EnvVariant,
    pub request: RequestSettings,
}

impl Default for LoopConfig {
    fn default() -> Self {
        LoopConfig {
            max_rounds: 5,
            max_actions_per_round: 10,
            parse_retries: 2,
            evaluator_enabled: true,
            safety_abort: true,
            confidence_threshold: 0.95,
            prompt_variant: EnvVariant::default(),
            request: RequestSettings::default(),
        }
    }
}

impl LoopConfig {
    pub fn validate(&self) -> Result<(), LoopError> {
        if self.max_rounds == 0 || self.max_actions_per_round == 0 {
            return Err(LoopError::Config("max_rounds and max_actions_per_round must be positive".into()));
        }
        if !(self.confidence_threshold > 0.5 && self.confidence_threshold < 1.0) {
            return Err(LoopError::Config(format!(
                "confidence_threshold {} is outside (0.5, 1)",
                self.confidence_threshold
            )));
        }
        Ok(())
    }

    /// Upper bound on backend calls for one episode.
    pub fn call_budget(&self) -> usize {
        self.max_rounds * (self.max_actions_per_round + self.parse_retries + 2)
    }
}

/// Scene of one episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Env {
    pub sim: SimConfig,
    pub seed: u64,
}

impl Env {
    pub fn new(sim: SimConfig, seed: u64) -> Self {
        Env { sim, seed }
    }
}

#[derive(Debug, Error)]
pub enum LoopError {
    #[error("loop configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Belief(#[from] BeliefError),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error("episode log {0}: {1}")]
    Log(String, String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpisodeStatus {
    Success,
    FailTimeout,
    FailSafety,
    FailParse,
    FailInfeasible,
    FailBackend,
}

impl EpisodeStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            EpisodeStatus::Success => "success",
            EpisodeStatus::FailTimeout => "fail_timeout",
            EpisodeStatus::FailSafety => "fail_safety",
            EpisodeStatus::FailParse => "fail_parse",
            EpisodeStatus::FailInfeasible => "fail_infeasible",
            EpisodeStatus::FailBackend => "fail_backend",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecStep {
    pub action: Action,
    pub observation: Observation,
    pub report: ExecReport,
}

/// One prompt sent to the backend and what came back.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exchange {
    pub role: Role,
    /// 0 for the first try, then one per reprompt.
    pub attempt: usize,
    pub prompt: String,
    pub response: Option<String>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Round {
    pub index: usize,
    pub evaluator_verdict: Option<Verdict>,
    /// Absent when the round ended at the evaluator.
    pub plan: Option<PlanOutput>,
    pub exec: Vec<ExecStep>,
    pub exchanges: Vec<Exchange>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendFailure {
    pub kind: String,
    pub message: String,
}

impl From<&BackendError> for BackendFailure {
    fn from(e: &BackendError) -> Self {
        BackendFailure {
            kind: e.kind().into(),
            message: e.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub task: TaskSpec,
    pub seed: u64,
    pub sim: SimConfig,
    pub config: LoopConfig,
    pub grasp_offset: [f64; 3],
    pub backend: String,
    pub initial_observation: Observation,
    pub rounds: Vec<Round>,
    /// The prior, then one entry per executed action.
    pub belief_trace: Vec<BeliefState>,
    pub status: EpisodeStatus,
    pub backend_error: Option<BackendFailure>,
    /// Scene at the end, hidden parameters included.
    pub final_state: WorldState,
    pub judgment: Option<EpisodeResult>,
}

impl Episode {
    pub fn actions(&self) -> impl Iterator<Item = &ExecStep> {
        self.rounds.iter().flat_map(|r| r.exec.iter())
    }

    pub fn action_count(&self) -> usize {
        self.actions().count()
    }

    pub fn backend_calls(&self) -> usize {
        self.rounds.iter().map(|r| r.exchanges.len()).sum()
    }

    pub fn final_observation(&self) -> &Observation {
        self.actions().last().map_or(&self.initial_observation, |s| &s.observation)
    }
}

/// History as the prompts show it.
pub fn history_of(rounds: &[Round]) -> Vec<HistoryRound> {
    rounds
        .iter()
        .filter_map(|r| {
            r.plan.as_ref().map(|p| HistoryRound {
                explanation: p.explanation.clone(),
                steps: r.exec.iter().map(|s| (s.action.clone(), s.observation.clone())).collect(),
            })
        })
        .collect()
}

enum CallFailure {
    Parse(ParseError),
    Backend(BackendError),
}

fn reprompt(base: &str, err: &ParseError) -> String {
    format!("{base}\nFormat reminder: {}", err.kind.rule())
}

#[allow(clippy::too_many_arguments)]
fn call_parsed<T>(
    backend: &mut dyn Backend,
    role: Role,
    prompt: &str,
    view: EpisodeView<'_>,
    parse: fn(&str) -> Result<T, ParseError>,
    cfg: &LoopConfig,
    exchanges: &mut Vec<Exchange>,
) -> Result<T, CallFailure> {
    let mut text = prompt.to_string();
    let mut last = None;
    for attempt in 0..=cfg.parse_retries {
        let req = cfg.request.request(&text);
        let ctx = CallContext { role, episode: Some(view) };
        let mut ex = Exchange {
            role,
            attempt,
            prompt: text.clone(),
            response: None,
            error: None,
        };
        match backend.complete(&req, &ctx) {
            Err(e) => {
                ex.error = Some(format!("{}: {e}", e.kind()));
                exchanges.push(ex);
                return Err(CallFailure::Backend(e));
            }
            Ok(resp) => {
                let parsed = parse(&resp);
                ex.response = Some(resp);
                match parsed {
                    Ok(v) => {
                        exchanges.push(ex);
                        return Ok(v);
                    }
                    Err(pe) => {
                        log::warn!("{role:?} response rejected (attempt {attempt}): {pe}");
                        ex.error = Some(pe.to_string());
                        exchanges.push(ex);
                        text = reprompt(prompt, &pe);
                        last = Some(pe);
                    }
                }
            }
        }
    }
    Err(CallFailure::Parse(last.expect("at least one attempt")))
}

pub fn run_episode(task: &TaskSpec, backend: &mut dyn Backend, env: &Env, cfg: &LoopConfig) -> Result<Episode, LoopError> {
    run_with_ablation(task, backend, env, cfg, [0.0; 3])
}

/// [`run_episode`] with the cube coupled to the gripper at `grasp_offset`.
pub fn run_with_ablation(
    task: &TaskSpec,
    backend: &mut dyn Backend,
    env: &Env,
    cfg: &LoopConfig,
    grasp_offset: [f64; 3],
) -> Result<Episode, LoopError> {
    cfg.validate()?;
    let norm = grasp_offset.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm.is_nan() || norm > MAX_GRASP_OFFSET + 1e-12 {
        return Err(LoopError::Config(format!("grasp offset {norm:.4} m exceeds {MAX_GRASP_OFFSET} m")));
    }
    let sim_cfg = &env.sim;
    let (mut state, initial) = sim::reset(task, env.seed, sim_cfg)?;
    state.set_grasp_offset(grasp_offset);
    let model = LikelihoodModel::from_config(sim_cfg);
    let mut belief = init_belief(task, &cube_ids(task.cube_count()))?;
    let mut trace = vec![belief.clone()];
    let prompts = Prompts::new(cfg.prompt_variant);
    let mut obs = initial.clone();
    let mut rounds: Vec<Round> = Vec::new();
    let mut status = None;
    let mut backend_error = None;

    for index in 0..cfg.max_rounds {
        let history = history_of(&rounds);
        let mut round = Round {
            index,
            evaluator_verdict: None,
            plan: None,
            exec: Vec::new(),
            exchanges: Vec::new(),
        };
        let view = |verdict| EpisodeView {
            task,
            sim: sim_cfg,
            belief: &belief,
            threshold: cfg.confidence_threshold,
            observation: &obs,
            rounds: &rounds,
            verdict,
            evaluator_enabled: cfg.evaluator_enabled,
        };

        let mut failure = None;
        if cfg.evaluator_enabled {
            let prompt = prompts.render_evaluator(&prompts.evaluator_context(task, sim_cfg, &history)?)?;
            match call_parsed(backend, Role::Evaluator, &prompt, view(None), parse_verdict, cfg, &mut round.exchanges) {
                Ok(v) => round.evaluator_verdict = Some(v),
                Err(f) => failure = Some(f),
            }
        }
        if failure.is_none() && round.evaluator_verdict.as_ref().is_some_and(|v| v.done) {
            rounds.push(round);
            status = Some(EpisodeStatus::Success);
            break;
        }

        let plan = match failure {
            Some(f) => Err(f),
            None => {
                let evaluation = round.evaluator_verdict.as_ref().map(|v| v.rationale.as_str());
                let prompt = prompts.render_planner(&prompts.planner_context(task, sim_cfg, &history, &obs, evaluation)?)?;
                call_parsed(
                    backend,
                    Role::Planner,
                    &prompt,
                    view(round.evaluator_verdict.as_ref()),
                    parse_plan,
                    cfg,
                    &mut round.exchanges,
                )
            }
        };
        let mut plan = match plan {
            Ok(p) => p,
            Err(CallFailure::Parse(e)) => {
                log::warn!("no parseable response in round {index}: {e}");
                rounds.push(round);
                status = Some(EpisodeStatus::FailParse);
                break;
            }
            Err(CallFailure::Backend(e)) => {
                log::error!("backend failure in round {index}: {e}");
                backend_error = Some(BackendFailure::from(&e));
                rounds.push(round);
                status = Some(EpisodeStatus::FailBackend);
                break;
            }
        };
        if plan.actions.len() > cfg.max_actions_per_round {
            log::warn!(
                "plan of {} actions truncated to {}",
                plan.actions.len(),
                cfg.max_actions_per_round
            );
            plan.actions.truncate(cfg.max_actions_per_round);
        }

        if plan.actions.iter().all(|a| *a == Action::Wait) {
            let infeasible = plan.explanation.to_lowercase().contains("infeasible");
            if infeasible || !cfg.evaluator_enabled {
                round.plan = Some(plan);
                rounds.push(round);
                status = Some(if infeasible {
                    EpisodeStatus::FailInfeasible
                } else {
                    EpisodeStatus::Success
                });
                break;
            }
        }

        let mut aborted = false;
        for action in &plan.actions {
            let prev = obs.clone();
            let (o, report) = state.apply(action);
            belief = match update(&belief, action, &o, &prev, &model) {
                Ok(b) => b,
                Err(e) => {
                    log::warn!("belief update skipped: {e}");
                    belief
                }
            };
            trace.push(belief.clone());
            obs = o.clone();
            let unsafe_step = report.status.is_safety_violation();
            round.exec.push(ExecStep {
                action: action.clone(),
                observation: o,
                report,
            });
            if cfg.safety_abort && unsafe_step {
                aborted = true;
                break;
            }
        }
        round.plan = Some(plan);
        rounds.push(round);
        if aborted {
            status = Some(EpisodeStatus::FailSafety);
            break;
        }
    }

    Ok(Episode {
        task: task.clone(),
        seed: env.seed,
        sim: sim_cfg.clone(),
        config: cfg.clone(),
        grasp_offset,
        backend: backend.name().to_string(),
        initial_observation: initial,
        rounds,
        belief_trace: trace,
        status: status.unwrap_or(EpisodeStatus::FailTimeout),
        backend_error,
        final_state: state,
        judgment: None,
    })
}

/// Belief trace recomputed offline from the logged observations.
pub fn recompute_belief_trace(episode: &Episode) -> Result<Vec<BeliefState>, BeliefError> {
    let model = LikelihoodModel::from_config(&episode.sim);
    let mut belief = init_belief(&episode.task, &cube_ids(episode.task.cube_count()))?;
    let mut trace = vec![belief.clone()];
    let mut prev = &episode.initial_observation;
    for step in episode.actions() {
        if let Ok(b) = update(&belief, &step.action, &step.observation, prev, &model) {
            belief = b;
        }
        trace.push(belief.clone());
        prev = &step.observation;
    }
    Ok(trace)
}

/// Largest absolute difference between two belief traces; infinite when
/// their shapes differ.
pub fn trace_distance(a: &[BeliefState], b: &[BeliefState]) -> f64 {
    if a.len() != b.len() {
        return f64::INFINITY;
    }
    let mut worst: f64 = 0.0;
    for (x, y) in a.iter().zip(b) {
        if x.hypotheses != y.hypotheses || x.probs.len() != y.probs.len() {
            return f64::INFINITY;
        }
        for (p, q) in x.probs.iter().zip(&y.probs) {
            worst = worst.max((p - q).abs());
        }
    }
    worst
}

#[derive(Debug, Clone, PartialEq)]
pub enum Inconsistency {
    /// Re-simulating the logged actions gave a different observation.
    Observation { step: usize },
    FinalState,
    Belief { distance: f64 },
    ActionCount { logged: usize, expected: usize },
}

impl std::fmt::Display for Inconsistency {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Inconsistency::Observation { step } => write!(f, "observation after action {step} does not match the simulator"),
            Inconsistency::FinalState => write!(f, "final state does not match the simulator"),
            Inconsistency::Belief { distance } => write!(f, "belief trace differs from recomputation by {distance:e}"),
            Inconsistency::ActionCount { logged, expected } => {
                write!(f, "belief trace has {logged} entries, expected {expected}")
            }
        }
    }
}

/// Re-runs the logged actions through the simulator and recomputes the
/// belief. Any tampering with observations or the trace shows up here.
pub fn verify_episode(episode: &Episode, belief_tol: f64) -> Result<Vec<Inconsistency>, LoopError> {
    let mut problems = Vec::new();
    let (mut state, initial) = sim::reset(&episode.task, episode.seed, &episode.sim)?;
    state.set_grasp_offset(episode.grasp_offset);
    if initial != episode.initial_observation {
        problems.push(Inconsistency::Observation { step: 0 });
    }
    for (i, step) in episode.actions().enumerate() {
        let (o, _) = state.apply(&step.action);
        if o != step.observation && !problems.contains(&Inconsistency::Observation { step: i + 1 }) {
            problems.push(Inconsistency::Observation { step: i + 1 });
        }
    }
    if state != episode.final_state {
        problems.push(Inconsistency::FinalState);
    }
    let expected = episode.action_count() + 1;
    if episode.belief_trace.len() != expected {
        problems.push(Inconsistency::ActionCount {
            logged: episode.belief_trace.len(),
            expected,
        });
    }
    let recomputed = recompute_belief_trace(episode)?;
    let d = trace_distance(&recomputed, &episode.belief_trace);
    if d > belief_tol {
        problems.push(Inconsistency::Belief { distance: d });
    }
    Ok(problems)
}

/// One line of an episode log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
#[allow(clippy::large_enum_variant)] // built one at a time, never stored in bulk
pub enum LogLine {
    Header {
        task: TaskSpec,
        seed: u64,
        sim: SimConfig,
        config: LoopConfig,
        grasp_offset: [f64; 3],
        backend: String,
        initial_observation: Observation,
    },
    Round(Round),
    Footer {
        status: EpisodeStatus,
        backend_error: Option<BackendFailure>,
        belief_trace: Vec<BeliefState>,
        final_state: WorldState,
        judgment: Option<EpisodeResult>,
    },
}

pub fn episode_log_lines(ep: &Episode) -> Vec<String> {
    let mut lines = Vec::with_capacity(ep.rounds.len() + 2);
    let json = |l: &LogLine| serde_json::to_string(l).expect("log line serializes");
    lines.push(json(&LogLine::Header {
        task: ep.task.clone(),
        seed: ep.seed,
        sim: ep.sim.clone(),
        config: ep.config.clone(),
        grasp_offset: ep.grasp_offset,
        backend: ep.backend.clone(),
        initial_observation: ep.initial_observation.clone(),
    }));
    for r in &ep.rounds {
        lines.push(json(&LogLine::Round(r.clone())));
    }
    lines.push(json(&LogLine::Footer {
        status: ep.status,
        backend_error: ep.backend_error.clone(),
        belief_trace: ep.belief_trace.clone(),
        final_state: ep.final_state.clone(),
        judgment: ep.judgment.clone(),
    }));
    lines
}

pub fn write_episode_log(ep: &Episode, path: &Path) -> Result<(), LoopError> {
    let err = |e: std::io::Error| LoopError::Log(path.display().to_string(), e.to_string());
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(err)?;
    }
    let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(err)?);
    for line in episode_log_lines(ep) {
        writeln!(f, "{line}").map_err(err)?;
    }
    f.flush().map_err(err)
}

pub fn parse_episode_log(text: &str) -> Result<Episode, String> {
    let mut header = None;
    let mut rounds = Vec::new();
    let mut footer = None;
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let parsed: LogLine = serde_json::from_str(line).map_err(|e| format!("line {}: {e}", i + 1))?;
        match parsed {
            LogLine::Header { .. } if header.is_some() => return Err(format!("line {}: second header", i + 1)),
            h @ LogLine::Header { .. } => header = Some(h),
            LogLine::Round(r) => {
                if r.index != rounds.len() {
                    return Err(format!("line {}: round index {} out of order", i + 1, r.index));
                }
                rounds.push(r);
            }
            f @ LogLine::Footer { .. } => footer = Some(f),
        }
    }
    let Some(LogLine::Header {
        task,
        seed,
        sim,
        config,
        grasp_offset,
        backend,
        initial_observation,
    }) = header
    else {
        return Err("missing header line".into());
    };
    let Some(LogLine::Footer {
        status,
        backend_error,
        belief_trace,
        final_state,
        judgment,
    }) = footer
    else {
        return Err("missing footer line".into());
    };
    Ok(Episode {
        task,
        seed,
        sim,
        config,
        grasp_offset,
        backend,
        initial_observation,
        rounds,
        belief_trace,
        status,
        backend_error,
        final_state,
        judgment,
    })
}

pub fn read_episode_log(path: &Path) -> Result<Episode, LoopError> {
    let file = std::fs::File::open(path).map_err(|e| LoopError::Log(path.display().to_string(), e.to_string()))?;
    let mut text = String::new();
    for line in std::io::BufReader::new(file).lines() {
        text.push_str(&line.map_err(|e| LoopError::Log(path.display().to_string(), e.to_string()))?);
        text.push('\n');
    }
    parse_episode_log(&text).map_err(|e| LoopError::Log(path.display().to_string(), e))
}
