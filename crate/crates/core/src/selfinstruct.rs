//! Self-instruct data pipeline: task generation, chain-of-thought
//! instruction records, a physics validator for imagined observations, and
//! dataset emission.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{run_episode, Env, EpisodeStatus, LoopConfig, LoopError};
use crate::backends::oracle::{GATHER_PREFIX, GOAL_PREFIX};
use crate::backends::{Backend, BackendError, CallContext, OracleBackend, RequestSettings, Role};
use crate::prompts::{Prompts, TaskGenConfig, TemplateError, COT_QUESTIONS};
use crate::protocol::{
    parse_cot_input, parse_cot_output, parse_instruction_blocks, parse_task_list, render_cot_input, render_cot_output,
    CotInput, InstructionRecord, ParseError, PastRound,
};
use crate::sim::{Action, Observation, Pose7, SimConfig};
use crate::task::{cube_ids, split_tag_prefix, Tag, TaskSpec};

pub const ENVIRONMENT_LINE: &str = "Environment: Franka Panda robot with blocks on the table.";

#[derive(Debug, Error)]
pub enum GenError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error(transparent)]
    Loop(#[from] LoopError),
    #[error("oracle failed on {task} seed {seed}: {status}")]
    Oracle { task: String, seed: u64, status: String },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> GenError + '_ {
    move |source| GenError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Which of the three chain-of-thought questions a record asks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CotQuestion {
    Sufficiency,
    Gather,
    Solve,
}

impl CotQuestion {
    pub const ALL: [CotQuestion; 3] = [CotQuestion::Sufficiency, CotQuestion::Gather, CotQuestion::Solve];

    pub fn text(self) -> &'static str {
        COT_QUESTIONS[self as usize]
    }

    pub fn as_str(self) -> &'static str {
        match self {
            CotQuestion::Sufficiency => "sufficiency",
            CotQuestion::Gather => "gather",
            CotQuestion::Solve => "solve",
        }
    }

    /// Match after collapsing whitespace.
    pub fn from_text(text: &str) -> Option<CotQuestion> {
        let norm = normalize_ws(text);
        CotQuestion::ALL.into_iter().find(|q| normalize_ws(q.text()) == norm)
    }
}

fn normalize_ws(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn normalize_description(text: &str) -> String {
    normalize_ws(&text.to_lowercase()).trim_end_matches(['.', '*', ' ']).to_string()
}

// ---------------------------------------------------------------- tasks

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratedTasks {
    pub requested: usize,
    pub tasks: Vec<TaskSpec>,
    pub duplicates: usize,
}

impl GeneratedTasks {
    pub fn exploration_count(&self) -> usize {
        self.tasks.iter().filter(|t| t.exploration_needed).count()
    }

    pub fn exploration_fraction(&self) -> f64 {
        if self.tasks.is_empty() {
            0.0
        } else {
            self.exploration_count() as f64 / self.tasks.len() as f64
        }
    }
}

/// Drop later tasks whose normalized description repeats an earlier one.
pub fn dedupe_tasks(tasks: Vec<TaskSpec>) -> (Vec<TaskSpec>, usize) {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    let mut dropped = 0;
    for t in tasks {
        if seen.insert(normalize_description(&t.description)) {
            out.push(t);
        } else {
            dropped += 1;
        }
    }
    (out, dropped)
}

pub fn generate_tasks(
    backend: &mut dyn Backend,
    cfg: &TaskGenConfig,
    request: &RequestSettings,
) -> Result<GeneratedTasks, GenError> {
    let prompt = Prompts::default().render_taskgen(cfg)?;
    let text = backend.complete(&request.request(&prompt), &CallContext::bare(Role::TaskGen))?;
    let (tasks, duplicates) = dedupe_tasks(parse_task_list(&text)?);
    if duplicates > 0 {
        log::info!("{duplicates} duplicate tasks collapsed");
    }
    if tasks.len() * 2 < cfg.count {
        log::warn!("asked for {} tasks, parsed {}", cfg.count, tasks.len());
    }
    let out = GeneratedTasks {
        requested: cfg.count,
        tasks,
        duplicates,
    };
    log::info!(
        "{} tasks, {} need exploration ({:.0}%)",
        out.tasks.len(),
        out.exploration_count(),
        100.0 * out.exploration_fraction()
    );
    Ok(out)
}

// ---------------------------------------------------------- trajectories

/// Same rounding as the record text, so parsed records compare equal.
fn round3(x: f64) -> f64 {
    let r = (x * 1000.0).round() / 1000.0;
    if r == 0.0 {
        0.0
    } else {
        r
    }
}

fn obs_vector(obs: &Observation) -> Vec<f64> {
    obs.flatten().into_iter().map(round3).collect()
}

fn round_pose(p: &Pose7) -> Pose7 {
    Pose7::new(p.position.map(round3), p.orientation.map(round3))
}

/// Dialect form of an executed action: places name the cube being placed.
fn dialect_action(action: &Action, holding: &mut Option<String>) -> Action {
    match action {
        Action::Pick { object } => {
            holding.get_or_insert_with(|| object.clone());
            action.clone()
        }
        Action::Place { pose, object } => Action::Place {
            pose: round_pose(pose),
            object: object.clone().or_else(|| holding.take()),
        },
        Action::Reach { pose } => Action::Reach { pose: round_pose(pose) },
        Action::Reset => {
            holding.take();
            Action::Reset
        }
        Action::Wait => Action::Wait,
    }
}

/// Successful oracle rollout: the initial vector and one post-action vector
/// per executed skill.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub task: String,
    pub seed: u64,
    pub initial: Vec<f64>,
    pub steps: Vec<(Action, Vec<f64>)>,
}

impl Trajectory {
    /// The "Example observations" block.
    pub fn render(&self) -> String {
        let mut out = format!("Task: {}\nInitial observation: {}\n", self.task, vec_text(&self.initial));
        for (i, (action, obs)) in self.steps.iter().enumerate() {
            out.push_str(&format!(
                "Action {}: {}\nObservation {}: {}\n",
                i + 1,
                crate::protocol::render_dialect_action(action),
                i + 1,
                vec_text(obs)
            ));
        }
        out
    }

    /// The rollout as a single-round record input, for validation.
    pub fn as_input(&self) -> CotInput {
        let (actions, observations): (Vec<_>, Vec<_>) = self.steps.iter().cloned().unzip();
        CotInput {
            current: observations.last().cloned().unwrap_or_else(|| self.initial.clone()),
            past: vec![PastRound {
                index: 1,
                text: "Example rollout.".into(),
                actions,
                observations,
            }],
        }
    }
}

fn vec_text(values: &[f64]) -> String {
    let parts: Vec<String> = values.iter().map(|v| crate::protocol::fmt_short(*v)).collect();
    format!("[{}]", parts.join(", "))
}

/// Oracle rollouts for each task and seed. Failures are skipped for tagged
/// tasks; on a tag-free task a failure means the oracle is broken and is an
/// error.
pub fn collect_reference_trajectories(
    tasks: &[TaskSpec],
    seeds: &[u64],
    sim: &SimConfig,
) -> Result<Vec<Trajectory>, GenError> {
    let mut out = Vec::new();
    for task in tasks.iter().filter(|t| t.is_runnable()) {
        for &seed in seeds {
            let ep = run_episode(task, &mut OracleBackend::new(), &Env::new(sim.clone(), seed), &LoopConfig::default())?;
            if ep.status != EpisodeStatus::Success {
                if task.tags.is_empty() {
                    return Err(GenError::Oracle {
                        task: task.id.clone(),
                        seed,
                        status: ep.status.as_str().into(),
                    });
                }
                log::warn!("oracle failed on {} seed {seed}; trajectory dropped", task.id);
                continue;
            }
            let mut holding = None;
            let steps = ep
                .actions()
                .map(|s| (dialect_action(&s.action, &mut holding), obs_vector(&s.observation)))
                .collect();
            out.push(Trajectory {
                task: task.generator_text(),
                seed,
                initial: obs_vector(&ep.initial_observation),
                steps,
            });
        }
    }
    Ok(out)
}

// ---------------------------------------------------------- instructions

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderingFlag {
    pub record_index: usize,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratedInstructions {
    pub records: Vec<InstructionRecord>,
    pub ordering: Vec<OrderingFlag>,
}

/// Records split into solve attempts: a new attempt starts when the past
/// list is empty or does not extend the previous record's.
fn attempts(records: &[InstructionRecord]) -> Vec<Vec<&InstructionRecord>> {
    let mut out: Vec<Vec<&InstructionRecord>> = Vec::new();
    for rec in records {
        let continues = out.last().and_then(|a| a.last()).is_some_and(|prev| {
            !rec.input.past.is_empty()
                && rec.input.past.len() >= prev.input.past.len()
                && rec.input.past[..prev.input.past.len()] == prev.input.past[..]
        });
        if continues {
            out.last_mut().expect("non-empty").push(rec);
        } else {
            out.push(vec![rec]);
        }
    }
    out
}

/// The sufficiency question must come before any gather or solve question
/// within each attempt. Unknown questions are flagged as well.
pub fn check_cot_order(records: &[InstructionRecord]) -> Vec<OrderingFlag> {
    let mut flags = Vec::new();
    for attempt in attempts(records) {
        let mut asked_sufficiency = false;
        for rec in attempt {
            match CotQuestion::from_text(&rec.instruction) {
                None => flags.push(OrderingFlag {
                    record_index: rec.index,
                    detail: format!("unknown question: {}", rec.instruction),
                }),
                Some(CotQuestion::Sufficiency) => asked_sufficiency = true,
                Some(q) if !asked_sufficiency => flags.push(OrderingFlag {
                    record_index: rec.index,
                    detail: format!("{} question before the sufficiency question", q.as_str()),
                }),
                Some(_) => {}
            }
        }
    }
    flags
}

pub fn generate_instructions(
    backend: &mut dyn Backend,
    task: &TaskSpec,
    trajectories: &[Trajectory],
    examples: &[InstructionRecord],
    request: &RequestSettings,
) -> Result<GeneratedInstructions, GenError> {
    let prompts = Prompts::default();
    let rendered: Vec<String> = trajectories.iter().map(Trajectory::render).collect();
    let prompt = prompts.render_instructgen(task, &prompts.function_list()?, &rendered, examples)?;
    let text = backend.complete(&request.request(&prompt), &CallContext::bare(Role::InstructGen))?;
    let mut records = parse_instruction_blocks(&text)?;
    for rec in &mut records {
        if rec.task.is_empty() {
            rec.task = task.generator_text();
        }
    }
    let ordering = check_cot_order(&records);
    for f in &ordering {
        log::warn!("record {}: {}", f.record_index, f.detail);
    }
    Ok(GeneratedInstructions { records, ordering })
}

fn strip_oracle_prefix(text: &str) -> String {
    let t = text.trim();
    let t = t.strip_prefix(GATHER_PREFIX).or_else(|| t.strip_prefix(GOAL_PREFIX)).unwrap_or(t);
    normalize_ws(t)
}

/// Instruction records from one oracle episode: a sufficiency record before
/// every planning round, then a gather or solve record with the plan.
pub fn oracle_records(task: &TaskSpec, seed: u64, sim: &SimConfig) -> Result<Vec<InstructionRecord>, GenError> {
    let ep = run_episode(task, &mut OracleBackend::new(), &Env::new(sim.clone(), seed), &LoopConfig::default())?;
    if ep.status != EpisodeStatus::Success {
        return Err(GenError::Oracle {
            task: task.id.clone(),
            seed,
            status: ep.status.as_str().into(),
        });
    }
    let task_text = task.generator_text();
    let mut records = Vec::new();
    let mut past: Vec<PastRound> = Vec::new();
    let mut current = obs_vector(&ep.initial_observation);
    let push = |records: &mut Vec<InstructionRecord>, q: CotQuestion, past: &[PastRound], current: &[f64], verbal: String, actions: Vec<Action>| {
        records.push(InstructionRecord {
            index: records.len() + 1,
            task: task_text.clone(),
            instruction: q.text().to_string(),
            input: CotInput {
                current: current.to_vec(),
                past: past.to_vec(),
            },
            output_verbal: verbal,
            output_actions: actions,
        });
    };
    for round in &ep.rounds {
        let Some(plan) = &round.plan else { continue };
        let gather = plan.explanation.trim_start().starts_with(GATHER_PREFIX);
        let rationale = round.evaluator_verdict.as_ref().map_or(String::new(), |v| normalize_ws(&v.rationale));
        let answer = format!("{} {rationale}", if gather { "No." } else { "Yes." }).trim().to_string();
        push(&mut records, CotQuestion::Sufficiency, &past, &current, answer.clone(), Vec::new());
        past.push(PastRound {
            index: past.len() + 1,
            text: answer,
            actions: Vec::new(),
            observations: Vec::new(),
        });

        let mut holding = None;
        let actions: Vec<Action> = round.exec.iter().map(|s| dialect_action(&s.action, &mut holding)).collect();
        let q = if gather { CotQuestion::Gather } else { CotQuestion::Solve };
        let verbal = strip_oracle_prefix(&plan.explanation);
        push(&mut records, q, &past, &current, verbal.clone(), actions.clone());
        let observations: Vec<Vec<f64>> = round.exec.iter().map(|s| obs_vector(&s.observation)).collect();
        if let Some(last) = observations.last() {
            current = last.clone();
        }
        past.push(PastRound {
            index: past.len() + 1,
            text: verbal,
            actions,
            observations,
        });
    }
    Ok(records)
}

// ------------------------------------------------------------ validation

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    GraspPoseMismatch,
    SupportViolation,
    Teleport,
    ForceSign,
    VectorArity,
}

impl ViolationKind {
    pub const ALL: [ViolationKind; 5] = [
        ViolationKind::GraspPoseMismatch,
        ViolationKind::SupportViolation,
        ViolationKind::Teleport,
        ViolationKind::ForceSign,
        ViolationKind::VectorArity,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ViolationKind::GraspPoseMismatch => "grasp_pose_mismatch",
            ViolationKind::SupportViolation => "support_violation",
            ViolationKind::Teleport => "teleport",
            ViolationKind::ForceSign => "force_sign",
            ViolationKind::VectorArity => "vector_arity",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub kind: ViolationKind,
    pub record_index: usize,
    pub detail: String,
}

/// Thresholds in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ValidatorConfig {
    pub grasp_tolerance: f64,
    pub support_tolerance: f64,
    pub teleport_tolerance: f64,
}

impl Default for ValidatorConfig {
    fn default() -> Self {
        ValidatorConfig {
            grasp_tolerance: 0.03,
            support_tolerance: 0.01,
            teleport_tolerance: 0.01,
        }
    }
}

fn cube_count_of(task: &str) -> usize {
    let (tags, _, _) = split_tag_prefix(task);
    if tags.contains(&Tag::Three) {
        3
    } else {
        2
    }
}

fn fmt_p(p: &[f64; 3]) -> String {
    format!("({}, {}, {})", round3(p[0]), round3(p[1]), round3(p[2]))
}

fn dist(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    (0..3).map(|i| (a[i] - b[i]).powi(2)).sum::<f64>().sqrt()
}

/// Resting on the table or on top of another cube.
fn supported(id: &str, obs: &Observation, sim: &SimConfig, tol: f64) -> bool {
    let p = obs.cube_poses[id].position;
    if (p[2] - sim.rest_z()).abs() <= tol {
        return true;
    }
    let half = sim.half_size();
    obs.cube_poses.iter().any(|(other, q)| {
        let q = q.position;
        other != id
            && (p[0] - q[0]).abs() < half
            && (p[1] - q[1]).abs() < half
            && (p[2] - (q[2] + sim.cube_size)).abs() <= tol
    })
}

/// Observation sequence of a record: past observations in order, then the
/// current vector, each with the actions executed since the previous one.
/// Actions without a matching observation carry over to the next vector.
fn sequence(input: &CotInput) -> Vec<(String, &Vec<f64>, Vec<&Action>)> {
    let mut out = Vec::new();
    let mut pending: Vec<&Action> = Vec::new();
    for r in &input.past {
        let mut acts = r.actions.iter();
        for (k, obs) in r.observations.iter().enumerate() {
            pending.extend(acts.next());
            out.push((format!("round {} observation {}", r.index, k + 1), obs, std::mem::take(&mut pending)));
        }
        pending.extend(acts);
    }
    out.push(("current observation".to_string(), &input.current, pending));
    out
}

/// Physics checks on the imagined observations of one record.
pub fn validate_record(record: &InstructionRecord, sim: &SimConfig, cfg: &ValidatorConfig) -> Vec<Violation> {
    let n = cube_count_of(&record.task);
    let ids = cube_ids(n);
    let expected = Observation::flat_len(n);
    let mut out = Vec::new();
    let mut flag = |kind, detail: String| {
        out.push(Violation {
            kind,
            record_index: record.index,
            detail,
        })
    };
    let mut held: Option<String> = None;
    let mut prev: Option<Observation> = None;
    for (label, vector, actions) in sequence(&record.input) {
        let Some(obs) = (vector.len() == expected).then(|| Observation::unflatten(vector, &ids)).flatten() else {
            flag(
                ViolationKind::VectorArity,
                format!("{label} has {} values, {expected} expected for {n} cubes", vector.len()),
            );
            continue;
        };

        let mut acted: BTreeSet<String> = BTreeSet::new();
        let mut grasped: Option<String> = None;
        for a in actions {
            match a {
                Action::Pick { object } => {
                    if held.is_none() {
                        acted.insert(object.clone());
                        grasped = Some(object.clone());
                        held = Some(object.clone());
                    }
                }
                Action::Place { object, .. } => {
                    acted.extend(held.take());
                    acted.extend(object.clone());
                    grasped = None;
                }
                Action::Reset => {
                    acted.extend(held.take());
                    grasped = None;
                }
                Action::Reach { .. } => acted.extend(held.clone()),
                Action::Wait => {}
            }
        }
        // A grasp that left the cube in place on a support with the gripper
        // open did not pick it up.
        if let Some(g) = &grasped {
            if obs.cube_poses.contains_key(g) {
                let closed = obs.gripper.iter().any(|f| *f < sim.finger_open - 1e-6);
                let moved = prev
                    .as_ref()
                    .and_then(|p| p.cube_poses.get(g))
                    .is_some_and(|p| dist(&p.position, &obs.cube_poses[g].position) > cfg.teleport_tolerance);
                let lifted = !supported(g, &obs, sim, cfg.support_tolerance);
                if !(closed || moved || lifted) {
                    held = None;
                }
            }
        }

        if let Some(p) = &prev {
            for id in &ids {
                if acted.contains(id) {
                    continue;
                }
                let (a, b) = (p.cube_poses[id].position, obs.cube_poses[id].position);
                if dist(&a, &b) > cfg.teleport_tolerance {
                    flag(
                        ViolationKind::Teleport,
                        format!("{id} moved from {} to {} at {label} without acting on it", fmt_p(&a), fmt_p(&b)),
                    );
                }
            }
        }

        for id in &ids {
            if held.as_deref() == Some(id.as_str()) {
                let c = obs.cube_poses[id].position;
                let d = dist(&c, &obs.eef_pose.position);
                if d > cfg.grasp_tolerance {
                    flag(
                        ViolationKind::GraspPoseMismatch,
                        format!(
                            "held {id} at {} is {:.3} m from the end effector at {} ({label})",
                            fmt_p(&c),
                            d,
                            fmt_p(&obs.eef_pose.position)
                        ),
                    );
                }
            } else if !supported(id, &obs, sim, cfg.support_tolerance) {
                flag(
                    ViolationKind::SupportViolation,
                    format!("free {id} at z = {} has no support ({label})", round3(obs.cube_poses[id].position[2])),
                );
            }
        }
        if let Some(h) = &held {
            if obs.force[2] > 0.0 {
                flag(
                    ViolationKind::ForceSign,
                    format!("force z = {} while holding {h} ({label})", obs.force[2]),
                );
            }
        }
        prev = Some(obs);
    }
    out
}

// --------------------------------------------------------------- dataset

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmitPolicy {
    DropViolations,
    KeepFlagged,
}

impl EmitPolicy {
    pub fn as_str(self) -> &'static str {
        match self {
            EmitPolicy::DropViolations => "drop_violations",
            EmitPolicy::KeepFlagged => "keep_flagged",
        }
    }
}

impl std::str::FromStr for EmitPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "drop_violations" => Ok(EmitPolicy::DropViolations),
            "keep_flagged" => Ok(EmitPolicy::KeepFlagged),
            other => Err(format!("unknown policy {other}; expected drop_violations or keep_flagged")),
        }
    }
}

/// One line of the dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetLine {
    pub instruction: String,
    pub input: String,
    pub output: String,
}

/// Raw split line: the dataset fields plus the validator findings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawLine {
    #[serde(flatten)]
    pub line: DatasetLine,
    pub violations: Vec<Violation>,
}

pub fn dataset_line(rec: &InstructionRecord) -> DatasetLine {
    let question = CotQuestion::from_text(&rec.instruction).map_or(rec.instruction.trim(), |q| q.text());
    DatasetLine {
        instruction: format!("{ENVIRONMENT_LINE}\nTask: {}\n{question}\n", rec.task),
        input: render_cot_input(&rec.input),
        output: render_cot_output(&rec.output_verbal, &rec.output_actions),
    }
}

/// Inverse of [`dataset_line`].
pub fn parse_dataset_line(line: &DatasetLine, index: usize) -> Result<InstructionRecord, ParseError> {
    let mut task = String::new();
    let mut question = Vec::new();
    for l in line.instruction.lines().map(str::trim).filter(|l| !l.is_empty()) {
        if let Some(t) = l.strip_prefix("Task:") {
            task = t.trim().to_string();
        } else if !l.starts_with("Environment:") {
            question.push(l);
        }
    }
    let (verbal, actions) = parse_cot_output(&line.output)?;
    Ok(InstructionRecord {
        index,
        task,
        instruction: question.join(" "),
        input: parse_cot_input(&line.input)?,
        output_verbal: verbal,
        output_actions: actions,
    })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TaskCoverage {
    pub records: usize,
    pub emitted: usize,
    pub questions: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub policy: EmitPolicy,
    pub dataset: String,
    pub raw: String,
    pub total_records: usize,
    pub emitted: usize,
    pub dropped: usize,
    pub flagged: usize,
    pub violations: BTreeMap<String, usize>,
    pub per_task: BTreeMap<String, TaskCoverage>,
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map_or("dataset".into(), |s| s.to_string_lossy().into_owned());
    path.with_file_name(format!("{stem}{suffix}"))
}

pub fn raw_path(path: &Path) -> PathBuf {
    sibling(path, ".raw.jsonl")
}

pub fn manifest_path(path: &Path) -> PathBuf {
    sibling(path, ".manifest.json")
}

fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), GenError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let mut f = fs::File::create(path).map_err(io_err(path))?;
    for row in rows {
        let line = serde_json::to_string(row).expect("dataset rows serialize");
        writeln!(f, "{line}").map_err(io_err(path))?;
    }
    Ok(())
}

/// Validate, then write the dataset at `path`, the unfiltered split next to
/// it (`<stem>.raw.jsonl`) and a manifest (`<stem>.manifest.json`).
pub fn emit_dataset(
    records: &[InstructionRecord],
    sim: &SimConfig,
    validator: &ValidatorConfig,
    path: &Path,
    policy: EmitPolicy,
) -> Result<DatasetManifest, GenError> {
    let mut kept = Vec::new();
    let mut raw = Vec::new();
    let mut histogram: BTreeMap<String, usize> = ViolationKind::ALL.iter().map(|k| (k.as_str().to_string(), 0)).collect();
    let mut per_task: BTreeMap<String, TaskCoverage> = BTreeMap::new();
    let mut flagged = 0;
    for rec in records {
        let violations = validate_record(rec, sim, validator);
        for v in &violations {
            *histogram.entry(v.kind.as_str().to_string()).or_default() += 1;
        }
        let line = dataset_line(rec);
        let keep = violations.is_empty() || policy == EmitPolicy::KeepFlagged;
        if !violations.is_empty() {
            flagged += 1;
        }
        let cov = per_task.entry(rec.task.clone()).or_default();
        cov.records += 1;
        let q = CotQuestion::from_text(&rec.instruction).map_or("unknown", CotQuestion::as_str);
        *cov.questions.entry(q.to_string()).or_default() += 1;
        if keep {
            cov.emitted += 1;
            kept.push(line.clone());
        }
        raw.push(RawLine { line, violations });
    }
    let raw_file = raw_path(path);
    write_jsonl(path, &kept)?;
    write_jsonl(&raw_file, &raw)?;
    let manifest = DatasetManifest {
        policy,
        dataset: path.file_name().map_or(String::new(), |s| s.to_string_lossy().into_owned()),
        raw: raw_file.file_name().map_or(String::new(), |s| s.to_string_lossy().into_owned()),
        total_records: records.len(),
        emitted: kept.len(),
        dropped: records.len() - kept.len(),
        flagged,
        violations: histogram,
        per_task,
    };
    let mpath = manifest_path(path);
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&mpath, text + "\n").map_err(io_err(&mpath))?;
    Ok(manifest)
}

/// Read a dataset or raw split back into records, numbered from 1.
pub fn read_dataset(path: &Path) -> Result<Vec<InstructionRecord>, GenError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (i, l) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let fail = |message: String| GenError::Format {
            path: path.to_path_buf(),
            message: format!("line {}: {message}", i + 1),
        };
        let line: DatasetLine = serde_json::from_str(l).map_err(|e| fail(e.to_string()))?;
        out.push(parse_dataset_line(&line, out.len() + 1).map_err(|e| fail(e.to_string()))?);
    }
    Ok(out)
}

/// Records stored as a JSON array (the `gen instructions` output).
pub fn write_records(records: &[InstructionRecord], path: &Path) -> Result<(), GenError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let text = serde_json::to_string_pretty(records).expect("records serialize");
    fs::write(path, text + "\n").map_err(io_err(path))
}

pub fn read_records(path: &Path) -> Result<Vec<InstructionRecord>, GenError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| GenError::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Count of violations per kind, every kind present.
pub fn violation_histogram(violations: &[Violation]) -> BTreeMap<&'static str, usize> {
    let mut h: BTreeMap<&'static str, usize> = ViolationKind::ALL.iter().map(|k| (k.as_str(), 0)).collect();
    for v in violations {
        *h.entry(v.kind.as_str()).or_default() += 1;
    }
    h
}
