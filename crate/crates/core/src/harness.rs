//! Evaluation: the six benchmark tasks, a judge that checks the goal on the
//! true hidden parameters and insists the decision was informed, seeded
//! suites and Table-2-shaped reports.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agent::{run_with_ablation, write_episode_log, Env, Episode, EpisodeStatus, LoopConfig};
use crate::backends::BackendFactory;
use crate::belief::{map_hypothesis, true_hypothesis};
use crate::goals::{goal_holds, GoalScene, GoalTolerance};
use crate::sim::{Action, ExecStatus, SimConfig, WorldState};
use crate::task::{GoalSchema, Tag, TaskSpec};

/// Published success counts out of 10, tasks 1 to 6.
pub const REFERENCE_WITH_EVALUATOR: [u32; 6] = [10, 10, 10, 8, 7, 8];
pub const REFERENCE_WITHOUT_EVALUATOR: [u32; 6] = [10, 10, 9, 4, 6, 4];

pub fn register_tasks() -> Vec<TaskSpec> {
    vec![
        TaskSpec::new("T1", [], "Stack one block onto another.").with_goal(GoalSchema::StackAny),
        TaskSpec::new("T2", [], "Move the blocks to the corners of the table.").with_goal(GoalSchema::BlocksToCorners),
        TaskSpec::new("T3", [Tag::Mass], "Pick up the heavier block.")
            .with_goal(GoalSchema::HoldHeavier)
            .with_exploration(),
        TaskSpec::new("T4", [Tag::Mass], "Stack the lighter block on the heavier.")
            .with_goal(GoalSchema::StackLighterOnHeavier)
            .with_exploration(),
        TaskSpec::new("T5", [Tag::Fix], "Pick up the movable block and put it at the table corner.")
            .with_goal(GoalSchema::MovableToCorner)
            .with_exploration(),
        TaskSpec::new("T6", [Tag::Fix], "Find the movable block and put it on the fixed block.")
            .with_goal(GoalSchema::MovableOnFixed)
            .with_exploration(),
    ]
}

/// Registry lookup by `T4`, `t4` or `4`.
pub fn task_by_id(id: &str) -> Option<TaskSpec> {
    let id = id.trim();
    let want = if id.chars().all(|c| c.is_ascii_digit()) {
        format!("T{id}")
    } else {
        id.to_uppercase()
    };
    register_tasks().into_iter().find(|t| t.id == want)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureClass {
    None,
    Execution,
    BeliefUpdate,
    Parse,
    Timeout,
    Safety,
    Backend,
}

impl FailureClass {
    pub const ALL: [FailureClass; 7] = [
        FailureClass::None,
        FailureClass::Execution,
        FailureClass::BeliefUpdate,
        FailureClass::Parse,
        FailureClass::Timeout,
        FailureClass::Safety,
        FailureClass::Backend,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FailureClass::None => "none",
            FailureClass::Execution => "execution",
            FailureClass::BeliefUpdate => "belief_update",
            FailureClass::Parse => "parse",
            FailureClass::Timeout => "timeout",
            FailureClass::Safety => "safety",
            FailureClass::Backend => "backend",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub success: bool,
    pub lucky: bool,
    pub failure_class: FailureClass,
    pub rounds_used: usize,
    pub actions_used: usize,
    pub notes: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct JudgeOptions {
    /// Count goal-reached-by-chance episodes as successes.
    pub count_lucky: bool,
    pub tolerance: GoalTolerance,
}

/// Cubes whose placement realizes the goal in `state`.
fn goal_cubes(schema: GoalSchema, scene: &GoalScene, truth: &crate::belief::Hypothesis, cfg: &SimConfig, tol: &GoalTolerance) -> Vec<String> {
    let ids: Vec<&String> = scene.positions.keys().collect();
    let stacked_uppers = |pred: &dyn Fn(&str, &str) -> bool| -> Vec<String> {
        ids.iter()
            .flat_map(|a| ids.iter().map(move |b| (*a, *b)))
            .filter(|(a, b)| a != b && pred(a, b) && crate::goals::stacked(scene, a, b, cfg.cube_size, tol))
            .map(|(a, _)| a.clone())
            .collect()
    };
    match schema {
        GoalSchema::StackAny => stacked_uppers(&|_, _| true),
        GoalSchema::StackLighterOnHeavier => {
            let order = truth.by_weight_desc();
            order.last().cloned().into_iter().collect()
        }
        GoalSchema::MovableOnFixed => stacked_uppers(&|a, b| !truth.is_fixed(a) && truth.is_fixed(b)),
        GoalSchema::HoldHeavier => scene.held.clone().into_iter().collect(),
        GoalSchema::BlocksToCorners | GoalSchema::MovableToCorner => ids
            .iter()
            .filter(|id| !truth.is_fixed(id) && crate::goals::corner_of(&scene.positions[**id], cfg, tol.corner_radius).is_some())
            .map(|id| id.to_string())
            .collect(),
    }
}

fn last_pick_of(actions: &[&Action], cube: &str) -> Option<usize> {
    actions
        .iter()
        .rposition(|a| matches!(a, Action::Pick { object } if object == cube))
}

/// Index `k` of the committing action: `belief_trace[k]` is the belief the
/// agent held when it started that action.
pub fn commit_index(episode: &Episode, final_state: &WorldState, opts: &JudgeOptions) -> Option<usize> {
    let actions: Vec<&Action> = episode.actions().map(|s| &s.action).collect();
    let schema = episode.task.goal_schema?;
    let truth = true_hypothesis(
        &final_state.cubes.iter().map(|c| c.id.clone()).collect::<Vec<_>>(),
        &final_state.masses(),
        &final_state.fixed_flags(),
    );
    let scene = GoalScene::from_state(final_state);
    let cubes = goal_cubes(schema, &scene, &truth, &final_state.config, &opts.tolerance);
    let picks: Vec<usize> = cubes.iter().filter_map(|c| last_pick_of(&actions, c)).collect();
    picks
        .into_iter()
        .min()
        .or_else(|| actions.iter().rposition(|a| matches!(a, Action::Pick { .. })))
}

pub fn judge(episode: &Episode, final_state: &WorldState, opts: &JudgeOptions) -> EpisodeResult {
    let task = &episode.task;
    let ids: Vec<String> = final_state.cubes.iter().map(|c| c.id.clone()).collect();
    let truth = true_hypothesis(&ids, &final_state.masses(), &final_state.fixed_flags());
    let scene = GoalScene::from_state(final_state);
    let goal = task
        .goal_schema
        .is_some_and(|s| goal_holds(s, &scene, &truth, &final_state.config, &opts.tolerance));
    let threshold = episode.config.confidence_threshold;
    let commit = commit_index(episode, final_state, opts);
    let belief_at = |k: usize| episode.belief_trace.get(k).or(episode.belief_trace.last());
    let at_commit = commit.and_then(belief_at).or(episode.belief_trace.last());
    let true_idx = at_commit.and_then(|b| b.true_index(&final_state.masses(), &final_state.fixed_flags()));
    let sound = !task.has_uncertainty()
        || match (at_commit, true_idx) {
            (Some(b), Some(i)) => b.probs[i] >= threshold,
            _ => false,
        };
    let map_wrong = task.has_uncertainty()
        && match (at_commit, true_idx) {
            (Some(b), Some(i)) => map_hypothesis(b).0 != i,
            _ => true,
        };
    let lucky = goal && !sound;
    let success = goal && (sound || opts.count_lucky);
    let exec_failed = episode.actions().any(|s| s.report.status != ExecStatus::Ok);

    let mut notes = Vec::new();
    if let Some(k) = commit {
        notes.push(format!("commit at action {k}"));
    }
    if lucky {
        notes.push("goal reached without sufficient information".into());
    }
    if let Some(e) = &episode.backend_error {
        notes.push(format!("backend {}: {}", e.kind, e.message));
    }
    let failure_class = if success {
        FailureClass::None
    } else {
        match episode.status {
            EpisodeStatus::FailParse => FailureClass::Parse,
            EpisodeStatus::FailSafety => FailureClass::Safety,
            EpisodeStatus::FailBackend => FailureClass::Backend,
            _ if lucky || map_wrong => FailureClass::BeliefUpdate,
            _ if exec_failed => FailureClass::Execution,
            EpisodeStatus::FailTimeout => FailureClass::Timeout,
            _ => FailureClass::Execution,
        }
    };
    EpisodeResult {
        success,
        lucky,
        failure_class,
        rounds_used: episode.rounds.len(),
        actions_used: episode.action_count(),
        notes: notes.join("; "),
    }
}

/// One configuration compared in a report row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Arm {
    pub label: String,
    pub evaluator_enabled: bool,
    #[serde(default)]
    pub grasp_offset: [f64; 3],
}

impl Arm {
    pub fn with_evaluator() -> Self {
        Arm {
            label: "evaluator".into(),
            evaluator_enabled: true,
            grasp_offset: [0.0; 3],
        }
    }

    pub fn without_evaluator() -> Self {
        Arm {
            label: "no_evaluator".into(),
            evaluator_enabled: false,
            grasp_offset: [0.0; 3],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SuiteConfig {
    pub seeds_per_task: u64,
    pub first_seed: u64,
    pub sim: SimConfig,
    pub loop_config: LoopConfig,
    pub arms: Vec<Arm>,
    /// Worker threads; 0 lets the pool decide.
    pub workers: usize,
    /// Where per-episode logs go; none keeps them in memory only.
    pub log_dir: Option<PathBuf>,
    pub judge: JudgeOptions,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        SuiteConfig {
            seeds_per_task: 10,
            first_seed: 0,
            sim: SimConfig::default(),
            loop_config: LoopConfig::default(),
            arms: vec![Arm::with_evaluator()],
            workers: 0,
            log_dir: None,
            judge: JudgeOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub arm: String,
    pub task: String,
    pub seed: u64,
    pub status: Option<EpisodeStatus>,
    pub result: EpisodeResult,
    /// Relative to the suite log directory.
    pub log: Option<PathBuf>,
    /// Set when the episode could not run at all.
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskRow {
    pub task: String,
    pub episodes: usize,
    pub successes: usize,
    pub lucky: usize,
    pub failures: BTreeMap<FailureClass, usize>,
    pub mean_rounds: f64,
    pub mean_actions: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmResults {
    pub arm: Arm,
    pub backend: String,
    pub rows: Vec<TaskRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteResults {
    pub arms: Vec<ArmResults>,
    pub episodes: Vec<EpisodeRecord>,
}

impl SuiteResults {
    pub fn total_successes(&self) -> usize {
        self.arms.iter().flat_map(|a| &a.rows).map(|r| r.successes).sum()
    }

    pub fn total_episodes(&self) -> usize {
        self.episodes.len()
    }

    pub fn arm(&self, label: &str) -> Option<&ArmResults> {
        self.arms.iter().find(|a| a.arm.label == label)
    }
}

fn failed_record(arm: &str, task: &str, seed: u64, error: String) -> EpisodeRecord {
    EpisodeRecord {
        arm: arm.into(),
        task: task.into(),
        seed,
        status: None,
        result: EpisodeResult {
            success: false,
            lucky: false,
            failure_class: FailureClass::Backend,
            rounds_used: 0,
            actions_used: 0,
            notes: error.clone(),
        },
        log: None,
        error: Some(error),
    }
}

/// Runs one judged episode. Setup errors become a failed record.
pub fn run_judged(
    task: &TaskSpec,
    seed: u64,
    arm: &Arm,
    factory: &dyn BackendFactory,
    cfg: &SuiteConfig,
) -> (EpisodeRecord, Option<Episode>) {
    let mut backend = match factory.make() {
        Ok(b) => b,
        Err(e) => return (failed_record(&arm.label, &task.id, seed, format!("{}: {e}", e.kind())), None),
    };
    let loop_cfg = LoopConfig {
        evaluator_enabled: arm.evaluator_enabled,
        ..cfg.loop_config.clone()
    };
    let env = Env::new(cfg.sim.clone(), seed);
    let mut ep = match run_with_ablation(task, backend.as_mut(), &env, &loop_cfg, arm.grasp_offset) {
        Ok(ep) => ep,
        Err(e) => return (failed_record(&arm.label, &task.id, seed, e.to_string()), None),
    };
    let result = judge(&ep, &ep.final_state, &cfg.judge);
    ep.judgment = Some(result.clone());
    let mut log = None;
    if let Some(dir) = &cfg.log_dir {
        let path = dir.join(&arm.label).join(format!("{}_seed{seed}.jsonl", task.id));
        match write_episode_log(&ep, &path) {
            Ok(()) => log = Some(path.strip_prefix(dir).map_or(path.clone(), Path::to_path_buf)),
            Err(e) => log::error!("{e}"),
        }
    }
    (
        EpisodeRecord {
            arm: arm.label.clone(),
            task: task.id.clone(),
            seed,
            status: Some(ep.status),
            result,
            log,
            error: None,
        },
        Some(ep),
    )
}

pub fn run_suite(tasks: &[TaskSpec], factory: Arc<dyn BackendFactory>, cfg: &SuiteConfig) -> SuiteResults {
    let jobs: Vec<(usize, &Arm, &TaskSpec, u64)> = cfg
        .arms
        .iter()
        .enumerate()
        .flat_map(|(ai, arm)| {
            tasks
                .iter()
                .flat_map(move |t| (0..cfg.seeds_per_task).map(move |s| (ai, arm, t, cfg.first_seed + s)))
        })
        .collect();
    let work = || -> Vec<EpisodeRecord> {
        jobs.par_iter()
            .map(|(_, arm, task, seed)| run_judged(task, *seed, arm, factory.as_ref(), cfg).0)
            .collect()
    };
    let episodes = match rayon::ThreadPoolBuilder::new().num_threads(cfg.workers).build() {
        Ok(pool) => pool.install(work),
        Err(e) => {
            log::warn!("worker pool unavailable ({e}); using the global pool");
            work()
        }
    };
    let arms = cfg
        .arms
        .iter()
        .map(|arm| ArmResults {
            arm: arm.clone(),
            backend: factory.name(),
            rows: tasks
                .iter()
                .map(|t| {
                    let recs: Vec<&EpisodeRecord> =
                        episodes.iter().filter(|r| r.arm == arm.label && r.task == t.id).collect();
                    aggregate(&t.id, &recs)
                })
                .collect(),
        })
        .collect();
    SuiteResults { arms, episodes }
}

pub fn aggregate(task: &str, recs: &[&EpisodeRecord]) -> TaskRow {
    let n = recs.len();
    let mut failures: BTreeMap<FailureClass, usize> = FailureClass::ALL[1..].iter().map(|c| (*c, 0)).collect();
    for r in recs.iter().filter(|r| !r.result.success) {
        *failures.entry(r.result.failure_class).or_default() += 1;
    }
    let mean = |f: fn(&EpisodeResult) -> usize| {
        if n == 0 {
            0.0
        } else {
            recs.iter().map(|r| f(&r.result)).sum::<usize>() as f64 / n as f64
        }
    };
    TaskRow {
        task: task.into(),
        episodes: n,
        successes: recs.iter().filter(|r| r.result.success).count(),
        lucky: recs.iter().filter(|r| r.result.lucky).count(),
        failures,
        mean_rounds: mean(|r| r.rounds_used),
        mean_actions: mean(|r| r.actions_used),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    Markdown,
    Csv,
}

fn arm_name(a: &ArmResults) -> String {
    format!("{} ({})", a.backend, a.arm.label)
}

fn task_ids(results: &SuiteResults) -> Vec<String> {
    results
        .arms
        .first()
        .map(|a| a.rows.iter().map(|r| r.task.clone()).collect())
        .unwrap_or_default()
}

fn reference_cells(ids: &[String], counts: &[u32; 6]) -> Option<Vec<String>> {
    ids.iter()
        .map(|id| {
            let k: usize = id.strip_prefix('T')?.parse().ok()?;
            counts.get(k.checked_sub(1)?).map(|c| format!("{c}/10"))
        })
        .collect()
}

pub fn report(results: &SuiteResults, format: ReportFormat) -> String {
    match format {
        ReportFormat::Markdown => report_markdown(results),
        ReportFormat::Csv => report_csv(results),
    }
}

fn report_markdown(results: &SuiteResults) -> String {
    let ids = task_ids(results);
    let mut out = String::from("## Success rate\n\n| Planner |");
    for id in &ids {
        out.push_str(&format!(" {id} |"));
    }
    out.push_str("\n|---|");
    out.push_str(&"---|".repeat(ids.len()));
    out.push('\n');
    for a in &results.arms {
        out.push_str(&format!("| {} |", arm_name(a)));
        for r in &a.rows {
            out.push_str(&format!(" {}/{} |", r.successes, r.episodes));
        }
        out.push('\n');
    }
    for (label, counts) in [
        ("published reference", &REFERENCE_WITH_EVALUATOR),
        ("published reference (w/o E)", &REFERENCE_WITHOUT_EVALUATOR),
    ] {
        if let Some(cells) = reference_cells(&ids, counts) {
            out.push_str(&format!("| {label} |"));
            for c in cells {
                out.push_str(&format!(" {c} |"));
            }
            out.push('\n');
        }
    }

    out.push_str("\n## Failures\n\n| Planner | Task | lucky |");
    for c in &FailureClass::ALL[1..] {
        out.push_str(&format!(" {} |", c.as_str()));
    }
    out.push_str(" mean rounds | mean actions |\n|---|---|---|");
    out.push_str(&"---|".repeat(FailureClass::ALL.len() - 1 + 2));
    out.push('\n');
    for a in &results.arms {
        for r in &a.rows {
            out.push_str(&format!("| {} | {} | {} |", arm_name(a), r.task, r.lucky));
            for c in &FailureClass::ALL[1..] {
                out.push_str(&format!(" {} |", r.failures.get(c).copied().unwrap_or(0)));
            }
            out.push_str(&format!(" {:.2} | {:.2} |\n", r.mean_rounds, r.mean_actions));
        }
    }
    out
}

fn report_csv(results: &SuiteResults) -> String {
    let mut out = String::from("planner,task,episodes,successes,lucky");
    for c in &FailureClass::ALL[1..] {
        out.push(',');
        out.push_str(c.as_str());
    }
    out.push_str(",mean_rounds,mean_actions\n");
    for a in &results.arms {
        for r in &a.rows {
            out.push_str(&format!("{},{},{},{},{}", arm_name(a), r.task, r.episodes, r.successes, r.lucky));
            for c in &FailureClass::ALL[1..] {
                out.push_str(&format!(",{}", r.failures.get(c).copied().unwrap_or(0)));
            }
            out.push_str(&format!(",{:.2},{:.2}\n", r.mean_rounds, r.mean_actions));
        }
    }
    out
}

/// One line per episode, pointing at its log.
pub fn episodes_csv(results: &SuiteResults) -> String {
    let mut out = String::from("arm,task,seed,status,success,lucky,failure_class,rounds,actions,log\n");
    for e in &results.episodes {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            e.arm,
            e.task,
            e.seed,
            e.status.map_or("error", |s| s.as_str()),
            e.result.success,
            e.result.lucky,
            e.result.failure_class.as_str(),
            e.result.rounds_used,
            e.result.actions_used,
            e.log.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
        ));
    }
    out
}
