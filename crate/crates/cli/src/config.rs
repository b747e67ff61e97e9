//! Run configuration: a TOML file whose fields mirror the command-line flags
//! one to one. Flags given on the command line win over the file.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, ValueEnum};
use planner_core::agent::LoopConfig;
use planner_core::backends::{BackendSpec, RemoteConfig};
use planner_core::harness::{Arm, JudgeOptions, SuiteConfig};
use planner_core::sim::SimConfig;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum, Default)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    #[default]
    Oracle,
    Remote,
    Replay,
    /// Remote calls written through to the store.
    Record,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub sim_config: Option<PathBuf>,
    pub noiseless: bool,
    pub backend: BackendKind,
    pub store: Option<PathBuf>,
    pub endpoint: String,
    pub api_key_env: String,
    pub timeout_secs: f64,
    pub max_attempts: u32,
    pub max_rounds: usize,
    pub max_actions_per_round: usize,
    pub parse_retries: usize,
    pub no_evaluator: bool,
    pub no_safety_abort: bool,
    pub confidence_threshold: f64,
    pub task: Vec<String>,
    pub seeds: u64,
    pub first_seed: u64,
    pub workers: usize,
    pub ablation_offset: Option<f64>,
    pub count_lucky: bool,
    pub out: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        let remote = RemoteConfig::default();
        let lc = LoopConfig::default();
        RunConfig {
            sim_config: None,
            noiseless: false,
            backend: BackendKind::Oracle,
            store: None,
            endpoint: remote.endpoint,
            api_key_env: remote.api_key_env,
            timeout_secs: remote.timeout_secs,
            max_attempts: remote.max_attempts,
            max_rounds: lc.max_rounds,
            max_actions_per_round: lc.max_actions_per_round,
            parse_retries: lc.parse_retries,
            no_evaluator: false,
            no_safety_abort: false,
            confidence_threshold: lc.confidence_threshold,
            task: Vec::new(),
            seeds: 10,
            first_seed: 0,
            workers: 0,
            ablation_offset: None,
            count_lucky: false,
            out: PathBuf::from("out"),
        }
    }
}

/// Flags shared by every command that runs episodes or calls a backend.
#[derive(Debug, Clone, Default, Args)]
pub struct ConfigArgs {
    /// TOML run configuration; flags override its fields
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// TOML simulator configuration
    #[arg(long, global = true)]
    pub sim_config: Option<PathBuf>,
    /// Disable force-sensor noise
    #[arg(long, global = true)]
    pub noiseless: bool,
    #[arg(long, value_enum, global = true)]
    pub backend: Option<BackendKind>,
    /// Transcript store directory (replay and record backends)
    #[arg(long, global = true)]
    pub store: Option<PathBuf>,
    /// Chat-completions endpoint URL (remote and record backends)
    #[arg(long, global = true)]
    pub endpoint: Option<String>,
    /// Environment variable holding the API key
    #[arg(long, global = true)]
    pub api_key_env: Option<String>,
    #[arg(long, global = true)]
    pub timeout_secs: Option<f64>,
    /// Attempts per remote call, including the first
    #[arg(long, global = true)]
    pub max_attempts: Option<u32>,
    #[arg(long, global = true)]
    pub max_rounds: Option<usize>,
    #[arg(long, global = true)]
    pub max_actions_per_round: Option<usize>,
    /// Reprompts after an unparseable response
    #[arg(long, global = true)]
    pub parse_retries: Option<usize>,
    /// Run without the evaluator role
    #[arg(long, global = true)]
    pub no_evaluator: bool,
    /// Keep executing after collisions and out-of-bounds moves
    #[arg(long, global = true)]
    pub no_safety_abort: bool,
    /// Posterior mass on one hypothesis that counts as sufficient information
    #[arg(long, global = true)]
    pub confidence_threshold: Option<f64>,
    /// Task id (T1..T6 or 1..6); for `run`, free text is accepted too. Repeatable for `eval`.
    #[arg(long, global = true)]
    pub task: Vec<String>,
    /// Seeds per task
    #[arg(long, global = true)]
    pub seeds: Option<u64>,
    /// First seed; `run` uses it as the episode seed
    #[arg(long, visible_alias = "seed", global = true)]
    pub first_seed: Option<u64>,
    /// Worker threads for `eval`; 0 picks automatically
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Lower the grasp point by this many meters and compare evaluator on and off
    #[arg(long, global = true)]
    pub ablation_offset: Option<f64>,
    /// Count goal-reached-by-chance episodes as successes
    #[arg(long, global = true)]
    pub count_lucky: bool,
    /// Output directory
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

impl ConfigArgs {
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => load(path)?,
            None => RunConfig::default(),
        };
        macro_rules! set {
            ($($f:ident),*) => {$(
                if let Some(v) = self.$f.clone() {
                    cfg.$f = v;
                }
            )*};
        }
        set!(backend, endpoint, api_key_env, timeout_secs, max_attempts, max_rounds, max_actions_per_round);
        set!(parse_retries, confidence_threshold, seeds, first_seed, workers, out);
        if self.sim_config.is_some() {
            cfg.sim_config = self.sim_config.clone();
        }
        if self.store.is_some() {
            cfg.store = self.store.clone();
        }
        if self.ablation_offset.is_some() {
            cfg.ablation_offset = self.ablation_offset;
        }
        if !self.task.is_empty() {
            cfg.task = self.task.clone();
        }
        cfg.noiseless |= self.noiseless;
        cfg.no_evaluator |= self.no_evaluator;
        cfg.no_safety_abort |= self.no_safety_abort;
        cfg.count_lucky |= self.count_lucky;
        cfg.check()?;
        Ok(cfg)
    }
}

pub fn load(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

impl RunConfig {
    fn check(&self) -> Result<()> {
        if let Some(p) = &self.sim_config {
            if !p.is_file() {
                bail!("sim config {} does not exist", p.display());
            }
        }
        match self.backend {
            BackendKind::Replay => match &self.store {
                Some(s) if s.is_dir() => {}
                Some(s) => bail!("replay store {} does not exist", s.display()),
                None => bail!("--store is required with the replay backend"),
            },
            BackendKind::Record if self.store.is_none() => bail!("--store is required with the record backend"),
            _ => {}
        }
        if let Some(d) = self.ablation_offset {
            if !(0.0..=planner_core::agent::MAX_GRASP_OFFSET).contains(&d) {
                bail!("ablation offset {d} is outside [0, {}]", planner_core::agent::MAX_GRASP_OFFSET);
            }
        }
        self.loop_config().validate()?;
        Ok(())
    }

    pub fn sim(&self) -> Result<SimConfig> {
        let mut sim = match &self.sim_config {
            Some(p) => SimConfig::load(p)?,
            None => SimConfig::default(),
        };
        sim.noiseless |= self.noiseless;
        Ok(sim)
    }

    pub fn remote(&self) -> RemoteConfig {
        RemoteConfig {
            endpoint: self.endpoint.clone(),
            api_key_env: self.api_key_env.clone(),
            timeout_secs: self.timeout_secs,
            max_attempts: self.max_attempts,
            ..RemoteConfig::default()
        }
    }

    pub fn backend_spec(&self) -> BackendSpec {
        let store = || self.store.clone().unwrap_or_default();
        match self.backend {
            BackendKind::Oracle => BackendSpec::Oracle,
            BackendKind::Remote => BackendSpec::Remote(self.remote()),
            BackendKind::Replay => BackendSpec::Replay { store: store() },
            BackendKind::Record => BackendSpec::Record {
                store: store(),
                remote: self.remote(),
            },
        }
    }

    pub fn loop_config(&self) -> LoopConfig {
        LoopConfig {
            max_rounds: self.max_rounds,
            max_actions_per_round: self.max_actions_per_round,
            parse_retries: self.parse_retries,
            evaluator_enabled: !self.no_evaluator,
            safety_abort: !self.no_safety_abort,
            confidence_threshold: self.confidence_threshold,
            ..LoopConfig::default()
        }
    }

    pub fn judge(&self) -> JudgeOptions {
        JudgeOptions {
            count_lucky: self.count_lucky,
            ..JudgeOptions::default()
        }
    }

    /// With an ablation offset both arms run with the lowered grasp.
    pub fn arms(&self) -> Vec<Arm> {
        match self.ablation_offset {
            Some(d) => [Arm::with_evaluator(), Arm::without_evaluator()]
                .into_iter()
                .map(|a| Arm {
                    grasp_offset: [0.0, 0.0, -d],
                    ..a
                })
                .collect(),
            None if self.no_evaluator => vec![Arm::without_evaluator()],
            None => vec![Arm::with_evaluator()],
        }
    }

    pub fn suite(&self, log_dir: PathBuf) -> Result<SuiteConfig> {
        Ok(SuiteConfig {
            seeds_per_task: self.seeds,
            first_seed: self.first_seed,
            sim: self.sim()?,
            loop_config: self.loop_config(),
            arms: self.arms(),
            workers: self.workers,
            log_dir: Some(log_dir),
            judge: self.judge(),
        })
    }
}
