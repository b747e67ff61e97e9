mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use planner_core::agent::{
    read_episode_log, recompute_belief_trace, run_with_ablation, trace_distance, verify_episode, write_episode_log,
    Episode, Env,
};
use planner_core::harness::{episodes_csv, judge, register_tasks, report, run_suite, task_by_id, ReportFormat, SuiteResults};
use planner_core::prompts::TaskGenConfig;
use planner_core::protocol::{parse_task_list, render_action, render_observation, ObsStyle};
use planner_core::selfinstruct::{
    collect_reference_trajectories, emit_dataset, generate_instructions, generate_tasks, oracle_records, read_records,
    validate_record, violation_histogram, write_records, EmitPolicy, ValidatorConfig,
};
use planner_core::task::{split_tag_prefix, Tag, TaskSpec};

use config::{BackendKind, ConfigArgs, RunConfig};

/// Tolerance for comparing a recomputed belief trace with the logged one.
const BELIEF_TOL: f64 = 1e-12;

#[derive(Parser)]
#[command(name = "tabletop", version, about = "Planner/evaluator episodes in a partially observable block world")]
struct Cli {
    #[command(flatten)]
    config: ConfigArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one episode and print its transcript. Exits 0 on a judged success.
    Run {
        /// Comma-separated tags for a free-text task: mass, fix, three, or none
        #[arg(long)]
        tags: Option<String>,
    },
    /// Run the task suite and write CSV and markdown reports
    Eval,
    /// Dataset generation
    Gen {
        #[command(subcommand)]
        command: GenCommand,
    },
    /// Re-judge a stored episode log and check it against the simulator
    Replay {
        log: PathBuf,
        /// Also recompute the belief trace and print its distance from the log
        #[arg(long)]
        recompute_belief: bool,
    },
    /// Print the resolved configuration as TOML
    Config,
    /// Print the report for a stored results.json
    Report {
        results: PathBuf,
        #[arg(long, value_enum, default_value = "markdown")]
        format: Format,
    },
}

#[derive(Subcommand)]
enum GenCommand {
    /// Ask the backend for a task list
    Tasks {
        #[arg(long, default_value_t = 50)]
        count: usize,
    },
    /// Produce chain-of-thought instruction records
    Instructions {
        /// Task list in the generator format; defaults to the registered tasks
        #[arg(long)]
        tasks_file: Option<PathBuf>,
    },
    /// Validate records and print the violation histogram
    Validate { records: PathBuf },
    /// Write the training dataset and its manifest
    Emit {
        records: PathBuf,
        #[arg(long, default_value = "drop_violations")]
        policy: EmitPolicy,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Format {
    Markdown,
    Csv,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(cli: Cli) -> Result<bool> {
    if let Command::Report { results, format } = &cli.command {
        return cmd_report(results, *format);
    }
    if let Command::Replay { log, recompute_belief } = &cli.command {
        return cmd_replay(log, *recompute_belief, cli.config.count_lucky);
    }
    let cfg = cli.config.resolve()?;
    match cli.command {
        Command::Run { tags } => cmd_run(&cfg, tags.as_deref()),
        Command::Eval => cmd_eval(&cfg),
        Command::Gen { command } => cmd_gen(&cfg, command),
        Command::Config => {
            print!("{}", toml::to_string(&cfg)?);
            Ok(true)
        }
        Command::Report { .. } | Command::Replay { .. } => unreachable!(),
    }
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    std::fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn parse_tags(list: &str) -> Result<Vec<Tag>> {
    let mut out = Vec::new();
    for name in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        if name.eq_ignore_ascii_case("none") {
            continue;
        }
        match Tag::from_marker(name) {
            Some(t) => out.push(t),
            None => bail!("unknown tag {name:?} (expected mass, fix, three or none)"),
        }
    }
    Ok(out)
}

fn normalize(text: &str) -> String {
    text.trim().trim_end_matches('.').trim().to_lowercase()
}

/// A registered id, or free text with tags from `--tags` and/or leading
/// `<tag>` markers. Free text matching a registered description inherits
/// its goal.
fn resolve_task(text: &str, tags: Option<&str>) -> Result<TaskSpec> {
    if let Some(t) = task_by_id(text) {
        if tags.is_some() {
            log::warn!("--tags ignored for registered task {}", t.id);
        }
        return Ok(t);
    }
    let (inline, description, unknown) = split_tag_prefix(text);
    if !unknown.is_empty() {
        bail!("unknown tag markers {unknown:?}");
    }
    let Some(flag) = tags.map(parse_tags).transpose()? else {
        if inline.is_empty() {
            bail!("free-text tasks need --tags (use --tags none for a task without hidden parameters)");
        }
        return Ok(free_task(inline.into_iter().collect(), &description));
    };
    let all: Vec<Tag> = inline.into_iter().chain(flag).collect();
    Ok(free_task(all, &description))
}

fn free_task(tags: Vec<Tag>, description: &str) -> TaskSpec {
    let mut task = TaskSpec::new("free", tags, description);
    if !bind_goal(&mut task) {
        log::warn!("no known goal for {description:?}; the episode runs but cannot be judged a success");
    }
    task
}

/// Copy the goal of the registered task with the same description and tags.
fn bind_goal(task: &mut TaskSpec) -> bool {
    if task.goal_schema.is_some() {
        return true;
    }
    let Some(r) = register_tasks()
        .into_iter()
        .find(|r| normalize(&r.description) == normalize(&task.description) && r.tags == task.tags)
    else {
        return false;
    };
    task.goal_schema = r.goal_schema;
    task.exploration_needed = r.exploration_needed;
    true
}

fn print_transcript(ep: &Episode) {
    println!("Task: {}", ep.task.prompt_text());
    println!("Seed: {}  Backend: {}", ep.seed, ep.backend);
    println!("Initial: {}", render_observation(&ep.initial_observation, ObsStyle::Vector, &ep.sim));
    for r in &ep.rounds {
        println!("== Round {} ==", r.index);
        if let Some(v) = &r.evaluator_verdict {
            println!("Evaluator: {} {}", if v.done { "SUCCESS" } else { "FAIL" }, v.rationale.replace('\n', " "));
        }
        if let Some(p) = &r.plan {
            println!("Planner: {}", p.explanation.replace('\n', " "));
        }
        for s in &r.exec {
            println!("  {} -> {:?}", render_action(&s.action), s.report.status);
            println!("    {}", render_observation(&s.observation, ObsStyle::Vector, &ep.sim));
        }
    }
    println!("Status: {}", ep.status.as_str());
}

fn cmd_run(cfg: &RunConfig, tags: Option<&str>) -> Result<bool> {
    let text = match cfg.task.as_slice() {
        [one] => one,
        [] => bail!("--task is required"),
        _ => bail!("run takes a single --task"),
    };
    let task = resolve_task(text, tags)?;
    let factory = cfg.backend_spec().factory().map_err(|e| anyhow::anyhow!("{}: {e}", e.kind()))?;
    let mut backend = factory.make().map_err(|e| anyhow::anyhow!("{}: {e}", e.kind()))?;
    let offset = [0.0, 0.0, -cfg.ablation_offset.unwrap_or(0.0)];
    let env = Env::new(cfg.sim()?, cfg.first_seed);
    let mut ep = run_with_ablation(&task, backend.as_mut(), &env, &cfg.loop_config(), offset)?;
    let result = judge(&ep, &ep.final_state, &cfg.judge());
    ep.judgment = Some(result.clone());
    print_transcript(&ep);
    println!(
        "Result: success={} lucky={} failure={} rounds={} actions={}",
        result.success,
        result.lucky,
        result.failure_class.as_str(),
        result.rounds_used,
        result.actions_used
    );
    if let Some(e) = &ep.backend_error {
        eprintln!("backend {}: {}", e.kind, e.message);
    }
    let path = cfg.out.join("run").join(format!("{}_seed{}.jsonl", task.id, cfg.first_seed));
    write_episode_log(&ep, &path)?;
    println!("Log: {}", path.display());
    Ok(result.success)
}

fn suite_tasks(cfg: &RunConfig) -> Result<Vec<TaskSpec>> {
    if cfg.task.is_empty() {
        return Ok(register_tasks());
    }
    cfg.task
        .iter()
        .map(|t| task_by_id(t).with_context(|| format!("eval runs registered tasks only; unknown id {t:?}")))
        .collect()
}

fn cmd_eval(cfg: &RunConfig) -> Result<bool> {
    let tasks = suite_tasks(cfg)?;
    let factory = cfg.backend_spec().factory().map_err(|e| anyhow::anyhow!("{}: {e}", e.kind()))?;
    let dir = cfg.out.join("eval");
    let suite = cfg.suite(dir.join("logs"))?;
    let results = run_suite(&tasks, factory, &suite);
    write(&dir.join("summary.csv"), report(&results, ReportFormat::Csv))?;
    write(&dir.join("summary.md"), report(&results, ReportFormat::Markdown))?;
    write(&dir.join("episodes.csv"), episodes_csv(&results))?;
    write(&dir.join("results.json"), serde_json::to_string_pretty(&results)? + "\n")?;
    print!("{}", report(&results, ReportFormat::Markdown));
    println!("{}/{} successes; outputs in {}", results.total_successes(), results.total_episodes(), dir.display());
    Ok(results.episodes.iter().all(|e| e.error.is_none()))
}

fn cmd_gen(cfg: &RunConfig, command: GenCommand) -> Result<bool> {
    let dir = cfg.out.join("gen");
    let sim = cfg.sim()?;
    match command {
        GenCommand::Tasks { count } => {
            let factory = cfg.backend_spec().factory().map_err(|e| anyhow::anyhow!("{}: {e}", e.kind()))?;
            let mut backend = factory.make().map_err(|e| anyhow::anyhow!("{}: {e}", e.kind()))?;
            let tcfg = TaskGenConfig {
                count,
                ..TaskGenConfig::default()
            };
            let out = generate_tasks(backend.as_mut(), &tcfg, &cfg.loop_config().request)?;
            let text: String = out
                .tasks
                .iter()
                .enumerate()
                .map(|(i, t)| format!("### Task {}: {}\n", i + 1, t.generator_text()))
                .collect();
            write(&dir.join("tasks.txt"), &text)?;
            write(&dir.join("tasks.json"), serde_json::to_string_pretty(&out.tasks)? + "\n")?;
            print!("{text}");
            println!(
                "{} tasks ({} duplicates dropped), {} need exploration",
                out.tasks.len(),
                out.duplicates,
                out.exploration_count()
            );
            Ok(true)
        }
        GenCommand::Instructions { tasks_file } => {
            let tasks = match &tasks_file {
                Some(p) => parse_task_list(&std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?)?,
                None => suite_tasks(cfg)?,
            };
            let seeds: Vec<u64> = (cfg.first_seed..cfg.first_seed + cfg.seeds).collect();
            let mut records = Vec::new();
            if cfg.backend == BackendKind::Oracle {
                for mut task in tasks.clone() {
                    if !bind_goal(&mut task) {
                        log::warn!("task {}: no known goal, skipped by the oracle", task.id);
                        continue;
                    }
                    for &seed in &seeds {
                        records.extend(oracle_records(&task, seed, &sim)?);
                    }
                }
            } else {
                let factory = cfg.backend_spec().factory().map_err(|e| anyhow::anyhow!("{}: {e}", e.kind()))?;
                let mut backend = factory.make().map_err(|e| anyhow::anyhow!("{}: {e}", e.kind()))?;
                let refs = collect_reference_trajectories(&register_tasks(), &seeds[..seeds.len().min(2)], &sim)?;
                for task in &tasks {
                    let got = generate_instructions(backend.as_mut(), task, &refs, &[], &cfg.loop_config().request)?;
                    records.extend(got.records);
                }
            }
            for (i, r) in records.iter_mut().enumerate() {
                r.index = i + 1;
            }
            let path = dir.join("records.json");
            write_records(&records, &path)?;
            println!("{} records written to {}", records.len(), path.display());
            Ok(true)
        }
        GenCommand::Validate { records } => {
            let recs = read_records(&records)?;
            let all: Vec<_> = recs
                .iter()
                .flat_map(|r| validate_record(r, &sim, &ValidatorConfig::default()))
                .collect();
            for (kind, n) in violation_histogram(&all) {
                println!("{kind}: {n}");
            }
            let flagged = recs
                .iter()
                .filter(|r| all.iter().any(|v| v.record_index == r.index))
                .count();
            println!("{flagged}/{} records flagged", recs.len());
            write(&dir.join("violations.json"), serde_json::to_string_pretty(&all)? + "\n")?;
            Ok(true)
        }
        GenCommand::Emit { records, policy } => {
            let recs = read_records(&records)?;
            let path = dir.join("dataset.jsonl");
            let m = emit_dataset(&recs, &sim, &ValidatorConfig::default(), &path, policy)?;
            println!(
                "{} of {} records emitted ({} dropped, {} flagged) to {}",
                m.emitted,
                m.total_records,
                m.dropped,
                m.flagged,
                path.display()
            );
            Ok(true)
        }
    }
}

fn cmd_replay(log: &Path, recompute: bool, count_lucky: bool) -> Result<bool> {
    let ep = read_episode_log(log)?;
    let opts = planner_core::harness::JudgeOptions {
        count_lucky,
        ..Default::default()
    };
    let result = judge(&ep, &ep.final_state, &opts);
    println!("{}", serde_json::to_string(&result)?);
    let mut ok = true;
    match &ep.judgment {
        Some(stored) if *stored == result => println!("judgment matches the stored result"),
        Some(stored) => {
            println!("judgment differs from the stored result: {}", serde_json::to_string(stored)?);
            ok = false;
        }
        None => println!("log carries no stored judgment"),
    }
    if recompute {
        let trace = recompute_belief_trace(&ep)?;
        let d = trace_distance(&trace, &ep.belief_trace);
        println!("belief trace distance {d:e}");
        ok &= d <= BELIEF_TOL;
    }
    let problems = verify_episode(&ep, BELIEF_TOL)?;
    for p in &problems {
        println!("inconsistent: {p}");
    }
    if problems.is_empty() {
        println!("log is consistent with the simulator and belief update");
    }
    Ok(ok && problems.is_empty())
}

fn cmd_report(results: &Path, format: Format) -> Result<bool> {
    let text = std::fs::read_to_string(results).with_context(|| format!("reading {}", results.display()))?;
    let res: SuiteResults = serde_json::from_str(&text).with_context(|| format!("parsing {}", results.display()))?;
    let f = match format {
        Format::Markdown => ReportFormat::Markdown,
        Format::Csv => ReportFormat::Csv,
    };
    print!("{}", report(&res, f));
    Ok(true)
}
