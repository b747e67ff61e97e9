use planner_core::agent::{
    parse_episode_log, episode_log_lines, recompute_belief_trace, run_episode, run_with_ablation, trace_distance,
    verify_episode, Env, EpisodeStatus, LoopConfig,
};
use planner_core::backends::{BackendError, FailingBackend, OracleBackend, Role, ScriptedBackend};
use planner_core::harness::{judge, task_by_id, JudgeOptions};
use planner_core::protocol::parse_plan;
use planner_core::sim::{Action, SimConfig};

fn env(seed: u64) -> Env {
    Env::new(SimConfig::noiseless(), seed)
}

#[test]
fn oracle_solves_every_task_noiseless() {
    for id in 1..=6 {
        let task = task_by_id(&id.to_string()).unwrap();
        for seed in 0..10 {
            let ep = run_episode(&task, &mut OracleBackend::new(), &env(seed), &LoopConfig::default()).unwrap();
            let r = judge(&ep, &ep.final_state, &JudgeOptions::default());
            assert_eq!(ep.status, EpisodeStatus::Success, "T{id} seed {seed}");
            assert!(r.success && !r.lucky, "T{id} seed {seed}: {r:?}");
        }
    }
}

#[test]
fn task4_follows_the_three_round_rollout() {
    let task = task_by_id("4").unwrap();
    let ep = run_episode(&task, &mut OracleBackend::new(), &env(3), &LoopConfig::default()).unwrap();
    assert_eq!(ep.status, EpisodeStatus::Success);
    assert_eq!(ep.rounds.len(), 3);
    assert_eq!(ep.rounds[0].plan.as_ref().unwrap().actions.len(), 6);
    assert!(!ep.rounds[0].evaluator_verdict.as_ref().unwrap().done);
    assert!(ep.rounds[1].evaluator_verdict.as_ref().unwrap().rationale.contains("is lighter than"));
    assert_eq!(ep.rounds[1].plan.as_ref().unwrap().actions.len(), 3);
    assert!(ep.rounds[2].evaluator_verdict.as_ref().unwrap().done);
    assert!(ep.rounds[2].plan.is_none());
    assert_eq!(ep.belief_trace.len(), ep.action_count() + 1);
}

#[test]
fn task1_takes_two_rounds() {
    let task = task_by_id("1").unwrap();
    let ep = run_episode(&task, &mut OracleBackend::new(), &env(0), &LoopConfig::default()).unwrap();
    assert_eq!(ep.status, EpisodeStatus::Success);
    assert_eq!(ep.rounds.len(), 2);
    assert_eq!(ep.rounds[0].plan.as_ref().unwrap().actions.len(), 3);
}

#[test]
fn evaluator_runs_before_planner_and_sees_no_history_first() {
    let task = task_by_id("4").unwrap();
    let ep = run_episode(&task, &mut OracleBackend::new(), &env(1), &LoopConfig::default()).unwrap();
    for r in &ep.rounds {
        assert_eq!(r.exchanges[0].role, Role::Evaluator);
    }
    assert!(ep.rounds[0].exchanges[0].prompt.contains("[History] None."));
}

#[test]
fn history_grows_as_a_prefix_extension() {
    let task = task_by_id("4").unwrap();
    let ep = run_episode(&task, &mut OracleBackend::new(), &env(2), &LoopConfig::default()).unwrap();
    let hist = |r: usize| {
        let p = &ep.rounds[r].exchanges[0].prompt;
        let start = p.find("[History]").unwrap();
        let end = p.find("Based on the [Task description]").unwrap();
        p[start..end].trim_end().to_string()
    };
    for r in 1..ep.rounds.len() {
        let prev = hist(r - 1);
        let cur = hist(r);
        if prev.ends_with("None.") {
            continue;
        }
        assert!(cur.starts_with(&prev), "round {r} history does not extend round {}", r - 1);
    }
}

#[test]
fn garbage_exhausts_parse_retries() {
    let task = task_by_id("1").unwrap();
    let cfg = LoopConfig {
        evaluator_enabled: false,
        ..LoopConfig::default()
    };
    let mut backend = ScriptedBackend::repeat("I would rather not.");
    let ep = run_episode(&task, &mut backend, &env(0), &cfg).unwrap();
    assert_eq!(ep.status, EpisodeStatus::FailParse);
    let ex = &ep.rounds[0].exchanges;
    assert_eq!(ex.len(), 3);
    assert!(ex[1].prompt.contains("Format reminder:"));
    assert!(ex[2].prompt.ends_with(ex[1].prompt.lines().last().unwrap()));
    assert!(!ex[2].prompt.contains("Format reminder: The response must contain an EXECUTE line followed by ACTION lines.\nFormat reminder"));
}

#[test]
fn backend_error_kind_is_recorded() {
    let task = task_by_id("1").unwrap();
    let mut backend = FailingBackend::new(|| BackendError::Auth("bad key".into()));
    let ep = run_episode(&task, &mut backend, &env(0), &LoopConfig::default()).unwrap();
    assert_eq!(ep.status, EpisodeStatus::FailBackend);
    assert_eq!(ep.backend_error.as_ref().unwrap().kind, "auth");
}

#[test]
fn long_plans_are_truncated() {
    let task = task_by_id("1").unwrap();
    let cfg = LoopConfig {
        evaluator_enabled: false,
        max_actions_per_round: 2,
        max_rounds: 1,
        ..LoopConfig::default()
    };
    let plan = "EXECUTE\nACTION RESET\nACTION RESET\nACTION RESET\nACTION RESET\n";
    let ep = run_episode(&task, &mut ScriptedBackend::repeat(plan), &env(0), &cfg).unwrap();
    assert_eq!(ep.rounds[0].exec.len(), 2);
    assert_eq!(ep.status, EpisodeStatus::FailTimeout);
}

#[test]
fn infeasible_wait_plan_ends_the_episode() {
    let task = task_by_id("1").unwrap();
    let plan = "EXPLAIN\nThe task is infeasible: no blocks.\nEXECUTE\nACTION WAIT\n";
    let cfg = LoopConfig {
        evaluator_enabled: false,
        ..LoopConfig::default()
    };
    let ep = run_episode(&task, &mut ScriptedBackend::repeat(plan), &env(0), &cfg).unwrap();
    assert_eq!(ep.status, EpisodeStatus::FailInfeasible);
}

#[test]
fn collision_aborts_under_safety_mode() {
    let task = task_by_id("1").unwrap();
    let cfg = LoopConfig {
        evaluator_enabled: false,
        ..LoopConfig::default()
    };
    let plan = "EXECUTE\nACTION REACH [0.00 0.00 0.90 1 0 0 0]\nACTION RESET\n";
    let ep = run_episode(&task, &mut ScriptedBackend::repeat(plan), &env(0), &cfg).unwrap();
    assert_eq!(ep.status, EpisodeStatus::FailSafety);
    assert_eq!(ep.rounds[0].exec.len(), 1);
}

#[test]
fn call_budget_bounds_backend_calls() {
    let task = task_by_id("1").unwrap();
    let cfg = LoopConfig::default();
    let ep = run_episode(&task, &mut ScriptedBackend::repeat("FAIL\nnot yet\n"), &env(0), &cfg).unwrap();
    assert!(ep.backend_calls() <= cfg.call_budget());
}

#[test]
fn belief_trace_matches_offline_recomputation() {
    for id in ["3", "4", "5", "6"] {
        let task = task_by_id(id).unwrap();
        for seed in 0..5 {
            let ep = run_episode(&task, &mut OracleBackend::new(), &Env::new(SimConfig::default(), seed), &LoopConfig::default()).unwrap();
            let re = recompute_belief_trace(&ep).unwrap();
            assert!(trace_distance(&re, &ep.belief_trace) <= 1e-12);
            assert!(verify_episode(&ep, 1e-12).unwrap().is_empty());
        }
    }
}

#[test]
fn tampered_observation_is_detected() {
    let task = task_by_id("4").unwrap();
    let mut ep = run_episode(&task, &mut OracleBackend::new(), &env(5), &LoopConfig::default()).unwrap();
    ep.rounds[0].exec[1].observation.force[2] += 0.5;
    assert!(!verify_episode(&ep, 1e-12).unwrap().is_empty());
}

#[test]
fn log_round_trips() {
    let task = task_by_id("6").unwrap();
    let ep = run_episode(&task, &mut OracleBackend::new(), &env(4), &LoopConfig::default()).unwrap();
    let text = episode_log_lines(&ep).join("\n");
    let back = parse_episode_log(&text).unwrap();
    assert_eq!(back, ep);
    assert!(parse_episode_log("{\"round\":{}}").is_err());
}

#[test]
fn null_ablation_is_byte_identical() {
    let task = task_by_id("1").unwrap();
    let a = run_episode(&task, &mut OracleBackend::new(), &env(7), &LoopConfig::default()).unwrap();
    let b = run_with_ablation(&task, &mut OracleBackend::new(), &env(7), &LoopConfig::default(), [0.0; 3]).unwrap();
    assert_eq!(episode_log_lines(&a), episode_log_lines(&b));
}

#[test]
fn ablation_offset_is_bounded() {
    let task = task_by_id("1").unwrap();
    assert!(run_with_ablation(&task, &mut OracleBackend::new(), &env(0), &LoopConfig::default(), [0.03, 0.0, 0.0]).is_err());
}

#[test]
fn grasp_offset_triggers_raised_replan() {
    let task = task_by_id("1").unwrap();
    let ep = run_with_ablation(&task, &mut OracleBackend::new(), &env(0), &LoopConfig::default(), [0.0, 0.0, -0.01]).unwrap();
    assert_eq!(ep.status, EpisodeStatus::Success);
    let places: Vec<f64> = ep
        .rounds
        .iter()
        .filter_map(|r| r.plan.as_ref())
        .flat_map(|p| p.actions.iter())
        .filter_map(|a| match a {
            Action::Place { pose, .. } => Some(pose.position[2]),
            _ => None,
        })
        .collect();
    assert!(places.len() >= 2);
    assert!(places[1] - places[0] >= 0.02 - 1e-9);
    assert!(ep.rounds[1].evaluator_verdict.as_ref().unwrap().rationale.contains("PLACE failed"));
    assert!(judge(&ep, &ep.final_state, &JudgeOptions::default()).success);

    let off = LoopConfig {
        evaluator_enabled: false,
        ..LoopConfig::default()
    };
    let ep = run_with_ablation(&task, &mut OracleBackend::new(), &env(0), &off, [0.0, 0.0, -0.01]).unwrap();
    assert!(!judge(&ep, &ep.final_state, &JudgeOptions::default()).success);
}

#[test]
fn oracle_text_reparses() {
    let task = task_by_id("2").unwrap();
    let ep = run_episode(&task, &mut OracleBackend::new(), &env(8), &LoopConfig::default()).unwrap();
    for ex in ep.rounds.iter().flat_map(|r| &r.exchanges) {
        let text = ex.response.as_ref().unwrap();
        if ex.role == Role::Planner {
            assert!(parse_plan(text).is_ok());
        }
    }
}

