use std::path::Path;

use planner_core::fixtures::load_fixture;
use planner_core::prompts::{
    render_taskgen_prompt, EnvVariant, Prompts, TaskGenConfig, TemplateSet, COT_QUESTIONS,
};
use planner_core::protocol::{parse_instruction_blocks, HistoryRound};
use planner_core::sim::{reset, Action, SimConfig};
use planner_core::task::{Tag, TaskSpec};

fn stack_task() -> TaskSpec {
    TaskSpec::new("4", [Tag::Mass], "Stack the lighter block on the heavier block.")
}

#[test]
fn evaluator_round0_matches_transcript() {
    let p = Prompts::new(EnvVariant::Paper);
    let ctx = p.evaluator_context(&stack_task(), &SimConfig::default(), &[]).unwrap();
    let got = p.render_evaluator(&ctx).unwrap();
    // The transcript drops one space after "movable."; otherwise identical.
    let want = load_fixture("a1-evaluator-prompt-round0")
        .unwrap()
        .text()
        .replace("movable.In", "movable. In");
    assert_eq!(got, want);
    assert!(got.contains("[History] None."));
}

#[test]
fn planner_matches_transcript_outside_history() {
    let sim = SimConfig::default();
    let p = Prompts::new(EnvVariant::Paper);
    let (_, obs) = reset(&stack_task(), 0, &sim).unwrap();
    let eval = "Task is not finished. Based on the force readings in Action 0 and Action 3, cubeA is lighter than cubeB. The robot needs to pick up cubeA and place it on top of cubeB.";
    let history = vec![HistoryRound {
        explanation: "weigh".into(),
        steps: vec![(Action::Wait, obs.clone())],
    }];
    let ctx = p.planner_context(&stack_task(), &sim, &history, &obs, Some(eval)).unwrap();
    let got = p.render_planner(&ctx).unwrap();
    let fixture = load_fixture("a2-planner-prompt-round1").unwrap();
    let want = fixture.text();

    let head = |s: &str| s[..s.find("[History]\n").unwrap()].to_string();
    assert_eq!(head(&got), head(want));
    let tail = |s: &str| s[s.find("[History and task evaluation]").unwrap()..].to_string();
    assert_eq!(tail(&got), tail(want));
    assert!(got.contains(" <mass> Stack the lighter block on the heavier block."));
    assert!(got.contains("[History]\n== Round 0 =="));
}

#[test]
fn evaluator_ablation_drops_the_section() {
    let sim = SimConfig::default();
    let p = Prompts::default();
    let (_, obs) = reset(&stack_task(), 1, &sim).unwrap();
    let ctx = p.planner_context(&stack_task(), &sim, &[], &obs, None).unwrap();
    let got = p.render_planner(&ctx).unwrap();
    assert!(!got.contains("[History and task evaluation]"));
    assert!(!got.contains("== Round 0 =="));
    assert!(got.contains("[History] None."));
    assert!(got.ends_with("Strictly follow the [Action Options] and [Output Instruction].\n"));
}

#[test]
fn environment_shared_between_planner_and_evaluator() {
    let sim = SimConfig::default();
    for variant in [EnvVariant::Paper, EnvVariant::SimConsistent] {
        let p = Prompts::new(variant);
        let (_, obs) = reset(&stack_task(), 2, &sim).unwrap();
        let pc = p.planner_context(&stack_task(), &sim, &[], &obs, None).unwrap();
        let ec = p.evaluator_context(&stack_task(), &sim, &[]).unwrap();
        assert_eq!(pc.environment_description, ec.environment_description);
        let env_of = |s: &str| s.split("\n[Task Description]").next().unwrap().to_string();
        assert_eq!(env_of(&p.render_planner(&pc).unwrap()), env_of(&p.render_evaluator(&ec).unwrap()));
    }
}

#[test]
fn environment_follows_sim_config() {
    let sim = SimConfig {
        cube_size: 0.06,
        ..SimConfig::default()
    };
    let env = Prompts::default().environment(&sim).unwrap();
    assert!(env.contains("The cube size is 0.06x0.06x0.06(m)."));
}

#[test]
fn rendering_is_deterministic() {
    let sim = SimConfig::default();
    let p = Prompts::default();
    let (_, obs) = reset(&stack_task(), 3, &sim).unwrap();
    let a = p.render_planner(&p.planner_context(&stack_task(), &sim, &[], &obs, Some("FAIL\nx")).unwrap()).unwrap();
    let b = p.render_planner(&p.planner_context(&stack_task(), &sim, &[], &obs, Some("FAIL\nx")).unwrap()).unwrap();
    assert_eq!(a, b);
}

#[test]
fn taskgen_prompt() {
    let text = render_taskgen_prompt(&TaskGenConfig::default()).unwrap();
    assert!(text.contains("At least 30% of the tasks should be non-solvable"));
    assert!(text.contains("Come up with 50 different tasks"));
    assert!(text.contains("### Task {i}: {task tag}{task description}"));
    assert!(text.contains("please add a * at the end"));
    assert!(text.contains("is a 26 dimension vector"));
    let w = text.find("<weight>").unwrap();
    let m = text.find("<move>").unwrap();
    let t = text.find("<three> There").unwrap();
    assert!(w < m && m < t);
    let ten = render_taskgen_prompt(&TaskGenConfig {
        count: 10,
        ..TaskGenConfig::default()
    })
    .unwrap();
    assert!(ten.contains("Come up with 10 different tasks"));
    assert!(render_taskgen_prompt(&TaskGenConfig {
        count: 0,
        ..TaskGenConfig::default()
    })
    .is_err());
    let want = load_fixture("a3-taskgen-prompt").unwrap();
    assert_eq!(text, want.text());
}

#[test]
fn instructgen_prompt() {
    let p = Prompts::default();
    let task = TaskSpec::new("1", [Tag::Mass], "Pick up the heavier block").with_exploration();
    let examples = parse_instruction_blocks(load_fixture("a6-instructions").unwrap().text()).unwrap();
    let traj = vec!["TRAJECTORY-ONE".to_string(), "TRAJECTORY-TWO".to_string()];
    let text = p.render_instructgen(&task, &p.function_list().unwrap(), &traj, &examples[..2]).unwrap();
    let obs_at = text.find("[Example observations]").unwrap();
    assert!(text[obs_at..].contains("TRAJECTORY-ONE") && text[obs_at..].contains("TRAJECTORY-TWO"));
    assert!(text.contains("Round 1: {[hist text 1]}"));
    assert!(text.contains("<weight> Pick up the heavier block*"));
    let positions: Vec<usize> = COT_QUESTIONS.iter().map(|q| text.find(q).unwrap()).collect();
    assert!(positions.windows(2).all(|w| w[0] < w[1]));
    assert!(text[positions[0]..].starts_with("Is the current information enough to solve the task?"));
    for (i, q) in COT_QUESTIONS.iter().enumerate() {
        assert_eq!(text.matches(&format!("{}. {q}", i + 1)).count(), 1);
    }
    assert!(!text.contains("PLACEHOLDER>"));
    // The example records survive a round trip through the prompt text.
    let reparsed = parse_instruction_blocks(&text[text.find("[Example instruction pairs]").unwrap()..]).unwrap();
    assert_eq!(reparsed, examples[..2].to_vec());
}

#[test]
fn no_declared_placeholder_survives() {
    let sim = SimConfig::default();
    let p = Prompts::default();
    let set = TemplateSet::bundled();
    let (_, obs) = reset(&stack_task(), 4, &sim).unwrap();
    let task = stack_task();
    let outputs = vec![
        ("planner", p.render_planner(&p.planner_context(&task, &sim, &[], &obs, Some("FAIL\nno info")).unwrap()).unwrap()),
        ("evaluator", p.render_evaluator(&p.evaluator_context(&task, &sim, &[]).unwrap()).unwrap()),
        ("task_gen", p.render_taskgen(&TaskGenConfig::default()).unwrap()),
        ("instruct_gen", p.render_instructgen(&task, "f()", &[], &[]).unwrap()),
    ];
    // Literal braces from the published formats (e.g. "<Task> {task}") are
    // legitimate; only a template's own declared names must be gone.
    for (id, out) in &outputs {
        for field in &set.get(id).unwrap().fields {
            let block = field.chars().all(|c| c.is_ascii_uppercase() || c == ' ');
            if block {
                assert!(!out.contains(&format!("<{field} PLACEHOLDER>")), "{id}: <{field} PLACEHOLDER> left");
            } else {
                assert!(!out.contains(&format!("{{{field}}}")), "{id}: {{{field}}} left in output");
            }
        }
    }
}

#[test]
fn edited_copy_loads_from_disk() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("templates");
    assert_eq!(&TemplateSet::load_dir(&dir).unwrap(), TemplateSet::bundled());
    let tmp = tempfile::tempdir().unwrap();
    for entry in std::fs::read_dir(&dir).unwrap() {
        let entry = entry.unwrap();
        std::fs::copy(entry.path(), tmp.path().join(entry.file_name())).unwrap();
    }
    let planner = tmp.path().join("planner.txt");
    let edited = std::fs::read_to_string(&planner).unwrap().replace("{observation}", "{observation} {extra}");
    std::fs::write(&planner, edited).unwrap();
    assert!(TemplateSet::load_dir(tmp.path()).is_err());
}
