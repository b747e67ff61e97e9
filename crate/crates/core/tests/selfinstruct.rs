use planner_core::backends::{RequestSettings, Role, ScriptedBackend};
use planner_core::fixtures::load_fixture;
use planner_core::harness::{register_tasks, task_by_id};
use planner_core::prompts::TaskGenConfig;
use planner_core::protocol::{CotInput, InstructionRecord, PastRound};
use planner_core::selfinstruct::{
    check_cot_order, collect_reference_trajectories, dataset_line, emit_dataset, generate_instructions, generate_tasks,
    oracle_records, parse_dataset_line, read_dataset, validate_record, CotQuestion, EmitPolicy, ValidatorConfig,
    ViolationKind,
};
use planner_core::sim::{Action, SimConfig};

fn transcript_records() -> Vec<InstructionRecord> {
    let text = load_fixture("a6-instructions").unwrap().text().to_string();
    let mut backend = ScriptedBackend::new(Vec::<String>::new()).with_role(Role::InstructGen, [text]);
    let task = task_by_id("6").unwrap();
    generate_instructions(&mut backend, &task, &[], &[], &RequestSettings::default()).unwrap().records
}

fn kinds(rec: &InstructionRecord) -> Vec<ViolationKind> {
    let mut k: Vec<_> = validate_record(rec, &SimConfig::default(), &ValidatorConfig::default())
        .into_iter()
        .map(|v| v.kind)
        .collect();
    k.dedup();
    k
}

#[test]
fn task_transcript_yields_fifteen_tasks_ten_exploratory() {
    let text = load_fixture("a5-tasks").unwrap().text().to_string();
    let mut backend = ScriptedBackend::new(Vec::<String>::new()).with_role(Role::TaskGen, [text]);
    let out = generate_tasks(&mut backend, &TaskGenConfig::default(), &RequestSettings::default()).unwrap();
    assert_eq!(out.tasks.len(), 15);
    assert_eq!(out.exploration_count(), 10);
    assert!(out
        .tasks
        .iter()
        .any(|t| t.generator_text() == "<move> Pick up the only movable block and hold it for 5 seconds*"));
}

#[test]
fn duplicate_tasks_collapse() {
    let text = "### Task 1: <weight> Pick up the heavier block*\n### Task 2: <weight> pick up the heavier block.*\n";
    let mut backend = ScriptedBackend::new(Vec::<String>::new()).with_role(Role::TaskGen, [text]);
    let cfg = TaskGenConfig {
        count: 2,
        ..TaskGenConfig::default()
    };
    let out = generate_tasks(&mut backend, &cfg, &RequestSettings::default()).unwrap();
    assert_eq!(out.tasks.len(), 1);
    assert_eq!(out.duplicates, 1);
}

#[test]
fn instruction_transcript_yields_eight_ordered_records() {
    let text = load_fixture("a6-instructions").unwrap().text().to_string();
    let mut backend = ScriptedBackend::new(Vec::<String>::new()).with_role(Role::InstructGen, [text]);
    let task = task_by_id("6").unwrap();
    let out = generate_instructions(&mut backend, &task, &[], &[], &RequestSettings::default()).unwrap();
    assert_eq!(out.records.len(), 8);
    assert!(out.ordering.is_empty(), "{:?}", out.ordering);
    assert!(out.records[0].output_actions.is_empty());
    assert!(out.records[0].output_verbal.starts_with("No."));
    assert_eq!(out.records[1].output_actions, vec![Action::pick("cubeA"), Action::pick("cubeB")]);
    for r in &out.records {
        assert!(CotQuestion::from_text(&r.instruction).is_some(), "{}", r.instruction);
    }
}

#[test]
fn solve_before_sufficiency_is_flagged() {
    let mut recs = transcript_records();
    recs.swap(0, 3);
    let flags = check_cot_order(&recs[..4]);
    assert!(!flags.is_empty());
}

#[test]
fn record3_teleport_is_flagged() {
    let recs = transcript_records();
    assert!(kinds(&recs[2]).contains(&ViolationKind::Teleport));
    let v = validate_record(&recs[2], &SimConfig::default(), &ValidatorConfig::default());
    let t = v.iter().find(|v| v.kind == ViolationKind::Teleport).unwrap();
    assert_eq!(t.record_index, 3);
    assert!(t.detail.contains("cubeA") && t.detail.contains("0.27"), "{}", t.detail);
}

#[test]
fn oracle_records_validate_clean() {
    for task in register_tasks() {
        for seed in 0..3 {
            for sim in [SimConfig::noiseless(), SimConfig::default()] {
                let recs = oracle_records(&task, seed, &sim).unwrap();
                let asked: std::collections::BTreeSet<_> =
                    recs.iter().map(|r| CotQuestion::from_text(&r.instruction).unwrap()).collect();
                assert!(asked.contains(&CotQuestion::Sufficiency) && asked.contains(&CotQuestion::Solve));
                if task.has_uncertainty() {
                    assert_eq!(asked.len(), 3, "T{}", task.id);
                }
                assert!(check_cot_order(&recs).is_empty());
                for r in &recs {
                    let v = validate_record(r, &sim, &ValidatorConfig::default());
                    assert!(v.is_empty(), "T{} seed {seed} record {}: {v:?}", task.id, r.index);
                }
            }
        }
    }
}

#[test]
fn reference_trajectories() {
    let t1 = task_by_id("1").unwrap();
    let trajs = collect_reference_trajectories(std::slice::from_ref(&t1), &[0, 1], &SimConfig::noiseless()).unwrap();
    assert_eq!(trajs.len(), 2);
    for t in &trajs {
        assert!(t.steps.len() >= 3);
        let text = t.render();
        assert!(text.contains("grasp('cube") && text.contains("Observation 1: ["));
        let rec = InstructionRecord {
            index: 1,
            task: t.task.clone(),
            instruction: CotQuestion::Solve.text().into(),
            input: t.as_input(),
            output_verbal: String::new(),
            output_actions: vec![],
        };
        assert!(kinds(&rec).is_empty());
    }
    let again = collect_reference_trajectories(&[t1], &[0, 1], &SimConfig::noiseless()).unwrap();
    assert_eq!(again, trajs);
}

// Seeded fixtures: a two-cube scene, cubeA grasped.
fn vector(cube_a: [f64; 3], cube_b: [f64; 3], eef: [f64; 3], force_z: f64, finger: f64) -> Vec<f64> {
    let mut v = Vec::new();
    v.extend(cube_a);
    v.extend([0.0, 0.0, 0.0, 1.0]);
    v.extend(cube_b);
    v.extend([0.0, 0.0, 0.0, 1.0]);
    v.extend(eef);
    v.extend([1.0, 0.0, 0.0, 0.0]);
    v.extend([0.0, 0.0, force_z]);
    v.extend([finger, finger]);
    v
}

fn seeded(obs: Vec<f64>, actions: Vec<Action>) -> InstructionRecord {
    let before = vector([0.1, 0.1, 1.025], [-0.1, -0.1, 1.025], [0.0, 0.0, 1.2], 0.0, 0.04);
    InstructionRecord {
        index: 1,
        task: "<weight> Pick up the heavier block*".into(),
        instruction: CotQuestion::Sufficiency.text().into(),
        input: CotInput {
            current: obs.clone(),
            past: vec![PastRound {
                index: 1,
                text: "Lift cubeA.".into(),
                actions,
                observations: vec![before, obs],
            }],
        },
        output_verbal: "No.".into(),
        output_actions: vec![],
    }
}

#[test]
fn each_violation_kind_has_a_trigger() {
    let grasp = vec![Action::Wait, Action::pick("cubeA")];
    let good = seeded(vector([0.1, 0.1, 1.175], [-0.1, -0.1, 1.025], [0.1, 0.1, 1.175], -2.0, 0.02), grasp.clone());
    assert!(kinds(&good).is_empty());

    let far = seeded(vector([0.1, 0.1, 1.175], [-0.1, -0.1, 1.025], [0.1, 0.1, 1.325], -2.0, 0.02), grasp.clone());
    assert_eq!(kinds(&far), vec![ViolationKind::GraspPoseMismatch]);

    let floating = seeded(vector([0.1, 0.1, 1.025], [-0.1, -0.1, 1.1], [0.0, 0.0, 1.2], 0.0, 0.04), vec![Action::Wait, Action::Wait]);
    let k = kinds(&floating);
    assert!(k.contains(&ViolationKind::SupportViolation));
    assert!(!k.contains(&ViolationKind::GraspPoseMismatch));

    let jumped = seeded(vector([0.1, 0.1, 1.175], [0.2, -0.1, 1.025], [0.1, 0.1, 1.175], -2.0, 0.02), grasp.clone());
    assert_eq!(kinds(&jumped), vec![ViolationKind::Teleport]);

    let pushing = seeded(vector([0.1, 0.1, 1.175], [-0.1, -0.1, 1.025], [0.1, 0.1, 1.175], 2.0, 0.02), grasp.clone());
    assert_eq!(kinds(&pushing), vec![ViolationKind::ForceSign]);

    let mut short = good.clone();
    short.input.current.pop();
    assert_eq!(kinds(&short), vec![ViolationKind::VectorArity]);
}

#[test]
fn emit_accounting_and_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let recs = transcript_records();
    let sim = SimConfig::default();
    let path = dir.path().join("records.jsonl");
    let m = emit_dataset(&recs, &sim, &ValidatorConfig::default(), &path, EmitPolicy::DropViolations).unwrap();
    assert_eq!(m.total_records, 8);
    assert!(m.emitted <= 8);
    assert_eq!(m.emitted + m.dropped, 8);
    assert_eq!(m.dropped, m.flagged);
    assert!(m.violations["teleport"] >= 1);
    let lines = std::fs::read_to_string(&path).unwrap();
    assert_eq!(lines.lines().count(), m.emitted);
    let raw = std::fs::read_to_string(dir.path().join("records.raw.jsonl")).unwrap();
    assert_eq!(raw.lines().count(), 8);
    let on_disk: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("records.manifest.json")).unwrap()).unwrap();
    assert_eq!(on_disk["emitted"], m.emitted);

    let keep = dir.path().join("keep.jsonl");
    let m = emit_dataset(&recs, &sim, &ValidatorConfig::default(), &keep, EmitPolicy::KeepFlagged).unwrap();
    assert_eq!(m.emitted, 8);
    let back = read_dataset(&keep).unwrap();
    for (a, b) in recs.iter().zip(&back) {
        assert_eq!(a.task, b.task);
        assert_eq!(a.input, b.input);
        assert_eq!(a.output_actions, b.output_actions);
        assert_eq!(CotQuestion::from_text(&a.instruction), CotQuestion::from_text(&b.instruction));
    }
}

#[test]
fn oracle_records_round_trip_exactly() {
    for task in register_tasks() {
        for r in oracle_records(&task, 2, &SimConfig::default()).unwrap() {
            let line = dataset_line(&r);
            assert_eq!(parse_dataset_line(&line, r.index).unwrap(), r);
        }
    }
}

#[test]
fn empty_input_gives_empty_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("empty.jsonl");
    let m = emit_dataset(&[], &SimConfig::default(), &ValidatorConfig::default(), &path, EmitPolicy::DropViolations).unwrap();
    assert_eq!((m.total_records, m.emitted, m.dropped, m.flagged), (0, 0, 0, 0));
    assert!(m.violations.values().all(|v| *v == 0));
    assert!(m.per_task.is_empty());
    assert_eq!(std::fs::read_to_string(&path).unwrap(), "");
}
