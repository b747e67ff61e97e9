use std::collections::BTreeMap;

use planner_core::fixtures::{all_fixtures, load_fixture, parse_outcome, Provenance};
use planner_core::protocol::{
    parse_observation, parse_plan, parse_verdict, quantize_action, quantize_observation, render_observation,
    render_plan, render_verdict, ObsStyle, ParseErrorKind, PlanOutput, Verdict,
};
use planner_core::sim::{Action, Observation, Pose7, SimConfig, EEF_DOWN};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const WORDS: [&str; 8] = ["pick", "the", "lighter", "cube", "then", "stack", "it", "carefully"];

fn random_pose(rng: &mut ChaCha8Rng) -> Pose7 {
    loop {
        let p = [rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5), rng.random_range(1.0..1.6)];
        let q = [0; 4].map(|_| rng.random_range(-1.0..1.0));
        let pose = Pose7::new(p, q);
        // keep the quantized quaternion away from zero
        if q.iter().map(|v: &f64| (v * 100.0).round().abs()).sum::<f64>() >= 10.0 {
            return pose;
        }
    }
}

fn random_action(rng: &mut ChaCha8Rng) -> Action {
    match rng.random_range(0..5) {
        0 => Action::pick(["cubeA", "cubeB", "cubeC"][rng.random_range(0..3)]),
        1 => Action::place(random_pose(rng)),
        2 => Action::reach(random_pose(rng)),
        3 => Action::Reset,
        _ => Action::Wait,
    }
}

fn random_plan(rng: &mut ChaCha8Rng) -> PlanOutput {
    let n_words = rng.random_range(0..12);
    let explanation: Vec<&str> = (0..n_words).map(|_| WORDS[rng.random_range(0..WORDS.len())]).collect();
    PlanOutput {
        explanation: explanation.join(" "),
        actions: (0..rng.random_range(1..8)).map(|_| random_action(rng)).collect(),
    }
}

fn random_observation(rng: &mut ChaCha8Rng) -> Observation {
    let n = rng.random_range(2..=3);
    let cube_poses: BTreeMap<String, Pose7> =
        ["cubeA", "cubeB", "cubeC"][..n].iter().map(|id| (id.to_string(), random_pose(rng))).collect();
    Observation {
        cube_poses,
        eef_pose: random_pose(rng),
        force: [0; 3].map(|_| rng.random_range(-6.0..6.0)),
        gripper: [0; 2].map(|_| rng.random_range(0.0..0.04)),
    }
}

#[test]
fn appendix_corpus_parses() {
    let mut checked = 0;
    for set in all_fixtures().unwrap() {
        if set.provenance != Provenance::Transcript || set.expect.is_some() {
            continue;
        }
        if let Some(r) = parse_outcome(&set) {
            assert!(r.is_ok(), "{}: {:?}", set.id, r);
            checked += 1;
        }
    }
    assert!(checked >= 5, "only {checked} appendix responses");
}

#[test]
fn rejection_corpus_fails_with_annotated_kind() {
    let mut checked = 0;
    for set in all_fixtures().unwrap() {
        let Some(kind) = set.expect else { continue };
        let err = parse_outcome(&set).expect("rejection has a parser").unwrap_err();
        assert_eq!(err.kind, kind, "{}", set.id);
        checked += 1;
    }
    assert!(checked >= 10);
}

#[test]
fn transcript_plan_is_the_three_action_stack() {
    let plan = parse_plan(load_fixture("a2-planner-round1").unwrap().text()).unwrap();
    assert_eq!(plan.actions.len(), 3);
    assert!(matches!(plan.actions[0], Action::Pick { .. }));
    assert!(matches!(plan.actions[1], Action::Place { .. }));
    assert_eq!(plan.actions[2], Action::Reset);
    let v = parse_verdict(load_fixture("a1-evaluator-round0").unwrap().text()).unwrap();
    assert!(!v.done);
}

#[test]
fn thousand_plan_and_observation_round_trips() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let sim = SimConfig::default();
    for i in 0..1000 {
        let plan = random_plan(&mut rng);
        let want = PlanOutput {
            explanation: plan.explanation.clone(),
            actions: plan.actions.iter().map(quantize_action).collect(),
        };
        assert_eq!(parse_plan(&render_plan(&plan)).unwrap(), want, "plan {i}");

        let obs = random_observation(&mut rng);
        let text = render_observation(&obs, ObsStyle::Vector, &sim);
        assert_eq!(parse_observation(&text).unwrap(), quantize_observation(&obs), "obs {i}");
    }
}

#[test]
fn quantized_values_are_fixed_points() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let sim = SimConfig::default();
    for _ in 0..200 {
        let q = quantize_observation(&random_observation(&mut rng));
        let text = render_observation(&q, ObsStyle::Vector, &sim);
        assert_eq!(render_observation(&parse_observation(&text).unwrap(), ObsStyle::Vector, &sim), text);
    }
}

#[test]
fn observation_flattening_round_trips() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..100 {
        let obs = random_observation(&mut rng);
        let ids: Vec<String> = obs.cube_poses.keys().cloned().collect();
        let flat = obs.flatten();
        assert_eq!(flat.len(), Observation::flat_len(ids.len()));
        assert_eq!(Observation::unflatten(&flat, &ids).unwrap(), obs);
    }
}

#[test]
fn rendered_plan_matches_wire_format() {
    let plan = PlanOutput {
        explanation: "Stack cubeB on cubeA.".into(),
        actions: vec![
            Action::pick("cubeB"),
            Action::place(Pose7::new([0.174, -0.031, 1.1], EEF_DOWN)),
            Action::Reset,
        ],
    };
    assert_eq!(
        render_plan(&plan),
        "EXPLAIN\nStack cubeB on cubeA.\nEXECUTE\nACTION PICK cubeB\nACTION PLACE [0.17 -0.03 1.10 1.00 0.00 0.00 0.00]\nACTION RESET\n"
    );
}

#[test]
fn malformed_actions_carry_their_kind() {
    let cases = [
        ("EXECUTE\nACTION JUMP\n", ParseErrorKind::BadActionVerb),
        ("EXECUTE\nACTION PLACE [1 2 3]\n", ParseErrorKind::BadPoseArity),
        ("EXECUTE\nACTION PLACE [1 2 x 1 0 0 0]\n", ParseErrorKind::BadNumber),
        ("EXECUTE\n", ParseErrorKind::EmptyPlan),
        ("EXPLAIN\nonly prose\n", ParseErrorKind::MissingSection),
    ];
    for (text, kind) in cases {
        assert_eq!(parse_plan(text).unwrap_err().kind, kind, "{text:?}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn verdicts_round_trip(done: bool, words in proptest::collection::vec("[a-z]{1,8}", 1..10)) {
        let v = Verdict { done, rationale: words.join(" ") };
        prop_assert_eq!(parse_verdict(&render_verdict(&v)).unwrap(), v);
    }

    #[test]
    fn plans_round_trip_after_quantization(seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let plan = random_plan(&mut rng);
        let once = parse_plan(&render_plan(&plan)).unwrap();
        prop_assert_eq!(parse_plan(&render_plan(&once)).unwrap(), once.clone());
        prop_assert_eq!(once.actions, plan.actions.iter().map(quantize_action).collect::<Vec<_>>());
    }
}
