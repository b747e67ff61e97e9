use planner_core::harness::{register_tasks, task_by_id};
use planner_core::sim::{reset, step, Action, ExecStatus, Pose7, SimConfig, EEF_DOWN};
use planner_core::task::{Tag, TaskSpec};
use proptest::prelude::*;

/// Noiseless lift of cubeA after overriding its mass.
fn lift_reading(mass: f64) -> f64 {
    let task = TaskSpec::new("lift", [], "Lift cubeA.");
    let (mut state, _) = reset(&task, 3, &SimConfig::noiseless()).unwrap();
    state.cubes[0].mass = mass;
    let (obs, report) = state.apply(&Action::pick("cubeA"));
    assert_eq!(report.status, ExecStatus::Ok);
    obs.force[2]
}

#[test]
fn lift_force_follows_mass() {
    let f = lift_reading(0.40);
    assert!((f + 3.92).abs() <= 0.01, "{f}");
}

#[test]
fn heavy_lift_saturates_exactly() {
    let sim = SimConfig::noiseless();
    let limit = sim.force_saturation / sim.gravity;
    for m in [limit + 1e-6, 0.6, 0.75, 0.9, 2.0] {
        assert_eq!(lift_reading(m), -5.0, "mass {m}");
    }
}

#[test]
fn noisy_lift_stays_within_saturation() {
    let task = task_by_id("4").unwrap();
    for seed in 0..200 {
        let (mut state, _) = reset(&task, seed, &SimConfig::default()).unwrap();
        let (obs, _) = state.apply(&Action::pick("cubeA"));
        assert!(obs.force[2].abs() <= 5.0);
    }
}

#[test]
fn reset_is_a_pure_function_of_seed() {
    for task in register_tasks() {
        for seed in 0..5 {
            let (a, oa) = reset(&task, seed, &SimConfig::default()).unwrap();
            let (b, ob) = reset(&task, seed, &SimConfig::default()).unwrap();
            assert_eq!(a, b);
            assert_eq!(oa, ob);
        }
    }
}

#[test]
fn heavy_cube_is_balanced_across_seeds() {
    let task = TaskSpec::new("m", [Tag::Mass], "x");
    let sim = SimConfig::default();
    let a_heavy = (0..1000)
        .filter(|s| {
            let (state, _) = reset(&task, *s, &sim).unwrap();
            state.cubes[0].mass > state.cubes[1].mass
        })
        .count();
    assert!((450..=550).contains(&a_heavy), "{a_heavy}");
}

#[test]
fn masses_fall_in_their_class_ranges() {
    let task = TaskSpec::new("m", [Tag::Mass, Tag::Three], "x");
    let sim = SimConfig::default();
    for seed in 0..200 {
        let (state, _) = reset(&task, seed, &sim).unwrap();
        let mut m: Vec<f64> = state.cubes.iter().map(|c| c.mass).collect();
        m.sort_by(f64::total_cmp);
        assert!(sim.light_mass_range.contains(m[0]));
        assert!(sim.medium_mass_range.contains(m[1]));
        assert!(sim.heavy_mass_range.contains(m[2]));
    }
}

#[test]
fn observations_hide_mass_and_fixed() {
    let (state, obs) = reset(&task_by_id("6").unwrap(), 0, &SimConfig::default()).unwrap();
    let text = serde_json::to_string(&obs).unwrap();
    assert!(!text.contains("mass") && !text.contains("fixed"));
    assert_eq!(obs.flatten().len(), 26);
    assert_eq!(state.observe(), obs);
}

#[test]
fn stacking_sequence_lands_on_top() {
    let task = task_by_id("1").unwrap();
    let sim = SimConfig::noiseless();
    let (state, _) = reset(&task, 0, &sim).unwrap();
    let b = state.cube("cubeB").unwrap().pose.position;
    let (s, _, r1) = step(&state, &Action::pick("cubeA"));
    let (s, _, r2) = step(&s, &Action::place(Pose7::new([b[0], b[1], b[2] + 0.06], EEF_DOWN)));
    let (s, obs, _) = step(&s, &Action::Reset);
    assert_eq!((r1.status, r2.status), (ExecStatus::Ok, ExecStatus::Ok));
    let a = obs.cube_poses["cubeA"].position;
    assert!((a[0] - b[0]).abs() < 1e-9 && (a[1] - b[1]).abs() < 1e-9);
    assert!((a[2] - (b[2] + sim.cube_size)).abs() < 1e-9);
    assert!(s.invariant_violations().is_empty());
}

fn action_strategy() -> impl Strategy<Value = Action> {
    let pose = (-0.5f64..0.5, -0.5f64..0.5, 1.0f64..1.5).prop_map(|(x, y, z)| Pose7::new([x, y, z], EEF_DOWN));
    prop_oneof![
        prop::sample::select(vec!["cubeA", "cubeB", "cubeC"]).prop_map(Action::pick),
        pose.clone().prop_map(Action::place),
        pose.prop_map(Action::reach),
        Just(Action::Reset),
        Just(Action::Wait),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn invariants_hold_under_random_actions(
        seed in 0u64..1000,
        task_idx in 0usize..6,
        actions in prop::collection::vec(action_strategy(), 0..12),
    ) {
        let task = register_tasks()[task_idx].clone();
        let (mut state, _) = reset(&task, seed, &SimConfig::default()).unwrap();
        let masses = state.masses();
        let fixed = state.fixed_flags();
        for a in &actions {
            let (obs, _) = state.apply(a);
            prop_assert!(state.invariant_violations().is_empty(), "{:?}", state.invariant_violations());
            prop_assert!(obs.force[2].abs() <= 5.0);
            for c in state.cubes.iter().filter(|c| c.fixed) {
                let (s0, _) = reset(&task, seed, &SimConfig::default()).unwrap();
                prop_assert_eq!(c.pose.position, s0.cube(&c.id).unwrap().pose.position);
            }
        }
        prop_assert_eq!(state.masses(), masses);
        prop_assert_eq!(state.fixed_flags(), fixed);
    }
}
