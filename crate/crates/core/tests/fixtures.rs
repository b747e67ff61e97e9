use planner_core::fixtures::{manifest, synthetic_episodes, FixtureRole, Provenance};

#[test]
fn synthetic_episodes_replay_to_their_outcomes() {
    let eps = synthetic_episodes().unwrap();
    assert_eq!(eps.len(), 7);
    for (id, ep) in &eps {
        assert!(ep.note.to_lowercase().contains("synthetic"), "{id}");
        let (episode, result) = ep.run().unwrap();
        assert!(ep.matches(&episode, &result), "{id}: {:?} {result:?} rounds {}", episode.status, episode.rounds.len());
    }
}

#[test]
fn synthetic_episode_replays_are_deterministic() {
    for (id, ep) in synthetic_episodes().unwrap() {
        let (a, ra) = ep.run().unwrap();
        let (b, rb) = ep.run().unwrap();
        assert_eq!(ra, rb, "{id}");
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap(), "{id}");
    }
}

#[test]
fn synthetic_files_are_never_labeled_as_appendix() {
    for e in manifest().fixtures {
        if e.role == FixtureRole::Episode {
            assert_eq!(e.provenance, Provenance::Synthetic, "{}", e.id);
        }
    }
}

#[test]
fn outcome_mix_covers_success_and_failures() {
    let eps = synthetic_episodes().unwrap();
    let successes = eps.iter().filter(|(_, e)| e.expect.success).count();
    let lucky = eps.iter().filter(|(_, e)| e.expect.lucky).count();
    assert!(successes >= 2 && successes < eps.len());
    assert_eq!(lucky, 1);
}
