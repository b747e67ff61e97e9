//! Bundled transcript corpus: appendix prompts and responses, a parser
//! rejection corpus, and synthetic scripted episodes.
//!
//! Every file is embedded in the binary and checked against the SHA-256 in
//! `fixtures/manifest.json` when loaded.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::agent::{run_episode, Env, Episode, EpisodeStatus, LoopConfig, LoopError};
use crate::backends::{Role, ScriptedBackend};
use crate::harness::{judge, task_by_id, EpisodeResult, FailureClass, JudgeOptions};
use crate::protocol::{self, ParseError, ParseErrorKind};
use crate::sim::SimConfig;

#[path = "fixtures_embedded.rs"]
mod embedded;

const MANIFEST: &str = include_str!("../fixtures/manifest.json");

#[derive(Debug, Error)]
pub enum FixtureError {
    #[error("unknown fixture {0}")]
    Unknown(String),
    #[error("fixture file {path} is corrupt: expected sha256 {expected}, got {actual}")]
    Corrupt { path: String, expected: String, actual: String },
    #[error("fixture manifest: {0}")]
    Manifest(String),
    #[error("{0}: {1}")]
    Io(String, std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FixtureRole {
    Prompt,
    Response,
    Episode,
    Rejection,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    Transcript,
    Synthetic,
}

/// Which parser a fixture feeds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParserKind {
    Plan,
    Verdict,
    TaskList,
    Instructions,
    Episode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub role: FixtureRole,
    pub provenance: Provenance,
    pub path: String,
    pub sha256: String,
    #[serde(default)]
    pub parser: Option<ParserKind>,
    /// Annotated error kind for rejection fixtures.
    #[serde(default)]
    pub expect: Option<String>,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
pub struct Manifest {
    pub fixtures: Vec<ManifestEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FixtureFile {
    pub role: FixtureRole,
    pub path: String,
    pub content: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FixtureSet {
    pub id: String,
    pub provenance: Provenance,
    pub parser: Option<ParserKind>,
    pub expect: Option<ParseErrorKind>,
    pub files: Vec<FixtureFile>,
}

impl FixtureSet {
    /// Content of the first file.
    pub fn text(&self) -> &str {
        &self.files[0].content
    }
}

pub fn manifest() -> Manifest {
    serde_json::from_str(MANIFEST).expect("bundled manifest is valid")
}

fn sha256_hex(data: &str) -> String {
    hex::encode(Sha256::digest(data.as_bytes()))
}

fn check(entry: &ManifestEntry, content: String) -> Result<FixtureSet, FixtureError> {
    let actual = sha256_hex(&content);
    if actual != entry.sha256 {
        return Err(FixtureError::Corrupt {
            path: entry.path.clone(),
            expected: entry.sha256.clone(),
            actual,
        });
    }
    let expect = match &entry.expect {
        Some(name) => Some(
            ParseErrorKind::from_name(name)
                .ok_or_else(|| FixtureError::Manifest(format!("{}: unknown error kind {name}", entry.id)))?,
        ),
        None => None,
    };
    Ok(FixtureSet {
        id: entry.id.clone(),
        provenance: entry.provenance,
        parser: entry.parser,
        expect,
        files: vec![FixtureFile {
            role: entry.role,
            path: entry.path.clone(),
            content,
        }],
    })
}

/// Load a bundled fixture by id.
pub fn load_fixture(id: &str) -> Result<FixtureSet, FixtureError> {
    let m = manifest();
    let entry = m
        .fixtures
        .iter()
        .find(|e| e.id == id)
        .ok_or_else(|| FixtureError::Unknown(id.to_string()))?;
    let content = embedded::EMBEDDED
        .iter()
        .find(|(p, _)| *p == entry.path)
        .map(|(_, c)| c.to_string())
        .ok_or_else(|| FixtureError::Unknown(id.to_string()))?;
    check(entry, content)
}

/// Load every fixture listed in `<dir>/manifest.json` from disk.
pub fn load_dir(dir: &Path) -> Result<Vec<FixtureSet>, FixtureError> {
    let mpath = dir.join("manifest.json");
    let text = std::fs::read_to_string(&mpath).map_err(|e| FixtureError::Io(mpath.display().to_string(), e))?;
    let m: Manifest = serde_json::from_str(&text).map_err(|e| FixtureError::Manifest(e.to_string()))?;
    m.fixtures
        .iter()
        .map(|entry| {
            let p = dir.join(&entry.path);
            let content = std::fs::read_to_string(&p).map_err(|e| FixtureError::Io(p.display().to_string(), e))?;
            check(entry, content)
        })
        .collect()
}

pub fn all_fixtures() -> Result<Vec<FixtureSet>, FixtureError> {
    manifest().fixtures.iter().map(|e| load_fixture(&e.id)).collect()
}

/// Run the fixture's parser and return the error kind, if any.
pub fn parse_outcome(set: &FixtureSet) -> Option<Result<(), ParseError>> {
    let text = set.text();
    let r = match set.parser? {
        ParserKind::Plan => protocol::parse_plan(text).map(|_| ()),
        ParserKind::Verdict => protocol::parse_verdict(text).map(|_| ()),
        ParserKind::TaskList => protocol::parse_task_list(text).map(|_| ()),
        ParserKind::Instructions => protocol::parse_instruction_blocks(text).and_then(|r| {
            if r.is_empty() {
                Err(ParseError::new(ParseErrorKind::EmptyPlan, 1, "no records"))
            } else {
                Ok(())
            }
        }),
        ParserKind::Episode => return None,
    };
    Some(r)
}

/// Judged outcome a synthetic episode must replay to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpectedOutcome {
    pub status: EpisodeStatus,
    pub success: bool,
    pub lucky: bool,
    pub failure_class: FailureClass,
    pub rounds: usize,
}

/// Scripted planner and evaluator responses for one seeded episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticEpisode {
    pub note: String,
    pub task: String,
    pub seed: u64,
    /// `noiseless` or `default`.
    pub sim: String,
    pub evaluator: bool,
    pub evaluator_responses: Vec<String>,
    pub planner_responses: Vec<String>,
    pub expect: ExpectedOutcome,
}

impl SyntheticEpisode {
    pub fn parse(set: &FixtureSet) -> Result<Self, FixtureError> {
        serde_json::from_str(set.text()).map_err(|e| FixtureError::Manifest(format!("{}: {e}", set.id)))
    }

    pub fn sim_config(&self) -> SimConfig {
        if self.sim == "noiseless" {
            SimConfig::noiseless()
        } else {
            SimConfig::default()
        }
    }

    pub fn backend(&self) -> ScriptedBackend {
        ScriptedBackend::new(Vec::<String>::new())
            .with_role(Role::Planner, self.planner_responses.clone())
            .with_role(Role::Evaluator, self.evaluator_responses.clone())
    }

    pub fn run(&self) -> Result<(Episode, EpisodeResult), LoopError> {
        let task = task_by_id(&self.task).ok_or_else(|| LoopError::Config(format!("unknown task {}", self.task)))?;
        let cfg = LoopConfig {
            evaluator_enabled: self.evaluator,
            ..LoopConfig::default()
        };
        let ep = run_episode(&task, &mut self.backend(), &Env::new(self.sim_config(), self.seed), &cfg)?;
        let r = judge(&ep, &ep.final_state, &JudgeOptions::default());
        Ok((ep, r))
    }

    /// Whether a replayed run matches the embedded outcome.
    pub fn matches(&self, ep: &Episode, r: &EpisodeResult) -> bool {
        let e = &self.expect;
        ep.status == e.status
            && r.success == e.success
            && r.lucky == e.lucky
            && r.failure_class == e.failure_class
            && ep.rounds.len() == e.rounds
    }
}

/// Every bundled synthetic episode, keyed by fixture id.
pub fn synthetic_episodes() -> Result<Vec<(String, SyntheticEpisode)>, FixtureError> {
    manifest()
        .fixtures
        .iter()
        .filter(|e| e.role == FixtureRole::Episode)
        .map(|e| {
            let set = load_fixture(&e.id)?;
            Ok((e.id.clone(), SyntheticEpisode::parse(&set)?))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_manifest_entry_loads() {
        let all = all_fixtures().unwrap();
        assert_eq!(all.len(), manifest().fixtures.len());
    }

    #[test]
    fn named_fixtures_parse_as_expected() {
        let plan = protocol::parse_plan(load_fixture("a2-planner-round1").unwrap().text()).unwrap();
        assert_eq!(plan.actions.len(), 3);
        let v = protocol::parse_verdict(load_fixture("a1-evaluator-round0").unwrap().text()).unwrap();
        assert!(!v.done);
        let rej = load_fixture("rejection-bad-verb").unwrap();
        assert_eq!(parse_outcome(&rej).unwrap().unwrap_err().kind, ParseErrorKind::BadActionVerb);
    }

    #[test]
    fn tampered_content_is_rejected() {
        let m = manifest();
        let entry = &m.fixtures[0];
        let err = check(entry, "tampered".into()).unwrap_err();
        assert!(matches!(err, FixtureError::Corrupt { .. }));
    }

    #[test]
    fn disk_copy_matches_embedded() {
        let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures");
        assert_eq!(load_dir(&dir).unwrap(), all_fixtures().unwrap());
    }
}
