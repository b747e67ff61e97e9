//! Completion backends: a chat-completions HTTP client, a content-addressed
//! record/replay store, a scripted oracle that plays planner and evaluator
//! optimally, and canned test doubles.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::agent::Round;
use crate::belief::BeliefState;
use crate::protocol::Verdict;
use crate::sim::{Observation, SimConfig};
use crate::task::TaskSpec;

pub mod oracle;
pub mod remote;
pub mod replay;
pub mod scripted;
pub mod stub;

pub use oracle::{oracle_plan, oracle_verdict, OracleBackend};
pub use remote::{RemoteBackend, RemoteConfig};
pub use replay::{RecordingBackend, ReplayBackend, ReplayStore, StoredTranscript};
pub use scripted::{FailingBackend, ScriptedBackend};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl ChatMessage {
    pub fn user(content: impl Into<String>) -> Self {
        ChatMessage {
            role: "user".into(),
            content: content.into(),
        }
    }

    pub fn system(content: impl Into<String>) -> Self {
        ChatMessage {
            role: "system".into(),
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub messages: Vec<ChatMessage>,
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
}

/// Hex SHA-256 of the canonical request JSON.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TranscriptKey(pub String);

impl std::fmt::Display for TranscriptKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl ChatRequest {
    pub fn validate(&self) -> Result<(), BackendError> {
        if self.messages.is_empty() {
            return Err(BackendError::InvalidRequest("no messages".into()));
        }
        if let Some(m) = self.messages.iter().find(|m| !matches!(m.role.as_str(), "system" | "user" | "assistant")) {
            return Err(BackendError::InvalidRequest(format!("bad role {}", m.role)));
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(BackendError::InvalidRequest(format!("temperature {}", self.temperature)));
        }
        if self.max_tokens == 0 {
            return Err(BackendError::InvalidRequest("max_tokens is zero".into()));
        }
        Ok(())
    }

    /// Fixed field order, no whitespace, shortest float form.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("request serializes")
    }

    pub fn key(&self) -> TranscriptKey {
        TranscriptKey(hex::encode(Sha256::digest(self.canonical_json().as_bytes())))
    }

    /// Last user message, where the prompt lives.
    pub fn prompt(&self) -> &str {
        self.messages
            .iter()
            .rev()
            .find(|m| m.role == "user")
            .map_or("", |m| m.content.as_str())
    }
}

/// How requests are built from prompt text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RequestSettings {
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
    /// When set, sent as a system message before the prompt.
    pub system_prompt: Option<String>,
}

impl Default for RequestSettings {
    fn default() -> Self {
        RequestSettings {
            model: "gpt-4-0314".into(),
            temperature: 0.0,
            max_tokens: 1024,
            system_prompt: None,
        }
    }
}

impl RequestSettings {
    pub fn request(&self, prompt: &str) -> ChatRequest {
        let mut messages = Vec::new();
        if let Some(s) = &self.system_prompt {
            messages.push(ChatMessage::system(s.clone()));
        }
        messages.push(ChatMessage::user(prompt));
        ChatRequest {
            messages,
            model: self.model.clone(),
            temperature: self.temperature,
            max_tokens: self.max_tokens,
        }
    }
}

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("timed out after {attempts} attempts: {detail}")]
    Timeout { attempts: u32, detail: String },
    #[error("malformed response: {0}")]
    Malformed(String),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("no stored transcript for key {0}")]
    ReplayMiss(TranscriptKey),
    #[error("stored transcript {0} differs from the new response")]
    Integrity(TranscriptKey),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("script exhausted after {0} responses")]
    Exhausted(usize),
    #[error("oracle needs {0}")]
    OracleContext(&'static str),
    #[error("{0}: {1}")]
    Io(String, std::io::Error),
}

impl BackendError {
    /// Stable name recorded in episode logs.
    pub fn kind(&self) -> &'static str {
        match self {
            BackendError::Auth(_) => "auth",
            BackendError::Timeout { .. } => "timeout",
            BackendError::Malformed(_) => "malformed_response",
            BackendError::Transport(_) => "transport",
            BackendError::ReplayMiss(_) => "replay_miss",
            BackendError::Integrity(_) => "integrity",
            BackendError::InvalidRequest(_) => "invalid_request",
            BackendError::Exhausted(_) => "exhausted",
            BackendError::OracleContext(_) => "oracle_context",
            BackendError::Io(..) => "io",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Planner,
    Evaluator,
    TaskGen,
    InstructGen,
}

/// Read-only view of a running episode. Only the oracle looks at it; the
/// belief is the loop's shadow posterior, computed from observations alone.
#[derive(Debug, Clone, Copy)]
pub struct EpisodeView<'a> {
    pub task: &'a TaskSpec,
    pub sim: &'a SimConfig,
    pub belief: &'a BeliefState,
    pub threshold: f64,
    pub observation: &'a Observation,
    /// Completed rounds.
    pub rounds: &'a [Round],
    /// The verdict given at the start of the current round, if any.
    pub verdict: Option<&'a Verdict>,
    pub evaluator_enabled: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct CallContext<'a> {
    pub role: Role,
    pub episode: Option<EpisodeView<'a>>,
}

impl<'a> CallContext<'a> {
    pub fn bare(role: Role) -> Self {
        CallContext { role, episode: None }
    }
}

pub trait Backend: Send {
    fn name(&self) -> &str;
    fn complete(&mut self, req: &ChatRequest, ctx: &CallContext<'_>) -> Result<String, BackendError>;
}

impl<B: Backend + ?Sized> Backend for Box<B> {
    fn name(&self) -> &str {
        (**self).name()
    }

    fn complete(&mut self, req: &ChatRequest, ctx: &CallContext<'_>) -> Result<String, BackendError> {
        (**self).complete(req, ctx)
    }
}

/// Builds one backend per episode so parallel episodes never share a session.
pub trait BackendFactory: Send + Sync {
    fn name(&self) -> String;
    fn make(&self) -> Result<Box<dyn Backend>, BackendError>;
}

impl<F> BackendFactory for (String, F)
where
    F: Fn() -> Result<Box<dyn Backend>, BackendError> + Send + Sync,
{
    fn name(&self) -> String {
        self.0.clone()
    }

    fn make(&self) -> Result<Box<dyn Backend>, BackendError> {
        (self.1)()
    }
}

/// Backend selection as written in config files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendSpec {
    Oracle,
    Remote(RemoteConfig),
    Replay {
        store: std::path::PathBuf,
    },
    /// Remote calls recorded into a store.
    Record {
        store: std::path::PathBuf,
        remote: RemoteConfig,
    },
}

impl BackendSpec {
    pub fn label(&self) -> &'static str {
        match self {
            BackendSpec::Oracle => "oracle",
            BackendSpec::Remote(_) => "remote",
            BackendSpec::Replay { .. } => "replay",
            BackendSpec::Record { .. } => "record",
        }
    }

    pub fn factory(&self) -> Result<Arc<dyn BackendFactory>, BackendError> {
        let label = self.label().to_string();
        Ok(match self.clone() {
            BackendSpec::Oracle => Arc::new((label, || Ok(Box::new(OracleBackend::new()) as Box<dyn Backend>))),
            BackendSpec::Remote(cfg) => {
                RemoteBackend::new(cfg.clone())?;
                Arc::new((label, move || Ok(Box::new(RemoteBackend::new(cfg.clone())?) as Box<dyn Backend>)))
            }
            BackendSpec::Replay { store } => {
                let store = Arc::new(ReplayStore::open(&store)?);
                Arc::new((label, move || Ok(Box::new(ReplayBackend::new(store.clone())) as Box<dyn Backend>)))
            }
            BackendSpec::Record { store, remote } => {
                let store = Arc::new(ReplayStore::open(&store)?);
                RemoteBackend::new(remote.clone())?;
                Arc::new((label, move || {
                    let inner = RemoteBackend::new(remote.clone())?;
                    Ok(Box::new(RecordingBackend::new(inner, store.clone())) as Box<dyn Backend>)
                }))
            }
        })
    }
}
