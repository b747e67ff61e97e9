use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{Backend, BackendError, CallContext, ChatRequest};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RemoteConfig {
    /// Full URL of the chat-completions endpoint.
    pub endpoint: String,
    /// Environment variable holding the bearer key.
    pub api_key_env: String,
    pub timeout_secs: f64,
    pub max_attempts: u32,
    /// First retry delay; doubled on each further attempt.
    pub backoff_ms: u64,
}

impl Default for RemoteConfig {
    fn default() -> Self {
        RemoteConfig {
            endpoint: "https://api.openai.com/v1/chat/completions".into(),
            api_key_env: "OPENAI_API_KEY".into(),
            timeout_secs: 60.0,
            max_attempts: 3,
            backoff_ms: 500,
        }
    }
}

pub struct RemoteBackend {
    cfg: RemoteConfig,
    key: String,
    agent: ureq::Agent,
}

enum Attempt {
    Done(String),
    Retry { timeout: bool, detail: String },
    Fatal(BackendError),
}

impl RemoteBackend {
    /// Reads the key from the configured environment variable.
    pub fn new(cfg: RemoteConfig) -> Result<Self, BackendError> {
        let key = std::env::var(&cfg.api_key_env)
            .ok()
            .filter(|k| !k.trim().is_empty())
            .ok_or_else(|| BackendError::Auth(format!("environment variable {} is not set", cfg.api_key_env)))?;
        Ok(Self::with_key(cfg, key))
    }

    pub fn with_key(cfg: RemoteConfig, key: impl Into<String>) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(cfg.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        RemoteBackend {
            cfg,
            key: key.into(),
            agent,
        }
    }

    fn attempt(&self, req: &ChatRequest) -> Attempt {
        let sent = self
            .agent
            .post(&self.cfg.endpoint)
            .header("Authorization", &format!("Bearer {}", self.key))
            .send_json(req);
        let mut resp = match sent {
            Ok(r) => r,
            Err(e) => {
                let timeout = match &e {
                    ureq::Error::Timeout(_) => true,
                    ureq::Error::Io(io) => matches!(io.kind(), std::io::ErrorKind::TimedOut | std::io::ErrorKind::WouldBlock),
                    _ => false,
                };
                return Attempt::Retry {
                    timeout,
                    detail: e.to_string(),
                };
            }
        };
        let status = resp.status().as_u16();
        let body = match resp.body_mut().read_to_string() {
            Ok(b) => b,
            Err(e) => {
                let timeout = matches!(e, ureq::Error::Timeout(_));
                return Attempt::Retry {
                    timeout,
                    detail: e.to_string(),
                };
            }
        };
        match status {
            200..=299 => match extract_content(&body) {
                Ok(t) => Attempt::Done(t),
                Err(e) => Attempt::Fatal(e),
            },
            401 | 403 => Attempt::Fatal(BackendError::Auth(format!("HTTP {status}: {}", snippet(&body)))),
            408 | 429 | 500..=599 => Attempt::Retry {
                timeout: status == 408,
                detail: format!("HTTP {status}: {}", snippet(&body)),
            },
            _ => Attempt::Fatal(BackendError::Transport(format!("HTTP {status}: {}", snippet(&body)))),
        }
    }
}

fn snippet(body: &str) -> String {
    body.chars().take(200).collect()
}

/// `choices[0].message.content` of a chat-completions response body.
pub fn extract_content(body: &str) -> Result<String, BackendError> {
    let v: serde_json::Value =
        serde_json::from_str(body).map_err(|e| BackendError::Malformed(format!("{e}: {}", snippet(body))))?;
    v.pointer("/choices/0/message/content")
        .and_then(|c| c.as_str())
        .map(str::to_string)
        .ok_or_else(|| BackendError::Malformed(format!("no choices[0].message.content in {}", snippet(body))))
}

impl Backend for RemoteBackend {
    fn name(&self) -> &str {
        "remote"
    }

    fn complete(&mut self, req: &ChatRequest, _ctx: &CallContext<'_>) -> Result<String, BackendError> {
        req.validate()?;
        let attempts = self.cfg.max_attempts.max(1);
        let mut last = (false, String::new());
        for i in 0..attempts {
            match self.attempt(req) {
                Attempt::Done(t) => return Ok(t),
                Attempt::Fatal(e) => return Err(e),
                Attempt::Retry { timeout, detail } => {
                    log::warn!("remote attempt {}/{attempts} failed: {detail}", i + 1);
                    last = (timeout, detail);
                    if i + 1 < attempts {
                        std::thread::sleep(Duration::from_millis(self.cfg.backoff_ms << i));
                    }
                }
            }
        }
        let (timeout, detail) = last;
        if timeout {
            Err(BackendError::Timeout { attempts, detail })
        } else {
            Err(BackendError::Transport(format!("{detail} (after {attempts} attempts)")))
        }
    }
}
