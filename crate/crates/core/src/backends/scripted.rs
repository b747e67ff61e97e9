use std::collections::{BTreeMap, VecDeque};
use std::sync::{Arc, Mutex};

use super::{Backend, BackendError, CallContext, ChatRequest, Role};

/// Canned responses, consumed in order per role. Requests are kept for
/// inspection.
#[derive(Debug, Clone, Default)]
pub struct ScriptedBackend {
    queues: BTreeMap<Role, VecDeque<String>>,
    shared: VecDeque<String>,
    repeat: Option<String>,
    served: usize,
    pub seen: Arc<Mutex<Vec<(Role, ChatRequest)>>>,
}

impl ScriptedBackend {
    /// One queue shared by all roles.
    pub fn new(responses: impl IntoIterator<Item = impl Into<String>>) -> Self {
        ScriptedBackend {
            shared: responses.into_iter().map(Into::into).collect(),
            ..Default::default()
        }
    }

    /// Always answers `text`.
    pub fn repeat(text: impl Into<String>) -> Self {
        ScriptedBackend {
            repeat: Some(text.into()),
            ..Default::default()
        }
    }

    /// Separate queue for `role`, consulted before the shared one.
    pub fn with_role(mut self, role: Role, responses: impl IntoIterator<Item = impl Into<String>>) -> Self {
        self.queues
            .entry(role)
            .or_default()
            .extend(responses.into_iter().map(Into::into));
        self
    }
}

impl Backend for ScriptedBackend {
    fn name(&self) -> &str {
        "scripted"
    }

    fn complete(&mut self, req: &ChatRequest, ctx: &CallContext<'_>) -> Result<String, BackendError> {
        self.seen
            .lock()
            .unwrap_or_else(|p| p.into_inner())
            .push((ctx.role, req.clone()));
        let next = self
            .queues
            .get_mut(&ctx.role)
            .and_then(VecDeque::pop_front)
            .or_else(|| self.shared.pop_front())
            .or_else(|| self.repeat.clone());
        match next {
            Some(t) => {
                self.served += 1;
                Ok(t)
            }
            None => Err(BackendError::Exhausted(self.served)),
        }
    }
}

/// Fails every call with the error `make` builds.
pub struct FailingBackend<F> {
    make: F,
}

impl<F: Fn() -> BackendError + Send> FailingBackend<F> {
    pub fn new(make: F) -> Self {
        FailingBackend { make }
    }
}

impl<F: Fn() -> BackendError + Send> Backend for FailingBackend<F> {
    fn name(&self) -> &str {
        "failing"
    }

    fn complete(&mut self, _req: &ChatRequest, _ctx: &CallContext<'_>) -> Result<String, BackendError> {
        Err((self.make)())
    }
}
