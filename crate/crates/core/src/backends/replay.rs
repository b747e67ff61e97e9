use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use super::{Backend, BackendError, CallContext, ChatRequest, TranscriptKey};

/// One stored exchange; the file is named after `key`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredTranscript {
    pub key: TranscriptKey,
    pub request: ChatRequest,
    pub response: String,
}

/// Append-only directory of transcripts, one JSON file per key.
#[derive(Debug)]
pub struct ReplayStore {
    dir: PathBuf,
    write_lock: Mutex<()>,
}

static TMP_COUNTER: AtomicU64 = AtomicU64::new(0);

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> BackendError + '_ {
    move |e| BackendError::Io(path.display().to_string(), e)
}

impl ReplayStore {
    /// Opens (creating if needed) a store rooted at `dir`.
    pub fn open(dir: &Path) -> Result<Self, BackendError> {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
        Ok(ReplayStore {
            dir: dir.to_path_buf(),
            write_lock: Mutex::new(()),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn path(&self, key: &TranscriptKey) -> PathBuf {
        self.dir.join(format!("{key}.json"))
    }

    fn read(&self, key: &TranscriptKey) -> Result<Option<StoredTranscript>, BackendError> {
        let path = self.path(key);
        match std::fs::read_to_string(&path) {
            Ok(text) => serde_json::from_str(&text)
                .map(Some)
                .map_err(|e| BackendError::Malformed(format!("{}: {e}", path.display()))),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(io_err(&path)(e)),
        }
    }

    pub fn lookup(&self, req: &ChatRequest) -> Result<Option<String>, BackendError> {
        let key = req.key();
        match self.read(&key)? {
            Some(t) if t.request == *req => Ok(Some(t.response)),
            Some(_) => Err(BackendError::Integrity(key)),
            None => Ok(None),
        }
    }

    /// Stores `response` under the request's key. Re-recording the same pair
    /// is a no-op; a different response for a stored key is an error.
    pub fn record(&self, req: &ChatRequest, response: &str) -> Result<TranscriptKey, BackendError> {
        let key = req.key();
        let _guard = self.write_lock.lock().unwrap_or_else(|p| p.into_inner());
        if let Some(existing) = self.read(&key)? {
            if existing.request == *req && existing.response == response {
                return Ok(key);
            }
            return Err(BackendError::Integrity(key));
        }
        let entry = StoredTranscript {
            key: key.clone(),
            request: req.clone(),
            response: response.to_string(),
        };
        let body = serde_json::to_string_pretty(&entry).expect("transcript serializes");
        let tmp = self.dir.join(format!(
            ".{key}.{}.{}.tmp",
            std::process::id(),
            TMP_COUNTER.fetch_add(1, Ordering::Relaxed)
        ));
        std::fs::write(&tmp, body).map_err(io_err(&tmp))?;
        let path = self.path(&key);
        std::fs::rename(&tmp, &path).map_err(io_err(&path))?;
        Ok(key)
    }

    pub fn keys(&self) -> Result<Vec<TranscriptKey>, BackendError> {
        let mut out: Vec<TranscriptKey> = std::fs::read_dir(&self.dir)
            .map_err(io_err(&self.dir))?
            .filter_map(|e| e.ok())
            .filter_map(|e| {
                let name = e.file_name().into_string().ok()?;
                let stem = name.strip_suffix(".json")?;
                (!stem.starts_with('.')).then(|| TranscriptKey(stem.to_string()))
            })
            .collect();
        out.sort();
        Ok(out)
    }
}

/// Answers only from the store; a miss is an error naming the key.
pub struct ReplayBackend {
    store: Arc<ReplayStore>,
}

impl ReplayBackend {
    pub fn new(store: Arc<ReplayStore>) -> Self {
        ReplayBackend { store }
    }
}

impl Backend for ReplayBackend {
    fn name(&self) -> &str {
        "replay"
    }

    fn complete(&mut self, req: &ChatRequest, _ctx: &CallContext<'_>) -> Result<String, BackendError> {
        self.store.lookup(req)?.ok_or_else(|| BackendError::ReplayMiss(req.key()))
    }
}

/// Serves from the store when possible, otherwise asks `inner` and records
/// the answer.
pub struct RecordingBackend<B> {
    inner: B,
    store: Arc<ReplayStore>,
}

impl<B: Backend> RecordingBackend<B> {
    pub fn new(inner: B, store: Arc<ReplayStore>) -> Self {
        RecordingBackend { inner, store }
    }
}

impl<B: Backend> Backend for RecordingBackend<B> {
    fn name(&self) -> &str {
        "record"
    }

    fn complete(&mut self, req: &ChatRequest, ctx: &CallContext<'_>) -> Result<String, BackendError> {
        if let Some(hit) = self.store.lookup(req)? {
            return Ok(hit);
        }
        let text = self.inner.complete(req, ctx)?;
        self.store.record(req, &text)?;
        Ok(text)
    }
}
