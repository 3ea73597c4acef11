//! Record/replay transports backed by an append-only store file.
//!
//! Record mode persists every request/response pair as it happens, keyed by
//! the request's canonical hash. Identical requests are stored as separate
//! entries (the gateway never deduplicates), and replay serves entries per
//! key in first-recorded order so a replayed run sees the same sequence of
//! responses the recorded run did.

use std::collections::HashMap;
use std::collections::VecDeque;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{CompletionRequest, CompletionResponse, Transport, TransportError};

/// One recorded request/response pair.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StoredCall {
    pub key: String,
    pub request: CompletionRequest,
    pub response: CompletionResponse,
}

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error("store I/O failed: {0}")]
    Io(#[from] std::io::Error),
    #[error("store line {line} is malformed: {reason}")]
    Malformed { line: usize, reason: String },
}

/// Parse a single store line. Untrusted input; never panics.
pub fn parse_store_line(line: &str) -> Result<StoredCall, serde_json::Error> {
    serde_json::from_str(line)
}

/// An in-memory view of a replay store file.
#[derive(Debug, Default, Clone)]
pub struct ReplayStore {
    entries: Vec<StoredCall>,
}

impl ReplayStore {
    pub fn load(path: &Path) -> Result<Self, ReplayError> {
        let file = File::open(path)?;
        let mut entries = Vec::new();
        for (idx, line) in BufReader::new(file).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let call = parse_store_line(&line).map_err(|e| ReplayError::Malformed {
                line: idx + 1,
                reason: e.to_string(),
            })?;
            entries.push(call);
        }
        Ok(Self { entries })
    }

    pub fn entries(&self) -> &[StoredCall] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Wraps an inner transport and appends every exchange to the store file.
pub struct RecordTransport {
    inner: Arc<dyn Transport>,
    sink: Mutex<File>,
}

impl RecordTransport {
    pub fn create(inner: Arc<dyn Transport>, path: &Path) -> Result<Self, ReplayError> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self { inner, sink: Mutex::new(file) })
    }
}

impl Transport for RecordTransport {
    fn name(&self) -> &str {
        "record"
    }

    fn send(&self, request: &CompletionRequest) -> Result<CompletionResponse, TransportError> {
        let response = self.inner.send(request)?;
        let entry = StoredCall {
            key: request.canonical_hash(),
            request: request.clone(),
            response: response.clone(),
        };
        let line = serde_json::to_string(&entry)
            .map_err(|e| TransportError::Protocol(format!("record serialization failed: {e}")))?;
        let mut sink = self.sink.lock().expect("record sink poisoned");
        writeln!(sink, "{line}")
            .and_then(|_| sink.flush())
            .map_err(|e| TransportError::Protocol(format!("record write failed: {e}")))?;
        Ok(response)
    }
}

/// Serves recorded responses byte-identically; errors on any miss.
pub struct ReplayTransport {
    queues: Mutex<HashMap<String, VecDeque<CompletionResponse>>>,
}

impl ReplayTransport {
    pub fn from_store(store: &ReplayStore) -> Self {
        let mut queues: HashMap<String, VecDeque<CompletionResponse>> = HashMap::new();
        for entry in store.entries() {
            queues.entry(entry.key.clone()).or_default().push_back(entry.response.clone());
        }
        Self { queues: Mutex::new(queues) }
    }

    pub fn from_path(path: &Path) -> Result<Self, ReplayError> {
        Ok(Self::from_store(&ReplayStore::load(path)?))
    }
}

impl Transport for ReplayTransport {
    fn name(&self) -> &str {
        "replay"
    }

    fn send(&self, request: &CompletionRequest) -> Result<CompletionResponse, TransportError> {
        let key = request.canonical_hash();
        let mut queues = self.queues.lock().expect("replay queues poisoned");
        match queues.get_mut(&key).and_then(|q| q.pop_front()) {
            Some(response) => Ok(response),
            None => Err(TransportError::ReplayMiss(key)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{Message, ScriptedTransport};

    fn request(text: &str) -> CompletionRequest {
        CompletionRequest::new("generator", vec![Message::user(text)])
    }

    #[test]
    fn record_then_replay_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("store.jsonl");

        let scripted = Arc::new(ScriptedTransport::new());
        scripted.push_text("first");
        scripted.push_text("second");
        let recorder = RecordTransport::create(scripted, &path).unwrap();
        let a = recorder.send(&request("alpha")).unwrap();
        let b = recorder.send(&request("beta")).unwrap();

        let replay = ReplayTransport::from_path(&path).unwrap();
        assert_eq!(replay.send(&request("alpha")).unwrap(), a);
        assert_eq!(replay.send(&request("beta")).unwrap(), b);
    }

    #[test]
    fn altered_request_is_a_replay_miss() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("store.jsonl");
        let scripted = Arc::new(ScriptedTransport::new());
        scripted.push_text("only");
        let recorder = RecordTransport::create(scripted, &path).unwrap();
        recorder.send(&request("alpha")).unwrap();

        let replay = ReplayTransport::from_path(&path).unwrap();
        match replay.send(&request("alpha, but different")) {
            Err(TransportError::ReplayMiss(_)) => {}
            other => panic!("expected replay miss, got {other:?}"),
        }
    }

    #[test]
    fn identical_requests_record_two_entries_and_replay_in_order() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("store.jsonl");
        let scripted = Arc::new(ScriptedTransport::new());
        scripted.push_text("take one");
        scripted.push_text("take two");
        let recorder = RecordTransport::create(scripted, &path).unwrap();
        recorder.send(&request("same")).unwrap();
        recorder.send(&request("same")).unwrap();

        let store = ReplayStore::load(&path).unwrap();
        assert_eq!(store.len(), 2, "no silent deduplication of identical requests");
        assert_eq!(store.entries()[0].key, store.entries()[1].key);

        let replay = ReplayTransport::from_store(&store);
        assert_eq!(replay.send(&request("same")).unwrap().text, "take one");
        assert_eq!(replay.send(&request("same")).unwrap().text, "take two");
        assert!(matches!(
            replay.send(&request("same")),
            Err(TransportError::ReplayMiss(_))
        ));
    }

    #[test]
    fn malformed_store_lines_are_reported_with_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("store.jsonl");
        std::fs::write(&path, "{\"key\": \"truncated\n").unwrap();
        match ReplayStore::load(&path) {
            Err(ReplayError::Malformed { line: 1, .. }) => {}
            other => panic!("expected malformed-line error, got {other:?}"),
        }
    }
}
