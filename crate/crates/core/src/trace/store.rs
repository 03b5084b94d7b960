//! The unified store: requests, trace events and outcomes in one
//! write-ahead log, with an in-memory index for queries.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::mpsc::{self, Receiver, SyncSender};
use std::sync::{Arc, Mutex, RwLock};
use std::thread::JoinHandle;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use super::log::{
    decode_frames, encode_frame, read_log, FileBackend, LogBackend, LogRecord, MemoryBackend,
};
use super::{Actor, EventKind, StoreError, TraceEvent};
use crate::model::{Request, RequestId, Timestamp};
use crate::orchestrator::FulfillmentOutcome;

const QUEUE_DEPTH: usize = 1024;

struct Cmd {
    frame: Vec<u8>,
    ack: mpsc::Sender<Result<u64, StoreError>>,
}

#[derive(Clone)]
struct WalState {
    offset: u64,
    hasher: Sha256,
}

#[derive(Default)]
struct Index {
    requests: BTreeMap<RequestId, Request>,
    order: Vec<RequestId>,
    events: BTreeMap<RequestId, Vec<TraceEvent>>,
    /// Highest sequence number handed out per request, committed or not.
    reserved: BTreeMap<RequestId, u64>,
    outcomes: BTreeMap<RequestId, FulfillmentOutcome>,
    idempotency: BTreeMap<String, RequestId>,
}

impl Index {
    fn apply_request(&mut self, req: Request) {
        if let Some(key) = &req.idempotency_key {
            self.idempotency
                .entry(key.clone())
                .or_insert_with(|| req.id().clone());
        }
        if !self.requests.contains_key(req.id()) {
            self.order.push(req.id().clone());
        }
        self.requests.insert(req.id().clone(), req);
    }

    fn check_event(&self, e: &TraceEvent) -> Result<(), StoreError> {
        let expected = self.reserved.get(&e.request_id).copied().unwrap_or(0) + 1;
        if e.seq != expected {
            return Err(StoreError::SequenceGap {
                request_id: e.request_id.to_string(),
                expected,
                got: e.seq,
            });
        }
        if let Some(last) = self.events.get(&e.request_id).and_then(|v| v.last()) {
            if e.at < last.at {
                return Err(StoreError::TimeRegression {
                    request_id: e.request_id.to_string(),
                    seq: e.seq,
                });
            }
        }
        Ok(())
    }

    fn commit_event(&mut self, e: TraceEvent) {
        self.reserved
            .entry(e.request_id.clone())
            .and_modify(|s| *s = (*s).max(e.seq))
            .or_insert(e.seq);
        self.events.entry(e.request_id.clone()).or_default().push(e);
    }
}

/// Canonical snapshot file: every request with the log offset it covers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Snapshot {
    pub log_offset: u64,
    pub requests: Vec<Request>,
}

/// What reopening a log found.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Recovery {
    pub records: usize,
    pub torn_bytes: u64,
    pub snapshot_used: bool,
}

struct Shared {
    index: RwLock<Index>,
    sender: Mutex<Option<SyncSender<Cmd>>>,
    wal: Arc<Mutex<WalState>>,
    writer: Mutex<Option<JoinHandle<()>>>,
    /// Serializes request-record appends against snapshots.
    request_gate: Mutex<()>,
}

impl Drop for Shared {
    fn drop(&mut self) {
        self.sender.lock().map(|mut s| s.take()).ok();
        if let Some(handle) = self.writer.lock().ok().and_then(|mut h| h.take()) {
            let _ = handle.join();
        }
    }
}

/// Cheaply cloneable handle to one store.
///
/// Every mutation is framed, handed to a single writer thread through a
/// bounded queue, and acknowledged once the backend accepted it; only then
/// does the index change and the call return.
#[derive(Clone)]
pub struct Store {
    shared: Arc<Shared>,
}

impl std::fmt::Debug for Store {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Store")
            .field("log_offset", &self.log_offset())
            .finish()
    }
}

fn writer_loop(rx: Receiver<Cmd>, mut backend: Box<dyn LogBackend>, wal: Arc<Mutex<WalState>>) {
    while let Ok(cmd) = rx.recv() {
        match backend.append(&cmd.frame) {
            Ok(()) => {
                let offset = {
                    let mut w = wal.lock().expect("wal state poisoned");
                    w.hasher.update(&cmd.frame);
                    w.offset += cmd.frame.len() as u64;
                    w.offset
                };
                let _ = cmd.ack.send(Ok(offset));
            }
            Err(e) => {
                let _ = cmd.ack.send(Err(StoreError::Crashed(e.to_string())));
                return;
            }
        }
    }
}

impl Store {
    /// A fresh store over an in-memory log.
    pub fn memory() -> Store {
        Store::open_memory(MemoryBackend::new())
            .expect("an empty log always opens")
            .0
    }

    /// Recovers whatever `mem` already holds, cutting a torn tail, and
    /// keeps appending to it.
    pub fn open_memory(mem: MemoryBackend) -> Result<(Store, Recovery), StoreError> {
        let bytes = mem.bytes();
        let decoded = decode_frames(&bytes)?;
        let valid = bytes[..decoded.valid_len as usize].to_vec();
        mem.replace(valid);
        Store::recover(Box::new(mem), &bytes, decoded, None)
    }

    /// Opens a file-backed store, optionally seeded from a snapshot. A
    /// snapshot that does not line up with the log is ignored; the log is
    /// always the source of truth.
    pub fn open(
        log_path: &Path,
        snapshot_path: Option<&Path>,
        fsync: bool,
    ) -> Result<(Store, Recovery), StoreError> {
        let bytes = read_log(log_path)
            .map_err(|e| StoreError::Io(format!("{}: {e}", log_path.display())))?;
        let decoded = decode_frames(&bytes)?;
        let backend = FileBackend::open(log_path, decoded.valid_len, fsync)
            .map_err(|e| StoreError::Io(format!("{}: {e}", log_path.display())))?;
        let snapshot = match snapshot_path {
            Some(p) if p.exists() => {
                let text = std::fs::read(p)
                    .map_err(|e| StoreError::Io(format!("{}: {e}", p.display())))?;
                serde_json::from_slice::<Snapshot>(&text).ok()
            }
            _ => None,
        };
        Store::recover(Box::new(backend), &bytes, decoded, snapshot)
    }

    /// Starts a store over any backend. `existing` is what the backend
    /// already holds and must not contain a torn tail.
    pub fn with_backend(
        backend: Box<dyn LogBackend>,
        existing: &[u8],
    ) -> Result<(Store, Recovery), StoreError> {
        let decoded = decode_frames(existing)?;
        if decoded.torn_bytes > 0 {
            return Err(StoreError::Corrupt {
                offset: decoded.valid_len,
                reason: "torn tail".into(),
            });
        }
        Store::recover(backend, existing, decoded, None)
    }

    fn recover(
        backend: Box<dyn LogBackend>,
        bytes: &[u8],
        decoded: super::log::Decoded,
        snapshot: Option<Snapshot>,
    ) -> Result<(Store, Recovery), StoreError> {
        let snapshot = snapshot.filter(|s| {
            s.log_offset == decoded.valid_len
                || decoded.records.iter().any(|(off, _)| *off == s.log_offset)
        });
        let mut index = Index::default();
        let skip_requests_before = match &snapshot {
            Some(s) => {
                for r in &s.requests {
                    index.apply_request(r.clone());
                }
                s.log_offset
            }
            None => 0,
        };
        let records = decoded.records.len();
        for (offset, record) in decoded.records {
            match record {
                LogRecord::Request(r) if offset >= skip_requests_before => index.apply_request(r),
                LogRecord::Request(_) => {}
                LogRecord::Event(e) => {
                    index.check_event(&e).map_err(|err| StoreError::Corrupt {
                        offset,
                        reason: err.to_string(),
                    })?;
                    index.commit_event(e);
                }
                LogRecord::Outcome {
                    request_id,
                    outcome,
                } => {
                    index.outcomes.insert(request_id, outcome);
                }
            }
        }
        let valid = &bytes[..decoded.valid_len as usize];
        let wal = Arc::new(Mutex::new(WalState {
            offset: decoded.valid_len,
            hasher: Sha256::new_with_prefix(valid),
        }));
        let (tx, rx) = mpsc::sync_channel(QUEUE_DEPTH);
        let writer_wal = wal.clone();
        let handle = std::thread::Builder::new()
            .name("frm-log-writer".into())
            .spawn(move || writer_loop(rx, backend, writer_wal))
            .map_err(|e| StoreError::Io(e.to_string()))?;
        let store = Store {
            shared: Arc::new(Shared {
                index: RwLock::new(index),
                sender: Mutex::new(Some(tx)),
                wal,
                writer: Mutex::new(Some(handle)),
                request_gate: Mutex::new(()),
            }),
        };
        let recovery = Recovery {
            records,
            torn_bytes: decoded.torn_bytes,
            snapshot_used: snapshot.is_some(),
        };
        Ok((store, recovery))
    }

    /// Appends one frame and waits for the writer's acknowledgement.
    fn write(&self, record: &LogRecord) -> Result<u64, StoreError> {
        let frame = encode_frame(record);
        let (ack_tx, ack_rx) = mpsc::channel();
        let sender = self.shared.sender.lock().expect("sender poisoned").clone();
        let sender = sender.ok_or_else(|| StoreError::Crashed("store closed".into()))?;
        sender
            .send(Cmd { frame, ack: ack_tx })
            .map_err(|_| StoreError::Crashed("log writer stopped".into()))?;
        ack_rx
            .recv()
            .map_err(|_| StoreError::Crashed("log writer stopped".into()))?
    }

    /// Persists the current version of a request.
    pub fn put_request(&self, req: &Request) -> Result<(), StoreError> {
        let _gate = self.shared.request_gate.lock().expect("gate poisoned");
        self.write(&LogRecord::Request(req.clone()))?;
        self.shared
            .index
            .write()
            .expect("index poisoned")
            .apply_request(req.clone());
        Ok(())
    }

    pub fn put_outcome(
        &self,
        id: &RequestId,
        outcome: &FulfillmentOutcome,
    ) -> Result<(), StoreError> {
        self.write(&LogRecord::Outcome {
            request_id: id.clone(),
            outcome: outcome.clone(),
        })?;
        self.shared
            .index
            .write()
            .expect("index poisoned")
            .outcomes
            .insert(id.clone(), outcome.clone());
        Ok(())
    }

    /// Appends an event whose `seq` the caller chose; it must be the next
    /// one for its request.
    pub fn record_event(&self, e: TraceEvent) -> Result<(), StoreError> {
        {
            let mut idx = self.shared.index.write().expect("index poisoned");
            idx.check_event(&e)?;
            idx.reserved.insert(e.request_id.clone(), e.seq);
        }
        self.write(&LogRecord::Event(e.clone()))?;
        self.shared
            .index
            .write()
            .expect("index poisoned")
            .commit_event(e);
        Ok(())
    }

    /// Appends an event with the next free sequence number.
    pub fn emit(
        &self,
        request_id: &RequestId,
        actor: Actor,
        kind: EventKind,
        at: Timestamp,
        detail: Value,
    ) -> Result<TraceEvent, StoreError> {
        let e = {
            let mut idx = self.shared.index.write().expect("index poisoned");
            let seq = idx.reserved.get(request_id).copied().unwrap_or(0) + 1;
            let e = TraceEvent {
                request_id: request_id.clone(),
                seq,
                actor,
                kind,
                at,
                detail,
            };
            idx.check_event(&e)?;
            idx.reserved.insert(request_id.clone(), seq);
            e
        };
        self.write(&LogRecord::Event(e.clone()))?;
        self.shared
            .index
            .write()
            .expect("index poisoned")
            .commit_event(e.clone());
        Ok(e)
    }

    pub fn get_request(&self, id: &RequestId) -> Option<Request> {
        self.shared
            .index
            .read()
            .expect("index poisoned")
            .requests
            .get(id)
            .cloned()
    }

    /// All events of a request in sequence order.
    pub fn get_trace(&self, id: &RequestId) -> Result<Vec<TraceEvent>, StoreError> {
        let idx = self.shared.index.read().expect("index poisoned");
        match idx.events.get(id) {
            Some(events) => Ok(events.clone()),
            None if idx.requests.contains_key(id) => Ok(Vec::new()),
            None => Err(StoreError::UnknownRequest(id.to_string())),
        }
    }

    pub fn get_outcome(&self, id: &RequestId) -> Option<FulfillmentOutcome> {
        self.shared
            .index
            .read()
            .expect("index poisoned")
            .outcomes
            .get(id)
            .cloned()
    }

    pub fn find_idempotent(&self, key: &str) -> Option<RequestId> {
        self.shared
            .index
            .read()
            .expect("index poisoned")
            .idempotency
            .get(key)
            .cloned()
    }

    /// Requests in first-persisted order.
    pub fn requests(&self) -> Vec<Request> {
        let idx = self.shared.index.read().expect("index poisoned");
        idx.order
            .iter()
            .map(|id| idx.requests[id].clone())
            .collect()
    }

    /// Every event of every request, grouped by request id.
    pub fn all_events(&self) -> BTreeMap<RequestId, Vec<TraceEvent>> {
        self.shared
            .index
            .read()
            .expect("index poisoned")
            .events
            .clone()
    }

    pub fn request_count(&self) -> usize {
        self.shared
            .index
            .read()
            .expect("index poisoned")
            .requests
            .len()
    }

    /// Bytes of log acknowledged so far.
    pub fn log_offset(&self) -> u64 {
        self.shared.wal.lock().expect("wal poisoned").offset
    }

    /// Hex SHA-256 over the acknowledged log bytes.
    pub fn digest(&self) -> String {
        let w = self.shared.wal.lock().expect("wal poisoned").clone();
        hex::encode(w.hasher.finalize())
    }

    pub fn snapshot(&self) -> Snapshot {
        let _gate = self.shared.request_gate.lock().expect("gate poisoned");
        let log_offset = self.log_offset();
        let idx = self.shared.index.read().expect("index poisoned");
        Snapshot {
            log_offset,
            requests: idx.requests.values().cloned().collect(),
        }
    }

    /// Writes the snapshot atomically (temporary file, then rename).
    pub fn write_snapshot(&self, path: &Path) -> Result<Snapshot, StoreError> {
        let snap = self.snapshot();
        let tmp = path.with_extension("tmp");
        let bytes = serde_json::to_vec(&snap).expect("snapshots serialize");
        std::fs::write(&tmp, bytes)
            .and_then(|_| std::fs::rename(&tmp, path))
            .map_err(|e| StoreError::Io(format!("{}: {e}", path.display())))?;
        Ok(snap)
    }
}
