//! Append-only record log: a sequence of `[u32 LE length][JSON record]` frames.

use std::fs::{File, OpenOptions};
use std::io::{self, Read, Write};
use std::path::Path;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use super::{StoreError, TraceEvent};
use crate::model::{Request, RequestId};
use crate::orchestrator::FulfillmentOutcome;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", content = "data", rename_all = "snake_case")]
pub enum LogRecord {
    Request(Request),
    Event(TraceEvent),
    Outcome {
        request_id: RequestId,
        outcome: FulfillmentOutcome,
    },
}

pub fn encode_frame(record: &LogRecord) -> Vec<u8> {
    let body = serde_json::to_vec(record).expect("log records always serialize");
    let len = u32::try_from(body.len()).expect("record larger than 4 GiB");
    let mut frame = Vec::with_capacity(4 + body.len());
    frame.extend_from_slice(&len.to_le_bytes());
    frame.extend_from_slice(&body);
    frame
}

/// Frames recovered from a log image.
#[derive(Debug)]
pub struct Decoded {
    /// Each record with the byte offset its frame starts at.
    pub records: Vec<(u64, LogRecord)>,
    /// Length of the well-formed prefix.
    pub valid_len: u64,
    /// Bytes of an incomplete trailing frame, dropped on recovery.
    pub torn_bytes: u64,
}

/// Splits a log image into records. An incomplete final frame is a torn
/// write and is reported, not an error; a complete frame that does not
/// parse is corruption.
pub fn decode_frames(bytes: &[u8]) -> Result<Decoded, StoreError> {
    let mut records = Vec::new();
    let mut pos = 0usize;
    while pos < bytes.len() {
        let Some(header) = bytes.get(pos..pos + 4) else {
            break;
        };
        let len = u32::from_le_bytes(header.try_into().expect("four bytes")) as usize;
        let Some(body) = bytes.get(pos + 4..pos + 4 + len) else {
            break;
        };
        let record = serde_json::from_slice(body).map_err(|e| StoreError::Corrupt {
            offset: pos as u64,
            reason: e.to_string(),
        })?;
        records.push((pos as u64, record));
        pos += 4 + len;
    }
    Ok(Decoded {
        records,
        valid_len: pos as u64,
        torn_bytes: (bytes.len() - pos) as u64,
    })
}

/// Where frames go. Implementations must either persist the whole frame
/// or report an error; the store treats any error as a crash.
pub trait LogBackend: Send + 'static {
    fn append(&mut self, frame: &[u8]) -> io::Result<()>;
}

#[derive(Debug)]
pub struct FileBackend {
    file: File,
    fsync: bool,
}

impl FileBackend {
    /// Opens `path` for appending, first cutting it back to `valid_len`
    /// so a torn tail from an earlier crash is discarded.
    pub fn open(path: &Path, valid_len: u64, fsync: bool) -> io::Result<Self> {
        let file = OpenOptions::new()
            .create(true)
            .read(true)
            .append(true)
            .open(path)?;
        if file.metadata()?.len() != valid_len {
            file.set_len(valid_len)?;
            file.sync_all()?;
        }
        Ok(FileBackend { file, fsync })
    }
}

impl LogBackend for FileBackend {
    fn append(&mut self, frame: &[u8]) -> io::Result<()> {
        self.file.write_all(frame)?;
        self.file.flush()?;
        if self.fsync {
            self.file.sync_data()?;
        }
        Ok(())
    }
}

pub fn read_log(path: &Path) -> io::Result<Vec<u8>> {
    match File::open(path) {
        Ok(mut f) => {
            let mut buf = Vec::new();
            f.read_to_end(&mut buf)?;
            Ok(buf)
        }
        Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(Vec::new()),
        Err(e) => Err(e),
    }
}

/// Shared byte buffer standing in for a log file.
#[derive(Debug, Clone, Default)]
pub struct MemoryBackend {
    buf: Arc<Mutex<Vec<u8>>>,
}

impl MemoryBackend {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_bytes(bytes: Vec<u8>) -> Self {
        MemoryBackend {
            buf: Arc::new(Mutex::new(bytes)),
        }
    }

    pub fn bytes(&self) -> Vec<u8> {
        self.buf.lock().expect("memory log poisoned").clone()
    }

    pub(crate) fn replace(&self, bytes: Vec<u8>) {
        *self.buf.lock().expect("memory log poisoned") = bytes;
    }
}

impl LogBackend for MemoryBackend {
    fn append(&mut self, frame: &[u8]) -> io::Result<()> {
        self.buf
            .lock()
            .expect("memory log poisoned")
            .extend_from_slice(frame);
        Ok(())
    }
}

/// Where within an append the simulated crash lands.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CrashMode {
    /// Nothing of the frame reaches the log.
    BeforeWrite,
    /// Only the first half of the frame reaches the log.
    Torn,
    /// The frame is fully written but the process dies before acknowledging.
    AfterWrite,
}

/// Memory log that crashes on the append with index `crash_at` (0-based)
/// and refuses everything after it.
#[derive(Debug)]
pub struct FaultyBackend {
    inner: MemoryBackend,
    crash_at: u64,
    mode: CrashMode,
    appends: u64,
}

impl FaultyBackend {
    pub fn new(inner: MemoryBackend, crash_at: u64, mode: CrashMode) -> Self {
        FaultyBackend {
            inner,
            crash_at,
            mode,
            appends: 0,
        }
    }
}

impl LogBackend for FaultyBackend {
    fn append(&mut self, frame: &[u8]) -> io::Result<()> {
        let n = self.appends;
        self.appends += 1;
        if n < self.crash_at {
            return self.inner.append(frame);
        }
        if n == self.crash_at {
            match self.mode {
                CrashMode::BeforeWrite => {}
                CrashMode::Torn => self.inner.append(&frame[..frame.len() / 2])?,
                CrashMode::AfterWrite => self.inner.append(frame)?,
            }
        }
        Err(io::Error::other("injected crash"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Timestamp;
    use crate::trace::{Actor, EventKind};

    fn event(seq: u64) -> LogRecord {
        LogRecord::Event(TraceEvent {
            request_id: RequestId::new("R1"),
            seq,
            actor: Actor::Core,
            kind: EventKind::Routed,
            at: Timestamp(5),
            detail: serde_json::json!({"workflow": "w"}),
        })
    }

    #[test]
    fn frames_round_trip_and_torn_tail_is_dropped() {
        let mut bytes = encode_frame(&event(1));
        let first = bytes.len() as u64;
        bytes.extend(encode_frame(&event(2)));
        let full = bytes.len();
        let d = decode_frames(&bytes).unwrap();
        assert_eq!(d.records.len(), 2);
        assert_eq!(d.records[1].0, first);
        bytes.truncate(full - 3);
        let d = decode_frames(&bytes).unwrap();
        assert_eq!(d.records.len(), 1);
        assert_eq!(d.valid_len, first);
        assert!(d.torn_bytes > 0);
    }

    #[test]
    fn complete_garbage_frame_is_corruption() {
        let mut bytes = 3u32.to_le_bytes().to_vec();
        bytes.extend_from_slice(b"{x}");
        assert!(matches!(
            decode_frames(&bytes),
            Err(StoreError::Corrupt { offset: 0, .. })
        ));
    }

    #[test]
    fn faulty_backend_modes() {
        for (mode, kept) in [(CrashMode::BeforeWrite, 1), (CrashMode::AfterWrite, 2)] {
            let mem = MemoryBackend::new();
            let mut b = FaultyBackend::new(mem.clone(), 1, mode);
            b.append(&encode_frame(&event(1))).unwrap();
            assert!(b.append(&encode_frame(&event(2))).is_err());
            assert!(b.append(&encode_frame(&event(3))).is_err());
            assert_eq!(decode_frames(&mem.bytes()).unwrap().records.len(), kept);
        }
        let mem = MemoryBackend::new();
        let mut b = FaultyBackend::new(mem.clone(), 0, CrashMode::Torn);
        assert!(b.append(&encode_frame(&event(1))).is_err());
        let d = decode_frames(&mem.bytes()).unwrap();
        assert!(d.records.is_empty() && d.torn_bytes > 0);
    }
}
