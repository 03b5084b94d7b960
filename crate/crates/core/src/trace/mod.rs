//! Audit trail and reporting over the unified store.

mod event;
mod kpi;
mod log;
mod store;

use thiserror::Error;

pub use event::{Actor, EventKind, TraceEvent, REGISTRY_TRACE_ID};
pub use kpi::{compute_kpis, export_report, parse_report_json, KpiReport, ReportFormat};
pub use log::{
    decode_frames, encode_frame, CrashMode, Decoded, FaultyBackend, FileBackend, LogBackend,
    LogRecord, MemoryBackend,
};
pub use store::{Recovery, Snapshot, Store};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StoreError {
    #[error("request {request_id}: expected seq {expected}, got {got}")]
    SequenceGap {
        request_id: String,
        expected: u64,
        got: u64,
    },
    #[error("request {request_id}: event {seq} is earlier than its predecessor")]
    TimeRegression { request_id: String, seq: u64 },
    #[error("unknown request {0}")]
    UnknownRequest(String),
    #[error("log corrupt at offset {offset}: {reason}")]
    Corrupt { offset: u64, reason: String },
    #[error("log writer crashed: {0}")]
    Crashed(String),
    #[error("i/o: {0}")]
    Io(String),
}

impl StoreError {
    pub fn code(&self) -> &'static str {
        match self {
            StoreError::SequenceGap { .. } => "SEQUENCE_GAP",
            StoreError::TimeRegression { .. } => "TIME_REGRESSION",
            StoreError::UnknownRequest(_) => "UNKNOWN_REQUEST",
            StoreError::Corrupt { .. } => "LOG_CORRUPT",
            StoreError::Crashed(_) => "STORE_CRASHED",
            StoreError::Io(_) => "IO_ERROR",
        }
    }
}
