//! Ingress: turns envelopes into persisted, normalized requests.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::{Arc, Mutex};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::model::{
    normalize, MappingSpec, ModelError, Request, RequestId, RequestKind, RequestSource,
    RequestState, SourceKind,
};
use crate::orchestrator::{transition_as, Clock, CoreError};
use crate::trace::{Actor, EventKind, Store, StoreError};

pub const DEFAULT_BODY_CAP: usize = 1 << 20;

/// An inbound request before classification.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Envelope {
    pub declared_kind: String,
    pub source: RequestSource,
    pub content_type: String,
    pub body: Vec<u8>,
    pub idempotency_key: Option<String>,
}

/// JSON form accepted over HTTP and in envelope files. Exactly one of
/// `payload` (a JSON tree) and `body` (raw text) must be given.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WireEnvelope {
    pub kind: String,
    pub source: String,
    pub origin: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub idempotency_key: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub content_type: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payload: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub body: Option<String>,
}

impl TryFrom<WireEnvelope> for Envelope {
    type Error = ReceiverError;

    fn try_from(w: WireEnvelope) -> Result<Self, Self::Error> {
        let kind: SourceKind = w.source.parse()?;
        let source = RequestSource::new(kind, w.origin)?;
        let body = match (w.payload, w.body) {
            (Some(p), None) => serde_json::to_vec(&p).expect("json values serialize"),
            (None, Some(b)) => b.into_bytes(),
            _ => {
                return Err(ReceiverError::BadEnvelope(
                    "exactly one of payload and body is required".into(),
                ))
            }
        };
        Ok(Envelope {
            declared_kind: w.kind,
            source,
            content_type: w.content_type.unwrap_or_else(|| "application/json".into()),
            body,
            idempotency_key: w.idempotency_key,
        })
    }
}

impl Envelope {
    pub fn json(kind: &str, source: RequestSource, payload: &Value) -> Self {
        Envelope {
            declared_kind: kind.to_string(),
            source,
            content_type: "application/json".into(),
            body: serde_json::to_vec(payload).expect("json values serialize"),
            idempotency_key: None,
        }
    }

    pub fn with_key(mut self, key: &str) -> Self {
        self.idempotency_key = Some(key.to_string());
        self
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ReceiverError {
    #[error("unknown request kind {0:?}")]
    UnknownKind(String),
    #[error("body of {size} bytes exceeds the {cap} byte cap")]
    BodyTooLarge { size: usize, cap: usize },
    #[error("unsupported content type {0:?}")]
    UnsupportedContentType(String),
    #[error("malformed envelope: {0}")]
    BadEnvelope(String),
    /// Normalization failed; the request exists, in state FAILED.
    #[error("request {request_id} failed normalization: {error}")]
    Normalization {
        request_id: RequestId,
        error: ModelError,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error("invalid mappings: {0}")]
    Mappings(String),
}

impl From<StoreError> for ReceiverError {
    fn from(e: StoreError) -> Self {
        ReceiverError::Core(CoreError::Store(e))
    }
}

impl ReceiverError {
    pub fn code(&self) -> &'static str {
        match self {
            ReceiverError::UnknownKind(_) => "UNKNOWN_KIND",
            ReceiverError::BodyTooLarge { .. } => "BODY_TOO_LARGE",
            ReceiverError::UnsupportedContentType(_) => "UNSUPPORTED_CONTENT_TYPE",
            ReceiverError::BadEnvelope(_) => "BAD_ENVELOPE",
            ReceiverError::Normalization { error, .. } => error.code(),
            ReceiverError::Model(e) => e.code(),
            ReceiverError::Core(e) => e.code(),
            ReceiverError::Mappings(_) => "MAPPINGS_INVALID",
        }
    }
}

/// Case-insensitive match of the declared kind; the body is never inspected.
pub fn classify(env: &Envelope) -> Result<RequestKind, ReceiverError> {
    env.declared_kind
        .parse()
        .map_err(|_| ReceiverError::UnknownKind(env.declared_kind.clone()))
}

/// One mapping spec per request kind, as a JSON object keyed by kind.
pub fn load_mappings(path: &Path) -> Result<BTreeMap<RequestKind, MappingSpec>, ReceiverError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ReceiverError::Mappings(format!("{}: {e}", path.display())))?;
    parse_mappings(&text)
}

pub fn parse_mappings(text: &str) -> Result<BTreeMap<RequestKind, MappingSpec>, ReceiverError> {
    let raw: BTreeMap<String, MappingSpec> =
        serde_json::from_str(text).map_err(|e| ReceiverError::Mappings(e.to_string()))?;
    raw.into_iter()
        .map(|(k, v)| {
            Ok((
                k.parse()
                    .map_err(|e: ModelError| ReceiverError::Mappings(e.to_string()))?,
                v,
            ))
        })
        .collect()
}

/// Where request ids come from.
#[derive(Debug)]
pub enum IdSource {
    Random,
    /// UUIDs drawn from a seeded stream, for reproducible runs.
    Seeded(Box<Mutex<ChaCha8Rng>>),
}

impl IdSource {
    pub fn seeded(seed: u64) -> Self {
        IdSource::Seeded(Box::new(Mutex::new(ChaCha8Rng::seed_from_u64(seed))))
    }

    fn next(&self) -> RequestId {
        let id = match self {
            IdSource::Random => uuid::Uuid::new_v4(),
            IdSource::Seeded(rng) => {
                let mut bytes = [0u8; 16];
                rng.lock().expect("id rng poisoned").fill_bytes(&mut bytes);
                uuid::Builder::from_random_bytes(bytes).into_uuid()
            }
        };
        RequestId::new(id.to_string())
    }
}

pub struct Receiver {
    store: Store,
    clock: Arc<dyn Clock>,
    mappings: BTreeMap<RequestKind, MappingSpec>,
    body_cap: usize,
    ids: IdSource,
    /// Makes idempotency lookup, creation and normalization one step.
    admit: Mutex<()>,
}

impl std::fmt::Debug for Receiver {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Receiver")
            .field("kinds", &self.mappings.keys().collect::<Vec<_>>())
            .field("body_cap", &self.body_cap)
            .finish()
    }
}

impl Receiver {
    pub fn new(
        store: Store,
        clock: Arc<dyn Clock>,
        mappings: BTreeMap<RequestKind, MappingSpec>,
        ids: IdSource,
    ) -> Self {
        Receiver {
            store,
            clock,
            mappings,
            body_cap: DEFAULT_BODY_CAP,
            ids,
            admit: Mutex::new(()),
        }
    }

    pub fn with_body_cap(mut self, cap: usize) -> Self {
        self.body_cap = cap;
        self
    }

    /// Creates a request in RECEIVED and normalizes it to NORMALIZED, tracing
    /// both. A reused idempotency key returns the earlier request as is.
    ///
    /// Kinds without a configured mapping normalize with an empty,
    /// non-strict spec: the body must still parse.
    pub fn ingest(&self, env: &Envelope) -> Result<Request, ReceiverError> {
        if env.body.len() > self.body_cap {
            return Err(ReceiverError::BodyTooLarge {
                size: env.body.len(),
                cap: self.body_cap,
            });
        }
        if !env.content_type.to_ascii_lowercase().contains("json") {
            return Err(ReceiverError::UnsupportedContentType(
                env.content_type.clone(),
            ));
        }
        let kind = classify(env)?;
        // held through normalization, so a duplicate never sees a half-ingested request
        let _admit = self.admit.lock().expect("admission lock poisoned");
        if let Some(prior) = env
            .idempotency_key
            .as_deref()
            .and_then(|k| self.store.find_idempotent(k))
        {
            if let Some(r) = self.store.get_request(&prior) {
                return Ok(r);
            }
        }
        let mut req = Request::new(
            self.ids.next(),
            kind,
            env.source.clone(),
            self.clock.now(),
            env.body.clone(),
        );
        req.idempotency_key = env.idempotency_key.clone();
        self.store.put_request(&req)?;
        let at = req.received_at;
        self.store.emit(
            req.id(),
            Actor::Receiver,
            EventKind::Received,
            at,
            json!({
                "kind": kind.as_str(),
                "source": req.source.kind.as_str(),
                "origin": req.source.origin(),
                "content_type": env.content_type,
                "bytes": env.body.len(),
            }),
        )?;
        let empty = MappingSpec::empty(false);
        let spec = self.mappings.get(&kind).unwrap_or(&empty);
        let at = self.clock.now();
        match normalize(&env.body, spec, Some(req.id().as_str())) {
            Ok(record) => {
                let mut with_record = req.clone();
                with_record.normalized = Some(record);
                let bindings = with_record.record().len();
                Ok(transition_as(
                    &self.store,
                    Actor::Receiver,
                    &with_record,
                    RequestState::Normalized,
                    at,
                    json!({"bindings": bindings}),
                )?)
            }
            Err(error) => {
                self.store.emit(
                    req.id(),
                    Actor::Receiver,
                    EventKind::Error,
                    at,
                    json!({"step": "normalize", "code": error.code(), "message": error.to_string()}),
                )?;
                transition_as(
                    &self.store,
                    Actor::Receiver,
                    &req,
                    RequestState::Failed,
                    at,
                    json!({}),
                )?;
                Err(ReceiverError::Normalization {
                    request_id: req.id().clone(),
                    error,
                })
            }
        }
    }
}
