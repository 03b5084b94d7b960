//! Request identity, classification and lifecycle.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::record::NormalizedRecord;
use super::value::Timestamp;
use super::ModelError;

/// What the incoming request is, as declared by its sender.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum RequestKind {
    Order,
    Event,
    Process,
    Message,
    Data,
}

impl RequestKind {
    pub const ALL: [RequestKind; 5] = [
        RequestKind::Order,
        RequestKind::Event,
        RequestKind::Process,
        RequestKind::Message,
        RequestKind::Data,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            RequestKind::Order => "ORDER",
            RequestKind::Event => "EVENT",
            RequestKind::Process => "PROCESS",
            RequestKind::Message => "MESSAGE",
            RequestKind::Data => "DATA",
        }
    }
}

impl fmt::Display for RequestKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RequestKind {
    type Err = ModelError;

    /// Case-insensitive; anything outside the five kinds is rejected.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        RequestKind::ALL
            .into_iter()
            .find(|k| k.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| ModelError::UnknownKind(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SourceKind {
    External,
    Internal,
}

impl SourceKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SourceKind::External => "EXTERNAL",
            SourceKind::Internal => "INTERNAL",
        }
    }
}

impl FromStr for SourceKind {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.eq_ignore_ascii_case("external") {
            Ok(SourceKind::External)
        } else if s.eq_ignore_ascii_case("internal") {
            Ok(SourceKind::Internal)
        } else {
            Err(ModelError::UnknownSource(s.to_string()))
        }
    }
}

/// Where a request came from: an external party or an internal channel.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawSource")]
pub struct RequestSource {
    pub kind: SourceKind,
    origin: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSource {
    kind: SourceKind,
    origin: String,
}

impl TryFrom<RawSource> for RequestSource {
    type Error = ModelError;

    fn try_from(raw: RawSource) -> Result<Self, Self::Error> {
        RequestSource::new(raw.kind, raw.origin)
    }
}

impl RequestSource {
    pub fn new(kind: SourceKind, origin: impl Into<String>) -> Result<Self, ModelError> {
        let origin = origin.into();
        if origin.trim().is_empty() {
            return Err(ModelError::EmptyOrigin);
        }
        Ok(RequestSource { kind, origin })
    }

    pub fn external(origin: &str) -> Self {
        RequestSource::new(SourceKind::External, origin).expect("non-empty origin")
    }

    pub fn internal(origin: &str) -> Self {
        RequestSource::new(SourceKind::Internal, origin).expect("non-empty origin")
    }

    pub fn origin(&self) -> &str {
        &self.origin
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum RequestState {
    Received,
    Normalized,
    Planned,
    InProgress,
    Fulfilled,
    Failed,
    Compensated,
}

impl RequestState {
    pub const ALL: [RequestState; 7] = [
        RequestState::Received,
        RequestState::Normalized,
        RequestState::Planned,
        RequestState::InProgress,
        RequestState::Fulfilled,
        RequestState::Failed,
        RequestState::Compensated,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            RequestState::Received => "RECEIVED",
            RequestState::Normalized => "NORMALIZED",
            RequestState::Planned => "PLANNED",
            RequestState::InProgress => "IN_PROGRESS",
            RequestState::Fulfilled => "FULFILLED",
            RequestState::Failed => "FAILED",
            RequestState::Compensated => "COMPENSATED",
        }
    }

    pub fn can_transition_to(self, to: RequestState) -> bool {
        use RequestState::*;
        matches!(
            (self, to),
            (Received, Normalized)
                | (Normalized, Planned)
                | (Planned, InProgress)
                | (InProgress, Fulfilled)
                | (Received | Normalized | Planned | InProgress, Failed)
                | (Failed, Compensated)
        )
    }

    /// States a `FulfillmentOutcome` may end in.
    pub fn is_outcome(self) -> bool {
        matches!(
            self,
            RequestState::Fulfilled | RequestState::Failed | RequestState::Compensated
        )
    }

    /// No transition leaves these.
    pub fn is_final(self) -> bool {
        matches!(self, RequestState::Fulfilled | RequestState::Compensated)
    }

    /// States that imply the payload was normalized.
    pub fn requires_record(self) -> bool {
        matches!(
            self,
            RequestState::Normalized
                | RequestState::Planned
                | RequestState::InProgress
                | RequestState::Fulfilled
        )
    }
}

impl fmt::Display for RequestState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RequestState {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        RequestState::ALL
            .into_iter()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| ModelError::UnknownState(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RequestId(String);

impl RequestId {
    pub fn new(id: impl Into<String>) -> Self {
        RequestId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for RequestId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// A unit of work travelling through receiver, core and adapters.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Request {
    id: RequestId,
    pub kind: RequestKind,
    pub source: RequestSource,
    pub received_at: Timestamp,
    #[serde(with = "base64_bytes")]
    pub raw_payload: Vec<u8>,
    pub normalized: Option<NormalizedRecord>,
    pub state: RequestState,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub idempotency_key: Option<String>,
}

impl Request {
    pub fn new(
        id: RequestId,
        kind: RequestKind,
        source: RequestSource,
        received_at: Timestamp,
        raw_payload: Vec<u8>,
    ) -> Self {
        Request {
            id,
            kind,
            source,
            received_at,
            raw_payload,
            normalized: None,
            state: RequestState::Received,
            idempotency_key: None,
        }
    }

    pub fn id(&self) -> &RequestId {
        &self.id
    }

    /// The record the core routes on; empty before normalization.
    pub fn record(&self) -> &NormalizedRecord {
        static EMPTY: std::sync::OnceLock<NormalizedRecord> = std::sync::OnceLock::new();
        self.normalized
            .as_ref()
            .unwrap_or_else(|| EMPTY.get_or_init(NormalizedRecord::new))
    }

    /// Pure state change; persistence and tracing happen in the orchestrator.
    pub fn transitioned(&self, to: RequestState) -> Result<Request, ModelError> {
        if !self.state.can_transition_to(to) {
            return Err(ModelError::IllegalTransition {
                from: self.state,
                to,
            });
        }
        if to.requires_record() && self.normalized.is_none() {
            return Err(ModelError::MissingRecord(to));
        }
        let mut next = self.clone();
        next.state = to;
        Ok(next)
    }
}

mod base64_bytes {
    use base64::engine::general_purpose::STANDARD;
    use base64::Engine;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8], serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&STANDARD.encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(deserializer: D) -> Result<Vec<u8>, D::Error> {
        let s = String::deserialize(deserializer)?;
        STANDARD.decode(s).map_err(serde::de::Error::custom)
    }
}
