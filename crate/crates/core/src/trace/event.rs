use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::Value;

use crate::model::{RequestId, Timestamp};

/// Who emitted an event. Serialized as `RECEIVER`, `CORE` or `FPA:<name>`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Actor {
    Receiver,
    Core,
    Fpa(String),
}

impl fmt::Display for Actor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Actor::Receiver => f.write_str("RECEIVER"),
            Actor::Core => f.write_str("CORE"),
            Actor::Fpa(name) => write!(f, "FPA:{name}"),
        }
    }
}

impl Serialize for Actor {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Actor {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        match s.as_str() {
            "RECEIVER" => Ok(Actor::Receiver),
            "CORE" => Ok(Actor::Core),
            other => match other.strip_prefix("FPA:") {
                Some(name) if !name.is_empty() => Ok(Actor::Fpa(name.to_string())),
                _ => Err(serde::de::Error::custom(format!("unknown actor {other:?}"))),
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum EventKind {
    Received,
    Normalized,
    Routed,
    Planned,
    Dispatch,
    Complete,
    StateChange,
    Amendment,
    Compensation,
    Error,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::Received => "RECEIVED",
            EventKind::Normalized => "NORMALIZED",
            EventKind::Routed => "ROUTED",
            EventKind::Planned => "PLANNED",
            EventKind::Dispatch => "DISPATCH",
            EventKind::Complete => "COMPLETE",
            EventKind::StateChange => "STATE_CHANGE",
            EventKind::Amendment => "AMENDMENT",
            EventKind::Compensation => "COMPENSATION",
            EventKind::Error => "ERROR",
        }
    }
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One audit record. `seq` starts at 1 and is gapless per request.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceEvent {
    pub request_id: RequestId,
    pub seq: u64,
    pub actor: Actor,
    pub kind: EventKind,
    pub at: Timestamp,
    pub detail: Value,
}

impl TraceEvent {
    /// The `to` state of a request-level `STATE_CHANGE`, if this is one.
    pub fn state_to(&self) -> Option<&str> {
        if self.kind != EventKind::StateChange || self.actor != Actor::Core {
            return None;
        }
        self.detail.get("to").and_then(Value::as_str)
    }

    pub fn detail_str(&self, key: &str) -> Option<&str> {
        self.detail.get(key).and_then(Value::as_str)
    }
}

/// Id under which registry-wide lifecycle events are traced.
pub const REGISTRY_TRACE_ID: &str = "frm:registry";
