use std::fmt;

use serde_json::Value;

use super::ProposedAmendment;

/// What a target system sent back.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ReplyBody {
    /// Raw response bytes, normalized by the operation's output mapping.
    Bytes(Vec<u8>),
    /// The system refused the call.
    Fail { code: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Reply {
    pub body: ReplyBody,
    /// Virtual time the call takes; 1 tick is 1 ms of real time.
    pub latency_ticks: u64,
    pub amendment: Option<ProposedAmendment>,
}

impl Reply {
    pub fn json(body: &Value, latency_ticks: u64) -> Self {
        Reply {
            body: ReplyBody::Bytes(body.to_string().into_bytes()),
            latency_ticks,
            amendment: None,
        }
    }

    pub fn fail(code: &str, message: &str, latency_ticks: u64) -> Self {
        Reply {
            body: ReplyBody::Fail {
                code: code.to_string(),
                message: message.to_string(),
            },
            latency_ticks,
            amendment: None,
        }
    }
}

/// The transport seam. In-process mocks implement it directly; a remote
/// transport would serialize `payload` and parse the reply.
pub trait Endpoint: Send + Sync + fmt::Debug {
    fn call(&self, operation: &str, payload: &Value) -> Reply;

    /// Health check run when an adapter is activated.
    fn probe(&self) -> bool {
        true
    }
}
