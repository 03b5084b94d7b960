//! Fulfillment process adapters.
//!
//! An adapter sits between the core and one third-party system. The core
//! hands it a [`NormalizedRecord`](crate::model::NormalizedRecord); the
//! adapter projects that into the system's payload shape, calls the
//! [`Endpoint`], and normalizes the reply back into a record delta. Nothing
//! system-specific crosses back to the core.

mod builtin;
mod config;
mod descriptor;
mod endpoint;
mod mock;
mod registry;

use thiserror::Error;

pub use builtin::{builtin_adapter, builtin_catalog, BuiltinSystem};
pub use config::{load_adapters, AdapterConfig, AdapterSpec};
pub use descriptor::{
    Activation, FpaDescriptor, FpaResult, FpaStatus, OperationSpec, ProposedAmendment,
};
pub use endpoint::{Endpoint, Reply, ReplyBody};
pub use mock::{flatten_payload, MockCall, MockEndpoint, MockScript, ScriptEntry, ScriptResponse};
pub use registry::{
    invoke_fpa, ActivationChange, ActivationMode, AdapterState, Deadlines, Invocation, Registry,
};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AdapterError {
    #[error("adapter {0:?} is already registered")]
    DuplicateName(String),
    #[error("adapter {0:?} failed its activation probe")]
    ActivationFailed(String),
    #[error("no adapter named {0:?}")]
    UnknownAdapter(String),
    #[error("adapter {fpa:?} has no operation {operation:?}")]
    UnknownOperation { fpa: String, operation: String },
    #[error("adapter {0:?} is disabled")]
    AdapterUnavailable(String),
    #[error("invalid adapter descriptor: {0}")]
    InvalidDescriptor(String),
    #[error("invalid mock script: {0}")]
    InvalidScript(String),
    #[error("adapter config: {0}")]
    Config(String),
}

impl AdapterError {
    pub fn code(&self) -> &'static str {
        match self {
            AdapterError::DuplicateName(_) => "DUPLICATE_NAME",
            AdapterError::ActivationFailed(_) => "ACTIVATION_FAILED",
            AdapterError::UnknownAdapter(_) => "UNKNOWN_ADAPTER",
            AdapterError::UnknownOperation { .. } => "UNKNOWN_OPERATION",
            AdapterError::AdapterUnavailable(_) => "ADAPTER_UNAVAILABLE",
            AdapterError::InvalidDescriptor(_) => "INVALID_DESCRIPTOR",
            AdapterError::InvalidScript(_) => "INVALID_SCRIPT",
            AdapterError::Config(_) => "CONFIG_ERROR",
        }
    }
}
