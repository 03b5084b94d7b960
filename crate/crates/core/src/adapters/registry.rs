use std::collections::BTreeMap;
use std::sync::{Arc, RwLock};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{
    Activation, AdapterError, Endpoint, FpaDescriptor, FpaResult, ProposedAmendment, ReplyBody,
};
use crate::model::{normalize, project, NormalizedRecord};

/// Requested lifecycle change for a registered adapter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ActivationMode {
    Standby,
    Preactivated,
    Disabled,
}

/// Where an adapter currently is in its lifecycle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum AdapterState {
    /// Registered, activated on first dispatch.
    Standby,
    Active,
    Disabled,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActivationChange {
    pub fpa: String,
    pub from: Option<AdapterState>,
    pub to: AdapterState,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Deadlines {
    /// Replies slower than this many virtual ticks fail with `TIMEOUT`.
    pub virtual_ticks: u64,
    /// Wall-clock bound used by the concurrent runtime.
    pub real: Duration,
}

impl Default for Deadlines {
    fn default() -> Self {
        Deadlines {
            virtual_ticks: 30,
            real: Duration::from_secs(5),
        }
    }
}

#[derive(Debug)]
struct Entry {
    descriptor: FpaDescriptor,
    endpoint: Arc<dyn Endpoint>,
    state: AdapterState,
}

/// Adapter registry. Lookups share a read lock; lifecycle changes take the
/// write lock, so they are serialized.
#[derive(Debug, Default)]
pub struct Registry {
    entries: RwLock<BTreeMap<String, Entry>>,
    deadlines: Deadlines,
}

impl Registry {
    pub fn new(deadlines: Deadlines) -> Self {
        Registry {
            entries: RwLock::default(),
            deadlines,
        }
    }

    pub fn deadlines(&self) -> Deadlines {
        self.deadlines
    }

    /// Registers an adapter. Pre-activated adapters are probed here and
    /// refused if the probe fails.
    pub fn register(
        &self,
        descriptor: FpaDescriptor,
        endpoint: Arc<dyn Endpoint>,
    ) -> Result<ActivationChange, AdapterError> {
        descriptor.validate()?;
        let mut entries = self.entries.write().expect("registry lock poisoned");
        if entries.contains_key(&descriptor.name) {
            return Err(AdapterError::DuplicateName(descriptor.name));
        }
        let state = match descriptor.activation {
            Activation::Standby => AdapterState::Standby,
            Activation::Preactivated if endpoint.probe() => AdapterState::Active,
            Activation::Preactivated => {
                return Err(AdapterError::ActivationFailed(descriptor.name))
            }
        };
        let name = descriptor.name.clone();
        entries.insert(
            name.clone(),
            Entry {
                descriptor,
                endpoint,
                state,
            },
        );
        Ok(ActivationChange {
            fpa: name,
            from: None,
            to: state,
        })
    }

    pub fn set_activation(
        &self,
        name: &str,
        mode: ActivationMode,
    ) -> Result<ActivationChange, AdapterError> {
        let mut entries = self.entries.write().expect("registry lock poisoned");
        let entry = entries
            .get_mut(name)
            .ok_or_else(|| AdapterError::UnknownAdapter(name.to_string()))?;
        let to = match mode {
            ActivationMode::Standby => AdapterState::Standby,
            ActivationMode::Disabled => AdapterState::Disabled,
            ActivationMode::Preactivated if entry.endpoint.probe() => AdapterState::Active,
            ActivationMode::Preactivated => {
                return Err(AdapterError::ActivationFailed(name.to_string()))
            }
        };
        let from = std::mem::replace(&mut entry.state, to);
        Ok(ActivationChange {
            fpa: name.to_string(),
            from: Some(from),
            to,
        })
    }

    /// Activates a standby adapter ahead of a dispatch. Returns the change
    /// when this call did the activation, `None` if it was already active.
    pub fn ensure_active(&self, name: &str) -> Result<Option<ActivationChange>, AdapterError> {
        {
            let entries = self.entries.read().expect("registry lock poisoned");
            match entries.get(name).map(|e| e.state) {
                None => return Err(AdapterError::UnknownAdapter(name.to_string())),
                Some(AdapterState::Active) => return Ok(None),
                Some(AdapterState::Disabled) => {
                    return Err(AdapterError::AdapterUnavailable(name.to_string()))
                }
                Some(AdapterState::Standby) => {}
            }
        }
        let mut entries = self.entries.write().expect("registry lock poisoned");
        let entry = entries
            .get_mut(name)
            .ok_or_else(|| AdapterError::UnknownAdapter(name.to_string()))?;
        match entry.state {
            AdapterState::Active => Ok(None),
            AdapterState::Disabled => Err(AdapterError::AdapterUnavailable(name.to_string())),
            AdapterState::Standby if entry.endpoint.probe() => {
                entry.state = AdapterState::Active;
                Ok(Some(ActivationChange {
                    fpa: name.to_string(),
                    from: Some(AdapterState::Standby),
                    to: AdapterState::Active,
                }))
            }
            AdapterState::Standby => Err(AdapterError::ActivationFailed(name.to_string())),
        }
    }

    pub fn state(&self, name: &str) -> Option<AdapterState> {
        self.entries
            .read()
            .expect("registry lock poisoned")
            .get(name)
            .map(|e| e.state)
    }

    pub fn descriptor(&self, name: &str) -> Option<FpaDescriptor> {
        self.entries
            .read()
            .expect("registry lock poisoned")
            .get(name)
            .map(|e| e.descriptor.clone())
    }

    pub fn endpoint(&self, name: &str) -> Option<Arc<dyn Endpoint>> {
        self.entries
            .read()
            .expect("registry lock poisoned")
            .get(name)
            .map(|e| e.endpoint.clone())
    }

    pub fn names(&self) -> Vec<String> {
        self.entries
            .read()
            .expect("registry lock poisoned")
            .keys()
            .cloned()
            .collect()
    }
}

/// Result of one adapter call as the core sees it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Invocation {
    pub result: FpaResult,
    /// Virtual time the call occupied, capped at the deadline.
    pub elapsed_ticks: u64,
    /// An amendment the adapter proposed without holding amendment rights.
    pub rejected_amendment: Option<ProposedAmendment>,
}

impl Invocation {
    fn failed(code: &str, message: String, elapsed_ticks: u64) -> Self {
        Invocation {
            result: FpaResult::failed(code, message),
            elapsed_ticks,
            rejected_amendment: None,
        }
    }
}

/// Projects `record` for the target system, calls it and normalizes the
/// reply into a delta.
///
/// Projection, transport and parsing problems come back as a `FAILED`
/// result so the step's `on_error` policy can handle them. Only lookup
/// problems (unknown adapter or operation, adapter not active) are errors.
pub fn invoke_fpa(
    registry: &Registry,
    name: &str,
    operation: &str,
    record: &NormalizedRecord,
    request_id: Option<&str>,
) -> Result<Invocation, AdapterError> {
    let (descriptor, endpoint) = {
        let entries = registry.entries.read().expect("registry lock poisoned");
        let entry = entries
            .get(name)
            .ok_or_else(|| AdapterError::UnknownAdapter(name.to_string()))?;
        if entry.state != AdapterState::Active {
            return Err(AdapterError::AdapterUnavailable(name.to_string()));
        }
        (entry.descriptor.clone(), entry.endpoint.clone())
    };
    let spec =
        descriptor
            .operations
            .get(operation)
            .ok_or_else(|| AdapterError::UnknownOperation {
                fpa: name.to_string(),
                operation: operation.to_string(),
            })?;
    let payload = match project(record, &spec.input, request_id) {
        Ok(p) => p,
        Err(e) => return Ok(Invocation::failed(e.code(), e.to_string(), 0)),
    };
    let reply = endpoint.call(operation, &payload);
    let deadline = registry.deadlines.virtual_ticks;
    if reply.latency_ticks > deadline {
        return Ok(Invocation::failed(
            "TIMEOUT",
            format!("{name}.{operation} exceeded {deadline} ticks"),
            deadline,
        ));
    }
    let elapsed_ticks = reply.latency_ticks;
    let bytes = match reply.body {
        ReplyBody::Fail { code, message } => {
            return Ok(Invocation::failed(&code, message, elapsed_ticks))
        }
        ReplyBody::Bytes(b) => b,
    };
    let delta = match normalize(&bytes, &spec.output, request_id) {
        Ok(d) => d,
        Err(e) => return Ok(Invocation::failed(e.code(), e.to_string(), elapsed_ticks)),
    };
    let mut result = FpaResult::success(delta);
    let mut rejected_amendment = None;
    match reply.amendment {
        Some(am) if descriptor.may_amend => result.amendment = Some(am),
        other => rejected_amendment = other,
    }
    Ok(Invocation {
        result,
        elapsed_ticks,
        rejected_amendment,
    })
}
