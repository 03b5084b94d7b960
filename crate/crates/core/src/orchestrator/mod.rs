//! The FRM core: drives requests through routing, planning and execution
//! against the adapter registry, and records every step in the store.

mod amend;
mod exec;
mod schedule;

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

pub use amend::{apply_amendment, AmendmentError, PlanAmendment};
pub use exec::{compensate, execute, fulfill, plan_request};
pub use schedule::{
    enumerate_schedules, Clock, ExhaustiveScheduler, Runtime, Scheduler, SeededScheduler,
    SystemClock, VirtualClock, VIRTUAL_EPOCH_MILLIS,
};

use crate::adapters::Registry;
use crate::model::{ModelError, NormalizedRecord, Request, RequestId, RequestState, Timestamp};
use crate::rules::RulesError;
use crate::trace::{Actor, EventKind, Store, StoreError};

pub const DEFAULT_MAX_AMENDMENT_DEPTH: u32 = 3;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum StepOutcome {
    Success,
    Failed {
        code: String,
        message: String,
    },
    /// Failed, then passed over by an `on_error skip` policy.
    Skipped {
        code: String,
        message: String,
    },
}

impl StepOutcome {
    pub fn is_success(&self) -> bool {
        matches!(self, StepOutcome::Success)
    }

    pub fn status(&self) -> &'static str {
        match self {
            StepOutcome::Success => "SUCCESS",
            StepOutcome::Failed { .. } => "FAILED",
            StepOutcome::Skipped { .. } => "SKIPPED",
        }
    }

    pub fn code(&self) -> Option<&str> {
        match self {
            StepOutcome::Success => None,
            StepOutcome::Failed { code, .. } | StepOutcome::Skipped { code, .. } => Some(code),
        }
    }
}

/// One attempt at one plan node.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepExecution {
    pub node_id: String,
    pub fpa: String,
    pub operation: String,
    pub attempt: u32,
    pub started_at: Timestamp,
    pub ended_at: Timestamp,
    pub outcome: StepOutcome,
    pub produced: NormalizedRecord,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FulfillmentOutcome {
    pub final_state: RequestState,
    /// In completion order.
    pub executions: Vec<StepExecution>,
    pub final_record: NormalizedRecord,
}

impl FulfillmentOutcome {
    pub fn to_canonical_json(&self) -> String {
        serde_json::to_string(self).expect("outcomes always serialize")
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CoreError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Rules(#[from] RulesError),
    #[error("request {0} is not in state PLANNED")]
    NotPlanned(RequestId),
}

impl CoreError {
    pub fn code(&self) -> &'static str {
        match self {
            CoreError::Store(e) => e.code(),
            CoreError::Model(e) => e.code(),
            CoreError::Rules(e) => e.code(),
            CoreError::NotPlanned(_) => "NOT_PLANNED",
        }
    }
}

/// Everything the core needs to run a request.
#[derive(Clone)]
pub struct Core {
    pub store: Store,
    pub registry: Arc<Registry>,
    pub clock: Arc<dyn Clock>,
    pub max_amendment_depth: u32,
}

impl std::fmt::Debug for Core {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Core")
            .field("store", &self.store)
            .field("max_amendment_depth", &self.max_amendment_depth)
            .finish()
    }
}

impl Core {
    pub fn new(store: Store, registry: Arc<Registry>, clock: Arc<dyn Clock>) -> Self {
        Core {
            store,
            registry,
            clock,
            max_amendment_depth: DEFAULT_MAX_AMENDMENT_DEPTH,
        }
    }
}

fn event_kind_for(to: RequestState) -> EventKind {
    match to {
        RequestState::Normalized => EventKind::Normalized,
        RequestState::Planned => EventKind::Planned,
        _ => EventKind::StateChange,
    }
}

/// Moves `req` to `to`, tracing first and persisting second. Entering
/// NORMALIZED or PLANNED is traced under that event kind; every other state
/// under `STATE_CHANGE`. `extra` fields are merged into the event detail.
pub fn transition_as(
    store: &Store,
    actor: Actor,
    req: &Request,
    to: RequestState,
    at: Timestamp,
    extra: Value,
) -> Result<Request, CoreError> {
    let next = req.transitioned(to)?;
    let mut detail = json!({"from": req.state.as_str(), "to": to.as_str()});
    if let (Value::Object(d), Value::Object(x)) = (&mut detail, extra) {
        d.extend(x);
    }
    store.emit(req.id(), actor, event_kind_for(to), at, detail)?;
    store.put_request(&next)?;
    Ok(next)
}

pub fn transition(
    store: &Store,
    req: &Request,
    to: RequestState,
    at: Timestamp,
) -> Result<Request, CoreError> {
    transition_as(store, Actor::Core, req, to, at, json!({}))
}

/// Restart rule: nothing resumes. Every request that was still moving when
/// the log ended is failed with `INTERRUPTED`.
pub fn recover_in_flight(core: &Core) -> Result<Vec<RequestId>, CoreError> {
    let mut failed = Vec::new();
    for req in core.store.requests() {
        if req.state.is_outcome() {
            continue;
        }
        let at = latest_at(&core.store, &req).max(core.clock.now());
        core.store.emit(
            req.id(),
            Actor::Core,
            EventKind::Error,
            at,
            json!({"step": null, "code": "INTERRUPTED", "message": format!("engine restarted while request was {}", req.state)}),
        )?;
        let done = transition(&core.store, &req, RequestState::Failed, at)?;
        let outcome = FulfillmentOutcome {
            final_state: done.state,
            executions: Vec::new(),
            final_record: done.record().clone(),
        };
        core.store.put_outcome(done.id(), &outcome)?;
        failed.push(done.id().clone());
    }
    Ok(failed)
}

fn latest_at(store: &Store, req: &Request) -> Timestamp {
    store
        .get_trace(req.id())
        .ok()
        .and_then(|t| t.last().map(|e| e.at))
        .unwrap_or(req.received_at)
}
