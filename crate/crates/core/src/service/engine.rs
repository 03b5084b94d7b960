use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex};

use serde_json::json;
use thiserror::Error;

use super::config::{ConfigError, EngineConfig, SchedulerMode};
use crate::adapters::{
    builtin_catalog, load_adapters, ActivationChange, ActivationMode, AdapterConfig, AdapterError,
    AdapterSpec, MockEndpoint, Registry,
};
use crate::model::{MappingSpec, Request, RequestId, RequestKind, Timestamp};
use crate::orchestrator::{
    fulfill, recover_in_flight, Clock, Core, CoreError, FulfillmentOutcome, Runtime,
    SeededScheduler, SystemClock, VirtualClock,
};
use crate::receiver::{load_mappings, Envelope, IdSource, Receiver, ReceiverError};
use crate::rules::{parse_rules, RuleSet, RulesError};
use crate::trace::{
    compute_kpis, Actor, EventKind, KpiReport, Recovery, Store, StoreError, REGISTRY_TRACE_ID,
};

/// Requests between automatic snapshots, when a snapshot path is set.
const SNAPSHOT_EVERY: u64 = 64;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EngineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{path}: {error}")]
    Rules { path: String, error: RulesError },
    #[error(transparent)]
    Adapters(#[from] AdapterError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Receiver(#[from] ReceiverError),
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error("{0}")]
    Input(String),
}

impl EngineError {
    pub fn code(&self) -> &'static str {
        match self {
            EngineError::Config(e) => e.code(),
            EngineError::Rules { error, .. } => error.code(),
            EngineError::Adapters(e) => e.code(),
            EngineError::Store(e) => e.code(),
            EngineError::Receiver(e) => e.code(),
            EngineError::Core(e) => e.code(),
            EngineError::Input(_) => "INPUT_INVALID",
        }
    }
}

/// Everything needed to assemble an engine, independent of where it came from.
#[derive(Debug, Clone)]
pub struct EngineSetup {
    pub rules: RuleSet,
    pub mappings: BTreeMap<RequestKind, MappingSpec>,
    pub adapters: AdapterConfig,
    pub scheduler: SchedulerMode,
    pub seed: u64,
    pub max_amendment_depth: u32,
    pub body_cap: usize,
}

impl EngineSetup {
    /// Deterministic, builtin adapters, no mappings.
    pub fn new(rules: RuleSet) -> Self {
        EngineSetup {
            rules,
            mappings: BTreeMap::new(),
            adapters: builtin_adapters(),
            scheduler: SchedulerMode::Deterministic,
            seed: 0,
            max_amendment_depth: crate::orchestrator::DEFAULT_MAX_AMENDMENT_DEPTH,
            body_cap: crate::receiver::DEFAULT_BODY_CAP,
        }
    }
}

pub fn builtin_adapters() -> AdapterConfig {
    AdapterConfig {
        adapters: builtin_catalog()
            .into_iter()
            .map(|(descriptor, script)| AdapterSpec { descriptor, script })
            .collect(),
    }
}

pub fn load_rules(path: &Path) -> Result<RuleSet, EngineError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| EngineError::Input(format!("{}: {e}", path.display())))?;
    parse_rules(&text).map_err(|error| EngineError::Rules {
        path: path.display().to_string(),
        error,
    })
}

/// One process hosting receiver, core, adapters and store.
pub struct Engine {
    core: Core,
    receiver: Receiver,
    rules: RuleSet,
    scheduler: SchedulerMode,
    seed: u64,
    endpoints: BTreeMap<String, Arc<MockEndpoint>>,
    /// Deterministic runs share one virtual clock, so they take turns.
    turn: Mutex<()>,
    /// Requests with a run under way; a second run of one waits for the first.
    running: Mutex<BTreeSet<RequestId>>,
    run_done: Condvar,
    snapshot_path: Option<std::path::PathBuf>,
    finished: AtomicU64,
}

impl std::fmt::Debug for Engine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Engine")
            .field("scheduler", &self.scheduler)
            .field("seed", &self.seed)
            .field("store", &self.core.store)
            .finish()
    }
}

impl Engine {
    /// Builds an engine over `store`: registers the adapters, tracing each
    /// registration under the registry id, then fails whatever the store
    /// shows as still in flight.
    pub fn assemble(setup: EngineSetup, store: Store) -> Result<Engine, EngineError> {
        let clock: Arc<dyn Clock> = match setup.scheduler {
            SchedulerMode::Deterministic => {
                let c = VirtualClock::new();
                if let Some(latest) = store
                    .all_events()
                    .values()
                    .filter_map(|v| v.last())
                    .map(|e| e.at)
                    .max()
                {
                    c.advance_to(latest);
                }
                Arc::new(c)
            }
            SchedulerMode::Concurrent => Arc::new(SystemClock::default()),
        };
        let registry = Arc::new(Registry::default());
        let mut endpoints = BTreeMap::new();
        for (change, endpoint) in setup.adapters.register_all(&registry)? {
            trace_registry(&store, clock.now(), &change)?;
            endpoints.insert(change.fpa, endpoint);
        }
        let ids = match setup.scheduler {
            SchedulerMode::Deterministic => {
                IdSource::seeded(setup.seed ^ store.log_offset().rotate_left(32))
            }
            SchedulerMode::Concurrent => IdSource::Random,
        };
        let mut core = Core::new(store.clone(), registry, clock.clone());
        core.max_amendment_depth = setup.max_amendment_depth;
        recover_in_flight(&core)?;
        let receiver =
            Receiver::new(store, clock, setup.mappings, ids).with_body_cap(setup.body_cap);
        Ok(Engine {
            core,
            receiver,
            rules: setup.rules,
            scheduler: setup.scheduler,
            seed: setup.seed,
            endpoints,
            turn: Mutex::new(()),
            running: Mutex::new(BTreeSet::new()),
            run_done: Condvar::new(),
            snapshot_path: None,
            finished: AtomicU64::new(0),
        })
    }

    /// In-memory engine, handy for tests and scenarios.
    pub fn in_memory(setup: EngineSetup) -> Result<Engine, EngineError> {
        Engine::assemble(setup, Store::memory())
    }

    /// Loads every file the config names and opens the log.
    pub fn from_config(cfg: &EngineConfig) -> Result<(Engine, Option<Recovery>), EngineError> {
        let rules = load_rules(&cfg.rules_path)?;
        let mappings = match &cfg.mappings_path {
            Some(p) => load_mappings(p)?,
            None => BTreeMap::new(),
        };
        let adapters = match &cfg.adapters_path {
            Some(p) => load_adapters(p)?,
            None => builtin_adapters(),
        };
        let (store, recovery) = match &cfg.log_path {
            Some(p) => {
                let (s, r) = Store::open(p, cfg.snapshot_path.as_deref(), cfg.fsync)?;
                (s, Some(r))
            }
            None => (Store::memory(), None),
        };
        let setup = EngineSetup {
            rules,
            mappings,
            adapters,
            scheduler: cfg.scheduler,
            seed: cfg.scheduler_seed.unwrap_or(0),
            max_amendment_depth: cfg.max_amendment_depth,
            body_cap: cfg.body_cap,
        };
        let mut engine = Engine::assemble(setup, store)?;
        engine.snapshot_path = cfg.snapshot_path.clone();
        Ok((engine, recovery))
    }

    pub fn core(&self) -> &Core {
        &self.core
    }

    pub fn store(&self) -> &Store {
        &self.core.store
    }

    pub fn rules(&self) -> &RuleSet {
        &self.rules
    }

    pub fn clock(&self) -> &Arc<dyn Clock> {
        &self.core.clock
    }

    pub fn scheduler(&self) -> SchedulerMode {
        self.scheduler
    }

    pub fn endpoint(&self, name: &str) -> Option<&Arc<MockEndpoint>> {
        self.endpoints.get(name)
    }

    pub fn ingest(&self, env: &Envelope) -> Result<Request, ReceiverError> {
        self.receiver.ingest(env)
    }

    /// Runs a request to its outcome with the configured scheduler. A request
    /// already being run is not run twice: the caller waits and gets the
    /// recorded outcome.
    pub fn run(&self, req: &Request) -> Result<FulfillmentOutcome, CoreError> {
        let id = req.id().clone();
        {
            let mut running = self.running.lock().expect("running set poisoned");
            while running.contains(&id) {
                running = self.run_done.wait(running).expect("running set poisoned");
            }
            running.insert(id.clone());
        }
        let result = self.run_claimed(req);
        self.running
            .lock()
            .expect("running set poisoned")
            .remove(&id);
        self.run_done.notify_all();
        result
    }

    fn run_claimed(&self, req: &Request) -> Result<FulfillmentOutcome, CoreError> {
        // the caller's copy may predate an earlier run
        let latest = self.core.store.get_request(req.id());
        let req = latest.as_ref().unwrap_or(req);
        let outcome = match self.scheduler {
            SchedulerMode::Deterministic => {
                let _turn = self.turn.lock().expect("turn lock poisoned");
                let mut s = SeededScheduler::for_request(self.seed, req.id().as_str());
                fulfill(&self.core, &self.rules, req, Runtime::Deterministic(&mut s))?
            }
            SchedulerMode::Concurrent => {
                fulfill(&self.core, &self.rules, req, Runtime::Concurrent)?
            }
        };
        let n = self.finished.fetch_add(1, Ordering::SeqCst) + 1;
        if let Some(p) = &self.snapshot_path {
            if n.is_multiple_of(SNAPSHOT_EVERY) {
                self.core.store.write_snapshot(p)?;
            }
        }
        Ok(outcome)
    }

    /// Ingest and run to completion. A request that failed normalization
    /// still has an outcome (FAILED); only envelopes the receiver refused
    /// outright come back as errors.
    pub fn submit(&self, env: &Envelope) -> Result<(RequestId, FulfillmentOutcome), EngineError> {
        let req = match self.ingest(env) {
            Ok(r) => r,
            Err(ReceiverError::Normalization { request_id, .. }) => self
                .core
                .store
                .get_request(&request_id)
                .ok_or_else(|| EngineError::Input(format!("request {request_id} vanished")))?,
            Err(e) => return Err(e.into()),
        };
        let outcome = self.run(&req)?;
        Ok((req.id().clone(), outcome))
    }

    pub fn set_activation(
        &self,
        name: &str,
        mode: ActivationMode,
    ) -> Result<ActivationChange, EngineError> {
        let change = self.core.registry.set_activation(name, mode)?;
        trace_registry(&self.core.store, self.core.clock.now(), &change)?;
        Ok(change)
    }

    pub fn kpis(&self, from: Timestamp, to: Timestamp) -> KpiReport {
        compute_kpis(&self.core.store, from, to)
    }

    pub fn write_snapshot(&self) -> Result<(), EngineError> {
        if let Some(p) = &self.snapshot_path {
            self.core.store.write_snapshot(p)?;
        }
        Ok(())
    }
}

fn trace_registry(store: &Store, at: Timestamp, c: &ActivationChange) -> Result<(), StoreError> {
    store.emit(
        &RequestId::new(REGISTRY_TRACE_ID),
        Actor::Fpa(c.fpa.clone()),
        EventKind::StateChange,
        at,
        json!({"adapter": c.fpa, "from": c.from, "to": c.to}),
    )?;
    Ok(())
}
