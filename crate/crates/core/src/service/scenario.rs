use std::path::{Path, PathBuf};

use serde::Deserialize;
use serde_json::Value;

use super::engine::{builtin_adapters, load_rules, Engine, EngineError, EngineSetup};
use crate::adapters::AdapterConfig;
use crate::model::{RequestId, RequestState, Timestamp};
use crate::receiver::{load_mappings, Envelope, WireEnvelope};

/// A replayable run: rules, mappings, adapter scripts and the envelopes to
/// feed in, in order.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub setup: EngineSetup,
    pub envelopes: Vec<Envelope>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScenarioRun {
    pub digest: String,
    pub requests: Vec<(RequestId, RequestState)>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    rules: PathBuf,
    #[serde(default)]
    mappings: Option<PathBuf>,
    #[serde(default)]
    adapters: Option<Value>,
    envelopes: Vec<WireEnvelope>,
    #[serde(default)]
    max_amendment_depth: Option<u32>,
}

/// Reads a scenario file. `rules` and `mappings` are paths relative to it;
/// `adapters` is inline and defaults to the builtin catalog.
pub fn load_scenario(path: &Path) -> Result<Scenario, EngineError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| EngineError::Input(format!("{}: {e}", path.display())))?;
    let file: ScenarioFile = serde_json::from_str(&text)
        .map_err(|e| EngineError::Input(format!("{}: {e}", path.display())))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut setup = EngineSetup::new(load_rules(&base.join(&file.rules))?);
    if let Some(m) = &file.mappings {
        setup.mappings = load_mappings(&base.join(m))?;
    }
    setup.adapters = match file.adapters {
        Some(v) => AdapterConfig::parse(&v.to_string())?,
        None => builtin_adapters(),
    };
    if let Some(d) = file.max_amendment_depth {
        setup.max_amendment_depth = d;
    }
    let envelopes = file
        .envelopes
        .into_iter()
        .map(Envelope::try_from)
        .collect::<Result<_, _>>()?;
    Ok(Scenario { setup, envelopes })
}

/// Runs every envelope to its outcome on a fresh in-memory engine with the
/// deterministic scheduler. The virtual clock moves one tick between
/// envelopes. Equal seeds give equal digests.
pub fn run_scenario(scenario: &Scenario, seed: u64) -> Result<ScenarioRun, EngineError> {
    let mut setup = scenario.setup.clone();
    setup.seed = seed;
    setup.scheduler = super::SchedulerMode::Deterministic;
    let engine = Engine::in_memory(setup)?;
    let mut requests = Vec::new();
    for env in &scenario.envelopes {
        let clock = engine.clock();
        clock.advance_to(Timestamp(clock.now().millis() + 1));
        let (id, outcome) = engine.submit(env)?;
        requests.push((id, outcome.final_state));
    }
    Ok(ScenarioRun {
        digest: engine.store().digest(),
        requests,
    })
}
