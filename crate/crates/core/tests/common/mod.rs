#![allow(dead_code)]

pub mod kpi;
pub mod props;

use std::path::PathBuf;

use frm::adapters::AdapterConfig;
use frm::model::{RequestSource, SourceKind};
use frm::receiver::{load_mappings, Envelope};
use frm::rules::parse_rules;
use frm::service::{load_rules, Engine, EngineSetup};
use frm::trace::{EventKind, TraceEvent};
use serde_json::json;

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("fixtures")
        .join(name)
}

pub fn golden_setup(seed: u64) -> EngineSetup {
    let mut setup = EngineSetup::new(load_rules(&fixture("golden.frm")).unwrap());
    setup.mappings = load_mappings(&fixture("mappings.json")).unwrap();
    setup.seed = seed;
    setup
}

/// Golden rules and mappings; `adapters` replaces the builtin catalog.
pub fn engine(seed: u64, adapters: Option<&str>) -> Engine {
    let mut setup = golden_setup(seed);
    if let Some(a) = adapters {
        setup.adapters = AdapterConfig::parse(a).unwrap();
    }
    Engine::in_memory(setup).unwrap()
}

pub fn engine_with_rules(seed: u64, rules: &str, adapters: Option<&str>) -> Engine {
    let mut setup = golden_setup(seed);
    setup.rules = parse_rules(rules).unwrap();
    if let Some(a) = adapters {
        setup.adapters = AdapterConfig::parse(a).unwrap();
    }
    Engine::in_memory(setup).unwrap()
}

pub fn order(customer: &str, product: &str) -> Envelope {
    Envelope::json(
        "order",
        RequestSource::new(SourceKind::External, "web").unwrap(),
        &json!({"customer": {"id": customer, "name": format!("name-{customer}")}, "product": product}),
    )
}

pub fn adsl(customer: &str) -> Envelope {
    order(customer, "ADSL")
}

pub fn of_kind(trace: &[TraceEvent], kind: EventKind) -> Vec<&TraceEvent> {
    trace.iter().filter(|e| e.kind == kind).collect()
}

/// Core-level state transitions, in order.
pub fn states(trace: &[TraceEvent]) -> Vec<String> {
    trace
        .iter()
        .filter_map(|e| e.state_to().map(str::to_string))
        .collect()
}
