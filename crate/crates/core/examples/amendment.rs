//! The CRM adapter, granted amendment rights, splices an extra switch
//! configuration step into the running plan.
//!
//! cargo run --example amendment

use std::path::PathBuf;

use frm::adapters::AdapterConfig;
use frm::model::{RequestSource, SourceKind};
use frm::receiver::{load_mappings, Envelope};
use frm::service::{load_rules, Engine, EngineSetup};
use frm::trace::EventKind;
use serde_json::json;

const ADAPTERS: &str = r#"[
  {"builtin": "ldap"}, {"builtin": "radius"}, {"builtin": "billing"}, {"builtin": "ssw"},
  {"builtin": "crm", "may_amend": true, "mock": {"strict": false, "entries": [
    {"operation": "validate", "respond": {"customer_id": "{customer.id}", "valid": true},
     "amend": {"steps": ["step line -> fpa:ssw.configure_line mode sync on_error fail;"]}}]}}
]"#;

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("fixtures")
        .join(name)
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut setup = EngineSetup::new(load_rules(&fixture("golden.frm"))?);
    setup.mappings = load_mappings(&fixture("mappings.json"))?;
    setup.adapters = AdapterConfig::parse(ADAPTERS)?;
    let engine = Engine::in_memory(setup)?;

    let order = Envelope::json(
        "order",
        RequestSource::new(SourceKind::External, "web")?,
        &json!({"customer": {"id": "C2", "name": "Grace"}, "product": "ADSL"}),
    );
    let (id, outcome) = engine.submit(&order)?;
    println!("{id} {}", outcome.final_state);
    let order: Vec<&str> = outcome
        .executions
        .iter()
        .map(|x| x.node_id.as_str())
        .collect();
    println!("executed: {}", order.join(" -> "));
    for ev in engine
        .store()
        .get_trace(&id)?
        .iter()
        .filter(|e| e.kind == EventKind::Amendment)
    {
        println!("amendment by {}: {}", ev.actor, ev.detail);
    }
    Ok(())
}
