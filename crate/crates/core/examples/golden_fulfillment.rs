//! Submits the reference ADSL order and prints its outcome and trace.
//!
//! cargo run --example golden_fulfillment

use std::path::PathBuf;

use frm::model::{RequestSource, SourceKind};
use frm::receiver::{load_mappings, Envelope};
use frm::service::{load_rules, Engine, EngineSetup};
use serde_json::json;

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("fixtures")
        .join(name)
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut setup = EngineSetup::new(load_rules(&fixture("golden.frm"))?);
    setup.mappings = load_mappings(&fixture("mappings.json"))?;
    let engine = Engine::in_memory(setup)?;

    let order = Envelope::json(
        "order",
        RequestSource::new(SourceKind::External, "web")?,
        &json!({"customer": {"id": "C1", "name": "Ada"}, "product": "ADSL"}),
    );
    let (id, outcome) = engine.submit(&order)?;
    println!("{id} {}", outcome.final_state);
    for x in &outcome.executions {
        println!(
            "  {} {}.{} attempt {} {}",
            x.node_id,
            x.fpa,
            x.operation,
            x.attempt,
            x.outcome.status()
        );
    }
    println!("trace:");
    for ev in engine.store().get_trace(&id)? {
        println!(
            "  #{:<2} t={:<4} {:<10} {:<12} {}",
            ev.seq,
            ev.at.millis(),
            ev.actor,
            ev.kind,
            ev.detail
        );
    }
    println!(
        "record: {}",
        serde_json::to_string_pretty(&outcome.final_record)?
    );
    Ok(())
}
