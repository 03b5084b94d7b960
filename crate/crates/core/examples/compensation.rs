//! Billing refuses the account, so completed steps are compensated.
//!
//! cargo run --example compensation

use std::path::PathBuf;

use frm::adapters::AdapterConfig;
use frm::model::{RequestSource, SourceKind};
use frm::receiver::{load_mappings, Envelope};
use frm::rules::parse_rules;
use frm::service::{Engine, EngineSetup};
use frm::trace::EventKind;
use serde_json::json;

const SAGA: &str = r#"workflow "saga" priority 1 on kind = ORDER {
  step dir  -> fpa:ldap.create_entry mode sync on_error compensate fpa:ldap.delete_entry;
  step auth -> fpa:radius.add_user mode sync on_error compensate fpa:radius.remove_user;
  step bill -> fpa:billing.open_account mode sync on_error compensate fpa:crm.rollback;
}
"#;

const ADAPTERS: &str = r#"[
  {"builtin": "crm"}, {"builtin": "ldap"}, {"builtin": "radius"},
  {"builtin": "billing", "mock": [{"operation": "open_account", "fail": "CREDIT_REFUSED", "message": "credit check refused", "sticky": true}]}
]"#;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut setup = EngineSetup::new(parse_rules(SAGA)?);
    setup.mappings =
        load_mappings(&PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures/mappings.json"))?;
    setup.adapters = AdapterConfig::parse(ADAPTERS)?;
    let engine = Engine::in_memory(setup)?;

    let order = Envelope::json(
        "order",
        RequestSource::new(SourceKind::External, "web")?,
        &json!({"customer": {"id": "C7", "name": "Lin"}, "product": "ADSL"}),
    );
    let (id, outcome) = engine.submit(&order)?;
    println!("{id} {}", outcome.final_state);
    for ev in engine.store().get_trace(&id)? {
        if matches!(
            ev.kind,
            EventKind::Error | EventKind::Compensation | EventKind::StateChange
        ) {
            println!("  {:<12} {:<10} {}", ev.kind, ev.actor, ev.detail);
        }
    }
    Ok(())
}
