//! Runs a small mixed batch and prints the KPI report as JSON and CSV.
//!
//! cargo run --example kpi_report

use std::path::PathBuf;

use frm::adapters::AdapterConfig;
use frm::model::{RequestSource, SourceKind, Timestamp};
use frm::receiver::{load_mappings, Envelope};
use frm::service::{load_rules, Engine, EngineSetup};
use frm::trace::{export_report, ReportFormat};
use serde_json::json;

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("fixtures")
        .join(name)
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut setup = EngineSetup::new(load_rules(&fixture("catalog.frm"))?);
    setup.mappings = load_mappings(&fixture("mappings.json"))?;
    // every third billing call is refused
    setup.adapters = AdapterConfig::parse(
        r#"[{"builtin": "crm"}, {"builtin": "ldap"}, {"builtin": "radius"}, {"builtin": "ssw"}, {"builtin": "msan"},
            {"builtin": "billing", "mock": {"strict": false, "entries": [
              {"operation": "open_account", "respond": {"account_id": "A1", "status": "open", "customer_id": "{customer.id}"}},
              {"operation": "open_account", "respond": {"account_id": "A1", "status": "open", "customer_id": "{customer.id}"}},
              {"operation": "open_account", "fail": "CREDIT_REFUSED"}]}}]"#,
    )?;
    let engine = Engine::in_memory(setup)?;
    let web = RequestSource::new(SourceKind::External, "web")?;
    for (i, product) in ["ADSL", "VOIP", "ADSL", "FIBER", "VOIP", "ADSL"]
        .iter()
        .enumerate()
    {
        engine
            .clock()
            .advance_to(Timestamp(engine.clock().now().millis() + 25));
        let payload = json!({"customer": {"id": format!("C{i}"), "name": "n"}, "product": product});
        engine.submit(&Envelope::json("order", web.clone(), &payload))?;
    }
    engine.submit(&Envelope {
        body: b"not json".to_vec(),
        ..Envelope::json("order", web, &json!({}))
    })?;

    let report = engine.kpis(Timestamp(0), engine.clock().now());
    println!(
        "{}",
        String::from_utf8(export_report(&report, ReportFormat::Json))?
    );
    print!(
        "{}",
        String::from_utf8(export_report(&report, ReportFormat::Csv))?
    );
    Ok(())
}
