//! Kills the log mid-write, reopens it and shows what survived. Requests
//! caught in flight are failed on restart.
//!
//! cargo run --example crash_recovery

use std::path::PathBuf;

use frm::model::{RequestSource, SourceKind};
use frm::receiver::{load_mappings, Envelope};
use frm::service::{load_rules, Engine, EngineSetup};
use frm::trace::{CrashMode, FaultyBackend, MemoryBackend, Store};
use serde_json::json;

fn setup() -> Result<EngineSetup, Box<dyn std::error::Error>> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    let mut setup = EngineSetup::new(load_rules(&dir.join("golden.frm"))?);
    setup.mappings = load_mappings(&dir.join("mappings.json"))?;
    Ok(setup)
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let web = RequestSource::new(SourceKind::External, "web")?;
    for mode in [
        CrashMode::BeforeWrite,
        CrashMode::Torn,
        CrashMode::AfterWrite,
    ] {
        let mem = MemoryBackend::new();
        let (store, _) =
            Store::with_backend(Box::new(FaultyBackend::new(mem.clone(), 40, mode)), &[])?;
        let engine = Engine::assemble(setup()?, store)?;
        for c in ["C1", "C2"] {
            let order = Envelope::json(
                "order",
                web.clone(),
                &json!({"customer": {"id": c, "name": "n"}, "product": "ADSL"}),
            );
            if let Err(e) = engine.submit(&order) {
                println!("{mode:?}: engine stopped: {e}");
                break;
            }
        }
        let (recovered, recovery) = Store::open_memory(mem)?;
        println!(
            "  recovered {} frames, dropped {} torn bytes",
            recovery.records, recovery.torn_bytes
        );
        let restarted = Engine::assemble(setup()?, recovered)?;
        for r in restarted.store().requests() {
            println!("  {} {}", r.id(), r.state);
        }
    }
    Ok(())
}
