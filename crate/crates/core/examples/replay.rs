//! Replays a recorded scenario under a seeded scheduler. Equal seeds give
//! equal digests.
//!
//! cargo run --example replay

use std::path::PathBuf;

use frm::service::{load_scenario, run_scenario};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let scenario =
        load_scenario(&PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures/scenario.json"))?;
    for seed in [1, 1, 2] {
        let run = run_scenario(&scenario, seed)?;
        let states: Vec<String> = run
            .requests
            .iter()
            .map(|(id, s)| format!("{id}={s}"))
            .collect();
        println!("seed {seed}: {} {}", run.digest, states.join(" "));
    }
    Ok(())
}
