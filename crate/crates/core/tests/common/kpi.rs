//! A randomized 50-request workload and a KPI recount that reads raw log
//! frames and nothing else.

use std::collections::BTreeMap;

use super::{adsl, fixture, golden_setup, order};
use frm::adapters::AdapterConfig;
use frm::model::{RequestSource, SourceKind, Timestamp};
use frm::receiver::Envelope;
use frm::service::{load_rules, Engine};
use frm::trace::{decode_frames, MemoryBackend, Store};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

fn script(rng: &mut ChaCha8Rng, operation: &str, reply: Value) -> Value {
    let entries: Vec<Value> = (0..80)
        .map(|_| {
            let latency = rng.gen_range(1..=4);
            if rng.gen_bool(0.2) {
                let code = ["TIMEOUT_UPSTREAM", "REFUSED", "BUSY"][rng.gen_range(0..3)];
                json!({"operation": operation, "fail": code, "latency_ticks": latency})
            } else {
                json!({"operation": operation, "respond": reply, "latency_ticks": latency})
            }
        })
        .collect();
    json!({"strict": false, "entries": entries})
}

/// 50 mixed requests against the catalog rules with randomly failing
/// adapters. Returns the engine and the raw log it writes to.
pub fn randomized_run(seed: u64) -> (Engine, MemoryBackend) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let adapters = json!([
        {"builtin": "crm"},
        {"builtin": "erp"},
        {"builtin": "ldap", "mock": script(&mut rng, "create_entry", json!({"uid": "{uid}", "created": true}))},
        {"builtin": "radius", "mock": script(&mut rng, "add_user", json!({"username": "{username}", "profile": "{profile}"}))},
        {"builtin": "billing", "mock": script(&mut rng, "open_account", json!({"account_id": "A1", "status": "open", "customer_id": "{customer.id}"}))},
        {"builtin": "ssw", "mock": script(&mut rng, "configure_line", json!({"subscriber": "{subscriber}", "line_id": "L1"}))},
        {"builtin": "msan", "mock": script(&mut rng, "configure_port", json!({"port_id": "P1", "status": "up", "subscriber": "{subscriber}"}))},
    ]);
    let mut setup = golden_setup(seed);
    setup.rules = load_rules(&fixture("catalog.frm")).unwrap();
    setup.adapters = AdapterConfig::parse(&adapters.to_string()).unwrap();
    let mem = MemoryBackend::new();
    let (store, _) = Store::open_memory(mem.clone()).unwrap();
    let engine = Engine::assemble(setup, store).unwrap();
    for i in 0..50 {
        let clock = engine.clock();
        clock.advance_to(Timestamp(clock.now().millis() + rng.gen_range(1..=20)));
        let env = match rng.gen_range(0..10) {
            0 => Envelope::json(
                "event",
                RequestSource::new(SourceKind::Internal, "noc").unwrap(),
                &json!({"event": "link_down"}),
            ),
            1 => Envelope {
                body: b"{not json".to_vec(),
                ..adsl("X")
            },
            2 => order(&format!("C{i}"), "FIBER"),
            3..=5 => order(&format!("C{i}"), "VOIP"),
            _ => adsl(&format!("C{i}")),
        };
        engine.submit(&env).unwrap();
    }
    (engine, mem)
}

pub fn dec4(num: i128, den: i128) -> String {
    // half away from zero, four places
    let scaled = num * 10_000;
    let q = (2 * scaled + den) / (2 * den);
    format!("{}.{:04}", q / 10_000, q % 10_000)
}

/// The report recomputed from raw frames, serialized by hand.
pub fn naive_report(log: &[u8], from: i64, to: i64) -> String {
    let frames = decode_frames(log).unwrap();
    let mut requests: BTreeMap<String, Value> = BTreeMap::new();
    let mut events: BTreeMap<String, Vec<Value>> = BTreeMap::new();
    for (_, rec) in frames.records {
        let v = serde_json::to_value(&rec).unwrap();
        match v["type"].as_str().unwrap() {
            "request" => {
                requests.insert(
                    v["data"]["id"].as_str().unwrap().to_string(),
                    v["data"].clone(),
                );
            }
            "event" => events
                .entry(v["data"]["request_id"].as_str().unwrap().to_string())
                .or_default()
                .push(v["data"].clone()),
            _ => {}
        }
    }
    let mut total = 0;
    let mut by_state: BTreeMap<String, u64> = BTreeMap::new();
    let mut by_kind: BTreeMap<String, u64> = BTreeMap::new();
    let (mut sum, mut n) = (0i128, 0i128);
    let mut fpa: BTreeMap<String, (i128, i128)> = BTreeMap::new();
    for (id, r) in &requests {
        let at = r["received_at"].as_i64().unwrap();
        if at < from || at > to {
            continue;
        }
        total += 1;
        let state = r["state"].as_str().unwrap().to_string();
        *by_state.entry(state.clone()).or_default() += 1;
        *by_kind
            .entry(r["kind"].as_str().unwrap().to_string())
            .or_default() += 1;
        let evs = events.get(id).cloned().unwrap_or_default();
        if state == "FULFILLED" {
            let done = evs
                .iter()
                .rfind(|e| {
                    e["kind"] == "STATE_CHANGE"
                        && e["actor"] == "CORE"
                        && e["detail"]["to"] == "FULFILLED"
                })
                .unwrap();
            sum += (done["at"].as_i64().unwrap() - at) as i128;
            n += 1;
        }
        for e in &evs {
            let actor = e["actor"].as_str().unwrap();
            let kind = e["kind"].as_str().unwrap();
            if let Some(name) = actor.strip_prefix("FPA:") {
                if kind == "COMPLETE" || kind == "COMPENSATION" {
                    let slot = fpa.entry(name.to_string()).or_default();
                    slot.1 += 1;
                    if e["detail"]["status"] != "SUCCESS" {
                        slot.0 += 1;
                    }
                }
            }
        }
    }
    let obj = |m: Vec<(String, String)>| {
        format!(
            "{{{}}}",
            m.into_iter()
                .map(|(k, v)| format!("\"{k}\":{v}"))
                .collect::<Vec<_>>()
                .join(",")
        )
    };
    format!(
        "{{\"by_kind\":{},\"by_state\":{},\"mean_fulfillment_millis\":{},\"per_fpa_failure_rate\":{},\"total\":{total},\"window\":{{\"from\":{from},\"to\":{to}}}}}",
        obj(by_kind.into_iter().map(|(k, v)| (k, v.to_string())).collect()),
        obj(by_state.into_iter().map(|(k, v)| (k, v.to_string())).collect()),
        if n == 0 { "0.0000".to_string() } else { dec4(sum, n) },
        obj(fpa.into_iter().map(|(k, (f, t))| (k, dec4(f, t))).collect()),
    )
}
