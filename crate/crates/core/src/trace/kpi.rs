//! KPI aggregation and export, computed from the store alone.

use std::collections::BTreeMap;
use std::fmt::Write;

use serde_json::Value;

use super::{Actor, EventKind, Store, TraceEvent};
use crate::model::{Decimal4, Request, RequestKind, RequestState, Timestamp};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KpiReport {
    /// Inclusive bounds on `received_at`.
    pub from: Timestamp,
    pub to: Timestamp,
    pub total: u64,
    /// Non-zero counts only.
    pub by_state: BTreeMap<RequestState, u64>,
    /// Non-zero counts only.
    pub by_kind: BTreeMap<RequestKind, u64>,
    pub mean_fulfillment_millis: Decimal4,
    /// Adapters with at least one invocation in the window.
    pub per_fpa_failure_rate: BTreeMap<String, Decimal4>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
}

impl std::str::FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            other => Err(format!("unknown report format {other:?}")),
        }
    }
}

/// Aggregates over requests with `from <= received_at <= to`.
///
/// Fulfillment time runs from `received_at` to the core's terminal
/// `STATE_CHANGE` to FULFILLED. An adapter invocation is a `COMPLETE` or
/// `COMPENSATION` event whose actor is that adapter; it failed when its
/// status is not `SUCCESS`.
pub fn compute_kpis(store: &Store, from: Timestamp, to: Timestamp) -> KpiReport {
    let requests: Vec<Request> = store
        .requests()
        .into_iter()
        .filter(|r| r.received_at >= from && r.received_at <= to)
        .collect();
    let events = store.all_events();
    let mut report = KpiReport {
        from,
        to,
        total: requests.len() as u64,
        by_state: BTreeMap::new(),
        by_kind: BTreeMap::new(),
        mean_fulfillment_millis: Decimal4::ZERO,
        per_fpa_failure_rate: BTreeMap::new(),
    };
    let mut fulfilled_sum: i128 = 0;
    let mut fulfilled_n: i128 = 0;
    let mut invocations: BTreeMap<String, (i128, i128)> = BTreeMap::new();
    for req in &requests {
        *report.by_state.entry(req.state).or_default() += 1;
        *report.by_kind.entry(req.kind).or_default() += 1;
        let trace: &[TraceEvent] = events.get(req.id()).map(Vec::as_slice).unwrap_or_default();
        if req.state == RequestState::Fulfilled {
            if let Some(done) = trace
                .iter()
                .rev()
                .find(|e| e.state_to() == Some("FULFILLED"))
            {
                fulfilled_sum += (done.at.millis() - req.received_at.millis()) as i128;
                fulfilled_n += 1;
            }
        }
        for e in trace {
            let Actor::Fpa(name) = &e.actor else { continue };
            if !matches!(e.kind, EventKind::Complete | EventKind::Compensation) {
                continue;
            }
            let slot = invocations.entry(name.clone()).or_default();
            slot.1 += 1;
            if e.detail_str("status") != Some("SUCCESS") {
                slot.0 += 1;
            }
        }
    }
    if fulfilled_n > 0 {
        report.mean_fulfillment_millis =
            Decimal4::ratio(fulfilled_sum, fulfilled_n).unwrap_or(Decimal4::ZERO);
    }
    for (name, (failed, total)) in invocations {
        report.per_fpa_failure_rate.insert(
            name,
            Decimal4::ratio(failed, total).unwrap_or(Decimal4::ZERO),
        );
    }
    report
}

/// Canonical bytes: sorted keys, decimals with four places.
pub fn export_report(r: &KpiReport, format: ReportFormat) -> Vec<u8> {
    match format {
        ReportFormat::Json => export_json(r),
        ReportFormat::Csv => export_csv(r),
    }
    .into_bytes()
}

fn json_str(s: &str) -> String {
    Value::String(s.to_string()).to_string()
}

fn json_map<K, V>(
    m: &BTreeMap<K, V>,
    key: impl Fn(&K) -> &str,
    val: impl Fn(&V) -> String,
) -> String {
    let mut entries: Vec<(&str, String)> = m.iter().map(|(k, v)| (key(k), val(v))).collect();
    entries.sort_by(|a, b| a.0.cmp(b.0));
    let body: Vec<String> = entries
        .into_iter()
        .map(|(k, v)| format!("{}:{v}", json_str(k)))
        .collect();
    format!("{{{}}}", body.join(","))
}

fn export_json(r: &KpiReport) -> String {
    format!(
        "{{\"by_kind\":{},\"by_state\":{},\"mean_fulfillment_millis\":{},\"per_fpa_failure_rate\":{},\"total\":{},\"window\":{{\"from\":{},\"to\":{}}}}}",
        json_map(&r.by_kind, |k| k.as_str(), u64::to_string),
        json_map(&r.by_state, |s| s.as_str(), u64::to_string),
        r.mean_fulfillment_millis,
        json_map(&r.per_fpa_failure_rate, String::as_str, Decimal4::to_string),
        r.total,
        r.from.millis(),
        r.to.millis(),
    )
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn export_csv(r: &KpiReport) -> String {
    let mut out = String::from("metric,key,value\n");
    let mut row = |metric: &str, key: &str, value: String| {
        let _ = writeln!(out, "{metric},{},{value}", csv_field(key));
    };
    row("window", "from", r.from.millis().to_string());
    row("window", "to", r.to.millis().to_string());
    row("total", "", r.total.to_string());
    for (s, n) in &r.by_state {
        row("by_state", s.as_str(), n.to_string());
    }
    for (k, n) in &r.by_kind {
        row("by_kind", k.as_str(), n.to_string());
    }
    row(
        "mean_fulfillment_millis",
        "",
        r.mean_fulfillment_millis.to_string(),
    );
    for (name, rate) in &r.per_fpa_failure_rate {
        row("per_fpa_failure_rate", name, rate.to_string());
    }
    out
}

/// Reads back the JSON export.
pub fn parse_report_json(bytes: &[u8]) -> Result<KpiReport, String> {
    let v: Value = serde_json::from_slice(bytes).map_err(|e| e.to_string())?;
    let obj = v.as_object().ok_or("report is not an object")?;
    let int = |v: &Value| v.as_i64().ok_or_else(|| format!("{v} is not an integer"));
    let dec = |v: &Value| match v {
        Value::Number(n) => {
            Decimal4::from_json_number(n).ok_or_else(|| format!("{n} is not a 4-place decimal"))
        }
        other => Err(format!("{other} is not a number")),
    };
    let field = |k: &str| obj.get(k).ok_or_else(|| format!("missing {k}"));
    let map = |k: &str| -> Result<&serde_json::Map<String, Value>, String> {
        field(k)?
            .as_object()
            .ok_or_else(|| format!("{k} is not an object"))
    };
    let window = map("window")?;
    let mut r = KpiReport {
        from: Timestamp(int(window.get("from").ok_or("missing window.from")?)?),
        to: Timestamp(int(window.get("to").ok_or("missing window.to")?)?),
        total: int(field("total")?)? as u64,
        by_state: BTreeMap::new(),
        by_kind: BTreeMap::new(),
        mean_fulfillment_millis: dec(field("mean_fulfillment_millis")?)?,
        per_fpa_failure_rate: BTreeMap::new(),
    };
    for (k, v) in map("by_state")? {
        r.by_state
            .insert(k.parse().map_err(|e| format!("{e}"))?, int(v)? as u64);
    }
    for (k, v) in map("by_kind")? {
        r.by_kind
            .insert(k.parse().map_err(|e| format!("{e}"))?, int(v)? as u64);
    }
    for (k, v) in map("per_fpa_failure_rate")? {
        r.per_fpa_failure_rate.insert(k.clone(), dec(v)?);
    }
    Ok(r)
}
