use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::orchestrator::DEFAULT_MAX_AMENDMENT_DEPTH;
use crate::receiver::DEFAULT_BODY_CAP;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SchedulerMode {
    Deterministic,
    Concurrent,
}

impl std::str::FromStr for SchedulerMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "deterministic" => Ok(SchedulerMode::Deterministic),
            "concurrent" => Ok(SchedulerMode::Concurrent),
            other => Err(format!("unknown scheduler {other:?}")),
        }
    }
}

/// Engine configuration. Relative paths are resolved against the directory
/// of the config file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EngineConfig {
    #[serde(default = "default_listen")]
    pub listen_address: String,
    pub rules_path: PathBuf,
    #[serde(default)]
    pub mappings_path: Option<PathBuf>,
    /// Absent means the builtin catalog.
    #[serde(default)]
    pub adapters_path: Option<PathBuf>,
    /// Absent means an in-memory log.
    #[serde(default)]
    pub log_path: Option<PathBuf>,
    #[serde(default)]
    pub snapshot_path: Option<PathBuf>,
    #[serde(default = "default_scheduler")]
    pub scheduler: SchedulerMode,
    #[serde(default)]
    pub scheduler_seed: Option<u64>,
    #[serde(default = "default_depth")]
    pub max_amendment_depth: u32,
    #[serde(default = "default_body_cap")]
    pub body_cap: usize,
    #[serde(default)]
    pub fsync: bool,
}

fn default_listen() -> String {
    "127.0.0.1:8080".into()
}

fn default_scheduler() -> SchedulerMode {
    SchedulerMode::Concurrent
}

fn default_depth() -> u32 {
    DEFAULT_MAX_AMENDMENT_DEPTH
}

fn default_body_cap() -> usize {
    DEFAULT_BODY_CAP
}

const KEYS: [&str; 11] = [
    "listen_address",
    "rules_path",
    "mappings_path",
    "adapters_path",
    "log_path",
    "snapshot_path",
    "scheduler",
    "scheduler_seed",
    "max_amendment_depth",
    "body_cap",
    "fsync",
];

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfigError {
    #[error("config invalid: {}", .0.join("; "))]
    Invalid(Vec<String>),
    #[error("cannot read config {0}")]
    Unreadable(String),
}

impl ConfigError {
    pub fn code(&self) -> &'static str {
        match self {
            ConfigError::Invalid(_) => "CONFIG_INVALID",
            ConfigError::Unreadable(_) => "CONFIG_UNREADABLE",
        }
    }

    pub fn diagnostics(&self) -> Vec<String> {
        match self {
            ConfigError::Invalid(d) => d.clone(),
            ConfigError::Unreadable(m) => vec![m.clone()],
        }
    }
}

pub fn load_config(path: &Path) -> Result<EngineConfig, ConfigError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ConfigError::Unreadable(format!("{}: {e}", path.display())))?;
    let base = path.parent().unwrap_or(Path::new("."));
    parse_config(&text, base)
}

/// Strict parse: every problem found is reported, keyed by config key.
pub fn parse_config(text: &str, base: &Path) -> Result<EngineConfig, ConfigError> {
    let value: Value = serde_json::from_str(text)
        .map_err(|e| ConfigError::Invalid(vec![format!("not JSON: {e}")]))?;
    let Some(obj) = value.as_object() else {
        return Err(ConfigError::Invalid(vec![
            "config must be a JSON object".into()
        ]));
    };
    let mut problems: Vec<String> = obj
        .keys()
        .filter(|k| !KEYS.contains(&k.as_str()))
        .map(|k| format!("{k}: unknown key"))
        .collect();
    if !problems.is_empty() {
        return Err(ConfigError::Invalid(problems));
    }
    let mut cfg: EngineConfig =
        serde_json::from_value(value).map_err(|e| ConfigError::Invalid(vec![e.to_string()]))?;
    for p in [
        Some(&mut cfg.rules_path),
        cfg.mappings_path.as_mut(),
        cfg.adapters_path.as_mut(),
        cfg.log_path.as_mut(),
        cfg.snapshot_path.as_mut(),
    ]
    .into_iter()
    .flatten()
    {
        if p.is_relative() {
            *p = base.join(&*p);
        }
    }
    if cfg.scheduler == SchedulerMode::Deterministic && cfg.scheduler_seed.is_none() {
        problems.push("scheduler_seed: required when scheduler is deterministic".into());
    }
    let named = [
        ("rules_path", Some(&cfg.rules_path)),
        ("mappings_path", cfg.mappings_path.as_ref()),
        ("adapters_path", cfg.adapters_path.as_ref()),
        ("log_path", cfg.log_path.as_ref()),
        ("snapshot_path", cfg.snapshot_path.as_ref()),
    ];
    for (i, (a, pa)) in named.iter().enumerate() {
        for (b, pb) in &named[i + 1..] {
            if let (Some(pa), Some(pb)) = (pa, pb) {
                if pa == pb {
                    problems.push(format!("{b}: same path as {a}"));
                }
            }
        }
    }
    if cfg.snapshot_path.is_some() && cfg.log_path.is_none() {
        problems.push("snapshot_path: requires log_path".into());
    }
    if cfg.body_cap == 0 {
        problems.push("body_cap: must be positive".into());
    }
    if problems.is_empty() {
        Ok(cfg)
    } else {
        Err(ConfigError::Invalid(problems))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<EngineConfig, ConfigError> {
        parse_config(text, Path::new("/etc/frm"))
    }

    #[test]
    fn minimal_config_gets_defaults() {
        let c = parse(r#"{"rules_path": "rules.frm"}"#).unwrap();
        assert_eq!(c.rules_path, PathBuf::from("/etc/frm/rules.frm"));
        assert_eq!(c.listen_address, "127.0.0.1:8080");
        assert_eq!(c.scheduler, SchedulerMode::Concurrent);
        assert_eq!(c.max_amendment_depth, 3);
        assert_eq!(c.body_cap, 1 << 20);
        assert!(c.log_path.is_none());
    }

    #[test]
    fn unknown_key_is_named() {
        let e = parse(r#"{"rules_path": "r.frm", "tracing_level2": 1}"#).unwrap_err();
        assert_eq!(e.code(), "CONFIG_INVALID");
        assert_eq!(e.diagnostics(), ["tracing_level2: unknown key"]);
    }

    #[test]
    fn deterministic_needs_seed() {
        let e = parse(r#"{"rules_path": "r.frm", "scheduler": "deterministic"}"#).unwrap_err();
        assert!(e.diagnostics()[0].starts_with("scheduler_seed"));
        assert!(parse(
            r#"{"rules_path": "r.frm", "scheduler": "deterministic", "scheduler_seed": 7}"#
        )
        .is_ok());
    }

    #[test]
    fn paths_must_differ() {
        let e = parse(r#"{"rules_path": "a", "log_path": "a"}"#).unwrap_err();
        assert_eq!(e.diagnostics(), ["log_path: same path as rules_path"]);
    }
}
