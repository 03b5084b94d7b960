//! Process assembly: configuration, the engine facade, and the CLI and HTTP
//! front ends.

pub mod cli;
mod config;
mod engine;
pub mod http;
mod scenario;

pub use config::{load_config, parse_config, ConfigError, EngineConfig, SchedulerMode};
pub use engine::{builtin_adapters, load_rules, Engine, EngineError, EngineSetup};
pub use scenario::{load_scenario, run_scenario, Scenario, ScenarioRun};
