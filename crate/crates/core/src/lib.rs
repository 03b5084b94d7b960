pub mod adapters;
pub mod model;
pub mod orchestrator;
pub mod receiver;
pub mod rules;
pub mod service;
pub mod trace;
