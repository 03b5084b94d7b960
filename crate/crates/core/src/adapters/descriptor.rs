use std::collections::BTreeMap;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::AdapterError;
use crate::model::{MappingSpec, NormalizedRecord, TargetSchema};
use crate::rules::{parse_step, print_step, Step};

/// Lifecycle policy declared at registration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Activation {
    /// Activated lazily by the first dispatch.
    Standby,
    /// Health-probed and activated at registration.
    Preactivated,
}

/// How one operation crosses the adapter boundary: the record is projected
/// through `input`, and the system's reply is normalized through `output`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OperationSpec {
    pub input: TargetSchema,
    pub output: MappingSpec,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FpaDescriptor {
    pub name: String,
    pub target_system: String,
    pub activation: Activation,
    pub operations: BTreeMap<String, OperationSpec>,
    #[serde(default)]
    pub may_amend: bool,
}

impl FpaDescriptor {
    pub fn validate(&self) -> Result<(), AdapterError> {
        let ident = |s: &str| {
            s.starts_with(|c: char| c.is_ascii_alphabetic() || c == '_')
                && s.chars().all(|c| c.is_ascii_alphanumeric() || c == '_')
        };
        if !ident(&self.name) {
            return Err(AdapterError::InvalidDescriptor(format!(
                "name {:?} is not an identifier",
                self.name
            )));
        }
        if self.operations.is_empty() {
            return Err(AdapterError::InvalidDescriptor(format!(
                "{} declares no operations",
                self.name
            )));
        }
        if let Some(op) = self.operations.keys().find(|op| !ident(op)) {
            return Err(AdapterError::InvalidDescriptor(format!(
                "{}: operation {op:?} is not an identifier",
                self.name
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum FpaStatus {
    Success,
    Failed { code: String, message: String },
}

impl FpaStatus {
    pub fn failed(code: &str, message: impl Into<String>) -> Self {
        FpaStatus::Failed {
            code: code.to_string(),
            message: message.into(),
        }
    }

    pub fn is_success(&self) -> bool {
        matches!(self, FpaStatus::Success)
    }
}

/// Steps an adapter asks the core to splice into the running plan.
///
/// `after_node` defaults to the node whose invocation produced the request.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProposedAmendment {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub after_node: Option<String>,
    #[serde(serialize_with = "steps_as_text", deserialize_with = "steps_from_text")]
    pub steps: Vec<Step>,
}

fn steps_as_text<S: Serializer>(steps: &[Step], s: S) -> Result<S::Ok, S::Error> {
    s.collect_seq(steps.iter().map(print_step))
}

fn steps_from_text<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Step>, D::Error> {
    let texts = Vec::<String>::deserialize(d)?;
    texts
        .iter()
        .map(|t| parse_step(t).map_err(serde::de::Error::custom))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FpaResult {
    #[serde(flatten)]
    pub status: FpaStatus,
    pub delta: NormalizedRecord,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub amendment: Option<ProposedAmendment>,
}

impl FpaResult {
    pub fn success(delta: NormalizedRecord) -> Self {
        FpaResult {
            status: FpaStatus::Success,
            delta,
            amendment: None,
        }
    }

    pub fn failed(code: &str, message: impl Into<String>) -> Self {
        FpaResult {
            status: FpaStatus::failed(code, message),
            delta: NormalizedRecord::new(),
            amendment: None,
        }
    }
}
