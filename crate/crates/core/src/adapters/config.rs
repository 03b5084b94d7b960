use std::path::Path;
use std::sync::Arc;

use serde::Deserialize;
use serde_json::Value;

use super::{
    builtin_adapter, Activation, ActivationChange, AdapterError, BuiltinSystem, FpaDescriptor,
    MockEndpoint, MockScript, Registry,
};

/// One adapter to register, with the script its mock endpoint follows.
#[derive(Debug, Clone, PartialEq)]
pub struct AdapterSpec {
    pub descriptor: FpaDescriptor,
    pub script: MockScript,
}

/// Parsed adapter registry file: a JSON array whose elements are either full
/// descriptors (optionally with a `"mock"` script) or builtin shorthands
/// such as `{"builtin": "crm", "activation": "PREACTIVATED"}`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AdapterConfig {
    pub adapters: Vec<AdapterSpec>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Shorthand {
    builtin: String,
    #[serde(default)]
    activation: Option<Activation>,
    #[serde(default)]
    may_amend: Option<bool>,
    #[serde(default)]
    mock: Option<MockScript>,
}

impl AdapterConfig {
    pub fn parse(text: &str) -> Result<Self, AdapterError> {
        let items: Vec<Value> =
            serde_json::from_str(text).map_err(|e| AdapterError::Config(e.to_string()))?;
        let mut adapters = Vec::with_capacity(items.len());
        for (i, mut item) in items.into_iter().enumerate() {
            let err = |e: serde_json::Error| AdapterError::Config(format!("adapter #{i}: {e}"));
            let spec = if item.get("builtin").is_some() {
                let s: Shorthand = serde_json::from_value(item).map_err(err)?;
                let (mut descriptor, default_script) =
                    builtin_adapter(s.builtin.parse::<BuiltinSystem>()?);
                if let Some(a) = s.activation {
                    descriptor.activation = a;
                }
                if let Some(m) = s.may_amend {
                    descriptor.may_amend = m;
                }
                AdapterSpec {
                    descriptor,
                    script: s.mock.unwrap_or(default_script),
                }
            } else {
                let mock = item.as_object_mut().and_then(|o| o.remove("mock"));
                let descriptor: FpaDescriptor = serde_json::from_value(item).map_err(err)?;
                let script = match mock {
                    Some(m) => serde_json::from_value(m).map_err(err)?,
                    None => MockScript::lenient(Vec::new()),
                };
                AdapterSpec { descriptor, script }
            };
            spec.descriptor.validate()?;
            adapters.push(spec);
        }
        Ok(AdapterConfig { adapters })
    }

    /// Registers every adapter with a fresh mock endpoint, in file order.
    pub fn register_all(
        &self,
        registry: &Registry,
    ) -> Result<Vec<(ActivationChange, Arc<MockEndpoint>)>, AdapterError> {
        self.adapters
            .iter()
            .map(|spec| {
                let endpoint = Arc::new(MockEndpoint::new(
                    &spec.descriptor.target_system,
                    spec.script.clone(),
                ));
                let change = registry.register(spec.descriptor.clone(), endpoint.clone())?;
                Ok((change, endpoint))
            })
            .collect()
    }
}

pub fn load_adapters(path: &Path) -> Result<AdapterConfig, AdapterError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| AdapterError::Config(format!("{}: {e}", path.display())))?;
    AdapterConfig::parse(&text)
}
