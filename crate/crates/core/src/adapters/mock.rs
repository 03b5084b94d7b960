//! Scripted in-process stand-ins for the BSS/OSS systems.

use std::sync::Mutex;

use serde::Deserialize;
use serde_json::Value;

use super::{AdapterError, Endpoint, ProposedAmendment, Reply, ReplyBody};
use crate::model::{AttrKey, AttributeValue, Decimal4, NormalizedRecord, PayloadPath};
use crate::rules::{evaluate_in, EvalContext, Predicate};

/// What a matched script entry answers with.
#[derive(Debug, Clone, PartialEq)]
pub enum ScriptResponse {
    /// JSON body. A string value of the form `"{path}"` is replaced by the
    /// value at `path` in the projected request payload.
    Respond(Value),
    /// Body sent verbatim, for exercising unparsable replies.
    Raw(String),
    Fail {
        code: String,
        message: String,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScriptEntry {
    /// Evaluated against [`flatten_payload`]; `None` matches every call.
    pub matcher: Option<Predicate>,
    pub operation: Option<String>,
    pub response: ScriptResponse,
    pub latency_ticks: u64,
    /// The first `n - 1` matching calls fail with `TRANSIENT`.
    pub succeed_on_attempt: Option<u32>,
    /// Sticky entries answer any number of calls instead of being used up.
    pub sticky: bool,
    pub amend: Option<ProposedAmendment>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEntry {
    #[serde(rename = "match", default)]
    matcher: Option<Predicate>,
    #[serde(default)]
    operation: Option<String>,
    #[serde(default)]
    respond: Option<Value>,
    #[serde(default)]
    respond_raw: Option<String>,
    #[serde(default)]
    fail: Option<String>,
    #[serde(default)]
    message: Option<String>,
    #[serde(default = "one")]
    latency_ticks: u64,
    #[serde(default)]
    succeed_on_attempt: Option<u32>,
    #[serde(default)]
    sticky: bool,
    #[serde(default)]
    amend: Option<ProposedAmendment>,
}

fn one() -> u64 {
    1
}

impl TryFrom<RawEntry> for ScriptEntry {
    type Error = AdapterError;

    fn try_from(raw: RawEntry) -> Result<Self, AdapterError> {
        let response = match (raw.respond, raw.respond_raw, raw.fail) {
            (Some(v), None, None) => ScriptResponse::Respond(v),
            (None, Some(s), None) => ScriptResponse::Raw(s),
            (None, None, Some(code)) => {
                if raw.succeed_on_attempt.is_some() {
                    return Err(AdapterError::InvalidScript(
                        "succeed_on_attempt needs a success response".into(),
                    ));
                }
                ScriptResponse::Fail {
                    message: raw.message.unwrap_or_else(|| code.clone()),
                    code,
                }
            }
            _ => {
                return Err(AdapterError::InvalidScript(
                    "exactly one of respond, respond_raw, fail is required".into(),
                ))
            }
        };
        if raw.succeed_on_attempt == Some(0) {
            return Err(AdapterError::InvalidScript(
                "succeed_on_attempt starts at 1".into(),
            ));
        }
        Ok(ScriptEntry {
            matcher: raw.matcher,
            operation: raw.operation,
            response,
            latency_ticks: raw.latency_ticks,
            succeed_on_attempt: raw.succeed_on_attempt,
            sticky: raw.sticky,
            amend: raw.amend,
        })
    }
}

impl<'de> Deserialize<'de> for ScriptEntry {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        ScriptEntry::try_from(RawEntry::deserialize(d)?).map_err(serde::de::Error::custom)
    }
}

impl ScriptEntry {
    pub fn respond(body: Value) -> Self {
        ScriptEntry {
            matcher: None,
            operation: None,
            response: ScriptResponse::Respond(body),
            latency_ticks: 1,
            succeed_on_attempt: None,
            sticky: false,
            amend: None,
        }
    }

    pub fn fail(code: &str) -> Self {
        ScriptEntry {
            response: ScriptResponse::Fail {
                code: code.to_string(),
                message: code.to_string(),
            },
            ..ScriptEntry::respond(Value::Null)
        }
    }

    pub fn for_operation(mut self, op: &str) -> Self {
        self.operation = Some(op.to_string());
        self
    }

    pub fn matching(mut self, p: Predicate) -> Self {
        self.matcher = Some(p);
        self
    }

    pub fn latency(mut self, ticks: u64) -> Self {
        self.latency_ticks = ticks;
        self
    }

    pub fn sticky(mut self) -> Self {
        self.sticky = true;
        self
    }

    pub fn succeed_on_attempt(mut self, n: u32) -> Self {
        self.succeed_on_attempt = Some(n);
        self
    }

    pub fn amending(mut self, am: ProposedAmendment) -> Self {
        self.amend = Some(am);
        self
    }
}

/// A whole mock configuration. Written either as a bare array of entries
/// (strict) or as `{"strict": .., "healthy": .., "entries": [..]}`.
#[derive(Debug, Clone, PartialEq)]
pub struct MockScript {
    pub strict: bool,
    pub healthy: bool,
    pub entries: Vec<ScriptEntry>,
}

impl MockScript {
    pub fn strict(entries: Vec<ScriptEntry>) -> Self {
        MockScript {
            strict: true,
            healthy: true,
            entries,
        }
    }

    pub fn lenient(entries: Vec<ScriptEntry>) -> Self {
        MockScript {
            strict: false,
            healthy: true,
            entries,
        }
    }
}

impl<'de> Deserialize<'de> for MockScript {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct Full {
            #[serde(default = "yes")]
            strict: bool,
            #[serde(default = "yes")]
            healthy: bool,
            entries: Vec<ScriptEntry>,
        }
        fn yes() -> bool {
            true
        }
        let value = Value::deserialize(d)?;
        if value.is_array() {
            let entries =
                Vec::<ScriptEntry>::deserialize(value).map_err(serde::de::Error::custom)?;
            return Ok(MockScript::strict(entries));
        }
        let f = Full::deserialize(value).map_err(serde::de::Error::custom)?;
        Ok(MockScript {
            strict: f.strict,
            healthy: f.healthy,
            entries: f.entries,
        })
    }
}

/// One call as the mock received it.
#[derive(Debug, Clone, PartialEq)]
pub struct MockCall {
    pub operation: String,
    pub payload: Value,
}

#[derive(Debug, Default)]
struct MockState {
    used: Vec<bool>,
    hits: Vec<u32>,
    calls: Vec<MockCall>,
}

#[derive(Debug)]
pub struct MockEndpoint {
    system: String,
    script: MockScript,
    state: Mutex<MockState>,
}

impl MockEndpoint {
    pub fn new(system: &str, script: MockScript) -> Self {
        let n = script.entries.len();
        MockEndpoint {
            system: system.to_string(),
            script,
            state: Mutex::new(MockState {
                used: vec![false; n],
                hits: vec![0; n],
                calls: Vec::new(),
            }),
        }
    }

    pub fn system(&self) -> &str {
        &self.system
    }

    /// Every call received so far, in arrival order.
    pub fn calls(&self) -> Vec<MockCall> {
        self.state
            .lock()
            .expect("mock state poisoned")
            .calls
            .clone()
    }

    pub fn call_count(&self) -> usize {
        self.state.lock().expect("mock state poisoned").calls.len()
    }
}

impl Endpoint for MockEndpoint {
    fn call(&self, operation: &str, payload: &Value) -> Reply {
        let view = flatten_payload(operation, payload);
        let ctx = EvalContext {
            kind: None,
            source: None,
            record: &view,
        };
        let mut st = self.state.lock().expect("mock state poisoned");
        st.calls.push(MockCall {
            operation: operation.to_string(),
            payload: payload.clone(),
        });
        let found = self.script.entries.iter().enumerate().find(|(i, e)| {
            !st.used[*i]
                && e.operation.as_deref().is_none_or(|op| op == operation)
                && e.matcher.as_ref().is_none_or(|m| evaluate_in(m, &ctx))
        });
        let Some((i, entry)) = found else {
            return if self.script.strict {
                Reply::fail(
                    "SCRIPT_EXHAUSTED",
                    &format!("{}: no script entry for {operation}", self.system),
                    1,
                )
            } else {
                Reply::json(&Value::Object(Default::default()), 1)
            };
        };
        st.hits[i] += 1;
        if entry.succeed_on_attempt.is_some_and(|n| st.hits[i] < n) {
            return Reply::fail(
                "TRANSIENT",
                &format!("{}: attempt {} refused", self.system, st.hits[i]),
                entry.latency_ticks,
            );
        }
        if !entry.sticky {
            st.used[i] = true;
        }
        let body = match &entry.response {
            ScriptResponse::Respond(v) => {
                ReplyBody::Bytes(substitute(v, payload).to_string().into_bytes())
            }
            ScriptResponse::Raw(s) => ReplyBody::Bytes(s.clone().into_bytes()),
            ScriptResponse::Fail { code, message } => ReplyBody::Fail {
                code: code.clone(),
                message: message.clone(),
            },
        };
        Reply {
            body,
            latency_ticks: entry.latency_ticks,
            amendment: entry.amend.clone(),
        }
    }

    fn probe(&self) -> bool {
        self.script.healthy
    }
}

fn substitute(template: &Value, payload: &Value) -> Value {
    match template {
        Value::String(s) => match s.strip_prefix('{').and_then(|r| r.strip_suffix('}')) {
            Some(path) => path
                .parse::<PayloadPath>()
                .ok()
                .and_then(|p| p.resolve(payload).cloned())
                .unwrap_or(Value::Null),
            None => template.clone(),
        },
        Value::Array(items) => Value::Array(items.iter().map(|v| substitute(v, payload)).collect()),
        Value::Object(map) => Value::Object(
            map.iter()
                .map(|(k, v)| (k.clone(), substitute(v, payload)))
                .collect(),
        ),
        other => other.clone(),
    }
}

/// The record a script `match` predicate sees: `(call, operation)` plus one
/// binding per scalar in the payload, with nesting spelled as entity path
/// under `payload`. `{"customer": {"id": "C1"}}` binds `(payload/customer, id)`.
pub fn flatten_payload(operation: &str, payload: &Value) -> NormalizedRecord {
    let mut out = NormalizedRecord::new();
    out.set(
        AttrKey::new("call", "operation"),
        AttributeValue::Text(operation.to_string()),
    );
    walk(&mut out, "payload", payload);
    out
}

fn walk(out: &mut NormalizedRecord, entity: &str, v: &Value) {
    let children: Vec<(String, &Value)> = match v {
        Value::Object(map) => map.iter().map(|(k, v)| (k.clone(), v)).collect(),
        Value::Array(items) => items
            .iter()
            .enumerate()
            .map(|(i, v)| (i.to_string(), v))
            .collect(),
        _ => return,
    };
    for (key, child) in children {
        let scalar = match child {
            Value::String(s) => Some(AttributeValue::Text(s.clone())),
            Value::Bool(b) => Some(AttributeValue::Boolean(*b)),
            Value::Number(n) => match n.as_i64() {
                Some(i) => Some(AttributeValue::Integer(i)),
                None => Decimal4::from_json_number(n).map(AttributeValue::Decimal),
            },
            Value::Null => None,
            nested => {
                walk(out, &format!("{entity}/{key}"), nested);
                None
            }
        };
        if let Some(value) = scalar {
            out.set(AttrKey::new(entity, key), value);
        }
    }
}
