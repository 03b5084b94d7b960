//! Descriptors and default scripts for the seven mock BSS/OSS systems.
//!
//! The default scripts are lenient and sticky: every operation answers
//! success with a body derived from the projected payload, so an engine
//! wired to the catalog can fulfil any number of requests.

use std::fmt;
use std::str::FromStr;

use serde_json::{json, Value};

use super::{AdapterError, FpaDescriptor, MockScript, ScriptEntry};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum BuiltinSystem {
    Crm,
    Billing,
    Erp,
    Ldap,
    Radius,
    Ssw,
    Msan,
}

impl BuiltinSystem {
    pub const ALL: [BuiltinSystem; 7] = [
        BuiltinSystem::Crm,
        BuiltinSystem::Billing,
        BuiltinSystem::Erp,
        BuiltinSystem::Ldap,
        BuiltinSystem::Radius,
        BuiltinSystem::Ssw,
        BuiltinSystem::Msan,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            BuiltinSystem::Crm => "crm",
            BuiltinSystem::Billing => "billing",
            BuiltinSystem::Erp => "erp",
            BuiltinSystem::Ldap => "ldap",
            BuiltinSystem::Radius => "radius",
            BuiltinSystem::Ssw => "ssw",
            BuiltinSystem::Msan => "msan",
        }
    }
}

impl fmt::Display for BuiltinSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BuiltinSystem {
    type Err = AdapterError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        BuiltinSystem::ALL
            .into_iter()
            .find(|b| b.as_str() == s)
            .ok_or_else(|| AdapterError::Config(format!("unknown builtin system {s:?}")))
    }
}

/// `(target path, entity pattern, attribute)`; every field is required.
type In<'a> = &'a [(&'a str, &'a str, &'a str)];
/// `(reply path, entity template, attribute, type)`.
type Out<'a> = &'a [(&'a str, &'a str, &'a str, &'a str)];

fn op(input: In<'_>, output: Out<'_>) -> Value {
    json!({
        "input": {"fields": input.iter().map(|(t, e, a)| json!({"target": t, "entity": e, "attribute": a})).collect::<Vec<_>>()},
        "output": {"entries": output.iter().map(|(p, e, a, ty)| json!({"path": p, "entity": e, "attribute": a, "type": ty})).collect::<Vec<_>>()},
    })
}

/// Operations as `(name, spec, default reply body)`.
fn operations(system: BuiltinSystem) -> Vec<(&'static str, Value, Value)> {
    const CUSTOMER_ID: (&str, &str, &str) = ("customer.id", "customer/*", "id");
    match system {
        BuiltinSystem::Crm => vec![
            (
                "validate",
                op(
                    &[
                        CUSTOMER_ID,
                        ("customer.name", "customer/*", "name"),
                        ("product", "order/*", "product"),
                    ],
                    &[("valid", "customer/{customer_id}", "crm_valid", "boolean")],
                ),
                json!({"customer_id": "{customer.id}", "valid": true}),
            ),
            (
                "rollback",
                op(
                    &[CUSTOMER_ID],
                    &[("state", "customer/{customer_id}", "crm_state", "text")],
                ),
                json!({"customer_id": "{customer.id}", "state": "rolled_back"}),
            ),
        ],
        BuiltinSystem::Billing => vec![
            (
                "open_account",
                op(
                    &[CUSTOMER_ID, ("product", "order/*", "product")],
                    &[
                        ("account_id", "account/{account_id}", "id", "text"),
                        ("status", "account/{account_id}", "status", "text"),
                        ("customer_id", "account/{account_id}", "customer", "text"),
                    ],
                ),
                json!({"account_id": "A1", "status": "open", "customer_id": "{customer.id}"}),
            ),
            (
                "close_account",
                op(
                    &[("account.id", "account/*", "id")],
                    &[("status", "account/{account_id}", "status", "text")],
                ),
                json!({"account_id": "{account.id}", "status": "closed"}),
            ),
        ],
        BuiltinSystem::Erp => vec![
            (
                "create_order",
                op(
                    &[
                        ("order.id", "order/*", "id"),
                        ("order.product", "order/*", "product"),
                    ],
                    &[
                        ("erp_ref", "erp_order/{erp_ref}", "id", "text"),
                        ("status", "erp_order/{erp_ref}", "status", "text"),
                    ],
                ),
                json!({"erp_ref": "{order.id}", "status": "booked"}),
            ),
            (
                "cancel_order",
                op(
                    &[("erp_ref", "erp_order/*", "id")],
                    &[("status", "erp_order/{erp_ref}", "status", "text")],
                ),
                json!({"erp_ref": "{erp_ref}", "status": "cancelled"}),
            ),
        ],
        BuiltinSystem::Ldap => vec![
            (
                "create_entry",
                op(
                    &[("uid", "customer/*", "id"), ("cn", "customer/*", "name")],
                    &[("created", "customer/{uid}", "ldap_entry", "boolean")],
                ),
                json!({"uid": "{uid}", "created": true}),
            ),
            (
                "delete_entry",
                op(
                    &[("uid", "customer/*", "id")],
                    &[("created", "customer/{uid}", "ldap_entry", "boolean")],
                ),
                json!({"uid": "{uid}", "created": false}),
            ),
        ],
        BuiltinSystem::Radius => vec![
            (
                "add_user",
                op(
                    &[
                        ("username", "customer/*", "id"),
                        ("profile", "order/*", "product"),
                    ],
                    &[("profile", "customer/{username}", "radius_profile", "text")],
                ),
                json!({"username": "{username}", "profile": "{profile}"}),
            ),
            (
                "remove_user",
                op(
                    &[("username", "customer/*", "id")],
                    &[("profile", "customer/{username}", "radius_profile", "text")],
                ),
                json!({"username": "{username}", "profile": "none"}),
            ),
        ],
        BuiltinSystem::Ssw => vec![
            (
                "configure_line",
                op(
                    &[("subscriber", "customer/*", "id")],
                    &[("line_id", "customer/{subscriber}", "line_id", "text")],
                ),
                json!({"subscriber": "{subscriber}", "line_id": "L1"}),
            ),
            (
                "release_line",
                op(
                    &[("subscriber", "customer/*", "id")],
                    &[("line_id", "customer/{subscriber}", "line_id", "text")],
                ),
                json!({"subscriber": "{subscriber}", "line_id": "released"}),
            ),
        ],
        BuiltinSystem::Msan => vec![
            (
                "configure_port",
                op(
                    &[("subscriber", "customer/*", "id")],
                    &[
                        ("port_id", "port/{port_id}", "id", "text"),
                        ("status", "port/{port_id}", "status", "text"),
                        ("subscriber", "port/{port_id}", "customer", "text"),
                    ],
                ),
                json!({"port_id": "P1", "status": "up", "subscriber": "{subscriber}"}),
            ),
            (
                "release_port",
                op(
                    &[("port.id", "port/*", "id")],
                    &[("status", "port/{port_id}", "status", "text")],
                ),
                json!({"port_id": "{port.id}", "status": "down"}),
            ),
        ],
    }
}

/// The catalog descriptor for `system`, registered in standby mode.
pub fn builtin_adapter(system: BuiltinSystem) -> (FpaDescriptor, MockScript) {
    let ops = operations(system);
    let descriptor = serde_json::from_value(json!({
        "name": system.as_str(),
        "target_system": system.as_str(),
        "activation": "STANDBY",
        "operations": ops.iter().map(|(n, spec, _)| (n.to_string(), spec.clone())).collect::<serde_json::Map<_, _>>(),
    }))
    .expect("builtin descriptors are well-formed");
    let entries = ops
        .into_iter()
        .map(|(n, _, reply)| ScriptEntry::respond(reply).for_operation(n).sticky())
        .collect();
    (descriptor, MockScript::lenient(entries))
}

pub fn builtin_catalog() -> Vec<(FpaDescriptor, MockScript)> {
    BuiltinSystem::ALL
        .into_iter()
        .map(builtin_adapter)
        .collect()
}
