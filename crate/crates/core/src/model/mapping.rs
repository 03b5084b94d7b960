//! Conversion between external payload trees and the normalized record.
//!
//! A [`MappingSpec`] pulls values out of an inbound JSON tree and binds them to
//! (entity, attribute) keys; a [`TargetSchema`] does the reverse for the
//! shape an interconnected system expects.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::record::{AttrKey, NormalizedRecord};
use super::value::{AttributeValue, ValueType};
use super::ModelError;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum PathSegment {
    Key(String),
    Index(usize),
}

/// Dot-separated keys with optional `[n]` array indexing, e.g. `items[0].sku`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PayloadPath {
    segments: Vec<PathSegment>,
}

impl PayloadPath {
    pub fn segments(&self) -> &[PathSegment] {
        &self.segments
    }

    pub fn from_keys<I: IntoIterator<Item = String>>(keys: I) -> Result<Self, ModelError> {
        let segments: Vec<_> = keys.into_iter().map(PathSegment::Key).collect();
        if segments.is_empty() {
            return Err(ModelError::InvalidPath(String::new()));
        }
        for s in &segments {
            if let PathSegment::Key(k) = s {
                if k.is_empty() || k.contains(['.', '[', ']']) {
                    return Err(ModelError::InvalidPath(k.clone()));
                }
            }
        }
        Ok(PayloadPath { segments })
    }

    pub fn is_keys_only(&self) -> bool {
        self.segments
            .iter()
            .all(|s| matches!(s, PathSegment::Key(_)))
    }

    /// Follows the path; `null` leaves count as absent.
    pub fn resolve<'v>(&self, root: &'v Value) -> Option<&'v Value> {
        let mut cur = root;
        for seg in &self.segments {
            cur = match seg {
                PathSegment::Key(k) => cur.as_object()?.get(k)?,
                PathSegment::Index(i) => cur.as_array()?.get(*i)?,
            };
        }
        (!cur.is_null()).then_some(cur)
    }
}

impl FromStr for PayloadPath {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || ModelError::InvalidPath(s.to_string());
        let mut segments = Vec::new();
        for part in s.split('.') {
            let (key, mut rest) = match part.find('[') {
                Some(i) => (&part[..i], &part[i..]),
                None => (part, ""),
            };
            if key.is_empty() || key.contains(']') {
                return Err(bad());
            }
            segments.push(PathSegment::Key(key.to_string()));
            while !rest.is_empty() {
                let close = rest.find(']').ok_or_else(bad)?;
                let digits = rest.get(1..close).ok_or_else(bad)?;
                if !rest.starts_with('[')
                    || digits.is_empty()
                    || !digits.bytes().all(|b| b.is_ascii_digit())
                {
                    return Err(bad());
                }
                segments.push(PathSegment::Index(digits.parse().map_err(|_| bad())?));
                rest = &rest[close + 1..];
            }
        }
        Ok(PayloadPath { segments })
    }
}

impl fmt::Display for PayloadPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, seg) in self.segments.iter().enumerate() {
            match seg {
                PathSegment::Key(k) if i == 0 => write!(f, "{k}")?,
                PathSegment::Key(k) => write!(f, ".{k}")?,
                PathSegment::Index(n) => write!(f, "[{n}]")?,
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
enum TemplatePart {
    Literal(String),
    RequestId,
    Path(PayloadPath),
}

/// An entity-id template: literal text with `{req}` (the request id) and
/// `{payload.path}` placeholders.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Template {
    parts: Vec<TemplatePart>,
}

impl Template {
    fn has_payload_refs(&self) -> bool {
        self.parts
            .iter()
            .any(|p| matches!(p, TemplatePart::Path(_)))
    }

    /// `None` when a referenced payload path is absent or not a scalar.
    pub fn render(&self, payload: &Value, request_id: Option<&str>) -> Option<String> {
        let mut out = String::new();
        for part in &self.parts {
            match part {
                TemplatePart::Literal(s) => out.push_str(s),
                TemplatePart::RequestId => out.push_str(request_id?),
                TemplatePart::Path(p) => match p.resolve(payload)? {
                    Value::String(s) => out.push_str(s),
                    Value::Number(n) => out.push_str(&n.to_string()),
                    Value::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
                    _ => return None,
                },
            }
        }
        Some(out)
    }
}

impl FromStr for Template {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || ModelError::InvalidTemplate(s.to_string());
        let mut parts = Vec::new();
        let mut rest = s;
        while !rest.is_empty() {
            match rest.find(['{', '}']) {
                None => {
                    parts.push(TemplatePart::Literal(rest.to_string()));
                    break;
                }
                Some(i) if rest.as_bytes()[i] == b'}' => return Err(bad()),
                Some(i) => {
                    if i > 0 {
                        parts.push(TemplatePart::Literal(rest[..i].to_string()));
                    }
                    let close = rest[i..].find('}').ok_or_else(bad)? + i;
                    let inner = &rest[i + 1..close];
                    if inner.contains('{') {
                        return Err(bad());
                    }
                    parts.push(if inner == "req" {
                        TemplatePart::RequestId
                    } else {
                        TemplatePart::Path(inner.parse().map_err(|_| bad())?)
                    });
                    rest = &rest[close + 1..];
                }
            }
        }
        if parts.is_empty() {
            return Err(bad());
        }
        Ok(Template { parts })
    }
}

impl fmt::Display for Template {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for part in &self.parts {
            match part {
                TemplatePart::Literal(s) => f.write_str(s)?,
                TemplatePart::RequestId => f.write_str("{req}")?,
                TemplatePart::Path(p) => write!(f, "{{{p}}}")?,
            }
        }
        Ok(())
    }
}

macro_rules! string_serde {
    ($ty:ty) => {
        impl Serialize for $ty {
            fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
                serializer.collect_str(self)
            }
        }

        impl<'de> Deserialize<'de> for $ty {
            fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
                String::deserialize(deserializer)?
                    .parse()
                    .map_err(serde::de::Error::custom)
            }
        }
    };
}

string_serde!(PayloadPath);
string_serde!(Template);
string_serde!(EntityPattern);

fn check_attribute(attribute: &str) -> Result<(), ModelError> {
    let key = AttrKey::new("x", attribute);
    match key.violations().into_iter().next() {
        None => Ok(()),
        Some(v) => Err(ModelError::InvalidKey(v.to_string())),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MappingEntry {
    pub path: PayloadPath,
    pub entity: Template,
    pub attribute: String,
    #[serde(rename = "type")]
    pub value_type: ValueType,
}

impl MappingEntry {
    pub fn new(
        path: &str,
        entity: &str,
        attribute: &str,
        value_type: ValueType,
    ) -> Result<Self, ModelError> {
        check_attribute(attribute)?;
        Ok(MappingEntry {
            path: path.parse()?,
            entity: entity.parse()?,
            attribute: attribute.to_string(),
            value_type,
        })
    }
}

/// Ordered rules turning an inbound payload into a normalized record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawMappingSpec")]
pub struct MappingSpec {
    entries: Vec<MappingEntry>,
    pub strict: bool,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMappingSpec {
    entries: Vec<MappingEntry>,
    #[serde(default)]
    strict: bool,
}

impl TryFrom<RawMappingSpec> for MappingSpec {
    type Error = ModelError;

    fn try_from(raw: RawMappingSpec) -> Result<Self, Self::Error> {
        MappingSpec::new(raw.entries, raw.strict)
    }
}

impl MappingSpec {
    /// Rejects entries that statically target the same (entity, attribute).
    ///
    /// Templates that depend on payload values can still collide at
    /// normalization time; that surfaces as `DuplicateAttribute`.
    pub fn new(entries: Vec<MappingEntry>, strict: bool) -> Result<Self, ModelError> {
        let mut seen = BTreeSet::new();
        for e in &entries {
            check_attribute(&e.attribute)?;
            let target = (e.entity.to_string(), e.attribute.clone());
            if !seen.insert(target) {
                return Err(ModelError::InvalidSpec(format!(
                    "two entries target ({}, {})",
                    e.entity, e.attribute
                )));
            }
        }
        Ok(MappingSpec { entries, strict })
    }

    pub fn empty(strict: bool) -> Self {
        MappingSpec {
            entries: Vec::new(),
            strict,
        }
    }

    pub fn entries(&self) -> &[MappingEntry] {
        &self.entries
    }

    /// True when no entry's entity depends on the payload.
    pub fn is_static(&self) -> bool {
        !self.entries.iter().any(|e| e.entity.has_payload_refs())
    }
}

/// Parses `payload` as JSON and applies `spec`.
pub fn normalize(
    payload: &[u8],
    spec: &MappingSpec,
    request_id: Option<&str>,
) -> Result<NormalizedRecord, ModelError> {
    let tree: Value = serde_json::from_slice(payload)
        .map_err(|e| ModelError::PayloadUnparsable(e.to_string()))?;
    normalize_value(&tree, spec, request_id)
}

/// Applies `spec` to an already-parsed payload tree.
pub fn normalize_value(
    tree: &Value,
    spec: &MappingSpec,
    request_id: Option<&str>,
) -> Result<NormalizedRecord, ModelError> {
    if !tree.is_object() {
        return Err(ModelError::PayloadUnparsable(
            "payload root is not an object".into(),
        ));
    }
    let mut record = NormalizedRecord::new();
    for entry in &spec.entries {
        let resolved = entry
            .path
            .resolve(tree)
            .zip(entry.entity.render(tree, request_id));
        let Some((leaf, entity)) = resolved else {
            if spec.strict {
                return Err(ModelError::MissingPath(entry.path.to_string()));
            }
            continue;
        };
        let key = AttrKey::new(entity, entry.attribute.clone());
        if let Some(v) = key.violations().into_iter().next() {
            return Err(ModelError::InvalidKey(v.to_string()));
        }
        let value = AttributeValue::coerce(leaf, entry.value_type).ok_or_else(|| {
            ModelError::TypeMismatch {
                path: entry.path.to_string(),
                expected: entry.value_type,
            }
        })?;
        record.insert(key, value)?;
    }
    Ok(record)
}

/// Entity reference in a target schema: a template over `{req}`, optionally
/// ending in `/*` to mean "the single entity of this type carrying the attribute".
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum EntityPattern {
    Exact(Template),
    AnyUnder(Template),
}

impl FromStr for EntityPattern {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (wild, body) = match s.strip_suffix("/*") {
            Some(prefix) => (true, prefix),
            None => (false, s),
        };
        let template: Template = body.parse()?;
        if template.has_payload_refs() {
            return Err(ModelError::InvalidTemplate(format!(
                "{s}: only {{req}} is allowed in a target schema"
            )));
        }
        Ok(if wild {
            EntityPattern::AnyUnder(template)
        } else {
            EntityPattern::Exact(template)
        })
    }
}

impl fmt::Display for EntityPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EntityPattern::Exact(t) => write!(f, "{t}"),
            EntityPattern::AnyUnder(t) => write!(f, "{t}/*"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetField {
    pub target: PayloadPath,
    pub entity: EntityPattern,
    pub attribute: String,
    #[serde(default = "default_required")]
    pub required: bool,
}

fn default_required() -> bool {
    true
}

impl TargetField {
    pub fn new(
        target: &str,
        entity: &str,
        attribute: &str,
        required: bool,
    ) -> Result<Self, ModelError> {
        Ok(TargetField {
            target: target.parse()?,
            entity: entity.parse()?,
            attribute: attribute.to_string(),
            required,
        })
    }
}

/// The payload shape a target system expects, expressed as normalized keys.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(try_from = "RawTargetSchema")]
pub struct TargetSchema {
    fields: Vec<TargetField>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTargetSchema {
    fields: Vec<TargetField>,
}

impl TryFrom<RawTargetSchema> for TargetSchema {
    type Error = ModelError;

    fn try_from(raw: RawTargetSchema) -> Result<Self, Self::Error> {
        TargetSchema::new(raw.fields)
    }
}

impl TargetSchema {
    /// Target paths must be key-only and no path may be a prefix of another.
    pub fn new(fields: Vec<TargetField>) -> Result<Self, ModelError> {
        let mut paths: Vec<Vec<&PathSegment>> = Vec::new();
        for f in &fields {
            check_attribute(&f.attribute)?;
            if !f.target.is_keys_only() {
                return Err(ModelError::InvalidSchema(format!(
                    "target {} uses array indexing",
                    f.target
                )));
            }
            let segs: Vec<_> = f.target.segments().iter().collect();
            if paths
                .iter()
                .any(|p| p.starts_with(&segs) || segs.starts_with(p))
            {
                return Err(ModelError::InvalidSchema(format!(
                    "target {} overlaps another field",
                    f.target
                )));
            }
            paths.push(segs);
        }
        Ok(TargetSchema { fields })
    }

    pub fn fields(&self) -> &[TargetField] {
        &self.fields
    }
}

fn lookup<'r>(
    record: &'r NormalizedRecord,
    pattern: &EntityPattern,
    attribute: &str,
    request_id: Option<&str>,
) -> Result<Option<&'r AttributeValue>, ModelError> {
    let empty = Value::Null;
    match pattern {
        EntityPattern::Exact(t) => {
            let Some(entity) = t.render(&empty, request_id) else {
                return Ok(None);
            };
            Ok(record.get(&entity, attribute))
        }
        EntityPattern::AnyUnder(t) => {
            let Some(prefix) = t.render(&empty, request_id) else {
                return Ok(None);
            };
            let hits = record.entities_under(&prefix, attribute);
            if hits.len() > 1 {
                return Err(ModelError::AmbiguousEntity {
                    pattern: pattern.to_string(),
                    attribute: attribute.to_string(),
                });
            }
            Ok(hits.first().map(|(_, v)| *v))
        }
    }
}

/// Renders `record` into the target system's payload shape.
pub fn project(
    record: &NormalizedRecord,
    schema: &TargetSchema,
    request_id: Option<&str>,
) -> Result<Value, ModelError> {
    let mut root = Map::new();
    for field in &schema.fields {
        let Some(value) = lookup(record, &field.entity, &field.attribute, request_id)? else {
            if field.required {
                return Err(ModelError::MissingAttribute {
                    entity: field.entity.to_string(),
                    attribute: field.attribute.clone(),
                });
            }
            continue;
        };
        let keys: Vec<&str> = field
            .target
            .segments()
            .iter()
            .map(|s| match s {
                PathSegment::Key(k) => k.as_str(),
                PathSegment::Index(_) => unreachable!("schema targets are key-only"),
            })
            .collect();
        let (last, parents) = keys.split_last().expect("paths are non-empty");
        let mut node = &mut root;
        for k in parents {
            node = node
                .entry(k.to_string())
                .or_insert_with(|| Value::Object(Map::new()))
                .as_object_mut()
                .expect("prefix-free targets only create objects");
        }
        node.insert(last.to_string(), value.to_json());
    }
    Ok(Value::Object(root))
}
