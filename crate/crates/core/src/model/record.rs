//! The normalized record: unique (entity, attribute) bindings.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::value::AttributeValue;
use super::ModelError;

/// Characters never allowed in an entity id or attribute name.
///
/// `.` and `[`/`]` belong to payload-path syntax, `{`/`}`/`*` to templates.
const RESERVED: &[char] = &['.', '[', ']', '{', '}', '*'];

/// Identifies one point of the data model.
///
/// Entity ids are `/`-separated (`customer/C1`); attribute names are flat.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct AttrKey {
    pub entity: String,
    pub attribute: String,
}

impl AttrKey {
    pub fn new(entity: impl Into<String>, attribute: impl Into<String>) -> Self {
        AttrKey {
            entity: entity.into(),
            attribute: attribute.into(),
        }
    }

    /// Canonical `entity/attribute` form used as the serialized key.
    pub fn joined(&self) -> String {
        format!("{}/{}", self.entity, self.attribute)
    }

    /// Splits a canonical key at its last `/`.
    pub fn from_joined(s: &str) -> Option<AttrKey> {
        let (entity, attribute) = s.rsplit_once('/')?;
        Some(AttrKey::new(entity, attribute))
    }

    pub fn violations(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        if self.entity.is_empty() {
            out.push(Violation::new(self, ViolationRule::EmptyEntityId));
        } else if let Some(c) = illegal_entity_char(&self.entity) {
            out.push(Violation::new(self, ViolationRule::IllegalCharacter(c)));
        }
        if self.attribute.is_empty() {
            out.push(Violation::new(self, ViolationRule::EmptyAttributeName));
        } else if let Some(c) = illegal_attribute_char(&self.attribute) {
            out.push(Violation::new(self, ViolationRule::IllegalCharacter(c)));
        }
        out
    }

    pub fn is_valid(&self) -> bool {
        self.violations().is_empty()
    }
}

impl fmt::Display for AttrKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.entity, self.attribute)
    }
}

fn is_bad_char(c: char) -> bool {
    c.is_whitespace() || c.is_control() || RESERVED.contains(&c)
}

fn illegal_entity_char(entity: &str) -> Option<char> {
    if let Some(c) = entity.chars().find(|c| is_bad_char(*c)) {
        return Some(c);
    }
    // `/` only as an interior segment separator
    if entity.starts_with('/') || entity.ends_with('/') || entity.contains("//") {
        return Some('/');
    }
    None
}

fn illegal_attribute_char(attribute: &str) -> Option<char> {
    attribute.chars().find(|c| *c == '/' || is_bad_char(*c))
}

/// Which record invariant a key breaks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ViolationRule {
    EmptyEntityId,
    EmptyAttributeName,
    IllegalCharacter(char),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub key: AttrKey,
    pub rule: ViolationRule,
}

impl Violation {
    fn new(key: &AttrKey, rule: ViolationRule) -> Self {
        Violation {
            key: key.clone(),
            rule,
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.rule {
            ViolationRule::EmptyEntityId => write!(f, "EmptyEntityId at {}", self.key),
            ViolationRule::EmptyAttributeName => write!(f, "EmptyAttributeName at {}", self.key),
            ViolationRule::IllegalCharacter(c) => {
                write!(f, "IllegalCharacter {c:?} at {}", self.key)
            }
        }
    }
}

/// How `merge_attributes` resolves a key present on both sides with different values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum MergePolicy {
    RejectConflict,
    DeltaWins,
}

/// The single common data model: each (entity, attribute) key bound at most once.
///
/// Iteration follows `(entity, attribute)` order. The canonical JSON form is
/// an object keyed by `entity/attribute`, sorted as strings.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct NormalizedRecord {
    bindings: BTreeMap<AttrKey, AttributeValue>,
}

impl NormalizedRecord {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.bindings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bindings.is_empty()
    }

    pub fn get(&self, entity: &str, attribute: &str) -> Option<&AttributeValue> {
        // BTreeMap lookup needs an owned key; records are small
        self.bindings.get(&AttrKey::new(entity, attribute))
    }

    pub fn get_key(&self, key: &AttrKey) -> Option<&AttributeValue> {
        self.bindings.get(key)
    }

    pub fn contains(&self, key: &AttrKey) -> bool {
        self.bindings.contains_key(key)
    }

    /// Adds a binding; a key that is already bound is a `DuplicateAttribute`
    /// even if the value is equal.
    pub fn insert(&mut self, key: AttrKey, value: AttributeValue) -> Result<(), ModelError> {
        use std::collections::btree_map::Entry;
        match self.bindings.entry(key) {
            Entry::Occupied(e) => Err(ModelError::DuplicateAttribute {
                entity: e.key().entity.clone(),
                attribute: e.key().attribute.clone(),
            }),
            Entry::Vacant(e) => {
                e.insert(value);
                Ok(())
            }
        }
    }

    /// Builder-style insert that overwrites.
    pub fn with(mut self, entity: &str, attribute: &str, value: AttributeValue) -> Self {
        self.bindings.insert(AttrKey::new(entity, attribute), value);
        self
    }

    pub fn set(&mut self, key: AttrKey, value: AttributeValue) -> Option<AttributeValue> {
        self.bindings.insert(key, value)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&AttrKey, &AttributeValue)> {
        self.bindings.iter()
    }

    pub fn keys(&self) -> impl Iterator<Item = &AttrKey> {
        self.bindings.keys()
    }

    /// Entities whose id is `prefix/<rest>` and which bind `attribute`.
    pub fn entities_under<'a>(
        &'a self,
        prefix: &str,
        attribute: &str,
    ) -> Vec<(&'a AttrKey, &'a AttributeValue)> {
        self.bindings
            .iter()
            .filter(|(k, _)| {
                k.attribute == attribute
                    && k.entity.len() > prefix.len() + 1
                    && k.entity.starts_with(prefix)
                    && k.entity.as_bytes()[prefix.len()] == b'/'
            })
            .collect()
    }
}

impl FromIterator<(AttrKey, AttributeValue)> for NormalizedRecord {
    /// Later duplicates overwrite earlier ones.
    fn from_iter<I: IntoIterator<Item = (AttrKey, AttributeValue)>>(iter: I) -> Self {
        NormalizedRecord {
            bindings: iter.into_iter().collect(),
        }
    }
}

/// Lists every broken key invariant; empty means the record is well-formed.
pub fn validate_record(record: &NormalizedRecord) -> Vec<Violation> {
    record.keys().flat_map(AttrKey::violations).collect()
}

/// Unions two records under `policy`. Equal values on the same key never conflict.
pub fn merge_attributes(
    base: &NormalizedRecord,
    delta: &NormalizedRecord,
    policy: MergePolicy,
) -> Result<NormalizedRecord, ModelError> {
    let mut out = base.clone();
    for (key, value) in delta.iter() {
        match out.bindings.get(key) {
            Some(existing) if existing == value => {}
            Some(existing) if policy == MergePolicy::RejectConflict => {
                return Err(ModelError::AttributeConflict {
                    entity: key.entity.clone(),
                    attribute: key.attribute.clone(),
                    existing: existing.to_string(),
                    incoming: value.to_string(),
                });
            }
            _ => {
                out.bindings.insert(key.clone(), value.clone());
            }
        }
    }
    Ok(out)
}

impl Serialize for NormalizedRecord {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        use serde::ser::SerializeMap;
        let mut entries: Vec<(String, &AttributeValue)> =
            self.bindings.iter().map(|(k, v)| (k.joined(), v)).collect();
        entries.sort_by(|a, b| a.0.cmp(&b.0));
        let mut map = serializer.serialize_map(Some(entries.len()))?;
        for (k, v) in entries {
            map.serialize_entry(&k, v)?;
        }
        map.end()
    }
}

impl<'de> Deserialize<'de> for NormalizedRecord {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct RecordVisitor;

        impl<'de> serde::de::Visitor<'de> for RecordVisitor {
            type Value = NormalizedRecord;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("an object keyed by entity/attribute")
            }

            fn visit_map<A: serde::de::MapAccess<'de>>(
                self,
                mut access: A,
            ) -> Result<Self::Value, A::Error> {
                use serde::de::Error;
                let mut record = NormalizedRecord::new();
                while let Some((joined, value)) = access.next_entry::<String, AttributeValue>()? {
                    let key = AttrKey::from_joined(&joined).ok_or_else(|| {
                        A::Error::custom(format!(
                            "key {joined:?} has no entity/attribute separator"
                        ))
                    })?;
                    record.insert(key, value).map_err(A::Error::custom)?;
                }
                Ok(record)
            }
        }

        deserializer.deserialize_map(RecordVisitor)
    }
}
