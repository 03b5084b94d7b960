//! The normalized common data model and request lifecycle types.
//!
//! Every module above this one works on [`NormalizedRecord`]s: a payload is
//! converted into the record once at the receiver, flows through the core and
//! adapters, and is projected out again only at an adapter boundary.

mod mapping;
mod record;
mod request;
mod value;

use thiserror::Error;

pub use mapping::{
    normalize, normalize_value, project, EntityPattern, MappingEntry, MappingSpec, PathSegment,
    PayloadPath, TargetField, TargetSchema, Template,
};
pub use record::{
    merge_attributes, validate_record, AttrKey, MergePolicy, NormalizedRecord, Violation,
    ViolationRule,
};
pub use request::{Request, RequestId, RequestKind, RequestSource, RequestState, SourceKind};
pub use value::{AttributeValue, Decimal4, Timestamp, ValueType};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ModelError {
    #[error("payload unparsable: {0}")]
    PayloadUnparsable(String),

    #[error("required payload path {0} is absent")]
    MissingPath(String),

    #[error("attribute ({entity}, {attribute}) bound twice")]
    DuplicateAttribute { entity: String, attribute: String },

    #[error("value at {path} is not coercible to {}", expected.as_str())]
    TypeMismatch { path: String, expected: ValueType },

    #[error("conflicting values for ({entity}, {attribute}): {existing} vs {incoming}")]
    AttributeConflict {
        entity: String,
        attribute: String,
        existing: String,
        incoming: String,
    },

    #[error("required attribute ({entity}, {attribute}) missing from record")]
    MissingAttribute { entity: String, attribute: String },

    #[error("pattern {pattern} matches more than one entity carrying {attribute}")]
    AmbiguousEntity { pattern: String, attribute: String },

    #[error("invalid key: {0}")]
    InvalidKey(String),

    #[error("invalid payload path {0:?}")]
    InvalidPath(String),

    #[error("invalid entity template {0:?}")]
    InvalidTemplate(String),

    #[error("invalid mapping spec: {0}")]
    InvalidSpec(String),

    #[error("invalid target schema: {0}")]
    InvalidSchema(String),

    #[error("invalid decimal {0:?}")]
    InvalidDecimal(String),

    #[error("unknown request kind {0:?}")]
    UnknownKind(String),

    #[error("unknown request source {0:?}")]
    UnknownSource(String),

    #[error("unknown request state {0:?}")]
    UnknownState(String),

    #[error("request origin must be non-empty")]
    EmptyOrigin,

    #[error("illegal transition {from} -> {to}")]
    IllegalTransition {
        from: RequestState,
        to: RequestState,
    },

    #[error("state {0} requires a normalized record")]
    MissingRecord(RequestState),
}

impl ModelError {
    /// Stable machine-readable code used in traces and HTTP error bodies.
    pub fn code(&self) -> &'static str {
        match self {
            ModelError::PayloadUnparsable(_) => "PAYLOAD_UNPARSABLE",
            ModelError::MissingPath(_) => "MISSING_PATH",
            ModelError::DuplicateAttribute { .. } => "DUPLICATE_ATTRIBUTE",
            ModelError::TypeMismatch { .. } => "TYPE_MISMATCH",
            ModelError::AttributeConflict { .. } => "ATTRIBUTE_CONFLICT",
            ModelError::MissingAttribute { .. } => "MISSING_ATTRIBUTE",
            ModelError::AmbiguousEntity { .. } => "AMBIGUOUS_ENTITY",
            ModelError::InvalidKey(_) => "INVALID_KEY",
            ModelError::InvalidPath(_) => "INVALID_PATH",
            ModelError::InvalidTemplate(_) => "INVALID_TEMPLATE",
            ModelError::InvalidSpec(_) => "INVALID_SPEC",
            ModelError::InvalidSchema(_) => "INVALID_SCHEMA",
            ModelError::InvalidDecimal(_) => "INVALID_DECIMAL",
            ModelError::UnknownKind(_) => "UNKNOWN_KIND",
            ModelError::UnknownSource(_) => "UNKNOWN_SOURCE",
            ModelError::UnknownState(_) => "UNKNOWN_STATE",
            ModelError::EmptyOrigin => "EMPTY_ORIGIN",
            ModelError::IllegalTransition { .. } => "ILLEGAL_TRANSITION",
            ModelError::MissingRecord(_) => "MISSING_RECORD",
        }
    }
}
