use std::cmp::Ordering;

use super::ast::{Comparison, Literal, Predicate};
use crate::model::{
    AttributeValue, Decimal4, NormalizedRecord, RequestKind, RequestSource, SourceKind,
};

/// What a predicate is evaluated against. Kind and source are optional so
/// the same language can match on payloads that carry no request context.
#[derive(Debug, Clone, Copy)]
pub struct EvalContext<'a> {
    pub kind: Option<RequestKind>,
    pub source: Option<SourceKind>,
    pub record: &'a NormalizedRecord,
}

/// Total and pure: a missing or incomparable attribute makes a comparison false.
pub fn evaluate_predicate(
    p: &Predicate,
    kind: RequestKind,
    source: &RequestSource,
    record: &NormalizedRecord,
) -> bool {
    evaluate_in(
        p,
        &EvalContext {
            kind: Some(kind),
            source: Some(source.kind),
            record,
        },
    )
}

pub fn evaluate_in(p: &Predicate, ctx: &EvalContext<'_>) -> bool {
    match p {
        Predicate::Kind(k) => ctx.kind == Some(*k),
        Predicate::Source(s) => ctx.source == Some(*s),
        Predicate::Exists { entity, attribute } => ctx.record.get(entity, attribute).is_some(),
        Predicate::Compare {
            entity,
            attribute,
            cmp,
            literal,
        } => ctx
            .record
            .get(entity, attribute)
            .and_then(|v| compare(v, literal))
            .is_some_and(|ord| holds(*cmp, ord)),
        Predicate::Not(inner) => !evaluate_in(inner, ctx),
        Predicate::And(l, r) => evaluate_in(l, ctx) && evaluate_in(r, ctx),
        Predicate::Or(l, r) => evaluate_in(l, ctx) || evaluate_in(r, ctx),
    }
}

fn holds(cmp: Comparison, ord: Ordering) -> bool {
    match cmp {
        Comparison::Eq => ord == Ordering::Equal,
        Comparison::Ne => ord != Ordering::Equal,
        Comparison::Lt => ord == Ordering::Less,
        Comparison::Le => ord != Ordering::Greater,
        Comparison::Gt => ord == Ordering::Greater,
        Comparison::Ge => ord != Ordering::Less,
    }
}

/// Ordering of a stored value against a literal, `None` when the types do
/// not compare. Integers and decimals compare numerically; timestamps
/// compare against integer milliseconds.
pub fn compare(value: &AttributeValue, literal: &Literal) -> Option<Ordering> {
    match (value, literal) {
        (AttributeValue::Text(a), Literal::Text(b)) => Some(a.as_str().cmp(b.as_str())),
        (AttributeValue::Integer(a), Literal::Integer(b)) => Some(a.cmp(b)),
        (AttributeValue::Integer(a), Literal::Decimal(b)) => {
            Decimal4::from_int(*a).map(|a| a.cmp(b))
        }
        (AttributeValue::Decimal(a), Literal::Decimal(b)) => Some(a.cmp(b)),
        (AttributeValue::Decimal(a), Literal::Integer(b)) => {
            Decimal4::from_int(*b).map(|b| a.cmp(&b))
        }
        (AttributeValue::Boolean(a), Literal::Boolean(b)) => Some(a.cmp(b)),
        (AttributeValue::Timestamp(a), Literal::Integer(b)) => Some(a.millis().cmp(b)),
        _ => None,
    }
}
