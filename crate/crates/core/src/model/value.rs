//! Typed attribute values stored in the normalized model.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::ModelError;

/// Milliseconds since the Unix epoch, UTC.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct Timestamp(pub i64);

impl Timestamp {
    pub fn millis(self) -> i64 {
        self.0
    }

    pub fn saturating_add(self, millis: u64) -> Timestamp {
        Timestamp(self.0.saturating_add(millis.min(i64::MAX as u64) as i64))
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Fixed-point decimal with exactly four fractional digits.
///
/// Stored as an integer count of ten-thousandths, so sums and equality
/// checks are exact.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Decimal4(i64);

impl Decimal4 {
    pub const SCALE: i64 = 10_000;
    pub const ZERO: Decimal4 = Decimal4(0);
    pub const ONE: Decimal4 = Decimal4(Self::SCALE);

    pub const fn from_scaled(units: i64) -> Self {
        Decimal4(units)
    }

    pub fn from_int(v: i64) -> Option<Self> {
        v.checked_mul(Self::SCALE).map(Decimal4)
    }

    pub const fn scaled(self) -> i64 {
        self.0
    }

    /// `numerator / denominator` rounded half away from zero to four places.
    pub fn ratio(numerator: i128, denominator: i128) -> Option<Self> {
        if denominator == 0 {
            return None;
        }
        let scaled = numerator.checked_mul(Self::SCALE as i128)?;
        let (q, r) = (scaled / denominator, scaled % denominator);
        let twice = r.unsigned_abs() * 2;
        let negative = (scaled < 0) != (denominator < 0);
        let q = if twice >= denominator.unsigned_abs() {
            if negative {
                q - 1
            } else {
                q + 1
            }
        } else {
            q
        };
        i64::try_from(q).ok().map(Decimal4)
    }

    /// Converts a JSON number, going through its shortest decimal rendering.
    pub fn from_json_number(n: &serde_json::Number) -> Option<Self> {
        if let Some(i) = n.as_i64() {
            return Self::from_int(i);
        }
        if let Some(u) = n.as_u64() {
            return i64::try_from(u).ok().and_then(Self::from_int);
        }
        n.as_f64()
            .filter(|f| f.is_finite())
            .and_then(|f| f.to_string().parse().ok())
    }
}

impl FromStr for Decimal4 {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || ModelError::InvalidDecimal(s.to_string());
        let (negative, body) = match s.strip_prefix('-') {
            Some(rest) => (true, rest),
            None => (false, s.strip_prefix('+').unwrap_or(s)),
        };
        let (int_part, frac_part) = match body.split_once('.') {
            Some((i, f)) => (i, f),
            None => (body, ""),
        };
        if int_part.is_empty() && frac_part.is_empty() {
            return Err(bad());
        }
        if !int_part.bytes().all(|b| b.is_ascii_digit())
            || !frac_part.bytes().all(|b| b.is_ascii_digit())
        {
            return Err(bad());
        }
        let frac_trimmed = frac_part.trim_end_matches('0');
        if frac_trimmed.len() > 4 {
            return Err(bad());
        }
        let mut units: i64 = 0;
        for b in int_part.bytes() {
            units = units
                .checked_mul(10)
                .and_then(|u| u.checked_add((b - b'0') as i64))
                .ok_or_else(bad)?;
        }
        units = units.checked_mul(Decimal4::SCALE).ok_or_else(bad)?;
        let mut frac: i64 = 0;
        for (i, b) in frac_trimmed.bytes().enumerate() {
            frac += (b - b'0') as i64 * 10_i64.pow(3 - i as u32);
        }
        units = units.checked_add(frac).ok_or_else(bad)?;
        Ok(Decimal4(if negative { -units } else { units }))
    }
}

impl fmt::Display for Decimal4 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sign = if self.0 < 0 { "-" } else { "" };
        let abs = self.0.unsigned_abs();
        let scale = Decimal4::SCALE as u64;
        write!(f, "{sign}{}.{:04}", abs / scale, abs % scale)
    }
}

impl Serialize for Decimal4 {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Decimal4 {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Declared type of a normalized attribute.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ValueType {
    Text,
    Integer,
    Decimal,
    Boolean,
    Timestamp,
}

impl ValueType {
    pub fn as_str(self) -> &'static str {
        match self {
            ValueType::Text => "text",
            ValueType::Integer => "integer",
            ValueType::Decimal => "decimal",
            ValueType::Boolean => "boolean",
            ValueType::Timestamp => "timestamp",
        }
    }
}

/// A single typed value bound to an (entity, attribute) key.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum AttributeValue {
    Text(String),
    Integer(i64),
    Decimal(Decimal4),
    Boolean(bool),
    Timestamp(Timestamp),
}

impl AttributeValue {
    pub fn value_type(&self) -> ValueType {
        match self {
            AttributeValue::Text(_) => ValueType::Text,
            AttributeValue::Integer(_) => ValueType::Integer,
            AttributeValue::Decimal(_) => ValueType::Decimal,
            AttributeValue::Boolean(_) => ValueType::Boolean,
            AttributeValue::Timestamp(_) => ValueType::Timestamp,
        }
    }

    /// Coerces a JSON leaf into the declared type. `None` means not coercible.
    pub fn coerce(json: &serde_json::Value, ty: ValueType) -> Option<AttributeValue> {
        use serde_json::Value as J;
        match (ty, json) {
            (ValueType::Text, J::String(s)) => Some(AttributeValue::Text(s.clone())),
            (ValueType::Integer, J::Number(n)) => {
                integer_from_number(n).map(AttributeValue::Integer)
            }
            (ValueType::Integer, J::String(s)) => {
                s.trim().parse().ok().map(AttributeValue::Integer)
            }
            (ValueType::Decimal, J::Number(n)) => {
                Decimal4::from_json_number(n).map(AttributeValue::Decimal)
            }
            (ValueType::Decimal, J::String(s)) => {
                s.trim().parse().ok().map(AttributeValue::Decimal)
            }
            (ValueType::Boolean, J::Bool(b)) => Some(AttributeValue::Boolean(*b)),
            (ValueType::Timestamp, J::Number(n)) => {
                integer_from_number(n).map(|ms| AttributeValue::Timestamp(Timestamp(ms)))
            }
            (ValueType::Timestamp, J::String(s)) => s
                .trim()
                .parse()
                .ok()
                .map(|ms| AttributeValue::Timestamp(Timestamp(ms))),
            _ => None,
        }
    }

    /// Renders the value as a JSON leaf for a target system payload.
    pub fn to_json(&self) -> serde_json::Value {
        match self {
            AttributeValue::Text(s) => serde_json::Value::String(s.clone()),
            AttributeValue::Integer(i) => serde_json::Value::from(*i),
            AttributeValue::Decimal(d) => serde_json::Value::String(d.to_string()),
            AttributeValue::Boolean(b) => serde_json::Value::Bool(*b),
            AttributeValue::Timestamp(t) => serde_json::Value::from(t.0),
        }
    }

    fn tag(&self) -> &'static str {
        match self {
            AttributeValue::Text(_) => "text",
            AttributeValue::Integer(_) => "int",
            AttributeValue::Decimal(_) => "dec",
            AttributeValue::Boolean(_) => "bool",
            AttributeValue::Timestamp(_) => "ts",
        }
    }
}

impl fmt::Display for AttributeValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AttributeValue::Text(s) => f.write_str(s),
            AttributeValue::Integer(i) => write!(f, "{i}"),
            AttributeValue::Decimal(d) => write!(f, "{d}"),
            AttributeValue::Boolean(b) => write!(f, "{b}"),
            AttributeValue::Timestamp(t) => write!(f, "{t}"),
        }
    }
}

fn integer_from_number(n: &serde_json::Number) -> Option<i64> {
    if let Some(i) = n.as_i64() {
        return Some(i);
    }
    let f = n.as_f64()?;
    if f.fract() == 0.0 && f >= i64::MIN as f64 && f < i64::MAX as f64 {
        Some(f as i64)
    } else {
        None
    }
}

// Canonical tagged form: {"t":"int","v":5}
impl Serialize for AttributeValue {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        use serde::ser::SerializeStruct;
        let mut st = serializer.serialize_struct("AttributeValue", 2)?;
        st.serialize_field("t", self.tag())?;
        match self {
            AttributeValue::Text(s) => st.serialize_field("v", s)?,
            AttributeValue::Integer(i) => st.serialize_field("v", i)?,
            AttributeValue::Decimal(d) => st.serialize_field("v", d)?,
            AttributeValue::Boolean(b) => st.serialize_field("v", b)?,
            AttributeValue::Timestamp(t) => st.serialize_field("v", &t.0)?,
        }
        st.end()
    }
}

impl<'de> Deserialize<'de> for AttributeValue {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        use serde::de::Error;

        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct Tagged {
            t: String,
            v: serde_json::Value,
        }

        let Tagged { t, v } = Tagged::deserialize(deserializer)?;
        let mismatch = || D::Error::custom(format!("value {v} does not match tag {t:?}"));
        match t.as_str() {
            "text" => v
                .as_str()
                .map(|s| AttributeValue::Text(s.to_string()))
                .ok_or_else(mismatch),
            "int" => v.as_i64().map(AttributeValue::Integer).ok_or_else(mismatch),
            "dec" => v
                .as_str()
                .and_then(|s| s.parse().ok())
                .map(AttributeValue::Decimal)
                .ok_or_else(mismatch),
            "bool" => v
                .as_bool()
                .map(AttributeValue::Boolean)
                .ok_or_else(mismatch),
            "ts" => v
                .as_i64()
                .map(|ms| AttributeValue::Timestamp(Timestamp(ms)))
                .ok_or_else(mismatch),
            other => Err(D::Error::custom(format!("unknown value tag {other:?}"))),
        }
    }
}
