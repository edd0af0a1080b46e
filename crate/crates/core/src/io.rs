//! Market instances as JSON.
//!
//! ```json
//! {"items":["s1","s2"],"buyers":[{"id":"t1","demand":1,"values":{"s1":"3","s2":"5/2"}}]}
//! ```
//!
//! Values are decimal strings `"n"` or `"p/q"`; every buyer lists a value for
//! every item. Errors carry the JSON path of the offending field.

use std::collections::BTreeSet;

use serde::ser::{SerializeMap, SerializeSeq, SerializeStruct};
use serde::{Serialize, Serializer};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::model::{BuyerId, BuyerSpec, ItemId, Market, ModelError};
use crate::rational::{ParseRationalError, Rational};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum IoErrorKind {
    #[error("input is not valid UTF-8")]
    Utf8,
    #[error("invalid JSON: {0}")]
    Json(String),
    #[error("expected {0}")]
    Type(&'static str),
    #[error("missing field")]
    MissingField,
    #[error("unknown field")]
    UnknownField,
    #[error("malformed rational `{text}`: {reason}")]
    MalformedRational {
        text: String,
        reason: ParseRationalError,
    },
    #[error("missing value for item `{0}`")]
    MissingValue(ItemId),
    #[error("value for unknown item")]
    UnknownItem,
    #[error("demand must be a positive integer")]
    BadDemand,
    #[error(transparent)]
    Model(ModelError),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{path}: {kind}")]
pub struct IoError {
    pub path: String,
    pub kind: IoErrorKind,
}

fn err(path: impl Into<String>, kind: IoErrorKind) -> IoError {
    IoError {
        path: path.into(),
        kind,
    }
}

fn object<'v>(
    v: &'v Value,
    path: &str,
    allowed: &[&str],
) -> Result<&'v Map<String, Value>, IoError> {
    let obj = v
        .as_object()
        .ok_or_else(|| err(path, IoErrorKind::Type("an object")))?;
    if let Some(k) = obj.keys().find(|k| !allowed.contains(&k.as_str())) {
        return Err(err(format!("{path}.{k}"), IoErrorKind::UnknownField));
    }
    Ok(obj)
}

fn field<'v>(obj: &'v Map<String, Value>, path: &str, name: &str) -> Result<&'v Value, IoError> {
    obj.get(name)
        .ok_or_else(|| err(format!("{path}.{name}"), IoErrorKind::MissingField))
}

fn string<'v>(v: &'v Value, path: &str) -> Result<&'v str, IoError> {
    v.as_str()
        .ok_or_else(|| err(path, IoErrorKind::Type("a string")))
}

fn array<'v>(v: &'v Value, path: &str) -> Result<&'v Vec<Value>, IoError> {
    v.as_array()
        .ok_or_else(|| err(path, IoErrorKind::Type("an array")))
}

fn rational(v: &Value, path: &str) -> Result<Rational, IoError> {
    let text = match v {
        Value::String(s) => s.clone(),
        Value::Number(n) if n.is_i64() || n.is_u64() => n.to_string(),
        _ => return Err(err(path, IoErrorKind::Type("a rational string"))),
    };
    text.parse()
        .map_err(|reason| err(path, IoErrorKind::MalformedRational { text, reason }))
}

/// Parses and validates a market.
pub fn parse_instance(bytes: &[u8]) -> Result<Market, IoError> {
    let text = std::str::from_utf8(bytes).map_err(|_| err("$", IoErrorKind::Utf8))?;
    let root: Value =
        serde_json::from_str(text).map_err(|e| err("$", IoErrorKind::Json(e.to_string())))?;
    let top = object(&root, "$", &["items", "buyers"])?;

    let mut items = Vec::new();
    let mut seen = BTreeSet::new();
    for (i, v) in array(field(top, "$", "items")?, "$.items")?
        .iter()
        .enumerate()
    {
        let path = format!("$.items[{i}]");
        let id = ItemId::new(string(v, &path)?);
        if !seen.insert(id.clone()) {
            return Err(err(path, IoErrorKind::Model(ModelError::DuplicateItem(id))));
        }
        items.push(id);
    }

    let mut buyers = Vec::new();
    let mut seen = BTreeSet::new();
    for (j, v) in array(field(top, "$", "buyers")?, "$.buyers")?
        .iter()
        .enumerate()
    {
        let path = format!("$.buyers[{j}]");
        let obj = object(v, &path, &["id", "demand", "values"])?;
        let id = BuyerId::new(string(field(obj, &path, "id")?, &format!("{path}.id"))?);
        if !seen.insert(id.clone()) {
            return Err(err(
                format!("{path}.id"),
                IoErrorKind::Model(ModelError::DuplicateBuyer(id)),
            ));
        }
        let demand = field(obj, &path, "demand")?
            .as_u64()
            .and_then(|d| u32::try_from(d).ok())
            .filter(|&d| d > 0)
            .ok_or_else(|| err(format!("{path}.demand"), IoErrorKind::BadDemand))?;
        let vpath = format!("{path}.values");
        let vals = field(obj, &path, "values")?
            .as_object()
            .ok_or_else(|| err(&vpath, IoErrorKind::Type("an object")))?;
        if let Some(k) = vals.keys().find(|k| !items.iter().any(|s| s.0 == **k)) {
            return Err(err(format!("{vpath}.{k}"), IoErrorKind::UnknownItem));
        }
        let mut values = Vec::with_capacity(items.len());
        for s in &items {
            let v = vals
                .get(&s.0)
                .ok_or_else(|| err(&vpath, IoErrorKind::MissingValue(s.clone())))?;
            let value = rational(v, &format!("{vpath}.{s}"))?;
            if value.is_negative() {
                return Err(err(
                    format!("{vpath}.{s}"),
                    IoErrorKind::Model(ModelError::NegativeValue {
                        buyer: id.clone(),
                        item: s.clone(),
                        value,
                    }),
                ));
            }
            values.push(value);
        }
        buyers.push(BuyerSpec { id, demand, values });
    }
    Market::new(items, buyers).map_err(|e| err("$", IoErrorKind::Model(e)))
}

/// Serialization view of a market that keeps values in item order.
pub struct MarketJson<'a>(pub &'a Market);

struct BuyerJson<'a>(&'a Market, usize);

struct ValuesJson<'a>(&'a Market, usize);

struct BuyersJson<'a>(&'a Market);

impl Serialize for MarketJson<'_> {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let mut st = serializer.serialize_struct("Market", 2)?;
        st.serialize_field("items", self.0.items())?;
        st.serialize_field("buyers", &BuyersJson(self.0))?;
        st.end()
    }
}

impl Serialize for BuyersJson<'_> {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let mut seq = serializer.serialize_seq(Some(self.0.n_buyers()))?;
        for t in 0..self.0.n_buyers() {
            seq.serialize_element(&BuyerJson(self.0, t))?;
        }
        seq.end()
    }
}

impl Serialize for BuyerJson<'_> {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let mut st = serializer.serialize_struct("Buyer", 3)?;
        st.serialize_field("id", &self.0.buyers()[self.1])?;
        st.serialize_field("demand", &self.0.demand(self.1))?;
        st.serialize_field("values", &ValuesJson(self.0, self.1))?;
        st.end()
    }
}

impl Serialize for ValuesJson<'_> {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let mut map = serializer.serialize_map(Some(self.0.n_items()))?;
        for (s, v) in self.0.items().iter().zip(self.0.values_of(self.1)) {
            map.serialize_entry(s, v)?;
        }
        map.end()
    }
}

/// Compact JSON for a market.
pub fn serialize_instance(m: &Market) -> String {
    serde_json::to_string(&MarketJson(m)).expect("market serialization cannot fail")
}
