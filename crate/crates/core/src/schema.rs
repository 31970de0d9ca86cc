//! The JSON Schema subset used by `get` and `discover` to accept or reject
//! objects.
//!
//! Supported keywords: `type`, `const`, `enum`, `required`, `properties`,
//! `additionalProperties` (boolean form), `items`, `minimum`, `maximum`,
//! `exclusiveMinimum`, `exclusiveMaximum`, `minLength`, `maxLength`,
//! `pattern`, `anyOf`, `allOf` and `not`, with 2020-12 semantics. Anything
//! else is rejected at compile time.
//!
//! A schema is evaluated against the whole object envelope. At the top level
//! only, envelope field names (`value`, `actor`, `channels`, ...) may be used
//! directly as shorthand for `properties` entries, so
//! `{"actor": {"const": "https://alice.example.com"}}` is a valid schema.

use std::collections::HashSet;
use std::fmt;

use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::model::GraffitiObject;

pub const ENVELOPE_FIELDS: [&str; 6] = ["value", "url", "actor", "channels", "allowed", "revision"];

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
#[serde(tag = "kind", content = "detail")]
pub enum SchemaError {
    #[error("unsupported schema keyword {0:?}")]
    UnsupportedKeyword(String),
    #[error("malformed schema: {0}")]
    MalformedSchema(String),
}

/// A schema document as it travels on the wire.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SchemaDoc(Value);

impl SchemaDoc {
    pub fn new(root: Value) -> Self {
        SchemaDoc(root)
    }

    /// The empty schema, matching every object.
    pub fn any() -> Self {
        SchemaDoc(Value::Object(Map::new()))
    }

    pub fn as_json(&self) -> &Value {
        &self.0
    }

    pub fn compile(&self) -> Result<CompiledMatcher, SchemaError> {
        compile_schema(self)
    }
}

impl Default for SchemaDoc {
    fn default() -> Self {
        SchemaDoc::any()
    }
}

impl From<Value> for SchemaDoc {
    fn from(v: Value) -> Self {
        SchemaDoc(v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum JsonType {
    Null,
    Boolean,
    Object,
    Array,
    Number,
    String,
    Integer,
}

impl JsonType {
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "null" => JsonType::Null,
            "boolean" => JsonType::Boolean,
            "object" => JsonType::Object,
            "array" => JsonType::Array,
            "number" => JsonType::Number,
            "string" => JsonType::String,
            "integer" => JsonType::Integer,
            _ => return None,
        })
    }

    fn admits(self, v: &Value) -> bool {
        match (self, v) {
            (JsonType::Null, Value::Null)
            | (JsonType::Boolean, Value::Bool(_))
            | (JsonType::Object, Value::Object(_))
            | (JsonType::Array, Value::Array(_))
            | (JsonType::Number, Value::Number(_))
            | (JsonType::String, Value::String(_)) => true,
            (JsonType::Integer, Value::Number(n)) => {
                n.is_i64() || n.is_u64() || n.as_f64().is_some_and(|f| f.fract() == 0.0)
            }
            _ => false,
        }
    }
}

#[derive(Debug, Clone)]
enum Keyword {
    Type(Vec<JsonType>),
    Const(Value),
    Enum(Vec<Value>),
    Required(Vec<String>),
    Properties(Vec<(String, Node)>),
    NoAdditionalProperties(HashSet<String>),
    Items(Box<Node>),
    Minimum(f64),
    Maximum(f64),
    ExclusiveMinimum(f64),
    ExclusiveMaximum(f64),
    MinLength(u64),
    MaxLength(u64),
    Pattern(Regex),
    AnyOf(Vec<Node>),
    AllOf(Vec<Node>),
    Not(Box<Node>),
}

#[derive(Debug, Clone)]
enum Node {
    Bool(bool),
    Keywords(Vec<Keyword>),
}

/// A compiled, immutable predicate over object envelopes.
#[derive(Clone)]
pub struct CompiledMatcher {
    root: Node,
}

impl fmt::Debug for CompiledMatcher {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CompiledMatcher").finish_non_exhaustive()
    }
}

pub fn compile_schema(doc: &SchemaDoc) -> Result<CompiledMatcher, SchemaError> {
    let Value::Object(root) = &doc.0 else {
        return Err(SchemaError::MalformedSchema("schema root must be an object".into()));
    };
    let mut keywords = Map::new();
    let mut shorthand = Vec::new();
    for (k, v) in root {
        if ENVELOPE_FIELDS.contains(&k.as_str()) {
            shorthand.push((k.clone(), compile_node(v)?));
        } else {
            keywords.insert(k.clone(), v.clone());
        }
    }
    let mut node = compile_object(&keywords)?;
    if !shorthand.is_empty() {
        let Node::Keywords(ks) = &mut node else { unreachable!() };
        for k in ks.iter_mut() {
            if let Keyword::NoAdditionalProperties(known) = k {
                known.extend(shorthand.iter().map(|(name, _)| name.clone()));
            }
        }
        ks.push(Keyword::Properties(shorthand));
    }
    Ok(CompiledMatcher { root: node })
}

fn compile_node(v: &Value) -> Result<Node, SchemaError> {
    match v {
        Value::Bool(b) => Ok(Node::Bool(*b)),
        Value::Object(m) => compile_object(m),
        other => Err(SchemaError::MalformedSchema(format!(
            "subschema must be an object or boolean, got {other}"
        ))),
    }
}

fn compile_object(m: &Map<String, Value>) -> Result<Node, SchemaError> {
    let malformed = |k: &str, what: &str| SchemaError::MalformedSchema(format!("{k} must be {what}"));
    let mut out = Vec::new();
    let known_properties: HashSet<String> = match m.get("properties") {
        Some(Value::Object(p)) => p.keys().cloned().collect(),
        _ => HashSet::new(),
    };
    for (k, v) in m {
        let kw = match k.as_str() {
            "type" => {
                let names: Vec<&Value> = match v {
                    Value::String(_) => vec![v],
                    Value::Array(a) if !a.is_empty() => a.iter().collect(),
                    _ => return Err(malformed(k, "a type name or non-empty array of them")),
                };
                let types = names
                    .into_iter()
                    .map(|n| n.as_str().and_then(JsonType::parse))
                    .collect::<Option<Vec<_>>>()
                    .ok_or_else(|| malformed(k, "a known JSON type"))?;
                Keyword::Type(types)
            }
            "const" => Keyword::Const(v.clone()),
            "enum" => Keyword::Enum(v.as_array().ok_or_else(|| malformed(k, "an array"))?.clone()),
            "required" => Keyword::Required(
                v.as_array()
                    .and_then(|a| a.iter().map(|s| s.as_str().map(String::from)).collect())
                    .ok_or_else(|| malformed(k, "an array of strings"))?,
            ),
            "properties" => {
                let props = v.as_object().ok_or_else(|| malformed(k, "an object"))?;
                Keyword::Properties(
                    props
                        .iter()
                        .map(|(name, s)| Ok((name.clone(), compile_node(s)?)))
                        .collect::<Result<_, SchemaError>>()?,
                )
            }
            "additionalProperties" => match v {
                Value::Bool(true) => continue,
                Value::Bool(false) => Keyword::NoAdditionalProperties(known_properties.clone()),
                _ => return Err(malformed(k, "a boolean")),
            },
            "items" => match v {
                Value::Array(_) => return Err(malformed(k, "a single schema (tuple form is unsupported)")),
                _ => Keyword::Items(Box::new(compile_node(v)?)),
            },
            "minimum" => Keyword::Minimum(number(k, v)?),
            "maximum" => Keyword::Maximum(number(k, v)?),
            "exclusiveMinimum" => Keyword::ExclusiveMinimum(number(k, v)?),
            "exclusiveMaximum" => Keyword::ExclusiveMaximum(number(k, v)?),
            "minLength" => Keyword::MinLength(v.as_u64().ok_or_else(|| malformed(k, "a non-negative integer"))?),
            "maxLength" => Keyword::MaxLength(v.as_u64().ok_or_else(|| malformed(k, "a non-negative integer"))?),
            "pattern" => {
                let src = v.as_str().ok_or_else(|| malformed(k, "a string"))?;
                Keyword::Pattern(
                    Regex::new(src).map_err(|e| SchemaError::MalformedSchema(format!("pattern: {e}")))?,
                )
            }
            "anyOf" | "allOf" => {
                let subs = v
                    .as_array()
                    .filter(|a| !a.is_empty())
                    .ok_or_else(|| malformed(k, "a non-empty array"))?
                    .iter()
                    .map(compile_node)
                    .collect::<Result<Vec<_>, _>>()?;
                if k == "anyOf" {
                    Keyword::AnyOf(subs)
                } else {
                    Keyword::AllOf(subs)
                }
            }
            "not" => Keyword::Not(Box::new(compile_node(v)?)),
            other => return Err(SchemaError::UnsupportedKeyword(other.to_string())),
        };
        out.push(kw);
    }
    Ok(Node::Keywords(out))
}

fn number(k: &str, v: &Value) -> Result<f64, SchemaError> {
    v.as_f64()
        .ok_or_else(|| SchemaError::MalformedSchema(format!("{k} must be a number")))
}

impl CompiledMatcher {
    /// A matcher that accepts everything.
    pub fn any() -> Self {
        CompiledMatcher { root: Node::Bool(true) }
    }

    pub fn matches(&self, object: &GraffitiObject) -> bool {
        self.matches_json(&object.to_json())
    }

    pub fn matches_json(&self, instance: &Value) -> bool {
        eval(&self.root, instance)
    }
}

pub fn matches(matcher: &CompiledMatcher, object: &GraffitiObject) -> bool {
    matcher.matches(object)
}

fn eval(node: &Node, v: &Value) -> bool {
    match node {
        Node::Bool(b) => *b,
        Node::Keywords(ks) => ks.iter().all(|k| eval_keyword(k, v)),
    }
}

fn eval_keyword(k: &Keyword, v: &Value) -> bool {
    match k {
        Keyword::Type(ts) => ts.iter().any(|t| t.admits(v)),
        Keyword::Const(c) => json_eq(c, v),
        Keyword::Enum(options) => options.iter().any(|c| json_eq(c, v)),
        Keyword::Required(names) => match v {
            Value::Object(m) => names.iter().all(|n| m.contains_key(n)),
            _ => true,
        },
        Keyword::Properties(props) => match v {
            Value::Object(m) => props
                .iter()
                .all(|(name, s)| m.get(name).is_none_or(|pv| eval(s, pv))),
            _ => true,
        },
        Keyword::NoAdditionalProperties(known) => match v {
            Value::Object(m) => m.keys().all(|key| known.contains(key)),
            _ => true,
        },
        Keyword::Items(s) => match v {
            Value::Array(a) => a.iter().all(|item| eval(s, item)),
            _ => true,
        },
        Keyword::Minimum(x) => v.as_f64().is_none_or(|n| n >= *x),
        Keyword::Maximum(x) => v.as_f64().is_none_or(|n| n <= *x),
        Keyword::ExclusiveMinimum(x) => v.as_f64().is_none_or(|n| n > *x),
        Keyword::ExclusiveMaximum(x) => v.as_f64().is_none_or(|n| n < *x),
        Keyword::MinLength(n) => v.as_str().is_none_or(|s| s.chars().count() as u64 >= *n),
        Keyword::MaxLength(n) => v.as_str().is_none_or(|s| s.chars().count() as u64 <= *n),
        Keyword::Pattern(re) => v.as_str().is_none_or(|s| re.is_match(s)),
        Keyword::AnyOf(subs) => subs.iter().any(|s| eval(s, v)),
        Keyword::AllOf(subs) => subs.iter().all(|s| eval(s, v)),
        Keyword::Not(s) => !eval(s, v),
    }
}

/// JSON equality where numbers compare by mathematical value (`1 == 1.0`).
fn json_eq(a: &Value, b: &Value) -> bool {
    match (a, b) {
        (Value::Number(x), Value::Number(y)) => {
            if let (Some(x), Some(y)) = (x.as_i64(), y.as_i64()) {
                x == y
            } else if let (Some(x), Some(y)) = (x.as_u64(), y.as_u64()) {
                x == y
            } else {
                x.as_f64() == y.as_f64()
            }
        }
        (Value::Array(x), Value::Array(y)) => {
            x.len() == y.len() && x.iter().zip(y).all(|(a, b)| json_eq(a, b))
        }
        (Value::Object(x), Value::Object(y)) => {
            x.len() == y.len() && x.iter().all(|(k, a)| y.get(k).is_some_and(|b| json_eq(a, b)))
        }
        _ => a == b,
    }
}
