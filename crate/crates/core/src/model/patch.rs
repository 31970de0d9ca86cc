use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use super::{validate_object_shape, GraffitiObject};

/// RFC 6902 JSON Patch, restricted to `add`, `remove` and `replace`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Patch(pub Vec<PatchOp>);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "lowercase", deny_unknown_fields)]
pub enum PatchOp {
    Add { path: String, value: Value },
    Remove { path: String },
    Replace { path: String, value: Value },
}

impl PatchOp {
    pub fn path(&self) -> &str {
        match self {
            PatchOp::Add { path, .. } | PatchOp::Remove { path } | PatchOp::Replace { path, .. } => {
                path
            }
        }
    }
}

impl Patch {
    pub fn from_json(value: Value) -> Result<Self, PatchError> {
        serde_json::from_value(value).map_err(|e| PatchError::MalformedOp(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
#[serde(tag = "kind", content = "detail")]
pub enum PatchError {
    #[error("path {0:?} is outside /value, /channels and /allowed")]
    PathOutOfBounds(String),
    #[error("malformed patch operation: {0}")]
    MalformedOp(String),
    #[error("patch target {0:?} does not exist")]
    TargetMissing(String),
    #[error("patched object is invalid: {}", .0.join("; "))]
    ResultInvalid(Vec<String>),
}

const MUTABLE_ROOTS: [&str; 3] = ["value", "channels", "allowed"];

/// Applies `patch` to the mutable parts of `object`. Either every operation
/// applies or the input is returned untouched via an error. The revision is
/// left for the owning store to bump.
pub fn apply_patch(object: &GraffitiObject, patch: &Patch) -> Result<GraffitiObject, PatchError> {
    let mut doc = Map::new();
    doc.insert("value".into(), Value::Object(object.value.clone()));
    doc.insert("channels".into(), serde_json::to_value(&object.channels).expect("serializable"));
    if let Some(allowed) = &object.allowed {
        doc.insert("allowed".into(), serde_json::to_value(allowed).expect("serializable"));
    }
    let mut doc = Value::Object(doc);

    for op in &patch.0 {
        let tokens = parse_pointer(op.path())?;
        match tokens.first() {
            Some(root) if MUTABLE_ROOTS.contains(&root.as_str()) => {}
            _ => return Err(PatchError::PathOutOfBounds(op.path().to_string())),
        }
        match op {
            PatchOp::Add { value, .. } => add(&mut doc, &tokens, value.clone(), op.path())?,
            PatchOp::Remove { .. } => {
                remove(&mut doc, &tokens, op.path())?;
            }
            PatchOp::Replace { value, .. } => {
                remove(&mut doc, &tokens, op.path())?;
                add(&mut doc, &tokens, value.clone(), op.path())?;
            }
        }
    }

    let Value::Object(mut fields) = doc else { unreachable!("root stays an object") };
    fields.insert("url".into(), Value::String(object.url.to_string()));
    fields.insert("actor".into(), Value::String(object.actor.to_string()));
    fields.insert("revision".into(), Value::from(object.revision));
    let candidate = Value::Object(fields);
    let violations = validate_object_shape(&candidate);
    if !violations.is_empty() {
        return Err(PatchError::ResultInvalid(violations));
    }
    serde_json::from_value(candidate).map_err(|e| PatchError::ResultInvalid(vec![e.to_string()]))
}

fn parse_pointer(path: &str) -> Result<Vec<String>, PatchError> {
    let Some(rest) = path.strip_prefix('/') else {
        return Err(if path.is_empty() {
            PatchError::PathOutOfBounds(path.to_string())
        } else {
            PatchError::MalformedOp(format!("pointer {path:?} must start with '/'"))
        });
    };
    Ok(rest
        .split('/')
        .map(|t| t.replace("~1", "/").replace("~0", "~"))
        .collect())
}

fn parent_mut<'a>(doc: &'a mut Value, tokens: &[String], path: &str) -> Result<&'a mut Value, PatchError> {
    let mut cur = doc;
    for t in &tokens[..tokens.len() - 1] {
        cur = match cur {
            Value::Object(m) => m.get_mut(t),
            Value::Array(a) => array_index(t, a.len()).and_then(|i| a.get_mut(i)),
            _ => None,
        }
        .ok_or_else(|| PatchError::TargetMissing(path.to_string()))?;
    }
    Ok(cur)
}

fn array_index(token: &str, len: usize) -> Option<usize> {
    if token.is_empty() || (token.len() > 1 && token.starts_with('0')) {
        return None;
    }
    token.parse::<usize>().ok().filter(|i| *i < len)
}

fn add(doc: &mut Value, tokens: &[String], value: Value, path: &str) -> Result<(), PatchError> {
    let last = tokens.last().expect("non-empty pointer");
    match parent_mut(doc, tokens, path)? {
        Value::Object(m) => {
            m.insert(last.clone(), value);
        }
        Value::Array(a) => {
            let idx = if last == "-" {
                a.len()
            } else if last == &a.len().to_string() {
                a.len()
            } else {
                array_index(last, a.len()).ok_or_else(|| PatchError::TargetMissing(path.to_string()))?
            };
            a.insert(idx, value);
        }
        _ => return Err(PatchError::TargetMissing(path.to_string())),
    }
    Ok(())
}

fn remove(doc: &mut Value, tokens: &[String], path: &str) -> Result<Value, PatchError> {
    let last = tokens.last().expect("non-empty pointer");
    let missing = || PatchError::TargetMissing(path.to_string());
    match parent_mut(doc, tokens, path)? {
        Value::Object(m) => m.remove(last).ok_or_else(missing),
        Value::Array(a) => {
            let idx = array_index(last, a.len()).ok_or_else(missing)?;
            Ok(a.remove(idx))
        }
        _ => Err(missing()),
    }
}
