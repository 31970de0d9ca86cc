use std::collections::HashSet;

use serde_json::Value;

use super::{ActorUri, ChannelName, ObjectBase, ObjectUrl};

/// Lists every invariant a parsed object candidate violates, in the field
/// order of the object type. An empty list means the candidate is valid.
pub fn validate_object_shape(candidate: &Value) -> Vec<String> {
    let mut out = Vec::new();
    let Some(fields) = candidate.as_object() else {
        out.push("object must be a JSON object".to_string());
        return out;
    };

    match fields.get("value") {
        Some(Value::Object(_)) => {}
        Some(_) => out.push("value must be a JSON object".into()),
        None => out.push("value is required".into()),
    }

    match fields.get("url") {
        Some(Value::String(s)) => {
            if let Err(e) = ObjectUrl::parse(s) {
                out.push(format!("url is invalid: {e}"));
            }
        }
        Some(_) => out.push("url must be a string".into()),
        None => out.push("url is required".into()),
    }

    match fields.get("actor") {
        Some(Value::String(s)) => {
            if ActorUri::new(s.as_str()).is_err() {
                out.push("actor must be an absolute URI of at most 2048 bytes".into());
            }
        }
        Some(_) => out.push("actor must be a string".into()),
        None => out.push("actor is required".into()),
    }

    match fields.get("channels") {
        Some(Value::Array(items)) => check_string_list(items, "channels", &mut out, |s| {
            ChannelName::new(s).is_ok()
        }),
        Some(_) => out.push("channels must be an array".into()),
        None => out.push("channels is required".into()),
    }

    match fields.get("allowed") {
        None | Some(Value::Null) => {}
        Some(Value::Array(items)) => check_string_list(items, "allowed", &mut out, |s| {
            ActorUri::new(s).is_ok()
        }),
        Some(_) => out.push("allowed must be an array when present".into()),
    }

    match fields.get("revision") {
        Some(Value::Number(n)) if n.as_u64().is_some() => {}
        Some(_) => out.push("revision must be a non-negative integer".into()),
        None => out.push("revision is required".into()),
    }

    out
}

fn check_string_list(
    items: &[Value],
    field: &str,
    out: &mut Vec<String>,
    valid: impl Fn(&str) -> bool,
) {
    let mut seen = HashSet::new();
    let mut duplicate = false;
    for item in items {
        match item.as_str() {
            Some(s) if valid(s) => duplicate |= !seen.insert(s),
            _ => {
                out.push(format!("{field} entries must be valid strings"));
                return;
            }
        }
    }
    if duplicate {
        out.push(format!("{field} entries must be unique"));
    }
}

/// Shape checks for the mutable part of an object.
pub fn validate_base(base: &ObjectBase) -> Vec<String> {
    let mut out = Vec::new();
    let unique_channels: HashSet<_> = base.channels.iter().collect();
    if unique_channels.len() != base.channels.len() {
        out.push("channels entries must be unique".into());
    }
    if let Some(allowed) = &base.allowed {
        let unique: HashSet<_> = allowed.iter().collect();
        if unique.len() != allowed.len() {
            out.push("allowed entries must be unique".into());
        }
    }
    out
}
