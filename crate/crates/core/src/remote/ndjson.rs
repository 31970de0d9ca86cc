use std::io::{BufRead, BufReader, Lines, Read};

use serde::de::DeserializeOwned;
use serde_json::Value;

use crate::api::{DiscoverCursor, PullStream, StreamItem, Warning};
use crate::error::{GraffitiError, Result};

/// Lazily parses a wire stream. `cursor` and `end` lines terminate it;
/// running out of input before either is an error.
pub fn parse_ndjson<T: DeserializeOwned + Send + 'static>(body: Box<dyn Read + Send>) -> PullStream<T> {
    PullStream::new(NdjsonItems { lines: BufReader::new(body).lines(), done: false, _item: std::marker::PhantomData })
}

struct NdjsonItems<T> {
    lines: Lines<BufReader<Box<dyn Read + Send>>>,
    done: bool,
    _item: std::marker::PhantomData<fn() -> T>,
}

impl<T: DeserializeOwned> NdjsonItems<T> {
    fn parse(&mut self, line: &str) -> Result<Option<StreamItem<T>>> {
        let bad = |e: serde_json::Error| GraffitiError::Protocol(format!("bad stream line: {e}"));
        let mut value: Value = serde_json::from_str(line).map_err(bad)?;
        let kind = value.get("type").and_then(Value::as_str).unwrap_or("").to_string();
        match kind.as_str() {
            "cursor" => {
                self.done = true;
                let token = value
                    .get("cursor")
                    .and_then(Value::as_str)
                    .ok_or_else(|| GraffitiError::Protocol("cursor line without cursor".into()))?;
                let cursor: DiscoverCursor = token.parse()?;
                Ok(Some(StreamItem::Cursor(cursor)))
            }
            "end" => {
                self.done = true;
                Ok(None)
            }
            "warning" => {
                value.as_object_mut().map(|m| m.remove("type"));
                Ok(Some(StreamItem::Warning(serde_json::from_value(value).map_err(bad)?)))
            }
            _ => {
                // Delta lines keep their tag; plain object and stat lines
                // parse with it dropped.
                match serde_json::from_value::<T>(value.clone()) {
                    Ok(item) => Ok(Some(StreamItem::Item(item))),
                    Err(_) => {
                        value.as_object_mut().map(|m| m.remove("type"));
                        Ok(Some(StreamItem::Item(serde_json::from_value(value).map_err(bad)?)))
                    }
                }
            }
        }
    }
}

impl<T: DeserializeOwned> Iterator for NdjsonItems<T> {
    type Item = Result<StreamItem<T>>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            if self.done {
                return None;
            }
            let line = match self.lines.next() {
                None => {
                    self.done = true;
                    return Some(Err(GraffitiError::Protocol("stream ended before its trailer".into())));
                }
                Some(Err(e)) => {
                    self.done = true;
                    return Some(Err(GraffitiError::Protocol(format!("reading stream: {e}"))));
                }
                Some(Ok(line)) => line,
            };
            if line.trim().is_empty() {
                continue;
            }
            match self.parse(&line) {
                Ok(Some(item)) => return Some(Ok(item)),
                Ok(None) => return None,
                Err(e) => {
                    self.done = true;
                    return Some(Err(e));
                }
            }
        }
    }
}

impl From<Warning> for Value {
    fn from(w: Warning) -> Value {
        let mut v = serde_json::to_value(w).expect("warnings serialize");
        v.as_object_mut().map(|m| m.insert("type".into(), "warning".into()));
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::api::DiscoverDelta;
    use crate::model::GraffitiObject;
    use std::io::Cursor;

    fn body(text: &str) -> Box<dyn Read + Send> {
        Box::new(Cursor::new(text.as_bytes().to_vec()))
    }

    const OBJECT: &str = r#"{"type":"object","value":{"a":1},"url":"graffiti:remote:s.test/1","actor":"https://s.test/a/x","channels":["c"],"revision":0}"#;

    #[test]
    fn objects_and_cursor() {
        let cursor = DiscoverCursor::encode("k", 5, &1);
        let text = format!("{OBJECT}\n{{\"type\":\"warning\",\"message\":\"slow\"}}\n{{\"type\":\"cursor\",\"cursor\":\"{cursor}\"}}\n");
        let out = parse_ndjson::<GraffitiObject>(body(&text)).collect_all().unwrap();
        assert_eq!(out.items.len(), 1);
        assert_eq!(out.cursor, Some(cursor));
        assert_eq!(out.warnings[0].message, "slow");
    }

    #[test]
    fn deltas_keep_tags() {
        let text = format!("{OBJECT}\n{{\"type\":\"tombstone\",\"url\":\"graffiti:remote:s.test/2\",\"deletedAt\":9}}\n{{\"type\":\"end\"}}\n");
        let out = parse_ndjson::<DiscoverDelta>(body(&text)).collect_all().unwrap();
        assert!(matches!(out.items[0], DiscoverDelta::Object(_)));
        assert!(matches!(out.items[1], DiscoverDelta::Tombstone(_)));
    }

    #[test]
    fn truncation_is_an_error() {
        let r = parse_ndjson::<GraffitiObject>(body(&format!("{OBJECT}\n"))).collect_all();
        assert!(matches!(r, Err(GraffitiError::Protocol(_))));
    }
}
