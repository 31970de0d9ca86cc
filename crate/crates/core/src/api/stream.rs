use std::collections::{HashSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};

use super::DiscoverCursor;
use crate::error::Result;

/// A non-fatal problem reported in a stream's trailer, e.g. one server of a
/// registry being unreachable.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Warning {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
    pub message: String,
}

impl Warning {
    pub fn new(source: impl Into<String>, message: impl Into<String>) -> Self {
        Warning { source: Some(source.into()), message: message.into() }
    }
}

impl fmt::Display for Warning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.source {
            Some(s) => write!(f, "{s}: {}", self.message),
            None => f.write_str(&self.message),
        }
    }
}

pub enum StreamItem<T> {
    Item(T),
    Warning(Warning),
    Cursor(DiscoverCursor),
}

type Source<T> = Box<dyn Iterator<Item = Result<StreamItem<T>>> + Send>;

/// Single-consumer pull stream. Iterating yields the items; warnings and
/// the final cursor are collected on the side and readable once the
/// stream is exhausted.
pub struct PullStream<T> {
    source: Source<T>,
    warnings: Vec<Warning>,
    cursor: Option<DiscoverCursor>,
    done: bool,
}

impl<T: Send + 'static> PullStream<T> {
    pub fn new(source: impl Iterator<Item = Result<StreamItem<T>>> + Send + 'static) -> Self {
        PullStream { source: Box::new(source), warnings: Vec::new(), cursor: None, done: false }
    }

    /// A stream over already-materialized items.
    pub fn from_items(items: Vec<T>, cursor: Option<DiscoverCursor>) -> Self {
        let tail = cursor.map(|c| Ok(StreamItem::Cursor(c)));
        PullStream::new(items.into_iter().map(|i| Ok(StreamItem::Item(i))).chain(tail))
    }

    pub fn empty() -> Self {
        PullStream::from_items(Vec::new(), None)
    }

    pub fn with_warnings(mut self, warnings: Vec<Warning>) -> Self {
        self.warnings.extend(warnings);
        self
    }

    pub fn cursor(&self) -> Option<&DiscoverCursor> {
        self.cursor.as_ref()
    }

    pub fn warnings(&self) -> &[Warning] {
        &self.warnings
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    /// Drains the stream; the first error aborts.
    pub fn collect_all(mut self) -> Result<Collected<T>> {
        let mut items = Vec::new();
        for item in self.by_ref() {
            items.push(item?);
        }
        Ok(Collected { items, cursor: self.cursor, warnings: self.warnings })
    }

    /// Converts items, keeping warnings and the cursor.
    pub fn map_items<U: Send + 'static>(mut self, f: impl Fn(T) -> U + Send + 'static) -> PullStream<U> {
        let warnings = std::mem::take(&mut self.warnings);
        PullStream::new(std::iter::from_fn(move || {
            self.next_event().map(|e| {
                e.map(|item| match item {
                    StreamItem::Item(i) => StreamItem::Item(f(i)),
                    StreamItem::Warning(w) => StreamItem::Warning(w),
                    StreamItem::Cursor(c) => StreamItem::Cursor(c),
                })
            })
        }))
        .with_warnings(warnings)
    }

    /// Raw access to the next element including warnings and the cursor.
    pub fn next_event(&mut self) -> Option<Result<StreamItem<T>>> {
        if self.done {
            return None;
        }
        let next = self.source.next();
        match &next {
            None => self.done = true,
            Some(Ok(StreamItem::Warning(w))) => self.warnings.push(w.clone()),
            Some(Ok(StreamItem::Cursor(c))) => self.cursor = Some(c.clone()),
            _ => {}
        }
        next
    }
}

impl<T: Send + 'static> Iterator for PullStream<T> {
    type Item = Result<T>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            match self.next_event()? {
                Ok(StreamItem::Item(item)) => return Some(Ok(item)),
                Ok(_) => continue,
                Err(e) => return Some(Err(e)),
            }
        }
    }
}

#[derive(Debug)]
pub struct Collected<T> {
    pub items: Vec<T>,
    pub cursor: Option<DiscoverCursor>,
    pub warnings: Vec<Warning>,
}

type Finish = Box<dyn FnOnce(Vec<(String, Option<DiscoverCursor>)>) -> Option<DiscoverCursor> + Send>;

/// Concatenates tagged sub-streams lazily, dropping items whose key was
/// already seen. Errors inside a sub-stream become warnings tagged with the
/// part's name and cost that part its cursor. When every part is drained,
/// `finish` turns the per-part cursors into the merged stream's cursor.
pub fn merge_streams<T: Send + 'static>(
    parts: Vec<(String, PullStream<T>)>,
    initial_warnings: Vec<Warning>,
    key: fn(&T) -> String,
    finish: impl FnOnce(Vec<(String, Option<DiscoverCursor>)>) -> Option<DiscoverCursor> + Send + 'static,
) -> PullStream<T> {
    PullStream::new(Merge {
        parts: parts.into(),
        current: None,
        current_failed: false,
        seen: HashSet::new(),
        cursors: Vec::new(),
        pending: initial_warnings.into(),
        key,
        finish: Some(Box::new(finish)),
    })
}

struct Merge<T> {
    parts: VecDeque<(String, PullStream<T>)>,
    current: Option<(String, PullStream<T>)>,
    current_failed: bool,
    seen: HashSet<String>,
    cursors: Vec<(String, Option<DiscoverCursor>)>,
    pending: VecDeque<Warning>,
    key: fn(&T) -> String,
    finish: Option<Finish>,
}

impl<T: Send + 'static> Iterator for Merge<T> {
    type Item = Result<StreamItem<T>>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            if let Some(w) = self.pending.pop_front() {
                return Some(Ok(StreamItem::Warning(w)));
            }
            if self.current.is_none() {
                match self.parts.pop_front() {
                    Some(part) => {
                        self.current = Some(part);
                        self.current_failed = false;
                    }
                    None => {
                        let finish = self.finish.take()?;
                        let cursors = std::mem::take(&mut self.cursors);
                        return finish(cursors).map(|c| Ok(StreamItem::Cursor(c)));
                    }
                }
            }
            let (tag, stream) = self.current.as_mut().expect("set above");
            match stream.next_event() {
                Some(Ok(StreamItem::Item(item))) => {
                    if self.seen.insert((self.key)(&item)) {
                        return Some(Ok(StreamItem::Item(item)));
                    }
                }
                Some(Ok(StreamItem::Warning(mut w))) => {
                    w.source.get_or_insert_with(|| tag.clone());
                    return Some(Ok(StreamItem::Warning(w)));
                }
                Some(Ok(StreamItem::Cursor(_))) => {}
                Some(Err(e)) => {
                    self.current_failed = true;
                    self.pending.push_back(Warning::new(tag.clone(), e.to_string()));
                    let (tag, _) = self.current.take().expect("set above");
                    self.cursors.push((tag, None));
                }
                None => {
                    let (tag, stream) = self.current.take().expect("set above");
                    let cursor = if self.current_failed { None } else { stream.cursor };
                    self.cursors.push((tag, cursor));
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::GraffitiError;

    fn cursor(n: u64) -> DiscoverCursor {
        DiscoverCursor::encode("t", n, &n)
    }

    #[test]
    fn merge_dedups_and_collects_cursors() {
        let a = PullStream::from_items(vec![1, 2], Some(cursor(1)));
        let b = PullStream::from_items(vec![2, 3], Some(cursor(2)));
        let merged = merge_streams(
            vec![("a".into(), a), ("b".into(), b)],
            vec![Warning::new("c", "down")],
            |n: &i32| n.to_string(),
            |cursors| {
                assert_eq!(cursors.len(), 2);
                assert!(cursors.iter().all(|(_, c)| c.is_some()));
                Some(cursor(9))
            },
        );
        let out = merged.collect_all().unwrap();
        assert_eq!(out.items, vec![1, 2, 3]);
        assert_eq!(out.cursor, Some(cursor(9)));
        assert_eq!(out.warnings, vec![Warning::new("c", "down")]);
    }

    #[test]
    fn mid_stream_error_becomes_warning() {
        let broken = PullStream::new(
            vec![Ok(StreamItem::Item(1)), Err(GraffitiError::Protocol("eof".into()))].into_iter(),
        );
        let ok = PullStream::from_items(vec![5], Some(cursor(1)));
        let merged = merge_streams(
            vec![("x".into(), broken), ("y".into(), ok)],
            vec![],
            |n: &i32| n.to_string(),
            |cursors| {
                assert_eq!(cursors[0], ("x".to_string(), None));
                assert!(cursors[1].1.is_some());
                None
            },
        );
        let out = merged.collect_all().unwrap();
        assert_eq!(out.items, vec![1, 5]);
        assert_eq!(out.warnings.len(), 1);
        assert_eq!(out.warnings[0].source.as_deref(), Some("x"));
    }
}
