//! In-memory object store with optional journaling, shared by the local
//! implementation and the remote server.
//!
//! Every mutation is recorded as an [`Entry`] holding the object's state
//! after the change. Keeping a short per-url history lets
//! [`ObjectStore::changes_since`] compare each changed object against its
//! state at the cursor's snapshot, which yields exact deltas and tombstones.

mod journal;

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, RwLock, RwLockReadGuard, RwLockWriteGuard};

use serde::{Deserialize, Serialize};

use crate::api::{dedup_channels, ChannelStat, DiscoverDelta, DEFAULT_RETENTION_MS};
use crate::clock::{self, Clock};
use crate::error::{GraffitiError, Result};
use crate::model::{
    apply_patch, is_visible_to, mask_object, validate_base, ActorUri, ChannelName, GraffitiObject, ObjectBase,
    ObjectUrl, Patch, Tombstone,
};
use crate::schema::CompiledMatcher;
use journal::Journal;

const PRUNE_EVERY: u32 = 256;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub(crate) struct Entry {
    seq: u64,
    at: u64,
    url: ObjectUrl,
    after: Option<GraffitiObject>,
}

#[derive(Debug, Clone)]
pub struct StoreOptions {
    /// Journal file; `None` keeps everything in memory.
    pub path: Option<PathBuf>,
    pub retention_ms: u64,
    pub clock: Arc<dyn Clock>,
}

impl Default for StoreOptions {
    fn default() -> Self {
        StoreOptions { path: None, retention_ms: DEFAULT_RETENTION_MS, clock: clock::system() }
    }
}

#[derive(Debug, Clone)]
struct Live {
    object: GraffitiObject,
    modified_at: u64,
}

#[derive(Debug, Default)]
struct State {
    seq: u64,
    last_at: u64,
    objects: HashMap<ObjectUrl, Live>,
    channel_index: HashMap<ChannelName, BTreeSet<ObjectUrl>>,
    actor_index: HashMap<ActorUri, BTreeSet<ObjectUrl>>,
    history: HashMap<ObjectUrl, Vec<Entry>>,
    changes: BTreeMap<u64, (u64, ObjectUrl)>,
    since_prune: u32,
    journal: Option<Journal>,
}

/// Result of a discover over one store: matching objects, already masked
/// for the viewer, and the snapshot they were read at.
#[derive(Debug, Clone)]
pub struct Snapshot<T> {
    pub items: Vec<T>,
    pub seq: u64,
    pub at: u64,
}

#[derive(Debug)]
pub struct ObjectStore {
    state: RwLock<State>,
    clock: Arc<dyn Clock>,
    retention_ms: u64,
    examined: AtomicU64,
}

impl ObjectStore {
    pub fn in_memory() -> Self {
        ObjectStore::open(StoreOptions::default()).expect("in-memory stores cannot fail to open")
    }

    pub fn open(options: StoreOptions) -> Result<Self> {
        let mut state = State::default();
        if let Some(path) = &options.path {
            let (journal, entries) = Journal::open(path)?;
            for entry in entries {
                state.apply(entry);
            }
            state.journal = Some(journal);
        }
        let store = ObjectStore {
            state: RwLock::new(state),
            clock: options.clock,
            retention_ms: options.retention_ms,
            examined: AtomicU64::new(0),
        };
        {
            let mut st = store.write();
            store.prune_locked(&mut st, true)?;
        }
        Ok(store)
    }

    pub fn retention_ms(&self) -> u64 {
        self.retention_ms
    }

    pub fn now(&self) -> u64 {
        self.clock.now_ms()
    }

    fn read(&self) -> RwLockReadGuard<'_, State> {
        self.state.read().unwrap_or_else(|e| e.into_inner())
    }

    fn write(&self) -> RwLockWriteGuard<'_, State> {
        self.state.write().unwrap_or_else(|e| e.into_inner())
    }

    /// Stores a brand-new object at `url`, owned by `actor`, revision 0.
    pub fn create(&self, url: ObjectUrl, actor: &ActorUri, base: ObjectBase) -> Result<GraffitiObject> {
        check_base(&base)?;
        let mut st = self.write();
        if st.objects.contains_key(&url) || st.history.contains_key(&url) {
            return Err(GraffitiError::InvalidRequest(format!("url {url} already used")));
        }
        let object = GraffitiObject {
            value: base.value,
            url: url.clone(),
            actor: actor.clone(),
            channels: base.channels,
            allowed: base.allowed,
            revision: 0,
        };
        self.commit(&mut st, url, Some(object.clone()))?;
        Ok(object)
    }

    /// Replaces value, channels and allowed list wholesale.
    pub fn replace(&self, url: &ObjectUrl, actor: &ActorUri, base: ObjectBase) -> Result<GraffitiObject> {
        check_base(&base)?;
        let mut st = self.write();
        let current = owned(&st, url, actor)?;
        let object = GraffitiObject {
            value: base.value,
            url: url.clone(),
            actor: actor.clone(),
            channels: base.channels,
            allowed: base.allowed,
            revision: current.revision + 1,
        };
        self.commit(&mut st, url.clone(), Some(object.clone()))?;
        Ok(object)
    }

    pub fn patch(&self, url: &ObjectUrl, actor: &ActorUri, patch: &Patch) -> Result<GraffitiObject> {
        let mut st = self.write();
        let current = owned(&st, url, actor)?;
        let mut object = apply_patch(current, patch)?;
        object.revision = current.revision + 1;
        self.commit(&mut st, url.clone(), Some(object.clone()))?;
        Ok(object)
    }

    pub fn delete(&self, url: &ObjectUrl, actor: &ActorUri) -> Result<()> {
        let mut st = self.write();
        owned(&st, url, actor)?;
        self.commit(&mut st, url.clone(), None)
    }

    /// The object as `viewer` may see it, provided it also matches
    /// `matcher`. Missing, hidden and non-matching are all `NotFound`.
    pub fn get(&self, url: &ObjectUrl, matcher: &CompiledMatcher, viewer: Option<&ActorUri>) -> Result<GraffitiObject> {
        let st = self.read();
        st.objects
            .get(url)
            .and_then(|live| project(&live.object, &[], matcher, viewer))
            .ok_or(GraffitiError::NotFound)
    }

    pub fn discover(
        &self,
        channels: &[ChannelName],
        matcher: &CompiledMatcher,
        viewer: Option<&ActorUri>,
    ) -> Snapshot<GraffitiObject> {
        let channels = dedup_channels(channels);
        let st = self.read();
        let mut seen = HashSet::new();
        let mut items = Vec::new();
        for channel in &channels {
            let Some(urls) = st.channel_index.get(channel) else { continue };
            for url in urls {
                if !seen.insert(url) {
                    continue;
                }
                self.examined.fetch_add(1, Ordering::Relaxed);
                if let Some(o) = project(&st.objects[url].object, &channels, matcher, viewer) {
                    items.push(o);
                }
            }
        }
        Snapshot { items, seq: st.seq, at: self.clock.now_ms() }
    }

    /// Fails with `CursorExpired` once a snapshot taken at `issued_at` is
    /// older than the retention window.
    pub fn check_cursor_age(&self, issued_at: u64) -> Result<()> {
        if self.clock.now_ms().saturating_sub(issued_at) > self.retention_ms {
            Err(GraffitiError::CursorExpired)
        } else {
            Ok(())
        }
    }

    /// Everything that changed for this query since snapshot `seq`. The
    /// caller must have checked the cursor's age first.
    pub fn changes_since(
        &self,
        seq: u64,
        channels: &[ChannelName],
        matcher: &CompiledMatcher,
        viewer: Option<&ActorUri>,
    ) -> Result<Snapshot<DiscoverDelta>> {
        let channels = dedup_channels(channels);
        let st = self.read();
        if seq > st.seq {
            return Err(GraffitiError::InvalidCursor("cursor is from the future".into()));
        }
        let mut latest: Vec<(u64, &ObjectUrl)> = Vec::new();
        let mut seen = HashSet::new();
        for (s, (_, url)) in st.changes.range(seq + 1..).rev() {
            if seen.insert(url) {
                latest.push((*s, url));
            }
        }
        latest.reverse();
        let mut items = Vec::new();
        for (_, url) in latest {
            let history = &st.history[url];
            let before = history
                .iter()
                .rev()
                .find(|e| e.seq <= seq)
                .and_then(|e| e.after.as_ref());
            let matched_before = before
                .is_some_and(|b| b.in_any_channel(&channels) && project(b, &channels, matcher, viewer).is_some());
            let now = st
                .objects
                .get(url)
                .filter(|l| l.object.in_any_channel(&channels))
                .and_then(|l| project(&l.object, &channels, matcher, viewer));
            match now {
                Some(o) => items.push(DiscoverDelta::Object(o)),
                None if matched_before => items.push(DiscoverDelta::Tombstone(Tombstone {
                    url: url.clone(),
                    deleted_at: history.last().expect("changed urls have history").at,
                })),
                None => {}
            }
        }
        Ok(Snapshot { items, seq: st.seq, at: self.clock.now_ms() })
    }

    /// `actor`'s objects that are in no channel at all, unmasked.
    pub fn orphans(&self, actor: &ActorUri, matcher: &CompiledMatcher) -> Vec<GraffitiObject> {
        let st = self.read();
        st.actor_index
            .get(actor)
            .into_iter()
            .flatten()
            .map(|url| &st.objects[url].object)
            .filter(|o| o.channels.is_empty() && matcher.matches(o))
            .cloned()
            .collect()
    }

    pub fn channel_stats(&self, actor: &ActorUri) -> Vec<ChannelStat> {
        let st = self.read();
        let mut stats: BTreeMap<&ChannelName, (u64, u64)> = BTreeMap::new();
        for url in st.actor_index.get(actor).into_iter().flatten() {
            let live = &st.objects[url];
            for c in &live.object.channels {
                let s = stats.entry(c).or_default();
                s.0 += 1;
                s.1 = s.1.max(live.modified_at);
            }
        }
        stats
            .into_iter()
            .map(|(c, (count, last))| ChannelStat { channel: c.clone(), count, last_modified: last })
            .collect()
    }

    /// Every live object, unmasked, sorted by url.
    pub fn dump(&self) -> Vec<GraffitiObject> {
        let st = self.read();
        let mut out: Vec<_> = st.objects.values().map(|l| l.object.clone()).collect();
        out.sort_by(|a, b| a.url.cmp(&b.url));
        out
    }

    pub fn len(&self) -> usize {
        self.read().objects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Number of index candidates `discover` has looked at so far.
    pub fn examined(&self) -> u64 {
        self.examined.load(Ordering::Relaxed)
    }

    /// Differences between the indexes and a recomputation from the
    /// objects; empty when consistent.
    pub fn audit(&self) -> Vec<String> {
        self.read().audit()
    }

    /// Deletion records older than the retention window still held.
    pub fn expired_tombstones(&self) -> usize {
        let horizon = self.clock.now_ms().saturating_sub(self.retention_ms);
        let st = self.read();
        st.history
            .values()
            .flatten()
            .filter(|e| e.after.is_none() && e.at < horizon && e.seq != st.seq)
            .count()
    }

    /// Drops history and deletion records older than the retention
    /// window, then compacts the journal.
    pub fn prune(&self) -> Result<()> {
        let mut st = self.write();
        self.prune_locked(&mut st, true)
    }

    #[doc(hidden)]
    pub fn corrupt_channel_index(&self, channel: &ChannelName) {
        let bogus = ObjectUrl::parse("graffiti:local:corrupted").expect("valid url");
        self.write().channel_index.entry(channel.clone()).or_default().insert(bogus);
    }

    fn commit(&self, st: &mut State, url: ObjectUrl, after: Option<GraffitiObject>) -> Result<()> {
        let entry = Entry { seq: st.seq + 1, at: self.clock.now_ms().max(st.last_at), url, after };
        if let Some(j) = st.journal.as_mut() {
            j.append(&entry)?;
        }
        st.apply(entry);
        st.since_prune += 1;
        if st.since_prune >= PRUNE_EVERY {
            self.prune_locked(st, false)?;
        }
        debug_assert!(st.audit().is_empty(), "index audit failed: {:?}", st.audit());
        Ok(())
    }

    fn prune_locked(&self, st: &mut State, force_compact: bool) -> Result<()> {
        st.since_prune = 0;
        let horizon = self.clock.now_ms().saturating_sub(self.retention_ms);
        let newest = st.seq;
        let mut removed = 0usize;
        let mut emptied = Vec::new();
        for (url, entries) in st.history.iter_mut() {
            let before = entries.len();
            if let Some(idx) = entries.iter().rposition(|e| e.at < horizon) {
                entries.drain(..idx);
                if entries[0].after.is_none() && entries[0].seq != newest {
                    entries.remove(0);
                }
            }
            removed += before - entries.len();
            if entries.is_empty() {
                emptied.push(url.clone());
            }
        }
        for url in emptied {
            st.history.remove(&url);
        }
        let stale: Vec<u64> = st
            .changes
            .iter()
            .take_while(|(s, (at, _))| *at < horizon && **s != newest)
            .map(|(s, _)| *s)
            .collect();
        for s in stale {
            st.changes.remove(&s);
        }
        if removed > 0 || force_compact {
            let State { history, journal, .. } = st;
            if let Some(j) = journal.as_mut() {
                let mut all: Vec<&Entry> = history.values().flatten().collect();
                all.sort_by_key(|e| e.seq);
                j.compact(all.into_iter())?;
            }
        }
        Ok(())
    }
}

pub(crate) fn check_base(base: &ObjectBase) -> Result<()> {
    let violations = validate_base(base);
    if violations.is_empty() {
        Ok(())
    } else {
        Err(GraffitiError::ShapeInvalid(violations))
    }
}

/// The live object at `url` if `actor` may modify it. Someone who cannot
/// even see the object learns nothing beyond `NotFound`.
fn owned<'a>(st: &'a State, url: &ObjectUrl, actor: &ActorUri) -> Result<&'a GraffitiObject> {
    let live = st.objects.get(url).ok_or(GraffitiError::NotFound)?;
    if live.object.actor == *actor {
        Ok(&live.object)
    } else if is_visible_to(&live.object, Some(actor)) {
        Err(GraffitiError::NotAuthorized)
    } else {
        Err(GraffitiError::NotFound)
    }
}

/// Visibility, masking and schema in one step; the schema sees the masked
/// object so it cannot probe hidden channels or allowed lists.
pub(crate) fn project(
    object: &GraffitiObject,
    channels: &[ChannelName],
    matcher: &CompiledMatcher,
    viewer: Option<&ActorUri>,
) -> Option<GraffitiObject> {
    if !is_visible_to(object, viewer) {
        return None;
    }
    let masked = mask_object(object, viewer, channels);
    matcher.matches(&masked).then_some(masked)
}

impl State {
    fn apply(&mut self, entry: Entry) {
        if let Some(old) = self.objects.remove(&entry.url) {
            self.unindex(&old.object);
        }
        if let Some(object) = &entry.after {
            self.index(object);
            self.objects.insert(entry.url.clone(), Live { object: object.clone(), modified_at: entry.at });
        }
        self.seq = self.seq.max(entry.seq);
        self.last_at = self.last_at.max(entry.at);
        self.changes.insert(entry.seq, (entry.at, entry.url.clone()));
        self.history.entry(entry.url.clone()).or_default().push(entry);
    }

    fn index(&mut self, o: &GraffitiObject) {
        for c in &o.channels {
            self.channel_index.entry(c.clone()).or_default().insert(o.url.clone());
        }
        self.actor_index.entry(o.actor.clone()).or_default().insert(o.url.clone());
    }

    fn unindex(&mut self, o: &GraffitiObject) {
        for c in &o.channels {
            if let Some(set) = self.channel_index.get_mut(c) {
                set.remove(&o.url);
                if set.is_empty() {
                    self.channel_index.remove(c);
                }
            }
        }
        if let Some(set) = self.actor_index.get_mut(&o.actor) {
            set.remove(&o.url);
            if set.is_empty() {
                self.actor_index.remove(&o.actor);
            }
        }
    }

    fn audit(&self) -> Vec<String> {
        let mut channels: HashMap<&ChannelName, BTreeSet<&ObjectUrl>> = HashMap::new();
        let mut actors: HashMap<&ActorUri, BTreeSet<&ObjectUrl>> = HashMap::new();
        let mut out = Vec::new();
        for (url, live) in &self.objects {
            if live.object.url != *url {
                out.push(format!("object stored under {url} claims url {}", live.object.url));
            }
            for c in &live.object.channels {
                channels.entry(c).or_default().insert(url);
            }
            actors.entry(&live.object.actor).or_default().insert(url);
            let last = self.history.get(url).and_then(|h| h.last()).and_then(|e| e.after.as_ref());
            if last != Some(&live.object) {
                out.push(format!("history of {url} does not end in its live state"));
            }
        }
        let mut names: BTreeSet<&ChannelName> = channels.keys().copied().collect();
        names.extend(self.channel_index.keys());
        for c in names {
            let indexed: BTreeSet<&ObjectUrl> = self.channel_index.get(c).into_iter().flatten().collect();
            if channels.get(c).cloned().unwrap_or_default() != indexed {
                out.push(format!("channel index for {:?} is inconsistent", c.as_str()));
            }
        }
        let mut owners: BTreeSet<&ActorUri> = actors.keys().copied().collect();
        owners.extend(self.actor_index.keys());
        for a in owners {
            let indexed: BTreeSet<&ObjectUrl> = self.actor_index.get(a).into_iter().flatten().collect();
            if actors.get(a).cloned().unwrap_or_default() != indexed {
                out.push(format!("actor index for {a} is inconsistent"));
            }
        }
        out
    }
}
