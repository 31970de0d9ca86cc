use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::sync::{Arc, Mutex, MutexGuard};

use percent_encoding::{percent_decode_str, utf8_percent_encode, NON_ALPHANUMERIC};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::file::{channel_file_path, validate_channel_file, ChannelFile, FileEntry, FileTombstone, FORMAT_VERSION};
use super::storage::{BlobFetcher, StorageAdapter, StorageProvider};
use super::tracker::TrackerClient;
use crate::api::{
    check_query_channels, dedup_channels, ChannelStat, Credential, DiscoverCursor, DiscoverDelta, Graffiti, Home,
    LoginRequest, PullStream, Session, StreamItem, Warning, DEFAULT_RETENTION_MS,
};
use crate::clock::{self, Clock};
use crate::error::{GraffitiError, Result};
use crate::model::{
    apply_patch, is_visible_to, ActorUri, ChannelName, GraffitiObject, ObjectBase, ObjectUrl, Patch, Scheme, Tombstone,
};
use crate::schema::{CompiledMatcher, SchemaDoc};
use crate::store::{check_base, project};
use crate::transport::Transport;

pub const CS_CURSOR_KIND: &str = "cs";
/// Blob listing every live object of one actor; object urls point here.
pub const INDEX_PATH: &str = "objects.json";

#[derive(Debug, Clone, Serialize, Deserialize)]
struct IndexEntry {
    #[serde(flatten)]
    object: GraffitiObject,
    #[serde(rename = "modifiedAt")]
    modified_at: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct IndexFile {
    #[serde(rename = "formatVersion")]
    format_version: u32,
    actor: ActorUri,
    #[serde(rename = "updatedAt")]
    updated_at: u64,
    objects: Vec<IndexEntry>,
}

#[derive(Debug, Clone)]
pub struct CsOptions {
    /// Tracker authority.
    pub tracker: String,
    /// Seconds each announcement stays live; 0 never expires.
    pub ttl_secs: u64,
    /// How long tombstone entries stay in channel files, and how long
    /// cursors remain valid.
    pub retention_ms: u64,
    pub clock: Arc<dyn Clock>,
}

impl CsOptions {
    pub fn new(tracker: &str) -> Self {
        CsOptions { tracker: tracker.to_string(), ttl_secs: 0, retention_ms: DEFAULT_RETENTION_MS, clock: clock::system() }
    }
}

/// Session tokens carry the handle and storage secret, since no server holds
/// session state. A fresh nonce keeps each login distinct for revocation.
fn session_token(handle: &str, secret: &str) -> String {
    use base64::Engine;
    let b64 = |s: &str| base64::engine::general_purpose::URL_SAFE_NO_PAD.encode(s);
    format!("cs1.{}.{}.{}", b64(handle), b64(secret), uuid::Uuid::new_v4().simple())
}

/// Storage hosts only check the secret on writes, so logging in writes a
/// marker blob.
fn prove_write(adapter: &dyn StorageAdapter) -> Result<()> {
    adapter.write_blob(LOGIN_MARKER, b"{}")
}

const LOGIN_MARKER: &str = "login.json";

fn parse_session_token(token: &str) -> Option<(String, String)> {
    use base64::Engine;
    let mut parts = token.strip_prefix("cs1.")?.split('.');
    let mut next = || -> Option<String> {
        let bytes = base64::engine::general_purpose::URL_SAFE_NO_PAD.decode(parts.next()?).ok()?;
        String::from_utf8(bytes).ok()
    };
    let (handle, secret) = (next()?, next()?);
    parts.next()?;
    Some((handle, secret))
}

#[derive(Default)]
struct Sessions {
    live: HashMap<String, (ActorUri, Arc<dyn StorageAdapter>)>,
    revoked: HashSet<String>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
struct FileState {
    hash: String,
    matched: BTreeMap<ObjectUrl, u64>,
}

#[derive(Serialize, Deserialize)]
struct CsCursor {
    channels: Vec<ChannelName>,
    schema: SchemaDoc,
    files: BTreeMap<String, FileState>,
}

/// What one channel file contributes to a query.
struct FileView {
    state: FileState,
    objects: Vec<GraffitiObject>,
    tombstones: Vec<FileTombstone>,
}

/// Commodity-storage client: per-(actor, channel) files on dumb blob hosts,
/// found through a tracker, filtered on the client. Public objects only.
pub struct CsClient {
    tracker: TrackerClient,
    provider: Arc<dyn StorageProvider>,
    fetcher: BlobFetcher,
    options: CsOptions,
    sessions: Mutex<Sessions>,
    writes: Mutex<u64>,
}

impl std::fmt::Debug for CsClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CsClient").field("tracker", &self.tracker).finish_non_exhaustive()
    }
}

fn cs_url(index_url: &str, id: &str) -> Result<ObjectUrl> {
    ObjectUrl::new(Scheme::Cs, format!("{}/{id}", utf8_percent_encode(index_url, NON_ALPHANUMERIC)))
}

/// Blob url and object id of a cs url.
pub fn cs_parts(url: &ObjectUrl) -> Result<(String, String)> {
    let malformed = || GraffitiError::MalformedUrl(format!("{url} is not <blob url>/<id>"));
    if url.scheme() != Scheme::Cs {
        return Err(GraffitiError::MalformedUrl(format!("{url} is not a cs url")));
    }
    let (blob, id) = url.suffix().rsplit_once('/').ok_or_else(malformed)?;
    let blob = percent_decode_str(blob).decode_utf8().map_err(|_| malformed())?;
    if blob.is_empty() || id.is_empty() {
        return Err(malformed());
    }
    Ok((blob.into_owned(), id.to_string()))
}

/// Where an actor's index lives; actors are the public url of their
/// storage root.
fn index_url_of(actor: &ActorUri) -> String {
    format!("{}{INDEX_PATH}", actor.as_str())
}

/// Whether `object` is really `actor`'s: same actor and a url minted from
/// that actor's index.
fn owns(actor: &ActorUri, object: &GraffitiObject) -> bool {
    object.actor == *actor && cs_parts(&object.url).is_ok_and(|(blob, _)| blob == index_url_of(actor))
}

fn hash_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn events<T: Send + 'static>(warnings: Vec<Warning>, items: Vec<T>, cursor: Option<DiscoverCursor>) -> PullStream<T> {
    let events = warnings
        .into_iter()
        .map(StreamItem::Warning)
        .chain(items.into_iter().map(StreamItem::Item))
        .chain(cursor.map(StreamItem::Cursor))
        .map(Ok)
        .collect::<Vec<_>>();
    PullStream::new(events.into_iter())
}

fn storage_error(e: impl std::fmt::Display) -> GraffitiError {
    GraffitiError::StorageUnavailable(e.to_string())
}

impl CsClient {
    pub fn new(transport: Arc<dyn Transport>, provider: Arc<dyn StorageProvider>, options: CsOptions) -> Self {
        CsClient {
            tracker: TrackerClient::new(transport.clone(), options.tracker.clone()),
            provider,
            fetcher: BlobFetcher::new(transport),
            options,
            sessions: Mutex::new(Sessions::default()),
            writes: Mutex::new(0),
        }
    }

    pub fn fetcher(&self) -> &BlobFetcher {
        &self.fetcher
    }

    pub fn tracker(&self) -> &TrackerClient {
        &self.tracker
    }

    fn sessions(&self) -> MutexGuard<'_, Sessions> {
        self.sessions.lock().expect("session lock")
    }

    fn authenticate(&self, session: &Session) -> Result<(ActorUri, Arc<dyn StorageAdapter>)> {
        let key = session.credential.expose();
        {
            let sessions = self.sessions();
            match sessions.live.get(key) {
                Some((actor, adapter)) if *actor == session.actor => return Ok((actor.clone(), adapter.clone())),
                Some(_) => return Err(GraffitiError::AuthFailed),
                None if sessions.revoked.contains(key) => return Err(GraffitiError::SessionRevoked),
                None => {}
            }
        }
        // A token minted by another process: reopen its storage.
        let (handle, secret) = parse_session_token(key).ok_or(GraffitiError::AuthFailed)?;
        let adapter = self.provider.open(&handle, &secret).map_err(|_| GraffitiError::AuthFailed)?;
        prove_write(&*adapter).map_err(|_| GraffitiError::AuthFailed)?;
        let actor = ActorUri::new(adapter.public_url(""))?;
        if actor != session.actor {
            return Err(GraffitiError::AuthFailed);
        }
        self.sessions().live.insert(key.to_string(), (actor.clone(), adapter.clone()));
        Ok((actor, adapter))
    }

    fn viewer(&self, session: Option<&Session>) -> Result<Option<ActorUri>> {
        session.map(|s| self.authenticate(s).map(|(a, _)| a)).transpose()
    }

    fn load_index(&self, actor: &ActorUri, adapter: &dyn StorageAdapter) -> Result<IndexFile> {
        match adapter.read_blob(INDEX_PATH)? {
            Some(bytes) => serde_json::from_slice(&bytes).map_err(storage_error),
            None => Ok(IndexFile { format_version: FORMAT_VERSION, actor: actor.clone(), updated_at: 0, objects: Vec::new() }),
        }
    }

    /// Downloads someone's index, dropping it if it is not hosted where its
    /// actor lives and dropping objects it has no authority over.
    fn fetch_index(&self, blob_url: &str) -> Result<Option<IndexFile>> {
        let Some(bytes) = self.fetcher.fetch(blob_url)? else { return Ok(None) };
        let Ok(mut index) = serde_json::from_slice::<IndexFile>(&bytes) else { return Ok(None) };
        if index_url_of(&index.actor) != blob_url {
            return Ok(None);
        }
        index.objects.retain(|e| owns(&index.actor, &e.object));
        Ok(Some(index))
    }

    /// The current object at `url` when `actor` owns it, otherwise the error
    /// its owner's files imply.
    fn owned(&self, url: &ObjectUrl, actor: &ActorUri, adapter: &dyn StorageAdapter) -> Result<(IndexFile, usize)> {
        let (blob, _) = cs_parts(url)?;
        if blob != adapter.public_url(INDEX_PATH) {
            let found = self
                .fetch_index(&blob)?
                .and_then(|index| index.objects.into_iter().find(|e| e.object.url == *url));
            return Err(match found {
                Some(e) if is_visible_to(&e.object, Some(actor)) => GraffitiError::NotAuthorized,
                _ => GraffitiError::NotFound,
            });
        }
        let index = self.load_index(actor, adapter)?;
        let pos = index.objects.iter().position(|e| e.object.url == *url).ok_or(GraffitiError::NotFound)?;
        Ok((index, pos))
    }

    /// Rewrites every channel file `before` or `after` touches, re-announces
    /// them, then the index.
    fn commit(
        &self,
        adapter: &dyn StorageAdapter,
        mut index: IndexFile,
        before: Option<&GraffitiObject>,
        after: Option<GraffitiObject>,
        now: u64,
    ) -> Result<()> {
        let url = before.or(after.as_ref()).map(|o| o.url.clone()).expect("a change has an object");
        let affected: BTreeSet<&ChannelName> =
            before.into_iter().chain(after.as_ref()).flat_map(|o| o.channels.iter()).collect();
        let horizon = now.saturating_sub(self.options.retention_ms);
        for channel in affected {
            let path = channel_file_path(channel);
            let mut file = match adapter.read_blob(&path)? {
                Some(bytes) => serde_json::from_slice(&bytes).map_err(storage_error)?,
                None => ChannelFile::new(index.actor.clone(), channel.clone()),
            };
            file.objects.retain(|e| match e {
                FileEntry::Object(o) => o.url != url,
                FileEntry::Tombstone(t) => t.url != url && t.deleted_at >= horizon,
            });
            match &after {
                Some(o) if o.channels.contains(channel) => file.objects.push(FileEntry::Object(o.clone())),
                _ => file.objects.push(FileEntry::Tombstone(FileTombstone { tombstone: true, url: url.clone(), deleted_at: now })),
            }
            file.updated_at = now;
            adapter.write_blob(&path, &file.to_bytes())?;
            self.tracker.announce(channel, &adapter.public_url(&path), self.options.ttl_secs)?;
        }
        index.objects.retain(|e| e.object.url != url);
        if let Some(object) = after {
            index.objects.push(IndexEntry { object, modified_at: now });
        }
        index.updated_at = now;
        adapter.write_blob(INDEX_PATH, &serde_json::to_vec(&index).expect("index serializes"))
    }

    fn tick(&self, guard: &mut MutexGuard<'_, u64>) -> u64 {
        let now = self.options.clock.now_ms().max(**guard);
        **guard = now;
        now
    }

    /// Fetches every announced file for `channels` and projects its objects
    /// for `viewer`. Failed files come back as warnings.
    fn snapshot(
        &self,
        channels: &[ChannelName],
        matcher: &CompiledMatcher,
        viewer: Option<&ActorUri>,
    ) -> Result<BTreeMap<String, std::result::Result<FileView, Warning>>> {
        let located = self.tracker.lookup(channels)?;
        let mut out = BTreeMap::new();
        for (channel, urls) in located {
            for file_url in urls {
                if out.contains_key(&file_url) {
                    continue;
                }
                let view = match self.fetcher.fetch(&file_url) {
                    Err(e) => Err(Warning::new(file_url.clone(), e.to_string())),
                    Ok(None) => Ok(FileView { state: FileState::default(), objects: Vec::new(), tombstones: Vec::new() }),
                    Ok(Some(bytes)) => match validate_channel_file(&bytes, &channel) {
                        Err(e) => Err(Warning::new(file_url.clone(), e.to_string())),
                        Ok(file) if !file_url.starts_with(file.actor.as_str()) || !file.live().all(|o| owns(&file.actor, o)) => {
                            Err(Warning::new(file_url.clone(), format!("file is not hosted by its actor {}", file.actor)))
                        }
                        Ok(file) => {
                            let objects: Vec<GraffitiObject> =
                                file.live().filter_map(|o| project(o, channels, matcher, viewer)).collect();
                            let matched = objects.iter().map(|o| (o.url.clone(), o.revision)).collect();
                            Ok(FileView {
                                state: FileState { hash: hash_bytes(&bytes), matched },
                                objects,
                                tombstones: file.tombstones().cloned().collect(),
                            })
                        }
                    },
                };
                out.insert(file_url, view);
            }
        }
        Ok(out)
    }

    fn cursor(&self, channels: Vec<ChannelName>, schema: SchemaDoc, files: BTreeMap<String, FileState>) -> DiscoverCursor {
        DiscoverCursor::encode(CS_CURSOR_KIND, self.options.clock.now_ms(), &CsCursor { channels, schema, files })
    }
}

/// Highest revision per url across files.
fn union<'a>(states: impl Iterator<Item = &'a FileState>) -> BTreeMap<ObjectUrl, u64> {
    let mut out = BTreeMap::new();
    for s in states {
        for (url, rev) in &s.matched {
            let e = out.entry(url.clone()).or_insert(*rev);
            *e = (*e).max(*rev);
        }
    }
    out
}

impl Graffiti for CsClient {
    fn login(&self, request: &LoginRequest) -> Result<Session> {
        let handle = request
            .handle
            .as_deref()
            .ok_or_else(|| GraffitiError::InvalidRequest("login needs a handle".into()))?;
        let adapter = self.provider.open(handle, request.secret.as_deref().unwrap_or(""))?;
        prove_write(&*adapter)?;
        let actor = ActorUri::new(adapter.public_url(""))?;
        let token = session_token(handle, request.secret.as_deref().unwrap_or(""));
        self.sessions().live.insert(token.clone(), (actor.clone(), adapter));
        Ok(Session { actor, credential: Credential::new(token), home: Home::new(Scheme::Cs, None) })
    }

    fn logout(&self, session: &Session) -> Result<()> {
        let mut sessions = self.sessions();
        let key = session.credential.expose();
        if sessions.live.remove(key).is_some() {
            sessions.revoked.insert(key.to_string());
        }
        Ok(())
    }

    fn put(&self, mut base: ObjectBase, session: &Session) -> Result<GraffitiObject> {
        let (actor, adapter) = self.authenticate(session)?;
        if base.allowed.is_some() {
            return Err(GraffitiError::UnsupportedAllowed);
        }
        let target = base.url.take();
        check_base(&base)?;
        let mut guard = self.writes.lock().expect("write lock");
        match target {
            None => {
                let index = self.load_index(&actor, adapter.as_ref())?;
                let url = cs_url(&adapter.public_url(INDEX_PATH), &uuid::Uuid::new_v4().to_string())?;
                let object = GraffitiObject { value: base.value, url, actor, channels: base.channels, allowed: None, revision: 0 };
                let now = self.tick(&mut guard);
                self.commit(adapter.as_ref(), index, None, Some(object.clone()), now)?;
                Ok(object)
            }
            Some(url) => {
                if url.scheme() != Scheme::Cs {
                    return Err(GraffitiError::NotFound);
                }
                let (index, pos) = self.owned(&url, &actor, adapter.as_ref())?;
                let before = index.objects[pos].object.clone();
                let object = GraffitiObject {
                    value: base.value,
                    url,
                    actor,
                    channels: base.channels,
                    allowed: None,
                    revision: before.revision + 1,
                };
                let now = self.tick(&mut guard);
                self.commit(adapter.as_ref(), index, Some(&before), Some(object.clone()), now)?;
                Ok(object)
            }
        }
    }

    fn get(&self, url: &ObjectUrl, schema: &SchemaDoc, session: Option<&Session>) -> Result<GraffitiObject> {
        let viewer = self.viewer(session)?;
        let matcher = schema.compile()?;
        if url.scheme() != Scheme::Cs {
            return Err(GraffitiError::NotFound);
        }
        let (blob, _) = cs_parts(url)?;
        self.fetch_index(&blob)?
            .and_then(|index| index.objects.into_iter().find(|e| e.object.url == *url))
            .and_then(|e| project(&e.object, &[], &matcher, viewer.as_ref()))
            .ok_or(GraffitiError::NotFound)
    }

    fn patch(&self, url: &ObjectUrl, patch: &Patch, session: &Session) -> Result<GraffitiObject> {
        let (actor, adapter) = self.authenticate(session)?;
        let mut guard = self.writes.lock().expect("write lock");
        let (index, pos) = self.owned(url, &actor, adapter.as_ref())?;
        let before = index.objects[pos].object.clone();
        let mut object = apply_patch(&before, patch)?;
        if object.allowed.is_some() {
            return Err(GraffitiError::UnsupportedAllowed);
        }
        object.revision = before.revision + 1;
        let now = self.tick(&mut guard);
        self.commit(adapter.as_ref(), index, Some(&before), Some(object.clone()), now)?;
        Ok(object)
    }

    fn delete(&self, url: &ObjectUrl, session: &Session) -> Result<()> {
        let (actor, adapter) = self.authenticate(session)?;
        let mut guard = self.writes.lock().expect("write lock");
        let (index, pos) = self.owned(url, &actor, adapter.as_ref())?;
        let before = index.objects[pos].object.clone();
        let now = self.tick(&mut guard);
        self.commit(adapter.as_ref(), index, Some(&before), None, now)
    }

    fn discover(
        &self,
        channels: &[ChannelName],
        schema: &SchemaDoc,
        session: Option<&Session>,
    ) -> Result<PullStream<GraffitiObject>> {
        check_query_channels(channels)?;
        let matcher = schema.compile()?;
        let viewer = self.viewer(session)?;
        let channels = dedup_channels(channels);
        let mut warnings = Vec::new();
        let mut files = BTreeMap::new();
        let mut items: BTreeMap<ObjectUrl, GraffitiObject> = BTreeMap::new();
        for (file_url, view) in self.snapshot(&channels, &matcher, viewer.as_ref())? {
            match view {
                Err(w) => warnings.push(w),
                Ok(view) => {
                    for o in view.objects {
                        if items.get(&o.url).is_none_or(|prev| prev.revision < o.revision) {
                            items.insert(o.url.clone(), o);
                        }
                    }
                    files.insert(file_url, view.state);
                }
            }
        }
        let cursor = self.cursor(channels, schema.clone(), files);
        Ok(events(warnings, items.into_values().collect(), Some(cursor)))
    }

    fn continue_discover(&self, cursor: &DiscoverCursor, session: Option<&Session>) -> Result<PullStream<DiscoverDelta>> {
        let body: CsCursor = cursor.decode(CS_CURSOR_KIND)?;
        let viewer = self.viewer(session)?;
        let now = self.options.clock.now_ms();
        cursor.check_fresh(now, self.options.retention_ms)?;
        let matcher = body.schema.compile()?;
        let mut warnings = Vec::new();
        let mut files = BTreeMap::new();
        let mut current: BTreeMap<ObjectUrl, GraffitiObject> = BTreeMap::new();
        let mut deleted_at: BTreeMap<ObjectUrl, u64> = BTreeMap::new();
        for (file_url, view) in self.snapshot(&body.channels, &matcher, viewer.as_ref())? {
            match view {
                Err(w) => {
                    warnings.push(w);
                    if let Some(old) = body.files.get(&file_url) {
                        files.insert(file_url, old.clone());
                    }
                }
                Ok(view) => {
                    for t in view.tombstones {
                        let e = deleted_at.entry(t.url).or_insert(t.deleted_at);
                        *e = (*e).max(t.deleted_at);
                    }
                    for o in view.objects {
                        if current.get(&o.url).is_none_or(|prev| prev.revision < o.revision) {
                            current.insert(o.url.clone(), o);
                        }
                    }
                    files.insert(file_url, view.state);
                }
            }
        }
        let before = union(body.files.values());
        let after = union(files.values());
        let mut deltas = Vec::new();
        for (url, rev) in &after {
            if before.get(url) != Some(rev) {
                if let Some(o) = current.remove(url) {
                    deltas.push(DiscoverDelta::Object(o));
                }
            }
        }
        for url in before.keys().filter(|u| !after.contains_key(*u)) {
            let at = deleted_at.get(url).copied().unwrap_or(now);
            deltas.push(DiscoverDelta::Tombstone(Tombstone { url: url.clone(), deleted_at: at }));
        }
        let next = self.cursor(body.channels, body.schema, files);
        Ok(events(warnings, deltas, Some(next)))
    }

    fn recover_orphans(&self, schema: &SchemaDoc, session: &Session) -> Result<PullStream<GraffitiObject>> {
        let (actor, adapter) = self.authenticate(session)?;
        let matcher = schema.compile()?;
        let index = self.load_index(&actor, adapter.as_ref())?;
        let items = index
            .objects
            .into_iter()
            .map(|e| e.object)
            .filter(|o| o.channels.is_empty() && matcher.matches(o))
            .collect();
        Ok(events(Vec::new(), items, None))
    }

    fn channel_stats(&self, session: &Session) -> Result<PullStream<ChannelStat>> {
        let (actor, adapter) = self.authenticate(session)?;
        let index = self.load_index(&actor, adapter.as_ref())?;
        let mut stats: BTreeMap<ChannelName, (u64, u64)> = BTreeMap::new();
        for e in &index.objects {
            for c in &e.object.channels {
                let s = stats.entry(c.clone()).or_default();
                s.0 += 1;
                s.1 = s.1.max(e.modified_at);
            }
        }
        let items = stats
            .into_iter()
            .map(|(channel, (count, last_modified))| ChannelStat { channel, count, last_modified })
            .collect();
        Ok(events(Vec::new(), items, None))
    }
}
