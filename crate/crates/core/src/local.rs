//! Single-process implementation serving `graffiti:local:` urls.
//!
//! Logging in needs no credentials: any handle gets the actor
//! `graffiti:local:actor/<handle>`. Objects never leave the device.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::api::{
    check_query_channels, ChannelStat, Credential, DiscoverCursor, DiscoverDelta, Graffiti, Home, LoginRequest,
    PullStream, Session, DEFAULT_RETENTION_MS,
};
use crate::clock::{self, Clock};
use crate::error::{GraffitiError, Result};
use crate::model::{ActorUri, ChannelName, GraffitiObject, ObjectBase, ObjectUrl, Patch, Scheme};
use crate::schema::SchemaDoc;
use crate::store::{ObjectStore, StoreOptions};

const CURSOR_KIND: &str = "local";

#[derive(Debug, Clone)]
pub struct LocalOptions {
    /// Data directory; `None` keeps everything in memory.
    pub path: Option<PathBuf>,
    pub retention_ms: u64,
    pub clock: Arc<dyn Clock>,
}

impl Default for LocalOptions {
    fn default() -> Self {
        LocalOptions { path: None, retention_ms: DEFAULT_RETENTION_MS, clock: clock::system() }
    }
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct Sessions {
    live: HashMap<String, ActorUri>,
    revoked: HashSet<String>,
}

#[derive(Debug)]
pub struct LocalGraffiti {
    store: ObjectStore,
    sessions: Mutex<Sessions>,
    sessions_path: Option<PathBuf>,
}

#[derive(Serialize, Deserialize)]
struct CursorBody {
    seq: u64,
    channels: Vec<ChannelName>,
    schema: SchemaDoc,
}

pub fn local_actor(handle: &str) -> Result<ActorUri> {
    if handle.is_empty() || handle.chars().any(|c| c.is_whitespace() || c == '/') {
        return Err(GraffitiError::InvalidRequest(format!("invalid handle {handle:?}")));
    }
    ActorUri::new(format!("graffiti:local:actor/{handle}"))
}

impl LocalGraffiti {
    pub fn in_memory() -> Self {
        LocalGraffiti::open(LocalOptions::default()).expect("in-memory stores cannot fail to open")
    }

    pub fn open_dir(path: impl AsRef<Path>) -> Result<Self> {
        LocalGraffiti::open(LocalOptions { path: Some(path.as_ref().to_path_buf()), ..Default::default() })
    }

    pub fn open(options: LocalOptions) -> Result<Self> {
        let storage = |e: std::io::Error| GraffitiError::StorageUnavailable(e.to_string());
        let (journal, sessions_path, sessions) = match &options.path {
            Some(dir) => {
                fs::create_dir_all(dir).map_err(storage)?;
                let sessions_path = dir.join("sessions.json");
                let sessions = match fs::read(&sessions_path) {
                    Ok(bytes) => serde_json::from_slice(&bytes)
                        .map_err(|e| GraffitiError::StorageUnavailable(e.to_string()))?,
                    Err(e) if e.kind() == std::io::ErrorKind::NotFound => Sessions::default(),
                    Err(e) => return Err(storage(e)),
                };
                (Some(dir.join("objects.log")), Some(sessions_path), sessions)
            }
            None => (None, None, Sessions::default()),
        };
        let store = ObjectStore::open(StoreOptions {
            path: journal,
            retention_ms: options.retention_ms,
            clock: options.clock,
        })?;
        Ok(LocalGraffiti { store, sessions: Mutex::new(sessions), sessions_path })
    }

    pub fn store(&self) -> &ObjectStore {
        &self.store
    }

    fn sessions(&self) -> std::sync::MutexGuard<'_, Sessions> {
        self.sessions.lock().unwrap_or_else(|e| e.into_inner())
    }

    fn save_sessions(&self, sessions: &Sessions) -> Result<()> {
        let Some(path) = &self.sessions_path else { return Ok(()) };
        let tmp = path.with_extension("tmp");
        let bytes = serde_json::to_vec(sessions).expect("sessions serialize");
        fs::write(&tmp, bytes)
            .and_then(|_| fs::rename(&tmp, path))
            .map_err(|e| GraffitiError::StorageUnavailable(e.to_string()))
    }

    fn authenticate(&self, session: &Session) -> Result<ActorUri> {
        let sessions = self.sessions();
        let key = session.credential.expose();
        match sessions.live.get(key) {
            Some(actor) if *actor == session.actor => Ok(actor.clone()),
            Some(_) => Err(GraffitiError::AuthFailed),
            None if sessions.revoked.contains(key) => Err(GraffitiError::SessionRevoked),
            None => Err(GraffitiError::AuthFailed),
        }
    }

    fn viewer(&self, session: Option<&Session>) -> Result<Option<ActorUri>> {
        session.map(|s| self.authenticate(s)).transpose()
    }
}

impl Graffiti for LocalGraffiti {
    fn login(&self, request: &LoginRequest) -> Result<Session> {
        let handle = request
            .handle
            .as_deref()
            .ok_or_else(|| GraffitiError::InvalidRequest("login needs a handle".into()))?;
        let actor = local_actor(handle)?;
        let token = uuid::Uuid::new_v4().to_string();
        let mut sessions = self.sessions();
        sessions.live.insert(token.clone(), actor.clone());
        self.save_sessions(&sessions)?;
        Ok(Session { actor, credential: Credential::new(token), home: Home::new(Scheme::Local, None) })
    }

    fn logout(&self, session: &Session) -> Result<()> {
        let mut sessions = self.sessions();
        let key = session.credential.expose();
        if sessions.live.remove(key).is_some() {
            sessions.revoked.insert(key.to_string());
            self.save_sessions(&sessions)?;
        }
        Ok(())
    }

    fn put(&self, base: ObjectBase, session: &Session) -> Result<GraffitiObject> {
        let actor = self.authenticate(session)?;
        match base.url.clone() {
            None => {
                let url = ObjectUrl::new(Scheme::Local, uuid::Uuid::new_v4().to_string())?;
                self.store.create(url, &actor, base)
            }
            Some(url) if url.scheme() == Scheme::Local => self.store.replace(&url, &actor, base),
            Some(_) => Err(GraffitiError::NotFound),
        }
    }

    fn get(&self, url: &ObjectUrl, schema: &SchemaDoc, session: Option<&Session>) -> Result<GraffitiObject> {
        let viewer = self.viewer(session)?;
        let matcher = schema.compile()?;
        self.store.get(url, &matcher, viewer.as_ref())
    }

    fn patch(&self, url: &ObjectUrl, patch: &Patch, session: &Session) -> Result<GraffitiObject> {
        let actor = self.authenticate(session)?;
        self.store.patch(url, &actor, patch)
    }

    fn delete(&self, url: &ObjectUrl, session: &Session) -> Result<()> {
        let actor = self.authenticate(session)?;
        self.store.delete(url, &actor)
    }

    fn discover(
        &self,
        channels: &[ChannelName],
        schema: &SchemaDoc,
        session: Option<&Session>,
    ) -> Result<PullStream<GraffitiObject>> {
        check_query_channels(channels)?;
        let viewer = self.viewer(session)?;
        let matcher = schema.compile()?;
        let snap = self.store.discover(channels, &matcher, viewer.as_ref());
        let body = CursorBody { seq: snap.seq, channels: channels.to_vec(), schema: schema.clone() };
        let cursor = DiscoverCursor::encode(CURSOR_KIND, snap.at, &body);
        Ok(PullStream::from_items(snap.items, Some(cursor)))
    }

    fn continue_discover(&self, cursor: &DiscoverCursor, session: Option<&Session>) -> Result<PullStream<DiscoverDelta>> {
        let body: CursorBody = cursor.decode(CURSOR_KIND)?;
        self.store.check_cursor_age(cursor.issued_at())?;
        let viewer = self.viewer(session)?;
        let matcher = body.schema.compile()?;
        let snap = self.store.changes_since(body.seq, &body.channels, &matcher, viewer.as_ref())?;
        let next = CursorBody { seq: snap.seq, ..body };
        let cursor = DiscoverCursor::encode(CURSOR_KIND, snap.at, &next);
        Ok(PullStream::from_items(snap.items, Some(cursor)))
    }

    fn recover_orphans(&self, schema: &SchemaDoc, session: &Session) -> Result<PullStream<GraffitiObject>> {
        let actor = self.authenticate(session)?;
        let matcher = schema.compile()?;
        Ok(PullStream::from_items(self.store.orphans(&actor, &matcher), None))
    }

    fn channel_stats(&self, session: &Session) -> Result<PullStream<ChannelStat>> {
        let actor = self.authenticate(session)?;
        Ok(PullStream::from_items(self.store.channel_stats(&actor), None))
    }
}
