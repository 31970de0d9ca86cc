//! The abstract API every back-end implements.

mod cursor;
mod stream;

use std::fmt;

use serde::{Deserialize, Serialize};

pub use cursor::DiscoverCursor;
pub use stream::{merge_streams, Collected, PullStream, StreamItem, Warning};

use crate::error::{GraffitiError, Result};
use crate::model::{
    ActorUri, ChannelName, GraffitiObject, ObjectBase, ObjectUrl, Patch, Scheme, Tombstone,
};
use crate::schema::SchemaDoc;

/// Maximum number of channels in one discover call.
pub const MAX_QUERY_CHANNELS: usize = 64;

/// Default tombstone retention, which is also how long cursors stay valid.
pub const DEFAULT_RETENTION_MS: u64 = 30 * 24 * 60 * 60 * 1000;

/// Opaque proof of login. Applications never look inside `credential`.
#[derive(Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Session {
    pub actor: ActorUri,
    #[serde(rename = "token")]
    pub credential: Credential,
    pub home: Home,
}

impl fmt::Debug for Session {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Session")
            .field("actor", &self.actor)
            .field("home", &self.home)
            .finish_non_exhaustive()
    }
}

#[derive(Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Credential(String);

impl Credential {
    pub fn new(secret: impl Into<String>) -> Self {
        Credential(secret.into())
    }

    pub fn expose(&self) -> &str {
        &self.0
    }
}

impl fmt::Debug for Credential {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("Credential(..)")
    }
}

/// Which implementation (and, for federated ones, which server) issued a
/// session: `local`, `remote:<authority>` or `cs`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Home(String);

impl Home {
    pub fn new(scheme: Scheme, locator: Option<&str>) -> Self {
        match locator {
            Some(l) => Home(format!("{scheme}:{l}")),
            None => Home(scheme.to_string()),
        }
    }

    pub fn scheme(&self) -> Option<Scheme> {
        self.0.split(':').next()?.parse().ok()
    }

    pub fn locator(&self) -> Option<&str> {
        self.0.split_once(':').map(|(_, l)| l)
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for Home {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Arguments to `login`. Which fields are needed depends on the back-end:
/// the local implementation only looks at `handle`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoginRequest {
    pub handle: Option<String>,
    pub secret: Option<String>,
    /// Implementation binding, e.g. `remote:pod.example.com`.
    pub home: Option<String>,
}

impl LoginRequest {
    pub fn handle(handle: &str) -> Self {
        LoginRequest { handle: Some(handle.to_string()), ..Default::default() }
    }

    pub fn with_secret(mut self, secret: &str) -> Self {
        self.secret = Some(secret.to_string());
        self
    }

    pub fn at(mut self, home: &str) -> Self {
        self.home = Some(home.to_string());
        self
    }
}

/// One element of a continuation stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum DiscoverDelta {
    Object(GraffitiObject),
    Tombstone(Tombstone),
}

impl DiscoverDelta {
    pub fn url(&self) -> &ObjectUrl {
        match self {
            DiscoverDelta::Object(o) => &o.url,
            DiscoverDelta::Tombstone(t) => &t.url,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelStat {
    pub channel: ChannelName,
    pub count: u64,
    #[serde(rename = "lastModified")]
    pub last_modified: u64,
}

/// The Graffiti API. Every back-end (local, remote, commodity storage and
/// the scheme router over them) implements this trait, and the
/// conformance suite in [`crate::conformance`] checks them against the
/// same contract.
///
/// Streams are single-consumer pull streams. `discover` yields objects and
/// ends with a cursor; `continue_discover` resumes from that cursor with
/// object and tombstone deltas.
pub trait Graffiti: Send + Sync {
    fn login(&self, request: &LoginRequest) -> Result<Session>;

    /// Idempotent. Later authenticated calls with the session fail with
    /// [`GraffitiError::SessionRevoked`].
    fn logout(&self, session: &Session) -> Result<()>;

    /// Creates an object (when `base.url` is absent) or replaces the value,
    /// channels and allowed list of an existing one.
    fn put(&self, base: ObjectBase, session: &Session) -> Result<GraffitiObject>;

    fn get(&self, url: &ObjectUrl, schema: &SchemaDoc, session: Option<&Session>) -> Result<GraffitiObject>;

    fn patch(&self, url: &ObjectUrl, patch: &Patch, session: &Session) -> Result<GraffitiObject>;

    fn delete(&self, url: &ObjectUrl, session: &Session) -> Result<()>;

    fn discover(
        &self,
        channels: &[ChannelName],
        schema: &SchemaDoc,
        session: Option<&Session>,
    ) -> Result<PullStream<GraffitiObject>>;

    fn continue_discover(
        &self,
        cursor: &DiscoverCursor,
        session: Option<&Session>,
    ) -> Result<PullStream<DiscoverDelta>>;

    fn recover_orphans(&self, schema: &SchemaDoc, session: &Session) -> Result<PullStream<GraffitiObject>>;

    fn channel_stats(&self, session: &Session) -> Result<PullStream<ChannelStat>>;
}

/// Shared precondition on discover channel lists.
pub fn check_query_channels(channels: &[ChannelName]) -> Result<()> {
    if channels.is_empty() {
        return Err(GraffitiError::InvalidRequest("discover needs at least one channel".into()));
    }
    if channels.len() > MAX_QUERY_CHANNELS {
        return Err(GraffitiError::TooManyChannels(channels.len()));
    }
    Ok(())
}

/// Channel list with duplicates removed, order kept.
pub(crate) fn dedup_channels(channels: &[ChannelName]) -> Vec<ChannelName> {
    let mut out: Vec<ChannelName> = Vec::with_capacity(channels.len());
    for c in channels {
        if !out.contains(c) {
            out.push(c.clone());
        }
    }
    out
}
