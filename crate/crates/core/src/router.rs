//! Meta-implementation: one [`Graffiti`] over several back-ends, routing
//! CRUD by url scheme and merging discovery across all of them.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::api::{
    merge_streams, ChannelStat, DiscoverCursor, DiscoverDelta, Graffiti, LoginRequest, PullStream, Session, Warning,
};
use crate::clock::{self, Clock};
use crate::commodity::{CsClient, CsOptions, FsProvider, HttpProvider, StorageProvider};
use crate::error::{GraffitiError, Result};
use crate::local::LocalGraffiti;
use crate::model::{ChannelName, GraffitiObject, ObjectBase, ObjectUrl, Patch, Scheme};
use crate::remote::{Registry, RemoteClient};
use crate::schema::SchemaDoc;
use crate::transport::{HttpTransport, Transport};

pub const CONFIG_ENV: &str = "GRAFFITI_CONFIG";
pub const META_CURSOR_KIND: &str = "meta";

#[derive(Serialize, Deserialize)]
struct MetaCursor {
    channels: Vec<ChannelName>,
    schema: SchemaDoc,
    parts: BTreeMap<String, Option<String>>,
}

/// Errors that mean the request itself is wrong, as opposed to one back-end
/// being unavailable.
fn is_fatal(e: &GraffitiError) -> bool {
    matches!(
        e,
        GraffitiError::InvalidRequest(_)
            | GraffitiError::TooManyChannels(_)
            | GraffitiError::Schema(_)
            | GraffitiError::CursorExpired
            | GraffitiError::InvalidCursor(_)
            | GraffitiError::AuthFailed
            | GraffitiError::SessionRevoked
    )
}

fn scheme_of(session: &Session) -> Result<Scheme> {
    session
        .home
        .scheme()
        .ok_or_else(|| GraffitiError::InvalidRequest(format!("session home {} names no scheme", session.home)))
}

pub struct MetaGraffiti {
    bindings: BTreeMap<Scheme, Arc<dyn Graffiti>>,
    default_scheme: Scheme,
    clock: Arc<dyn Clock>,
}

impl std::fmt::Debug for MetaGraffiti {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MetaGraffiti")
            .field("schemes", &self.bindings.keys().collect::<Vec<_>>())
            .field("default_scheme", &self.default_scheme)
            .finish()
    }
}

impl MetaGraffiti {
    pub fn new(default_scheme: Scheme) -> Self {
        MetaGraffiti { bindings: BTreeMap::new(), default_scheme, clock: clock::system() }
    }

    pub fn with_clock(mut self, clock: Arc<dyn Clock>) -> Self {
        self.clock = clock;
        self
    }

    pub fn register(&mut self, scheme: Scheme, implementation: Arc<dyn Graffiti>) -> Result<()> {
        if self.bindings.contains_key(&scheme) {
            return Err(GraffitiError::SchemeConflict(scheme.to_string()));
        }
        self.bindings.insert(scheme, implementation);
        Ok(())
    }

    pub fn schemes(&self) -> Vec<Scheme> {
        self.bindings.keys().copied().collect()
    }

    pub fn default_scheme(&self) -> Scheme {
        self.default_scheme
    }

    fn bound(&self, scheme: Scheme) -> Result<&Arc<dyn Graffiti>> {
        self.bindings.get(&scheme).ok_or_else(|| GraffitiError::UnknownScheme(scheme.to_string()))
    }

    /// The session if it belongs to `scheme`, otherwise anonymous.
    fn session_for<'a>(&self, scheme: Scheme, session: Option<&'a Session>) -> Option<&'a Session> {
        session.filter(|s| s.home.scheme() == Some(scheme))
    }

    /// A mutation by a session from another scheme: the caller cannot own
    /// the object, so answer as its implementation would to a stranger.
    fn foreign(&self, implementation: &dyn Graffiti, url: &ObjectUrl) -> GraffitiError {
        match implementation.get(url, &SchemaDoc::any(), None) {
            Ok(_) => GraffitiError::NotAuthorized,
            Err(e) => e,
        }
    }

    fn owner_call<T>(
        &self,
        url: &ObjectUrl,
        session: &Session,
        call: impl FnOnce(&dyn Graffiti) -> Result<T>,
    ) -> Result<T> {
        let implementation = self.bound(url.scheme())?;
        if scheme_of(session)? != url.scheme() {
            return Err(self.foreign(implementation.as_ref(), url));
        }
        call(implementation.as_ref())
    }

    fn fan_out<T: Send + 'static>(
        &self,
        channels: &[ChannelName],
        schema: &SchemaDoc,
        parts: Vec<(Scheme, Result<PullStream<T>>)>,
        key: fn(&T) -> String,
    ) -> Result<PullStream<T>> {
        let mut streams = Vec::new();
        let mut warnings = Vec::new();
        let mut names = Vec::new();
        for (scheme, part) in parts {
            names.push(scheme.to_string());
            match part {
                Ok(s) => streams.push((scheme.to_string(), s)),
                Err(e) if is_fatal(&e) => return Err(e),
                Err(e) => warnings.push(Warning::new(scheme.to_string(), e.to_string())),
            }
        }
        let clock = self.clock.clone();
        let mut body = MetaCursor {
            channels: channels.to_vec(),
            schema: schema.clone(),
            parts: names.into_iter().map(|n| (n, None)).collect(),
        };
        Ok(merge_streams(streams, warnings, key, move |cursors| {
            for (name, cursor) in cursors {
                body.parts.insert(name, cursor.map(|c| c.to_string()));
            }
            Some(DiscoverCursor::encode(META_CURSOR_KIND, clock.now_ms(), &body))
        }))
    }
}

impl Graffiti for MetaGraffiti {
    /// `request.home` may start with a scheme (`remote:host`, `cs`); the
    /// default scheme is used otherwise.
    fn login(&self, request: &LoginRequest) -> Result<Session> {
        let scheme = match request.home.as_deref() {
            Some(home) => home.split(':').next().unwrap_or(home).parse().unwrap_or(self.default_scheme),
            None => self.default_scheme,
        };
        let implementation = self.bound(scheme).map_err(|_| GraffitiError::HomeUnavailable(format!("scheme {scheme} is not configured")))?;
        implementation.login(request)
    }

    fn logout(&self, session: &Session) -> Result<()> {
        self.bound(scheme_of(session)?)?.logout(session)
    }

    fn put(&self, base: ObjectBase, session: &Session) -> Result<GraffitiObject> {
        match base.url.clone() {
            Some(url) => self.owner_call(&url, session, |g| g.put(base, session)),
            None => {
                let scheme = scheme_of(session)?;
                let implementation = self
                    .bound(scheme)
                    .map_err(|_| GraffitiError::HomeUnavailable(format!("scheme {scheme} is not configured")))?;
                implementation.put(base, session)
            }
        }
    }

    fn get(&self, url: &ObjectUrl, schema: &SchemaDoc, session: Option<&Session>) -> Result<GraffitiObject> {
        self.bound(url.scheme())?.get(url, schema, self.session_for(url.scheme(), session))
    }

    fn patch(&self, url: &ObjectUrl, patch: &Patch, session: &Session) -> Result<GraffitiObject> {
        self.owner_call(url, session, |g| g.patch(url, patch, session))
    }

    fn delete(&self, url: &ObjectUrl, session: &Session) -> Result<()> {
        self.owner_call(url, session, |g| g.delete(url, session))
    }

    fn discover(
        &self,
        channels: &[ChannelName],
        schema: &SchemaDoc,
        session: Option<&Session>,
    ) -> Result<PullStream<GraffitiObject>> {
        if self.bindings.is_empty() {
            return Err(GraffitiError::InvalidRequest("no implementation is configured".into()));
        }
        let parts = self
            .bindings
            .iter()
            .map(|(scheme, g)| (*scheme, g.discover(channels, schema, self.session_for(*scheme, session))))
            .collect();
        self.fan_out(channels, schema, parts, |o: &GraffitiObject| o.url.to_string())
    }

    fn continue_discover(&self, cursor: &DiscoverCursor, session: Option<&Session>) -> Result<PullStream<DiscoverDelta>> {
        let body: MetaCursor = cursor.decode(META_CURSOR_KIND)?;
        let mut parts = Vec::new();
        for (name, token) in &body.parts {
            let scheme: Scheme = name.parse().map_err(|_| GraffitiError::InvalidCursor(format!("unknown scheme {name}")))?;
            let Ok(g) = self.bound(scheme) else { continue };
            let sub_session = self.session_for(scheme, session);
            let part = match token {
                Some(t) => t.parse::<DiscoverCursor>().and_then(|c| g.continue_discover(&c, sub_session)),
                None => g
                    .discover(&body.channels, &body.schema, sub_session)
                    .map(|s| s.map_items(DiscoverDelta::Object)),
            };
            parts.push((scheme, part));
        }
        self.fan_out(&body.channels, &body.schema, parts, |d: &DiscoverDelta| d.url().to_string())
    }

    fn recover_orphans(&self, schema: &SchemaDoc, session: &Session) -> Result<PullStream<GraffitiObject>> {
        self.bound(scheme_of(session)?)?.recover_orphans(schema, session)
    }

    fn channel_stats(&self, session: &Session) -> Result<PullStream<ChannelStat>> {
        self.bound(scheme_of(session)?)?.channel_stats(session)
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct LocalConfig {
    /// Data directory; in memory when absent.
    #[serde(default)]
    pub path: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct RemoteConfig {
    pub registry: Vec<String>,
    /// Use `http://` for every server, not just loopback ones.
    #[serde(default)]
    pub plain_http: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum StorageConfig {
    /// One subdirectory per handle under `root`.
    Fs { root: PathBuf },
    /// A static host accepting authenticated `PUT`.
    Http { host: String },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CsConfig {
    pub tracker: String,
    pub storage: StorageConfig,
    #[serde(default)]
    pub ttl: u64,
}

/// `{"default_scheme": ..., "local": {...}, "remote": {...}, "cs": {...}}`
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct MetaConfig {
    #[serde(default)]
    pub default_scheme: Option<String>,
    #[serde(default)]
    pub local: Option<LocalConfig>,
    #[serde(default)]
    pub remote: Option<RemoteConfig>,
    #[serde(default)]
    pub cs: Option<CsConfig>,
}

impl MetaConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| GraffitiError::InvalidRequest(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| GraffitiError::InvalidRequest(format!("bad config {}: {e}", path.display())))
    }

    /// The file named by `$GRAFFITI_CONFIG`, if set.
    pub fn from_env() -> Result<Option<Self>> {
        std::env::var_os(CONFIG_ENV).map(|p| MetaConfig::load(Path::new(&p))).transpose()
    }

    /// Binds every configured implementation. With nothing configured, an
    /// in-memory local implementation is bound.
    pub fn build(&self) -> Result<MetaGraffiti> {
        let default_scheme: Scheme = match &self.default_scheme {
            Some(s) => s.parse().map_err(|_| GraffitiError::InvalidRequest(format!("unknown default_scheme {s:?}")))?,
            None => Scheme::Local,
        };
        let mut meta = MetaGraffiti::new(default_scheme);
        let local = match (&self.local, self.remote.is_none() && self.cs.is_none()) {
            (Some(c), _) => Some(c.clone()),
            (None, true) => Some(LocalConfig::default()),
            (None, false) => None,
        };
        if let Some(c) = local {
            let g = match &c.path {
                Some(p) => LocalGraffiti::open_dir(p)?,
                None => LocalGraffiti::in_memory(),
            };
            meta.register(Scheme::Local, Arc::new(g))?;
        }
        if let Some(c) = &self.remote {
            let transport: Arc<dyn Transport> = Arc::new(HttpTransport::new(c.plain_http));
            meta.register(Scheme::Remote, Arc::new(RemoteClient::new(transport, Registry::new(&c.registry)?)))?;
        }
        if let Some(c) = &self.cs {
            let transport: Arc<dyn Transport> = Arc::new(HttpTransport::default());
            let provider: Arc<dyn StorageProvider> = match &c.storage {
                StorageConfig::Fs { root } => Arc::new(FsProvider::new(root)),
                StorageConfig::Http { host } => Arc::new(HttpProvider::new(transport.clone(), host)),
            };
            let options = CsOptions { ttl_secs: c.ttl, ..CsOptions::new(&c.tracker) };
            meta.register(Scheme::Cs, Arc::new(CsClient::new(transport, provider, options)))?;
        }
        if !meta.bindings.contains_key(&default_scheme) {
            return Err(GraffitiError::InvalidRequest(format!("default scheme {default_scheme} is not configured")));
        }
        Ok(meta)
    }
}
