use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::path::PathBuf;
use std::sync::{Arc, Mutex, MutexGuard};

use rand::RngCore;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use super::{remote_actor, SERVER_CURSOR_KIND};
use crate::api::{check_query_channels, DiscoverCursor, DiscoverDelta, DEFAULT_RETENTION_MS};
use crate::clock::{self, Clock};
use crate::error::{GraffitiError, Result};
use crate::model::{ActorUri, ChannelName, ObjectBase, ObjectUrl, Patch, Scheme};
use crate::schema::SchemaDoc;
use crate::store::{ObjectStore, StoreOptions};
use crate::transport::{Handler, Request, Response};

#[derive(Debug, Clone)]
pub struct ServerConfig {
    /// Public authority (`host[:port]`) embedded in urls and actor ids.
    pub origin: String,
    /// Data directory; `None` keeps everything in memory.
    pub data_path: Option<PathBuf>,
    pub token_ttl_ms: u64,
    pub retention_ms: u64,
    /// When set, `/register` requires this code.
    pub invite_code: Option<String>,
    pub clock: Arc<dyn Clock>,
}

impl ServerConfig {
    pub fn new(origin: &str) -> Self {
        ServerConfig {
            origin: origin.to_string(),
            data_path: None,
            token_ttl_ms: 24 * 60 * 60 * 1000,
            retention_ms: DEFAULT_RETENTION_MS,
            invite_code: None,
            clock: clock::system(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Account {
    salt: String,
    hash: String,
    actor: ActorUri,
}

#[derive(Debug)]
struct Token {
    actor: ActorUri,
    expires_at: u64,
}

#[derive(Debug, Default)]
struct Tokens {
    live: HashMap<String, Token>,
    revoked: HashSet<String>,
}

/// One federated server: accounts, bearer tokens and an object store,
/// exposed over the HTTP wire protocol through [`Handler`].
#[derive(Debug)]
pub struct RemoteServer {
    config: ServerConfig,
    store: ObjectStore,
    accounts: Mutex<BTreeMap<String, Account>>,
    tokens: Mutex<Tokens>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Credentials {
    handle: String,
    secret: String,
    #[serde(default)]
    invite: Option<String>,
}

#[derive(Deserialize)]
struct DiscoverBody {
    channels: Vec<ChannelName>,
    #[serde(default)]
    schema: SchemaDoc,
    #[serde(default)]
    cursor: Option<String>,
}

#[derive(Deserialize)]
struct OrphansBody {
    #[serde(default)]
    schema: SchemaDoc,
}

#[derive(Serialize, Deserialize)]
struct CursorBody {
    seq: u64,
    filter: String,
}

fn storage(e: impl std::fmt::Display) -> GraffitiError {
    GraffitiError::StorageUnavailable(e.to_string())
}

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|e| e.into_inner())
}

fn hash_secret(salt: &str, secret: &str) -> String {
    let mut h = Sha256::new();
    h.update(salt.as_bytes());
    h.update(secret.as_bytes());
    hex::encode(h.finalize())
}

fn filter_hash(channels: &[ChannelName], schema: &SchemaDoc) -> String {
    let canonical = serde_json::to_vec(&json!({"channels": channels, "schema": schema})).expect("serializable");
    hex::encode(Sha256::digest(canonical))
}

fn valid_handle(handle: &str) -> bool {
    !handle.is_empty()
        && handle.len() <= 64
        && handle.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '.' | '_' | '-'))
}

impl RemoteServer {
    pub fn open(config: ServerConfig) -> Result<Self> {
        let (journal, accounts) = match &config.data_path {
            Some(dir) => {
                fs::create_dir_all(dir).map_err(storage)?;
                let accounts = match fs::read(dir.join("accounts.json")) {
                    Ok(bytes) => serde_json::from_slice(&bytes).map_err(storage)?,
                    Err(e) if e.kind() == std::io::ErrorKind::NotFound => BTreeMap::new(),
                    Err(e) => return Err(storage(e)),
                };
                (Some(dir.join("objects.log")), accounts)
            }
            None => (None, BTreeMap::new()),
        };
        let store = ObjectStore::open(StoreOptions {
            path: journal,
            retention_ms: config.retention_ms,
            clock: config.clock.clone(),
        })?;
        Ok(RemoteServer { config, store, accounts: Mutex::new(accounts), tokens: Mutex::new(Tokens::default()) })
    }

    pub fn in_memory(origin: &str) -> Self {
        RemoteServer::open(ServerConfig::new(origin)).expect("in-memory servers cannot fail to open")
    }

    pub fn origin(&self) -> &str {
        &self.config.origin
    }

    pub fn store(&self) -> &ObjectStore {
        &self.store
    }

    fn save_accounts(&self, accounts: &BTreeMap<String, Account>) -> Result<()> {
        let Some(dir) = &self.config.data_path else { return Ok(()) };
        let path = dir.join("accounts.json");
        let tmp = dir.join("accounts.json.tmp");
        fs::write(&tmp, serde_json::to_vec_pretty(accounts).map_err(storage)?).map_err(storage)?;
        fs::rename(&tmp, &path).map_err(storage)
    }

    pub fn register(&self, handle: &str, secret: &str) -> Result<ActorUri> {
        if !valid_handle(handle) {
            return Err(GraffitiError::InvalidRequest(format!("invalid handle {handle:?}")));
        }
        if secret.is_empty() {
            return Err(GraffitiError::InvalidRequest("secret must not be empty".into()));
        }
        let mut accounts = lock(&self.accounts);
        if accounts.contains_key(handle) {
            return Err(GraffitiError::HandleTaken);
        }
        let mut salt = [0u8; 16];
        rand::thread_rng().fill_bytes(&mut salt);
        let salt = hex::encode(salt);
        let actor = remote_actor(&self.config.origin, handle)?;
        accounts.insert(
            handle.to_string(),
            Account { hash: hash_secret(&salt, secret), salt, actor: actor.clone() },
        );
        self.save_accounts(&accounts)?;
        Ok(actor)
    }

    /// Returns `(token, actor, expiresAt)`.
    pub fn login(&self, handle: &str, secret: &str) -> Result<(String, ActorUri, u64)> {
        let actor = {
            let accounts = lock(&self.accounts);
            match accounts.get(handle) {
                Some(a) if hash_secret(&a.salt, secret) == a.hash => a.actor.clone(),
                _ => return Err(GraffitiError::AuthFailed),
            }
        };
        let token = uuid::Uuid::new_v4().simple().to_string();
        let expires_at = self.config.clock.now_ms() + self.config.token_ttl_ms;
        lock(&self.tokens).live.insert(token.clone(), Token { actor: actor.clone(), expires_at });
        Ok((token, actor, expires_at))
    }

    fn authenticate(&self, req: &Request) -> Result<ActorUri> {
        let token = req.bearer_token().ok_or(GraffitiError::AuthFailed)?;
        let mut tokens = lock(&self.tokens);
        if tokens.revoked.contains(token) {
            return Err(GraffitiError::SessionRevoked);
        }
        let now = self.config.clock.now_ms();
        match tokens.live.get(token) {
            Some(t) if now < t.expires_at => Ok(t.actor.clone()),
            Some(_) => {
                tokens.live.remove(token);
                Err(GraffitiError::AuthFailed)
            }
            None => Err(GraffitiError::AuthFailed),
        }
    }

    fn viewer(&self, req: &Request) -> Result<Option<ActorUri>> {
        if req.get_header("Authorization").is_some() {
            self.authenticate(req).map(Some)
        } else {
            Ok(None)
        }
    }

    fn object_url(&self, id: &str) -> Result<ObjectUrl> {
        if id.is_empty() || id.contains('/') {
            return Err(GraffitiError::NotFound);
        }
        ObjectUrl::new(Scheme::Remote, format!("{}/{id}", self.config.origin)).map_err(|_| GraffitiError::NotFound)
    }

    fn route(&self, req: Request) -> Result<Response> {
        let path = req.path_only().to_string();
        match (req.method.as_str(), path.as_str()) {
            ("POST", "/register") => {
                let c: Credentials = req.parse_json()?;
                if self.config.invite_code.is_some() && c.invite != self.config.invite_code {
                    return Err(GraffitiError::NotAuthorized);
                }
                let actor = self.register(&c.handle, &c.secret)?;
                Ok(Response::json(201, &json!({"actor": actor})))
            }
            ("POST", "/login") => {
                let c: Credentials = req.parse_json().map_err(|_| GraffitiError::AuthFailed)?;
                let (token, actor, expires_at) = self.login(&c.handle, &c.secret)?;
                Ok(Response::json(200, &json!({"token": token, "actor": actor, "expiresAt": expires_at})))
            }
            ("POST", "/logout") => {
                let token = req.bearer_token().ok_or(GraffitiError::AuthFailed)?.to_string();
                let mut tokens = lock(&self.tokens);
                if tokens.live.remove(&token).is_some() {
                    tokens.revoked.insert(token);
                }
                Ok(Response::empty(204))
            }
            ("POST", "/objects") => {
                let actor = self.authenticate(&req)?;
                let base = parse_base(&req)?;
                if base.url.is_some() {
                    return Err(GraffitiError::InvalidRequest("use PUT /objects/<id> to replace".into()));
                }
                let url = self.object_url(&uuid::Uuid::new_v4().simple().to_string())?;
                let object = self.store.create(url, &actor, base)?;
                Ok(Response::json(201, &object))
            }
            ("POST", "/discover") => self.discover(&req),
            ("POST", "/recover-orphans") => {
                let actor = self.authenticate(&req)?;
                let body: OrphansBody = req.parse_json()?;
                let matcher = body.schema.compile()?;
                let lines = self
                    .store
                    .orphans(&actor, &matcher)
                    .into_iter()
                    .map(|o| delta_line(DiscoverDelta::Object(o)))
                    .chain(std::iter::once(json!({"type": "end"})));
                Ok(Response::ndjson(lines.collect::<Vec<_>>().into_iter()))
            }
            ("GET", "/channel-stats") => {
                let actor = self.authenticate(&req)?;
                let lines: Vec<Value> = self
                    .store
                    .channel_stats(&actor)
                    .into_iter()
                    .map(|s| json!({"type": "stat", "channel": s.channel, "count": s.count, "lastModified": s.last_modified}))
                    .chain(std::iter::once(json!({"type": "end"})))
                    .collect();
                Ok(Response::ndjson(lines.into_iter()))
            }
            (method, p) if p.starts_with("/objects/") => {
                let url = self.object_url(&p["/objects/".len()..])?;
                match method {
                    "GET" => {
                        let viewer = self.viewer(&req)?;
                        let schema = match req.query("schema") {
                            Some(text) => SchemaDoc::new(
                                serde_json::from_str(&text)
                                    .map_err(|e| GraffitiError::InvalidRequest(format!("schema is not JSON: {e}")))?,
                            ),
                            None => SchemaDoc::any(),
                        };
                        let matcher = schema.compile()?;
                        Ok(Response::json(200, &self.store.get(&url, &matcher, viewer.as_ref())?))
                    }
                    "PUT" => {
                        let actor = self.authenticate(&req)?;
                        let mut base = parse_base(&req)?;
                        base.url = None;
                        Ok(Response::json(200, &self.store.replace(&url, &actor, base)?))
                    }
                    "PATCH" => {
                        let actor = self.authenticate(&req)?;
                        let value: Value = req.parse_json()?;
                        let patch = Patch::from_json(value)?;
                        Ok(Response::json(200, &self.store.patch(&url, &actor, &patch)?))
                    }
                    "DELETE" => {
                        let actor = self.authenticate(&req)?;
                        self.store.delete(&url, &actor)?;
                        Ok(Response::empty(204))
                    }
                    _ => Err(GraffitiError::InvalidRequest(format!("method {method} not allowed"))),
                }
            }
            _ => Err(GraffitiError::NotFound),
        }
    }

    fn discover(&self, req: &Request) -> Result<Response> {
        let viewer = self.viewer(req)?;
        let body: DiscoverBody = req.parse_json()?;
        check_query_channels(&body.channels)?;
        let matcher = body.schema.compile()?;
        let filter = filter_hash(&body.channels, &body.schema);
        let (lines, seq, at): (Vec<Value>, u64, u64) = match &body.cursor {
            None => {
                let snap = self.store.discover(&body.channels, &matcher, viewer.as_ref());
                let lines = snap.items.into_iter().map(|o| delta_line(DiscoverDelta::Object(o))).collect();
                (lines, snap.seq, snap.at)
            }
            Some(token) => {
                let cursor: DiscoverCursor = token.parse()?;
                let prev: CursorBody = cursor.decode(SERVER_CURSOR_KIND)?;
                if prev.filter != filter {
                    return Err(GraffitiError::InvalidCursor("cursor was issued for a different query".into()));
                }
                self.store.check_cursor_age(cursor.issued_at())?;
                let snap = self.store.changes_since(prev.seq, &body.channels, &matcher, viewer.as_ref())?;
                (snap.items.into_iter().map(delta_line).collect(), snap.seq, snap.at)
            }
        };
        let cursor = DiscoverCursor::encode(SERVER_CURSOR_KIND, at, &CursorBody { seq, filter });
        let trailer = json!({"type": "cursor", "cursor": cursor.to_string()});
        Ok(Response::ndjson(lines.into_iter().chain(std::iter::once(trailer))))
    }
}

fn parse_base(req: &Request) -> Result<ObjectBase> {
    serde_json::from_slice(&req.body).map_err(|e| GraffitiError::ShapeInvalid(vec![e.to_string()]))
}

fn delta_line(delta: DiscoverDelta) -> Value {
    serde_json::to_value(delta).expect("deltas serialize")
}

impl Handler for RemoteServer {
    fn handle(&self, request: Request) -> Response {
        match self.route(request) {
            Ok(r) => r,
            Err(e) => Response::error(&e),
        }
    }
}
