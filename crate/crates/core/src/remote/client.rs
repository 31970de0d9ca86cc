use std::collections::{BTreeMap, HashSet};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{parse_ndjson, Registry, CLIENT_CURSOR_KIND};
use crate::api::{
    check_query_channels, merge_streams, ChannelStat, Credential, DiscoverCursor, DiscoverDelta, Graffiti, Home,
    LoginRequest, PullStream, Session, StreamItem, Warning,
};
use crate::clock::{self, Clock};
use crate::error::{GraffitiError, Result};
use crate::model::{is_visible_to, ActorUri, ChannelName, GraffitiObject, ObjectBase, ObjectUrl, Patch, Scheme};
use crate::schema::{CompiledMatcher, SchemaDoc};
use crate::transport::{Request, Response, Transport};

/// Client side of the federation. CRUD goes to the server named in the
/// url; discover goes to every server in the registry (or an explicit
/// list, see [`RemoteClient::discover_on`]).
///
/// A session's token is only ever sent to the server that issued it, so
/// on other servers the caller is anonymous.
pub struct RemoteClient {
    transport: Arc<dyn Transport>,
    registry: Registry,
    clock: Arc<dyn Clock>,
    verify: bool,
    violations: Arc<AtomicU64>,
    revoked: Mutex<HashSet<String>>,
}

impl std::fmt::Debug for RemoteClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RemoteClient").field("registry", &self.registry).finish_non_exhaustive()
    }
}

#[derive(Serialize, Deserialize)]
struct ClientCursor {
    channels: Vec<ChannelName>,
    schema: SchemaDoc,
    servers: BTreeMap<String, Option<String>>,
}

#[derive(Deserialize)]
struct LoginReply {
    token: String,
    actor: ActorUri,
}

#[derive(Deserialize)]
struct RegisterReply {
    actor: ActorUri,
}

fn remote_parts(url: &ObjectUrl) -> Result<(String, String)> {
    if url.scheme() != Scheme::Remote {
        return Err(GraffitiError::MalformedUrl(format!("{url} is not a remote url")));
    }
    url.remote_parts()
        .map(|(a, id)| (a.to_string(), id.to_string()))
        .ok_or_else(|| GraffitiError::MalformedUrl(url.to_string()))
}

/// A server answer that must abort the whole fan-out rather than become a
/// per-server warning.
fn is_fatal(e: &GraffitiError, authenticated: bool) -> bool {
    match e {
        GraffitiError::CursorExpired
        | GraffitiError::InvalidRequest(_)
        | GraffitiError::TooManyChannels(_)
        | GraffitiError::Schema(_)
        | GraffitiError::InvalidCursor(_) => true,
        GraffitiError::AuthFailed | GraffitiError::SessionRevoked => authenticated,
        _ => false,
    }
}

/// Why an object a server returned should not have been returned.
fn violation(
    o: &GraffitiObject,
    viewer: Option<&ActorUri>,
    channels: &[ChannelName],
    matcher: &CompiledMatcher,
) -> Option<String> {
    if !o.in_any_channel(channels) {
        return Some(format!("{} is in none of the queried channels", o.url));
    }
    if viewer != Some(&o.actor) {
        if o.channels.iter().any(|c| !channels.contains(c)) {
            return Some(format!("{} leaks unqueried channels", o.url));
        }
        if let Some(allowed) = &o.allowed {
            if viewer.is_none() || allowed.as_slice() != viewer.map(std::slice::from_ref).unwrap_or_default() {
                return Some(format!("{} leaks its allowed list", o.url));
            }
        }
    }
    if !is_visible_to(o, viewer) {
        return Some(format!("{} is not visible to the viewer", o.url));
    }
    if !matcher.matches(o) {
        return Some(format!("{} does not match the schema", o.url));
    }
    None
}

impl RemoteClient {
    pub fn new(transport: Arc<dyn Transport>, registry: Registry) -> Self {
        RemoteClient {
            transport,
            registry,
            clock: clock::system(),
            verify: false,
            violations: Arc::new(AtomicU64::new(0)),
            revoked: Mutex::new(HashSet::new()),
        }
    }

    pub fn with_clock(mut self, clock: Arc<dyn Clock>) -> Self {
        self.clock = clock;
        self
    }

    /// Re-check every discovered object against the query and access
    /// rules; offending objects are dropped and counted.
    pub fn with_verification(mut self, on: bool) -> Self {
        self.verify = on;
        self
    }

    pub fn violations(&self) -> u64 {
        self.violations.load(Ordering::SeqCst)
    }

    pub fn registry(&self) -> &Registry {
        &self.registry
    }

    pub fn transport(&self) -> &Arc<dyn Transport> {
        &self.transport
    }

    pub fn register(&self, authority: &str, handle: &str, secret: &str) -> Result<ActorUri> {
        let req = Request::new("POST", "/register").json(&json!({"handle": handle, "secret": secret}));
        let resp = self.call(authority, req).map_err(|e| home_error(authority, e))?;
        Ok(resp.into_json::<RegisterReply>()?.actor)
    }

    pub fn login_at(&self, authority: &str, handle: &str, secret: &str) -> Result<Session> {
        let req = Request::new("POST", "/login").json(&json!({"handle": handle, "secret": secret}));
        let resp = self.call(authority, req).map_err(|e| home_error(authority, e))?;
        let reply: LoginReply = resp.into_json()?;
        Ok(Session {
            actor: reply.actor,
            credential: Credential::new(reply.token),
            home: Home::new(Scheme::Remote, Some(authority)),
        })
    }

    fn call(&self, authority: &str, req: Request) -> Result<Response> {
        let resp = self.transport.send(authority, req)?;
        if resp.is_success() {
            Ok(resp)
        } else {
            Err(resp.into_error())
        }
    }

    /// The issuing server of a live session.
    fn home(&self, session: &Session) -> Result<String> {
        if self.revoked.lock().expect("revocation lock").contains(session.credential.expose()) {
            return Err(GraffitiError::SessionRevoked);
        }
        match (session.home.scheme(), session.home.locator()) {
            (Some(Scheme::Remote), Some(authority)) => Ok(authority.to_string()),
            _ => Err(GraffitiError::InvalidRequest(format!("session home {} is not a remote server", session.home))),
        }
    }

    fn token_for<'a>(&self, session: Option<&'a Session>, authority: &str) -> Result<Option<&'a str>> {
        match session {
            Some(s) if self.home(s)? == authority => Ok(Some(s.credential.expose())),
            _ => Ok(None),
        }
    }

    /// Mutation of an object on a server other than the session's home:
    /// the session cannot own it, so answer as that server would.
    fn foreign_mutation(&self, authority: &str, id: &str) -> GraffitiError {
        match self.call(authority, Request::new("GET", format!("/objects/{id}"))) {
            Ok(_) => GraffitiError::NotAuthorized,
            Err(e) => e,
        }
    }

    fn mutate(&self, url: &ObjectUrl, session: &Session, req: Request) -> Result<Response> {
        let home = self.home(session)?;
        let (authority, id) = remote_parts(url)?;
        if authority != home {
            return Err(self.foreign_mutation(&authority, &id));
        }
        let req = Request { path: format!("/objects/{id}"), ..req }.bearer(Some(session.credential.expose()));
        self.call(&authority, req).map_err(|e| home_error(&authority, e))
    }

    /// Discover over an explicit set of servers.
    pub fn discover_on(
        &self,
        servers: &[String],
        channels: &[ChannelName],
        schema: &SchemaDoc,
        session: Option<&Session>,
    ) -> Result<PullStream<GraffitiObject>> {
        let targets = servers.iter().map(|s| (s.clone(), None)).collect();
        self.fan_out(targets, channels, schema, session, |o: &GraffitiObject| Some(o), |o| o.url.to_string())
    }

    fn fan_out<T: DeserializeOwned + Send + 'static>(
        &self,
        targets: Vec<(String, Option<String>)>,
        channels: &[ChannelName],
        schema: &SchemaDoc,
        session: Option<&Session>,
        object_of: fn(&T) -> Option<&GraffitiObject>,
        key: fn(&T) -> String,
    ) -> Result<PullStream<T>> {
        check_query_channels(channels)?;
        let matcher = schema.compile()?;
        let mut parts = Vec::new();
        let mut warnings = Vec::new();
        for (server, token) in &targets {
            let bearer = self.token_for(session, server)?;
            let mut body = json!({"channels": channels, "schema": schema});
            if let Some(t) = token {
                body["cursor"] = Value::String(t.clone());
            }
            let req = Request::new("POST", "/discover").json(&body).bearer(bearer);
            let resp = match self.transport.send(server, req) {
                Ok(r) => r,
                Err(e) => {
                    warnings.push(Warning::new(server.clone(), e.to_string()));
                    continue;
                }
            };
            if !resp.is_success() {
                let e = resp.into_error();
                if is_fatal(&e, bearer.is_some()) {
                    return Err(e);
                }
                warnings.push(Warning::new(server.clone(), e.to_string()));
                continue;
            }
            let stream = parse_ndjson::<T>(resp.body);
            let stream = if self.verify {
                let viewer = bearer.and(session).map(|s| s.actor.clone());
                self.verified(stream, viewer, channels.to_vec(), matcher.clone(), object_of)
            } else {
                stream
            };
            parts.push((server.clone(), stream));
        }
        let clock = self.clock.clone();
        let cursor_base = ClientCursor {
            channels: channels.to_vec(),
            schema: schema.clone(),
            servers: targets.into_iter().map(|(s, _)| (s, None)).collect(),
        };
        Ok(merge_streams(parts, warnings, key, move |cursors| {
            let mut body = cursor_base;
            for (server, cursor) in cursors {
                body.servers.insert(server, cursor.map(|c| c.to_string()));
            }
            Some(DiscoverCursor::encode(CLIENT_CURSOR_KIND, clock.now_ms(), &body))
        }))
    }

    fn verified<T: Send + 'static>(
        &self,
        mut stream: PullStream<T>,
        viewer: Option<ActorUri>,
        channels: Vec<ChannelName>,
        matcher: CompiledMatcher,
        object_of: fn(&T) -> Option<&GraffitiObject>,
    ) -> PullStream<T> {
        let violations = self.violations.clone();
        PullStream::new(std::iter::from_fn(move || {
            let event = stream.next_event()?;
            if let Ok(StreamItem::Item(item)) = &event {
                if let Some(why) = object_of(item).and_then(|o| violation(o, viewer.as_ref(), &channels, &matcher)) {
                    violations.fetch_add(1, Ordering::SeqCst);
                    return Some(Ok(StreamItem::Warning(Warning { source: None, message: why })));
                }
            }
            Some(event)
        }))
    }
}

fn home_error(authority: &str, e: GraffitiError) -> GraffitiError {
    match e {
        GraffitiError::Unavailable(why) => GraffitiError::HomeUnavailable(format!("{authority}: {why}")),
        other => other,
    }
}

impl Graffiti for RemoteClient {
    fn login(&self, request: &LoginRequest) -> Result<Session> {
        let authority = match request.home.as_deref() {
            Some(home) => home.strip_prefix("remote:").unwrap_or(home).to_string(),
            None => self
                .registry
                .servers()
                .first()
                .cloned()
                .ok_or_else(|| GraffitiError::InvalidRequest("no home server given and the registry is empty".into()))?,
        };
        let handle = request
            .handle
            .as_deref()
            .ok_or_else(|| GraffitiError::InvalidRequest("login needs a handle".into()))?;
        self.login_at(&authority, handle, request.secret.as_deref().unwrap_or(""))
    }

    fn logout(&self, session: &Session) -> Result<()> {
        let Ok(home) = self.home(session) else { return Ok(()) };
        self.revoked.lock().expect("revocation lock").insert(session.credential.expose().to_string());
        let req = Request::new("POST", "/logout").bearer(Some(session.credential.expose()));
        let _ = self.call(&home, req);
        Ok(())
    }

    fn put(&self, mut base: ObjectBase, session: &Session) -> Result<GraffitiObject> {
        match base.url.take() {
            None => {
                let home = self.home(session)?;
                let req = Request::new("POST", "/objects")
                    .json(&base)
                    .bearer(Some(session.credential.expose()));
                self.call(&home, req).map_err(|e| home_error(&home, e))?.into_json()
            }
            Some(url) => self.mutate(&url, session, Request::new("PUT", "").json(&base))?.into_json(),
        }
    }

    fn get(&self, url: &ObjectUrl, schema: &SchemaDoc, session: Option<&Session>) -> Result<GraffitiObject> {
        schema.compile()?;
        let (authority, id) = remote_parts(url)?;
        let bearer = self.token_for(session, &authority)?;
        let text = serde_json::to_string(schema).expect("schemas serialize");
        let query: String = url::form_urlencoded::byte_serialize(text.as_bytes()).collect();
        let req = Request::new("GET", format!("/objects/{id}?schema={query}")).bearer(bearer);
        self.call(&authority, req)?.into_json()
    }

    fn patch(&self, url: &ObjectUrl, patch: &Patch, session: &Session) -> Result<GraffitiObject> {
        self.mutate(url, session, Request::new("PATCH", "").json(patch))?.into_json()
    }

    fn delete(&self, url: &ObjectUrl, session: &Session) -> Result<()> {
        self.mutate(url, session, Request::new("DELETE", ""))?;
        Ok(())
    }

    fn discover(
        &self,
        channels: &[ChannelName],
        schema: &SchemaDoc,
        session: Option<&Session>,
    ) -> Result<PullStream<GraffitiObject>> {
        self.discover_on(self.registry.servers(), channels, schema, session)
    }

    fn continue_discover(&self, cursor: &DiscoverCursor, session: Option<&Session>) -> Result<PullStream<DiscoverDelta>> {
        let body: ClientCursor = cursor.decode(CLIENT_CURSOR_KIND)?;
        let targets = body.servers.into_iter().collect();
        self.fan_out(
            targets,
            &body.channels,
            &body.schema,
            session,
            |d: &DiscoverDelta| match d {
                DiscoverDelta::Object(o) => Some(o),
                DiscoverDelta::Tombstone(_) => None,
            },
            |d| d.url().to_string(),
        )
    }

    fn recover_orphans(&self, schema: &SchemaDoc, session: &Session) -> Result<PullStream<GraffitiObject>> {
        let home = self.home(session)?;
        let req = Request::new("POST", "/recover-orphans")
            .json(&json!({"schema": schema}))
            .bearer(Some(session.credential.expose()));
        let resp = self.call(&home, req).map_err(|e| home_error(&home, e))?;
        Ok(parse_ndjson(resp.body))
    }

    fn channel_stats(&self, session: &Session) -> Result<PullStream<ChannelStat>> {
        let home = self.home(session)?;
        let req = Request::new("GET", "/channel-stats").bearer(Some(session.credential.expose()));
        let resp = self.call(&home, req).map_err(|e| home_error(&home, e))?;
        Ok(parse_ndjson(resp.body))
    }
}
