//! Minimal request/response plumbing shared by the HTTP services and their
//! clients, with a real HTTP binding and an in-process network for tests
//! and simulations.

use std::collections::{HashMap, HashSet};
use std::io::{self, Cursor, Read};
use std::net::SocketAddr;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex, OnceLock, RwLock};
use std::thread::{self, JoinHandle};
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{json, Value};

use crate::error::{GraffitiError, Result};

pub const JSON: &str = "application/json";
pub const NDJSON: &str = "application/x-ndjson";

#[derive(Debug, Clone, Default)]
pub struct Request {
    pub method: String,
    /// Path including any query string.
    pub path: String,
    pub headers: Vec<(String, String)>,
    pub body: Vec<u8>,
}

impl Request {
    pub fn new(method: &str, path: impl Into<String>) -> Self {
        Request { method: method.to_string(), path: path.into(), ..Default::default() }
    }

    pub fn json(mut self, body: &impl Serialize) -> Self {
        self.body = serde_json::to_vec(body).expect("request bodies serialize");
        self.headers.push(("Content-Type".into(), JSON.into()));
        self
    }

    pub fn header(mut self, name: &str, value: impl Into<String>) -> Self {
        self.headers.push((name.to_string(), value.into()));
        self
    }

    pub fn bearer(self, token: Option<&str>) -> Self {
        match token {
            Some(t) => self.header("Authorization", format!("Bearer {t}")),
            None => self,
        }
    }

    pub fn get_header(&self, name: &str) -> Option<&str> {
        self.headers
            .iter()
            .find(|(k, _)| k.eq_ignore_ascii_case(name))
            .map(|(_, v)| v.as_str())
    }

    pub fn bearer_token(&self) -> Option<&str> {
        self.get_header("Authorization")?.strip_prefix("Bearer ").map(str::trim)
    }

    pub fn path_only(&self) -> &str {
        self.path.split_once('?').map_or(&self.path, |(p, _)| p)
    }

    pub fn query(&self, key: &str) -> Option<String> {
        let (_, q) = self.path.split_once('?')?;
        url::form_urlencoded::parse(q.as_bytes())
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.into_owned())
    }

    pub fn parse_json<T: DeserializeOwned>(&self) -> Result<T> {
        serde_json::from_slice(&self.body).map_err(|e| GraffitiError::InvalidRequest(format!("bad JSON body: {e}")))
    }
}

pub struct Response {
    pub status: u16,
    pub content_type: String,
    pub body: Box<dyn Read + Send>,
}

impl std::fmt::Debug for Response {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Response")
            .field("status", &self.status)
            .field("content_type", &self.content_type)
            .finish_non_exhaustive()
    }
}

impl Response {
    pub fn json(status: u16, body: &impl Serialize) -> Self {
        Response::bytes(status, JSON, serde_json::to_vec(body).expect("responses serialize"))
    }

    pub fn bytes(status: u16, content_type: &str, body: Vec<u8>) -> Self {
        Response { status, content_type: content_type.to_string(), body: Box::new(Cursor::new(body)) }
    }

    pub fn empty(status: u16) -> Self {
        Response::bytes(status, "text/plain", Vec::new())
    }

    /// Streams one JSON document per line, serializing lazily.
    pub fn ndjson(lines: impl Iterator<Item = Value> + Send + 'static) -> Self {
        Response {
            status: 200,
            content_type: NDJSON.to_string(),
            body: Box::new(LineReader { lines: Box::new(lines), buf: Vec::new(), pos: 0 }),
        }
    }

    /// The uniform error body: `{"error": code}` plus, except for
    /// `not_found`, the structured error for clients to rebuild it.
    pub fn error(e: &GraffitiError) -> Self {
        let body = match e {
            GraffitiError::NotFound => json!({"error": "not_found"}),
            other => json!({"error": other.code(), "detail": other}),
        };
        Response::json(error_status(e), &body)
    }

    pub fn is_success(&self) -> bool {
        (200..300).contains(&self.status)
    }

    pub fn read_all(mut self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        self.body
            .read_to_end(&mut out)
            .map_err(|e| GraffitiError::Protocol(format!("reading response: {e}")))?;
        Ok(out)
    }

    pub fn into_json<T: DeserializeOwned>(self) -> Result<T> {
        let bytes = self.read_all()?;
        serde_json::from_slice(&bytes).map_err(|e| GraffitiError::Protocol(format!("bad JSON response: {e}")))
    }

    /// Turns an error response back into the error it encodes.
    pub fn into_error(self) -> GraffitiError {
        let status = self.status;
        let Ok(body) = self.into_json::<Value>() else {
            return GraffitiError::Protocol(format!("HTTP {status}"));
        };
        if let Some(detail) = body.get("detail") {
            if let Ok(e) = serde_json::from_value::<GraffitiError>(detail.clone()) {
                return e;
            }
        }
        match body.get("error").and_then(Value::as_str) {
            Some("not_found") => GraffitiError::NotFound,
            Some("auth_failed") => GraffitiError::AuthFailed,
            Some("session_revoked") => GraffitiError::SessionRevoked,
            Some("cursor_expired") => GraffitiError::CursorExpired,
            Some("not_authorized") => GraffitiError::NotAuthorized,
            Some(code) => GraffitiError::Protocol(format!("HTTP {status}: {code}")),
            None => GraffitiError::Protocol(format!("HTTP {status}")),
        }
    }
}

pub fn error_status(e: &GraffitiError) -> u16 {
    use GraffitiError::*;
    match e {
        NotFound => 404,
        NotAuthorized => 403,
        AuthFailed | SessionRevoked => 401,
        CursorExpired => 410,
        ShapeInvalid(_) | Patch(_) => 422,
        HandleTaken => 409,
        UnsupportedAllowed => 501,
        HomeUnavailable(_) | Unavailable(_) | StorageUnavailable(_) | TrackerUnavailable(_) | BlobFetchFailed(_) => 503,
        MalformedUrl(_) | Schema(_) | InvalidChannel(_) | TooManyChannels(_) | InvalidCursor(_) | InvalidRequest(_)
        | UnknownScheme(_) | SchemeConflict(_) | Protocol(_) => 400,
    }
}

struct LineReader {
    lines: Box<dyn Iterator<Item = Value> + Send>,
    buf: Vec<u8>,
    pos: usize,
}

impl Read for LineReader {
    fn read(&mut self, out: &mut [u8]) -> io::Result<usize> {
        while self.pos >= self.buf.len() {
            let Some(line) = self.lines.next() else { return Ok(0) };
            self.buf = serde_json::to_vec(&line).map_err(io::Error::other)?;
            self.buf.push(b'\n');
            self.pos = 0;
        }
        let n = out.len().min(self.buf.len() - self.pos);
        out[..n].copy_from_slice(&self.buf[self.pos..self.pos + n]);
        self.pos += n;
        Ok(n)
    }
}

pub trait Handler: Send + Sync {
    fn handle(&self, request: Request) -> Response;
}

/// How clients reach a service named by its authority (`host[:port]`).
pub trait Transport: Send + Sync {
    fn send(&self, authority: &str, request: Request) -> Result<Response>;

    /// Origin URL for an authority, e.g. `https://pod.example`.
    fn base_url(&self, authority: &str) -> String;
}

/// Extracts `host[:port]` from an origin or bare authority.
pub fn authority_of(origin: &str) -> Result<String> {
    let trimmed = origin.trim().trim_end_matches('/');
    if trimmed.is_empty() {
        return Err(GraffitiError::InvalidRequest("empty server origin".into()));
    }
    if !trimmed.contains("://") {
        return Ok(trimmed.to_string());
    }
    let url = url::Url::parse(trimmed).map_err(|e| GraffitiError::InvalidRequest(format!("bad origin {origin:?}: {e}")))?;
    let host = url
        .host_str()
        .ok_or_else(|| GraffitiError::InvalidRequest(format!("origin {origin:?} has no host")))?;
    Ok(match url.port() {
        Some(p) => format!("{host}:{p}"),
        None => host.to_string(),
    })
}

/// Real HTTP via a blocking client.
#[derive(Debug, Clone)]
pub struct HttpTransport {
    agent: ureq::Agent,
    plain_http: bool,
}

impl Default for HttpTransport {
    fn default() -> Self {
        HttpTransport::new(false)
    }
}

impl HttpTransport {
    /// With `plain_http`, every authority is reached over `http://`;
    /// otherwise only loopback ones are.
    pub fn new(plain_http: bool) -> Self {
        let agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_connect(Some(Duration::from_secs(5)))
            .timeout_global(Some(Duration::from_secs(60)))
            .build()
            .into();
        HttpTransport { agent, plain_http }
    }
}

fn is_loopback(authority: &str) -> bool {
    let host = if authority.starts_with('[') {
        authority.split(']').next().map(|h| h.trim_start_matches('[')).unwrap_or(authority)
    } else {
        authority.rsplit_once(':').map_or(authority, |(h, _)| h)
    };
    host == "localhost" || host.parse::<std::net::IpAddr>().is_ok_and(|ip| ip.is_loopback())
}

impl Transport for HttpTransport {
    fn send(&self, authority: &str, request: Request) -> Result<Response> {
        let url = format!("{}{}", self.base_url(authority), request.path);
        let mut builder = ureq::http::Request::builder().method(request.method.as_str()).uri(&url);
        for (k, v) in &request.headers {
            builder = builder.header(k.as_str(), v.as_str());
        }
        let req = builder
            .body(request.body)
            .map_err(|e| GraffitiError::InvalidRequest(e.to_string()))?;
        let resp = self
            .agent
            .run(req)
            .map_err(|e| GraffitiError::Unavailable(format!("{authority}: {e}")))?;
        let status = resp.status().as_u16();
        let content_type = resp
            .headers()
            .get("content-type")
            .and_then(|v| v.to_str().ok())
            .unwrap_or("")
            .to_string();
        Ok(Response { status, content_type, body: Box::new(resp.into_body().into_reader()) })
    }

    fn base_url(&self, authority: &str) -> String {
        if self.plain_http || is_loopback(authority) {
            format!("http://{authority}")
        } else {
            format!("https://{authority}")
        }
    }
}

/// Forwards to a handler installed after the socket is bound, so a server
/// can learn its own port.
#[derive(Default)]
pub struct LateHandler(OnceLock<Arc<dyn Handler>>);

impl LateHandler {
    /// Only the first install takes effect.
    pub fn install(&self, handler: Arc<dyn Handler>) {
        let _ = self.0.set(handler);
    }
}

impl Handler for LateHandler {
    fn handle(&self, req: Request) -> Response {
        match self.0.get() {
            Some(h) => h.handle(req),
            None => Response::error(&GraffitiError::Unavailable("server starting".into())),
        }
    }
}

/// A running HTTP listener; stops when dropped.
pub struct HttpServer {
    addr: SocketAddr,
    server: Arc<tiny_http::Server>,
    acceptor: Option<JoinHandle<()>>,
}

impl std::fmt::Debug for HttpServer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpServer").field("addr", &self.addr).finish()
    }
}

impl HttpServer {
    /// Binds `addr` (port 0 picks a free one) and serves each request on
    /// its own thread.
    pub fn bind(addr: &str, handler: Arc<dyn Handler>) -> Result<Self> {
        let server = tiny_http::Server::http(addr)
            .map_err(|e| GraffitiError::Unavailable(format!("cannot bind {addr}: {e}")))?;
        let addr = server
            .server_addr()
            .to_ip()
            .ok_or_else(|| GraffitiError::Unavailable("listener has no IP address".into()))?;
        let server = Arc::new(server);
        let accepting = server.clone();
        let acceptor = thread::spawn(move || {
            while let Ok(request) = accepting.recv() {
                let handler = handler.clone();
                thread::spawn(move || serve_one(handler.as_ref(), request));
            }
        });
        Ok(HttpServer { addr, server, acceptor: Some(acceptor) })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    /// `127.0.0.1:<port>` style authority for clients.
    pub fn authority(&self) -> String {
        self.addr.to_string()
    }

    /// Blocks until the listener stops.
    pub fn join(mut self) {
        if let Some(t) = self.acceptor.take() {
            let _ = t.join();
        }
    }
}

impl Drop for HttpServer {
    fn drop(&mut self) {
        self.server.unblock();
        if let Some(t) = self.acceptor.take() {
            let _ = t.join();
        }
    }
}

fn serve_one(handler: &dyn Handler, mut request: tiny_http::Request) {
    let mut body = Vec::new();
    if request.as_reader().read_to_end(&mut body).is_err() {
        let _ = request.respond(tiny_http::Response::empty(400));
        return;
    }
    let req = Request {
        method: request.method().as_str().to_string(),
        path: request.url().to_string(),
        headers: request
            .headers()
            .iter()
            .map(|h| (h.field.as_str().as_str().to_string(), h.value.as_str().to_string()))
            .collect(),
        body,
    };
    let resp = handler.handle(req);
    let mut headers = Vec::new();
    if let Ok(h) = tiny_http::Header::from_bytes("Content-Type", resp.content_type.as_bytes()) {
        headers.push(h);
    }
    let out = tiny_http::Response::new(tiny_http::StatusCode(resp.status), headers, resp.body, None, None);
    let _ = request.respond(out);
}

/// One request as seen by an [`InProcessNetwork`].
#[derive(Debug, Clone)]
pub struct CapturedRequest {
    pub authority: String,
    pub method: String,
    pub path: String,
    pub bearer: Option<String>,
    pub body: Vec<u8>,
}

impl CapturedRequest {
    pub fn body_text(&self) -> String {
        String::from_utf8_lossy(&self.body).into_owned()
    }
}

/// Services addressed by made-up authorities, called directly. Supports
/// taking services down and records every request it delivers.
#[derive(Default)]
pub struct InProcessNetwork {
    services: RwLock<HashMap<String, Arc<dyn Handler>>>,
    down: RwLock<HashSet<String>>,
    log: Mutex<Vec<CapturedRequest>>,
    capture: AtomicBool,
}

impl std::fmt::Debug for InProcessNetwork {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let services: Vec<String> = self.services.read().map(|s| s.keys().cloned().collect()).unwrap_or_default();
        f.debug_struct("InProcessNetwork").field("services", &services).finish_non_exhaustive()
    }
}

impl InProcessNetwork {
    pub fn new() -> Arc<Self> {
        Arc::new(InProcessNetwork { capture: AtomicBool::new(true), ..Default::default() })
    }

    pub fn mount(&self, authority: &str, handler: Arc<dyn Handler>) {
        self.services.write().expect("network lock").insert(authority.to_string(), handler);
    }

    pub fn set_down(&self, authority: &str, down: bool) {
        let mut set = self.down.write().expect("network lock");
        if down {
            set.insert(authority.to_string());
        } else {
            set.remove(authority);
        }
    }

    pub fn set_capture(&self, on: bool) {
        self.capture.store(on, Ordering::SeqCst);
    }

    pub fn requests(&self) -> Vec<CapturedRequest> {
        self.log.lock().expect("network lock").clone()
    }

    pub fn clear_log(&self) {
        self.log.lock().expect("network lock").clear();
    }
}

impl Transport for InProcessNetwork {
    fn send(&self, authority: &str, request: Request) -> Result<Response> {
        if self.capture.load(Ordering::SeqCst) {
            self.log.lock().expect("network lock").push(CapturedRequest {
                authority: authority.to_string(),
                method: request.method.clone(),
                path: request.path.clone(),
                bearer: request.bearer_token().map(str::to_string),
                body: request.body.clone(),
            });
        }
        if self.down.read().expect("network lock").contains(authority) {
            return Err(GraffitiError::Unavailable(format!("{authority} is down")));
        }
        let handler = self
            .services
            .read()
            .expect("network lock")
            .get(authority)
            .cloned()
            .ok_or_else(|| GraffitiError::Unavailable(format!("{authority} is unreachable")))?;
        Ok(handler.handle(request))
    }

    fn base_url(&self, authority: &str) -> String {
        format!("https://{authority}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn authorities() {
        assert_eq!(authority_of("https://pod.example.com/").unwrap(), "pod.example.com");
        assert_eq!(authority_of("http://127.0.0.1:8080").unwrap(), "127.0.0.1:8080");
        assert_eq!(authority_of("small.test").unwrap(), "small.test");
        assert!(is_loopback("127.0.0.1:80"));
        assert!(is_loopback("localhost:3000"));
        assert!(is_loopback("[::1]:3000"));
        assert!(!is_loopback("pod.example.com"));
    }

    #[test]
    fn ndjson_reader_emits_lines() {
        let resp = Response::ndjson(vec![json!({"a": 1}), json!({"b": 2})].into_iter());
        assert_eq!(resp.read_all().unwrap(), b"{\"a\":1}\n{\"b\":2}\n");
    }

    #[test]
    fn errors_round_trip_and_not_found_is_bare() {
        let nf = Response::error(&GraffitiError::NotFound);
        assert_eq!(nf.status, 404);
        assert_eq!(nf.read_all().unwrap(), br#"{"error":"not_found"}"#);
        for e in [
            GraffitiError::CursorExpired,
            GraffitiError::ShapeInvalid(vec!["x".into()]),
            GraffitiError::TooManyChannels(65),
            GraffitiError::SessionRevoked,
        ] {
            assert_eq!(Response::error(&e).into_error(), e);
        }
    }

    struct Echo;
    impl Handler for Echo {
        fn handle(&self, r: Request) -> Response {
            Response::json(200, &json!({"path": r.path, "body": String::from_utf8_lossy(&r.body), "auth": r.bearer_token()}))
        }
    }

    #[test]
    fn http_round_trip() {
        let server = HttpServer::bind("127.0.0.1:0", Arc::new(Echo)).unwrap();
        let t = HttpTransport::default();
        let resp = t
            .send(&server.authority(), Request::new("POST", "/x?y=1").json(&json!([1])).bearer(Some("tok")))
            .unwrap();
        assert_eq!(resp.status, 200);
        let v: Value = resp.into_json().unwrap();
        assert_eq!(v, json!({"path": "/x?y=1", "body": "[1]", "auth": "tok"}));
    }

    #[test]
    fn in_process_down_and_capture() {
        let net = InProcessNetwork::new();
        net.mount("a.test", Arc::new(Echo));
        assert_eq!(net.send("a.test", Request::new("GET", "/")).unwrap().status, 200);
        net.set_down("a.test", true);
        assert!(matches!(net.send("a.test", Request::new("GET", "/")), Err(GraffitiError::Unavailable(_))));
        assert!(net.send("b.test", Request::new("GET", "/")).is_err());
        assert_eq!(net.requests().len(), 3);
    }
}
