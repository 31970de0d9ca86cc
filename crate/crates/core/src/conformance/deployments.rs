use std::sync::Arc;

use super::Deployment;
use crate::api::{Graffiti, LoginRequest, Session};
use crate::clock::ManualClock;
use crate::commodity::{BlobHost, CsClient, CsOptions, HttpProvider, Tracker};
use crate::error::{GraffitiError, Result};
use crate::local::{LocalGraffiti, LocalOptions};
use crate::model::Scheme;
use crate::router::MetaGraffiti;
use crate::remote::{Registry, RemoteClient, RemoteServer, ServerConfig};
use crate::transport::{Handler, HttpServer, HttpTransport, InProcessNetwork, LateHandler, Transport};

/// In-memory local implementation on a manual clock.
pub struct LocalDeployment {
    graffiti: Arc<LocalGraffiti>,
    clock: ManualClock,
    retention_ms: u64,
}

impl LocalDeployment {
    pub fn new(retention_ms: u64) -> Self {
        Self::with_clock(retention_ms, ManualClock::default())
    }

    pub fn with_clock(retention_ms: u64, clock: ManualClock) -> Self {
        let graffiti = LocalGraffiti::open(LocalOptions {
            path: None,
            retention_ms,
            clock: Arc::new(clock.clone()),
        })
        .expect("in-memory store");
        LocalDeployment { graffiti: Arc::new(graffiti), clock, retention_ms }
    }

    pub fn local(&self) -> &Arc<LocalGraffiti> {
        &self.graffiti
    }
}

impl Default for LocalDeployment {
    fn default() -> Self {
        LocalDeployment::new(60_000)
    }
}

impl Deployment for LocalDeployment {
    fn graffiti(&self) -> Arc<dyn Graffiti> {
        self.graffiti.clone()
    }

    fn login(&self, handle: &str) -> Result<Session> {
        self.graffiti.login(&LoginRequest::handle(handle))
    }

    fn scheme(&self) -> Scheme {
        Scheme::Local
    }

    fn clock(&self) -> Option<ManualClock> {
        Some(self.clock.clone())
    }

    fn retention_ms(&self) -> u64 {
        self.retention_ms
    }
}

/// Federated servers on a [`InProcessNetwork`], or on loopback HTTP
/// sockets, sharing one manual clock. Every account lives on the first
/// server; the others take part in discovery only.
pub struct RemoteDeployment {
    client: Arc<RemoteClient>,
    servers: Vec<Arc<RemoteServer>>,
    network: Option<Arc<InProcessNetwork>>,
    _http: Vec<HttpServer>,
    clock: ManualClock,
    retention_ms: u64,
}

impl RemoteDeployment {
    fn config(origin: &str, clock: &ManualClock, retention_ms: u64) -> ServerConfig {
        ServerConfig { retention_ms, clock: Arc::new(clock.clone()), ..ServerConfig::new(origin) }
    }

    /// `servers` in-process servers named `s0.test`, `s1.test`, ...
    pub fn in_process(servers: usize, retention_ms: u64) -> Self {
        Self::in_process_with_clock(servers, retention_ms, ManualClock::default())
    }

    pub fn in_process_with_clock(servers: usize, retention_ms: u64, clock: ManualClock) -> Self {
        let network = InProcessNetwork::new();
        let mut mounted = Vec::new();
        for i in 0..servers {
            let origin = format!("s{i}.test");
            let server = Arc::new(RemoteServer::open(Self::config(&origin, &clock, retention_ms)).expect("in-memory server"));
            network.mount(&origin, server.clone());
            mounted.push(server);
        }
        let registry = Registry::new(mounted.iter().map(|s| s.origin().to_string())).expect("valid origins");
        let transport: Arc<dyn Transport> = network.clone();
        let client = RemoteClient::new(transport, registry)
            .with_clock(Arc::new(clock.clone()))
            .with_verification(true);
        RemoteDeployment {
            client: Arc::new(client),
            servers: mounted,
            network: Some(network),
            _http: Vec::new(),
            clock,
            retention_ms,
        }
    }

    /// Same shape as [`RemoteDeployment::in_process`] but over real
    /// loopback sockets.
    pub fn http(servers: usize, retention_ms: u64) -> Result<Self> {
        let clock = ManualClock::default();
        let mut mounted = Vec::new();
        let mut listeners = Vec::new();
        for _ in 0..servers {
            let late = Arc::new(LateHandler::default());
            let listener = HttpServer::bind("127.0.0.1:0", late.clone())?;
            let server = Arc::new(RemoteServer::open(Self::config(&listener.authority(), &clock, retention_ms))?);
            let handler: Arc<dyn Handler> = server.clone();
            late.install(handler);
            mounted.push(server);
            listeners.push(listener);
        }
        let registry = Registry::new(mounted.iter().map(|s| s.origin().to_string()))?;
        let client = RemoteClient::new(Arc::new(HttpTransport::default()), registry)
            .with_clock(Arc::new(clock.clone()))
            .with_verification(true);
        Ok(RemoteDeployment {
            client: Arc::new(client),
            servers: mounted,
            network: None,
            _http: listeners,
            clock,
            retention_ms,
        })
    }

    pub fn client(&self) -> &Arc<RemoteClient> {
        &self.client
    }

    pub fn servers(&self) -> &[Arc<RemoteServer>] {
        &self.servers
    }

    pub fn network(&self) -> Option<&Arc<InProcessNetwork>> {
        self.network.as_ref()
    }

    /// Logs `handle` in on the server at `index`, registering it first.
    pub fn login_on(&self, index: usize, handle: &str) -> Result<Session> {
        let origin = self.servers[index].origin();
        match self.client.register(origin, handle, handle) {
            Ok(_) | Err(GraffitiError::HandleTaken) => {}
            Err(e) => return Err(e),
        }
        self.client.login_at(origin, handle, handle)
    }
}

impl Deployment for RemoteDeployment {
    fn graffiti(&self) -> Arc<dyn Graffiti> {
        self.client.clone()
    }

    fn login(&self, handle: &str) -> Result<Session> {
        self.login_on(0, handle)
    }

    fn scheme(&self) -> Scheme {
        Scheme::Remote
    }

    fn clock(&self) -> Option<ManualClock> {
        Some(self.clock.clone())
    }

    fn retention_ms(&self) -> u64 {
        self.retention_ms
    }
}

/// Commodity storage on an [`InProcessNetwork`]: one tracker, one blob
/// host, one client, all on a shared manual clock.
pub struct CsDeployment {
    client: Arc<CsClient>,
    network: Arc<InProcessNetwork>,
    host: Arc<BlobHost>,
    tracker: Arc<Tracker>,
    clock: ManualClock,
    retention_ms: u64,
}

impl CsDeployment {
    pub const TRACKER: &'static str = "tracker.test";
    pub const BLOBS: &'static str = "blobs.test";

    pub fn new(retention_ms: u64) -> Self {
        let clock = ManualClock::default();
        let network = InProcessNetwork::new();
        let tracker = Arc::new(Tracker::in_memory(Arc::new(clock.clone())));
        let host = Arc::new(BlobHost::new());
        network.mount(Self::TRACKER, tracker.clone());
        network.mount(Self::BLOBS, host.clone());
        let transport: Arc<dyn Transport> = network.clone();
        let options = CsOptions { retention_ms, clock: Arc::new(clock.clone()), ..CsOptions::new(Self::TRACKER) };
        let provider = Arc::new(HttpProvider::new(transport.clone(), Self::BLOBS));
        let client = Arc::new(CsClient::new(transport, provider, options));
        CsDeployment { client, network, host, tracker, clock, retention_ms }
    }

    pub fn client(&self) -> &Arc<CsClient> {
        &self.client
    }

    pub fn network(&self) -> &Arc<InProcessNetwork> {
        &self.network
    }

    pub fn host(&self) -> &Arc<BlobHost> {
        &self.host
    }

    pub fn tracker(&self) -> &Arc<Tracker> {
        &self.tracker
    }
}

impl Default for CsDeployment {
    fn default() -> Self {
        CsDeployment::new(60_000)
    }
}

impl Deployment for CsDeployment {
    fn graffiti(&self) -> Arc<dyn Graffiti> {
        self.client.clone()
    }

    fn login(&self, handle: &str) -> Result<Session> {
        self.client.login(&LoginRequest::handle(handle).with_secret(handle))
    }

    fn scheme(&self) -> Scheme {
        Scheme::Cs
    }

    fn clock(&self) -> Option<ManualClock> {
        Some(self.clock.clone())
    }

    fn retention_ms(&self) -> u64 {
        self.retention_ms
    }

    fn supports_allowed(&self) -> bool {
        false
    }
}

/// The scheme router over an in-memory local implementation and an
/// in-process federation. Handles listed in `on_remote` log in on the
/// remote side, everyone else on the default scheme.
pub struct MetaDeployment {
    meta: Arc<MetaGraffiti>,
    local: LocalDeployment,
    remote: RemoteDeployment,
    on_remote: Vec<String>,
    default_scheme: Scheme,
}

impl MetaDeployment {
    pub fn new(default_scheme: Scheme, retention_ms: u64) -> Self {
        Self::split(default_scheme, retention_ms, &[])
    }

    pub fn split(default_scheme: Scheme, retention_ms: u64, on_remote: &[&str]) -> Self {
        let clock = ManualClock::default();
        let local = LocalDeployment::with_clock(retention_ms, clock.clone());
        let remote = RemoteDeployment::in_process_with_clock(1, retention_ms, clock.clone());
        let mut meta = MetaGraffiti::new(default_scheme).with_clock(Arc::new(clock));
        meta.register(Scheme::Local, local.graffiti()).expect("fresh router");
        meta.register(Scheme::Remote, remote.graffiti()).expect("fresh router");
        MetaDeployment {
            meta: Arc::new(meta),
            local,
            remote,
            on_remote: on_remote.iter().map(|s| s.to_string()).collect(),
            default_scheme,
        }
    }

    pub fn meta(&self) -> &Arc<MetaGraffiti> {
        &self.meta
    }

    pub fn remote(&self) -> &RemoteDeployment {
        &self.remote
    }

    pub fn local(&self) -> &LocalDeployment {
        &self.local
    }
}

impl Deployment for MetaDeployment {
    fn graffiti(&self) -> Arc<dyn Graffiti> {
        self.meta.clone()
    }

    fn login(&self, handle: &str) -> Result<Session> {
        if self.default_scheme == Scheme::Remote || self.on_remote.iter().any(|h| h == handle) {
            self.remote.login(handle)
        } else {
            self.local.login(handle)
        }
    }

    fn scheme(&self) -> Scheme {
        self.default_scheme
    }

    fn clock(&self) -> Option<ManualClock> {
        self.local.clock()
    }

    fn retention_ms(&self) -> u64 {
        self.local.retention_ms()
    }

    fn supports_allowed(&self) -> bool {
        self.on_remote.is_empty()
    }
}
