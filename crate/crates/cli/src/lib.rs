//! The `graffiti` command: run servers, manage a login session and call
//! every API operation from the shell. Output is JSON or NDJSON.

use std::ffi::OsString;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use clap::{CommandFactory, Parser, Subcommand, ValueEnum};
use graffiti_core::announce::{announce_discover, publish_announcements, AnnounceConfig};
use graffiti_core::api::StreamItem;
use graffiti_core::commodity::Tracker;
use graffiti_core::conformance::{run_suite, CsDeployment, Deployment, LocalDeployment, MetaDeployment, RemoteDeployment};
use graffiti_core::remote::{Registry, RemoteClient, RemoteServer, ServerConfig};
use graffiti_core::router::{LocalConfig, MetaConfig, MetaGraffiti, CONFIG_ENV};
use graffiti_core::sim::{self, AnnounceParams, ScenarioReport};
use graffiti_core::transport::{Handler, HttpServer, HttpTransport, LateHandler, Transport};
use graffiti_core::{
    ActorUri, ChannelName, DiscoverCursor, DiscoverDelta, Graffiti, GraffitiError, LoginRequest, ObjectBase, ObjectUrl,
    Patch, PullStream, SchemaDoc, Scheme, Session,
};
use rand::SeedableRng;
use serde::Serialize;
use serde_json::{json, Value};

pub const SESSION_ENV: &str = "GRAFFITI_SESSION";

#[derive(Debug, Parser)]
#[command(name = "graffiti", version, about = "Graffiti client, servers and test harness")]
pub struct Cli {
    /// Implementation config (JSON). Defaults to a local store in the user data directory.
    #[arg(long, global = true, env = CONFIG_ENV)]
    pub config: Option<PathBuf>,
    /// Session file written by `login`.
    #[arg(long, global = true, env = SESSION_ENV)]
    pub session: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a federated Graffiti server over HTTP.
    ServeRemote {
        #[arg(long, default_value = "127.0.0.1:8080")]
        listen: String,
        /// Public authority used in urls; defaults to the bound address.
        #[arg(long)]
        origin: Option<String>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        retention_ms: Option<u64>,
        #[arg(long)]
        invite_code: Option<String>,
    },
    /// Run a channel tracker for commodity storage.
    ServeTracker {
        #[arg(long, default_value = "127.0.0.1:8081")]
        listen: String,
        /// Append-only record log.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Create an account on a remote server.
    Register {
        #[arg(long)]
        server: String,
        #[arg(long)]
        handle: String,
        #[arg(long)]
        secret: String,
        #[arg(long)]
        plain_http: bool,
    },
    /// Log in and store the session.
    Login {
        #[arg(long)]
        handle: String,
        #[arg(long)]
        secret: Option<String>,
        /// Home such as `remote:host:port` or `cs`.
        #[arg(long)]
        home: Option<String>,
    },
    /// End the stored session.
    Logout,
    /// Create or replace an object read as JSON from stdin.
    Put,
    Get {
        url: String,
        #[arg(long, default_value = "{}")]
        schema: String,
        #[arg(long)]
        anonymous: bool,
    },
    /// Apply a JSON patch read from stdin.
    Patch { url: String },
    Delete { url: String },
    /// Stream matching objects, then a cursor line.
    Discover {
        #[arg(long = "channel")]
        channels: Vec<String>,
        #[arg(long, default_value = "{}")]
        schema: String,
        /// Continue from a cursor instead of taking a snapshot.
        #[arg(long)]
        cursor: Option<String>,
        /// Keep polling for changes.
        #[arg(long)]
        follow: bool,
        #[arg(long, default_value_t = 2000)]
        interval_ms: u64,
        /// Stop following after this many polls.
        #[arg(long)]
        max_polls: Option<u64>,
        #[arg(long)]
        anonymous: bool,
    },
    RecoverOrphans {
        #[arg(long, default_value = "{}")]
        schema: String,
    },
    ChannelStats,
    /// Announce a small server on well-known servers.
    AnnouncePublish {
        #[arg(long)]
        handle: String,
        #[arg(long)]
        secret: String,
        #[arg(long)]
        small_server: String,
        #[arg(long = "channel", required = true)]
        channels: Vec<String>,
        #[arg(long = "well-known", required = true)]
        well_known: Vec<String>,
        #[arg(long)]
        hashed: bool,
        /// Schema this server is expected to serve; repeatable.
        #[arg(long = "schema-hint")]
        schema_hints: Vec<String>,
        #[arg(long = "allowed")]
        allowed: Vec<String>,
    },
    /// Discover through announcements on well-known servers.
    AnnounceDiscover {
        #[arg(long = "channel", required = true)]
        channels: Vec<String>,
        #[arg(long, default_value = "{}")]
        schema: String,
        #[arg(long = "well-known", required = true)]
        well_known: Vec<String>,
        #[arg(long)]
        hashed: bool,
        #[arg(long)]
        anonymous: bool,
    },
    /// Run the API conformance suite against a fresh deployment.
    Conformance {
        #[arg(long = "impl", value_enum)]
        implementation: SuiteTarget,
    },
    /// Run scenario checks and print their reports.
    Sim {
        #[arg(long, value_enum)]
        scenario: Scenario,
        #[arg(long = "impl", value_enum, default_value = "local")]
        implementation: ScenarioTarget,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Number of consecutive seeds for the announce check.
        #[arg(long, default_value_t = 1)]
        seeds: u64,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SuiteTarget {
    Local,
    Remote,
    RemoteHttp,
    Cs,
    Meta,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ScenarioTarget {
    Local,
    Remote,
    Cs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Scenario {
    ReplyMatrix,
    Crosspost,
    Membership,
    Announce,
    All,
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Contract(#[from] GraffitiError),
    #[error("{0}")]
    Failed(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

type CliResult<T = ()> = std::result::Result<T, CliError>;

/// Parses `args` and runs the command. Returns the process exit code: 0 on
/// success, 1 on API errors or failed checks, 2 on usage errors.
pub fn run<I, T>(args: I, stdin: &mut dyn Read, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let text = e.render().to_string();
            let _ = if code == 0 { stdout.write_all(text.as_bytes()) } else { stderr.write_all(text.as_bytes()) };
            return code;
        }
    };
    match dispatch(&cli, stdin, stdout) {
        Ok(()) => 0,
        Err(CliError::Usage(msg)) => {
            let _ = writeln!(stderr, "error: {msg}\n\n{}", Cli::command().render_usage());
            2
        }
        Err(CliError::Contract(e)) => {
            let _ = writeln!(stderr, "{}", json!({"error": e.code(), "message": e.to_string()}));
            1
        }
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            1
        }
    }
}

fn dispatch(cli: &Cli, stdin: &mut dyn Read, out: &mut dyn Write) -> CliResult {
    match &cli.command {
        Command::ServeRemote { listen, origin, data, retention_ms, invite_code } => {
            let late = Arc::new(LateHandler::default());
            let listener = HttpServer::bind(listen, late.clone())?;
            let mut config = ServerConfig::new(origin.as_deref().unwrap_or(&listener.authority()));
            config.data_path = data.clone();
            config.invite_code = invite_code.clone();
            if let Some(r) = retention_ms {
                config.retention_ms = *r;
            }
            let server: Arc<dyn Handler> = Arc::new(RemoteServer::open(config.clone())?);
            late.install(server);
            emit(out, &json!({"listening": listener.authority(), "origin": config.origin}))?;
            listener.join();
            Ok(())
        }
        Command::ServeTracker { listen, data } => {
            let tracker = match data {
                Some(path) => Tracker::open(path.clone(), graffiti_core::clock::system())?,
                None => Tracker::with_system_clock(),
            };
            let listener = HttpServer::bind(listen, Arc::new(tracker))?;
            emit(out, &json!({"listening": listener.authority()}))?;
            listener.join();
            Ok(())
        }
        Command::Register { server, handle, secret, plain_http } => {
            let plain = *plain_http || load_config(cli)?.remote.is_some_and(|r| r.plain_http);
            let client = RemoteClient::new(Arc::new(HttpTransport::new(plain)), Registry::new([server])?);
            let actor = client.register(server, handle, secret)?;
            emit(out, &json!({"actor": actor}))
        }
        Command::Login { handle, secret, home } => {
            let g = graffiti(cli)?;
            let mut request = LoginRequest::handle(handle);
            if let Some(s) = secret {
                request = request.with_secret(s);
            }
            if let Some(h) = home {
                request = request.at(h);
            }
            let session = g.login(&request)?;
            save_session(&session_path(cli)?, &session)?;
            emit(out, &json!({"actor": session.actor, "home": session.home}))
        }
        Command::Logout => {
            let path = session_path(cli)?;
            let session = require_session(&path)?;
            graffiti(cli)?.logout(&session)?;
            std::fs::remove_file(&path)?;
            Ok(())
        }
        Command::Put => {
            let base: ObjectBase = read_json(stdin)?;
            let session = require_session(&session_path(cli)?)?;
            emit(out, &graffiti(cli)?.put(base, &session)?)
        }
        Command::Get { url, schema, anonymous } => {
            let session = optional_session(cli, *anonymous)?;
            let object = graffiti(cli)?.get(&parse_url(url)?, &parse_schema(schema)?, session.as_ref())?;
            emit(out, &object)
        }
        Command::Patch { url } => {
            let patch = Patch::from_json(read_json(stdin)?).map_err(|e| CliError::Usage(format!("bad patch: {e}")))?;
            let session = require_session(&session_path(cli)?)?;
            emit(out, &graffiti(cli)?.patch(&parse_url(url)?, &patch, &session)?)
        }
        Command::Delete { url } => {
            let session = require_session(&session_path(cli)?)?;
            graffiti(cli)?.delete(&parse_url(url)?, &session)?;
            emit(out, &json!({"deleted": url}))
        }
        Command::Discover { channels, schema, cursor, follow, interval_ms, max_polls, anonymous } => {
            let g = graffiti(cli)?;
            let session = optional_session(cli, *anonymous)?;
            let mut cursor = match cursor {
                Some(token) => {
                    let c: DiscoverCursor = token.parse().map_err(|e| CliError::Usage(format!("bad cursor: {e}")))?;
                    print_stream(out, g.continue_discover(&c, session.as_ref())?, delta_line)?
                }
                None => {
                    if channels.is_empty() {
                        return Err(CliError::Usage("discover needs --channel or --cursor".into()));
                    }
                    let stream = g.discover(&parse_channels(channels)?, &parse_schema(schema)?, session.as_ref())?;
                    print_stream(out, stream, |o| delta_line(DiscoverDelta::Object(o)))?
                }
            };
            let mut polls = 0;
            while *follow && max_polls.is_none_or(|m| polls < m) {
                std::thread::sleep(Duration::from_millis(*interval_ms));
                let Some(c) = cursor.take() else { break };
                cursor = print_stream(out, g.continue_discover(&c, session.as_ref())?, delta_line)?;
                polls += 1;
            }
            Ok(())
        }
        Command::RecoverOrphans { schema } => {
            let session = require_session(&session_path(cli)?)?;
            let stream = graffiti(cli)?.recover_orphans(&parse_schema(schema)?, &session)?;
            print_stream(out, stream, |o| delta_line(DiscoverDelta::Object(o)))?;
            emit(out, &json!({"type": "end"}))
        }
        Command::ChannelStats => {
            let session = require_session(&session_path(cli)?)?;
            let stream = graffiti(cli)?.channel_stats(&session)?;
            print_stream(out, stream, |s| {
                let mut v = serde_json::to_value(s).expect("stats serialize");
                v["type"] = "stat".into();
                v
            })?;
            emit(out, &json!({"type": "end"}))
        }
        Command::AnnouncePublish { handle, secret, small_server, channels, well_known, hashed, schema_hints, allowed } => {
            let client = remote_client(cli, well_known)?;
            let mut config = AnnounceConfig::new(well_known).map_err(usage)?.hashed(*hashed);
            if !schema_hints.is_empty() {
                config.schemas = Some(schema_hints.iter().map(|s| parse_schema(s)).collect::<CliResult<_>>()?);
            }
            if !allowed.is_empty() {
                let actors = allowed.iter().map(|a| ActorUri::new(a.as_str())).collect::<Result<_, _>>().map_err(usage)?;
                config.allowed = Some(actors);
            }
            let mut failures = Vec::new();
            let mut sessions = Vec::new();
            for server in &config.well_known {
                match client.login_at(server, handle, secret) {
                    Ok(s) => sessions.push(s),
                    Err(e) => failures.push((server.clone(), e)),
                }
            }
            let report = publish_announcements(&client, &sessions, small_server, &parse_channels(channels)?, &config)?;
            let login_failed: Vec<String> = failures.iter().map(|(s, _)| s.clone()).collect();
            failures.extend(report.failures.into_iter().filter(|(s, _)| !login_failed.contains(s)));
            let failed: Vec<Value> = failures
                .iter()
                .map(|(server, e)| json!({"server": server, "error": e.code(), "message": e.to_string()}))
                .collect();
            emit(out, &json!({"urls": report.urls, "failures": failed}))?;
            if failed.is_empty() {
                Ok(())
            } else {
                Err(CliError::Failed(format!("announcement failed on {} server(s)", failed.len())))
            }
        }
        Command::AnnounceDiscover { channels, schema, well_known, hashed, anonymous } => {
            let client = remote_client(cli, well_known)?;
            let config = AnnounceConfig::new(well_known).map_err(usage)?.hashed(*hashed);
            let session = optional_session(cli, *anonymous)?.filter(|s| s.home.scheme() == Some(Scheme::Remote));
            let found = announce_discover(&client, &parse_channels(channels)?, &parse_schema(schema)?, &config, session.as_ref())?;
            print_stream(out, found.objects, |o| delta_line(DiscoverDelta::Object(o)))?;
            emit(out, &json!({"type": "report", "report": found.report}))
        }
        Command::Conformance { implementation } => {
            let name = implementation.to_possible_value().expect("named").get_name().to_string();
            let report = match implementation {
                SuiteTarget::Local => run_suite(&name, &|| Box::new(LocalDeployment::default())),
                SuiteTarget::Remote => run_suite(&name, &|| Box::new(RemoteDeployment::in_process(3, 60_000))),
                SuiteTarget::RemoteHttp => {
                    run_suite(&name, &|| Box::new(RemoteDeployment::http(3, 60_000).expect("loopback servers")))
                }
                SuiteTarget::Cs => run_suite(&name, &|| Box::new(CsDeployment::default())),
                SuiteTarget::Meta => run_suite(&name, &|| Box::new(MetaDeployment::new(Scheme::Local, 60_000))),
            };
            writeln!(out, "{report}")?;
            if report.all_passed() {
                Ok(())
            } else {
                Err(CliError::Failed(format!("{} clause(s) failed", report.failed())))
            }
        }
        Command::Sim { scenario, implementation, seed, seeds } => {
            let mut reports: Vec<ScenarioReport> = Vec::new();
            let deployment = || -> Box<dyn Deployment> {
                match implementation {
                    ScenarioTarget::Local => Box::new(LocalDeployment::default()),
                    ScenarioTarget::Remote => Box::new(RemoteDeployment::in_process(2, 60_000)),
                    ScenarioTarget::Cs => Box::new(CsDeployment::default()),
                }
            };
            let wants = |s: Scenario| *scenario == s || *scenario == Scenario::All;
            if wants(Scenario::ReplyMatrix) {
                reports.push(sim::run_reply_matrix_scenario(&*deployment())?);
            }
            if wants(Scenario::Crosspost) {
                reports.push(sim::run_crosspost_scenario(&*deployment())?);
            }
            if wants(Scenario::Membership) {
                reports.push(sim::run_membership_scenario(&*deployment())?);
            }
            if wants(Scenario::Announce) {
                for s in *seed..seed.saturating_add((*seeds).max(1)) {
                    let params = AnnounceParams::sample(&mut rand::rngs::StdRng::seed_from_u64(s));
                    reports.push(sim::run_announce_completeness_check(s, params)?);
                }
            }
            for r in &reports {
                emit(out, r)?;
            }
            let failed = reports.iter().filter(|r| !r.passed()).count();
            if failed == 0 {
                Ok(())
            } else {
                Err(CliError::Failed(format!("{failed} scenario report(s) failed")))
            }
        }
    }
}

fn usage(e: GraffitiError) -> CliError {
    CliError::Usage(e.to_string())
}

fn emit(out: &mut dyn Write, value: &impl Serialize) -> CliResult {
    serde_json::to_writer(&mut *out, value).map_err(|e| CliError::Io(e.into()))?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}

fn delta_line(delta: DiscoverDelta) -> Value {
    serde_json::to_value(delta).expect("deltas serialize")
}

/// Writes items and warnings as they arrive, then the cursor line if any.
fn print_stream<T: Send + 'static>(
    out: &mut dyn Write,
    mut stream: PullStream<T>,
    line: impl Fn(T) -> Value,
) -> CliResult<Option<DiscoverCursor>> {
    for w in stream.warnings().to_vec() {
        emit(out, &Value::from(w))?;
    }
    let mut cursor = None;
    while let Some(event) = stream.next_event() {
        match event? {
            StreamItem::Item(item) => emit(out, &line(item))?,
            StreamItem::Warning(w) => emit(out, &Value::from(w))?,
            StreamItem::Cursor(c) => cursor = Some(c),
        }
    }
    if let Some(c) = &cursor {
        emit(out, &json!({"type": "cursor", "cursor": c.to_string()}))?;
    }
    Ok(cursor)
}

fn read_json<T: serde::de::DeserializeOwned>(stdin: &mut dyn Read) -> CliResult<T> {
    let mut text = String::new();
    stdin.read_to_string(&mut text)?;
    serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("stdin is not valid input: {e}")))
}

fn parse_url(text: &str) -> CliResult<ObjectUrl> {
    text.parse().map_err(|e: GraffitiError| CliError::Usage(e.to_string()))
}

fn parse_schema(text: &str) -> CliResult<SchemaDoc> {
    let value: Value = serde_json::from_str(text).map_err(|e| CliError::Usage(format!("schema is not JSON: {e}")))?;
    Ok(SchemaDoc::new(value))
}

fn parse_channels(names: &[String]) -> CliResult<Vec<ChannelName>> {
    names.iter().map(|n| ChannelName::new(n.as_str()).map_err(usage)).collect()
}

fn load_config(cli: &Cli) -> CliResult<MetaConfig> {
    match &cli.config {
        Some(path) => MetaConfig::load(path).map_err(usage),
        None => Ok(MetaConfig {
            local: Some(LocalConfig { path: dirs::data_dir().map(|d| d.join("graffiti").join("local")) }),
            ..MetaConfig::default()
        }),
    }
}

fn graffiti(cli: &Cli) -> CliResult<MetaGraffiti> {
    load_config(cli)?.build().map_err(usage)
}

/// Client for the announce commands: the configured registry, or else the
/// well-known servers themselves.
fn remote_client(cli: &Cli, well_known: &[String]) -> CliResult<RemoteClient> {
    let remote = load_config(cli)?.remote;
    let plain = remote.as_ref().is_some_and(|r| r.plain_http);
    let registry = match remote {
        Some(r) if !r.registry.is_empty() => Registry::new(&r.registry),
        _ => Registry::new(well_known),
    }
    .map_err(usage)?;
    let transport: Arc<dyn Transport> = Arc::new(HttpTransport::new(plain));
    Ok(RemoteClient::new(transport, registry))
}

fn session_path(cli: &Cli) -> CliResult<PathBuf> {
    match &cli.session {
        Some(p) => Ok(p.clone()),
        None => dirs::config_dir()
            .map(|d| d.join("graffiti").join("session.json"))
            .ok_or_else(|| CliError::Usage(format!("no config directory; pass --session or set {SESSION_ENV}"))),
    }
}

fn save_session(path: &Path, session: &Session) -> CliResult {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let text = serde_json::to_string_pretty(session).expect("sessions serialize");
    std::fs::write(path, text)?;
    Ok(())
}

fn require_session(path: &Path) -> CliResult<Session> {
    load_session(path)?.ok_or_else(|| CliError::Usage(format!("not logged in (no session at {}); run `graffiti login`", path.display())))
}

fn load_session(path: &Path) -> CliResult<Option<Session>> {
    match std::fs::read_to_string(path) {
        Ok(text) => serde_json::from_str(&text)
            .map(Some)
            .map_err(|e| CliError::Usage(format!("session file {} is corrupt: {e}", path.display()))),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(e.into()),
    }
}

fn optional_session(cli: &Cli, anonymous: bool) -> CliResult<Option<Session>> {
    if anonymous {
        return Ok(None);
    }
    load_session(&session_path(cli)?)
}
