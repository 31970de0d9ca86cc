//! Announce protocol: posters advertise their small server on a few
//! well-known servers with `AnnounceServer` activities; readers first look
//! those up in the channels they care about, then discover only on the
//! announced servers.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;
use serde_json::{json, Value};

use crate::api::{Graffiti, PullStream, Session, Warning};
use crate::error::{GraffitiError, Result};
use crate::model::{hash_channel, ActorUri, ChannelName, GraffitiObject, ObjectBase, ObjectUrl};
use crate::remote::RemoteClient;
use crate::schema::SchemaDoc;
use crate::transport::authority_of;

pub const ANNOUNCE_ACTIVITY: &str = "AnnounceServer";

#[derive(Debug, Clone, Default)]
pub struct AnnounceConfig {
    pub well_known: Vec<String>,
    pub hash_channels: bool,
    pub allowed: Option<Vec<ActorUri>>,
    /// Schema hints written into announcements; readers whose query schema
    /// is not among a non-empty hint list skip that announcement.
    pub schemas: Option<Vec<SchemaDoc>>,
}

impl AnnounceConfig {
    pub fn new<S: AsRef<str>>(well_known: impl IntoIterator<Item = S>) -> Result<Self> {
        let well_known = well_known
            .into_iter()
            .map(|s| authority_of(s.as_ref()))
            .collect::<Result<Vec<_>>>()?;
        if well_known.is_empty() {
            return Err(GraffitiError::InvalidRequest("announce needs at least one well-known server".into()));
        }
        Ok(AnnounceConfig { well_known, ..Default::default() })
    }

    pub fn hashed(mut self, on: bool) -> Self {
        self.hash_channels = on;
        self
    }

    fn announced_channels(&self, channels: &[ChannelName]) -> Vec<ChannelName> {
        if self.hash_channels {
            channels.iter().map(hash_channel).collect()
        } else {
            channels.to_vec()
        }
    }
}

/// Channel under which an actor's announcement of one target is filed, so
/// that re-publishing finds it whatever channels it already carries.
fn bookkeeping_channel(actor: &ActorUri, target: &str) -> ChannelName {
    let name = ChannelName::new(format!("announce:{actor} {target}")).expect("nonempty channel");
    hash_channel(&name)
}

fn announcement_schema(actor: Option<&ActorUri>, target: Option<&str>) -> SchemaDoc {
    let mut value = json!({
        "type": "object",
        "required": ["activity", "target"],
        "properties": {"activity": {"const": ANNOUNCE_ACTIVITY}, "target": {"type": "string"}}
    });
    if let Some(t) = target {
        value["properties"]["target"] = json!({"const": t});
    }
    let mut root = json!({"required": ["value"], "properties": {"value": value}});
    if let Some(a) = actor {
        root["properties"]["actor"] = json!({"const": a.as_str()});
    }
    SchemaDoc::new(root)
}

fn sorted(allowed: &Option<Vec<ActorUri>>) -> Option<BTreeSet<String>> {
    allowed.as_ref().map(|a| a.iter().map(|x| x.as_str().to_string()).collect())
}

#[derive(Debug, Default)]
pub struct PublishReport {
    pub urls: Vec<ObjectUrl>,
    pub failures: Vec<(String, GraffitiError)>,
}

/// Publishes (or widens) the actor's announcement of `small_server` on every
/// well-known server. `sessions` holds one session per well-known server,
/// matched by home.
pub fn publish_announcements(
    client: &RemoteClient,
    sessions: &[Session],
    small_server: &str,
    channels: &[ChannelName],
    config: &AnnounceConfig,
) -> Result<PublishReport> {
    if channels.is_empty() {
        return Err(GraffitiError::InvalidRequest("announce needs at least one channel".into()));
    }
    let target = authority_of(small_server)?;
    let mut report = PublishReport::default();
    for server in &config.well_known {
        let session = sessions.iter().find(|s| s.home.locator() == Some(server.as_str()));
        let outcome = match session {
            Some(s) => publish_one(client, s, server, &target, channels, config),
            None => Err(GraffitiError::InvalidRequest(format!("no session on well-known server {server}"))),
        };
        match outcome {
            Ok(url) => report.urls.push(url),
            Err(e) => report.failures.push((server.clone(), e)),
        }
    }
    Ok(report)
}

fn publish_one(
    client: &RemoteClient,
    session: &Session,
    server: &str,
    target: &str,
    channels: &[ChannelName],
    config: &AnnounceConfig,
) -> Result<ObjectUrl> {
    let book = bookkeeping_channel(&session.actor, target);
    let existing = client
        .discover_on(
            &[server.to_string()],
            std::slice::from_ref(&book),
            &announcement_schema(Some(&session.actor), Some(target)),
            Some(session),
        )?
        .collect_all()?;
    if let Some(w) = existing.warnings.first() {
        return Err(GraffitiError::HomeUnavailable(w.to_string()));
    }
    let wanted_allowed = sorted(&config.allowed);
    let previous = existing.items.into_iter().find(|o| sorted(&o.allowed) == wanted_allowed);

    let mut names: BTreeSet<ChannelName> = config.announced_channels(channels).into_iter().collect();
    names.insert(book);
    let mut schemas: Vec<Value> = config
        .schemas
        .iter()
        .flatten()
        .map(|s| s.as_json().clone())
        .collect();
    if let Some(prev) = &previous {
        names.extend(prev.channels.iter().cloned());
        if let Some(Value::Array(old)) = prev.value.get("schemas") {
            for s in old {
                if !schemas.contains(s) {
                    schemas.push(s.clone());
                }
            }
        }
    }
    let mut value = json!({"activity": ANNOUNCE_ACTIVITY, "target": target});
    if !schemas.is_empty() {
        value["schemas"] = Value::Array(schemas);
    }
    let names: Vec<&str> = names.iter().map(ChannelName::as_str).collect();
    let mut base = ObjectBase::new(value, &names);
    base.allowed = config.allowed.clone();
    if let Some(prev) = previous {
        base = base.replacing(prev.url);
    }
    Ok(client.put(base, session)?.url)
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct AnnounceReport {
    /// Well-known servers that answered phase 1.
    pub well_known: Vec<String>,
    /// Well-known servers that could not be reached.
    pub unreachable: Vec<String>,
    /// Servers queried in phase 2.
    pub queried: Vec<String>,
    /// Announced servers not queried, with the reason.
    pub skipped: BTreeMap<String, String>,
}

pub struct AnnounceDiscovery {
    pub objects: PullStream<GraffitiObject>,
    pub report: AnnounceReport,
}

impl std::fmt::Debug for AnnounceDiscovery {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AnnounceDiscovery").field("report", &self.report).finish_non_exhaustive()
    }
}

/// Discover through announcements. Fails only when no well-known server
/// answers.
pub fn announce_discover(
    client: &RemoteClient,
    channels: &[ChannelName],
    schema: &SchemaDoc,
    config: &AnnounceConfig,
    session: Option<&Session>,
) -> Result<AnnounceDiscovery> {
    schema.compile()?;
    let lookup = client
        .discover_on(
            &config.well_known,
            &config.announced_channels(channels),
            &announcement_schema(None, None),
            session,
        )?
        .collect_all()?;

    let mut report = AnnounceReport::default();
    for server in &config.well_known {
        if lookup.warnings.iter().any(|w| w.source.as_deref() == Some(server.as_str())) {
            report.unreachable.push(server.clone());
        } else {
            report.well_known.push(server.clone());
        }
    }
    if report.well_known.is_empty() {
        return Err(GraffitiError::Unavailable("no well-known server answered".into()));
    }

    let query = schema.as_json();
    let mut targets = BTreeSet::new();
    for announcement in &lookup.items {
        let Some(Ok(target)) = announcement.value.get("target").and_then(Value::as_str).map(authority_of) else {
            continue;
        };
        if config.hash_channels && config.well_known.contains(&target) {
            report.skipped.entry(target).or_insert_with(|| "well-known server in hashed mode".into());
            continue;
        }
        let hinted_out = match announcement.value.get("schemas") {
            Some(Value::Array(hints)) if !hints.is_empty() => !query.as_object().is_some_and(|q| q.is_empty()) && !hints.contains(query),
            _ => false,
        };
        if hinted_out {
            report.skipped.entry(target).or_insert_with(|| "schema hint does not match".into());
            continue;
        }
        targets.insert(target);
    }
    for t in &targets {
        report.skipped.remove(t);
    }
    report.queried = targets.into_iter().collect();

    let phase_one: Vec<Warning> = lookup.warnings;
    let objects = if report.queried.is_empty() {
        PullStream::empty().with_warnings(phase_one)
    } else {
        client.discover_on(&report.queried, channels, schema, session)?.with_warnings(phase_one)
    };
    Ok(AnnounceDiscovery { objects, report })
}
