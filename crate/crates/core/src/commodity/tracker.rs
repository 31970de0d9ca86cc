use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::api::MAX_QUERY_CHANNELS;
use crate::clock::{self, Clock};
use crate::error::{GraffitiError, Result};
use crate::model::ChannelName;
use crate::transport::{Handler, Request, Response, Transport};

/// One channel-file location known to the tracker.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrackerRecord {
    pub channel: ChannelName,
    pub url: String,
    #[serde(rename = "announcedAt")]
    pub announced_at: u64,
    /// Seconds; 0 never expires.
    pub ttl: u64,
}

impl TrackerRecord {
    fn live_at(&self, now: u64) -> bool {
        self.ttl == 0 || now <= self.announced_at + self.ttl * 1000
    }
}

#[derive(Deserialize)]
struct AnnounceBody {
    channel: ChannelName,
    url: String,
    #[serde(default)]
    ttl: u64,
}

#[derive(Deserialize)]
struct LookupBody {
    channels: Vec<ChannelName>,
}

#[derive(Deserialize)]
struct LookupReply {
    results: BTreeMap<ChannelName, Vec<String>>,
}

/// Maps channels to channel-file urls. Records are appended to a JSON-lines
/// file and replayed on start.
pub struct Tracker {
    records: Mutex<BTreeMap<(ChannelName, String), TrackerRecord>>,
    log: Option<Mutex<File>>,
    clock: Arc<dyn Clock>,
}

impl std::fmt::Debug for Tracker {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tracker").finish_non_exhaustive()
    }
}

fn storage(e: impl std::fmt::Display) -> GraffitiError {
    GraffitiError::StorageUnavailable(e.to_string())
}

impl Tracker {
    pub fn in_memory(clock: Arc<dyn Clock>) -> Self {
        Tracker { records: Mutex::new(BTreeMap::new()), log: None, clock }
    }

    /// Opens (or creates) a tracker persisted at `path`. A torn last line is
    /// ignored.
    pub fn open(path: PathBuf, clock: Arc<dyn Clock>) -> Result<Self> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(storage)?;
        }
        let mut records = BTreeMap::new();
        if path.exists() {
            for line in BufReader::new(File::open(&path).map_err(storage)?).lines() {
                let line = line.map_err(storage)?;
                if let Ok(r) = serde_json::from_str::<TrackerRecord>(&line) {
                    records.insert((r.channel.clone(), r.url.clone()), r);
                }
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(&path).map_err(storage)?;
        Ok(Tracker { records: Mutex::new(records), log: Some(Mutex::new(file)), clock })
    }

    pub fn with_system_clock() -> Self {
        Tracker::in_memory(clock::system())
    }

    pub fn announce(&self, channel: ChannelName, url: &str, ttl: u64) -> Result<()> {
        let parsed = url::Url::parse(url).map_err(|e| GraffitiError::InvalidRequest(format!("bad url {url:?}: {e}")))?;
        if parsed.cannot_be_a_base() {
            return Err(GraffitiError::InvalidRequest(format!("url {url:?} is not absolute")));
        }
        let record = TrackerRecord { channel, url: url.to_string(), announced_at: self.clock.now_ms(), ttl };
        let mut records = self.records.lock().expect("tracker lock");
        if let Some(log) = &self.log {
            let mut line = serde_json::to_vec(&record).expect("records serialize");
            line.push(b'\n');
            let mut f = log.lock().expect("tracker log lock");
            f.write_all(&line).and_then(|_| f.flush()).map_err(storage)?;
        }
        records.insert((record.channel.clone(), record.url.clone()), record);
        Ok(())
    }

    pub fn lookup(&self, channels: &[ChannelName]) -> Result<BTreeMap<ChannelName, Vec<String>>> {
        check_batch(channels)?;
        let now = self.clock.now_ms();
        let records = self.records.lock().expect("tracker lock");
        Ok(channels
            .iter()
            .map(|c| {
                let urls = records
                    .range((c.clone(), String::new())..)
                    .take_while(|((ch, _), _)| ch == c)
                    .filter(|(_, r)| r.live_at(now))
                    .map(|(_, r)| r.url.clone())
                    .collect();
                (c.clone(), urls)
            })
            .collect())
    }

    pub fn records(&self) -> Vec<TrackerRecord> {
        self.records.lock().expect("tracker lock").values().cloned().collect()
    }
}

fn check_batch(channels: &[ChannelName]) -> Result<()> {
    if channels.is_empty() {
        return Err(GraffitiError::InvalidRequest("lookup needs at least one channel".into()));
    }
    if channels.len() > MAX_QUERY_CHANNELS {
        return Err(GraffitiError::TooManyChannels(channels.len()));
    }
    Ok(())
}

impl Handler for Tracker {
    fn handle(&self, req: Request) -> Response {
        let result = match (req.method.as_str(), req.path_only()) {
            ("POST", "/announce") => req
                .parse_json::<AnnounceBody>()
                .and_then(|b| self.announce(b.channel, &b.url, b.ttl))
                .map(|_| Response::empty(204)),
            ("POST", "/lookup") => req
                .parse_json::<LookupBody>()
                .and_then(|b| self.lookup(&b.channels))
                .map(|results| Response::json(200, &json!({"results": results}))),
            _ => Err(GraffitiError::NotFound),
        };
        result.unwrap_or_else(|e| Response::error(&e))
    }
}

/// Client side of the tracker protocol.
#[derive(Clone)]
pub struct TrackerClient {
    transport: Arc<dyn Transport>,
    authority: String,
}

impl std::fmt::Debug for TrackerClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TrackerClient").field("authority", &self.authority).finish()
    }
}

impl TrackerClient {
    pub fn new(transport: Arc<dyn Transport>, authority: impl Into<String>) -> Self {
        TrackerClient { transport, authority: authority.into() }
    }

    pub fn authority(&self) -> &str {
        &self.authority
    }

    fn call(&self, req: Request) -> Result<Response> {
        let resp = self
            .transport
            .send(&self.authority, req)
            .map_err(|e| GraffitiError::TrackerUnavailable(format!("{}: {e}", self.authority)))?;
        if resp.is_success() {
            Ok(resp)
        } else {
            match resp.into_error() {
                e @ (GraffitiError::InvalidRequest(_) | GraffitiError::TooManyChannels(_)) => Err(e),
                e => Err(GraffitiError::TrackerUnavailable(format!("{}: {e}", self.authority))),
            }
        }
    }

    pub fn announce(&self, channel: &ChannelName, url: &str, ttl: u64) -> Result<()> {
        self.call(Request::new("POST", "/announce").json(&json!({"channel": channel, "url": url, "ttl": ttl})))?;
        Ok(())
    }

    /// One round trip for the whole batch.
    pub fn lookup(&self, channels: &[ChannelName]) -> Result<BTreeMap<ChannelName, Vec<String>>> {
        check_batch(channels)?;
        let reply: LookupReply = self.call(Request::new("POST", "/lookup").json(&json!({"channels": channels})))?.into_json()?;
        Ok(reply.results)
    }
}
