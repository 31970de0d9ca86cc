//! Federated implementation: independent HTTP servers, each an isolated
//! Graffiti instance, and a client that routes CRUD calls by the authority
//! in the object url and fans `discover` out over a set of servers.

mod client;
mod ndjson;
mod server;

use std::fs;
use std::path::{Path, PathBuf};

pub use client::RemoteClient;
pub use ndjson::parse_ndjson;
pub use server::{RemoteServer, ServerConfig};

use crate::error::{GraffitiError, Result};
use crate::model::ActorUri;
use crate::transport::authority_of;

pub(crate) const SERVER_CURSOR_KIND: &str = "remote-server";
pub(crate) const CLIENT_CURSOR_KIND: &str = "remote";

pub const REGISTRY_ENV: &str = "GRAFFITI_REGISTRY";

pub fn remote_actor(origin: &str, handle: &str) -> Result<ActorUri> {
    ActorUri::new(format!("https://{origin}/a/{handle}"))
}

/// Ordered, duplicate-free list of server authorities.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Registry {
    servers: Vec<String>,
}

impl Registry {
    pub fn new<S: AsRef<str>>(origins: impl IntoIterator<Item = S>) -> Result<Self> {
        let mut servers: Vec<String> = Vec::new();
        for o in origins {
            let authority = authority_of(o.as_ref())?;
            if !servers.contains(&authority) {
                servers.push(authority);
            }
        }
        Ok(Registry { servers })
    }

    /// One origin per line; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        Registry::new(
            text.lines()
                .map(|l| l.split('#').next().unwrap_or("").trim())
                .filter(|l| !l.is_empty()),
        )
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| GraffitiError::InvalidRequest(format!("cannot read registry {}: {e}", path.display())))?;
        Registry::parse(&text)
    }

    /// `$GRAFFITI_REGISTRY` when set, otherwise `default`.
    pub fn registry_path(default: Option<PathBuf>) -> Option<PathBuf> {
        std::env::var_os(REGISTRY_ENV).map(PathBuf::from).or(default)
    }

    pub fn servers(&self) -> &[String] {
        &self.servers
    }

    pub fn is_empty(&self) -> bool {
        self.servers.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registry_file_format() {
        let r = Registry::parse("# servers\nhttps://a.example\n\nb.example:8080 # second\nhttps://a.example/\n").unwrap();
        assert_eq!(r.servers(), ["a.example", "b.example:8080"]);
    }
}
