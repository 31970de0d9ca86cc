//! The object data model shared by every implementation: identifiers,
//! objects, tombstones, masking and patching.

mod channel;
mod mask;
mod patch;
mod shape;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

pub use channel::{concat_channels, hash_channel, ChannelError};
pub use mask::{is_visible_to, mask_object};
pub use patch::{apply_patch, Patch, PatchError, PatchOp};
pub use shape::{validate_base, validate_object_shape};

use crate::error::GraffitiError;

/// Upper bound on the UTF-8 length of channel names and actor URIs.
pub const MAX_NAME_BYTES: usize = 2048;

/// Globally unique identifier of a login identity.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct ActorUri(String);

impl ActorUri {
    pub fn new(uri: impl Into<String>) -> Result<Self, GraffitiError> {
        let uri = uri.into();
        if uri.is_empty() || uri.len() > MAX_NAME_BYTES {
            return Err(GraffitiError::InvalidRequest(format!(
                "actor uri must be 1..={MAX_NAME_BYTES} bytes"
            )));
        }
        if !has_uri_scheme(&uri) {
            return Err(GraffitiError::InvalidRequest(format!(
                "actor uri is not absolute: {uri}"
            )));
        }
        Ok(ActorUri(uri))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

/// RFC 3986 `scheme ":" rest` with a non-empty rest.
fn has_uri_scheme(s: &str) -> bool {
    let Some((scheme, rest)) = s.split_once(':') else {
        return false;
    };
    let mut chars = scheme.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic())
        && chars.all(|c| c.is_ascii_alphanumeric() || matches!(c, '+' | '-' | '.'))
        && !rest.is_empty()
        && !s.chars().any(char::is_whitespace)
}

impl TryFrom<String> for ActorUri {
    type Error = GraffitiError;
    fn try_from(value: String) -> Result<Self, Self::Error> {
        ActorUri::new(value)
    }
}

impl From<ActorUri> for String {
    fn from(value: ActorUri) -> Self {
        value.0
    }
}

impl fmt::Display for ActorUri {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl FromStr for ActorUri {
    type Err = GraffitiError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ActorUri::new(s)
    }
}

/// A channel name: any non-empty string up to [`MAX_NAME_BYTES`].
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct ChannelName(String);

impl ChannelName {
    pub fn new(name: impl Into<String>) -> Result<Self, GraffitiError> {
        let name = name.into();
        if name.is_empty() || name.len() > MAX_NAME_BYTES {
            return Err(GraffitiError::InvalidChannel(format!(
                "channel names must be 1..={MAX_NAME_BYTES} bytes, got {}",
                name.len()
            )));
        }
        Ok(ChannelName(name))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for ChannelName {
    type Error = GraffitiError;
    fn try_from(value: String) -> Result<Self, Self::Error> {
        ChannelName::new(value)
    }
}

impl From<ChannelName> for String {
    fn from(value: ChannelName) -> Self {
        value.0
    }
}

impl From<&ActorUri> for ChannelName {
    fn from(actor: &ActorUri) -> Self {
        ChannelName(actor.0.clone())
    }
}

impl From<&ObjectUrl> for ChannelName {
    /// The channel named by an object's URL, where replies conventionally go.
    fn from(url: &ObjectUrl) -> Self {
        ChannelName(url.to_string())
    }
}

impl fmt::Display for ChannelName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl FromStr for ChannelName {
    type Err = GraffitiError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ChannelName::new(s)
    }
}

/// Which implementation serves an object.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Scheme {
    Local,
    Remote,
    Cs,
}

impl Scheme {
    pub const ALL: [Scheme; 3] = [Scheme::Local, Scheme::Remote, Scheme::Cs];

    pub fn as_str(self) -> &'static str {
        match self {
            Scheme::Local => "local",
            Scheme::Remote => "remote",
            Scheme::Cs => "cs",
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Scheme {
    type Err = GraffitiError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "local" => Ok(Scheme::Local),
            "remote" => Ok(Scheme::Remote),
            "cs" => Ok(Scheme::Cs),
            other => Err(GraffitiError::MalformedUrl(format!("unknown scheme {other:?}"))),
        }
    }
}

/// `graffiti:<scheme>:<suffix>`
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct ObjectUrl {
    scheme: Scheme,
    suffix: String,
}

const URL_PREFIX: &str = "graffiti:";

impl ObjectUrl {
    pub fn new(scheme: Scheme, suffix: impl Into<String>) -> Result<Self, GraffitiError> {
        let suffix = suffix.into();
        if suffix.is_empty() {
            return Err(GraffitiError::MalformedUrl("empty suffix".into()));
        }
        if suffix.chars().any(|c| c.is_whitespace() || c.is_control()) {
            return Err(GraffitiError::MalformedUrl("suffix contains whitespace".into()));
        }
        if scheme == Scheme::Remote {
            let (authority, id) = suffix
                .split_once('/')
                .ok_or_else(|| GraffitiError::MalformedUrl("remote url lacks an id".into()))?;
            if !is_dns_authority(authority) || id.is_empty() {
                return Err(GraffitiError::MalformedUrl(format!(
                    "remote url must be <authority>/<id>, got {suffix:?}"
                )));
            }
        }
        Ok(ObjectUrl { scheme, suffix })
    }

    pub fn parse(text: &str) -> Result<Self, GraffitiError> {
        let rest = text
            .strip_prefix(URL_PREFIX)
            .ok_or_else(|| GraffitiError::MalformedUrl(format!("missing graffiti: prefix in {text:?}")))?;
        let (scheme, suffix) = rest
            .split_once(':')
            .ok_or_else(|| GraffitiError::MalformedUrl(format!("missing scheme in {text:?}")))?;
        ObjectUrl::new(scheme.parse()?, suffix)
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    pub fn suffix(&self) -> &str {
        &self.suffix
    }

    /// For remote urls, the server authority and the server-local id.
    pub fn remote_parts(&self) -> Option<(&str, &str)> {
        match self.scheme {
            Scheme::Remote => self.suffix.split_once('/'),
            _ => None,
        }
    }
}

fn is_dns_authority(s: &str) -> bool {
    !s.is_empty()
        && s.chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '.' | '-' | ':' | '[' | ']' | '_'))
}

impl fmt::Display for ObjectUrl {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{URL_PREFIX}{}:{}", self.scheme, self.suffix)
    }
}

impl FromStr for ObjectUrl {
    type Err = GraffitiError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ObjectUrl::parse(s)
    }
}

impl TryFrom<String> for ObjectUrl {
    type Error = GraffitiError;
    fn try_from(value: String) -> Result<Self, Self::Error> {
        ObjectUrl::parse(&value)
    }
}

impl From<ObjectUrl> for String {
    fn from(value: ObjectUrl) -> Self {
        value.to_string()
    }
}

pub fn parse_url(text: &str) -> Result<ObjectUrl, GraffitiError> {
    ObjectUrl::parse(text)
}

/// The atomic social datum: a JSON object plus its envelope.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraffitiObject {
    pub value: Map<String, Value>,
    pub url: ObjectUrl,
    pub actor: ActorUri,
    pub channels: Vec<ChannelName>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub allowed: Option<Vec<ActorUri>>,
    pub revision: u64,
}

impl GraffitiObject {
    pub fn is_public(&self) -> bool {
        self.allowed.is_none()
    }

    pub fn in_any_channel(&self, channels: &[ChannelName]) -> bool {
        self.channels.iter().any(|c| channels.contains(c))
    }

    /// The envelope as the JSON document schemas are evaluated against.
    pub fn to_json(&self) -> Value {
        serde_json::to_value(self).expect("objects always serialize")
    }
}

/// Marker for an object that was deleted or stopped matching a query.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tombstone {
    pub url: ObjectUrl,
    #[serde(rename = "deletedAt")]
    pub deleted_at: u64,
}

/// What a caller hands to `put`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ObjectBase {
    pub value: Map<String, Value>,
    #[serde(default)]
    pub channels: Vec<ChannelName>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub allowed: Option<Vec<ActorUri>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub url: Option<ObjectUrl>,
}

impl ObjectBase {
    /// Builds a base from a JSON value; panics if `value` is not an object.
    /// Meant for fixtures and tests.
    pub fn new(value: Value, channels: &[&str]) -> Self {
        let Value::Object(value) = value else {
            panic!("object values must be JSON objects");
        };
        ObjectBase {
            value,
            channels: channels
                .iter()
                .map(|c| ChannelName::new(*c).expect("valid channel"))
                .collect(),
            allowed: None,
            url: None,
        }
    }

    pub fn with_allowed(mut self, allowed: Vec<ActorUri>) -> Self {
        self.allowed = Some(allowed);
        self
    }

    pub fn replacing(mut self, url: ObjectUrl) -> Self {
        self.url = Some(url);
        self
    }
}

impl From<&GraffitiObject> for ObjectBase {
    fn from(o: &GraffitiObject) -> Self {
        ObjectBase {
            value: o.value.clone(),
            channels: o.channels.clone(),
            allowed: o.allowed.clone(),
            url: Some(o.url.clone()),
        }
    }
}
