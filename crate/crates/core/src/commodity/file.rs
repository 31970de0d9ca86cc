use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::model::{ActorUri, ChannelName, GraffitiObject, ObjectUrl};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ChannelFileError {
    #[error("malformed channel file: {0}")]
    MalformedFile(String),
    #[error("object {url} is not in channel {expected}")]
    ChannelMismatch { url: String, expected: String },
    #[error("object {url} claims actor {claimed}, file belongs to {owner}")]
    ActorMismatch { url: String, claimed: String, owner: String },
}

/// Deletion marker kept inside a channel file so readers can report it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileTombstone {
    pub tombstone: bool,
    pub url: ObjectUrl,
    #[serde(rename = "deletedAt")]
    pub deleted_at: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FileEntry {
    Tombstone(FileTombstone),
    Object(GraffitiObject),
}

impl FileEntry {
    pub fn url(&self) -> &ObjectUrl {
        match self {
            FileEntry::Tombstone(t) => &t.url,
            FileEntry::Object(o) => &o.url,
        }
    }
}

/// Every object one actor has published to one channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelFile {
    #[serde(rename = "formatVersion")]
    pub format_version: u32,
    pub actor: ActorUri,
    pub channel: ChannelName,
    #[serde(rename = "updatedAt")]
    pub updated_at: u64,
    pub objects: Vec<FileEntry>,
    /// Reserved for splitting files by schema; never set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub partition: Option<String>,
}

impl ChannelFile {
    pub fn new(actor: ActorUri, channel: ChannelName) -> Self {
        ChannelFile { format_version: FORMAT_VERSION, actor, channel, updated_at: 0, objects: Vec::new(), partition: None }
    }

    pub fn live(&self) -> impl Iterator<Item = &GraffitiObject> {
        self.objects.iter().filter_map(|e| match e {
            FileEntry::Object(o) => Some(o),
            FileEntry::Tombstone(_) => None,
        })
    }

    pub fn tombstones(&self) -> impl Iterator<Item = &FileTombstone> {
        self.objects.iter().filter_map(|e| match e {
            FileEntry::Tombstone(t) => Some(t),
            FileEntry::Object(_) => None,
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("channel files serialize")
    }
}

/// Blob path of the file for `channel` within an actor's storage.
pub fn channel_file_path(channel: &ChannelName) -> String {
    format!("channels/{}.json", hex::encode(Sha256::digest(channel.as_str().as_bytes())))
}

/// Parses a downloaded file and rejects anything the file could use to
/// inject objects into channels or identities it does not own.
pub fn validate_channel_file(bytes: &[u8], expected: &ChannelName) -> Result<ChannelFile, ChannelFileError> {
    let file: ChannelFile =
        serde_json::from_slice(bytes).map_err(|e| ChannelFileError::MalformedFile(e.to_string()))?;
    if file.format_version != FORMAT_VERSION {
        return Err(ChannelFileError::MalformedFile(format!("unsupported formatVersion {}", file.format_version)));
    }
    if file.channel != *expected {
        return Err(ChannelFileError::ChannelMismatch { url: "<file>".into(), expected: expected.to_string() });
    }
    for entry in &file.objects {
        match entry {
            FileEntry::Tombstone(t) if !t.tombstone => {
                return Err(ChannelFileError::MalformedFile(format!("entry {} has tombstone: false", t.url)));
            }
            FileEntry::Tombstone(_) => {}
            FileEntry::Object(o) => {
                if !o.channels.contains(expected) {
                    return Err(ChannelFileError::ChannelMismatch { url: o.url.to_string(), expected: expected.to_string() });
                }
                if o.actor != file.actor {
                    return Err(ChannelFileError::ActorMismatch {
                        url: o.url.to_string(),
                        claimed: o.actor.to_string(),
                        owner: file.actor.to_string(),
                    });
                }
            }
        }
    }
    Ok(file)
}
