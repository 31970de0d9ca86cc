use sha2::{Digest, Sha256};
use thiserror::Error;

use super::{ChannelName, MAX_NAME_BYTES};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ChannelError {
    #[error("concatenation needs at least two parts, got {0}")]
    TooFewParts(usize),
    #[error("concatenated channel is {0} bytes, over the {max} byte limit", max = MAX_NAME_BYTES)]
    LengthExceeded(usize),
}

/// Joins channel names into a more specific one, e.g. `dating+zip:12345`.
///
/// Literal `+` and `%` inside a part are percent-encoded first so that the
/// mapping from part lists to names stays injective.
pub fn concat_channels(parts: &[ChannelName]) -> Result<ChannelName, ChannelError> {
    if parts.len() < 2 {
        return Err(ChannelError::TooFewParts(parts.len()));
    }
    let joined = parts
        .iter()
        .map(|p| p.as_str().replace('%', "%25").replace('+', "%2B"))
        .collect::<Vec<_>>()
        .join("+");
    if joined.len() > MAX_NAME_BYTES {
        return Err(ChannelError::LengthExceeded(joined.len()));
    }
    Ok(ChannelName(joined))
}

/// Lowercase hex SHA-256 of the channel name's UTF-8 bytes.
pub fn hash_channel(name: &ChannelName) -> ChannelName {
    ChannelName(hex::encode(Sha256::digest(name.as_str().as_bytes())))
}
