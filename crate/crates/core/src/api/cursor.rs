use std::fmt;
use std::str::FromStr;

use base64::engine::general_purpose::URL_SAFE_NO_PAD;
use base64::Engine;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::GraffitiError;

const PREFIX: &str = "gc1.";

/// Resumption point of a discover stream. The token is printable and
/// survives process restarts; each implementation decides what goes in its
/// body.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DiscoverCursor {
    token: String,
    issued_at: u64,
}

#[derive(Serialize, Deserialize)]
struct Envelope {
    k: String,
    iat: u64,
    b: Value,
}

impl DiscoverCursor {
    pub fn encode<T: Serialize>(kind: &str, issued_at: u64, body: &T) -> Self {
        let envelope = Envelope {
            k: kind.to_string(),
            iat: issued_at,
            b: serde_json::to_value(body).expect("cursor bodies serialize"),
        };
        let json = serde_json::to_vec(&envelope).expect("cursor envelopes serialize");
        DiscoverCursor {
            token: format!("{PREFIX}{}", URL_SAFE_NO_PAD.encode(json)),
            issued_at,
        }
    }

    /// Decodes the body, checking that the cursor was issued by `kind`.
    pub fn decode<T: DeserializeOwned>(&self, kind: &str) -> Result<T, GraffitiError> {
        let envelope = parse_envelope(&self.token)?;
        if envelope.k != kind {
            return Err(GraffitiError::InvalidCursor(format!(
                "cursor issued by {:?}, not {kind:?}",
                envelope.k
            )));
        }
        serde_json::from_value(envelope.b).map_err(|e| GraffitiError::InvalidCursor(e.to_string()))
    }

    pub fn kind(&self) -> Result<String, GraffitiError> {
        Ok(parse_envelope(&self.token)?.k)
    }

    pub fn issued_at(&self) -> u64 {
        self.issued_at
    }

    pub fn token(&self) -> &str {
        &self.token
    }

    pub fn age_ms(&self, now_ms: u64) -> u64 {
        now_ms.saturating_sub(self.issued_at)
    }

    /// Expired once its age is strictly greater than the retention window.
    pub fn check_fresh(&self, now_ms: u64, retention_ms: u64) -> Result<(), GraffitiError> {
        if self.age_ms(now_ms) > retention_ms {
            Err(GraffitiError::CursorExpired)
        } else {
            Ok(())
        }
    }
}

fn parse_envelope(token: &str) -> Result<Envelope, GraffitiError> {
    let bad = |why: &str| GraffitiError::InvalidCursor(why.to_string());
    let body = token.strip_prefix(PREFIX).ok_or_else(|| bad("unknown cursor format"))?;
    let bytes = URL_SAFE_NO_PAD.decode(body).map_err(|_| bad("cursor is not base64"))?;
    serde_json::from_slice(&bytes).map_err(|_| bad("cursor body is not valid"))
}

impl FromStr for DiscoverCursor {
    type Err = GraffitiError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let envelope = parse_envelope(s.trim())?;
        Ok(DiscoverCursor { token: s.trim().to_string(), issued_at: envelope.iat })
    }
}

impl fmt::Display for DiscoverCursor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.token)
    }
}

impl Serialize for DiscoverCursor {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.token)
    }
}

impl<'de> Deserialize<'de> for DiscoverCursor {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn round_trips_through_text() {
        let c = DiscoverCursor::encode("local", 42, &json!({"seq": 7}));
        let text = c.to_string();
        assert!(text.chars().all(|ch| ch.is_ascii_graphic()));
        let back: DiscoverCursor = text.parse().unwrap();
        assert_eq!(back, c);
        assert_eq!(back.issued_at(), 42);
        assert_eq!(back.decode::<Value>("local").unwrap(), json!({"seq": 7}));
        assert!(back.decode::<Value>("remote").is_err());
    }

    #[test]
    fn expiry_is_strict() {
        let c = DiscoverCursor::encode("x", 1_000, &());
        assert!(c.check_fresh(1_500, 500).is_ok());
        assert_eq!(c.check_fresh(1_501, 500), Err(GraffitiError::CursorExpired));
    }

    #[test]
    fn garbage_rejected() {
        assert!("nope".parse::<DiscoverCursor>().is_err());
        assert!("gc1.!!!".parse::<DiscoverCursor>().is_err());
    }
}
