//! Graffiti: a small API for interoperable social applications, with
//! local, federated-server and commodity-storage back-ends.

pub mod announce;
pub mod api;
pub mod clock;
pub mod commodity;
pub mod conformance;
pub mod error;
pub mod model;
pub mod remote;
pub mod router;
pub mod local;
pub mod schema;
pub mod sim;
pub mod store;
pub mod transport;

pub use api::{
    ChannelStat, Credential, DiscoverCursor, DiscoverDelta, Graffiti, Home, LoginRequest, PullStream, Session,
    Warning,
};
pub use error::{GraffitiError, Result};
pub use model::{ActorUri, ChannelName, GraffitiObject, ObjectBase, ObjectUrl, Patch, Scheme, Tombstone};
pub use schema::SchemaDoc;
