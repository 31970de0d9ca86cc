//! Commodity-storage implementation: each actor keeps one file per channel
//! on a dumb blob host, a tracker maps channels to file urls, and readers
//! download whole files and filter them locally.

mod client;
mod file;
mod storage;
mod tracker;

pub use client::{cs_parts, CsClient, CsOptions, CS_CURSOR_KIND, INDEX_PATH};
pub use file::{channel_file_path, validate_channel_file, ChannelFile, ChannelFileError, FileEntry, FileTombstone, FORMAT_VERSION};
pub use storage::{BlobFetcher, BlobHost, FsProvider, FsStorage, HttpProvider, HttpStorage, StorageAdapter, StorageProvider};
pub use tracker::{Tracker, TrackerClient, TrackerRecord};
