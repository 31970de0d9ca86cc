use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use sha2::{Digest, Sha256};

use crate::error::{GraffitiError, Result};
use crate::transport::{authority_of, Handler, Request, Response, Transport};

/// A dumb blob store holding one actor's files.
pub trait StorageAdapter: Send + Sync {
    fn write_blob(&self, path: &str, bytes: &[u8]) -> Result<()>;
    fn read_blob(&self, path: &str) -> Result<Option<Vec<u8>>>;
    fn delete_blob(&self, path: &str) -> Result<()>;
    /// Absolute URL at which anyone can fetch `path`.
    fn public_url(&self, path: &str) -> String;
}

/// Hands out an actor's storage at login.
pub trait StorageProvider: Send + Sync {
    fn open(&self, handle: &str, secret: &str) -> Result<Arc<dyn StorageAdapter>>;
}

fn storage(e: impl std::fmt::Display) -> GraffitiError {
    GraffitiError::StorageUnavailable(e.to_string())
}

fn check_handle(handle: &str) -> Result<()> {
    if handle.is_empty() || !handle.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.')) || handle.starts_with('.') {
        return Err(GraffitiError::InvalidRequest(format!("invalid handle {handle:?}")));
    }
    Ok(())
}

fn check_path(path: &str) -> Result<()> {
    if path.split('/').any(|s| s.is_empty() || s == "." || s == "..") {
        return Err(GraffitiError::InvalidRequest(format!("invalid blob path {path:?}")));
    }
    Ok(())
}

/// Files under a local directory, published as `file://` URLs.
#[derive(Debug, Clone)]
pub struct FsStorage {
    root: PathBuf,
}

impl FsStorage {
    pub fn new(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(storage)?;
        Ok(FsStorage { root: root.canonicalize().map_err(storage)? })
    }
}

impl StorageAdapter for FsStorage {
    fn write_blob(&self, path: &str, bytes: &[u8]) -> Result<()> {
        check_path(path)?;
        let target = self.root.join(path);
        if let Some(dir) = target.parent() {
            fs::create_dir_all(dir).map_err(storage)?;
        }
        let tmp = target.with_extension("tmp");
        fs::write(&tmp, bytes).and_then(|_| fs::rename(&tmp, &target)).map_err(storage)
    }

    fn read_blob(&self, path: &str) -> Result<Option<Vec<u8>>> {
        check_path(path)?;
        match fs::read(self.root.join(path)) {
            Ok(b) => Ok(Some(b)),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(storage(e)),
        }
    }

    fn delete_blob(&self, path: &str) -> Result<()> {
        check_path(path)?;
        match fs::remove_file(self.root.join(path)) {
            Err(e) if e.kind() != std::io::ErrorKind::NotFound => Err(storage(e)),
            _ => Ok(()),
        }
    }

    fn public_url(&self, path: &str) -> String {
        let mut url = url::Url::from_directory_path(&self.root).expect("canonical roots are absolute");
        if !path.is_empty() {
            url = url.join(path).expect("checked relative path");
        }
        url.to_string()
    }
}

/// One subdirectory per handle under a shared root.
#[derive(Debug, Clone)]
pub struct FsProvider {
    root: PathBuf,
}

impl FsProvider {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        FsProvider { root: root.into() }
    }
}

impl StorageProvider for FsProvider {
    fn open(&self, handle: &str, _secret: &str) -> Result<Arc<dyn StorageAdapter>> {
        check_handle(handle)?;
        Ok(Arc::new(FsStorage::new(self.root.join(handle))?))
    }
}

/// Blobs on a static host that accepts authenticated `PUT` and `DELETE`.
pub struct HttpStorage {
    transport: Arc<dyn Transport>,
    authority: String,
    prefix: String,
    token: String,
}

impl HttpStorage {
    pub fn new(transport: Arc<dyn Transport>, authority: &str, prefix: &str, token: &str) -> Self {
        HttpStorage { transport, authority: authority.to_string(), prefix: prefix.to_string(), token: token.to_string() }
    }

    fn send(&self, method: &str, path: &str, body: Option<&[u8]>) -> Result<Response> {
        check_path(path)?;
        let mut req = Request::new(method, format!("/{}/{path}", self.prefix)).bearer(Some(&self.token));
        if let Some(b) = body {
            req.body = b.to_vec();
        }
        self.transport.send(&self.authority, req).map_err(storage)
    }
}

impl StorageAdapter for HttpStorage {
    fn write_blob(&self, path: &str, bytes: &[u8]) -> Result<()> {
        let resp = self.send("PUT", path, Some(bytes))?;
        match resp.status {
            s if (200..300).contains(&s) => Ok(()),
            401 | 403 => Err(GraffitiError::AuthFailed),
            _ => Err(storage(format!("PUT {path}: {}", resp.into_error()))),
        }
    }

    fn read_blob(&self, path: &str) -> Result<Option<Vec<u8>>> {
        let resp = self.send("GET", path, None)?;
        match resp.status {
            404 => Ok(None),
            s if (200..300).contains(&s) => resp.read_all().map(Some),
            _ => Err(storage(format!("GET {path}: {}", resp.into_error()))),
        }
    }

    fn delete_blob(&self, path: &str) -> Result<()> {
        let resp = self.send("DELETE", path, None)?;
        match resp.status {
            s if (200..300).contains(&s) || s == 404 => Ok(()),
            401 | 403 => Err(GraffitiError::AuthFailed),
            _ => Err(storage(format!("DELETE {path}: {}", resp.into_error()))),
        }
    }

    fn public_url(&self, path: &str) -> String {
        format!("{}/{}/{path}", self.transport.base_url(&self.authority), self.prefix)
    }
}

/// Each handle gets the `/<handle>/` prefix on one blob host, using the
/// login secret as its write token.
pub struct HttpProvider {
    transport: Arc<dyn Transport>,
    authority: String,
}

impl HttpProvider {
    pub fn new(transport: Arc<dyn Transport>, authority: &str) -> Self {
        HttpProvider { transport, authority: authority.to_string() }
    }
}

impl StorageProvider for HttpProvider {
    fn open(&self, handle: &str, secret: &str) -> Result<Arc<dyn StorageAdapter>> {
        check_handle(handle)?;
        if secret.is_empty() {
            return Err(GraffitiError::InvalidRequest("blob host needs a secret".into()));
        }
        Ok(Arc::new(HttpStorage::new(self.transport.clone(), &self.authority, handle, secret)))
    }
}

#[derive(Default)]
struct HostState {
    blobs: HashMap<String, Vec<u8>>,
    /// Top-level prefix to token hash; the first writer claims a prefix.
    owners: HashMap<String, String>,
}

/// In-memory static host: anyone may `GET`, only a prefix's owner may
/// `PUT` or `DELETE` under it.
#[derive(Default)]
pub struct BlobHost {
    state: Mutex<HostState>,
}

impl std::fmt::Debug for BlobHost {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BlobHost").finish_non_exhaustive()
    }
}

impl BlobHost {
    pub fn new() -> Self {
        BlobHost::default()
    }

    pub fn blob(&self, path: &str) -> Option<Vec<u8>> {
        self.state.lock().expect("blob host lock").blobs.get(path.trim_start_matches('/')).cloned()
    }

    pub fn paths(&self) -> Vec<String> {
        let mut p: Vec<String> = self.state.lock().expect("blob host lock").blobs.keys().cloned().collect();
        p.sort();
        p
    }

    /// Overwrites a blob without any ownership check.
    #[doc(hidden)]
    pub fn tamper(&self, path: &str, bytes: Vec<u8>) {
        self.state.lock().expect("blob host lock").blobs.insert(path.trim_start_matches('/').to_string(), bytes);
    }
}

impl Handler for BlobHost {
    fn handle(&self, req: Request) -> Response {
        let path = req.path_only().trim_start_matches('/').to_string();
        if check_path(&path).is_err() {
            return Response::error(&GraffitiError::NotFound);
        }
        let mut st = self.state.lock().expect("blob host lock");
        match req.method.as_str() {
            "GET" => match st.blobs.get(&path) {
                Some(b) => Response::bytes(200, "application/json", b.clone()),
                None => Response::error(&GraffitiError::NotFound),
            },
            "PUT" | "DELETE" => {
                let Some(token) = req.bearer_token() else {
                    return Response::error(&GraffitiError::AuthFailed);
                };
                let hash = hex::encode(Sha256::digest(token.as_bytes()));
                let prefix = path.split('/').next().unwrap_or_default().to_string();
                let owner = st.owners.entry(prefix).or_insert_with(|| hash.clone());
                if *owner != hash {
                    return Response::error(&GraffitiError::NotAuthorized);
                }
                if req.method == "PUT" {
                    st.blobs.insert(path, req.body);
                } else {
                    st.blobs.remove(&path);
                }
                Response::empty(204)
            }
            _ => Response::error(&GraffitiError::NotFound),
        }
    }
}

/// Downloads blobs by URL (`http`, `https` or `file`) and counts requests.
pub struct BlobFetcher {
    transport: Arc<dyn Transport>,
    fetches: AtomicU64,
}

impl std::fmt::Debug for BlobFetcher {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BlobFetcher").field("fetches", &self.fetches()).finish()
    }
}

impl BlobFetcher {
    pub fn new(transport: Arc<dyn Transport>) -> Self {
        BlobFetcher { transport, fetches: AtomicU64::new(0) }
    }

    pub fn fetches(&self) -> u64 {
        self.fetches.load(Ordering::SeqCst)
    }

    /// `Ok(None)` when the blob does not exist.
    pub fn fetch(&self, blob_url: &str) -> Result<Option<Vec<u8>>> {
        self.fetches.fetch_add(1, Ordering::SeqCst);
        let failed = |e: &dyn std::fmt::Display| GraffitiError::BlobFetchFailed(format!("{blob_url}: {e}"));
        let url = url::Url::parse(blob_url).map_err(|e| failed(&e))?;
        match url.scheme() {
            "file" => {
                let path = url.to_file_path().map_err(|_| failed(&"not a local path"))?;
                read_file(&path).map_err(|e| failed(&e))
            }
            "http" | "https" => {
                let authority = authority_of(blob_url).map_err(|e| failed(&e))?;
                let resp = self
                    .transport
                    .send(&authority, Request::new("GET", url.path().to_string()))
                    .map_err(|e| failed(&e))?;
                match resp.status {
                    404 => Ok(None),
                    s if (200..300).contains(&s) => resp.read_all().map(Some).map_err(|e| failed(&e)),
                    s => Err(failed(&format!("status {s}"))),
                }
            }
            other => Err(failed(&format!("unsupported scheme {other}"))),
        }
    }
}

fn read_file(path: &Path) -> std::io::Result<Option<Vec<u8>>> {
    match fs::read(path) {
        Ok(b) => Ok(Some(b)),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(e),
    }
}
