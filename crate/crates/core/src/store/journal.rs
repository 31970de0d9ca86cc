use std::fs::{self, File, OpenOptions};
use std::io::{BufReader, BufWriter, ErrorKind, Read, Write};
use std::path::{Path, PathBuf};

use super::Entry;
use crate::error::{GraffitiError, Result};

const VERSION: u8 = 1;

/// Append-only log: one version byte, then records of a little-endian u32
/// length followed by that many bytes of JSON.
#[derive(Debug)]
pub(crate) struct Journal {
    path: PathBuf,
    out: BufWriter<File>,
}

fn storage(e: impl std::fmt::Display) -> GraffitiError {
    GraffitiError::StorageUnavailable(e.to_string())
}

impl Journal {
    /// Opens (creating if needed) the journal and returns every intact
    /// record. A torn trailing record from a crash is dropped.
    pub(crate) fn open(path: &Path) -> Result<(Journal, Vec<Entry>)> {
        if let Some(dir) = path.parent() {
            if !dir.as_os_str().is_empty() {
                fs::create_dir_all(dir).map_err(storage)?;
            }
        }
        let entries = match File::open(path) {
            Ok(f) => read_all(BufReader::new(f))?,
            Err(e) if e.kind() == ErrorKind::NotFound => {
                let mut f = File::create(path).map_err(storage)?;
                f.write_all(&[VERSION]).map_err(storage)?;
                f.sync_all().map_err(storage)?;
                Vec::new()
            }
            Err(e) => return Err(storage(e)),
        };
        let file = OpenOptions::new().append(true).open(path).map_err(storage)?;
        Ok((Journal { path: path.to_path_buf(), out: BufWriter::new(file) }, entries))
    }

    pub(crate) fn append(&mut self, entry: &Entry) -> Result<()> {
        write_record(&mut self.out, entry)?;
        self.out.flush().map_err(storage)
    }

    /// Rewrites the log to hold exactly `entries`.
    pub(crate) fn compact<'a>(&mut self, entries: impl Iterator<Item = &'a Entry>) -> Result<()> {
        let tmp = self.path.with_extension("compact");
        {
            let mut w = BufWriter::new(File::create(&tmp).map_err(storage)?);
            w.write_all(&[VERSION]).map_err(storage)?;
            for e in entries {
                write_record(&mut w, e)?;
            }
            w.into_inner().map_err(storage)?.sync_all().map_err(storage)?;
        }
        fs::rename(&tmp, &self.path).map_err(storage)?;
        let file = OpenOptions::new().append(true).open(&self.path).map_err(storage)?;
        self.out = BufWriter::new(file);
        Ok(())
    }
}

fn write_record(w: &mut impl Write, entry: &Entry) -> Result<()> {
    let bytes = serde_json::to_vec(entry).map_err(storage)?;
    let len = u32::try_from(bytes.len()).map_err(storage)?;
    w.write_all(&len.to_le_bytes()).map_err(storage)?;
    w.write_all(&bytes).map_err(storage)
}

fn read_all(mut r: impl Read) -> Result<Vec<Entry>> {
    let mut version = [0u8; 1];
    match r.read_exact(&mut version) {
        Ok(()) => {}
        Err(e) if e.kind() == ErrorKind::UnexpectedEof => return Ok(Vec::new()),
        Err(e) => return Err(storage(e)),
    }
    if version[0] != VERSION {
        return Err(storage(format!("unsupported journal version {}", version[0])));
    }
    let mut entries = Vec::new();
    loop {
        let mut len = [0u8; 4];
        match r.read_exact(&mut len) {
            Ok(()) => {}
            Err(e) if e.kind() == ErrorKind::UnexpectedEof => break,
            Err(e) => return Err(storage(e)),
        }
        let mut buf = vec![0u8; u32::from_le_bytes(len) as usize];
        match r.read_exact(&mut buf) {
            Ok(()) => {}
            Err(e) if e.kind() == ErrorKind::UnexpectedEof => break,
            Err(e) => return Err(storage(e)),
        }
        match serde_json::from_slice(&buf) {
            Ok(entry) => entries.push(entry),
            Err(_) => break,
        }
    }
    Ok(entries)
}
