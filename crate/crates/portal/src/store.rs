//! Durable enrollment storage: an append-only record log plus a
//! content-addressed directory of the uploaded photos.
//!
//! Each log record is `len: u32`, `payload`, `checksum: u64` (byte sum of the
//! payload, mod 2^64), all little-endian. Payload, version 1:
//!
//! ```text
//! version u32, id, name, status, contact   (strings: len u32 + UTF-8)
//! enrolled_at u64, photo_count u32, photo refs (strings)
//! model_version string, features (matrix list, model-file encoding)
//! ```
//!
//! A record cut short at the end of the log (a torn write) is dropped and the
//! log truncated back to the last complete record. A damaged record followed
//! by more data is reported as corruption.

use std::fmt;
use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use hogface::modelstore::{decode_matrices, encode_matrices};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

const RECORD_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Missing,
    Found,
}

impl FromStr for Status {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "missing" => Ok(Status::Missing),
            "found" => Ok(Status::Found),
            _ => Err(format!("status must be \"missing\" or \"found\", got {s:?}")),
        }
    }
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Status::Missing => "missing",
            Status::Found => "found",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PersonRecord {
    pub id: String,
    pub name: String,
    pub status: Status,
    pub contact: String,
    /// UTC seconds since the epoch.
    pub enrolled_at: u64,
    /// Content hashes of the stored photos.
    pub photo_refs: Vec<String>,
}

/// A record together with the projected features it was enrolled with.
#[derive(Clone, Debug, PartialEq)]
pub struct Enrollment {
    pub record: PersonRecord,
    pub model_version: String,
    pub features: Vec<ndarray::Array2<f64>>,
}

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("storage i/o: {0}")]
    Io(#[from] io::Error),
    #[error("record log {path} is corrupt at byte {offset}: {message}")]
    Corrupt { path: PathBuf, offset: u64, message: String },
    #[error("photo blob {0} is missing")]
    MissingBlob(String),
}

fn byte_sum(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0u64, |acc, &b| acc.wrapping_add(u64::from(b)))
}

fn put_u32(buf: &mut Vec<u8>, v: usize) {
    buf.extend_from_slice(&u32::try_from(v).expect("field fits u32").to_le_bytes());
}

fn put_str(buf: &mut Vec<u8>, s: &str) {
    put_u32(buf, s.len());
    buf.extend_from_slice(s.as_bytes());
}

pub fn encode_payload(e: &Enrollment) -> Vec<u8> {
    let r = &e.record;
    let mut buf = Vec::new();
    put_u32(&mut buf, RECORD_VERSION as usize);
    put_str(&mut buf, &r.id);
    put_str(&mut buf, &r.name);
    put_str(&mut buf, &r.status.to_string());
    put_str(&mut buf, &r.contact);
    buf.extend_from_slice(&r.enrolled_at.to_le_bytes());
    put_u32(&mut buf, r.photo_refs.len());
    for p in &r.photo_refs {
        put_str(&mut buf, p);
    }
    put_str(&mut buf, &e.model_version);
    buf.extend_from_slice(&encode_matrices(&e.features));
    buf
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| format!("field at payload byte {} runs past the record", self.pos))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn str(&mut self) -> Result<String, String> {
        let n = self.u32()? as usize;
        let at = self.pos;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| format!("invalid UTF-8 at payload byte {at}"))
    }
}

pub fn decode_payload(bytes: &[u8]) -> Result<Enrollment, String> {
    let mut r = Reader { bytes, pos: 0 };
    let version = r.u32()?;
    if version != RECORD_VERSION {
        return Err(format!("unsupported record version {version}"));
    }
    let id = r.str()?;
    let name = r.str()?;
    let status = r.str()?.parse()?;
    let contact = r.str()?;
    let enrolled_at = r.u64()?;
    let photos = r.u32()? as usize;
    let photo_refs = (0..photos).map(|_| r.str()).collect::<Result<_, _>>()?;
    let model_version = r.str()?;
    let (features, used) = decode_matrices(&bytes[r.pos..]).map_err(|e| e.to_string())?;
    if r.pos + used != bytes.len() {
        return Err(format!("{} trailing bytes in record", bytes.len() - r.pos - used));
    }
    Ok(Enrollment {
        record: PersonRecord { id, name, status, contact, enrolled_at, photo_refs },
        model_version,
        features,
    })
}

fn sync_dir(dir: &Path) -> io::Result<()> {
    // directories cannot be opened for syncing on every platform
    match File::open(dir) {
        Ok(f) => f.sync_all().or(Ok(())),
        Err(_) => Ok(()),
    }
}

/// Append-only enrollment log.
pub struct RecordLog {
    path: PathBuf,
    file: File,
    len: u64,
}

impl RecordLog {
    /// Opens (creating if needed) the log and replays every complete record.
    pub fn open(path: &Path) -> Result<(RecordLog, Vec<Enrollment>), StoreError> {
        let bytes = match fs::read(path) {
            Ok(b) => b,
            Err(e) if e.kind() == io::ErrorKind::NotFound => Vec::new(),
            Err(e) => return Err(e.into()),
        };
        let corrupt = |offset: usize, message: String| StoreError::Corrupt {
            path: path.to_path_buf(),
            offset: offset as u64,
            message,
        };
        let mut records = Vec::new();
        let mut pos = 0usize;
        let mut good = 0usize;
        while pos < bytes.len() {
            if bytes.len() - pos < 4 {
                break;
            }
            let len = u32::from_le_bytes(bytes[pos..pos + 4].try_into().expect("4 bytes")) as usize;
            let end = pos + 4 + len + 8;
            if end > bytes.len() {
                break;
            }
            let payload = &bytes[pos + 4..pos + 4 + len];
            let stored = u64::from_le_bytes(bytes[end - 8..end].try_into().expect("8 bytes"));
            if stored != byte_sum(payload) {
                if end == bytes.len() {
                    break;
                }
                return Err(corrupt(pos, "checksum mismatch".into()));
            }
            records.push(decode_payload(payload).map_err(|m| corrupt(pos, m))?);
            pos = end;
            good = end;
        }
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        if good < bytes.len() {
            tracing::warn!(
                path = %path.display(),
                dropped = bytes.len() - good,
                "dropping incomplete record at end of log"
            );
            file.set_len(good as u64)?;
            file.sync_all()?;
        }
        if let Some(dir) = path.parent() {
            sync_dir(dir)?;
        }
        Ok((RecordLog { path: path.to_path_buf(), file, len: good as u64 }, records))
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Appends one record and syncs it to disk before returning.
    pub fn append(&mut self, e: &Enrollment) -> io::Result<()> {
        let payload = encode_payload(e);
        let mut buf = Vec::with_capacity(payload.len() + 12);
        put_u32(&mut buf, payload.len());
        buf.extend_from_slice(&payload);
        buf.extend_from_slice(&byte_sum(&payload).to_le_bytes());
        let result = self.file.write_all(&buf).and_then(|_| self.file.sync_data());
        match result {
            Ok(()) => {
                self.len += buf.len() as u64;
                Ok(())
            }
            Err(e) => {
                // leave no partial record behind
                let _ = self.file.set_len(self.len);
                Err(e)
            }
        }
    }
}

/// Photos stored under the hex SHA-256 of their bytes.
pub struct BlobStore {
    dir: PathBuf,
}

impl BlobStore {
    pub fn open(dir: &Path) -> io::Result<BlobStore> {
        fs::create_dir_all(dir)?;
        Ok(BlobStore { dir: dir.to_path_buf() })
    }

    pub fn key(bytes: &[u8]) -> String {
        hex::encode(Sha256::digest(bytes))
    }

    /// Stores `bytes` durably and returns their key. Existing blobs are kept.
    pub fn put(&self, bytes: &[u8]) -> io::Result<String> {
        let key = Self::key(bytes);
        let target = self.dir.join(&key);
        if target.is_file() {
            return Ok(key);
        }
        let mut tmp = tempfile::NamedTempFile::new_in(&self.dir)?;
        tmp.write_all(bytes)?;
        tmp.as_file().sync_all()?;
        tmp.persist(&target).map_err(|e| e.error)?;
        sync_dir(&self.dir)?;
        Ok(key)
    }

    pub fn get(&self, key: &str) -> Result<Vec<u8>, StoreError> {
        if key.len() != 64 || !key.bytes().all(|b| b.is_ascii_hexdigit()) {
            return Err(StoreError::MissingBlob(key.to_string()));
        }
        match fs::read(self.dir.join(key)) {
            Ok(b) => Ok(b),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Err(StoreError::MissingBlob(key.into())),
            Err(e) => Err(e.into()),
        }
    }
}
