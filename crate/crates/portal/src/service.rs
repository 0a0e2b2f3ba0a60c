//! The matching service without HTTP: enrollment, queries and startup
//! recovery.
//!
//! Readers take an `Arc` of the current gallery snapshot and never block on
//! enrollments. Enrollments are serialized by the writer lock; the new
//! snapshot is published only after the record is durable.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use hogface::classifier::classify_projected;
use hogface::modelstore::decode_model;
use hogface::{GalleryEntry, GrayImage, Model};
use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::imaging::decode_upload;
use crate::store::{BlobStore, Enrollment, PersonRecord, RecordLog, Status, StoreError};

pub const LOG_FILE: &str = "records.log";
pub const BLOB_DIR: &str = "blobs";

#[derive(Debug, Error)]
pub enum PortalError {
    #[error("{0}")]
    BadRequest(String),
    #[error("{0}")]
    Validation(String),
    #[error("person {0} not found")]
    NotFound(String),
    #[error("storage unavailable: {0}")]
    Storage(String),
    #[error("cannot load model {path}: {message}")]
    Model { path: PathBuf, message: String },
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("internal error: {0}")]
    Internal(String),
}

#[derive(Clone, Debug)]
pub struct NewPerson {
    pub name: String,
    pub status: Status,
    pub contact: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Candidate {
    pub id: String,
    pub name: String,
    pub status: Status,
    pub score: f64,
    pub votes: usize,
    pub total_distance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct QueryResponse {
    pub candidates: Vec<Candidate>,
    pub model_version: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Health {
    pub model_version: String,
    pub gallery_size: usize,
}

/// Immutable view of everything enrolled so far.
#[derive(Clone, Default)]
struct Snapshot {
    persons: Vec<PersonRecord>,
    by_id: HashMap<String, usize>,
    /// One entry per person, labeled with the person id.
    gallery: Vec<GalleryEntry>,
}

impl Snapshot {
    fn push(&mut self, record: PersonRecord, features: Vec<ndarray::Array2<f64>>) {
        self.by_id.insert(record.id.clone(), self.persons.len());
        self.gallery.push(GalleryEntry {
            label: record.id.clone(),
            source_id: record.photo_refs.first().cloned().unwrap_or_default(),
            features,
        });
        self.persons.push(record);
    }
}

struct Writer {
    log: RecordLog,
    blobs: BlobStore,
}

pub struct Portal {
    /// Config and bases only; the file's own gallery is not used.
    model: Model,
    model_version: String,
    snapshot: RwLock<Arc<Snapshot>>,
    writer: Mutex<Writer>,
}

/// First 16 hex digits of the SHA-256 of the model file.
pub fn model_version(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))[..16].to_string()
}

impl Portal {
    /// Loads the model, replays the record log and recomputes features of
    /// records enrolled under a different model.
    pub fn open(model_path: &Path, data_dir: &Path) -> Result<Portal, PortalError> {
        let model_err = |message: String| PortalError::Model { path: model_path.to_path_buf(), message };
        let bytes = fs::read(model_path).map_err(|e| model_err(e.to_string()))?;
        let mut model = decode_model(&bytes).map_err(|e| model_err(e.to_string()))?;
        if !model.gallery.is_empty() {
            tracing::info!(entries = model.gallery.len(), "ignoring the model file's own gallery");
            model.gallery.clear();
        }
        let version = model_version(&bytes);

        fs::create_dir_all(data_dir).map_err(StoreError::from)?;
        let blobs = BlobStore::open(&data_dir.join(BLOB_DIR)).map_err(StoreError::from)?;
        let (log, stored) = RecordLog::open(&data_dir.join(LOG_FILE))?;

        let expected = (model.config.layer_count(), model.config.layer_dims().0, model.config.dims);
        let mut snapshot = Snapshot::default();
        let mut recomputed = 0;
        for e in stored {
            let fits = e.features.len() == expected.0
                && e.features.iter().all(|f| f.dim() == (expected.1, expected.2));
            let features = if e.model_version == version && fits {
                e.features
            } else {
                recomputed += 1;
                let key = e.record.photo_refs.first().ok_or_else(|| {
                    PortalError::Internal(format!("record {} has no photo", e.record.id))
                })?;
                let img = decode_upload(&blobs.get(key)?).map_err(|m| {
                    PortalError::Internal(format!("stored photo {key} no longer decodes: {m}"))
                })?;
                model.features_of(&img).map_err(|e| PortalError::Internal(e.to_string()))?
            };
            snapshot.push(e.record, features);
        }
        tracing::info!(
            persons = snapshot.persons.len(),
            recomputed,
            model_version = %version,
            "portal state restored"
        );
        Ok(Portal {
            model,
            model_version: version,
            snapshot: RwLock::new(Arc::new(snapshot)),
            writer: Mutex::new(Writer { log, blobs }),
        })
    }

    fn current(&self) -> Arc<Snapshot> {
        self.snapshot.read().expect("snapshot lock poisoned").clone()
    }

    fn features(&self, img: &GrayImage) -> Result<Vec<ndarray::Array2<f64>>, PortalError> {
        self.model.features_of(img).map_err(|e| PortalError::Validation(e.to_string()))
    }

    pub fn model_version(&self) -> &str {
        &self.model_version
    }

    pub fn health(&self) -> Health {
        Health { model_version: self.model_version.clone(), gallery_size: self.current().gallery.len() }
    }

    pub fn person(&self, id: &str) -> Result<PersonRecord, PortalError> {
        let snap = self.current();
        snap.by_id
            .get(id)
            .map(|&i| snap.persons[i].clone())
            .ok_or_else(|| PortalError::NotFound(id.to_string()))
    }

    /// Stores the photo and record durably, then publishes the person.
    pub fn enroll(&self, photo: &[u8], person: NewPerson) -> Result<PersonRecord, PortalError> {
        let name = person.name.trim();
        if name.is_empty() {
            return Err(PortalError::Validation("name must not be empty".into()));
        }
        let img = decode_upload(photo).map_err(PortalError::Validation)?;
        let features = self.features(&img)?;

        let mut writer = self.writer.lock().map_err(|_| PortalError::Storage("writer lock poisoned".into()))?;
        let key = writer.blobs.put(photo).map_err(|e| PortalError::Storage(e.to_string()))?;
        let record = PersonRecord {
            id: uuid::Uuid::new_v4().simple().to_string(),
            name: name.to_string(),
            status: person.status,
            contact: person.contact.trim().to_string(),
            enrolled_at: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
            photo_refs: vec![key],
        };
        let entry = Enrollment { record: record.clone(), model_version: self.model_version.clone(), features };
        writer.log.append(&entry).map_err(|e| PortalError::Storage(e.to_string()))?;

        let mut next = (*self.current()).clone();
        next.push(entry.record, entry.features);
        *self.snapshot.write().expect("snapshot lock poisoned") = Arc::new(next);
        Ok(record)
    }

    /// Ranks enrolled persons by similarity to the photo.
    pub fn query(&self, photo: &[u8], k: usize, status: Option<Status>) -> Result<QueryResponse, PortalError> {
        if k == 0 {
            return Err(PortalError::BadRequest("k must be at least 1".into()));
        }
        let img = decode_upload(photo).map_err(PortalError::Validation)?;
        let features = self.features(&img)?;
        let snap = self.current();
        let filtered: Vec<GalleryEntry>;
        let gallery: &[GalleryEntry] = match status {
            None => &snap.gallery,
            Some(s) => {
                filtered = snap
                    .gallery
                    .iter()
                    .filter(|g| snap.persons[snap.by_id[&g.label]].status == s)
                    .cloned()
                    .collect();
                &filtered
            }
        };
        let candidates = if gallery.is_empty() {
            Vec::new()
        } else {
            classify_projected(&features, gallery)
                .map_err(|e| PortalError::Internal(e.to_string()))?
                .ranked(k)
                .into_iter()
                .map(|r| {
                    let p = &snap.persons[snap.by_id[&r.label]];
                    Candidate {
                        id: p.id.clone(),
                        name: p.name.clone(),
                        status: p.status,
                        score: r.score,
                        votes: r.votes,
                        total_distance: r.total_distance,
                    }
                })
                .collect()
        };
        Ok(QueryResponse { candidates, model_version: self.model_version.clone() })
    }
}
