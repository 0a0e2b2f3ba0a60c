//! Binary model files (`.2dhg`).
//!
//! Layout, version 1. Integers are little-endian `u32`, reals little-endian
//! IEEE-754 `f64`. A matrix is `rows: u32, cols: u32` followed by its entries
//! in row-major order. A string is `len: u32` followed by UTF-8 bytes.
//!
//! ```text
//! magic        "2DHG"
//! version      u32 (= 1)
//! config       rows u32, cols u32, dwt u32 (0|1), features u32 (0 hog | 1 raw),
//!              cell u32, block u32, bins u32, dims u32, epsilon f64
//! basis_count  u32, then per basis: vectors matrix, eig_count u32, eig_count x f64
//! entry_count  u32, then per entry: label string, source_id string,
//!              feature_count u32, feature_count x matrix
//! checksum     u64: sum of all preceding bytes, mod 2^64
//! ```

use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use ndarray::Array2;
use serde::Serialize;
use thiserror::Error;

use crate::classifier::GalleryEntry;
use crate::hog2d::HogConfig;
use crate::pca2d::ProjectionBasis;
use crate::pipeline::{FeatureKind, Model, PipelineConfig};

pub const MAGIC: &[u8; 4] = b"2DHG";
pub const VERSION: u32 = 1;
pub const EXTENSION: &str = "2dhg";

/// Upper bound on any single dimension read from a file.
const MAX_DIM: u32 = 1 << 16;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("not a model file (bad magic)")]
    BadMagic,
    #[error("unsupported model version {0} (expected {VERSION})")]
    UnsupportedVersion(u32),
    #[error("checksum mismatch: stored {stored:#018x}, computed {computed:#018x}")]
    Checksum { stored: u64, computed: u64 },
    #[error("model file truncated at byte {offset}")]
    Truncated { offset: usize },
    #[error("invalid UTF-8 string at byte {offset}")]
    InvalidText { offset: usize },
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("inconsistent model dimensions: {0}")]
    Dimensions(String),
    #[error("{count} unexpected bytes after gallery at byte {offset}")]
    TrailingBytes { offset: usize, count: usize },
    #[error("model i/o: {0}")]
    Io(#[from] io::Error),
}

fn byte_sum(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0u64, |acc, &b| acc.wrapping_add(u64::from(b)))
}

struct Encoder {
    buf: Vec<u8>,
}

impl Encoder {
    fn u32(&mut self, v: usize) {
        let v = u32::try_from(v).expect("model dimension exceeds u32");
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn str(&mut self, s: &str) {
        self.u32(s.len());
        self.buf.extend_from_slice(s.as_bytes());
    }

    fn matrix(&mut self, m: &Array2<f64>) {
        self.u32(m.nrows());
        self.u32(m.ncols());
        for &v in m.iter() {
            self.f64(v);
        }
    }
}

/// Encodes a model to its file bytes, checksum included.
pub fn encode_model(model: &Model) -> Vec<u8> {
    let mut e = Encoder { buf: Vec::new() };
    e.buf.extend_from_slice(MAGIC);
    e.u32(VERSION as usize);
    let c = &model.config;
    e.u32(c.rows);
    e.u32(c.cols);
    e.u32(usize::from(c.dwt));
    e.u32(match c.features {
        FeatureKind::Hog => 0,
        FeatureKind::Raw => 1,
    });
    e.u32(c.hog.cell);
    e.u32(c.hog.block);
    e.u32(c.hog.bins);
    e.u32(c.dims);
    e.f64(c.hog.epsilon);
    e.u32(model.bases.len());
    for basis in &model.bases {
        e.matrix(&basis.vectors);
        e.u32(basis.eigenvalues.len());
        for &v in &basis.eigenvalues {
            e.f64(v);
        }
    }
    e.u32(model.gallery.len());
    for entry in &model.gallery {
        e.str(&entry.label);
        e.str(&entry.source_id);
        e.u32(entry.features.len());
        for f in &entry.features {
            e.matrix(f);
        }
    }
    let sum = byte_sum(&e.buf);
    e.buf.extend_from_slice(&sum.to_le_bytes());
    e.buf
}

/// Encodes a list of matrices as `count: u32` followed by each matrix, in the
/// model file's matrix encoding. No checksum.
pub fn encode_matrices(matrices: &[Array2<f64>]) -> Vec<u8> {
    let mut e = Encoder { buf: Vec::new() };
    e.u32(matrices.len());
    for m in matrices {
        e.matrix(m);
    }
    e.buf
}

/// Inverse of [`encode_matrices`]; also returns the number of bytes consumed.
pub fn decode_matrices(bytes: &[u8]) -> Result<(Vec<Array2<f64>>, usize), ModelError> {
    let mut d = Decoder { bytes, pos: 0 };
    let count = d.dim("matrix count")?;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let at = d.pos;
        let rows = d.dim("matrix rows")?;
        let cols = d.dim("matrix cols")?;
        d.pos = at;
        out.push(d.matrix((rows, cols), "matrix")?);
    }
    Ok((out, d.pos))
}

/// Writes the model to `sink`; returns the number of bytes written.
pub fn save_model<W: Write>(model: &Model, mut sink: W) -> Result<usize, ModelError> {
    model
        .check_consistency()
        .map_err(|e| ModelError::Dimensions(e.to_string()))?;
    let bytes = encode_model(model);
    sink.write_all(&bytes)?;
    sink.flush()?;
    Ok(bytes.len())
}

/// Saves via a temporary file in the target directory and an atomic rename.
pub fn save_model_file(model: &Model, path: &Path) -> Result<usize, ModelError> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    let n = save_model(model, &mut tmp)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| ModelError::Io(e.error))?;
    Ok(n)
}

struct Decoder<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Decoder<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ModelError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(ModelError::Truncated { offset: self.bytes.len() }),
        }
    }

    fn u32(&mut self) -> Result<u32, ModelError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn dim(&mut self, what: &str) -> Result<usize, ModelError> {
        let at = self.pos;
        let v = self.u32()?;
        if v > MAX_DIM {
            return Err(ModelError::Dimensions(format!("{what} = {v} at byte {at} is implausible")));
        }
        Ok(v as usize)
    }

    fn f64(&mut self) -> Result<f64, ModelError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn str(&mut self) -> Result<String, ModelError> {
        let len = self.u32()? as usize;
        let at = self.pos;
        let raw = self.take(len)?;
        String::from_utf8(raw.to_vec()).map_err(|_| ModelError::InvalidText { offset: at })
    }

    fn matrix(&mut self, expected: (usize, usize), what: &str) -> Result<Array2<f64>, ModelError> {
        let rows = self.dim("matrix rows")?;
        let cols = self.dim("matrix cols")?;
        if (rows, cols) != expected {
            return Err(ModelError::Dimensions(format!(
                "{what} is {rows}x{cols}, expected {}x{}",
                expected.0, expected.1
            )));
        }
        let raw = self.take(rows * cols * 8)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        Ok(Array2::from_shape_vec((rows, cols), data).expect("length matches"))
    }
}

/// Parses and validates model bytes. Nothing is returned unless every check
/// (magic, version, checksum, dimensions) passes.
pub fn decode_model(bytes: &[u8]) -> Result<Model, ModelError> {
    if bytes.len() < 4 {
        return Err(if MAGIC.starts_with(bytes) {
            ModelError::Truncated { offset: bytes.len() }
        } else {
            ModelError::BadMagic
        });
    }
    if &bytes[..4] != MAGIC {
        return Err(ModelError::BadMagic);
    }
    if bytes.len() < 8 {
        return Err(ModelError::Truncated { offset: bytes.len() });
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(ModelError::UnsupportedVersion(version));
    }
    if bytes.len() < 16 {
        return Err(ModelError::Truncated { offset: bytes.len() });
    }
    let (body, tail) = bytes.split_at(bytes.len() - 8);
    let stored = u64::from_le_bytes(tail.try_into().expect("8 bytes"));
    let computed = byte_sum(body);
    if stored != computed {
        return Err(ModelError::Checksum { stored, computed });
    }

    let mut d = Decoder { bytes: body, pos: 8 };
    let rows = d.dim("rows")?;
    let cols = d.dim("cols")?;
    let dwt = match d.u32()? {
        0 => false,
        1 => true,
        other => return Err(ModelError::InvalidConfig(format!("dwt flag {other}"))),
    };
    let features = match d.u32()? {
        0 => FeatureKind::Hog,
        1 => FeatureKind::Raw,
        other => return Err(ModelError::InvalidConfig(format!("feature kind {other}"))),
    };
    let cell = d.dim("cell")?;
    let block = d.dim("block")?;
    let bins = d.dim("bins")?;
    let dims = d.dim("dims")?;
    let epsilon = d.f64()?;
    let config = PipelineConfig {
        rows,
        cols,
        dwt,
        features,
        hog: HogConfig { bins, cell, block, epsilon },
        dims,
    };
    config.validate().map_err(|e| ModelError::InvalidConfig(e.to_string()))?;
    let layers = config.layer_count();
    let (layer_rows, layer_cols) = config.layer_dims();

    let basis_count = d.dim("basis count")?;
    if basis_count != layers {
        return Err(ModelError::Dimensions(format!(
            "{basis_count} bases stored, config has {layers} layers"
        )));
    }
    let mut bases = Vec::with_capacity(basis_count);
    for b in 0..basis_count {
        let vectors = d.matrix((layer_cols, dims), &format!("basis {b}"))?;
        let n = d.dim("eigenvalue count")?;
        if n != dims {
            return Err(ModelError::Dimensions(format!(
                "basis {b} has {n} eigenvalues, expected {dims}"
            )));
        }
        let eigenvalues = (0..n).map(|_| d.f64()).collect::<Result<_, _>>()?;
        bases.push(ProjectionBasis { vectors, eigenvalues });
    }

    let entry_count = d.u32()? as usize;
    let mut gallery = Vec::with_capacity(entry_count.min(1 << 16));
    for i in 0..entry_count {
        let label = d.str()?;
        let source_id = d.str()?;
        let n = d.dim("feature count")?;
        if n != layers {
            return Err(ModelError::Dimensions(format!(
                "gallery entry {i} has {n} feature matrices, expected {layers}"
            )));
        }
        let features = (0..n)
            .map(|b| d.matrix((layer_rows, dims), &format!("gallery entry {i}, bin {b}")))
            .collect::<Result<_, _>>()?;
        gallery.push(GalleryEntry { label, source_id, features });
    }
    if d.pos != body.len() {
        return Err(ModelError::TrailingBytes { offset: d.pos, count: body.len() - d.pos });
    }
    Ok(Model { config, bases, gallery })
}

pub fn load_model<R: Read>(mut source: R) -> Result<Model, ModelError> {
    let mut bytes = Vec::new();
    source.read_to_end(&mut bytes)?;
    decode_model(&bytes)
}

pub fn load_model_file(path: &Path) -> Result<Model, ModelError> {
    decode_model(&fs::read(path)?)
}

#[derive(Serialize)]
struct BasisJson<'a> {
    eigenvalues: &'a [f64],
    vectors: Vec<Vec<f64>>,
}

#[derive(Serialize)]
struct EntryJson<'a> {
    label: &'a str,
    source_id: &'a str,
    features: Vec<Vec<Vec<f64>>>,
}

#[derive(Serialize)]
struct ModelJson<'a> {
    format_version: u32,
    config: &'a PipelineConfig,
    feature_shape: String,
    bases: Vec<BasisJson<'a>>,
    gallery: Vec<EntryJson<'a>>,
}

fn rows_of(m: &Array2<f64>) -> Vec<Vec<f64>> {
    m.outer_iter().map(|r| r.to_vec()).collect()
}

/// Human-readable dump for debugging. Never read back.
pub fn export_json(model: &Model) -> serde_json::Value {
    let doc = ModelJson {
        format_version: VERSION,
        config: &model.config,
        feature_shape: model.config.feature_shape(),
        bases: model
            .bases
            .iter()
            .map(|b| BasisJson { eigenvalues: &b.eigenvalues, vectors: rows_of(&b.vectors) })
            .collect(),
        gallery: model
            .gallery
            .iter()
            .map(|e| EntryJson {
                label: &e.label,
                source_id: &e.source_id,
                features: e.features.iter().map(rows_of).collect(),
            })
            .collect(),
    };
    serde_json::to_value(doc).expect("model serializes")
}
