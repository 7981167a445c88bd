//! Bundle data model, the on-disk bundle format and load-time validation.
//!
//! A bundle directory holds `manifest.json` plus three ALEB matrix files:
//! `video_embeddings.bin`, `label_embeddings.bin` and
//! `attribute_embeddings.bin`. An ALEB file is the magic `ALEB`, then
//! little-endian `u32` version (1), `u32` rows, `u32` cols, then
//! `rows * cols` little-endian `f32` values in row-major order. Nothing
//! follows the payload.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vector;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const VIDEO_EMBEDDINGS_FILE: &str = "video_embeddings.bin";
pub const LABEL_EMBEDDINGS_FILE: &str = "label_embeddings.bin";
pub const ATTRIBUTE_EMBEDDINGS_FILE: &str = "attribute_embeddings.bin";

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &[u8; 4] = b"ALEB";
const HEADER_LEN: usize = 16;

/// Tolerance on the L2 norm of rows declared unit-norm.
pub const UNIT_NORM_TOLERANCE: f64 = 1e-5;
/// Norms at or below this cannot be normalized.
pub const DEGENERATE_NORM: f64 = 1e-12;

#[derive(Debug, thiserror::Error)]
pub enum BundleError {
    #[error("missing file {path}")]
    MissingFile { path: String },
    #[error("{file}: bad magic bytes, expected `ALEB`")]
    MagicMismatch { file: String },
    #[error("{file}: unsupported format version {found}")]
    VersionMismatch { file: String, found: u32 },
    #[error("{file}: shape mismatch: {detail}")]
    ShapeMismatch { file: String, detail: String },
    #[error("{file}: non-finite value at row {row}, column {col}")]
    NonFiniteValue { file: String, row: usize, col: usize },
    #[error("{file}: row {row} has norm {norm}, expected unit norm")]
    NotUnitNorm { file: String, row: usize, norm: f64 },
    #[error("{record}: dangling reference: {detail}")]
    DanglingIndex { record: String, detail: String },
    #[error("duplicate {kind} `{id}`")]
    DuplicateId { kind: &'static str, id: String },
    #[error("{context}: {reason}")]
    Invalid { context: String, reason: String },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: malformed manifest: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
}

impl BundleError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        if source.kind() == std::io::ErrorKind::NotFound {
            BundleError::MissingFile {
                path: path.display().to_string(),
            }
        } else {
            BundleError::Io {
                path: path.display().to_string(),
                source,
            }
        }
    }

    fn invalid(context: impl Into<String>, reason: impl Into<String>) -> Self {
        BundleError::Invalid {
            context: context.into(),
            reason: reason.into(),
        }
    }
}

/// Dense row-major `f32` matrix, the in-memory form of an ALEB file.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self, BundleError> {
        if data.len() != rows * cols {
            return Err(BundleError::ShapeMismatch {
                file: "<memory>".into(),
                detail: format!("{rows}x{cols} needs {} values, got {}", rows * cols, data.len()),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(cols: usize, rows: &[Vec<f32>]) -> Result<Self, BundleError> {
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != cols {
                return Err(BundleError::ShapeMismatch {
                    file: "<memory>".into(),
                    detail: format!("row {i} has {} columns, expected {cols}", r.len()),
                });
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// Bit-level equality, so NaN payloads and signed zeros count.
    pub fn bit_eq(&self, other: &Matrix) -> bool {
        self.rows == other.rows
            && self.cols == other.cols
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

pub fn encode_matrix(m: &Matrix) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * m.data.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(m.rows as u32).to_le_bytes());
    out.extend_from_slice(&(m.cols as u32).to_le_bytes());
    for v in &m.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Parses an ALEB payload. `file` names the source in errors.
pub fn decode_matrix(bytes: &[u8], file: &str) -> Result<Matrix, BundleError> {
    if bytes.len() < HEADER_LEN {
        return Err(BundleError::ShapeMismatch {
            file: file.into(),
            detail: format!("{} bytes is shorter than the 16-byte header", bytes.len()),
        });
    }
    if &bytes[..4] != MAGIC {
        return Err(BundleError::MagicMismatch { file: file.into() });
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("4-byte slice"));
    let version = word(4);
    if version != FORMAT_VERSION {
        return Err(BundleError::VersionMismatch {
            file: file.into(),
            found: version,
        });
    }
    let rows = word(8) as usize;
    let cols = word(12) as usize;
    let expected = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(4))
        .and_then(|n| n.checked_add(HEADER_LEN));
    if expected != Some(bytes.len()) {
        return Err(BundleError::ShapeMismatch {
            file: file.into(),
            detail: format!(
                "header declares {rows}x{cols} but payload is {} bytes",
                bytes.len() - HEADER_LEN
            ),
        });
    }
    let data = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4-byte chunk")))
        .collect();
    Ok(Matrix { rows, cols, data })
}

pub fn read_matrix(path: &Path) -> Result<Matrix, BundleError> {
    let bytes = fs::read(path).map_err(|e| BundleError::io(path, e))?;
    decode_matrix(&bytes, &file_name(path))
}

pub fn write_matrix(path: &Path, m: &Matrix) -> Result<(), BundleError> {
    fs::write(path, encode_matrix(m)).map_err(|e| BundleError::io(path, e))
}

fn file_name(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Source,
    Target,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VideoRecord {
    pub id: String,
    pub domain: Domain,
    pub embedding_index: usize,
    /// Per-frame attribute vocabulary indices, most confident first.
    pub frames: Vec<Vec<usize>>,
    label: Option<String>,
}

impl VideoRecord {
    pub fn new(
        id: impl Into<String>,
        domain: Domain,
        embedding_index: usize,
        frames: Vec<Vec<usize>>,
        label: Option<String>,
    ) -> Self {
        Self {
            id: id.into(),
            domain,
            embedding_index,
            frames,
            label,
        }
    }

    /// The class label of a source video. Target videos always yield `None`:
    /// their labels are held out for evaluation.
    pub fn source_label(&self) -> Option<&str> {
        match self.domain {
            Domain::Source => self.label.as_deref(),
            Domain::Target => None,
        }
    }

    /// Raw label regardless of domain. Only evaluation may read target labels.
    pub(crate) fn held_out_label(&self) -> Option<&str> {
        self.label.as_deref()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelEntry {
    pub name: String,
    pub embedding_index: usize,
}

#[derive(Debug, Clone)]
pub struct DatasetBundle {
    pub dim: usize,
    pub shared_labels: Vec<LabelEntry>,
    pub attribute_vocab: Vec<String>,
    pub attribute_embeddings: Matrix,
    pub label_embeddings: Matrix,
    pub video_embeddings: Matrix,
    pub videos: Vec<VideoRecord>,
}

impl PartialEq for DatasetBundle {
    fn eq(&self, other: &Self) -> bool {
        self.dim == other.dim
            && self.shared_labels == other.shared_labels
            && self.attribute_vocab == other.attribute_vocab
            && self.videos == other.videos
            && self.attribute_embeddings.bit_eq(&other.attribute_embeddings)
            && self.label_embeddings.bit_eq(&other.label_embeddings)
            && self.video_embeddings.bit_eq(&other.video_embeddings)
    }
}

impl DatasetBundle {
    pub fn num_shared(&self) -> usize {
        self.shared_labels.len()
    }

    pub fn shared_label_names(&self) -> Vec<String> {
        self.shared_labels.iter().map(|l| l.name.clone()).collect()
    }

    pub fn sources(&self) -> impl Iterator<Item = &VideoRecord> {
        self.videos.iter().filter(|v| v.domain == Domain::Source)
    }

    pub fn targets(&self) -> impl Iterator<Item = &VideoRecord> {
        self.videos.iter().filter(|v| v.domain == Domain::Target)
    }

    pub fn video_embedding(&self, record: &VideoRecord) -> Vec<f64> {
        vector::promote(self.video_embeddings.row(record.embedding_index))
    }

    pub fn label_embedding(&self, label: usize) -> Vec<f64> {
        vector::promote(
            self.label_embeddings
                .row(self.shared_labels[label].embedding_index),
        )
    }

    pub fn attribute_embedding(&self, attribute: usize) -> Vec<f64> {
        vector::promote(self.attribute_embeddings.row(attribute))
    }

    /// Checks every structural invariant. `load_bundle` and `save_bundle`
    /// both run this.
    pub fn validate(&self) -> Result<(), BundleError> {
        let dim = self.dim;
        if dim == 0 {
            return Err(BundleError::invalid(MANIFEST_FILE, "dim must be positive"));
        }
        if self.shared_labels.is_empty() {
            return Err(BundleError::invalid(MANIFEST_FILE, "at least one shared label is required"));
        }
        if self.videos.is_empty() {
            return Err(BundleError::invalid(MANIFEST_FILE, "bundle has no videos"));
        }

        check_matrix(&self.video_embeddings, VIDEO_EMBEDDINGS_FILE, dim, self.videos.len(), false)?;
        check_matrix(&self.label_embeddings, LABEL_EMBEDDINGS_FILE, dim, self.shared_labels.len(), true)?;
        check_matrix(
            &self.attribute_embeddings,
            ATTRIBUTE_EMBEDDINGS_FILE,
            dim,
            self.attribute_vocab.len(),
            true,
        )?;

        let mut seen = HashSet::new();
        for token in &self.attribute_vocab {
            if token.is_empty() {
                return Err(BundleError::invalid("attribute_vocab", "empty attribute token"));
            }
            if !seen.insert(token.as_str()) {
                return Err(BundleError::DuplicateId {
                    kind: "attribute token",
                    id: token.clone(),
                });
            }
        }

        let mut names = HashSet::new();
        for label in &self.shared_labels {
            if !names.insert(label.name.as_str()) {
                return Err(BundleError::DuplicateId {
                    kind: "shared label",
                    id: label.name.clone(),
                });
            }
            if label.embedding_index >= self.label_embeddings.rows() {
                return Err(BundleError::DanglingIndex {
                    record: format!("shared label `{}`", label.name),
                    detail: format!(
                        "embedding_index {} >= {} rows",
                        label.embedding_index,
                        self.label_embeddings.rows()
                    ),
                });
            }
        }

        let mut ids = HashSet::new();
        let vocab = self.attribute_vocab.len();
        for video in &self.videos {
            let record = || format!("video `{}`", video.id);
            if !ids.insert(video.id.as_str()) {
                return Err(BundleError::DuplicateId {
                    kind: "video id",
                    id: video.id.clone(),
                });
            }
            if video.embedding_index >= self.video_embeddings.rows() {
                return Err(BundleError::DanglingIndex {
                    record: record(),
                    detail: format!(
                        "embedding_index {} >= {} rows",
                        video.embedding_index,
                        self.video_embeddings.rows()
                    ),
                });
            }
            if video.frames.is_empty() {
                return Err(BundleError::invalid(record(), "no frames"));
            }
            for (f, frame) in video.frames.iter().enumerate() {
                if frame.is_empty() {
                    return Err(BundleError::invalid(record(), format!("frame {f} has no attributes")));
                }
                if let Some(&bad) = frame.iter().find(|&&a| a >= vocab) {
                    return Err(BundleError::DanglingIndex {
                        record: record(),
                        detail: format!("frame {f} attribute {bad} >= vocabulary size {vocab}"),
                    });
                }
            }
            if video.domain == Domain::Source {
                match &video.label {
                    None => return Err(BundleError::invalid(record(), "source video without a label")),
                    Some(l) if !names.contains(l.as_str()) => {
                        return Err(BundleError::DanglingIndex {
                            record: record(),
                            detail: format!("label `{l}` is not a shared label"),
                        })
                    }
                    Some(_) => {}
                }
            }
        }
        Ok(())
    }
}

fn check_matrix(
    m: &Matrix,
    file: &str,
    dim: usize,
    rows: usize,
    unit_norm: bool,
) -> Result<(), BundleError> {
    if m.cols() != dim {
        return Err(BundleError::ShapeMismatch {
            file: file.into(),
            detail: format!("{} columns, manifest dim is {dim}", m.cols()),
        });
    }
    if m.rows() != rows {
        return Err(BundleError::ShapeMismatch {
            file: file.into(),
            detail: format!("{} rows, manifest lists {rows} entries", m.rows()),
        });
    }
    for r in 0..m.rows() {
        let row = m.row(r);
        if let Some(col) = row.iter().position(|v| !v.is_finite()) {
            return Err(BundleError::NonFiniteValue {
                file: file.into(),
                row: r,
                col,
            });
        }
        if unit_norm {
            let norm = vector::norm(&vector::promote(row));
            if (norm - 1.0).abs() > UNIT_NORM_TOLERANCE {
                return Err(BundleError::NotUnitNorm {
                    file: file.into(),
                    row: r,
                    norm,
                });
            }
        }
    }
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    version: u32,
    dim: usize,
    shared_labels: Vec<ManifestLabel>,
    attribute_vocab: Vec<String>,
    videos: Vec<ManifestVideo>,
}

#[derive(Serialize, Deserialize)]
struct ManifestLabel {
    name: String,
    embedding_index: usize,
}

#[derive(Serialize, Deserialize)]
struct ManifestVideo {
    id: String,
    domain: Domain,
    embedding_index: usize,
    frames: Vec<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    label: Option<String>,
}

/// Case-folds and trims an attribute token.
pub fn normalize_token(token: &str) -> String {
    token.trim().to_lowercase()
}

pub fn load_bundle(dir: impl AsRef<Path>) -> Result<DatasetBundle, BundleError> {
    let dir = dir.as_ref();
    let manifest_path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&manifest_path).map_err(|e| BundleError::io(&manifest_path, e))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|source| BundleError::Json {
        path: manifest_path.display().to_string(),
        source,
    })?;
    if manifest.version != FORMAT_VERSION {
        return Err(BundleError::VersionMismatch {
            file: MANIFEST_FILE.into(),
            found: manifest.version,
        });
    }

    let bundle = DatasetBundle {
        dim: manifest.dim,
        shared_labels: manifest
            .shared_labels
            .into_iter()
            .map(|l| LabelEntry {
                name: l.name,
                embedding_index: l.embedding_index,
            })
            .collect(),
        attribute_vocab: manifest
            .attribute_vocab
            .iter()
            .map(|t| normalize_token(t))
            .collect(),
        attribute_embeddings: read_matrix(&dir.join(ATTRIBUTE_EMBEDDINGS_FILE))?,
        label_embeddings: read_matrix(&dir.join(LABEL_EMBEDDINGS_FILE))?,
        video_embeddings: read_matrix(&dir.join(VIDEO_EMBEDDINGS_FILE))?,
        videos: manifest
            .videos
            .into_iter()
            .map(|v| VideoRecord::new(v.id, v.domain, v.embedding_index, v.frames, v.label))
            .collect(),
    };
    bundle.validate()?;
    Ok(bundle)
}

pub fn save_bundle(bundle: &DatasetBundle, dir: impl AsRef<Path>) -> Result<(), BundleError> {
    bundle.validate()?;
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| BundleError::io(dir, e))?;
    let manifest = Manifest {
        version: FORMAT_VERSION,
        dim: bundle.dim,
        shared_labels: bundle
            .shared_labels
            .iter()
            .map(|l| ManifestLabel {
                name: l.name.clone(),
                embedding_index: l.embedding_index,
            })
            .collect(),
        attribute_vocab: bundle.attribute_vocab.clone(),
        videos: bundle
            .videos
            .iter()
            .map(|v| ManifestVideo {
                id: v.id.clone(),
                domain: v.domain,
                embedding_index: v.embedding_index,
                frames: v.frames.clone(),
                label: v.label.clone(),
            })
            .collect(),
    };
    let manifest_path = dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest).map_err(|source| BundleError::Json {
        path: manifest_path.display().to_string(),
        source,
    })?;
    fs::write(&manifest_path, text).map_err(|e| BundleError::io(&manifest_path, e))?;
    write_matrix(&dir.join(VIDEO_EMBEDDINGS_FILE), &bundle.video_embeddings)?;
    write_matrix(&dir.join(LABEL_EMBEDDINGS_FILE), &bundle.label_embeddings)?;
    write_matrix(&dir.join(ATTRIBUTE_EMBEDDINGS_FILE), &bundle.attribute_embeddings)?;
    Ok(())
}

/// Unit-norm copy of `v`.
pub fn l2_normalize(v: &[f64]) -> Result<Vec<f64>> {
    let norm = vector::norm(v);
    if norm <= DEGENERATE_NORM || !norm.is_finite() {
        return Err(Error::DegenerateVector { norm });
    }
    Ok(v.iter().map(|x| x / norm).collect())
}

/// Index of videos by id.
pub fn index_by_id(bundle: &DatasetBundle) -> HashMap<&str, &VideoRecord> {
    bundle.videos.iter().map(|v| (v.id.as_str(), v)).collect()
}

pub fn bundle_files(dir: &Path) -> [PathBuf; 4] {
    [
        dir.join(MANIFEST_FILE),
        dir.join(VIDEO_EMBEDDINGS_FILE),
        dir.join(LABEL_EMBEDDINGS_FILE),
        dir.join(ATTRIBUTE_EMBEDDINGS_FILE),
    ]
}
