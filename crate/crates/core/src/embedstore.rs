//! On-disk model bundles: `meta.json`, `vocab.json` and a raw little-endian
//! `f32` embedding matrix (`embeddings.bin`, row-major).

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const META_FILE: &str = "meta.json";
pub const VOCAB_FILE: &str = "vocab.json";
pub const EMBEDDINGS_FILE: &str = "embeddings.bin";

/// Index of a token in the vocabulary.
pub type TokenId = u32;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("missing bundle file {0}")]
    MissingFile(PathBuf),
    #[error("meta mismatch: {0}")]
    MetaMismatch(String),
    #[error("non-finite embedding entry at row {row}, column {col}")]
    NonFiniteEntry { row: usize, col: usize },
    #[error("vocabulary has {vocab} entries but the matrix has {rows} rows")]
    VocabLengthMismatch { vocab: usize, rows: usize },
    #[error("empty dimension: n = {n}, m = {m}")]
    EmptyDimension { n: usize, m: usize },
    #[error("malformed {file}: {source}")]
    Json {
        file: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("i/o failure on {path}: {source}")]
    IoFailure {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

/// Ordered token strings; index is the token id. Entries may repeat.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Vocabulary {
    strings: Vec<String>,
}

impl Vocabulary {
    pub fn new(strings: Vec<String>) -> Self {
        Self { strings }
    }

    pub fn len(&self) -> usize {
        self.strings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.strings.is_empty()
    }

    pub fn get(&self, id: TokenId) -> Option<&str> {
        self.strings.get(id as usize).map(String::as_str)
    }

    pub fn strings(&self) -> &[String] {
        &self.strings
    }
}

/// Dense `n x m` matrix of finite `f32` values, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    data: Vec<f32>,
    rows: usize,
    dim: usize,
}

impl EmbeddingMatrix {
    pub fn new(data: Vec<f32>, rows: usize, dim: usize) -> Result<Self, StoreError> {
        if rows == 0 || dim == 0 {
            return Err(StoreError::EmptyDimension { n: rows, m: dim });
        }
        if data.len() != rows * dim {
            return Err(StoreError::MetaMismatch(format!(
                "{} entries supplied for a {rows}x{dim} matrix",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(StoreError::NonFiniteEntry {
                row: pos / dim,
                col: pos % dim,
            });
        }
        Ok(Self { data, rows, dim })
    }

    pub fn from_rows(rows: &[Vec<f32>]) -> Result<Self, StoreError> {
        let dim = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(StoreError::MetaMismatch("ragged rows".into()));
        }
        Self::new(rows.concat(), rows.len(), dim)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    /// Copies the selected rows, in the given order, into a new matrix.
    pub fn select_rows(&self, ids: &[TokenId]) -> Result<Self, StoreError> {
        let mut data = Vec::with_capacity(ids.len() * self.dim);
        for &id in ids {
            data.extend_from_slice(self.row(id as usize));
        }
        Self::new(data, ids.len(), self.dim)
    }

    /// Euclidean distance between rows `i` and `j`, accumulated in `f64`.
    pub fn distance(&self, i: usize, j: usize) -> f64 {
        euclidean(self.row(i), self.row(j))
    }
}

pub fn euclidean(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = f64::from(x) - f64::from(y);
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BundleMeta {
    pub n: usize,
    pub m: usize,
    pub model_name: String,
}

/// A loaded vocabulary plus its embedding matrix. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle {
    pub model_name: String,
    pub vocab: Vocabulary,
    pub matrix: EmbeddingMatrix,
}

impl ModelBundle {
    pub fn new(
        model_name: impl Into<String>,
        vocab: Vocabulary,
        matrix: EmbeddingMatrix,
    ) -> Result<Self, StoreError> {
        if vocab.len() != matrix.rows() {
            return Err(StoreError::VocabLengthMismatch {
                vocab: vocab.len(),
                rows: matrix.rows(),
            });
        }
        Ok(Self {
            model_name: model_name.into(),
            vocab,
            matrix,
        })
    }

    pub fn len(&self) -> usize {
        self.vocab.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vocab.is_empty()
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>, StoreError> {
    fs::read(path).map_err(|source| {
        if source.kind() == io::ErrorKind::NotFound {
            StoreError::MissingFile(path.to_path_buf())
        } else {
            StoreError::IoFailure {
                path: path.to_path_buf(),
                source,
            }
        }
    })
}

fn parse_json<T: serde::de::DeserializeOwned>(path: &Path, bytes: &[u8]) -> Result<T, StoreError> {
    serde_json::from_slice(bytes).map_err(|source| StoreError::Json {
        file: path.to_path_buf(),
        source,
    })
}

/// Loads and validates a bundle directory.
pub fn load_model_bundle(dir: impl AsRef<Path>) -> Result<ModelBundle, StoreError> {
    let dir = dir.as_ref();
    let meta_path = dir.join(META_FILE);
    let vocab_path = dir.join(VOCAB_FILE);
    let emb_path = dir.join(EMBEDDINGS_FILE);

    let meta: BundleMeta = parse_json(&meta_path, &read_file(&meta_path)?)?;
    let strings: Vec<String> = parse_json(&vocab_path, &read_file(&vocab_path)?)?;
    let bytes = read_file(&emb_path)?;

    if meta.n == 0 || meta.m == 0 {
        return Err(StoreError::EmptyDimension {
            n: meta.n,
            m: meta.m,
        });
    }
    let expected = meta
        .n
        .checked_mul(meta.m)
        .and_then(|v| v.checked_mul(4))
        .ok_or_else(|| StoreError::MetaMismatch("n*m overflows".into()))?;
    if bytes.len() != expected {
        return Err(StoreError::MetaMismatch(format!(
            "{} is {} bytes, expected 4*{}*{} = {expected}",
            EMBEDDINGS_FILE,
            bytes.len(),
            meta.n,
            meta.m
        )));
    }
    if strings.len() != meta.n {
        return Err(StoreError::VocabLengthMismatch {
            vocab: strings.len(),
            rows: meta.n,
        });
    }

    let data: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    let matrix = EmbeddingMatrix::new(data, meta.n, meta.m)?;
    ModelBundle::new(meta.model_name, Vocabulary::new(strings), matrix)
}

/// Writes a bundle directory readable by [`load_model_bundle`].
pub fn write_model_bundle(bundle: &ModelBundle, dir: impl AsRef<Path>) -> Result<(), StoreError> {
    let dir = dir.as_ref();
    let io_err = |path: &Path| {
        let path = path.to_path_buf();
        move |source| StoreError::IoFailure { path, source }
    };
    if bundle.vocab.len() != bundle.matrix.rows() {
        return Err(StoreError::VocabLengthMismatch {
            vocab: bundle.vocab.len(),
            rows: bundle.matrix.rows(),
        });
    }
    fs::create_dir_all(dir).map_err(io_err(dir))?;

    let meta = BundleMeta {
        n: bundle.matrix.rows(),
        m: bundle.matrix.dim(),
        model_name: bundle.model_name.clone(),
    };
    let meta_path = dir.join(META_FILE);
    let meta_json = serde_json::to_vec_pretty(&meta).expect("meta serializes");
    fs::write(&meta_path, meta_json).map_err(io_err(&meta_path))?;

    let vocab_path = dir.join(VOCAB_FILE);
    let vocab_json = serde_json::to_vec(&bundle.vocab).expect("vocab serializes");
    fs::write(&vocab_path, vocab_json).map_err(io_err(&vocab_path))?;

    let emb_path = dir.join(EMBEDDINGS_FILE);
    let mut bytes = Vec::with_capacity(bundle.matrix.as_slice().len() * 4);
    for v in bundle.matrix.as_slice() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(&emb_path, bytes).map_err(io_err(&emb_path))?;
    Ok(())
}
