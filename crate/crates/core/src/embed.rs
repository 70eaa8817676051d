//! Pretrained word-vector tables and their concatenation.
//!
//! Tables are read from the common text format (`word v1 … vd` per line,
//! with an optional `count dim` header). Several tables are concatenated by
//! [`ConcatEmbedder`]; a segment for a word missing from a source is filled
//! with a small Gaussian sample, N(0, 1e-8) by default.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Variance of the fill distribution for missing segments.
pub const FILL_VARIANCE: f64 = 1e-8;

/// Key tried after the exact and lowercased forms.
pub const DEFAULT_UNKNOWN_KEY: &str = "<unk>";

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{source_name} line {line}: expected {expected} values, found {found}")]
    RowLength {
        source_name: String,
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("{source_name} line {line}: bad number {value:?}")]
    BadNumber {
        source_name: String,
        line: usize,
        value: String,
    },
    #[error("{0}: no vectors")]
    Empty(String),
    #[error("embedding source spec {0:?} is not of the form name:path")]
    BadSpec(String),
    #[error("source {name}: dimension {found} does not match expected {expected}")]
    DimensionMismatch {
        name: String,
        expected: usize,
        found: usize,
    },
}

/// A word → vector map of fixed dimension.
#[derive(Debug, Clone)]
pub struct EmbeddingTable {
    name: String,
    dim: usize,
    index: HashMap<String, usize>,
    data: Vec<f32>,
}

impl EmbeddingTable {
    /// Build from in-memory rows. Duplicate words keep the first row.
    pub fn from_rows<I, S>(name: &str, dim: usize, rows: I) -> Result<EmbeddingTable, EmbedError>
    where
        I: IntoIterator<Item = (S, Vec<f32>)>,
        S: Into<String>,
    {
        let mut table = EmbeddingTable {
            name: name.to_string(),
            dim,
            index: HashMap::new(),
            data: Vec::new(),
        };
        for (i, (word, v)) in rows.into_iter().enumerate() {
            if v.len() != dim {
                return Err(EmbedError::RowLength {
                    source_name: name.to_string(),
                    line: i + 1,
                    expected: dim,
                    found: v.len(),
                });
            }
            table.insert(word.into(), &v);
        }
        if table.index.is_empty() {
            return Err(EmbedError::Empty(name.to_string()));
        }
        Ok(table)
    }

    fn insert(&mut self, word: String, v: &[f32]) {
        if let std::collections::hash_map::Entry::Vacant(e) = self.index.entry(word) {
            e.insert(self.data.len() / self.dim);
            self.data.extend_from_slice(v);
        }
    }

    pub fn load(
        path: impl AsRef<Path>,
        name: &str,
        limit: Option<usize>,
    ) -> Result<EmbeddingTable, EmbedError> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|source| EmbedError::Io {
            path: path.display().to_string(),
            source,
        })?;
        EmbeddingTable::read(BufReader::new(file), name, limit)
    }

    /// Read the text vector format. `limit` caps the number of vector rows
    /// read (the header does not count).
    pub fn read<R: BufRead>(
        reader: R,
        name: &str,
        limit: Option<usize>,
    ) -> Result<EmbeddingTable, EmbedError> {
        let mut table = EmbeddingTable {
            name: name.to_string(),
            dim: 0,
            index: HashMap::new(),
            data: Vec::new(),
        };
        let mut rows = 0;
        let mut values = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line_no = i + 1;
            let line = line.map_err(|source| EmbedError::Io {
                path: name.to_string(),
                source,
            })?;
            let mut fields = line
                .trim_end_matches(['\r', '\n'])
                .split([' ', '\t'])
                .filter(|f| !f.is_empty());
            let Some(word) = fields.next() else {
                continue;
            };
            let rest: Vec<&str> = fields.collect();
            if line_no == 1 && rest.len() == 1 {
                if let (Ok(_), Ok(d)) = (word.parse::<usize>(), rest[0].parse::<usize>()) {
                    table.dim = d;
                    continue;
                }
            }
            if limit.is_some_and(|l| rows >= l) {
                break;
            }
            if table.dim == 0 {
                table.dim = rest.len();
            }
            if rest.len() != table.dim {
                return Err(EmbedError::RowLength {
                    source_name: name.to_string(),
                    line: line_no,
                    expected: table.dim,
                    found: rest.len(),
                });
            }
            values.clear();
            for v in rest {
                values.push(v.parse::<f32>().map_err(|_| EmbedError::BadNumber {
                    source_name: name.to_string(),
                    line: line_no,
                    value: v.to_string(),
                })?);
            }
            table.insert(word.to_string(), &values);
            rows += 1;
        }
        if table.index.is_empty() || table.dim == 0 {
            return Err(EmbedError::Empty(name.to_string()));
        }
        Ok(table)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn get(&self, word: &str) -> Option<&[f32]> {
        self.index
            .get(word)
            .map(|&row| &self.data[row * self.dim..(row + 1) * self.dim])
    }
}

/// Parse a `name:path` CLI argument.
pub fn parse_source_spec(spec: &str) -> Result<(String, String), EmbedError> {
    match spec.split_once(':') {
        Some((name, path)) if !name.is_empty() && !path.is_empty() => {
            Ok((name.to_string(), path.to_string()))
        }
        _ => Err(EmbedError::BadSpec(spec.to_string())),
    }
}

/// Settings that determine every vector an embedder produces, stored in
/// checkpoints so evaluation reproduces training inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedderConfig {
    /// (source name, dimension) in concatenation order.
    pub sources: Vec<(String, usize)>,
    pub fill_std: f64,
    pub seed: u64,
    pub case_fallback: bool,
    pub unknown_key: String,
}

/// Which key of a source produced a segment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SegmentHit {
    Exact,
    Lowercase,
    Unknown,
    Fill,
}

/// Ordered concatenation of embedding tables.
///
/// A missing segment is a pure function of `(seed, source position, word)`:
/// the sample is drawn from a generator keyed by a digest of those three
/// values, so the same word always gets the same fill regardless of lookup
/// order or thread.
#[derive(Debug, Clone)]
pub struct ConcatEmbedder {
    tables: Vec<Arc<EmbeddingTable>>,
    fill_std: f64,
    seed: u64,
    case_fallback: bool,
    unknown_key: String,
}

impl ConcatEmbedder {
    pub fn new(tables: Vec<EmbeddingTable>, seed: u64) -> ConcatEmbedder {
        ConcatEmbedder::shared(tables.into_iter().map(Arc::new).collect(), seed)
    }

    /// Like [`ConcatEmbedder::new`] over tables that other embedders may
    /// also use.
    pub fn shared(tables: Vec<Arc<EmbeddingTable>>, seed: u64) -> ConcatEmbedder {
        ConcatEmbedder {
            tables,
            fill_std: FILL_VARIANCE.sqrt(),
            seed,
            case_fallback: true,
            unknown_key: DEFAULT_UNKNOWN_KEY.to_string(),
        }
    }

    /// Disable (`false`) the lowercase retry.
    pub fn with_case_fallback(mut self, enabled: bool) -> ConcatEmbedder {
        self.case_fallback = enabled;
        self
    }

    pub fn with_fill_std(mut self, std: f64) -> ConcatEmbedder {
        self.fill_std = std;
        self
    }

    pub fn with_unknown_key(mut self, key: &str) -> ConcatEmbedder {
        self.unknown_key = key.to_string();
        self
    }

    pub fn tables(&self) -> &[Arc<EmbeddingTable>] {
        &self.tables
    }

    pub fn dim(&self) -> usize {
        self.tables.iter().map(|t| t.dim()).sum()
    }

    pub fn config(&self) -> EmbedderConfig {
        EmbedderConfig {
            sources: self
                .tables
                .iter()
                .map(|t| (t.name().to_string(), t.dim()))
                .collect(),
            fill_std: self.fill_std,
            seed: self.seed,
            case_fallback: self.case_fallback,
            unknown_key: self.unknown_key.clone(),
        }
    }

    /// Rebuild an embedder matching a stored configuration; table names and
    /// dimensions must agree.
    pub fn from_config(
        config: &EmbedderConfig,
        tables: Vec<Arc<EmbeddingTable>>,
    ) -> Result<ConcatEmbedder, EmbedError> {
        if tables.len() != config.sources.len() {
            return Err(EmbedError::DimensionMismatch {
                name: "<source count>".into(),
                expected: config.sources.len(),
                found: tables.len(),
            });
        }
        for (t, (name, dim)) in tables.iter().zip(&config.sources) {
            if t.dim() != *dim {
                return Err(EmbedError::DimensionMismatch {
                    name: name.clone(),
                    expected: *dim,
                    found: t.dim(),
                });
            }
        }
        Ok(ConcatEmbedder {
            tables,
            fill_std: config.fill_std,
            seed: config.seed,
            case_fallback: config.case_fallback,
            unknown_key: config.unknown_key.clone(),
        })
    }

    /// Keys tried per source, in order: exact form, lowercase form (unless
    /// disabled or identical), then the unknown key.
    pub fn fallback_keys<'w>(&'w self, word: &'w str) -> Vec<std::borrow::Cow<'w, str>> {
        let mut keys = vec![std::borrow::Cow::Borrowed(word)];
        if self.case_fallback {
            let lower = word.to_lowercase();
            if lower != word {
                keys.push(std::borrow::Cow::Owned(lower));
            }
        }
        keys.push(std::borrow::Cow::Borrowed(self.unknown_key.as_str()));
        keys
    }

    /// Concatenated vector for `word`, plus which key served each segment.
    pub fn lookup_with_hits(&self, word: &str) -> (Vec<f64>, Vec<SegmentHit>) {
        let keys = self.fallback_keys(word);
        let mut out = Vec::with_capacity(self.dim());
        let mut hits = Vec::with_capacity(self.tables.len());
        for (s, table) in self.tables.iter().enumerate() {
            let found = keys.iter().enumerate().find_map(|(k, key)| {
                table.get(key).map(|v| {
                    let hit = match k {
                        0 => SegmentHit::Exact,
                        _ if k + 1 == keys.len() => SegmentHit::Unknown,
                        _ => SegmentHit::Lowercase,
                    };
                    (v, hit)
                })
            });
            match found {
                Some((v, hit)) => {
                    out.extend(v.iter().map(|&x| x as f64));
                    hits.push(hit);
                }
                None => {
                    out.extend(self.fill(s, word, table.dim()));
                    hits.push(SegmentHit::Fill);
                }
            }
        }
        (out, hits)
    }

    pub fn lookup(&self, word: &str) -> Vec<f64> {
        self.lookup_with_hits(word).0
    }

    fn fill(&self, source: usize, word: &str, dim: usize) -> Vec<f64> {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update((source as u64).to_le_bytes());
        h.update(word.as_bytes());
        let key: [u8; 32] = h.finalize().into();
        let mut rng = ChaCha8Rng::from_seed(key);
        let normal = Normal::new(0.0, self.fill_std).expect("finite non-negative std");
        (0..dim).map(|_| normal.sample(&mut rng)).collect()
    }
}
