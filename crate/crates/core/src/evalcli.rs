//! End-to-end runs: loading data, training with model selection, scoring a
//! checkpoint, and the ablation grid over feature sets and embedding
//! sources.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::checkpoint::{Checkpoint, CheckpointError};
use crate::conll::{read_parse_file, ParseFileError, ParseIndex};
use crate::corpus::{parse_abstract_file, parse_relation_file, split_validation, AnnotatedDocument, CorpusError};
use crate::embed::{ConcatEmbedder, EmbedError, EmbeddingTable};
use crate::features::{FeatureConfig, FeatureError, NodeEncoder};
use crate::label::RelationLabel;
use crate::metrics::{EvalReport, MissingPolicy};
use crate::pipeline::{align_entities, build_vocab, encode, prepare, PipelineError, PrepareOptions};
use crate::train::{evaluate_examples, fit, TrainConfig, TrainError, TrainLog};

#[derive(Debug, Error)]
pub enum RunError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Corpus {
        path: PathBuf,
        #[source]
        source: CorpusError,
    },
    #[error("{path}: {source}")]
    Parses {
        path: PathBuf,
        #[source]
        source: ParseFileError,
    },
    #[error(transparent)]
    Split(CorpusError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Features(#[from] FeatureError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("model expects input width {expected} but the data encodes to {found}")]
    WidthMismatch { expected: usize, found: usize },
    #[error("embedding sources {given:?} do not match the model's {expected:?}")]
    SourceMismatch { expected: Vec<String>, given: Vec<String> },
    #[error("no usable {0} instances after preparation")]
    NoInstances(&'static str),
    #[error("grid: {0}")]
    Grid(String),
}

fn read(path: &Path) -> Result<String, RunError> {
    std::fs::read_to_string(path).map_err(|source| RunError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Locations of one corpus in the three input formats.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataPaths {
    pub abstracts: PathBuf,
    pub relations: PathBuf,
    pub parses: PathBuf,
}

impl DataPaths {
    fn resolved(&self, base: &Path) -> DataPaths {
        DataPaths {
            abstracts: base.join(&self.abstracts),
            relations: base.join(&self.relations),
            parses: base.join(&self.parses),
        }
    }
}

/// Documents with relations attached and entities aligned to their parses.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub docs: Vec<AnnotatedDocument>,
    pub parses: ParseIndex,
}

impl Dataset {
    pub fn load(paths: &DataPaths) -> Result<Dataset, RunError> {
        let mut docs = parse_abstract_file(&read(&paths.abstracts)?).map_err(|source| RunError::Corpus {
            path: paths.abstracts.clone(),
            source,
        })?;
        parse_relation_file(&read(&paths.relations)?, &mut docs).map_err(|source| RunError::Corpus {
            path: paths.relations.clone(),
            source,
        })?;
        let sentences = read_parse_file(&read(&paths.parses)?).map_err(|source| RunError::Parses {
            path: paths.parses.clone(),
            source,
        })?;
        Ok(Dataset::new(docs, ParseIndex::new(sentences)))
    }

    pub fn new(mut docs: Vec<AnnotatedDocument>, parses: ParseIndex) -> Dataset {
        let unaligned = align_entities(&mut docs, &parses);
        if unaligned > 0 {
            log::info!("{unaligned} entities have no parsed tokens");
        }
        Dataset { docs, parses }
    }
}

/// Load `(name, path)` sources once each.
pub fn load_tables(
    sources: &[(String, PathBuf)],
    limit: Option<usize>,
) -> Result<Vec<Arc<EmbeddingTable>>, RunError> {
    sources
        .iter()
        .map(|(name, path)| {
            let t = EmbeddingTable::load(path, name, limit)?;
            log::info!("loaded {} vectors of dimension {} from {}", t.len(), t.dim(), path.display());
            Ok(Arc::new(t))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalOptions {
    pub skip_missing: bool,
    pub cross_sentence: bool,
}

impl EvalOptions {
    fn policy(&self) -> MissingPolicy {
        if self.skip_missing {
            MissingPolicy::Skip
        } else {
            MissingPolicy::CountAsError
        }
    }

    fn prepare(&self) -> PrepareOptions {
        PrepareOptions {
            cross_sentence: self.cross_sentence,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub checkpoint: Checkpoint,
    pub log: TrainLog,
}

/// Prepare both splits, build the vocabulary from training subtrees, fit
/// and package the selected parameters.
pub fn train_model(
    train: &[AnnotatedDocument],
    validation: &[AnnotatedDocument],
    parses: &ParseIndex,
    embedder: &ConcatEmbedder,
    config: &TrainConfig,
    options: PrepareOptions,
) -> Result<TrainedModel, RunError> {
    config.validate()?;
    let train_prep = prepare(train, parses, options);
    let val_prep = prepare(validation, parses, options);
    for (name, p) in [("training", &train_prep), ("validation", &val_prep)] {
        log::info!(
            "{name}: {} instances, skipped {:?}",
            p.instances.len(),
            p.skip_summary()
        );
    }
    if train_prep.instances.is_empty() {
        return Err(RunError::NoInstances("training"));
    }
    if val_prep.instances.is_empty() {
        return Err(RunError::NoInstances("validation"));
    }
    let vocab = build_vocab(&train_prep)?;
    let encoder = NodeEncoder {
        vocab: &vocab,
        config: config.features,
        embedder,
    };
    let train_ex = encode(&train_prep, &encoder)?;
    let val_ex = encode(&val_prep, &encoder)?;
    let result = fit(&train_ex, &val_ex, encoder.width(), config)?;
    let checkpoint = Checkpoint::new(
        &result.params,
        vocab,
        embedder.config(),
        config.clone(),
        result.best_epoch,
    );
    Ok(TrainedModel {
        checkpoint,
        log: result.log,
    })
}

/// Score a checkpoint on annotated documents. Instances that cannot be
/// prepared count as errors of their gold label unless
/// `options.skip_missing` is set.
pub fn evaluate_model(
    checkpoint: &Checkpoint,
    docs: &[AnnotatedDocument],
    parses: &ParseIndex,
    embedder: &ConcatEmbedder,
    options: EvalOptions,
) -> Result<EvalReport, RunError> {
    let params = checkpoint.params()?;
    let encoder = NodeEncoder {
        vocab: &checkpoint.vocab,
        config: checkpoint.features,
        embedder,
    };
    if encoder.width() != params.input_size() {
        return Err(RunError::WidthMismatch {
            expected: params.input_size(),
            found: encoder.width(),
        });
    }
    let prepared = prepare(docs, parses, options.prepare());
    let examples = encode(&prepared, &encoder)?;
    let missing: Vec<RelationLabel> = prepared.skipped.iter().map(|s| s.relation.label).collect();
    Ok(evaluate_examples(&params, &examples, &missing, options.policy())?)
}

/// Rebuild the embedder a checkpoint was trained with from freshly loaded
/// tables, checking names and dimensions.
pub fn embedder_for(
    checkpoint: &Checkpoint,
    tables: Vec<Arc<EmbeddingTable>>,
) -> Result<ConcatEmbedder, RunError> {
    let expected: Vec<String> = checkpoint.embedder.sources.iter().map(|(n, _)| n.clone()).collect();
    let given: Vec<String> = tables.iter().map(|t| t.name().to_string()).collect();
    if expected != given {
        return Err(RunError::SourceMismatch { expected, given });
    }
    Ok(ConcatEmbedder::from_config(&checkpoint.embedder, tables)?)
}

// ---------------------------------------------------------------------------
// Ablation grid

/// One configuration of the grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    #[serde(default)]
    pub name: Option<String>,
    pub features: String,
    pub embeddings: Vec<String>,
}

/// Contents of a grid file. Paths are relative to the file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid {
    pub data: DataPaths,
    /// Scored data; without it the validation split is scored.
    #[serde(default)]
    pub test: Option<DataPaths>,
    /// Source name to vector file.
    pub embeddings: BTreeMap<String, PathBuf>,
    #[serde(default)]
    pub emb_limit: Option<usize>,
    #[serde(default = "default_validation")]
    pub validation: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub case_fallback: Option<bool>,
    #[serde(default)]
    pub eval: EvalOptions,
    /// Shared training settings; `features` and `seed` are set per row.
    #[serde(default)]
    pub train: TrainConfig,
    /// Explicit rows. When empty, every feature set is crossed with every
    /// embedding set.
    #[serde(default)]
    pub rows: Vec<GridRow>,
    #[serde(default)]
    pub feature_sets: Vec<String>,
    #[serde(default)]
    pub embedding_sets: Vec<Vec<String>>,
}

fn default_validation() -> usize {
    50
}

fn default_seed() -> u64 {
    1
}

impl Grid {
    pub fn from_toml(raw: &str) -> Result<Grid, RunError> {
        toml::from_str(raw).map_err(|e| RunError::Grid(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Grid, RunError> {
        let mut grid = Grid::from_toml(&read(path)?)?;
        let base = path.parent().unwrap_or(Path::new("."));
        grid.data = grid.data.resolved(base);
        grid.test = grid.test.map(|t| t.resolved(base));
        for p in grid.embeddings.values_mut() {
            *p = base.join(&*p);
        }
        Ok(grid)
    }

    pub fn expanded_rows(&self) -> Vec<GridRow> {
        if !self.rows.is_empty() {
            return self.rows.clone();
        }
        let mut rows = Vec::new();
        for e in &self.embedding_sets {
            for f in &self.feature_sets {
                rows.push(GridRow {
                    name: None,
                    features: f.clone(),
                    embeddings: e.clone(),
                });
            }
        }
        rows
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub name: String,
    pub features: String,
    pub embeddings: Vec<String>,
    pub report: Option<EvalReport>,
    pub selected_epoch: Option<usize>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

pub const ABLATION_HEADER: &str = "name,features,embeddings,P,R,F1,F1:U,F1:M-F,F1:P-W,F1:C,F1:R,F1:T,status";

impl AblationTable {
    /// Scores in percent with one decimal; failed rows leave score cells
    /// empty and carry the error in `status`.
    pub fn to_csv(&self) -> String {
        let quote = |s: &str| {
            if s.contains([',', '"', '\n']) {
                format!("\"{}\"", s.replace('"', "\"\""))
            } else {
                s.to_string()
            }
        };
        let mut out = String::from(ABLATION_HEADER);
        out.push('\n');
        for r in &self.rows {
            let _ = write!(
                out,
                "{},{},{}",
                quote(&r.name),
                quote(&r.features),
                quote(&r.embeddings.join("+"))
            );
            match (&r.report, &r.error) {
                (Some(rep), _) => {
                    for c in rep.table_cells() {
                        let _ = write!(out, ",{c}");
                    }
                    out.push_str(",ok");
                }
                (None, e) => {
                    out.push_str(&",".repeat(9));
                    let _ = write!(out, ",{}", quote(&format!("FAILED: {}", e.as_deref().unwrap_or("unknown"))));
                }
            }
            out.push('\n');
        }
        out
    }
}

/// Train, select and evaluate every grid row with the grid's seed. A row
/// that fails is recorded and the remaining rows still run.
pub fn run_ablation(grid: &Grid) -> Result<AblationTable, RunError> {
    let rows = grid.expanded_rows();
    if rows.is_empty() {
        return Err(RunError::Grid("no rows: give [[rows]] or feature_sets with embedding_sets".into()));
    }
    let data = Dataset::load(&grid.data)?;
    let split = split_validation(&data.docs, grid.validation, grid.seed).map_err(RunError::Split)?;
    let test = grid.test.as_ref().map(Dataset::load).transpose()?;

    let mut tables: BTreeMap<String, Arc<EmbeddingTable>> = BTreeMap::new();
    let mut out = AblationTable::default();
    for row in rows {
        let name = row.name.clone().unwrap_or_else(|| {
            let features = row
                .features
                .parse::<FeatureConfig>()
                .map(|f| f.describe())
                .unwrap_or_else(|_| row.features.clone());
            format!("{features} / {}", row.embeddings.join(" + "))
        });
        log::info!("ablation row {name}");
        let outcome = (|| -> Result<(EvalReport, usize), RunError> {
            let features: FeatureConfig = row.features.parse()?;
            let mut shared = Vec::new();
            for source in &row.embeddings {
                if !tables.contains_key(source) {
                    let path = grid
                        .embeddings
                        .get(source)
                        .ok_or_else(|| RunError::Grid(format!("unknown embedding source {source:?}")))?;
                    let loaded = load_tables(&[(source.clone(), path.clone())], grid.emb_limit)?;
                    tables.insert(source.clone(), loaded[0].clone());
                }
                shared.push(tables[source].clone());
            }
            let mut embedder = ConcatEmbedder::shared(shared, grid.seed);
            if let Some(c) = grid.case_fallback {
                embedder = embedder.with_case_fallback(c);
            }
            let config = TrainConfig {
                features,
                seed: grid.seed,
                ..grid.train.clone()
            };
            let trained = train_model(
                &split.train,
                &split.validation,
                &data.parses,
                &embedder,
                &config,
                grid.eval.prepare(),
            )?;
            let (docs, parses) = match &test {
                Some(t) => (&t.docs[..], &t.parses),
                None => (&split.validation[..], &data.parses),
            };
            let report = evaluate_model(&trained.checkpoint, docs, parses, &embedder, grid.eval)?;
            Ok((report, trained.checkpoint.selected_epoch))
        })();
        let (report, selected_epoch, error) = match outcome {
            Ok((r, e)) => (Some(r), Some(e), None),
            Err(e) => {
                log::warn!("ablation row {name} failed: {e}");
                (None, None, Some(e.to_string()))
            }
        };
        out.rows.push(AblationRow {
            name,
            features: row.features,
            embeddings: row.embeddings,
            report,
            selected_epoch,
            error,
        });
    }
    Ok(out)
}
