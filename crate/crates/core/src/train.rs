//! Mini-batch training with validation-based model selection.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::FeatureConfig;
use crate::label::{RelationLabel, NUM_LABELS};
use crate::metrics::{ConfusionMatrix, EvalReport, MissingPolicy};
use crate::model::{
    accumulate_backward, argmax, classify, tree_forward, Mode, ModelError, ParamGrads,
    TreeLstmParams,
};
use crate::optim::{Optimizer, OptimizerConfig};
use crate::pipeline::Example;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("{0} set is empty")]
    EmptySet(&'static str),
    #[error("epoch {epoch}, batch {batch}, instance {instance}: {source}")]
    Numeric {
        epoch: usize,
        batch: usize,
        instance: usize,
        #[source]
        source: ModelError,
    },
    #[error("validation instance {instance}: {source}")]
    Validation {
        instance: usize,
        #[source]
        source: ModelError,
    },
    #[error("thread pool: {0}")]
    ThreadPool(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub dropout: f64,
    pub hidden: usize,
    pub optimizer: OptimizerConfig,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub features: FeatureConfig,
    /// Weight each instance's loss by n / (6 · count of its label).
    pub class_weights: bool,
    /// 1 runs everything on the calling thread.
    pub threads: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 16,
            dropout: 0.2,
            hidden: 200,
            optimizer: OptimizerConfig::default(),
            max_epochs: 30,
            patience: 5,
            seed: 1,
            features: FeatureConfig::ALL,
            class_weights: false,
            threads: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.to_string()));
        if self.batch_size == 0 {
            return bad("batch size must be at least 1");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        if self.hidden == 0 {
            return bad("hidden size must be positive");
        }
        if self.patience == 0 {
            return bad("patience must be at least 1");
        }
        if self.max_epochs == 0 {
            return bad("max epochs must be at least 1");
        }
        if self.threads == 0 {
            return bad("threads must be at least 1");
        }
        let lr = self.optimizer.learning_rate();
        if !(lr.is_finite() && lr >= 0.0) {
            return bad("learning rate must be finite and non-negative");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_macro_f1: f64,
    pub selected: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
}

impl TrainLog {
    /// One JSON object per line.
    pub fn to_jsonl(&self) -> String {
        self.epochs
            .iter()
            .map(|r| serde_json::to_string(r).expect("records serialize") + "\n")
            .collect()
    }

    pub fn from_jsonl(raw: &str) -> Result<TrainLog, serde_json::Error> {
        let epochs = raw
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<Result<_, _>>()?;
        Ok(TrainLog { epochs })
    }

    pub fn selected(&self) -> Option<&EpochRecord> {
        self.epochs.iter().find(|r| r.selected)
    }
}

/// Instance indices in shuffled batches. The shuffle depends only on
/// `(seed, epoch)`; the last batch may be short.
pub fn make_batches(n: usize, batch_size: usize, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64);
    order.shuffle(&mut rng);
    order.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect()
}

/// Dropout generator for one instance in one epoch.
fn dropout_rng(seed: u64, epoch: usize, instance: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x0064_726f_706f_7574);
    rng.set_stream(((epoch as u64) << 32) | instance as u64);
    rng
}

/// Per-label loss weights: n / (6 · count), 1 for absent labels.
pub fn balanced_weights(examples: &[Example]) -> [f64; NUM_LABELS] {
    let mut counts = [0usize; NUM_LABELS];
    for e in examples {
        counts[e.label.index()] += 1;
    }
    let n = examples.len() as f64;
    std::array::from_fn(|k| {
        if counts[k] == 0 {
            1.0
        } else {
            n / (NUM_LABELS as f64 * counts[k] as f64)
        }
    })
}

/// Drives optimization over one training set.
pub struct Trainer<'a> {
    config: &'a TrainConfig,
    examples: &'a [Example],
    weights: [f64; NUM_LABELS],
    optimizer: Optimizer,
    pool: Option<rayon::ThreadPool>,
}

impl<'a> Trainer<'a> {
    pub fn new(
        config: &'a TrainConfig,
        examples: &'a [Example],
        params: &TreeLstmParams,
    ) -> Result<Trainer<'a>, TrainError> {
        config.validate()?;
        if examples.is_empty() {
            return Err(TrainError::EmptySet("training"));
        }
        let pool = if config.threads > 1 {
            Some(
                rayon::ThreadPoolBuilder::new()
                    .num_threads(config.threads)
                    .build()
                    .map_err(|e| TrainError::ThreadPool(e.to_string()))?,
            )
        } else {
            None
        };
        Ok(Trainer {
            config,
            examples,
            weights: if config.class_weights {
                balanced_weights(examples)
            } else {
                [1.0; NUM_LABELS]
            },
            optimizer: Optimizer::new(config.optimizer, params),
            pool,
        })
    }

    fn instance_grads(
        &self,
        params: &TreeLstmParams,
        epoch: usize,
        instance: usize,
    ) -> Result<(f64, ParamGrads), ModelError> {
        let ex = &self.examples[instance];
        let mut rng = dropout_rng(self.config.seed, epoch, instance);
        let (_, tape) = tree_forward(params, &ex.tree, self.config.dropout, Mode::Train, &mut rng)?;
        let mut grads = ParamGrads::zeros_like(params);
        let w = self.weights[ex.label.index()];
        let loss = accumulate_backward(params, &tape, ex.label.index(), w, &mut grads)?;
        Ok((loss, grads))
    }

    /// One pass over the data. Gradients are averaged over each batch and
    /// summed in batch order, so results do not depend on the thread count.
    /// Returns the mean instance loss.
    pub fn train_epoch(&mut self, params: &mut TreeLstmParams, epoch: usize) -> Result<f64, TrainError> {
        let batches = make_batches(self.examples.len(), self.config.batch_size, self.config.seed, epoch);
        let mut total_loss = 0.0;
        let mut grads = ParamGrads::zeros_like(params);
        for (b, batch) in batches.iter().enumerate() {
            grads.reset();
            let numeric = |instance: usize, source: ModelError| TrainError::Numeric {
                epoch,
                batch: b,
                instance,
                source,
            };
            let results: Vec<Result<(f64, ParamGrads), ModelError>> = match &self.pool {
                Some(pool) => {
                    let p = &*params;
                    pool.install(|| {
                        batch
                            .par_iter()
                            .map(|&i| self.instance_grads(p, epoch, i))
                            .collect()
                    })
                }
                None => batch
                    .iter()
                    .map(|&i| self.instance_grads(params, epoch, i))
                    .collect(),
            };
            for (&i, r) in batch.iter().zip(results) {
                let (loss, g) = r.map_err(|e| numeric(i, e))?;
                total_loss += loss;
                grads.add_assign(&g);
            }
            grads.scale(1.0 / batch.len() as f64);
            self.optimizer.step(params, &grads);
            if !params.is_finite() {
                return Err(numeric(
                    batch[0],
                    ModelError::NonFinite {
                        what: "parameters after update",
                        node: 0,
                    },
                ));
            }
        }
        Ok(total_loss / self.examples.len() as f64)
    }
}

/// Eval-mode predictions for every example.
pub fn predict_all(params: &TreeLstmParams, examples: &[Example]) -> Result<Vec<RelationLabel>, TrainError> {
    examples
        .iter()
        .enumerate()
        .map(|(instance, ex)| {
            classify(params, &ex.tree)
                .map(|p| RelationLabel::from_index(argmax(&p)).expect("argmax is a label index"))
                .map_err(|source| TrainError::Validation { instance, source })
        })
        .collect()
}

/// Scores of `params` on `examples`, plus gold labels with no example
/// (counted as missed).
pub fn evaluate_examples(
    params: &TreeLstmParams,
    examples: &[Example],
    missing: &[RelationLabel],
    policy: MissingPolicy,
) -> Result<EvalReport, TrainError> {
    let predicted = predict_all(params, examples)?;
    let mut cm = ConfusionMatrix::new();
    for (ex, p) in examples.iter().zip(predicted) {
        cm.add(ex.label, Some(p));
    }
    if policy == MissingPolicy::CountAsError {
        for &g in missing {
            cm.add(g, None);
        }
    }
    Ok(EvalReport::from_confusion(cm, policy))
}

/// Patience-based stopping on a score where higher is better. Ties keep
/// the earlier epoch.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    best: Option<(usize, f64)>,
    since_best: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> EarlyStopping {
        EarlyStopping {
            patience,
            best: None,
            since_best: 0,
        }
    }

    /// Record an epoch's score; true when it is the new best.
    pub fn observe(&mut self, epoch: usize, score: f64) -> bool {
        match self.best {
            Some((_, b)) if score <= b => {
                self.since_best += 1;
                false
            }
            _ => {
                self.best = Some((epoch, score));
                self.since_best = 0;
                true
            }
        }
    }

    pub fn should_stop(&self) -> bool {
        self.since_best >= self.patience
    }

    pub fn best_epoch(&self) -> Option<usize> {
        self.best.map(|(e, _)| e)
    }
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub params: TreeLstmParams,
    pub log: TrainLog,
    pub best_epoch: usize,
}

/// Train from a fresh initialization, selecting the epoch with the best
/// validation macro-F1.
pub fn fit(
    train: &[Example],
    validation: &[Example],
    input_size: usize,
    config: &TrainConfig,
) -> Result<FitResult, TrainError> {
    let params = TreeLstmParams::init(input_size, config.hidden, config.seed);
    fit_from(params, train, validation, config)
}

pub fn fit_from(
    mut params: TreeLstmParams,
    train: &[Example],
    validation: &[Example],
    config: &TrainConfig,
) -> Result<FitResult, TrainError> {
    if validation.is_empty() {
        return Err(TrainError::EmptySet("validation"));
    }
    let mut trainer = Trainer::new(config, train, &params)?;
    let mut stopper = EarlyStopping::new(config.patience);
    let mut best = params.clone();
    let mut log = TrainLog::default();
    for epoch in 1..=config.max_epochs {
        let train_loss = trainer.train_epoch(&mut params, epoch)?;
        let f1 = evaluate_examples(&params, validation, &[], MissingPolicy::Skip)?.macro_f1();
        log::info!("epoch {epoch}: train loss {train_loss:.4}, validation macro-F1 {f1:.4}");
        if stopper.observe(epoch, f1) {
            best.clone_from(&params);
        }
        log.epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_macro_f1: f1,
            selected: false,
        });
        if stopper.should_stop() {
            break;
        }
    }
    let best_epoch = stopper.best_epoch().expect("at least one epoch ran");
    log.epochs[best_epoch - 1].selected = true;
    Ok(FitResult {
        params: best,
        log,
        best_epoch,
    })
}
