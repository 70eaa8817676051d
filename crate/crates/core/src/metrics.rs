//! Per-label and macro-averaged precision, recall and F1, and the confusion
//! matrix they derive from.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::label::{RelationLabel, NUM_LABELS};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricError {
    #[error("gold has {gold} labels but predictions have {predicted}")]
    LengthMismatch { gold: usize, predicted: usize },
    #[error("confusion csv: {0}")]
    Csv(String),
}

/// Counts with rows = gold label and columns = predicted label, in label
/// order. Instances the system produced no prediction for are kept per gold
/// label in `missed`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; NUM_LABELS]; NUM_LABELS],
    pub missed: [u64; NUM_LABELS],
}

impl ConfusionMatrix {
    pub fn new() -> ConfusionMatrix {
        ConfusionMatrix::default()
    }

    /// `None` records a missing prediction, which counts as a false negative
    /// for the gold label and as a false positive for nothing.
    pub fn add(&mut self, gold: RelationLabel, predicted: Option<RelationLabel>) {
        match predicted {
            Some(p) => self.counts[gold.index()][p.index()] += 1,
            None => self.missed[gold.index()] += 1,
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum::<u64>() + self.missed.iter().sum::<u64>()
    }

    pub fn row_sum(&self, gold: RelationLabel) -> u64 {
        self.counts[gold.index()].iter().sum::<u64>() + self.missed[gold.index()]
    }

    pub fn column_sum(&self, predicted: RelationLabel) -> u64 {
        self.counts.iter().map(|row| row[predicted.index()]).sum()
    }

    pub fn true_positives(&self, label: RelationLabel) -> u64 {
        self.counts[label.index()][label.index()]
    }

    pub fn false_positives(&self, label: RelationLabel) -> u64 {
        self.column_sum(label) - self.true_positives(label)
    }

    pub fn false_negatives(&self, label: RelationLabel) -> u64 {
        self.row_sum(label) - self.true_positives(label)
    }

    /// Header row of predicted labels, one row per gold label. A trailing
    /// `missed` column appears only when some prediction is missing.
    pub fn to_csv(&self) -> String {
        let with_missed = self.missed.iter().any(|&m| m > 0);
        let mut out = String::from("gold\\predicted");
        for l in RelationLabel::ALL {
            let _ = write!(out, ",{}", l.abbrev());
        }
        if with_missed {
            out.push_str(",missed");
        }
        out.push('\n');
        for g in RelationLabel::ALL {
            out.push_str(g.abbrev());
            for p in RelationLabel::ALL {
                let _ = write!(out, ",{}", self.counts[g.index()][p.index()]);
            }
            if with_missed {
                let _ = write!(out, ",{}", self.missed[g.index()]);
            }
            out.push('\n');
        }
        out
    }

    pub fn from_csv(raw: &str) -> Result<ConfusionMatrix, MetricError> {
        let bad = |m: String| MetricError::Csv(m);
        let mut lines = raw.lines().filter(|l| !l.trim().is_empty());
        let header: Vec<&str> = lines
            .next()
            .ok_or_else(|| bad("empty input".into()))?
            .split(',')
            .collect();
        let with_missed = match header.len() {
            n if n == NUM_LABELS + 1 => false,
            n if n == NUM_LABELS + 2 && header[n - 1] == "missed" => true,
            n => return Err(bad(format!("header has {n} columns"))),
        };
        let mut cm = ConfusionMatrix::new();
        let mut rows = 0;
        for line in lines {
            let cells: Vec<&str> = line.split(',').collect();
            if cells.len() != header.len() {
                return Err(bad(format!("row {line:?} has {} columns", cells.len())));
            }
            let gold: RelationLabel = cells[0]
                .parse()
                .map_err(|_| bad(format!("unknown row label {:?}", cells[0])))?;
            let num = |s: &str| {
                s.trim()
                    .parse::<u64>()
                    .map_err(|_| bad(format!("bad count {s:?}")))
            };
            for k in 0..NUM_LABELS {
                cm.counts[gold.index()][k] = num(cells[k + 1])?;
            }
            if with_missed {
                cm.missed[gold.index()] = num(cells[NUM_LABELS + 1])?;
            }
            rows += 1;
        }
        if rows != NUM_LABELS {
            return Err(bad(format!("expected {NUM_LABELS} rows, found {rows}")));
        }
        Ok(cm)
    }
}

/// Confusion matrix for aligned gold and predicted sequences.
pub fn confusion(
    gold: &[RelationLabel],
    predicted: &[RelationLabel],
) -> Result<ConfusionMatrix, MetricError> {
    if gold.len() != predicted.len() {
        return Err(MetricError::LengthMismatch {
            gold: gold.len(),
            predicted: predicted.len(),
        });
    }
    let mut cm = ConfusionMatrix::new();
    for (&g, &p) in gold.iter().zip(predicted) {
        cm.add(g, Some(p));
    }
    Ok(cm)
}

/// Scores for aligned gold and predicted sequences.
pub fn score(gold: &[RelationLabel], predicted: &[RelationLabel]) -> Result<EvalReport, MetricError> {
    Ok(EvalReport::from_confusion(confusion(gold, predicted)?, MissingPolicy::CountAsError))
}

/// `a / b`, with `0 / 0` read as 0.
fn ratio(a: f64, b: f64) -> f64 {
    if b == 0.0 {
        0.0
    } else {
        a / b
    }
}

fn f1(p: f64, r: f64) -> f64 {
    ratio(2.0 * p * r, p + r)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelScores {
    pub label: RelationLabel,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Gold instances of this label, including missed ones.
    pub support: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MacroScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// How instances without a prediction entered the scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MissingPolicy {
    /// Counted as false negatives of their gold label.
    CountAsError,
    /// Left out of every count.
    Skip,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Label order U, M-F, P-W, C, R, T.
    pub labels: Vec<LabelScores>,
    #[serde(rename = "macro")]
    pub macro_scores: MacroScores,
    pub confusion: ConfusionMatrix,
    /// Instances that entered the scores.
    pub instances: u64,
    /// Instances without a prediction (skipped during preparation).
    pub missing: u64,
    pub missing_policy: MissingPolicy,
}

impl EvalReport {
    pub fn from_confusion(confusion: ConfusionMatrix, policy: MissingPolicy) -> EvalReport {
        let labels: Vec<LabelScores> = RelationLabel::ALL
            .iter()
            .map(|&l| {
                let tp = confusion.true_positives(l) as f64;
                let precision = ratio(tp, tp + confusion.false_positives(l) as f64);
                let recall = ratio(tp, tp + confusion.false_negatives(l) as f64);
                LabelScores {
                    label: l,
                    precision,
                    recall,
                    f1: f1(precision, recall),
                    support: confusion.row_sum(l),
                }
            })
            .collect();
        let macro_scores = mean_scores(&labels);
        EvalReport {
            labels,
            macro_scores,
            instances: confusion.total(),
            missing: confusion.missed.iter().sum(),
            confusion,
            missing_policy: policy,
        }
    }

    pub fn label(&self, label: RelationLabel) -> &LabelScores {
        &self.labels[label.index()]
    }

    pub fn macro_f1(&self) -> f64 {
        self.macro_scores.f1
    }

    /// Macro scores over only the labels that occur in gold or predictions,
    /// for comparison with scorers that drop absent labels.
    pub fn macro_present(&self) -> MacroScores {
        let present: Vec<LabelScores> = self
            .labels
            .iter()
            .filter(|s| s.support > 0 || self.confusion.column_sum(s.label) > 0)
            .copied()
            .collect();
        mean_scores(&present)
    }

    /// One table row in percent: P, R, F1, then F1 per label.
    pub fn table_cells(&self) -> Vec<String> {
        let pct = |x: f64| format!("{:.1}", 100.0 * x);
        let mut cells = vec![
            pct(self.macro_scores.precision),
            pct(self.macro_scores.recall),
            pct(self.macro_scores.f1),
        ];
        cells.extend(self.labels.iter().map(|s| pct(s.f1)));
        cells
    }

    /// Plain-text summary for terminals.
    pub fn summary(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<6} {:>7} {:>7} {:>7} {:>7}", "label", "P", "R", "F1", "gold");
        for s in &self.labels {
            let _ = writeln!(
                out,
                "{:<6} {:>7.1} {:>7.1} {:>7.1} {:>7}",
                s.label.abbrev(),
                100.0 * s.precision,
                100.0 * s.recall,
                100.0 * s.f1,
                s.support
            );
        }
        let m = &self.macro_scores;
        let _ = writeln!(
            out,
            "{:<6} {:>7.1} {:>7.1} {:>7.1} {:>7}",
            "macro",
            100.0 * m.precision,
            100.0 * m.recall,
            100.0 * m.f1,
            self.instances
        );
        if self.missing > 0 {
            let _ = writeln!(out, "{} instances had no prediction and count as errors", self.missing);
        }
        out
    }
}

fn mean_scores(scores: &[LabelScores]) -> MacroScores {
    let n = scores.len() as f64;
    let mean = |f: fn(&LabelScores) -> f64| ratio(scores.iter().map(f).sum(), n);
    MacroScores {
        precision: mean(|s| s.precision),
        recall: mean(|s| s.recall),
        f1: mean(|s| s.f1),
    }
}
