//! The closed set of six relation types.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Number of relation labels the classifier predicts.
pub const NUM_LABELS: usize = 6;

/// Relation type between an ordered entity pair.
///
/// The discriminant order (U, M-F, P-W, C, R, T) is the order used for
/// logits, confusion-matrix rows/columns and every report.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum RelationLabel {
    #[serde(rename = "USAGE")]
    Usage,
    #[serde(rename = "MODEL-FEATURE")]
    ModelFeature,
    #[serde(rename = "PART_WHOLE")]
    PartWhole,
    #[serde(rename = "COMPARE")]
    Compare,
    #[serde(rename = "RESULT")]
    Result,
    #[serde(rename = "TOPIC")]
    Topic,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown relation label {0:?}")]
pub struct UnknownLabel(pub String);

impl RelationLabel {
    pub const ALL: [RelationLabel; NUM_LABELS] = [
        RelationLabel::Usage,
        RelationLabel::ModelFeature,
        RelationLabel::PartWhole,
        RelationLabel::Compare,
        RelationLabel::Result,
        RelationLabel::Topic,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<RelationLabel> {
        Self::ALL.get(index).copied()
    }

    /// Canonical uppercase name as written in relation files.
    pub fn name(self) -> &'static str {
        match self {
            RelationLabel::Usage => "USAGE",
            RelationLabel::ModelFeature => "MODEL-FEATURE",
            RelationLabel::PartWhole => "PART_WHOLE",
            RelationLabel::Compare => "COMPARE",
            RelationLabel::Result => "RESULT",
            RelationLabel::Topic => "TOPIC",
        }
    }

    /// Short column header used in reports.
    pub fn abbrev(self) -> &'static str {
        match self {
            RelationLabel::Usage => "U",
            RelationLabel::ModelFeature => "M-F",
            RelationLabel::PartWhole => "P-W",
            RelationLabel::Compare => "C",
            RelationLabel::Result => "R",
            RelationLabel::Topic => "T",
        }
    }
}

impl fmt::Display for RelationLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for RelationLabel {
    type Err = UnknownLabel;

    /// Case-insensitive; accepts the canonical names and the short forms.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let upper = s.trim().to_ascii_uppercase();
        RelationLabel::ALL
            .iter()
            .copied()
            .find(|l| l.name() == upper || l.abbrev() == upper)
            .ok_or_else(|| UnknownLabel(s.to_string()))
    }
}
