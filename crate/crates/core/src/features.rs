//! Per-node input vectors: word embedding ⊕ one-hot dependency label ⊕
//! one-hot POS tag ⊕ entity lengths ⊕ subtree height, under a feature mask.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use ndarray::Array1;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embed::ConcatEmbedder;
use crate::model::EncodedTree;
use crate::tree::{DepTree, SpanningSubtree, TreeError};

pub const UNKNOWN_SLOT: &str = "<unk>";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FeatureError {
    #[error("feature vocabulary is already frozen")]
    Frozen,
    #[error("feature vocabulary is not frozen yet")]
    NotFrozen,
    #[error("unknown feature {0:?} (expected dep, pos, entlen, height or none)")]
    UnknownFeature(String),
    #[error("encoded width {found} does not match configured width {expected}")]
    WidthMismatch { expected: usize, found: usize },
    #[error(transparent)]
    Tree(#[from] TreeError),
}

/// Dense index over string labels with slot 0 reserved for unknown values.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct LabelIndex {
    labels: Vec<String>,
    index: HashMap<String, usize>,
}

impl Default for LabelIndex {
    fn default() -> Self {
        LabelIndex::from(vec![UNKNOWN_SLOT.to_string()])
    }
}

impl From<Vec<String>> for LabelIndex {
    fn from(labels: Vec<String>) -> Self {
        let index = labels
            .iter()
            .enumerate()
            .map(|(i, l)| (l.clone(), i))
            .collect();
        LabelIndex { labels, index }
    }
}

impl From<LabelIndex> for Vec<String> {
    fn from(l: LabelIndex) -> Self {
        l.labels
    }
}

impl LabelIndex {
    fn add(&mut self, label: &str) {
        if !self.index.contains_key(label) {
            self.index.insert(label.to_string(), self.labels.len());
            self.labels.push(label.to_string());
        }
    }

    /// Index of `label`, or the unknown slot.
    pub fn get(&self, label: &str) -> usize {
        self.index.get(label).copied().unwrap_or(0)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }
}

/// Dependency-label and POS vocabularies, built once from training data.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureVocab {
    pub dep: LabelIndex,
    pub pos: LabelIndex,
    frozen: bool,
}

impl FeatureVocab {
    pub fn new() -> FeatureVocab {
        FeatureVocab::default()
    }

    /// Assign indices in first-seen order over the subtree members, then
    /// freeze.
    pub fn build<'a, I>(&mut self, subtrees: I) -> Result<(), FeatureError>
    where
        I: IntoIterator<Item = (&'a DepTree, &'a SpanningSubtree)>,
    {
        if self.frozen {
            return Err(FeatureError::Frozen);
        }
        for (tree, sub) in subtrees {
            for &v in sub.nodes() {
                let node = tree.node(v);
                self.dep.add(&node.deprel);
                self.pos.add(&node.pos);
            }
        }
        self.frozen = true;
        Ok(())
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }
}

/// Which optional features are appended to the word embedding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub use_dep: bool,
    pub use_pos: bool,
    pub use_entlen: bool,
    pub use_height: bool,
}

impl FeatureConfig {
    pub const NONE: FeatureConfig = FeatureConfig {
        use_dep: false,
        use_pos: false,
        use_entlen: false,
        use_height: false,
    };

    pub const ALL: FeatureConfig = FeatureConfig {
        use_dep: true,
        use_pos: true,
        use_entlen: true,
        use_height: true,
    };

    pub fn width(&self, emb_dim: usize, vocab: &FeatureVocab) -> usize {
        emb_dim
            + if self.use_dep { vocab.dep.len() } else { 0 }
            + if self.use_pos { vocab.pos.len() } else { 0 }
            + if self.use_entlen { 2 } else { 0 }
            + usize::from(self.use_height)
    }

    /// Row name in the style of the ablation tables.
    pub fn describe(&self) -> String {
        let mut parts = Vec::new();
        if self.use_dep {
            parts.push("DEP");
        }
        if self.use_pos {
            parts.push("POS");
        }
        if self.use_entlen {
            parts.push("EntLen");
        }
        if self.use_height {
            parts.push("Height");
        }
        if parts.is_empty() {
            "(no features)".to_string()
        } else {
            parts.join(" + ")
        }
    }
}

impl FromStr for FeatureConfig {
    type Err = FeatureError;

    /// Comma-separated subset of `dep,pos,entlen,height`, or `none`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut cfg = FeatureConfig::NONE;
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            match part.to_ascii_lowercase().as_str() {
                "none" => {}
                "dep" => cfg.use_dep = true,
                "pos" => cfg.use_pos = true,
                "entlen" => cfg.use_entlen = true,
                "height" => cfg.use_height = true,
                _ => return Err(FeatureError::UnknownFeature(part.to_string())),
            }
        }
        Ok(cfg)
    }
}

impl fmt::Display for FeatureConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut parts = Vec::new();
        if self.use_dep {
            parts.push("dep");
        }
        if self.use_pos {
            parts.push("pos");
        }
        if self.use_entlen {
            parts.push("entlen");
        }
        if self.use_height {
            parts.push("height");
        }
        if parts.is_empty() {
            f.write_str("none")
        } else {
            f.write_str(&parts.join(","))
        }
    }
}

/// Token counts of the two entities.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EntityLengths {
    pub e1: usize,
    pub e2: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeInput {
    pub vector: Array1<f64>,
    pub node: usize,
    pub is_entity_head: bool,
}

/// Encodes subtree nodes against a frozen vocabulary and an embedder.
#[derive(Debug, Clone, Copy)]
pub struct NodeEncoder<'a> {
    pub vocab: &'a FeatureVocab,
    pub config: FeatureConfig,
    pub embedder: &'a ConcatEmbedder,
}

impl NodeEncoder<'_> {
    pub fn width(&self) -> usize {
        self.config.width(self.embedder.dim(), self.vocab)
    }

    pub fn encode_node(
        &self,
        tree: &DepTree,
        sub: &SpanningSubtree,
        node: usize,
        lengths: EntityLengths,
    ) -> Result<NodeInput, FeatureError> {
        if !self.vocab.is_frozen() {
            return Err(FeatureError::NotFrozen);
        }
        let height = sub.height(node)?;
        let data = tree.node(node);
        let mut v = self.embedder.lookup(&data.form);
        if self.config.use_dep {
            let mut one_hot = vec![0.0; self.vocab.dep.len()];
            one_hot[self.vocab.dep.get(&data.deprel)] = 1.0;
            v.extend(one_hot);
        }
        if self.config.use_pos {
            let mut one_hot = vec![0.0; self.vocab.pos.len()];
            one_hot[self.vocab.pos.get(&data.pos)] = 1.0;
            v.extend(one_hot);
        }
        let is_head1 = node == sub.head1;
        let is_head2 = node == sub.head2;
        if self.config.use_entlen {
            v.push(if is_head1 { lengths.e1 as f64 } else { 0.0 });
            v.push(if is_head2 { lengths.e2 as f64 } else { 0.0 });
        }
        if self.config.use_height {
            v.push(height as f64);
        }
        if v.len() != self.width() {
            return Err(FeatureError::WidthMismatch {
                expected: self.width(),
                found: v.len(),
            });
        }
        Ok(NodeInput {
            vector: Array1::from(v),
            node,
            is_entity_head: is_head1 || is_head2,
        })
    }

    /// Encode every subtree member in post-order as model input.
    pub fn encode_subtree(
        &self,
        tree: &DepTree,
        sub: &SpanningSubtree,
        lengths: EntityLengths,
    ) -> Result<EncodedTree, FeatureError> {
        let order = sub.post_order();
        let slot: HashMap<usize, usize> = order.iter().enumerate().map(|(k, &v)| (v, k)).collect();
        let mut inputs = Vec::with_capacity(order.len());
        let mut children = Vec::with_capacity(order.len());
        for &v in &order {
            inputs.push(self.encode_node(tree, sub, v, lengths)?.vector);
            children.push(sub.children(v)?.iter().map(|c| slot[c]).collect());
        }
        Ok(EncodedTree::new(inputs, children).expect("post-order yields a valid encoded tree"))
    }
}
