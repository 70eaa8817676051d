//! From annotated documents and their parses to model-ready examples:
//! entity-to-token alignment, head reduction, spanning-subtree extraction
//! and node encoding.

use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use crate::conll::{ParseIndex, ParsedSentence};
use crate::corpus::{AnnotatedDocument, RelationInstance, Section, TokenSpan};
use crate::features::{EntityLengths, FeatureError, FeatureVocab, NodeEncoder};
use crate::label::RelationLabel;
use crate::model::EncodedTree;
use crate::tree::{DepTree, SpanningSubtree, TreeError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("relation {arg1}-{arg2} in document {doc}: {source}")]
    Encode {
        doc: String,
        arg1: String,
        arg2: String,
        #[source]
        source: FeatureError,
    },
}

/// Why a relation instance could not be turned into a tree.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SkipReason {
    /// The entity lives in the title, which has no parse.
    TitleEntity(String),
    /// The document has no parsed sentences.
    NoParse,
    /// No parsed token overlaps the entity's characters.
    Unaligned(String),
    /// The two entities sit in different sentences.
    CrossSentence,
    /// A sentence's head column does not form a tree.
    BadTree { sentence: usize, error: TreeError },
}

impl fmt::Display for SkipReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SkipReason::TitleEntity(e) => write!(f, "entity {e} is in the title"),
            SkipReason::NoParse => write!(f, "document has no parse"),
            SkipReason::Unaligned(e) => write!(f, "entity {e} overlaps no parsed token"),
            SkipReason::CrossSentence => write!(f, "entities are in different sentences"),
            SkipReason::BadTree { sentence, error } => {
                write!(f, "sentence {sentence} is not a tree: {error}")
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct Skipped {
    pub relation: RelationInstance,
    pub reason: SkipReason,
}

/// A relation instance with its tree and spanning subtree resolved.
#[derive(Debug, Clone)]
pub struct PreparedInstance {
    pub relation: RelationInstance,
    pub tree: Arc<DepTree>,
    pub subtree: SpanningSubtree,
    pub lengths: EntityLengths,
}

#[derive(Debug, Clone, Default)]
pub struct PreparedCorpus {
    pub instances: Vec<PreparedInstance>,
    pub skipped: Vec<Skipped>,
}

impl PreparedCorpus {
    /// Skip counts grouped by reason kind, for logging.
    pub fn skip_summary(&self) -> Vec<(&'static str, usize)> {
        let mut counts: Vec<(&'static str, usize)> = Vec::new();
        for s in &self.skipped {
            let kind = match s.reason {
                SkipReason::TitleEntity(_) => "title entity",
                SkipReason::NoParse => "no parse",
                SkipReason::Unaligned(_) => "unaligned entity",
                SkipReason::CrossSentence => "cross-sentence",
                SkipReason::BadTree { .. } => "malformed tree",
            };
            match counts.iter_mut().find(|(k, _)| *k == kind) {
                Some((_, n)) => *n += 1,
                None => counts.push((kind, 1)),
            }
        }
        counts
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PrepareOptions {
    /// Join the two sentences under a synthetic root instead of skipping.
    pub cross_sentence: bool,
}

/// Token range overlapping `[start, end)` characters, in the first sentence
/// that has any overlap.
pub fn align_span(sentences: &[ParsedSentence], start: usize, end: usize) -> Option<TokenSpan> {
    sentences.iter().enumerate().find_map(|(s, sent)| {
        let hits: Vec<usize> = sent
            .tokens
            .iter()
            .enumerate()
            .filter(|(_, t)| t.start < end && t.end > start)
            .map(|(i, _)| i)
            .collect();
        let (&first, &last) = (hits.first()?, hits.last()?);
        Some(TokenSpan {
            sentence: s,
            start: first,
            end: last + 1,
        })
    })
}

/// Fill `tokens` for every abstract entity. Returns how many entities
/// stayed unaligned.
pub fn align_entities(docs: &mut [AnnotatedDocument], parses: &ParseIndex) -> usize {
    let mut unaligned = 0;
    for doc in docs.iter_mut() {
        let sentences = parses.sentences(&doc.id);
        for e in &mut doc.entities {
            e.tokens = match e.section {
                Section::Abstract => align_span(sentences, e.start, e.end),
                Section::Title => None,
            };
            if e.tokens.is_none() {
                unaligned += 1;
            }
        }
    }
    unaligned
}

/// Resolve every relation of `docs` (already aligned) to a subtree.
pub fn prepare(
    docs: &[AnnotatedDocument],
    parses: &ParseIndex,
    options: PrepareOptions,
) -> PreparedCorpus {
    let mut out = PreparedCorpus::default();
    for doc in docs {
        let sentences = parses.sentences(&doc.id);
        let mut trees: HashMap<usize, Result<Arc<DepTree>, TreeError>> = HashMap::new();
        let mut tree_of = |s: usize| {
            trees
                .entry(s)
                .or_insert_with(|| DepTree::build(&sentences[s]).map(Arc::new))
                .clone()
                .map_err(|error| SkipReason::BadTree { sentence: s, error })
        };
        for rel in &doc.relations {
            let prepared = (|| {
                let span = |id: &str| {
                    let e = doc.entity(id).ok_or_else(|| SkipReason::Unaligned(id.to_string()))?;
                    if e.section == Section::Title {
                        return Err(SkipReason::TitleEntity(id.to_string()));
                    }
                    if sentences.is_empty() {
                        return Err(SkipReason::NoParse);
                    }
                    e.tokens.ok_or_else(|| SkipReason::Unaligned(id.to_string()))
                };
                let (s1, s2) = (span(&rel.arg1)?, span(&rel.arg2)?);
                let lengths = EntityLengths {
                    e1: s1.len(),
                    e2: s2.len(),
                };
                let (tree, h1, h2) = if s1.sentence == s2.sentence {
                    let tree = tree_of(s1.sentence)?;
                    let h1 = tree.entity_head(s1.start..s1.end).expect("aligned span lies in its sentence");
                    let h2 = tree.entity_head(s2.start..s2.end).expect("aligned span lies in its sentence");
                    (tree, h1, h2)
                } else if options.cross_sentence {
                    let (a, b) = (tree_of(s1.sentence)?, tree_of(s2.sentence)?);
                    let h1 = a.entity_head(s1.start..s1.end).expect("aligned span lies in its sentence");
                    let h2 = b.entity_head(s2.start..s2.end).expect("aligned span lies in its sentence");
                    if s1.sentence < s2.sentence {
                        (Arc::new(DepTree::join(&[&a, &b])), h1, a.len() + h2)
                    } else {
                        (Arc::new(DepTree::join(&[&b, &a])), b.len() + h1, h2)
                    }
                } else {
                    return Err(SkipReason::CrossSentence);
                };
                let subtree = tree
                    .spanning_subtree(h1, h2)
                    .expect("heads are nodes of the tree");
                Ok(PreparedInstance {
                    relation: rel.clone(),
                    tree,
                    subtree,
                    lengths,
                })
            })();
            match prepared {
                Ok(p) => out.instances.push(p),
                Err(reason) => out.skipped.push(Skipped {
                    relation: rel.clone(),
                    reason,
                }),
            }
        }
    }
    out
}

/// Dependency and POS vocabularies over the training subtrees.
pub fn build_vocab(train: &PreparedCorpus) -> Result<FeatureVocab, FeatureError> {
    let mut vocab = FeatureVocab::new();
    vocab.build(train.instances.iter().map(|p| (p.tree.as_ref(), &p.subtree)))?;
    Ok(vocab)
}

/// One classification unit as the model sees it.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub tree: EncodedTree,
    pub label: RelationLabel,
}

pub fn encode(
    corpus: &PreparedCorpus,
    encoder: &NodeEncoder<'_>,
) -> Result<Vec<Example>, PipelineError> {
    corpus
        .instances
        .iter()
        .map(|p| {
            let tree = encoder
                .encode_subtree(&p.tree, &p.subtree, p.lengths)
                .map_err(|source| PipelineError::Encode {
                    doc: p.relation.doc_id.clone(),
                    arg1: p.relation.arg1.clone(),
                    arg2: p.relation.arg2.clone(),
                    source,
                })?;
            Ok(Example {
                tree,
                label: p.relation.label,
            })
        })
        .collect()
}
