//! Small synthetic corpus whose relation label is fixed by the main verb,
//! written in the same file formats as real data.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::conll::{write_parse_file, ParsedSentence, ParsedToken};
use crate::corpus::{
    write_abstract_file, write_relation_file, AnnotatedDocument, EntitySpan, RelationInstance,
    Section,
};
use crate::label::RelationLabel;

pub const TOY_EMBEDDING_DIM: usize = 8;

const VERBS: [&str; 6] = ["uses", "has", "contains", "outperforms", "improves", "discusses"];
const NOUNS: [&str; 10] = [
    "model", "parser", "corpus", "method", "system", "grammar", "lexicon", "tagger", "metric",
    "treebank",
];
const ADJECTIVES: [&str; 4] = ["neural", "robust", "large", "novel"];
const FILLER: [&str; 3] = ["this", "work", "matters"];

/// A generated corpus in its four on-disk formats.
#[derive(Debug, Clone)]
pub struct ToyCorpus {
    pub documents: Vec<AnnotatedDocument>,
    pub sentences: Vec<ParsedSentence>,
    pub embeddings: String,
}

pub struct ToyPaths {
    pub abstracts: PathBuf,
    pub relations: PathBuf,
    pub parses: PathBuf,
    pub embeddings: PathBuf,
}

struct SentenceBuilder {
    text: String,
    tokens: Vec<ParsedToken>,
}

impl SentenceBuilder {
    fn new(text: String) -> SentenceBuilder {
        SentenceBuilder {
            text,
            tokens: Vec::new(),
        }
    }

    /// Append a token (space-separated unless punctuation) and return its
    /// character span.
    fn push(&mut self, form: &str, pos: &str, head: usize, deprel: &str) -> (usize, usize) {
        if !self.text.is_empty() && pos != "PUNCT" {
            self.text.push(' ');
        }
        let start = self.text.chars().count();
        self.text.push_str(form);
        let end = start + form.chars().count();
        self.tokens.push(ParsedToken {
            id: self.tokens.len() + 1,
            form: form.to_string(),
            pos: pos.to_string(),
            head,
            deprel: deprel.to_string(),
            start,
            end,
        });
        (start, end)
    }
}

/// `docs` documents, each holding a filler sentence and one relation
/// sentence "The [adj] N1 VERB the N2 ." whose verb decides the label.
/// Labels cycle in label order.
pub fn generate(docs: usize, seed: u64, id_prefix: &str) -> ToyCorpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut documents = Vec::with_capacity(docs);
    let mut sentences = Vec::with_capacity(2 * docs);
    for d in 0..docs {
        let id = format!("{id_prefix}{d}");
        let label = RelationLabel::ALL[d % RelationLabel::ALL.len()];
        let subject = *NOUNS.choose(&mut rng).expect("non-empty");
        let object = *NOUNS.choose(&mut rng).expect("non-empty");
        let adjective = rng.random_bool(0.5).then(|| *ADJECTIVES.choose(&mut rng).expect("non-empty"));

        let mut first = SentenceBuilder::new(String::new());
        first.push("This", "DET", 2, "det");
        first.push("work", "NOUN", 3, "nsubj");
        first.push("matters", "VERB", 0, "ROOT");
        first.push(".", "PUNCT", 3, "punct");

        let mut second = SentenceBuilder::new(first.text.clone());
        let offset = usize::from(adjective.is_some());
        second.push("The", "DET", 2 + offset, "det");
        let e1_start = match adjective {
            Some(a) => second.push(a, "ADJ", 3, "amod").0,
            None => usize::MAX,
        };
        let (s_start, s_end) = second.push(subject, "NOUN", 3 + offset, "nsubj");
        second.push(VERBS[label.index()], "VERB", 0, "ROOT");
        second.push("the", "DET", 5 + offset, "det");
        let (o_start, o_end) = second.push(object, "NOUN", 3 + offset, "dobj");
        second.push(".", "PUNCT", 3 + offset, "punct");

        let e1 = EntitySpan {
            id: format!("{id}.1"),
            section: Section::Abstract,
            start: e1_start.min(s_start),
            end: s_end,
            tokens: None,
        };
        let e2 = EntitySpan {
            id: format!("{id}.2"),
            section: Section::Abstract,
            start: o_start,
            end: o_end,
            tokens: None,
        };
        documents.push(AnnotatedDocument {
            id: id.clone(),
            title: format!("Toy abstract {d}"),
            abstract_text: second.text.clone(),
            relations: vec![RelationInstance {
                doc_id: id.clone(),
                arg1: e1.id.clone(),
                arg2: e2.id.clone(),
                label,
                reversed: false,
            }],
            entities: vec![e1, e2],
        });
        sentences.push(ParsedSentence {
            doc_id: id.clone(),
            index: 0,
            tokens: first.tokens,
        });
        sentences.push(ParsedSentence {
            doc_id: id,
            index: 1,
            tokens: second.tokens,
        });
    }
    ToyCorpus {
        documents,
        sentences,
        embeddings: embeddings(),
    }
}

/// Text-format vectors for the toy vocabulary, identical for every corpus
/// seed. "The" is left out so the lowercase fallback is exercised.
pub fn embeddings() -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(0x0065_6d62_6564);
    let words = ["the", ".", "<unk>"]
        .into_iter()
        .chain(VERBS)
        .chain(NOUNS)
        .chain(ADJECTIVES)
        .chain(FILLER)
        .chain(["This"]);
    let mut out = String::new();
    for w in words {
        out.push_str(w);
        for _ in 0..TOY_EMBEDDING_DIM {
            let _ = write!(out, " {:.4}", rng.random_range(-1.0f32..1.0));
        }
        out.push('\n');
    }
    out
}

impl ToyCorpus {
    pub fn abstracts(&self) -> String {
        write_abstract_file(&self.documents)
    }

    pub fn relations(&self) -> String {
        write_relation_file(&self.documents)
    }

    pub fn parses(&self) -> String {
        write_parse_file(&self.sentences)
    }

    /// Write `<stem>.xml`, `<stem>.rel`, `<stem>.conllx` and `<stem>.vec`
    /// into `dir`.
    pub fn write(&self, dir: &Path, stem: &str) -> std::io::Result<ToyPaths> {
        std::fs::create_dir_all(dir)?;
        let paths = ToyPaths {
            abstracts: dir.join(format!("{stem}.xml")),
            relations: dir.join(format!("{stem}.rel")),
            parses: dir.join(format!("{stem}.conllx")),
            embeddings: dir.join(format!("{stem}.vec")),
        };
        std::fs::write(&paths.abstracts, self.abstracts())?;
        std::fs::write(&paths.relations, self.relations())?;
        std::fs::write(&paths.parses, self.parses())?;
        std::fs::write(&paths.embeddings, &self.embeddings)?;
        Ok(paths)
    }
}
