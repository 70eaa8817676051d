//! Reader and writer for sentence-segmented dependency parses.
//!
//! Each sentence block starts with `#doc <id>` and `#sent <k>` comment lines,
//! followed by one tab-separated row per token with the ten CoNLL-U columns
//! (`ID FORM LEMMA UPOS XPOS FEATS HEAD DEPREL DEPS MISC`) and an eleventh
//! `start:end` column holding the token's half-open character span in the
//! de-tagged abstract text. Blocks are separated by blank lines. Multiword
//! ranges (`1-2`) and empty nodes (`1.1`) are skipped.

use std::collections::HashMap;
use std::fmt::Write as _;

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ParseFileError {
    #[error("parse file line {line}: {message}")]
    Format { line: usize, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedToken {
    /// 1-based position in the sentence.
    pub id: usize,
    pub form: String,
    pub pos: String,
    /// 1-based head position; 0 marks the root.
    pub head: usize,
    pub deprel: String,
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedSentence {
    pub doc_id: String,
    pub index: usize,
    pub tokens: Vec<ParsedToken>,
}

/// Structural problem found by [`validate`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    NoRoot,
    MultipleRoots(Vec<usize>),
    HeadOutOfRange { token: usize, head: usize },
    Cycle(Vec<usize>),
    SpanOrder { token: usize },
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Violation::NoRoot => write!(f, "no root"),
            Violation::MultipleRoots(r) => write!(f, "multiple roots at tokens {r:?}"),
            Violation::HeadOutOfRange { token, head } => {
                write!(f, "token {token} has head {head} outside the sentence")
            }
            Violation::Cycle(c) => write!(f, "cycle through tokens {c:?}"),
            Violation::SpanOrder { token } => {
                write!(f, "token {token} character span is empty, reversed or overlaps its predecessor")
            }
        }
    }
}

pub fn read_parse_file(raw: &str) -> Result<Vec<ParsedSentence>, ParseFileError> {
    let mut out = Vec::new();
    let mut doc_id: Option<String> = None;
    let mut sent_index: Option<usize> = None;
    let mut tokens: Vec<ParsedToken> = Vec::new();
    let mut block_start = 0;

    let mut flush = |doc_id: &Option<String>,
                     sent_index: &mut Option<usize>,
                     tokens: &mut Vec<ParsedToken>,
                     line: usize|
     -> Result<(), ParseFileError> {
        if tokens.is_empty() {
            return Ok(());
        }
        let doc = doc_id.clone().ok_or_else(|| ParseFileError::Format {
            line,
            message: "sentence without a preceding #doc line".into(),
        })?;
        let index = sent_index.take().ok_or_else(|| ParseFileError::Format {
            line,
            message: "sentence without a #sent line".into(),
        })?;
        out.push(ParsedSentence {
            doc_id: doc,
            index,
            tokens: std::mem::take(tokens),
        });
        Ok(())
    };

    for (i, line) in raw.lines().enumerate() {
        let line_no = i + 1;
        let text = line.trim_end_matches('\r');
        if text.trim().is_empty() {
            flush(&doc_id, &mut sent_index, &mut tokens, block_start)?;
            continue;
        }
        if tokens.is_empty() {
            block_start = line_no;
        }
        let err = |message: String| ParseFileError::Format {
            line: line_no,
            message,
        };
        if let Some(comment) = text.strip_prefix('#') {
            let comment = comment.trim();
            if let Some(id) = comment.strip_prefix("doc ") {
                flush(&doc_id, &mut sent_index, &mut tokens, block_start)?;
                doc_id = Some(id.trim().to_string());
            } else if let Some(k) = comment.strip_prefix("sent ") {
                flush(&doc_id, &mut sent_index, &mut tokens, block_start)?;
                sent_index = Some(
                    k.trim()
                        .parse()
                        .map_err(|_| err(format!("bad sentence index {k:?}")))?,
                );
            }
            continue;
        }
        let cols: Vec<&str> = text.split('\t').collect();
        if cols.len() != 11 {
            return Err(err(format!("expected 11 columns, found {}", cols.len())));
        }
        if cols[0].contains('-') || cols[0].contains('.') {
            continue;
        }
        let num = |s: &str, what: &str| {
            s.parse::<usize>()
                .map_err(|_| err(format!("bad {what} {s:?}")))
        };
        let id = num(cols[0], "token id")?;
        if id != tokens.len() + 1 {
            return Err(err(format!(
                "token id {id} out of sequence (expected {})",
                tokens.len() + 1
            )));
        }
        let (s, e) = cols[10]
            .split_once(':')
            .ok_or_else(|| err(format!("bad character span {:?}", cols[10])))?;
        tokens.push(ParsedToken {
            id,
            form: cols[1].to_string(),
            pos: cols[3].to_string(),
            head: num(cols[6], "head")?,
            deprel: cols[7].to_string(),
            start: num(s, "span start")?,
            end: num(e, "span end")?,
        });
    }
    let last = raw.lines().count();
    flush(&doc_id, &mut sent_index, &mut tokens, last)?;
    Ok(out)
}

pub fn write_parse_file(sentences: &[ParsedSentence]) -> String {
    let mut out = String::new();
    let mut current: Option<&str> = None;
    for s in sentences {
        if current != Some(s.doc_id.as_str()) {
            let _ = writeln!(out, "#doc {}", s.doc_id);
            current = Some(&s.doc_id);
        }
        let _ = writeln!(out, "#sent {}", s.index);
        for t in &s.tokens {
            let _ = writeln!(
                out,
                "{}\t{}\t_\t{}\t_\t_\t{}\t{}\t_\t_\t{}:{}",
                t.id, t.form, t.pos, t.head, t.deprel, t.start, t.end
            );
        }
        out.push('\n');
    }
    out
}

/// Check single root, head range, acyclicity and span monotonicity.
pub fn validate(sentence: &ParsedSentence) -> Vec<Violation> {
    let n = sentence.tokens.len();
    let mut violations = Vec::new();
    let roots: Vec<usize> = sentence
        .tokens
        .iter()
        .filter(|t| t.head == 0)
        .map(|t| t.id)
        .collect();
    match roots.len() {
        0 => violations.push(Violation::NoRoot),
        1 => {}
        _ => violations.push(Violation::MultipleRoots(roots)),
    }
    for t in &sentence.tokens {
        if t.head > n {
            violations.push(Violation::HeadOutOfRange {
                token: t.id,
                head: t.head,
            });
        }
    }
    // 0 = unvisited, 1 = on current walk, 2 = reaches a root
    let mut state = vec![0u8; n + 1];
    state[0] = 2;
    for start in 1..=n {
        let mut walk = Vec::new();
        let mut cur = start;
        while cur <= n && state[cur] == 0 {
            state[cur] = 1;
            walk.push(cur);
            cur = sentence.tokens[cur - 1].head;
        }
        if cur <= n && state[cur] == 1 {
            let at = walk.iter().position(|&w| w == cur).unwrap_or(0);
            violations.push(Violation::Cycle(walk[at..].to_vec()));
        }
        for w in walk {
            state[w] = 2;
        }
    }
    let mut prev_end = 0;
    for t in &sentence.tokens {
        if t.start >= t.end || t.start < prev_end {
            violations.push(Violation::SpanOrder { token: t.id });
        }
        prev_end = t.end;
    }
    violations
}

/// Sentences grouped by document, in sentence-index order.
#[derive(Debug, Default, Clone)]
pub struct ParseIndex {
    by_doc: HashMap<String, Vec<ParsedSentence>>,
}

impl ParseIndex {
    pub fn new(sentences: Vec<ParsedSentence>) -> ParseIndex {
        let mut by_doc: HashMap<String, Vec<ParsedSentence>> = HashMap::new();
        for s in sentences {
            by_doc.entry(s.doc_id.clone()).or_default().push(s);
        }
        for v in by_doc.values_mut() {
            v.sort_by_key(|s| s.index);
        }
        ParseIndex { by_doc }
    }

    pub fn sentences(&self, doc_id: &str) -> &[ParsedSentence] {
        self.by_doc.get(doc_id).map_or(&[], Vec::as_slice)
    }

    pub fn num_documents(&self) -> usize {
        self.by_doc.len()
    }
}
