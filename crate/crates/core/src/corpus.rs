//! Annotated abstracts, relation files and train/validation splits.
//!
//! The abstract file is an XML-like markup:
//!
//! ```text
//! <doc id="X"><title>…</title><abstract>… <entity id="X.1">surface</entity> …</abstract></doc>
//! ```
//!
//! `<text id="…">` is accepted as an alias for `<doc id="…">`, and any
//! element without an `id` attribute at the top level (for example a
//! wrapping `<doc>` root) is treated as a transparent container. Entity
//! offsets are character offsets into the de-tagged, entity-decoded text of
//! the section they appear in.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::label::RelationLabel;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CorpusError {
    #[error("malformed markup at line {line}, column {column}: {message}")]
    Markup {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("document {doc}: duplicate entity id {entity}")]
    DuplicateEntity { doc: String, entity: String },
    #[error("duplicate document id {0}")]
    DuplicateDocument(String),
    #[error("document {doc}: entity {entity} is empty")]
    EmptyEntity { doc: String, entity: String },
    #[error("relation file line {line}: unknown label {label:?}")]
    UnknownLabel { line: usize, label: String },
    #[error("relation file line {line}: malformed relation {text:?}")]
    MalformedRelation { line: usize, text: String },
    #[error("relation file line {line}: entity {entity} not found in any document")]
    UnknownEntity { line: usize, entity: String },
    #[error("relation file line {line}: entities {arg1} and {arg2} belong to different documents")]
    CrossDocument {
        line: usize,
        arg1: String,
        arg2: String,
    },
    #[error("relation file line {line}: relation between {entity} and itself")]
    SelfRelation { line: usize, entity: String },
    #[error("requested {requested} validation documents but corpus has {available}")]
    SplitTooLarge { requested: usize, available: usize },
    #[error("split manifest: {0}")]
    Manifest(String),
}

/// Which text field of a document an entity lives in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Section {
    Title,
    Abstract,
}

/// Token range of an entity inside one parsed sentence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TokenSpan {
    pub sentence: usize,
    /// Half-open token index range (0-based within the sentence).
    pub start: usize,
    pub end: usize,
}

impl TokenSpan {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntitySpan {
    pub id: String,
    pub section: Section,
    /// Half-open character range into the de-tagged section text.
    pub start: usize,
    pub end: usize,
    /// Filled in by parse alignment.
    pub tokens: Option<TokenSpan>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RelationInstance {
    pub doc_id: String,
    pub arg1: String,
    pub arg2: String,
    pub label: RelationLabel,
    pub reversed: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotatedDocument {
    pub id: String,
    pub title: String,
    pub abstract_text: String,
    pub entities: Vec<EntitySpan>,
    pub relations: Vec<RelationInstance>,
}

impl AnnotatedDocument {
    pub fn entity(&self, id: &str) -> Option<&EntitySpan> {
        self.entities.iter().find(|e| e.id == id)
    }

    pub fn section_text(&self, section: Section) -> &str {
        match section {
            Section::Title => &self.title,
            Section::Abstract => &self.abstract_text,
        }
    }

    /// Surface string of an entity, sliced by character offsets.
    pub fn surface(&self, entity: &EntitySpan) -> String {
        self.section_text(entity.section)
            .chars()
            .skip(entity.start)
            .take(entity.end - entity.start)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetSplit {
    pub train: Vec<AnnotatedDocument>,
    pub validation: Vec<AnnotatedDocument>,
    pub seed: u64,
}

// ---------------------------------------------------------------------------
// Abstract file

struct Scanner<'a> {
    src: &'a str,
    pos: usize,
}

enum Markup<'a> {
    Open {
        name: &'a str,
        attrs: Vec<(&'a str, String)>,
        self_closing: bool,
    },
    Close(&'a str),
    Text(&'a str),
}

impl<'a> Scanner<'a> {
    fn error_at(&self, pos: usize, message: impl Into<String>) -> CorpusError {
        let prefix = &self.src[..pos];
        let line = prefix.matches('\n').count() + 1;
        let column = prefix.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
        CorpusError::Markup {
            line,
            column,
            message: message.into(),
        }
    }

    /// Next markup item and the byte offset it starts at; skips declarations
    /// and comments.
    fn next(&mut self) -> Result<Option<(usize, Markup<'a>)>, CorpusError> {
        loop {
            if self.pos >= self.src.len() {
                return Ok(None);
            }
            let start = self.pos;
            let rest = &self.src[start..];
            if !rest.starts_with('<') {
                let end = rest.find('<').map_or(self.src.len(), |i| start + i);
                self.pos = end;
                return Ok(Some((start, Markup::Text(&self.src[start..end]))));
            }
            if rest.starts_with("<!--") {
                let end = rest
                    .find("-->")
                    .ok_or_else(|| self.error_at(start, "unterminated comment"))?;
                self.pos = start + end + 3;
                continue;
            }
            let close = rest
                .find('>')
                .ok_or_else(|| self.error_at(start, "unterminated tag"))?;
            let inner = &rest[1..close];
            self.pos = start + close + 1;
            if inner.starts_with('?') || inner.starts_with('!') {
                continue;
            }
            if let Some(name) = inner.strip_prefix('/') {
                let name = name.trim();
                if !is_name(name) {
                    return Err(self.error_at(start, format!("bad closing tag </{name}>")));
                }
                return Ok(Some((start, Markup::Close(name))));
            }
            let (inner, self_closing) = match inner.strip_suffix('/') {
                Some(i) => (i, true),
                None => (inner, false),
            };
            let name_end = inner
                .find(|c: char| c.is_whitespace())
                .unwrap_or(inner.len());
            let name = &inner[..name_end];
            if !is_name(name) {
                return Err(self.error_at(start, format!("bad tag name {name:?}")));
            }
            let attrs = parse_attrs(&inner[name_end..]).map_err(|m| self.error_at(start, m))?;
            return Ok(Some((
                start,
                Markup::Open {
                    name,
                    attrs,
                    self_closing,
                },
            )));
        }
    }
}

fn is_name(s: &str) -> bool {
    !s.is_empty()
        && s
            .chars()
            .all(|c| c.is_alphanumeric() || matches!(c, '_' | '-' | ':' | '.'))
}

fn parse_attrs(mut s: &str) -> Result<Vec<(&str, String)>, String> {
    let mut attrs = Vec::new();
    loop {
        s = s.trim_start();
        if s.is_empty() {
            return Ok(attrs);
        }
        let eq = s.find('=').ok_or("attribute without value")?;
        let key = s[..eq].trim();
        if !is_name(key) {
            return Err(format!("bad attribute name {key:?}"));
        }
        let rest = s[eq + 1..].trim_start();
        let quote = rest.chars().next().ok_or("missing attribute value")?;
        if quote != '"' && quote != '\'' {
            return Err(format!("unquoted value for attribute {key}"));
        }
        let end = rest[1..]
            .find(quote)
            .ok_or_else(|| format!("unterminated value for attribute {key}"))?;
        attrs.push((key, decode_entities(&rest[1..1 + end])?));
        s = &rest[end + 2..];
    }
}

fn decode_entities(s: &str) -> Result<String, String> {
    if !s.contains('&') {
        return Ok(s.to_string());
    }
    let mut out = String::with_capacity(s.len());
    let mut rest = s;
    while let Some(i) = rest.find('&') {
        out.push_str(&rest[..i]);
        let semi = rest[i..]
            .find(';')
            .ok_or_else(|| "unterminated character reference".to_string())?;
        let name = &rest[i + 1..i + semi];
        let ch = match name {
            "amp" => '&',
            "lt" => '<',
            "gt" => '>',
            "quot" => '"',
            "apos" => '\'',
            _ => {
                let code = if let Some(hex) = name.strip_prefix("#x") {
                    u32::from_str_radix(hex, 16).ok()
                } else if let Some(dec) = name.strip_prefix('#') {
                    dec.parse().ok()
                } else {
                    None
                };
                code.and_then(char::from_u32)
                    .ok_or_else(|| format!("unknown character reference &{name};"))?
            }
        };
        out.push(ch);
        rest = &rest[i + semi + 1..];
    }
    out.push_str(rest);
    Ok(out)
}

fn escape_text(s: &str, out: &mut String) {
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            _ => out.push(c),
        }
    }
}

fn escape_attr(s: &str, out: &mut String) {
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '"' => out.push_str("&quot;"),
            _ => out.push(c),
        }
    }
}

fn attr<'s>(attrs: &'s [(&str, String)], key: &str) -> Option<&'s str> {
    attrs
        .iter()
        .find(|(k, _)| *k == key)
        .map(|(_, v)| v.as_str())
}

struct DocBuilder {
    id: String,
    title: String,
    abstract_text: String,
    entities: Vec<EntitySpan>,
    seen: HashSet<String>,
}

/// Parse an abstract file into documents (with no relations attached).
pub fn parse_abstract_file(raw: &str) -> Result<Vec<AnnotatedDocument>, CorpusError> {
    let mut sc = Scanner { src: raw, pos: 0 };
    let mut docs: Vec<AnnotatedDocument> = Vec::new();
    let mut doc_ids = HashSet::new();
    // Transparent container elements currently open.
    let mut containers: Vec<&str> = Vec::new();
    let mut doc: Option<(&str, DocBuilder)> = None;
    let mut section: Option<(&str, Section, usize)> = None;
    // (entity id, start char offset, tag position)
    let mut open_entity: Option<(String, usize, usize)> = None;

    while let Some((pos, item)) = sc.next()? {
        match item {
            Markup::Text(text) => {
                if let Some((_, sec, ref mut len)) = section {
                    let decoded = decode_entities(text).map_err(|m| sc.error_at(pos, m))?;
                    *len += decoded.chars().count();
                    let b = &mut doc.as_mut().expect("section implies document").1;
                    match sec {
                        Section::Title => b.title.push_str(&decoded),
                        Section::Abstract => b.abstract_text.push_str(&decoded),
                    }
                } else if !text.trim().is_empty() {
                    return Err(sc.error_at(pos, "text outside of <title> or <abstract>"));
                }
            }
            Markup::Open {
                name,
                attrs,
                self_closing,
            } => {
                if let Some((_, sec, len)) = section {
                    if name != "entity" {
                        return Err(sc.error_at(pos, format!("unexpected <{name}> inside section")));
                    }
                    if let Some((outer, _, _)) = &open_entity {
                        return Err(sc.error_at(
                            pos,
                            format!("nested entity tag inside entity {outer}"),
                        ));
                    }
                    let id = attr(&attrs, "id")
                        .ok_or_else(|| sc.error_at(pos, "entity without id"))?
                        .to_string();
                    let b = &mut doc.as_mut().expect("section implies document").1;
                    if !b.seen.insert(id.clone()) {
                        return Err(CorpusError::DuplicateEntity {
                            doc: b.id.clone(),
                            entity: id,
                        });
                    }
                    if self_closing {
                        return Err(CorpusError::EmptyEntity {
                            doc: b.id.clone(),
                            entity: id,
                        });
                    }
                    let _ = sec;
                    open_entity = Some((id, len, pos));
                } else if let Some((_, ref mut b)) = doc {
                    let sec = match name {
                        "title" => Section::Title,
                        "abstract" => Section::Abstract,
                        _ => {
                            return Err(
                                sc.error_at(pos, format!("unexpected <{name}> inside document"))
                            )
                        }
                    };
                    let current = match sec {
                        Section::Title => &b.title,
                        Section::Abstract => &b.abstract_text,
                    };
                    if !current.is_empty() {
                        return Err(sc.error_at(pos, format!("repeated <{name}> element")));
                    }
                    if !self_closing {
                        section = Some((name, sec, 0));
                    }
                } else {
                    match attr(&attrs, "id") {
                        Some(id) if name == "doc" || name == "text" => {
                            if !doc_ids.insert(id.to_string()) {
                                return Err(CorpusError::DuplicateDocument(id.to_string()));
                            }
                            let b = DocBuilder {
                                id: id.to_string(),
                                title: String::new(),
                                abstract_text: String::new(),
                                entities: Vec::new(),
                                seen: HashSet::new(),
                            };
                            if self_closing {
                                docs.push(finish(b));
                            } else {
                                doc = Some((name, b));
                            }
                        }
                        Some(_) => {
                            return Err(sc.error_at(pos, format!("unexpected <{name}> element")))
                        }
                        None if !self_closing => containers.push(name),
                        None => {}
                    }
                }
            }
            Markup::Close(name) => {
                if let Some((sec_name, sec, len)) = section {
                    if name == "entity" {
                        let (id, start, _) = open_entity
                            .take()
                            .ok_or_else(|| sc.error_at(pos, "</entity> without matching open"))?;
                        let b = &mut doc.as_mut().expect("section implies document").1;
                        if len == start {
                            return Err(CorpusError::EmptyEntity {
                                doc: b.id.clone(),
                                entity: id,
                            });
                        }
                        b.entities.push(EntitySpan {
                            id,
                            section: sec,
                            start,
                            end: len,
                            tokens: None,
                        });
                    } else if name == sec_name {
                        if let Some((id, _, at)) = &open_entity {
                            return Err(sc.error_at(*at, format!("entity {id} is never closed")));
                        }
                        section = None;
                    } else {
                        return Err(sc.error_at(pos, format!("mismatched </{name}>")));
                    }
                } else if let Some((doc_name, _)) = &doc {
                    if name != *doc_name {
                        return Err(sc.error_at(pos, format!("mismatched </{name}>")));
                    }
                    let (_, b) = doc.take().expect("checked above");
                    docs.push(finish(b));
                } else if containers.last() == Some(&name) {
                    containers.pop();
                } else {
                    return Err(sc.error_at(pos, format!("mismatched </{name}>")));
                }
            }
        }
    }
    if doc.is_some() || section.is_some() {
        return Err(sc.error_at(raw.len(), "unexpected end of input inside a document"));
    }
    if let Some(name) = containers.last() {
        return Err(sc.error_at(raw.len(), format!("unclosed <{name}>")));
    }
    Ok(docs)
}

fn finish(b: DocBuilder) -> AnnotatedDocument {
    AnnotatedDocument {
        id: b.id,
        title: b.title,
        abstract_text: b.abstract_text,
        entities: b.entities,
        relations: Vec::new(),
    }
}

fn write_section(
    out: &mut String,
    tag: &str,
    text: &str,
    section: Section,
    entities: &[EntitySpan],
) {
    let mut spans: Vec<&EntitySpan> = entities.iter().filter(|e| e.section == section).collect();
    spans.sort_by_key(|e| e.start);
    let chars: Vec<char> = text.chars().collect();
    let _ = write!(out, "<{tag}>");
    let mut cursor = 0;
    let plain = |out: &mut String, from: usize, to: usize| {
        let s: String = chars[from..to].iter().collect();
        escape_text(&s, out);
    };
    for e in spans {
        plain(out, cursor, e.start);
        out.push_str("<entity id=\"");
        escape_attr(&e.id, out);
        out.push_str("\">");
        plain(out, e.start, e.end);
        out.push_str("</entity>");
        cursor = e.end;
    }
    plain(out, cursor, chars.len());
    let _ = write!(out, "</{tag}>");
}

/// Serialize documents back to markup. Relations are not part of the
/// markup; see [`write_relation_file`].
pub fn write_abstract_file(docs: &[AnnotatedDocument]) -> String {
    let mut out = String::new();
    for d in docs {
        out.push_str("<doc id=\"");
        escape_attr(&d.id, &mut out);
        out.push_str("\">");
        write_section(&mut out, "title", &d.title, Section::Title, &d.entities);
        write_section(
            &mut out,
            "abstract",
            &d.abstract_text,
            Section::Abstract,
            &d.entities,
        );
        out.push_str("</doc>\n");
    }
    out
}

// ---------------------------------------------------------------------------
// Relation file

/// Parse `LABEL(id1,id2[,REVERSE])` lines, attach each instance to its
/// owning document and return all instances in file order.
pub fn parse_relation_file(
    raw: &str,
    docs: &mut [AnnotatedDocument],
) -> Result<Vec<RelationInstance>, CorpusError> {
    let mut owner: HashMap<&str, usize> = HashMap::new();
    for (i, d) in docs.iter().enumerate() {
        for e in &d.entities {
            owner.entry(e.id.as_str()).or_insert(i);
        }
    }
    let mut parsed = Vec::new();
    for (lineno, line) in raw.lines().enumerate() {
        let line_no = lineno + 1;
        let text = line.trim();
        if text.is_empty() || text.starts_with('#') {
            continue;
        }
        let malformed = || CorpusError::MalformedRelation {
            line: line_no,
            text: text.to_string(),
        };
        let open = text.find('(').ok_or_else(malformed)?;
        let args = text[open + 1..].strip_suffix(')').ok_or_else(malformed)?;
        let label_text = text[..open].trim();
        let label: RelationLabel =
            label_text
                .parse()
                .map_err(|_| CorpusError::UnknownLabel {
                    line: line_no,
                    label: label_text.to_string(),
                })?;
        let parts: Vec<&str> = args.split(',').map(str::trim).collect();
        let reversed = match parts.len() {
            2 => false,
            3 if parts[2].eq_ignore_ascii_case("REVERSE") => true,
            _ => return Err(malformed()),
        };
        let (arg1, arg2) = (parts[0], parts[1]);
        if arg1.is_empty() || arg2.is_empty() {
            return Err(malformed());
        }
        if arg1 == arg2 {
            return Err(CorpusError::SelfRelation {
                line: line_no,
                entity: arg1.to_string(),
            });
        }
        let find = |id: &str| {
            owner.get(id).copied().ok_or(CorpusError::UnknownEntity {
                line: line_no,
                entity: id.to_string(),
            })
        };
        let (d1, d2) = (find(arg1)?, find(arg2)?);
        if d1 != d2 {
            return Err(CorpusError::CrossDocument {
                line: line_no,
                arg1: arg1.to_string(),
                arg2: arg2.to_string(),
            });
        }
        parsed.push((
            d1,
            RelationInstance {
                doc_id: docs[d1].id.clone(),
                arg1: arg1.to_string(),
                arg2: arg2.to_string(),
                label,
                reversed,
            },
        ));
    }
    Ok(parsed
        .into_iter()
        .map(|(d, rel)| {
            docs[d].relations.push(rel.clone());
            rel
        })
        .collect())
}

/// Canonical uppercase relation lines for every document, in order.
pub fn write_relation_file(docs: &[AnnotatedDocument]) -> String {
    let mut out = String::new();
    for r in docs.iter().flat_map(|d| &d.relations) {
        let _ = write!(out, "{}({},{}", r.label.name(), r.arg1, r.arg2);
        if r.reversed {
            out.push_str(",REVERSE");
        }
        out.push_str(")\n");
    }
    out
}

/// Per-label relation counts in label order.
pub fn label_histogram<'a>(
    relations: impl IntoIterator<Item = &'a RelationInstance>,
) -> [usize; crate::label::NUM_LABELS] {
    let mut counts = [0; crate::label::NUM_LABELS];
    for r in relations {
        counts[r.label.index()] += 1;
    }
    counts
}

// ---------------------------------------------------------------------------
// Splits

/// Randomly hold out `n` documents for validation. Both halves keep the
/// input document order.
pub fn split_validation(
    docs: &[AnnotatedDocument],
    n: usize,
    seed: u64,
) -> Result<DatasetSplit, CorpusError> {
    if n > docs.len() {
        return Err(CorpusError::SplitTooLarge {
            requested: n,
            available: docs.len(),
        });
    }
    let mut order: Vec<usize> = (0..docs.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let held: HashSet<usize> = order[..n].iter().copied().collect();
    let (mut train, mut validation) = (Vec::new(), Vec::new());
    for (i, d) in docs.iter().enumerate() {
        if held.contains(&i) {
            validation.push(d.clone());
        } else {
            train.push(d.clone());
        }
    }
    Ok(DatasetSplit {
        train,
        validation,
        seed,
    })
}

impl DatasetSplit {
    /// Plain-text manifest: a `# seed` line, then `[train]` and
    /// `[validation]` sections with one document id per line.
    pub fn manifest(&self) -> String {
        let mut out = format!("# seed {}\n[train]\n", self.seed);
        for d in &self.train {
            out.push_str(&d.id);
            out.push('\n');
        }
        out.push_str("[validation]\n");
        for d in &self.validation {
            out.push_str(&d.id);
            out.push('\n');
        }
        out
    }

    /// Rebuild a split from a manifest written by [`DatasetSplit::manifest`].
    pub fn from_manifest(
        docs: &[AnnotatedDocument],
        manifest: &str,
    ) -> Result<DatasetSplit, CorpusError> {
        let by_id: HashMap<&str, &AnnotatedDocument> =
            docs.iter().map(|d| (d.id.as_str(), d)).collect();
        let mut seed = None;
        let mut target: Option<bool> = None;
        let (mut train, mut validation) = (Vec::new(), Vec::new());
        for line in manifest.lines().map(str::trim).filter(|l| !l.is_empty()) {
            if let Some(s) = line.strip_prefix("# seed") {
                seed = Some(
                    s.trim()
                        .parse()
                        .map_err(|_| CorpusError::Manifest(format!("bad seed line {line:?}")))?,
                );
            } else if line == "[train]" {
                target = Some(false);
            } else if line == "[validation]" {
                target = Some(true);
            } else {
                let doc = by_id
                    .get(line)
                    .ok_or_else(|| CorpusError::Manifest(format!("unknown document {line}")))?;
                match target {
                    Some(false) => train.push((*doc).clone()),
                    Some(true) => validation.push((*doc).clone()),
                    None => {
                        return Err(CorpusError::Manifest(
                            "document id before any section header".into(),
                        ))
                    }
                }
            }
        }
        Ok(DatasetSplit {
            train,
            validation,
            seed: seed.ok_or_else(|| CorpusError::Manifest("missing seed line".into()))?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const TABLE1: &str = r#"<doc id="X"><title>T</title><abstract><entity id="X.1">Oral communication</entity> may offer additional <entity id="X.2">indices</entity> ...</abstract></doc>"#;

    #[test]
    fn offsets_refer_to_detagged_text() {
        let docs = parse_abstract_file(TABLE1).unwrap();
        assert_eq!(docs.len(), 1);
        let d = &docs[0];
        assert_eq!(
            d.abstract_text,
            "Oral communication may offer additional indices ..."
        );
        assert_eq!(d.entities.len(), 2);
        assert_eq!((d.entities[0].start, d.entities[0].end), (0, 18));
        assert_eq!(d.surface(&d.entities[0]), "Oral communication");
        assert_eq!((d.entities[1].start, d.entities[1].end), (40, 47));
        assert_eq!(d.surface(&d.entities[1]), "indices");
    }

    #[test]
    fn empty_abstract() {
        for raw in [
            r#"<doc id="E"><title>x</title><abstract></abstract></doc>"#,
            r#"<doc id="E"><abstract/></doc>"#,
        ] {
            let docs = parse_abstract_file(raw).unwrap();
            assert_eq!(docs.len(), 1);
            assert!(docs[0].entities.is_empty());
            assert!(docs[0].relations.is_empty());
            assert_eq!(docs[0].abstract_text, "");
        }
    }

    #[test]
    fn nested_entities_rejected() {
        let raw = r#"<doc id="N"><abstract><entity id="N.1">a <entity id="N.2">b</entity></entity></abstract></doc>"#;
        match parse_abstract_file(raw) {
            Err(CorpusError::Markup { line, column, .. }) => assert_eq!((line, column), (1, 42)),
            other => panic!("expected markup error, got {other:?}"),
        }
    }

    #[test]
    fn malformed_markup_reports_position() {
        let raw = "<doc id=\"M\">\n<abstract>text <entity id=\"M.1\">x</abstract></doc>";
        match parse_abstract_file(raw) {
            Err(CorpusError::Markup { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected markup error, got {other:?}"),
        }
        assert!(matches!(
            parse_abstract_file("<doc id=\"M\"><abstract>x"),
            Err(CorpusError::Markup { .. })
        ));
    }

    #[test]
    fn duplicate_entity_rejected() {
        let raw = r#"<doc id="D"><abstract><entity id="D.1">a</entity> <entity id="D.1">b</entity></abstract></doc>"#;
        assert_eq!(
            parse_abstract_file(raw),
            Err(CorpusError::DuplicateEntity {
                doc: "D".into(),
                entity: "D.1".into()
            })
        );
    }

    #[test]
    fn text_element_layout_is_accepted() {
        let raw = "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<!DOCTYPE doc SYSTEM \"abstracts.dtd\">\n<doc>\n<text id=\"H01-1001\">\n<title><entity id=\"H01-1001.1\">Activity detection</entity> for IR</title>\n<abstract>\nA &amp; B <entity id=\"H01-1001.2\">C&lt;D</entity>\n</abstract>\n</text>\n</doc>\n";
        let docs = parse_abstract_file(raw).unwrap();
        assert_eq!(docs.len(), 1);
        let d = &docs[0];
        assert_eq!(d.id, "H01-1001");
        assert_eq!(d.entities[0].section, Section::Title);
        assert_eq!(d.surface(&d.entities[0]), "Activity detection");
        assert_eq!(d.surface(&d.entities[1]), "C<D");
        assert_eq!(d.abstract_text, "\nA & B C<D\n");
    }

    #[test]
    fn relation_lines() {
        let mut docs = parse_abstract_file(
            r#"<doc id="X"><abstract><entity id="X.1">a</entity> <entity id="X.2">b</entity> <entity id="X.3">c</entity> <entity id="X.4">d</entity></abstract></doc>"#,
        )
        .unwrap();
        let rels = parse_relation_file("USAGE(X.1,X.2)\ncompare(X.3, X.4,REVERSE)\n", &mut docs)
            .unwrap();
        assert_eq!(
            rels[0],
            RelationInstance {
                doc_id: "X".into(),
                arg1: "X.1".into(),
                arg2: "X.2".into(),
                label: RelationLabel::Usage,
                reversed: false
            }
        );
        assert_eq!(rels[1].label, RelationLabel::Compare);
        assert!(rels[1].reversed);
        assert_eq!(docs[0].relations.len(), 2);
        assert_eq!(
            write_relation_file(&docs),
            "USAGE(X.1,X.2)\nCOMPARE(X.3,X.4,REVERSE)\n"
        );

        let err = parse_relation_file("USAGE(X.1,X.2)\nSYNONYM(X.1,X.2)\n", &mut docs).unwrap_err();
        assert_eq!(
            err,
            CorpusError::UnknownLabel {
                line: 2,
                label: "SYNONYM".into()
            }
        );
        assert!(matches!(
            parse_relation_file("USAGE(X.1,Y.9)", &mut docs),
            Err(CorpusError::UnknownEntity { line: 1, .. })
        ));
        assert!(matches!(
            parse_relation_file("USAGE(X.1,X.1)", &mut docs),
            Err(CorpusError::SelfRelation { .. })
        ));
    }

    fn docs(n: usize) -> Vec<AnnotatedDocument> {
        (0..n)
            .map(|i| AnnotatedDocument {
                id: format!("D{i}"),
                title: String::new(),
                abstract_text: String::new(),
                entities: vec![],
                relations: vec![],
            })
            .collect()
    }

    #[test]
    fn degenerate_splits() {
        let ds = docs(10);
        let s = split_validation(&ds, 0, 1).unwrap();
        assert_eq!((s.train.len(), s.validation.len()), (10, 0));
        let s = split_validation(&ds, 10, 1).unwrap();
        assert_eq!((s.train.len(), s.validation.len()), (0, 10));
        assert_eq!(
            split_validation(&ds, 11, 1),
            Err(CorpusError::SplitTooLarge {
                requested: 11,
                available: 10
            })
        );
    }

    #[test]
    fn split_is_deterministic_and_seed_sensitive() {
        let ds = docs(300);
        let a = split_validation(&ds, 50, 7).unwrap();
        let b = split_validation(&ds, 50, 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.validation.len(), 50);
        let ids = |s: &DatasetSplit| s.validation.iter().map(|d| d.id.clone()).collect::<Vec<_>>();
        let c = split_validation(&ds, 50, 8).unwrap();
        assert_ne!(ids(&a), ids(&c));
        let train: HashSet<_> = a.train.iter().map(|d| &d.id).collect();
        assert!(a.validation.iter().all(|d| !train.contains(&d.id)));
    }

    #[test]
    fn manifest_roundtrip() {
        let ds = docs(12);
        let s = split_validation(&ds, 4, 99).unwrap();
        let back = DatasetSplit::from_manifest(&ds, &s.manifest()).unwrap();
        assert_eq!(back, s);
    }
}
