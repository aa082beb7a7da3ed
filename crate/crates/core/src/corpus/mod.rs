//! Document/annotation data model and the JSONL standoff corpus format.
//!
//! Offsets are Unicode code-point indices into `Document::text`, half-open
//! `[start, end)`.

mod synth;

pub use synth::{generate_synthetic, GeneratorConfig};

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("format error: {0}")]
    Format(String),
    #[error("validation error in document {doc}: {msg}")]
    Validation { doc: String, msg: String },
    #[error("argument error: {0}")]
    Argument(String),
    #[error("line {line}: {source}")]
    Line {
        line: usize,
        #[source]
        source: Box<CorpusError>,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EntityKind {
    #[serde(rename = "ATTR")]
    Attr,
    #[serde(rename = "VAL")]
    Val,
}

impl EntityKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EntityKind::Attr => "ATTR",
            EntityKind::Val => "VAL",
        }
    }
}

impl fmt::Display for EntityKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Entity {
    pub id: String,
    pub kind: EntityKind,
    pub start: usize,
    pub end: usize,
}

impl Entity {
    pub fn new(id: impl Into<String>, kind: EntityKind, start: usize, end: usize) -> Self {
        Entity {
            id: id.into(),
            kind,
            start,
            end,
        }
    }

    /// (kind, start, end): the identity used by strict matching.
    pub fn span_key(&self) -> (EntityKind, usize, usize) {
        (self.kind, self.start, self.end)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Relation {
    #[serde(rename = "attr")]
    pub attr_id: String,
    #[serde(rename = "value")]
    pub value_id: String,
}

impl Relation {
    pub fn new(attr_id: impl Into<String>, value_id: impl Into<String>) -> Self {
        Relation {
            attr_id: attr_id.into(),
            value_id: value_id.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Document {
    pub id: String,
    pub text: String,
    pub entities: Vec<Entity>,
    pub relations: Vec<Relation>,
}

impl Document {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        Document {
            id: id.into(),
            text: text.into(),
            entities: Vec::new(),
            relations: Vec::new(),
        }
    }

    pub fn entity(&self, id: &str) -> Option<&Entity> {
        self.entities.iter().find(|e| e.id == id)
    }

    /// Covered substring of an entity (code-point slicing).
    pub fn surface(&self, entity: &Entity) -> String {
        char_slice(&self.text, entity.start, entity.end)
    }

    /// Checks every entity and relation invariant.
    pub fn validate(&self) -> Result<(), CorpusError> {
        let fail = |msg: String| CorpusError::Validation {
            doc: self.id.clone(),
            msg,
        };
        let chars: Vec<char> = self.text.chars().collect();
        let mut ids = HashSet::new();
        for e in &self.entities {
            if !ids.insert(e.id.as_str()) {
                return Err(fail(format!("duplicate entity id {}", e.id)));
            }
            if e.start >= e.end || e.end > chars.len() {
                return Err(fail(format!(
                    "entity {} has out-of-range span [{}, {}) for text of length {}",
                    e.id,
                    e.start,
                    e.end,
                    chars.len()
                )));
            }
            if chars[e.start..e.end].iter().any(|&c| c == '\n' || c == '\r') {
                return Err(fail(format!("entity {} spans a newline", e.id)));
            }
        }
        let mut sorted: Vec<&Entity> = self.entities.iter().collect();
        sorted.sort_by_key(|e| (e.start, e.end));
        for pair in sorted.windows(2) {
            if pair[1].start < pair[0].end {
                return Err(fail(format!(
                    "entity {} overlaps entity {}",
                    pair[1].id, pair[0].id
                )));
            }
        }

        let by_id: HashMap<&str, &Entity> =
            self.entities.iter().map(|e| (e.id.as_str(), e)).collect();
        let mut pairs = HashSet::new();
        let mut values = HashSet::new();
        for r in &self.relations {
            let attr = by_id
                .get(r.attr_id.as_str())
                .ok_or_else(|| fail(format!("relation references unknown id {}", r.attr_id)))?;
            let value = by_id
                .get(r.value_id.as_str())
                .ok_or_else(|| fail(format!("relation references unknown id {}", r.value_id)))?;
            if attr.kind != EntityKind::Attr {
                return Err(fail(format!("relation attr {} is not an ATTR entity", attr.id)));
            }
            if value.kind != EntityKind::Val {
                return Err(fail(format!("relation value {} is not a VAL entity", value.id)));
            }
            if !pairs.insert((r.attr_id.as_str(), r.value_id.as_str())) {
                return Err(fail(format!(
                    "duplicate relation ({}, {})",
                    r.attr_id, r.value_id
                )));
            }
            if !values.insert(r.value_id.as_str()) {
                return Err(fail(format!(
                    "value {} participates in more than one relation",
                    r.value_id
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Corpus {
    pub documents: Vec<Document>,
}

impl Corpus {
    pub fn new(documents: Vec<Document>) -> Result<Self, CorpusError> {
        let mut seen = HashSet::new();
        for d in &documents {
            if !seen.insert(d.id.as_str()) {
                return Err(CorpusError::Validation {
                    doc: d.id.clone(),
                    msg: "duplicate document id".into(),
                });
            }
        }
        Ok(Corpus { documents })
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn read<R: BufRead>(reader: R, strict: bool) -> Result<Self, CorpusError> {
        let mut docs = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let doc = parse_document_with(&line, strict).map_err(|e| CorpusError::Line {
                line: i + 1,
                source: Box::new(e),
            })?;
            docs.push(doc);
        }
        Corpus::new(docs)
    }

    pub fn write<W: Write>(&self, mut writer: W) -> Result<(), CorpusError> {
        for d in &self.documents {
            writeln!(writer, "{}", write_document(d))?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for d in &self.documents {
            out.push_str(&write_document(d));
            out.push('\n');
        }
        out
    }
}

/// Parses one strict-mode JSONL line.
pub fn parse_document(line: &str) -> Result<Document, CorpusError> {
    parse_document_with(line, true)
}

/// Parses one JSONL line; with `strict == false` unknown fields are dropped.
pub fn parse_document_with(line: &str, strict: bool) -> Result<Document, CorpusError> {
    let doc: Document = if strict {
        serde_json::from_str(line).map_err(|e| CorpusError::Format(e.to_string()))?
    } else {
        let mut value: serde_json::Value =
            serde_json::from_str(line).map_err(|e| CorpusError::Format(e.to_string()))?;
        strip_unknown(&mut value);
        serde_json::from_value(value).map_err(|e| CorpusError::Format(e.to_string()))?
    };
    doc.validate()?;
    Ok(doc)
}

fn strip_unknown(value: &mut serde_json::Value) {
    fn retain(v: &mut serde_json::Value, keys: &[&str]) {
        if let Some(obj) = v.as_object_mut() {
            obj.retain(|k, _| keys.contains(&k.as_str()));
        }
    }
    retain(value, &["id", "text", "entities", "relations"]);
    if let Some(obj) = value.as_object_mut() {
        if let Some(serde_json::Value::Array(es)) = obj.get_mut("entities") {
            es.iter_mut()
                .for_each(|e| retain(e, &["id", "kind", "start", "end"]));
        }
        if let Some(serde_json::Value::Array(rs)) = obj.get_mut("relations") {
            rs.iter_mut().for_each(|r| retain(r, &["attr", "value"]));
        }
    }
}

pub fn write_document(doc: &Document) -> String {
    serde_json::to_string(doc).expect("document serialization is infallible")
}

/// Seeded shuffle followed by a cut at `train_count`.
pub fn split_corpus(
    corpus: &Corpus,
    train_count: usize,
    seed: u64,
) -> Result<(Corpus, Corpus), CorpusError> {
    if train_count > corpus.len() {
        return Err(CorpusError::Argument(format!(
            "train_count {} exceeds corpus size {}",
            train_count,
            corpus.len()
        )));
    }
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let pick = |idx: &[usize]| Corpus {
        documents: idx.iter().map(|&i| corpus.documents[i].clone()).collect(),
    };
    Ok((pick(&order[..train_count]), pick(&order[train_count..])))
}

pub fn char_len(text: &str) -> usize {
    text.chars().count()
}

/// Code-point slice `[start, end)`; out-of-range bounds are clamped.
pub fn char_slice(text: &str, start: usize, end: usize) -> String {
    text.chars()
        .skip(start)
        .take(end.saturating_sub(start))
        .collect()
}
