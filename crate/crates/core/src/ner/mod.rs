//! First pipeline stage: BIO encoding, token features and a linear-chain CRF.

mod crf;
mod features;
mod train;

pub use crf::{CrfModel, Marginals, CRF_FORMAT_VERSION};
pub use features::{extract_ner_features, NerFeatureConfig};
pub use train::{train_crf, CrfObjective, CrfTrainConfig, TrainReport};

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Document, Entity, EntityKind};
use crate::tokenizer::{Sentence, Token};

#[derive(Debug, Error)]
pub enum NerError {
    #[error("alignment error in document {doc_id}: entity {entity_id} does not align with token {token:?}")]
    Alignment {
        doc_id: String,
        entity_id: String,
        token: String,
    },
    #[error("argument error: {0}")]
    Argument(String),
    #[error("numerical error at iteration {iteration}: {msg}")]
    Numerical { iteration: usize, msg: String },
    #[error("model error: {0}")]
    Model(String),
}

/// The fixed label set, in tie-break order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum BioLabel {
    #[serde(rename = "B-ATTR")]
    BAttr,
    #[serde(rename = "I-ATTR")]
    IAttr,
    #[serde(rename = "B-VAL")]
    BVal,
    #[serde(rename = "I-VAL")]
    IVal,
    #[serde(rename = "O")]
    O,
}

pub const NUM_LABELS: usize = 5;

impl BioLabel {
    pub const ALL: [BioLabel; NUM_LABELS] = [
        BioLabel::BAttr,
        BioLabel::IAttr,
        BioLabel::BVal,
        BioLabel::IVal,
        BioLabel::O,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> BioLabel {
        BioLabel::ALL[i]
    }

    pub fn as_str(self) -> &'static str {
        match self {
            BioLabel::BAttr => "B-ATTR",
            BioLabel::IAttr => "I-ATTR",
            BioLabel::BVal => "B-VAL",
            BioLabel::IVal => "I-VAL",
            BioLabel::O => "O",
        }
    }

    pub fn kind(self) -> Option<EntityKind> {
        match self {
            BioLabel::BAttr | BioLabel::IAttr => Some(EntityKind::Attr),
            BioLabel::BVal | BioLabel::IVal => Some(EntityKind::Val),
            BioLabel::O => None,
        }
    }

    fn begin(kind: EntityKind) -> BioLabel {
        match kind {
            EntityKind::Attr => BioLabel::BAttr,
            EntityKind::Val => BioLabel::BVal,
        }
    }

    fn inside(kind: EntityKind) -> BioLabel {
        match kind {
            EntityKind::Attr => BioLabel::IAttr,
            EntityKind::Val => BioLabel::IVal,
        }
    }

    fn is_inside(self) -> bool {
        matches!(self, BioLabel::IAttr | BioLabel::IVal)
    }
}

impl fmt::Display for BioLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSequence {
    pub sentence: Sentence,
    pub labels: Vec<BioLabel>,
}

/// True when every I-X follows B-X or I-X.
pub fn is_well_formed(labels: &[BioLabel]) -> bool {
    let mut prev: Option<BioLabel> = None;
    for &l in labels {
        if l.is_inside() {
            match prev {
                Some(p) if p != BioLabel::O && p.kind() == l.kind() => {}
                _ => return false,
            }
        }
        prev = Some(l);
    }
    true
}

/// Labels the tokens of `sentence` from the gold entities of `doc`.
pub fn encode_bio(doc: &Document, sentence: &Sentence) -> Result<LabeledSequence, NerError> {
    let mut labels = vec![BioLabel::O; sentence.tokens.len()];
    for e in &doc.entities {
        if e.end <= sentence.start || e.start >= sentence.end {
            continue;
        }
        let align_err = |token: &Token| NerError::Alignment {
            doc_id: doc.id.clone(),
            entity_id: e.id.clone(),
            token: token.text.clone(),
        };
        let mut covered = Vec::new();
        for (i, t) in sentence.tokens.iter().enumerate() {
            let straddles_start = t.start < e.start && e.start < t.end;
            let straddles_end = t.start < e.end && e.end < t.end;
            if straddles_start || straddles_end {
                return Err(align_err(t));
            }
            if t.start >= e.start && t.end <= e.end {
                covered.push(i);
            }
        }
        let first = covered.first().map(|&i| &sentence.tokens[i]);
        let last = covered.last().map(|&i| &sentence.tokens[i]);
        match (first, last) {
            (Some(f), Some(l)) if f.start == e.start && l.end == e.end => {}
            _ => {
                let nearest = sentence
                    .tokens
                    .iter()
                    .find(|t| t.end > e.start)
                    .or(sentence.tokens.last())
                    .expect("sentence has tokens");
                return Err(align_err(nearest));
            }
        }
        for (k, &i) in covered.iter().enumerate() {
            labels[i] = if k == 0 {
                BioLabel::begin(e.kind)
            } else {
                BioLabel::inside(e.kind)
            };
        }
    }
    Ok(LabeledSequence {
        sentence: sentence.clone(),
        labels,
    })
}

/// Converts a label sequence back into entity spans. A stray I-X opens a new
/// entity of kind X. Entity ids are `{id_prefix}{n}`.
pub fn labels_to_entities(tokens: &[Token], labels: &[BioLabel], id_prefix: &str) -> Vec<Entity> {
    let mut out = Vec::new();
    let mut open: Option<(EntityKind, usize, usize)> = None;
    let close = |open: &mut Option<(EntityKind, usize, usize)>, out: &mut Vec<Entity>| {
        if let Some((kind, s, e)) = open.take() {
            let id = format!("{id_prefix}{}", out.len() + 1);
            out.push(Entity::new(id, kind, s, e));
        }
    };
    for (t, &l) in tokens.iter().zip(labels) {
        match l.kind() {
            None => close(&mut open, &mut out),
            Some(kind) => {
                let continues = l.is_inside() && matches!(open, Some((k, _, _)) if k == kind);
                if continues {
                    if let Some((_, _, end)) = open.as_mut() {
                        *end = t.end;
                    }
                } else {
                    close(&mut open, &mut out);
                    open = Some((kind, t.start, t.end));
                }
            }
        }
    }
    close(&mut open, &mut out);
    out
}
