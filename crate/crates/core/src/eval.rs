//! Strict span evaluation: a prediction counts only when its offsets (and
//! kind) match a gold span exactly. Matching is one-to-one.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::hash::Hash;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{char_len, Document, Entity, EntityKind};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("validation error in document {doc}: {msg}")]
    Validation { doc: String, msg: String },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Counts {
    pub fn add(&mut self, other: Counts) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
    }

    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn f_score(&self) -> f64 {
        f_score(self.precision(), self.recall())
    }

    pub fn report(&self) -> EvaluationReport {
        EvaluationReport {
            true_positives: self.tp,
            false_positives: self.fp,
            false_negatives: self.fn_,
            precision: self.precision(),
            recall: self.recall(),
            f_score: self.f_score(),
        }
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Harmonic mean of precision and recall; 0 when both are 0.
pub fn f_score(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    pub precision: f64,
    pub recall: f64,
    pub f_score: f64,
}

/// Multiset matching of predicted keys against gold keys.
fn match_keys<K: Eq + Hash>(gold: impl IntoIterator<Item = K>, pred: impl IntoIterator<Item = K>) -> Counts {
    let mut pool: HashMap<K, usize> = HashMap::new();
    let mut gold_total = 0;
    for k in gold {
        *pool.entry(k).or_default() += 1;
        gold_total += 1;
    }
    let mut c = Counts::default();
    for k in pred {
        match pool.get_mut(&k) {
            Some(n) if *n > 0 => {
                *n -= 1;
                c.tp += 1;
            }
            _ => c.fp += 1,
        }
    }
    c.fn_ = gold_total - c.tp;
    c
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct EntityCounts {
    pub attr: Counts,
    pub val: Counts,
}

impl EntityCounts {
    pub fn total(&self) -> Counts {
        let mut c = self.attr;
        c.add(self.val);
        c
    }

    pub fn add(&mut self, other: EntityCounts) {
        self.attr.add(other.attr);
        self.val.add(other.val);
    }
}

/// Entity counts per kind. Predictions must lie within the gold text.
pub fn evaluate_entities(gold: &Document, predicted: &[Entity]) -> Result<EntityCounts, EvalError> {
    let len = char_len(&gold.text);
    if let Some(e) = predicted.iter().find(|e| e.start >= e.end || e.end > len) {
        return Err(EvalError::Validation {
            doc: gold.id.clone(),
            msg: format!("predicted entity {} [{}, {}) outside text of length {len}", e.id, e.start, e.end),
        });
    }
    let of_kind = |es: &[Entity], k: EntityKind| -> Vec<(usize, usize)> {
        es.iter().filter(|e| e.kind == k).map(|e| (e.start, e.end)).collect()
    };
    Ok(EntityCounts {
        attr: match_keys(of_kind(&gold.entities, EntityKind::Attr), of_kind(predicted, EntityKind::Attr)),
        val: match_keys(of_kind(&gold.entities, EntityKind::Val), of_kind(predicted, EntityKind::Val)),
    })
}

type PairKey = ((EntityKind, usize, usize), (EntityKind, usize, usize));

fn relation_keys(doc: &Document) -> Result<Vec<PairKey>, EvalError> {
    let by_id: HashMap<&str, &Entity> = doc.entities.iter().map(|e| (e.id.as_str(), e)).collect();
    doc.relations
        .iter()
        .map(|r| {
            let get = |id: &str| {
                by_id.get(id).map(|e| e.span_key()).ok_or_else(|| EvalError::Validation {
                    doc: doc.id.clone(),
                    msg: format!("relation references unknown entity {id}"),
                })
            };
            Ok((get(&r.attr_id)?, get(&r.value_id)?))
        })
        .collect()
}

/// Relation counts: a predicted pair is correct when both of its spans match
/// the spans of one gold pair. `predicted` supplies the relations together
/// with the entities they reference.
pub fn evaluate_relations(gold: &Document, predicted: &Document) -> Result<Counts, EvalError> {
    Ok(match_keys(relation_keys(gold)?, relation_keys(predicted)?))
}

/// Aggregate NER and relation scores over a set of documents.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PipelineCounts {
    pub entities: EntityCounts,
    pub relations: Counts,
}

impl PipelineCounts {
    pub fn add_document(&mut self, gold: &Document, predicted: &Document) -> Result<(), EvalError> {
        self.entities.add(evaluate_entities(gold, &predicted.entities)?);
        self.relations.add(evaluate_relations(gold, predicted)?);
        Ok(())
    }

    pub fn report(&self, relation_mode: &str) -> PipelineReport {
        PipelineReport {
            ner: self.entities.total().report(),
            attr: self.entities.attr.report(),
            val: self.entities.val.report(),
            relations: self.relations.report(),
            relation_mode: relation_mode.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub ner: EvaluationReport,
    pub attr: EvaluationReport,
    pub val: EvaluationReport,
    pub relations: EvaluationReport,
    pub relation_mode: String,
}

impl PipelineReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialization is infallible")
    }

    /// Recall / Precision / F-score rows with one column per stage.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<14}{:>10}{:>10}{:>10}{:>12}", "Metric", "CRF", "ATTR", "VAL", "SVM");
        type Metric = fn(&EvaluationReport) -> f64;
        let rows: [(&str, Metric); 3] = [
            ("Recall", |r| r.recall),
            ("Precision", |r| r.precision),
            ("F-score", |r| r.f_score),
        ];
        for (name, get) in rows {
            let _ = writeln!(
                out,
                "{:<14}{:>10.4}{:>10.4}{:>10.4}{:>12.4}",
                name,
                get(&self.ner),
                get(&self.attr),
                get(&self.val),
                get(&self.relations)
            );
        }
        let _ = writeln!(
            out,
            "{:<14}{:>10}{:>10}{:>10}{:>12}",
            "TP/FP/FN",
            counts(&self.ner),
            counts(&self.attr),
            counts(&self.val),
            counts(&self.relations)
        );
        let _ = writeln!(out, "relation scoring: {}", self.relation_mode);
        out
    }
}

fn counts(r: &EvaluationReport) -> String {
    format!("{}/{}/{}", r.true_positives, r.false_positives, r.false_negatives)
}
