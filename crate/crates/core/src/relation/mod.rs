//! Second pipeline stage: attribute/value pairing.

mod svm;

pub use svm::{
    binary_features, train_svm, train_svm_with_objectives, FeatureSet, SvmConfig, SvmModel,
    SvmObjectives, SVM_FORMAT_VERSION,
};

use std::collections::{BTreeSet, HashMap, HashSet};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Document, Entity, EntityKind, Relation};
use crate::shallow::ChunkTag;
use crate::tokenizer::Sentence;

#[derive(Debug, Error)]
pub enum RelationError {
    #[error("alignment error in document {doc_id}: entity {entity_id} is not inside any sentence")]
    Alignment { doc_id: String, entity_id: String },
    #[error("argument error: {0}")]
    Argument(String),
    #[error("model error: {0}")]
    Model(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RelationCandidate {
    pub attr: Entity,
    pub value: Entity,
    pub sentence_index: usize,
    pub label: Option<bool>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureSetKind {
    /// POS, punctuation and chunk families only.
    Run1,
    /// All families: adds attribute presence, distance and direction.
    Run2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RelFeatureConfig {
    pub feature_set: FeatureSetKind,
    /// Emit `dir=` (Run2 only).
    pub direction: bool,
}

impl Default for RelFeatureConfig {
    fn default() -> Self {
        RelFeatureConfig {
            feature_set: FeatureSetKind::Run2,
            direction: true,
        }
    }
}

/// A tokenized sentence with its shallow annotations.
#[derive(Debug, Clone)]
pub struct AnnotatedSentence<'a> {
    pub sentence: &'a Sentence,
    pub pos: Vec<&'static str>,
    pub chunks: Vec<ChunkTag>,
}

fn sentence_of(sentences: &[Sentence], e: &Entity) -> Option<usize> {
    sentences
        .iter()
        .position(|s| s.start <= e.start && e.end <= s.end)
}

/// Every ATTR × VAL pair within a sentence, ordered by sentence, then
/// attribute start, then value start. With `labeled`, a pair is positive iff
/// it is a relation of `doc`.
pub fn generate_candidates(
    doc: &Document,
    sentences: &[Sentence],
    labeled: bool,
) -> Result<Vec<RelationCandidate>, RelationError> {
    let mut per_sentence: Vec<(Vec<&Entity>, Vec<&Entity>)> = vec![(vec![], vec![]); sentences.len()];
    for e in &doc.entities {
        let s = sentence_of(sentences, e).ok_or_else(|| RelationError::Alignment {
            doc_id: doc.id.clone(),
            entity_id: e.id.clone(),
        })?;
        match e.kind {
            EntityKind::Attr => per_sentence[s].0.push(e),
            EntityKind::Val => per_sentence[s].1.push(e),
        }
    }
    let gold: HashSet<(&str, &str)> = doc
        .relations
        .iter()
        .map(|r| (r.attr_id.as_str(), r.value_id.as_str()))
        .collect();
    let mut out = Vec::new();
    for (si, (attrs, vals)) in per_sentence.iter_mut().enumerate() {
        attrs.sort_by_key(|e| e.start);
        vals.sort_by_key(|e| e.start);
        for a in attrs.iter() {
            for v in vals.iter() {
                out.push(RelationCandidate {
                    attr: (*a).clone(),
                    value: (*v).clone(),
                    sentence_index: si,
                    label: labeled.then(|| gold.contains(&(a.id.as_str(), v.id.as_str()))),
                });
            }
        }
    }
    Ok(out)
}

/// Token index range `[first, last]` covered by an entity.
fn token_span(sentence: &Sentence, e: &Entity) -> Option<(usize, usize)> {
    let mut first = None;
    let mut last = None;
    for (i, t) in sentence.tokens.iter().enumerate() {
        if t.start >= e.start && t.end <= e.end {
            first.get_or_insert(i);
            last = Some(i);
        }
    }
    Some((first?, last?))
}

/// Number of tokens strictly between the two entities' spans.
pub fn token_distance(sentence: &Sentence, a: &Entity, b: &Entity) -> usize {
    match (token_span(sentence, a), token_span(sentence, b)) {
        (Some((a0, a1)), Some((b0, b1))) => {
            if a1 < b0 {
                b0 - a1 - 1
            } else if b1 < a0 {
                a0 - b1 - 1
            } else {
                0
            }
        }
        _ => 0,
    }
}

fn is_punct(token: &str) -> bool {
    token.chars().all(|c| !c.is_alphanumeric())
}

fn count_bucket(n: usize) -> &'static str {
    match n {
        0 => "0",
        1 => "1",
        2 => "2",
        _ => "3+",
    }
}

fn distance_bucket(n: usize) -> &'static str {
    match n {
        0 => "0",
        1 => "1",
        2 => "2",
        3..=5 => "3-5",
        6..=10 => "6-10",
        _ => "11+",
    }
}

const MAX_CHUNK_PATH: usize = 6;

/// Feature strings for one candidate pair.
pub fn extract_rel_features(
    cand: &RelationCandidate,
    ann: &AnnotatedSentence<'_>,
    sentence_entities: &[Entity],
    config: &RelFeatureConfig,
) -> BTreeSet<String> {
    let sent = ann.sentence;
    let mut f = BTreeSet::new();
    let (Some((a0, a1)), Some((v0, v1))) = (token_span(sent, &cand.attr), token_span(sent, &cand.value))
    else {
        return f;
    };
    let attr_first = a1 < v0;
    let (lo, hi) = if attr_first { (a1 + 1, v0) } else { (v1 + 1, a0) };
    let between = if lo <= hi { lo..hi } else { 0..0 };

    // part of speech
    for i in between.clone() {
        f.insert(format!("bpos={}", ann.pos[i]));
    }
    f.insert(format!("apos={}", ann.pos[a1]));
    f.insert(format!("vpos={}", ann.pos[v1]));

    // punctuation
    let puncts: Vec<&str> = between
        .clone()
        .map(|i| sent.tokens[i].text.as_str())
        .filter(|t| is_punct(t))
        .collect();
    for p in &puncts {
        f.insert(format!("punct={p}"));
    }
    f.insert(format!("npunct={}", count_bucket(puncts.len())));

    // chunks
    let chunk_ids: Vec<Option<usize>> = {
        let mut id = None;
        let mut next = 0;
        ann.chunks
            .iter()
            .map(|c| match c {
                ChunkTag::BNp | ChunkTag::BVp => {
                    id = Some(next);
                    next += 1;
                    id
                }
                ChunkTag::INp | ChunkTag::IVp => id,
                ChunkTag::O => {
                    id = None;
                    None
                }
            })
            .collect()
    };
    let shared = chunk_ids[a0];
    let same = shared.is_some()
        && (a0..=a1).chain(v0..=v1).all(|i| chunk_ids[i] == shared);
    f.insert(format!("samechunk={same}"));
    let path: Vec<&str> = between
        .clone()
        .take(MAX_CHUNK_PATH)
        .map(|i| ann.chunks[i].as_str())
        .collect();
    f.insert(format!("bchunk={}", path.join("_")));

    if config.feature_set == FeatureSetKind::Run2 {
        let (span_lo, span_hi) = if attr_first {
            (cand.attr.end, cand.value.start)
        } else {
            (cand.value.end, cand.attr.start)
        };
        let intervening = sentence_entities.iter().any(|e| {
            e.kind == EntityKind::Attr && e.id != cand.attr.id && e.start >= span_lo && e.end <= span_hi
        });
        f.insert(format!("attr_between={intervening}"));
        let dist = between.len();
        f.insert(format!("dist={dist}"));
        f.insert(format!("distb={}", distance_bucket(dist)));
        if config.direction {
            f.insert(
                if attr_first {
                    "dir=attr-before-value"
                } else {
                    "dir=value-before-attr"
                }
                .to_string(),
            );
        }
    }
    f
}

/// Result of negative undersampling.
#[derive(Debug, Clone, PartialEq)]
pub struct Rebalanced<T> {
    pub items: Vec<(T, bool)>,
    /// Set when there are no positives; all negatives are kept.
    pub warning: Option<String>,
}

/// Keeps every positive and a seeded uniform subsample of at most
/// `floor(max_neg_ratio * positives)` negatives, preserving input order.
pub fn rebalance<T: Clone>(
    items: &[(T, bool)],
    max_neg_ratio: f64,
    seed: u64,
) -> Result<Rebalanced<T>, RelationError> {
    if max_neg_ratio.is_nan() || max_neg_ratio <= 0.0 {
        return Err(RelationError::Argument(format!(
            "max_neg_ratio must be positive, got {max_neg_ratio}"
        )));
    }
    let pos = items.iter().filter(|(_, y)| *y).count();
    let neg_idx: Vec<usize> = (0..items.len()).filter(|&i| !items[i].1).collect();
    if pos == 0 {
        return Ok(Rebalanced {
            items: items.to_vec(),
            warning: Some("no positive samples; negatives left as is".into()),
        });
    }
    let cap = (max_neg_ratio * pos as f64).floor() as usize;
    if neg_idx.len() <= cap {
        return Ok(Rebalanced {
            items: items.to_vec(),
            warning: None,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let keep: HashSet<usize> = rand::seq::index::sample(&mut rng, neg_idx.len(), cap)
        .into_iter()
        .map(|k| neg_idx[k])
        .collect();
    Ok(Rebalanced {
        items: items
            .iter()
            .enumerate()
            .filter(|(i, (_, y))| *y || keep.contains(i))
            .map(|(_, it)| it.clone())
            .collect(),
        warning: None,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredCandidate {
    pub candidate: RelationCandidate,
    pub score: f64,
    pub decision: bool,
    pub token_distance: usize,
}

/// Picks, for each value, its best positively-decided attribute: highest
/// score, then smallest token distance, then the earlier attribute.
pub fn associate(scored: &[ScoredCandidate]) -> Vec<Relation> {
    let mut best: HashMap<&str, &ScoredCandidate> = HashMap::new();
    for s in scored.iter().filter(|s| s.decision) {
        let slot = best.entry(s.candidate.value.id.as_str()).or_insert(s);
        let better = s.score > slot.score
            || (s.score == slot.score
                && (s.token_distance < slot.token_distance
                    || (s.token_distance == slot.token_distance
                        && s.candidate.attr.start < slot.candidate.attr.start)));
        if better {
            *slot = s;
        }
    }
    let mut winners: Vec<&ScoredCandidate> = best.into_values().collect();
    winners.sort_by_key(|s| (s.candidate.value.start, s.candidate.attr.start));
    winners
        .into_iter()
        .map(|s| Relation::new(s.candidate.attr.id.clone(), s.candidate.value.id.clone()))
        .collect()
}
