//! Two-stage training and extraction over a model bundle directory.

use std::fs;
use std::path::Path;
use std::thread;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::{Corpus, CorpusError, Document, Entity, GeneratorConfig};
use crate::ner::{
    encode_bio, labels_to_entities, train_crf, CrfModel, CrfTrainConfig, NerError,
    CRF_FORMAT_VERSION,
};
use crate::relation::{
    associate, binary_features, extract_rel_features, generate_candidates, rebalance,
    token_distance, train_svm, AnnotatedSentence, FeatureSet, FeatureSetKind, RelFeatureConfig,
    RelationCandidate, RelationError, ScoredCandidate, SvmConfig, SvmModel, SVM_FORMAT_VERSION,
};
use crate::shallow::{
    chunk, tag_corpus_with_rules, train_pos, PosConfig, PosModel, ShallowError,
    POS_FORMAT_VERSION,
};
use crate::tokenizer::{self, Sentence};

pub const MANIFEST_FORMAT_VERSION: u32 = 1;

pub const CRF_FILE: &str = "crf.json";
pub const POS_FILE: &str = "pos.json";
pub const SVM_FILE: &str = "svm.json";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("argument error: {0}")]
    Argument(String),
    #[error("model error: {0}")]
    Model(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Ner(#[from] NerError),
    #[error(transparent)]
    Shallow(#[from] ShallowError),
    #[error(transparent)]
    Relation(#[from] RelationError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

impl PipelineError {
    /// True for errors caused by an unusable model bundle.
    pub fn is_model_error(&self) -> bool {
        matches!(
            self,
            PipelineError::Model(_)
                | PipelineError::Ner(NerError::Model(_))
                | PipelineError::Shallow(ShallowError::Model(_))
                | PipelineError::Relation(RelationError::Model(_))
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RelationConfig {
    pub c: f64,
    /// (positive, negative) multipliers on `c`
    pub class_weights: (f64, f64),
    /// Negatives kept per positive when rebalancing the training candidates.
    pub max_neg_ratio: f64,
    pub feature_set: FeatureSetKind,
    pub direction: bool,
    pub tol: f64,
    pub max_iter: usize,
    pub seed: u64,
}

impl Default for RelationConfig {
    fn default() -> Self {
        let svm = SvmConfig::default();
        let feats = RelFeatureConfig::default();
        RelationConfig {
            c: svm.c,
            class_weights: svm.class_weights,
            max_neg_ratio: 3.0,
            feature_set: feats.feature_set,
            direction: feats.direction,
            tol: svm.tol,
            max_iter: svm.max_iter,
            seed: svm.seed,
        }
    }
}

impl RelationConfig {
    pub fn svm(&self) -> SvmConfig {
        SvmConfig {
            c: self.c,
            class_weights: self.class_weights,
            tol: self.tol,
            max_iter: self.max_iter,
            seed: self.seed,
        }
    }

    pub fn features(&self) -> RelFeatureConfig {
        RelFeatureConfig {
            feature_set: self.feature_set,
            direction: self.direction,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub crf: CrfTrainConfig,
    pub pos: PosConfig,
    pub relation: RelationConfig,
    pub generator: GeneratorConfig,
}

impl PipelineConfig {
    pub fn from_toml(s: &str) -> Result<Self, PipelineError> {
        let cfg: PipelineConfig =
            toml::from_str(s).map_err(|e| PipelineError::Argument(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialization is infallible")
    }

    /// Overrides every stage seed.
    pub fn set_seed(&mut self, seed: u64) {
        self.crf.seed = seed;
        self.pos.seed = seed;
        self.relation.seed = seed;
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let positive = |name: &str, x: f64| {
            if x > 0.0 && x.is_finite() {
                Ok(())
            } else {
                Err(PipelineError::Argument(format!("{name} must be positive, got {x}")))
            }
        };
        if !(self.crf.lambda >= 0.0 && self.crf.lambda.is_finite()) {
            return Err(PipelineError::Argument(format!(
                "crf.lambda must be non-negative, got {}",
                self.crf.lambda
            )));
        }
        positive("crf.grad_tol", self.crf.grad_tol)?;
        positive("relation.c", self.relation.c)?;
        positive("relation.class_weights[0]", self.relation.class_weights.0)?;
        positive("relation.class_weights[1]", self.relation.class_weights.1)?;
        positive("relation.max_neg_ratio", self.relation.max_neg_ratio)?;
        positive("relation.tol", self.relation.tol)?;
        if self.crf.max_iter == 0 || self.relation.max_iter == 0 {
            return Err(PipelineError::Argument("max_iter must be at least 1".into()));
        }
        let g = &self.generator;
        if g.min_sentences == 0 || g.min_sentences > g.max_sentences {
            return Err(PipelineError::Argument(
                "generator sentence bounds must satisfy 1 <= min <= max".into(),
            ));
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical TOML rendering.
    pub fn hash(&self) -> String {
        Sha256::digest(self.to_toml().as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format_version: u32,
    pub crf_format_version: u32,
    pub pos_format_version: u32,
    pub svm_format_version: u32,
    pub feature_set: FeatureSetKind,
    pub config_hash: String,
    pub config: PipelineConfig,
    pub training_documents: usize,
    pub crf_converged: bool,
    pub crf_iterations: usize,
    pub svm_converged: bool,
    pub svm_epochs: usize,
    pub warnings: Vec<String>,
}

/// The three stage models plus provenance.
#[derive(Debug, Clone)]
pub struct Bundle {
    pub crf: CrfModel,
    pub pos: PosModel,
    pub svm: SvmModel,
    pub manifest: Manifest,
}

/// Where the relation stage takes its entities from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EntitySource {
    Gold,
    Predicted,
}

fn annotate<'a>(pos: &PosModel, sentence: &'a Sentence) -> Result<AnnotatedSentence<'a>, ShallowError> {
    let tags = pos.tag(&sentence.words())?;
    let chunks = chunk(&tags);
    Ok(AnnotatedSentence {
        sentence,
        pos: tags,
        chunks,
    })
}

fn entities_in(doc: &Document, s: &Sentence) -> Vec<Entity> {
    doc.entities
        .iter()
        .filter(|e| s.start <= e.start && e.end <= s.end)
        .cloned()
        .collect()
}

/// Candidates of `doc` with their feature vectors.
fn featurize(
    doc: &Document,
    sentences: &[Sentence],
    pos: &PosModel,
    cfg: &RelFeatureConfig,
    labeled: bool,
) -> Result<Vec<(RelationCandidate, FeatureSet)>, PipelineError> {
    let cands = generate_candidates(doc, sentences, labeled)?;
    let mut annotated: Vec<Option<(AnnotatedSentence<'_>, Vec<Entity>)>> =
        (0..sentences.len()).map(|_| None).collect();
    let mut out = Vec::with_capacity(cands.len());
    for c in cands {
        let slot = &mut annotated[c.sentence_index];
        if slot.is_none() {
            let s = &sentences[c.sentence_index];
            *slot = Some((annotate(pos, s)?, entities_in(doc, s)));
        }
        let (ann, ents) = slot.as_ref().expect("filled above");
        let feats = binary_features(extract_rel_features(&c, ann, ents, cfg));
        out.push((c, feats));
    }
    Ok(out)
}

/// Trains CRF, POS tagger and SVM, in that order.
pub fn train(corpus: &Corpus, config: &PipelineConfig) -> Result<Bundle, PipelineError> {
    config.validate()?;
    if corpus.is_empty() {
        return Err(PipelineError::Argument("cannot train on an empty corpus".into()));
    }
    for d in &corpus.documents {
        d.validate()?;
    }
    let mut warnings = Vec::new();
    let sentences: Vec<Vec<Sentence>> = corpus
        .documents
        .iter()
        .map(|d| tokenizer::sentences(&d.id, &d.text))
        .collect();

    let mut sequences = Vec::new();
    for (d, sents) in corpus.documents.iter().zip(&sentences) {
        for s in sents {
            sequences.push(encode_bio(d, s)?);
        }
    }
    let (crf, crf_report) = train_crf(&sequences, &config.crf)?;
    if !crf_report.converged {
        warnings.push(format!(
            "CRF did not converge in {} iterations (gradient norm {:.3e})",
            crf_report.iterations, crf_report.grad_inf_norm
        ));
    }

    let pos = train_pos(&tag_corpus_with_rules(corpus), &config.pos)?;

    let rel_features = config.relation.features();
    let mut samples: Vec<(FeatureSet, bool)> = Vec::new();
    for (d, sents) in corpus.documents.iter().zip(&sentences) {
        for (c, f) in featurize(d, sents, &pos, &rel_features, true)? {
            samples.push((f, c.label.unwrap_or(false)));
        }
    }
    let balanced = rebalance(&samples, config.relation.max_neg_ratio, config.relation.seed)?;
    if let Some(w) = balanced.warning {
        warnings.push(w);
    }
    let svm = train_svm(&balanced.items, &config.relation.svm())?;
    if !svm.converged {
        warnings.push(format!(
            "SVM did not converge in {} epochs (duality gap {:.3e})",
            svm.epochs, svm.duality_gap
        ));
    }

    let manifest = Manifest {
        format_version: MANIFEST_FORMAT_VERSION,
        crf_format_version: CRF_FORMAT_VERSION,
        pos_format_version: POS_FORMAT_VERSION,
        svm_format_version: SVM_FORMAT_VERSION,
        feature_set: config.relation.feature_set,
        config_hash: config.hash(),
        config: config.clone(),
        training_documents: corpus.len(),
        crf_converged: crf_report.converged,
        crf_iterations: crf_report.iterations,
        svm_converged: svm.converged,
        svm_epochs: svm.epochs,
        warnings,
    };
    Ok(Bundle {
        crf,
        pos,
        svm,
        manifest,
    })
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.display().to_string(),
        source,
    }
}

impl Bundle {
    pub fn save(&self, dir: &Path) -> Result<(), PipelineError> {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let manifest = serde_json::to_string_pretty(&self.manifest).expect("manifest serialization is infallible");
        for (name, body) in [
            (CRF_FILE, self.crf.to_json()),
            (POS_FILE, self.pos.to_json()),
            (SVM_FILE, self.svm.to_json()),
            (MANIFEST_FILE, manifest),
        ] {
            let path = dir.join(name);
            fs::write(&path, body + "\n").map_err(io_err(&path))?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Bundle, PipelineError> {
        let read = |name: &str| {
            let path = dir.join(name);
            fs::read_to_string(&path).map_err(|e| PipelineError::Model(format!("{}: {e}", path.display())))
        };
        let manifest: Manifest = serde_json::from_str(&read(MANIFEST_FILE)?)
            .map_err(|e| PipelineError::Model(format!("{MANIFEST_FILE}: {e}")))?;
        let expected = [
            ("manifest", manifest.format_version, MANIFEST_FORMAT_VERSION),
            ("CRF", manifest.crf_format_version, CRF_FORMAT_VERSION),
            ("POS", manifest.pos_format_version, POS_FORMAT_VERSION),
            ("SVM", manifest.svm_format_version, SVM_FORMAT_VERSION),
        ];
        for (what, got, want) in expected {
            if got != want {
                return Err(PipelineError::Model(format!(
                    "{what} format version {got} is not supported (expected {want})"
                )));
            }
        }
        if manifest.config.hash() != manifest.config_hash {
            return Err(PipelineError::Model("manifest config hash does not match its config".into()));
        }
        Ok(Bundle {
            crf: CrfModel::from_json(&read(CRF_FILE)?)?,
            pos: PosModel::from_json(&read(POS_FILE)?)?,
            svm: SvmModel::from_json(&read(SVM_FILE)?)?,
            manifest,
        })
    }

    /// Entities (gold or CRF-predicted) and associated relations for one document.
    pub fn extract(&self, doc: &Document, source: EntitySource) -> Result<Document, PipelineError> {
        let sentences = tokenizer::sentences(&doc.id, &doc.text);
        let mut out = Document::new(doc.id.clone(), doc.text.clone());
        out.entities = match source {
            EntitySource::Gold => doc.entities.clone(),
            EntitySource::Predicted => {
                let mut ents = Vec::new();
                for s in &sentences {
                    let labels = self.crf.decode(&s.tokens)?;
                    ents.extend(labels_to_entities(&s.tokens, &labels, "T"));
                }
                for (i, e) in ents.iter_mut().enumerate() {
                    e.id = format!("T{}", i + 1);
                }
                ents
            }
        };
        let feats = self.manifest.config.relation.features();
        let mut scored = Vec::new();
        for (c, f) in featurize(&out, &sentences, &self.pos, &feats, false)? {
            let (score, decision) = self.svm.classify(&f);
            let token_distance = token_distance(&sentences[c.sentence_index], &c.attr, &c.value);
            scored.push(ScoredCandidate {
                candidate: c,
                score,
                decision,
                token_distance,
            });
        }
        out.relations = associate(&scored);
        Ok(out)
    }

    /// `extract` over a corpus, spread across threads; output keeps input order.
    pub fn extract_corpus(&self, corpus: &Corpus, source: EntitySource) -> Result<Corpus, PipelineError> {
        let docs = &corpus.documents;
        let workers = thread::available_parallelism().map_or(1, |n| n.get()).min(docs.len().max(1));
        let per = docs.len().div_ceil(workers).max(1);
        let results: Vec<Result<Vec<Document>, PipelineError>> = thread::scope(|scope| {
            let handles: Vec<_> = docs
                .chunks(per)
                .map(|part| scope.spawn(move || part.iter().map(|d| self.extract(d, source)).collect()))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("extraction worker panicked"))
                .collect()
        });
        let mut out = Vec::with_capacity(docs.len());
        for r in results {
            out.extend(r?);
        }
        Ok(Corpus { documents: out })
    }
}
