//! Linear-chain CRF: parameters, exact inference and (de)serialization.
//!
//! Weight layout: emission weight of (feature `f`, label `y`) lives at
//! `f * NUM_LABELS + y`; the transition block of `NUM_LABELS²` entries
//! (row = previous label) follows the emissions.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::features::extract_ner_features;
use super::train::CrfTrainConfig;
use super::{BioLabel, NerError, NUM_LABELS};
use crate::tokenizer::Token;

pub const CRF_FORMAT_VERSION: u32 = 1;

const L: usize = NUM_LABELS;

#[derive(Debug, Clone, PartialEq)]
pub struct CrfModel {
    features: Vec<String>,
    index: HashMap<String, usize>,
    weights: Vec<f64>,
    pub config: CrfTrainConfig,
    pub converged: bool,
    pub iterations: usize,
}

/// Forward–backward output.
#[derive(Debug, Clone)]
pub struct Marginals {
    pub log_z: f64,
    /// `node[i][y]` = P(y_i = y | x)
    pub node: Vec<[f64; L]>,
    /// `edge[i][a][b]` = P(y_i = a, y_{i+1} = b | x)
    pub edge: Vec<[[f64; L]; L]>,
}

pub(crate) fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

impl CrfModel {
    /// Builds a model from a feature list and a full weight vector
    /// (emissions followed by transitions). Features are sorted together with
    /// their weight rows.
    pub fn from_parts(
        features: Vec<String>,
        weights: Vec<f64>,
        config: CrfTrainConfig,
    ) -> Result<Self, NerError> {
        let expected = features.len() * L + L * L;
        if weights.len() != expected {
            return Err(NerError::Model(format!(
                "weight vector has length {}, expected {}",
                weights.len(),
                expected
            )));
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(NerError::Model("non-finite weight".into()));
        }
        let mut order: Vec<usize> = (0..features.len()).collect();
        order.sort_by(|&a, &b| features[a].cmp(&features[b]));
        let mut sorted_w = Vec::with_capacity(weights.len());
        for &i in &order {
            sorted_w.extend_from_slice(&weights[i * L..(i + 1) * L]);
        }
        sorted_w.extend_from_slice(&weights[features.len() * L..]);
        let features: Vec<String> = order.into_iter().map(|i| features[i].clone()).collect();
        let index: HashMap<String, usize> = features
            .iter()
            .enumerate()
            .map(|(i, f)| (f.clone(), i))
            .collect();
        if index.len() != features.len() {
            return Err(NerError::Model("duplicate feature string".into()));
        }
        Ok(CrfModel {
            features,
            index,
            weights: sorted_w,
            config,
            converged: true,
            iterations: 0,
        })
    }

    pub fn num_features(&self) -> usize {
        self.features.len()
    }

    pub fn features(&self) -> &[String] {
        &self.features
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub(crate) fn set_weights(&mut self, w: Vec<f64>) {
        debug_assert_eq!(w.len(), self.weights.len());
        self.weights = w;
    }

    pub fn transition(&self, prev: BioLabel, cur: BioLabel) -> f64 {
        self.weights[self.features.len() * L + prev.index() * L + cur.index()]
    }

    pub fn feature_id(&self, feature: &str) -> Option<usize> {
        self.index.get(feature).copied()
    }

    /// Known feature ids per position; unseen features are dropped.
    pub fn compile(&self, tokens: &[Token]) -> Vec<Vec<usize>> {
        (0..tokens.len())
            .map(|i| {
                extract_ner_features(tokens, i, &self.config.features)
                    .expect("index in range")
                    .iter()
                    .filter_map(|f| self.feature_id(f))
                    .collect()
            })
            .collect()
    }

    pub(crate) fn emissions(&self, compiled: &[Vec<usize>]) -> Vec<[f64; L]> {
        emissions_from(&self.weights, compiled)
    }

    fn transitions(&self) -> &[f64] {
        &self.weights[self.features.len() * L..]
    }

    pub fn sequence_score(&self, tokens: &[Token], labels: &[BioLabel]) -> Result<f64, NerError> {
        if labels.len() != tokens.len() {
            return Err(NerError::Argument(format!(
                "{} labels for {} tokens",
                labels.len(),
                tokens.len()
            )));
        }
        let em = self.emissions(&self.compile(tokens));
        let ys: Vec<usize> = labels.iter().map(|l| l.index()).collect();
        Ok(score_path(&em, self.transitions(), &ys))
    }

    pub fn log_partition(&self, tokens: &[Token]) -> Result<f64, NerError> {
        non_empty(tokens)?;
        let em = self.emissions(&self.compile(tokens));
        let alpha = forward(&em, self.transitions());
        Ok(log_sum_exp(alpha.last().unwrap()))
    }

    pub fn marginals(&self, tokens: &[Token]) -> Result<Marginals, NerError> {
        non_empty(tokens)?;
        let em = self.emissions(&self.compile(tokens));
        Ok(forward_backward(&em, self.transitions()))
    }

    /// Viterbi labeling; ties go to the lowest label index.
    pub fn decode(&self, tokens: &[Token]) -> Result<Vec<BioLabel>, NerError> {
        non_empty(tokens)?;
        let em = self.emissions(&self.compile(tokens));
        Ok(viterbi(&em, self.transitions())
            .into_iter()
            .map(BioLabel::from_index)
            .collect())
    }

    pub fn to_json(&self) -> String {
        let n = self.features.len();
        let transitions: Vec<Vec<f64>> = self.weights[n * L..]
            .chunks(L)
            .map(|r| r.to_vec())
            .collect();
        let file = CrfFile {
            format_version: CRF_FORMAT_VERSION,
            labels: BioLabel::ALL.iter().map(|l| l.as_str().to_string()).collect(),
            features: self.features.clone(),
            weights: self.weights[..n * L].to_vec(),
            transitions,
            config: self.config.clone(),
            converged: self.converged,
            iterations: self.iterations,
        };
        serde_json::to_string(&file).expect("model serialization is infallible")
    }

    pub fn from_json(s: &str) -> Result<Self, NerError> {
        let file: CrfFile =
            serde_json::from_str(s).map_err(|e| NerError::Model(e.to_string()))?;
        if file.format_version != CRF_FORMAT_VERSION {
            return Err(NerError::Model(format!(
                "unsupported CRF format version {} (expected {})",
                file.format_version, CRF_FORMAT_VERSION
            )));
        }
        let expected_labels: Vec<&str> = BioLabel::ALL.iter().map(|l| l.as_str()).collect();
        if file.labels != expected_labels {
            return Err(NerError::Model(format!("unexpected label set {:?}", file.labels)));
        }
        if file.transitions.len() != L || file.transitions.iter().any(|r| r.len() != L) {
            return Err(NerError::Model("transition matrix must be 5x5".into()));
        }
        if file.features.windows(2).any(|w| w[0] >= w[1]) {
            return Err(NerError::Model("feature list must be strictly sorted".into()));
        }
        let mut weights = file.weights;
        weights.extend(file.transitions.into_iter().flatten());
        let mut model = CrfModel::from_parts(file.features, weights, file.config)?;
        model.converged = file.converged;
        model.iterations = file.iterations;
        Ok(model)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CrfFile {
    format_version: u32,
    labels: Vec<String>,
    features: Vec<String>,
    weights: Vec<f64>,
    transitions: Vec<Vec<f64>>,
    config: CrfTrainConfig,
    converged: bool,
    iterations: usize,
}

fn non_empty(tokens: &[Token]) -> Result<(), NerError> {
    if tokens.is_empty() {
        Err(NerError::Argument("empty sequence".into()))
    } else {
        Ok(())
    }
}

pub(crate) fn emissions_from(weights: &[f64], compiled: &[Vec<usize>]) -> Vec<[f64; L]> {
    compiled
        .iter()
        .map(|fs| {
            let mut row = [0.0; L];
            for &f in fs {
                for (y, r) in row.iter_mut().enumerate() {
                    *r += weights[f * L + y];
                }
            }
            row
        })
        .collect()
}

pub(crate) fn score_path(em: &[[f64; L]], trans: &[f64], ys: &[usize]) -> f64 {
    let mut s = 0.0;
    for (i, &y) in ys.iter().enumerate() {
        s += em[i][y];
        if i > 0 {
            s += trans[ys[i - 1] * L + y];
        }
    }
    s
}

pub(crate) fn forward(em: &[[f64; L]], trans: &[f64]) -> Vec<[f64; L]> {
    let mut alpha = vec![[0.0; L]; em.len()];
    alpha[0] = em[0];
    let mut buf = [0.0; L];
    for i in 1..em.len() {
        for y in 0..L {
            for p in 0..L {
                buf[p] = alpha[i - 1][p] + trans[p * L + y];
            }
            alpha[i][y] = log_sum_exp(&buf) + em[i][y];
        }
    }
    alpha
}

fn backward(em: &[[f64; L]], trans: &[f64]) -> Vec<[f64; L]> {
    let n = em.len();
    let mut beta = vec![[0.0; L]; n];
    let mut buf = [0.0; L];
    for i in (0..n - 1).rev() {
        for y in 0..L {
            for nx in 0..L {
                buf[nx] = trans[y * L + nx] + em[i + 1][nx] + beta[i + 1][nx];
            }
            beta[i][y] = log_sum_exp(&buf);
        }
    }
    beta
}

pub(crate) fn forward_backward(em: &[[f64; L]], trans: &[f64]) -> Marginals {
    let n = em.len();
    let alpha = forward(em, trans);
    let beta = backward(em, trans);
    let log_z = log_sum_exp(&alpha[n - 1]);
    let node = (0..n)
        .map(|i| {
            let mut row = [0.0; L];
            for y in 0..L {
                row[y] = (alpha[i][y] + beta[i][y] - log_z).exp();
            }
            row
        })
        .collect();
    let edge = (0..n.saturating_sub(1))
        .map(|i| {
            let mut m = [[0.0; L]; L];
            for a in 0..L {
                for b in 0..L {
                    m[a][b] = (alpha[i][a] + trans[a * L + b] + em[i + 1][b] + beta[i + 1][b]
                        - log_z)
                        .exp();
                }
            }
            m
        })
        .collect();
    Marginals { log_z, node, edge }
}

pub(crate) fn viterbi(em: &[[f64; L]], trans: &[f64]) -> Vec<usize> {
    let n = em.len();
    let mut delta = vec![[0.0; L]; n];
    let mut back = vec![[0usize; L]; n];
    delta[0] = em[0];
    for i in 1..n {
        for y in 0..L {
            let mut best = 0;
            let mut best_score = delta[i - 1][0] + trans[y];
            for p in 1..L {
                let s = delta[i - 1][p] + trans[p * L + y];
                if s > best_score {
                    best = p;
                    best_score = s;
                }
            }
            delta[i][y] = best_score + em[i][y];
            back[i][y] = best;
        }
    }
    let mut y = 0;
    for c in 1..L {
        if delta[n - 1][c] > delta[n - 1][y] {
            y = c;
        }
    }
    let mut path = vec![0; n];
    path[n - 1] = y;
    for i in (1..n).rev() {
        y = back[i][y];
        path[i - 1] = y;
    }
    path
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ner::NerFeatureConfig;
    use crate::tokenizer::tokenize;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn all_labelings(n: usize) -> Vec<Vec<usize>> {
        let mut out = vec![vec![]];
        for _ in 0..n {
            out = out
                .into_iter()
                .flat_map(|p| {
                    (0..L).map(move |y| {
                        let mut q = p.clone();
                        q.push(y);
                        q
                    })
                })
                .collect();
        }
        out
    }

    /// Direct score from the definition: emission weights of every known
    /// feature string plus transitions, with no compiled matrices involved.
    fn naive_score(model: &CrfModel, tokens: &[Token], ys: &[usize]) -> f64 {
        let mut s = 0.0;
        for (i, &y) in ys.iter().enumerate() {
            for f in extract_ner_features(tokens, i, &model.config.features).unwrap() {
                if let Some(id) = model.feature_id(&f) {
                    s += model.weights()[id * L + y];
                }
            }
            if i > 0 {
                s += model.transition(BioLabel::from_index(ys[i - 1]), BioLabel::from_index(y));
            }
        }
        s
    }

    fn random_model(rng: &mut ChaCha8Rng, tokens: &[Token]) -> CrfModel {
        let cfg = CrfTrainConfig::default();
        let mut feats = std::collections::BTreeSet::new();
        for i in 0..tokens.len() {
            feats.extend(extract_ner_features(tokens, i, &cfg.features).unwrap());
        }
        let feats: Vec<String> = feats.into_iter().collect();
        let w = (0..feats.len() * L + L * L)
            .map(|_| rng.gen_range(-2.0..2.0))
            .collect();
        CrfModel::from_parts(feats, w, cfg).unwrap()
    }

    fn toks(n: usize) -> Vec<Token> {
        let words = ["heart", "rate", "of", "66", ",", "BP", "120/63"];
        tokenize(&words[..n].join(" "), 0)
    }

    #[test]
    fn zero_model_is_uniform() {
        let t = toks(4);
        let m = CrfModel::from_parts(vec![], vec![0.0; L * L], CrfTrainConfig::default()).unwrap();
        assert_eq!(m.sequence_score(&t, &[BioLabel::O; 4]).unwrap(), 0.0);
        let lz = m.log_partition(&t).unwrap();
        assert!((lz - 4.0 * 5f64.ln()).abs() < 1e-12);
        let marg = m.marginals(&t).unwrap();
        for row in &marg.node {
            for p in row {
                assert!((p - 0.2).abs() < 1e-12);
            }
        }
        assert_eq!(m.decode(&t).unwrap(), vec![BioLabel::BAttr; 4]);
    }

    #[test]
    fn empty_sequences_are_rejected() {
        let m = CrfModel::from_parts(vec![], vec![0.0; L * L], CrfTrainConfig::default()).unwrap();
        assert!(m.log_partition(&[]).is_err());
        assert!(m.marginals(&[]).is_err());
        assert!(m.decode(&[]).is_err());
    }

    #[test]
    fn hand_built_two_token_score() {
        // features "w=a" and "w=b"; tokens "a b"
        let mut w = vec![0.0; 2 * L + L * L];
        w[BioLabel::BAttr.index()] = 1.5; // w=a, B-ATTR
        w[L + BioLabel::IAttr.index()] = -0.25; // w=b, I-ATTR
        w[2 * L + BioLabel::BAttr.index() * L + BioLabel::IAttr.index()] = 0.5;
        let cfg = CrfTrainConfig {
            features: NerFeatureConfig {
                word: true,
                position: false,
                shape: false,
                ngrams: false,
                disjunctions: false,
                ..NerFeatureConfig::default()
            },
            ..CrfTrainConfig::default()
        };
        let m = CrfModel::from_parts(vec!["w=a".into(), "w=b".into()], w, cfg).unwrap();
        let t = tokenize("a b", 0);
        let s = m
            .sequence_score(&t, &[BioLabel::BAttr, BioLabel::IAttr])
            .unwrap();
        assert!((s - (1.5 - 0.25 + 0.5)).abs() < 1e-15);
        let s = m.sequence_score(&t, &[BioLabel::O, BioLabel::IAttr]).unwrap();
        assert!((s - (-0.25)).abs() < 1e-15);
    }

    #[test]
    fn brute_force_agreement() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for trial in 0..30 {
            let n = 1 + trial % 6;
            let t = toks(n);
            let m = random_model(&mut rng, &t);
            let scores: Vec<f64> = all_labelings(n)
                .iter()
                .map(|ys| naive_score(&m, &t, ys))
                .collect();
            let brute_lz = log_sum_exp(&scores);
            let lz = m.log_partition(&t).unwrap();
            assert!(((lz - brute_lz) / brute_lz.abs().max(1.0)).abs() < 1e-8);
            let best = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let path = m.decode(&t).unwrap();
            let vs = m.sequence_score(&t, &path).unwrap();
            assert!((vs - best).abs() < 1e-9 * best.abs().max(1.0));
            assert!(scores.iter().all(|&s| s <= lz));
        }
    }

    #[test]
    fn shifting_one_position_shifts_log_partition() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t = toks(4);
        let m = random_model(&mut rng, &t);
        let em = m.emissions(&m.compile(&t));
        let base = log_sum_exp(forward(&em, m.transitions()).last().unwrap());
        let mut shifted = em.clone();
        for v in shifted[2].iter_mut() {
            *v += 0.7;
        }
        let lz = log_sum_exp(forward(&shifted, m.transitions()).last().unwrap());
        assert!((lz - base - 0.7).abs() < 1e-12);
    }

    #[test]
    fn json_round_trip_and_version_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let t = toks(3);
        let m = random_model(&mut rng, &t);
        let back = CrfModel::from_json(&m.to_json()).unwrap();
        assert_eq!(back.weights(), m.weights());
        assert_eq!(back.features(), m.features());
        let bumped = m.to_json().replacen("\"format_version\":1", "\"format_version\":99", 1);
        assert!(CrfModel::from_json(&bumped).is_err());
        let truncated = m.to_json().replacen("\"weights\":[", "\"weights\":[0.0,", 1);
        assert!(CrfModel::from_json(&truncated).is_err());
    }
}
