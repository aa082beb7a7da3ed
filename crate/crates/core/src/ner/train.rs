//! L2-regularized maximum-likelihood training with L-BFGS.

use std::collections::{BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use super::crf::{emissions_from, forward_backward, score_path, CrfModel};
use super::features::{extract_ner_features, NerFeatureConfig};
use super::{is_well_formed, LabeledSequence, NerError, NUM_LABELS};

const L: usize = NUM_LABELS;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CrfTrainConfig {
    pub lambda: f64,
    pub max_iter: usize,
    pub grad_tol: f64,
    pub seed: u64,
    pub features: NerFeatureConfig,
}

impl Default for CrfTrainConfig {
    fn default() -> Self {
        CrfTrainConfig {
            lambda: 1.0,
            max_iter: 200,
            grad_tol: 1e-3,
            seed: 0,
            features: NerFeatureConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub iterations: usize,
    pub converged: bool,
    /// Objective after each accepted step, starting with the value at w = 0.
    pub losses: Vec<f64>,
    pub grad_inf_norm: f64,
}

struct Compiled {
    feats: Vec<Vec<usize>>,
    labels: Vec<usize>,
}

/// Negative penalized log-likelihood over a fixed training set.
pub struct CrfObjective {
    data: Vec<Compiled>,
    num_features: usize,
    lambda: f64,
    /// Empirical feature counts (emissions then transitions).
    empirical: Vec<f64>,
}

impl CrfObjective {
    /// Compiles `data` against the feature list `features` (sorted, unique).
    pub fn new(
        data: &[LabeledSequence],
        features: &[String],
        feature_config: &NerFeatureConfig,
        lambda: f64,
    ) -> Self {
        let index: std::collections::HashMap<&str, usize> = features
            .iter()
            .enumerate()
            .map(|(i, f)| (f.as_str(), i))
            .collect();
        let data: Vec<Compiled> = data
            .iter()
            .filter(|s| !s.sentence.tokens.is_empty())
            .map(|s| {
                let toks = &s.sentence.tokens;
                let feats = (0..toks.len())
                    .map(|i| {
                        extract_ner_features(toks, i, feature_config)
                            .expect("index in range")
                            .iter()
                            .filter_map(|f| index.get(f.as_str()).copied())
                            .collect()
                    })
                    .collect();
                Compiled {
                    feats,
                    labels: s.labels.iter().map(|l| l.index()).collect(),
                }
            })
            .collect();
        let n = features.len();
        let mut empirical = vec![0.0; n * L + L * L];
        for s in &data {
            for (i, fs) in s.feats.iter().enumerate() {
                let y = s.labels[i];
                for &f in fs {
                    empirical[f * L + y] += 1.0;
                }
                if i > 0 {
                    empirical[n * L + s.labels[i - 1] * L + y] += 1.0;
                }
            }
        }
        CrfObjective {
            data,
            num_features: n,
            lambda,
            empirical,
        }
    }

    pub fn dim(&self) -> usize {
        self.num_features * L + L * L
    }

    /// Objective value and gradient at `w`.
    pub fn value_and_gradient(&self, w: &[f64]) -> (f64, Vec<f64>) {
        let n = self.num_features;
        let trans = &w[n * L..];
        let mut loss = 0.0;
        let mut grad = vec![0.0; w.len()];
        for s in &self.data {
            let em = emissions_from(w, &s.feats);
            let m = forward_backward(&em, trans);
            loss += m.log_z - score_path(&em, trans, &s.labels);
            for (i, fs) in s.feats.iter().enumerate() {
                for &f in fs {
                    for y in 0..L {
                        grad[f * L + y] += m.node[i][y];
                    }
                }
            }
            for e in &m.edge {
                for a in 0..L {
                    for b in 0..L {
                        grad[n * L + a * L + b] += e[a][b];
                    }
                }
            }
        }
        let mut sq = 0.0;
        for ((g, &wi), &emp) in grad.iter_mut().zip(w).zip(&self.empirical) {
            *g += self.lambda * wi - emp;
            sq += wi * wi;
        }
        loss += 0.5 * self.lambda * sq;
        (loss, grad)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Trains a CRF from zero-initialized weights.
pub fn train_crf(
    data: &[LabeledSequence],
    config: &CrfTrainConfig,
) -> Result<(CrfModel, TrainReport), NerError> {
    if data.is_empty() {
        return Err(NerError::Argument("no training sequences".into()));
    }
    if !(config.lambda >= 0.0 && config.lambda.is_finite()) {
        return Err(NerError::Argument(format!("invalid lambda {}", config.lambda)));
    }
    for s in data {
        if s.labels.len() != s.sentence.tokens.len() || !is_well_formed(&s.labels) {
            return Err(NerError::Argument(format!(
                "sequence {}#{} is not a valid BIO labeling",
                s.sentence.doc_id, s.sentence.index
            )));
        }
    }

    let mut dict = BTreeSet::new();
    for s in data {
        for i in 0..s.sentence.tokens.len() {
            dict.extend(extract_ner_features(&s.sentence.tokens, i, &config.features)?);
        }
    }
    let features: Vec<String> = dict.into_iter().collect();
    let objective = CrfObjective::new(data, &features, &config.features, config.lambda);

    let (w, report) = minimize(&objective, config.max_iter, config.grad_tol)?;
    let mut model = CrfModel::from_parts(features, vec![0.0; w.len()], config.clone())?;
    model.set_weights(w);
    model.converged = report.converged;
    model.iterations = report.iterations;
    Ok((model, report))
}

const HISTORY: usize = 10;
const ARMIJO: f64 = 1e-4;

fn minimize(
    obj: &CrfObjective,
    max_iter: usize,
    grad_tol: f64,
) -> Result<(Vec<f64>, TrainReport), NerError> {
    let dim = obj.dim();
    let mut w = vec![0.0; dim];
    let (mut f, mut g) = obj.value_and_gradient(&w);
    if !f.is_finite() {
        return Err(NerError::Numerical {
            iteration: 0,
            msg: format!("initial loss is {f}"),
        });
    }
    let mut losses = vec![f];
    let mut history: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::new();
    let mut iterations = 0;
    let mut converged = inf_norm(&g) < grad_tol;

    while !converged && iterations < max_iter {
        iterations += 1;
        let mut dir = two_loop(&g, &history);
        let mut slope = dot(&dir, &g);
        if slope >= 0.0 {
            history.clear();
            dir = g.iter().map(|x| -x).collect();
            slope = dot(&dir, &g);
        }
        let mut step = if history.is_empty() {
            1.0 / inf_norm(&g).max(1.0)
        } else {
            1.0
        };

        let mut accepted = None;
        for _ in 0..40 {
            let trial: Vec<f64> = w.iter().zip(&dir).map(|(a, d)| a + step * d).collect();
            let (tf, tg) = obj.value_and_gradient(&trial);
            if tf.is_finite() && tf <= f + ARMIJO * step * slope {
                accepted = Some((trial, tf, tg));
                break;
            }
            step *= 0.5;
        }
        let Some((nw, nf, ng)) = accepted else {
            if !f.is_finite() {
                return Err(NerError::Numerical {
                    iteration: iterations,
                    msg: "line search produced non-finite loss".into(),
                });
            }
            // no progress possible at machine precision
            break;
        };

        let s: Vec<f64> = nw.iter().zip(&w).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = ng.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 {
            if history.len() == HISTORY {
                history.pop_front();
            }
            history.push_back((s, y, 1.0 / sy));
        }
        w = nw;
        f = nf;
        g = ng;
        losses.push(f);
        converged = inf_norm(&g) < grad_tol;
    }

    let report = TrainReport {
        iterations,
        converged,
        losses,
        grad_inf_norm: inf_norm(&g),
    };
    Ok((w, report))
}

fn two_loop(g: &[f64], history: &VecDeque<(Vec<f64>, Vec<f64>, f64)>) -> Vec<f64> {
    let mut q: Vec<f64> = g.to_vec();
    let mut alphas = Vec::with_capacity(history.len());
    for (s, y, rho) in history.iter().rev() {
        let a = rho * dot(s, &q);
        for (qi, yi) in q.iter_mut().zip(y) {
            *qi -= a * yi;
        }
        alphas.push(a);
    }
    if let Some((s, y, _)) = history.back() {
        let gamma = dot(s, y) / dot(y, y);
        q.iter_mut().for_each(|v| *v *= gamma);
    }
    for ((s, y, rho), a) in history.iter().zip(alphas.into_iter().rev()) {
        let b = rho * dot(y, &q);
        for (qi, si) in q.iter_mut().zip(s) {
            *qi += (a - b) * si;
        }
    }
    q.iter_mut().for_each(|v| *v = -*v);
    q
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ner::BioLabel;
    use crate::tokenizer::{tokenize, Sentence};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn seq(text: &str, labels: &[BioLabel]) -> LabeledSequence {
        LabeledSequence {
            sentence: Sentence {
                doc_id: "d".into(),
                index: 0,
                start: 0,
                end: text.chars().count(),
                tokens: tokenize(text, 0),
            },
            labels: labels.to_vec(),
        }
    }

    #[test]
    fn memorizes_one_sequence() {
        use BioLabel::*;
        let data = vec![seq("pulse 66", &[BAttr, BVal])];
        let (model, report) = train_crf(&data, &CrfTrainConfig::default()).unwrap();
        assert_eq!(model.decode(&data[0].sentence.tokens).unwrap(), vec![BAttr, BVal]);
        assert!(report.losses.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn single_feature_distinguishes_labels() {
        use BioLabel::*;
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
        let data = vec![seq("rate", &[BAttr]), seq("66", &[BVal])];
        let (model, _) = train_crf(&data, &cfg).unwrap();
        assert_eq!(model.decode(&data[0].sentence.tokens).unwrap(), vec![BAttr]);
        assert_eq!(model.decode(&data[1].sentence.tokens).unwrap(), vec![BVal]);
    }

    #[test]
    fn heavy_regularization_shrinks_weights() {
        use BioLabel::*;
        let data = vec![seq("heart rate of 66", &[BAttr, IAttr, O, BVal])];
        let cfg = CrfTrainConfig {
            lambda: 1e8,
            ..CrfTrainConfig::default()
        };
        let (model, _) = train_crf(&data, &cfg).unwrap();
        assert!(model.weights().iter().all(|w| w.abs() < 1e-6));
    }

    #[test]
    fn rejects_empty_or_malformed_data() {
        assert!(train_crf(&[], &CrfTrainConfig::default()).is_err());
        let bad = vec![seq("a b", &[BioLabel::O, BioLabel::IVal])];
        assert!(train_crf(&bad, &CrfTrainConfig::default()).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        use BioLabel::*;
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let data = vec![seq("blood pressure 120/63 ,", &[BAttr, IAttr, BVal, O])];
        let cfg = CrfTrainConfig::default();
        let mut dict = BTreeSet::new();
        for i in 0..4 {
            dict.extend(extract_ner_features(&data[0].sentence.tokens, i, &cfg.features).unwrap());
        }
        let feats: Vec<String> = dict.into_iter().collect();
        let obj = CrfObjective::new(&data, &feats, &cfg.features, 0.5);
        let w: Vec<f64> = (0..obj.dim()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (_, g) = obj.value_and_gradient(&w);
        let eps = 1e-5;
        for k in (0..obj.dim()).step_by(7) {
            let mut wp = w.clone();
            wp[k] += eps;
            let mut wm = w.clone();
            wm[k] -= eps;
            let fd = (obj.value_and_gradient(&wp).0 - obj.value_and_gradient(&wm).0) / (2.0 * eps);
            let rel = (fd - g[k]).abs() / g[k].abs().max(fd.abs()).max(1e-6);
            assert!(rel < 1e-4, "coordinate {k}: analytic {} vs fd {fd}", g[k]);
        }
    }
}
