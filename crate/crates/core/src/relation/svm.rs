//! Soft-margin linear SVM (hinge loss, L2) trained by dual coordinate descent.
//!
//! The bias is folded in as a constant feature of value 1, so it is
//! regularized together with the weights. Each sample's dual variable is boxed
//! by `C` times its class weight.

use std::collections::{BTreeSet, HashMap};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::RelationError;

pub const SVM_FORMAT_VERSION: u32 = 1;

/// Named real-valued features; relation features all carry 1.0.
pub type FeatureSet = Vec<(String, f64)>;

pub fn binary_features<I, S>(names: I) -> FeatureSet
where
    I: IntoIterator<Item = S>,
    S: Into<String>,
{
    names.into_iter().map(|n| (n.into(), 1.0)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SvmConfig {
    pub c: f64,
    /// (positive, negative) multipliers on `c`
    pub class_weights: (f64, f64),
    pub tol: f64,
    pub max_iter: usize,
    pub seed: u64,
}

impl Default for SvmConfig {
    fn default() -> Self {
        SvmConfig {
            c: 1.0,
            class_weights: (1.0, 1.0),
            tol: 1e-3,
            max_iter: 1000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SvmModel {
    features: Vec<String>,
    index: HashMap<String, usize>,
    weights: Vec<f64>,
    bias: f64,
    pub config: SvmConfig,
    pub converged: bool,
    pub epochs: usize,
    pub duality_gap: f64,
}

/// Primal and dual objective values at termination.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SvmObjectives {
    pub primal: f64,
    pub dual: f64,
}

impl SvmModel {
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> f64 {
        self.bias
    }

    pub fn features(&self) -> &[String] {
        &self.features
    }

    pub fn weight(&self, feature: &str) -> Option<f64> {
        self.index.get(feature).map(|&i| self.weights[i])
    }

    /// `<w, x> + b` over known features; repeated names count once.
    pub fn classify(&self, features: &[(String, f64)]) -> (f64, bool) {
        let mut seen = BTreeSet::new();
        let mut score = self.bias;
        for (name, v) in features {
            if !seen.insert(name.as_str()) {
                continue;
            }
            if let Some(&i) = self.index.get(name) {
                score += self.weights[i] * v;
            }
        }
        (score, score > 0.0)
    }

    pub fn from_parts(
        features: Vec<String>,
        weights: Vec<f64>,
        bias: f64,
        config: SvmConfig,
    ) -> Result<Self, RelationError> {
        if features.len() != weights.len() {
            return Err(RelationError::Model(format!(
                "{} features but {} weights",
                features.len(),
                weights.len()
            )));
        }
        if !bias.is_finite() || weights.iter().any(|w| !w.is_finite()) {
            return Err(RelationError::Model("non-finite parameter".into()));
        }
        let index: HashMap<String, usize> = features
            .iter()
            .enumerate()
            .map(|(i, f)| (f.clone(), i))
            .collect();
        if index.len() != features.len() {
            return Err(RelationError::Model("duplicate feature string".into()));
        }
        Ok(SvmModel {
            features,
            index,
            weights,
            bias,
            config,
            converged: true,
            epochs: 0,
            duality_gap: 0.0,
        })
    }

    pub fn to_json(&self) -> String {
        let file = SvmFile {
            format_version: SVM_FORMAT_VERSION,
            features: self.features.clone(),
            weights: self.weights.clone(),
            bias: self.bias,
            config: self.config.clone(),
            converged: self.converged,
            epochs: self.epochs,
            duality_gap: self.duality_gap,
        };
        serde_json::to_string(&file).expect("model serialization is infallible")
    }

    pub fn from_json(s: &str) -> Result<Self, RelationError> {
        let f: SvmFile = serde_json::from_str(s).map_err(|e| RelationError::Model(e.to_string()))?;
        if f.format_version != SVM_FORMAT_VERSION {
            return Err(RelationError::Model(format!(
                "unsupported SVM format version {} (expected {})",
                f.format_version, SVM_FORMAT_VERSION
            )));
        }
        let mut m = SvmModel::from_parts(f.features, f.weights, f.bias, f.config)?;
        m.converged = f.converged;
        m.epochs = f.epochs;
        m.duality_gap = f.duality_gap;
        Ok(m)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SvmFile {
    format_version: u32,
    features: Vec<String>,
    weights: Vec<f64>,
    bias: f64,
    config: SvmConfig,
    converged: bool,
    epochs: usize,
    duality_gap: f64,
}

struct Problem {
    /// sparse rows, bias column excluded
    rows: Vec<Vec<(usize, f64)>>,
    y: Vec<f64>,
    upper: Vec<f64>,
}

impl Problem {
    fn margin(&self, i: usize, w: &[f64], b: f64) -> f64 {
        self.rows[i].iter().map(|&(j, v)| w[j] * v).sum::<f64>() + b
    }

    fn objectives(&self, w: &[f64], b: f64, alpha: &[f64]) -> SvmObjectives {
        let reg = 0.5 * (w.iter().map(|x| x * x).sum::<f64>() + b * b);
        let hinge: f64 = (0..self.rows.len())
            .map(|i| self.upper[i] * (1.0 - self.y[i] * self.margin(i, w, b)).max(0.0))
            .sum();
        SvmObjectives {
            primal: reg + hinge,
            dual: alpha.iter().sum::<f64>() - reg,
        }
    }
}

/// Trains on named features. Requires at least one sample of each class.
pub fn train_svm(samples: &[(FeatureSet, bool)], config: &SvmConfig) -> Result<SvmModel, RelationError> {
    let (model, _) = train_svm_with_objectives(samples, config)?;
    Ok(model)
}

/// Like [`train_svm`], also returning the final primal and dual objectives.
pub fn train_svm_with_objectives(
    samples: &[(FeatureSet, bool)],
    config: &SvmConfig,
) -> Result<(SvmModel, SvmObjectives), RelationError> {
    let pos = samples.iter().filter(|(_, y)| *y).count();
    if pos == 0 || pos == samples.len() {
        return Err(RelationError::Argument(format!(
            "need both classes, got {pos} positive of {}",
            samples.len()
        )));
    }
    let (cp, cn) = config.class_weights;
    if !(config.c > 0.0 && cp > 0.0 && cn > 0.0) {
        return Err(RelationError::Argument("C and class weights must be positive".into()));
    }

    let dict: BTreeSet<&str> = samples
        .iter()
        .flat_map(|(f, _)| f.iter().map(|(n, _)| n.as_str()))
        .collect();
    let features: Vec<String> = dict.iter().map(|s| s.to_string()).collect();
    let index: HashMap<&str, usize> = dict.iter().enumerate().map(|(i, s)| (*s, i)).collect();

    let mut problem = Problem {
        rows: Vec::with_capacity(samples.len()),
        y: Vec::with_capacity(samples.len()),
        upper: Vec::with_capacity(samples.len()),
    };
    for (f, label) in samples {
        let mut row: Vec<(usize, f64)> = Vec::new();
        let mut seen = BTreeSet::new();
        for (name, v) in f {
            if seen.insert(name.as_str()) {
                row.push((index[name.as_str()], *v));
            }
        }
        row.sort_by_key(|&(j, _)| j);
        problem.rows.push(row);
        problem.y.push(if *label { 1.0 } else { -1.0 });
        problem.upper.push(config.c * if *label { cp } else { cn });
    }

    let n = problem.rows.len();
    let qd: Vec<f64> = problem
        .rows
        .iter()
        .map(|r| r.iter().map(|(_, v)| v * v).sum::<f64>() + 1.0)
        .collect();
    let mut alpha = vec![0.0; n];
    let mut w = vec![0.0; features.len()];
    let mut b = 0.0;
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut objectives = problem.objectives(&w, b, &alpha);
    let mut converged = false;
    let mut epochs = 0;

    while epochs < config.max_iter {
        epochs += 1;
        order.shuffle(&mut rng);
        for &i in &order {
            let g = problem.y[i] * problem.margin(i, &w, b) - 1.0;
            let pg = if alpha[i] == 0.0 {
                g.min(0.0)
            } else if alpha[i] == problem.upper[i] {
                g.max(0.0)
            } else {
                g
            };
            if pg == 0.0 {
                continue;
            }
            let old = alpha[i];
            alpha[i] = (old - g / qd[i]).clamp(0.0, problem.upper[i]);
            let d = (alpha[i] - old) * problem.y[i];
            for &(j, v) in &problem.rows[i] {
                w[j] += d * v;
            }
            b += d;
        }
        objectives = problem.objectives(&w, b, &alpha);
        if objectives.primal - objectives.dual <= config.tol {
            converged = true;
            break;
        }
    }

    let mut model = SvmModel::from_parts(features, w, b, config.clone())?;
    model.converged = converged;
    model.epochs = epochs;
    model.duality_gap = objectives.primal - objectives.dual;
    Ok((model, objectives))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn point(x1: f64, x2: f64) -> FeatureSet {
        vec![("x1".into(), x1), ("x2".into(), x2)]
    }

    #[test]
    fn symmetric_separable_toy() {
        let samples = vec![(point(2.0, 0.0), true), (point(-2.0, 0.0), false)];
        let cfg = SvmConfig {
            tol: 1e-9,
            ..SvmConfig::default()
        };
        let m = train_svm(&samples, &cfg).unwrap();
        let (sp, dp) = m.classify(&point(2.0, 0.0));
        let (sn, dn) = m.classify(&point(-2.0, 0.0));
        assert!(dp && !dn);
        assert!((sp - 1.0).abs() < 1e-3 && (sn + 1.0).abs() < 1e-3, "{sp} {sn}");
        // boundary at x1 = 0
        assert!(m.classify(&point(0.0, 5.0)).0.abs() < 1e-3);
    }

    #[test]
    fn one_class_is_rejected() {
        let samples = vec![(point(1.0, 0.0), true), (point(2.0, 0.0), true)];
        assert!(train_svm(&samples, &SvmConfig::default()).is_err());
    }

    #[test]
    fn gap_within_tolerance_on_random_problems() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for trial in 0..10 {
            let samples: Vec<(FeatureSet, bool)> = (0..100)
                .map(|k| {
                    let label = k % 3 == 0;
                    let mut feats = Vec::new();
                    for j in 0..5 {
                        if rng.gen_bool(0.4) {
                            let x = if label { 1.0 } else { rng.gen_range(0.0..1.0) };
                            feats.push((format!("f{j}"), x));
                        }
                    }
                    (feats, label)
                })
                .collect();
            let cfg = SvmConfig {
                seed: trial,
                ..SvmConfig::default()
            };
            let (m, obj) = train_svm_with_objectives(&samples, &cfg).unwrap();
            assert!(m.converged);
            assert!(obj.primal >= obj.dual - 1e-12);
            assert!(obj.primal - obj.dual <= cfg.tol);
        }
    }

    #[test]
    fn classify_examples() {
        let m = SvmModel::from_parts(
            vec!["a".into(), "b".into(), "c".into()],
            vec![0.5, -1.25, 2.0],
            -0.1,
            SvmConfig::default(),
        )
        .unwrap();
        assert_eq!(m.classify(&[]), (-0.1, false));
        let (s, d) = m.classify(&binary_features(["a", "c", "zzz"]));
        assert!((s - (0.5 + 2.0 - 0.1)).abs() < 1e-12 && d);
        let dup = m.classify(&binary_features(["a", "a", "c", "c"]));
        assert_eq!(dup.0, s);
        let back = SvmModel::from_json(&m.to_json()).unwrap();
        assert_eq!(back, m);
    }
}
