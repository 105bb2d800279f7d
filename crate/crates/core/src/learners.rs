//! The base-model roster: six small learner families, each producing a
//! regression-style score in `[0, 1]` from min-max scaled features.

use std::collections::BTreeSet;
use std::path::Path;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{scaled_samples, Class, FeatureScaler, PatientRecord, Sample};
use crate::error::{Error, Result};
use crate::par::{self, Threads};

/// Anything that scores a scaled feature vector with a value in `[0, 1]`.
///
/// Trained roster models implement it; so can hand-built models used to
/// probe the consolidation stage.
pub trait Predictor: Sync {
    fn id(&self) -> &str;
    fn dim(&self) -> usize;
    fn predict(&self, scaled_features: &[f64]) -> Result<f64>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    Logistic,
    Tree,
    Bagging,
    RandomSubspace,
    LeastSquares,
    Knn,
}

/// Family-specific knobs. Unset fields take the family default; setting a
/// knob the family does not use is rejected at validation.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Hyperparameters {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub learning_rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epochs: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_depth: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_leaf: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ensemble_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bootstrap: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subspace_fraction: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
}

impl Hyperparameters {
    /// Fields set in `other` win.
    fn overlay(&self, other: &Hyperparameters) -> Hyperparameters {
        Hyperparameters {
            learning_rate: other.learning_rate.or(self.learning_rate),
            epochs: other.epochs.or(self.epochs),
            max_depth: other.max_depth.or(self.max_depth),
            min_leaf: other.min_leaf.or(self.min_leaf),
            ensemble_size: other.ensemble_size.or(self.ensemble_size),
            bootstrap: other.bootstrap.or(self.bootstrap),
            subspace_fraction: other.subspace_fraction.or(self.subspace_fraction),
            k: other.k.or(self.k),
        }
    }

    fn set_names(&self) -> Vec<&'static str> {
        let mut set = Vec::new();
        let mut mark = |present: bool, name| {
            if present {
                set.push(name)
            }
        };
        mark(self.learning_rate.is_some(), "learning_rate");
        mark(self.epochs.is_some(), "epochs");
        mark(self.max_depth.is_some(), "max_depth");
        mark(self.min_leaf.is_some(), "min_leaf");
        mark(self.ensemble_size.is_some(), "ensemble_size");
        mark(self.bootstrap.is_some(), "bootstrap");
        mark(self.subspace_fraction.is_some(), "subspace_fraction");
        mark(self.k.is_some(), "k");
        set
    }
}

pub const DEFAULT_LEARNING_RATE: f64 = 0.1;
pub const DEFAULT_EPOCHS: usize = 200;
pub const DEFAULT_MAX_DEPTH: usize = 4;
pub const DEFAULT_MIN_LEAF: usize = 5;
pub const DEFAULT_ENSEMBLE_SIZE: usize = 10;
pub const DEFAULT_SUBSPACE_FRACTION: f64 = 0.5;
pub const DEFAULT_K: usize = 5;
/// Ridge term used when the least-squares normal equations are singular.
pub const RIDGE_FALLBACK_LAMBDA: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub id: String,
    pub family: Family,
    #[serde(default)]
    pub params: Hyperparameters,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, Copy)]
struct TreeParams {
    max_depth: usize,
    min_leaf: usize,
}

#[derive(Debug, Clone, Copy)]
enum Resolved {
    Logistic { learning_rate: f64, epochs: usize },
    Tree(TreeParams),
    Bagging { tree: TreeParams, size: usize, bootstrap: bool },
    Subspace { tree: TreeParams, size: usize, fraction: f64 },
    LeastSquares,
    Knn { k: usize },
}

impl ModelSpec {
    pub fn new(id: impl Into<String>, family: Family) -> Self {
        ModelSpec {
            id: id.into(),
            family,
            params: Hyperparameters::default(),
            seed: 0,
        }
    }

    pub fn with_params(mut self, params: Hyperparameters) -> Self {
        self.params = params;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.resolve().map(|_| ())
    }

    fn resolve(&self) -> Result<Resolved> {
        let invalid = |reason: String| Error::InvalidHyperparameter {
            model: self.id.clone(),
            reason,
        };
        if self.id.is_empty() || self.id.contains(['\t', ',', '\n', '\r']) {
            return Err(invalid(format!(
                "model id `{}` must be non-empty and free of tabs, commas and newlines",
                self.id
            )));
        }

        let allowed: &[&str] = match self.family {
            Family::Logistic => &["learning_rate", "epochs"],
            Family::Tree => &["max_depth", "min_leaf"],
            Family::Bagging => &["max_depth", "min_leaf", "ensemble_size", "bootstrap"],
            Family::RandomSubspace => &["max_depth", "min_leaf", "ensemble_size", "subspace_fraction"],
            Family::LeastSquares => &[],
            Family::Knn => &["k"],
        };
        if let Some(bad) = self.params.set_names().into_iter().find(|n| !allowed.contains(n)) {
            return Err(invalid(format!("`{bad}` does not apply to {:?}", self.family)));
        }

        let p = &self.params;
        let tree = || -> Result<TreeParams> {
            let min_leaf = p.min_leaf.unwrap_or(DEFAULT_MIN_LEAF);
            if min_leaf == 0 {
                return Err(invalid("min_leaf must be at least 1".into()));
            }
            Ok(TreeParams {
                max_depth: p.max_depth.unwrap_or(DEFAULT_MAX_DEPTH),
                min_leaf,
            })
        };
        let size = || -> Result<usize> {
            match p.ensemble_size.unwrap_or(DEFAULT_ENSEMBLE_SIZE) {
                0 => Err(invalid("ensemble_size must be at least 1".into())),
                n => Ok(n),
            }
        };

        Ok(match self.family {
            Family::Logistic => {
                let learning_rate = p.learning_rate.unwrap_or(DEFAULT_LEARNING_RATE);
                if !(learning_rate.is_finite() && learning_rate > 0.0) {
                    return Err(invalid(format!("learning_rate {learning_rate} must be positive")));
                }
                Resolved::Logistic {
                    learning_rate,
                    epochs: p.epochs.unwrap_or(DEFAULT_EPOCHS),
                }
            }
            Family::Tree => Resolved::Tree(tree()?),
            Family::Bagging => Resolved::Bagging {
                tree: tree()?,
                size: size()?,
                bootstrap: p.bootstrap.unwrap_or(true),
            },
            Family::RandomSubspace => {
                let fraction = p.subspace_fraction.unwrap_or(DEFAULT_SUBSPACE_FRACTION);
                if !(fraction > 0.0 && fraction <= 1.0) {
                    return Err(invalid(format!("subspace_fraction {fraction} must lie in (0, 1]")));
                }
                Resolved::Subspace {
                    tree: tree()?,
                    size: size()?,
                    fraction,
                }
            }
            Family::LeastSquares => Resolved::LeastSquares,
            Family::Knn => match p.k.unwrap_or(DEFAULT_K) {
                0 => return Err(invalid("k must be at least 1".into())),
                k => Resolved::Knn { k },
            },
        })
    }
}

/// One roster line: a family plus how many seeded variants to expand it into.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RosterEntry {
    pub family: Family,
    /// Model id when `variants == 1`, otherwise the prefix of `name-A`, `name-B`, ...
    pub name: String,
    #[serde(default = "one")]
    pub variants: usize,
    /// Variant `i` (0-based) is seeded with `seed + i`.
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub params: Hyperparameters,
    /// Optional per-variant overrides layered on `params`; length must equal `variants`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub variant_params: Vec<Hyperparameters>,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RosterConfig {
    pub entries: Vec<RosterEntry>,
}

impl RosterConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

impl Default for RosterConfig {
    /// 25 models: bagging A-I, random subspace A-J, and six singles.
    fn default() -> Self {
        let sizes = |s: &[usize]| {
            s.iter()
                .map(|&n| Hyperparameters {
                    ensemble_size: Some(n),
                    ..Default::default()
                })
                .collect()
        };
        let fractions = [0.25, 0.375, 0.5, 0.625, 0.75];
        RosterConfig {
            entries: vec![
                RosterEntry {
                    family: Family::Bagging,
                    name: "bagging".into(),
                    variants: 9,
                    seed: 1100,
                    params: Hyperparameters {
                        max_depth: Some(DEFAULT_MAX_DEPTH),
                        min_leaf: Some(DEFAULT_MIN_LEAF),
                        ..Default::default()
                    },
                    variant_params: sizes(&[5, 10, 20, 5, 10, 20, 5, 10, 20]),
                },
                RosterEntry {
                    family: Family::RandomSubspace,
                    name: "subspace".into(),
                    variants: 10,
                    seed: 2100,
                    params: Hyperparameters {
                        max_depth: Some(DEFAULT_MAX_DEPTH),
                        min_leaf: Some(DEFAULT_MIN_LEAF),
                        ensemble_size: Some(DEFAULT_ENSEMBLE_SIZE),
                        ..Default::default()
                    },
                    variant_params: fractions
                        .iter()
                        .chain(&fractions)
                        .map(|&f| Hyperparameters {
                            subspace_fraction: Some(f),
                            ..Default::default()
                        })
                        .collect(),
                },
                single(Family::Logistic, "logistic", Hyperparameters::default()),
                single(
                    Family::Tree,
                    "tree-d3",
                    Hyperparameters {
                        max_depth: Some(3),
                        ..Default::default()
                    },
                ),
                single(
                    Family::Tree,
                    "tree-d6",
                    Hyperparameters {
                        max_depth: Some(6),
                        ..Default::default()
                    },
                ),
                single(Family::LeastSquares, "least-squares", Hyperparameters::default()),
                single(
                    Family::Knn,
                    "knn-k5",
                    Hyperparameters {
                        k: Some(5),
                        ..Default::default()
                    },
                ),
                single(
                    Family::Knn,
                    "knn-k25",
                    Hyperparameters {
                        k: Some(25),
                        ..Default::default()
                    },
                ),
            ],
        }
    }
}

fn single(family: Family, name: &str, params: Hyperparameters) -> RosterEntry {
    RosterEntry {
        family,
        name: name.into(),
        variants: 1,
        seed: 0,
        params,
        variant_params: Vec::new(),
    }
}

/// Expands a roster config into validated specs sorted by id.
pub fn build_roster(config: &RosterConfig) -> Result<Vec<ModelSpec>> {
    let mut specs = Vec::new();
    for entry in &config.entries {
        let invalid = |reason: String| Error::InvalidHyperparameter {
            model: entry.name.clone(),
            reason,
        };
        if entry.variants == 0 || entry.variants > 26 {
            return Err(invalid(format!("variants {} must lie in 1..=26", entry.variants)));
        }
        if !entry.variant_params.is_empty() && entry.variant_params.len() != entry.variants {
            return Err(invalid(format!(
                "{} variant_params given for {} variants",
                entry.variant_params.len(),
                entry.variants
            )));
        }
        for v in 0..entry.variants {
            let id = if entry.variants == 1 {
                entry.name.clone()
            } else {
                format!("{}-{}", entry.name, (b'A' + v as u8) as char)
            };
            let params = match entry.variant_params.get(v) {
                Some(over) => entry.params.overlay(over),
                None => entry.params.clone(),
            };
            let spec = ModelSpec {
                id,
                family: entry.family,
                params,
                seed: entry.seed.wrapping_add(v as u64),
            };
            spec.validate()?;
            specs.push(spec);
        }
    }
    let mut seen = BTreeSet::new();
    for s in &specs {
        if !seen.insert(s.id.as_str()) {
            return Err(Error::DuplicateModelId(s.id.clone()));
        }
    }
    specs.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(specs)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum TreeNode {
    Leaf {
        value: f64,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

/// Regression tree over the 0/1 label, stored as a flat node list rooted at 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree {
    pub nodes: Vec<TreeNode>,
}

impl RegressionTree {
    pub fn constant(value: f64) -> Self {
        RegressionTree {
            nodes: vec![TreeNode::Leaf { value }],
        }
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut at = 0;
        loop {
            match self.nodes[at] {
                TreeNode::Leaf { value } => return value,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => at = if x[feature] <= threshold { left } else { right },
            }
        }
    }

    /// Fits on `rows` (indices into `data`, repeats allowed), splitting only on
    /// `features`.
    fn fit(data: &[Sample], rows: Vec<usize>, features: &[usize], params: TreeParams) -> Self {
        let mut tree = RegressionTree { nodes: Vec::new() };
        tree.grow(data, rows, features, params, 0);
        tree
    }

    fn grow(&mut self, data: &[Sample], rows: Vec<usize>, features: &[usize], params: TreeParams, depth: usize) -> usize {
        let at = self.nodes.len();
        let n = rows.len();
        let positives: f64 = rows.iter().map(|&i| data[i].y as f64).sum();
        let mean = if n == 0 { 0.0 } else { positives / n as f64 };
        self.nodes.push(TreeNode::Leaf { value: mean });

        let pure = positives == 0.0 || positives == n as f64;
        if depth >= params.max_depth || n < 2 * params.min_leaf || pure {
            return at;
        }
        let Some((feature, threshold)) = best_split(data, &rows, features, params.min_leaf) else {
            return at;
        };
        let (left_rows, right_rows): (Vec<usize>, Vec<usize>) =
            rows.into_iter().partition(|&i| data[i].x[feature] <= threshold);
        let left = self.grow(data, left_rows, features, params, depth + 1);
        let right = self.grow(data, right_rows, features, params, depth + 1);
        self.nodes[at] = TreeNode::Split {
            feature,
            threshold,
            left,
            right,
        };
        at
    }

    fn validate(&self, dim: usize) -> bool {
        !self.nodes.is_empty()
            && self.nodes.iter().enumerate().all(|(i, node)| match *node {
                TreeNode::Leaf { value } => value.is_finite(),
                TreeNode::Split {
                    feature, left, right, ..
                } => feature < dim && left > i && right > i && left < self.nodes.len() && right < self.nodes.len(),
            })
    }
}

/// Squared-error split search over midpoints of sorted distinct values.
/// Features are scanned in the given order and thresholds in ascending
/// order; only a strictly better split replaces the incumbent.
fn best_split(data: &[Sample], rows: &[usize], features: &[usize], min_leaf: usize) -> Option<(usize, f64)> {
    let n = rows.len();
    let total: f64 = rows.iter().map(|&i| data[i].y as f64).sum();
    let parent_score = total * total / n as f64;
    let mut best: Option<(usize, f64)> = None;
    let mut best_score = parent_score + 1e-12;

    let mut sorted = rows.to_vec();
    for &f in features {
        sorted.sort_by(|&a, &b| data[a].x[f].total_cmp(&data[b].x[f]));
        let mut left_sum = 0.0;
        for split_at in 1..n {
            left_sum += data[sorted[split_at - 1]].y as f64;
            let lo = data[sorted[split_at - 1]].x[f];
            let hi = data[sorted[split_at]].x[f];
            if lo == hi || split_at < min_leaf || n - split_at < min_leaf {
                continue;
            }
            let right_sum = total - left_sum;
            let score = left_sum * left_sum / split_at as f64 + right_sum * right_sum / (n - split_at) as f64;
            if score > best_score {
                best_score = score;
                let mid = lo + (hi - lo) / 2.0;
                best = Some((f, if mid < hi { mid } else { lo }));
            }
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleMember {
    /// Features this member may split on; `None` means all of them.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features: Option<Vec<usize>>,
    pub tree: RegressionTree,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum FittedParams {
    Logistic {
        weights: Vec<f64>,
        bias: f64,
    },
    Tree {
        tree: RegressionTree,
    },
    Ensemble {
        members: Vec<EnsembleMember>,
    },
    LeastSquares {
        intercept: f64,
        coefficients: Vec<f64>,
        /// Set when the normal equations were singular and a ridge term was added.
        ridge_fallback: bool,
    },
    Knn {
        k: usize,
        points: Vec<Vec<f64>>,
        labels: Vec<Class>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainedModel {
    pub spec: ModelSpec,
    pub dim: usize,
    pub fitted: FittedParams,
}

impl TrainedModel {
    fn raw(&self, x: &[f64]) -> f64 {
        match &self.fitted {
            FittedParams::Logistic { weights, bias } => sigmoid(dot(weights, x) + bias),
            FittedParams::Tree { tree } => tree.predict(x),
            FittedParams::Ensemble { members } => {
                members.iter().map(|m| m.tree.predict(x)).sum::<f64>() / members.len() as f64
            }
            FittedParams::LeastSquares {
                intercept,
                coefficients,
                ..
            } => intercept + dot(coefficients, x),
            FittedParams::Knn { k, points, labels } => knn_mean(points, labels, *k, x),
        }
    }

    /// Individual member scores for ensemble families, in member order.
    pub fn member_predictions(&self, scaled_features: &[f64]) -> Result<Option<Vec<f64>>> {
        self.check_dim(scaled_features)?;
        Ok(match &self.fitted {
            FittedParams::Ensemble { members } => {
                Some(members.iter().map(|m| m.tree.predict(scaled_features)).collect())
            }
            _ => None,
        })
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: x.len(),
            });
        }
        Ok(())
    }

    pub(crate) fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        let bad = |what: &str| Err(Error::BundleLoad(format!("model `{}`: {what}", self.spec.id)));
        let ok = match &self.fitted {
            FittedParams::Logistic { weights, bias } => weights.len() == self.dim && bias.is_finite(),
            FittedParams::Tree { tree } => tree.validate(self.dim),
            FittedParams::Ensemble { members } => {
                !members.is_empty()
                    && members.iter().all(|m| {
                        m.tree.validate(self.dim)
                            && m.features.as_ref().is_none_or(|fs| fs.iter().all(|&f| f < self.dim))
                    })
            }
            FittedParams::LeastSquares {
                intercept,
                coefficients,
                ..
            } => coefficients.len() == self.dim && intercept.is_finite(),
            FittedParams::Knn { k, points, labels } => {
                *k >= 1
                    && !points.is_empty()
                    && points.len() == labels.len()
                    && points.iter().all(|p| p.len() == self.dim)
                    && labels.iter().all(|&l| l <= 1)
            }
        };
        if ok {
            Ok(())
        } else {
            bad("fitted parameters are inconsistent")
        }
    }
}

impl Predictor for TrainedModel {
    fn id(&self) -> &str {
        &self.spec.id
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn predict(&self, scaled_features: &[f64]) -> Result<f64> {
        self.check_dim(scaled_features)?;
        let raw = self.raw(scaled_features);
        Ok(if raw.is_nan() { 0.5 } else { raw.clamp(0.0, 1.0) })
    }
}

pub fn predict(model: &TrainedModel, scaled_features: &[f64]) -> Result<f64> {
    model.predict(scaled_features)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn knn_mean(points: &[Vec<f64>], labels: &[Class], k: usize, x: &[f64]) -> f64 {
    let mut by_distance: Vec<(f64, usize)> = points
        .iter()
        .enumerate()
        .map(|(i, p)| (p.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>(), i))
        .collect();
    let k = k.min(by_distance.len());
    let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    if k < by_distance.len() {
        by_distance.select_nth_unstable_by(k - 1, cmp);
    }
    by_distance[..k].iter().map(|&(_, i)| labels[i] as f64).sum::<f64>() / k as f64
}

/// Scales `train` and fits `spec` on it.
pub fn train_model(spec: &ModelSpec, train: &[PatientRecord], scaler: &FeatureScaler) -> Result<TrainedModel> {
    let samples = scaled_samples(train, scaler)?;
    fit(spec, &samples)
}

/// Fits `spec` on already-scaled samples.
pub fn fit(spec: &ModelSpec, samples: &[Sample]) -> Result<TrainedModel> {
    let resolved = spec.resolve()?;
    let first = samples.first().ok_or(Error::EmptyDataset)?;
    let dim = first.x.len();
    if let Some(bad) = samples.iter().find(|s| s.x.len() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: bad.x.len(),
        });
    }
    let all_rows = || (0..samples.len()).collect::<Vec<_>>();
    let all_features: Vec<usize> = (0..dim).collect();

    let fitted = match resolved {
        Resolved::Logistic { learning_rate, epochs } => fit_logistic(samples, learning_rate, epochs),
        Resolved::Tree(params) => FittedParams::Tree {
            tree: RegressionTree::fit(samples, all_rows(), &all_features, params),
        },
        Resolved::Bagging { tree, size, bootstrap } => {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            let n = samples.len();
            let members = (0..size)
                .map(|_| {
                    let rows = if bootstrap {
                        (0..n).map(|_| rng.random_range(0..n)).collect()
                    } else {
                        all_rows()
                    };
                    EnsembleMember {
                        features: None,
                        tree: RegressionTree::fit(samples, rows, &all_features, tree),
                    }
                })
                .collect();
            FittedParams::Ensemble { members }
        }
        Resolved::Subspace { tree, size, fraction } => {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            let take = ((fraction * dim as f64).round() as usize).clamp(1, dim);
            let members = (0..size)
                .map(|_| {
                    let mut features = index::sample(&mut rng, dim, take).into_vec();
                    features.sort_unstable();
                    let tree = RegressionTree::fit(samples, all_rows(), &features, tree);
                    EnsembleMember {
                        features: Some(features),
                        tree,
                    }
                })
                .collect();
            FittedParams::Ensemble { members }
        }
        Resolved::LeastSquares => fit_least_squares(&spec.id, samples),
        Resolved::Knn { k } => FittedParams::Knn {
            k,
            points: samples.iter().map(|s| s.x.clone()).collect(),
            labels: samples.iter().map(|s| s.y).collect(),
        },
    };
    Ok(TrainedModel {
        spec: spec.clone(),
        dim,
        fitted,
    })
}

/// Trains every spec, in parallel when allowed. Output order matches `specs`.
pub fn train_roster(
    specs: &[ModelSpec],
    train: &[PatientRecord],
    scaler: &FeatureScaler,
    threads: Threads,
) -> Result<Vec<TrainedModel>> {
    let samples = scaled_samples(train, scaler)?;
    par::try_map(specs, threads, |spec| fit(spec, &samples))
}

/// Full-batch gradient descent on mean log-loss from zero weights.
fn fit_logistic(samples: &[Sample], learning_rate: f64, epochs: usize) -> FittedParams {
    let dim = samples[0].x.len();
    let n = samples.len() as f64;
    let mut weights = vec![0.0; dim];
    let mut bias = 0.0;
    let mut grad = vec![0.0; dim];
    for _ in 0..epochs {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut grad_bias = 0.0;
        for s in samples {
            let err = sigmoid(dot(&weights, &s.x) + bias) - s.y as f64;
            for (g, x) in grad.iter_mut().zip(&s.x) {
                *g += err * x;
            }
            grad_bias += err;
        }
        for (w, g) in weights.iter_mut().zip(&grad) {
            *w -= learning_rate * g / n;
        }
        bias -= learning_rate * grad_bias / n;
    }
    FittedParams::Logistic { weights, bias }
}

fn fit_least_squares(id: &str, samples: &[Sample]) -> FittedParams {
    let p = samples[0].x.len() + 1;
    let mut gram = vec![vec![0.0; p]; p];
    let mut rhs = vec![0.0; p];
    let mut row = vec![0.0; p];
    for s in samples {
        row[0] = 1.0;
        row[1..].copy_from_slice(&s.x);
        for i in 0..p {
            rhs[i] += row[i] * s.y as f64;
            for j in 0..p {
                gram[i][j] += row[i] * row[j];
            }
        }
    }
    let (beta, ridge_fallback) = match solve(gram.clone(), rhs.clone()) {
        Some(beta) => (beta, false),
        None => {
            log::warn!("model `{id}`: singular normal equations, refitting with ridge λ = {RIDGE_FALLBACK_LAMBDA}");
            for (i, r) in gram.iter_mut().enumerate() {
                r[i] += RIDGE_FALLBACK_LAMBDA;
            }
            let beta = solve(gram, rhs).unwrap_or_else(|| vec![0.0; p]);
            (beta, true)
        }
    };
    FittedParams::LeastSquares {
        intercept: beta[0],
        coefficients: beta[1..].to_vec(),
        ridge_fallback,
    }
}

/// Gaussian elimination with partial pivoting; `None` if numerically singular.
fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    let scale = (0..n).map(|i| a[i][i].abs()).fold(0.0, f64::max).max(1.0);
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[pivot][col].abs() <= 1e-10 * scale {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for r in col + 1..n {
            let factor = a[r][col] / a[col][col];
            if factor != 0.0 {
                let (upper, lower) = a.split_at_mut(r);
                for (dst, src) in lower[0][col..].iter_mut().zip(&upper[col][col..]) {
                    *dst -= factor * src;
                }
                b[r] -= factor * b[col];
            }
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let tail: f64 = (i + 1..n).map(|j| a[i][j] * x[j]).sum();
        x[i] = (b[i] - tail) / a[i][i];
    }
    x.iter().all(|v| v.is_finite()).then_some(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(x: Vec<f64>, y: Class) -> Sample {
        Sample { x, y }
    }

    /// 40 points on a 2-D grid, label = x0 > 0.5 with a few flips.
    fn grid() -> Vec<Sample> {
        let mut out = Vec::new();
        for i in 0..8 {
            for j in 0..5 {
                let x0 = i as f64 / 7.0;
                let x1 = j as f64 / 4.0;
                let mut y = (x0 > 0.5) as Class;
                if (i + j) % 7 == 0 {
                    y = 1 - y;
                }
                out.push(sample(vec![x0, x1], y));
            }
        }
        out
    }

    #[test]
    fn default_roster_has_25_sorted_unique_ids() {
        let specs = build_roster(&RosterConfig::default()).unwrap();
        assert_eq!(specs.len(), 25);
        let ids: Vec<&str> = specs.iter().map(|s| s.id.as_str()).collect();
        let mut sorted = ids.clone();
        sorted.sort();
        assert_eq!(ids, sorted);
        let bagging: Vec<&str> = ids.iter().copied().filter(|i| i.starts_with("bagging-")).collect();
        assert_eq!(
            bagging,
            ["bagging-A", "bagging-B", "bagging-C", "bagging-D", "bagging-E", "bagging-F", "bagging-G", "bagging-H", "bagging-I"]
        );
        assert_eq!(ids.iter().filter(|i| i.starts_with("subspace-")).count(), 10);
        assert_eq!(specs.iter().filter(|s| s.family == Family::Knn).count(), 2);
        assert_eq!(specs.iter().filter(|s| s.family == Family::Tree).count(), 2);
    }

    #[test]
    fn single_entry_roster() {
        let cfg = RosterConfig {
            entries: vec![single(Family::Logistic, "lr", Hyperparameters::default())],
        };
        let specs = build_roster(&cfg).unwrap();
        assert_eq!(specs.len(), 1);
        assert_eq!(specs[0].id, "lr");
    }

    #[test]
    fn roster_errors() {
        let dup = RosterConfig {
            entries: vec![
                single(Family::Logistic, "m", Hyperparameters::default()),
                single(Family::LeastSquares, "m", Hyperparameters::default()),
            ],
        };
        assert!(matches!(build_roster(&dup), Err(Error::DuplicateModelId(id)) if id == "m"));

        let bad_k = RosterConfig {
            entries: vec![single(
                Family::Knn,
                "knn",
                Hyperparameters {
                    k: Some(0),
                    ..Default::default()
                },
            )],
        };
        assert!(matches!(build_roster(&bad_k), Err(Error::InvalidHyperparameter { .. })));

        let bad_fraction = ModelSpec::new("s", Family::RandomSubspace).with_params(Hyperparameters {
            subspace_fraction: Some(1.5),
            ..Default::default()
        });
        assert!(bad_fraction.validate().is_err());

        let misplaced = ModelSpec::new("t", Family::Tree).with_params(Hyperparameters {
            k: Some(3),
            ..Default::default()
        });
        assert!(misplaced.validate().is_err());
        assert!(ModelSpec::new("a,b", Family::Tree).validate().is_err());
    }

    #[test]
    fn least_squares_interpolates_an_exact_linear_label() {
        let samples: Vec<Sample> = (0..10).map(|i| sample(vec![(i % 2) as f64], (i % 2) as Class)).collect();
        let model = fit(&ModelSpec::new("ls", Family::LeastSquares), &samples).unwrap();
        for s in &samples {
            assert!((model.predict(&s.x).unwrap() - s.y as f64).abs() < 1e-9);
        }
        let FittedParams::LeastSquares { ridge_fallback, .. } = model.fitted else { unreachable!() };
        assert!(!ridge_fallback);
    }

    #[test]
    fn least_squares_falls_back_to_ridge_on_collinear_features() {
        let samples: Vec<Sample> = (0..10)
            .map(|i| {
                let v = i as f64 / 9.0;
                sample(vec![v, v], (i > 4) as Class)
            })
            .collect();
        let model = fit(&ModelSpec::new("ls", Family::LeastSquares), &samples).unwrap();
        let FittedParams::LeastSquares { ridge_fallback, .. } = &model.fitted else { unreachable!() };
        assert!(ridge_fallback);
        assert!(model.predict(&[0.5, 0.5]).unwrap().is_finite());
    }

    #[test]
    fn least_squares_output_is_clamped() {
        let model = TrainedModel {
            spec: ModelSpec::new("ls", Family::LeastSquares),
            dim: 1,
            fitted: FittedParams::LeastSquares {
                intercept: 1.3,
                coefficients: vec![0.0],
                ridge_fallback: false,
            },
        };
        assert_eq!(model.predict(&[0.2]).unwrap(), 1.0);
    }

    #[test]
    fn knn_identities() {
        let data = grid();
        let one = fit(&ModelSpec::new("k1", Family::Knn).with_params(Hyperparameters { k: Some(1), ..Default::default() }), &data).unwrap();
        for s in &data {
            assert_eq!(one.predict(&s.x).unwrap(), s.y as f64);
        }
        let all = fit(
            &ModelSpec::new("kn", Family::Knn).with_params(Hyperparameters {
                k: Some(data.len()),
                ..Default::default()
            }),
            &data,
        )
        .unwrap();
        let mean = data.iter().map(|s| s.y as f64).sum::<f64>() / data.len() as f64;
        for q in [[0.0, 0.0], [0.3, 0.9], [1.0, 0.5]] {
            assert!((all.predict(&q).unwrap() - mean).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_weight_logistic_predicts_one_half() {
        let model = TrainedModel {
            spec: ModelSpec::new("lr", Family::Logistic),
            dim: 3,
            fitted: FittedParams::Logistic {
                weights: vec![0.0; 3],
                bias: 0.0,
            },
        };
        assert_eq!(model.predict(&[0.1, 0.9, 0.4]).unwrap(), 0.5);
    }

    #[test]
    fn logistic_learns_the_grid_direction() {
        let model = fit(&ModelSpec::new("lr", Family::Logistic), &grid()).unwrap();
        assert!(model.predict(&[1.0, 0.5]).unwrap() > model.predict(&[0.0, 0.5]).unwrap());
    }

    #[test]
    fn constant_tree_predicts_its_leaf() {
        let model = TrainedModel {
            spec: ModelSpec::new("t", Family::Tree),
            dim: 2,
            fitted: FittedParams::Tree {
                tree: RegressionTree::constant(0.25),
            },
        };
        assert_eq!(model.predict(&[0.0, 1.0]).unwrap(), 0.25);
        assert_eq!(model.predict(&[0.7, 0.2]).unwrap(), 0.25);
    }

    #[test]
    fn tree_finds_the_obvious_split() {
        let data: Vec<Sample> = (0..20).map(|i| sample(vec![i as f64 / 19.0], (i >= 10) as Class)).collect();
        let model = fit(&ModelSpec::new("t", Family::Tree), &data).unwrap();
        let FittedParams::Tree { tree } = &model.fitted else { unreachable!() };
        match tree.nodes[0] {
            TreeNode::Split { feature, threshold, .. } => {
                assert_eq!(feature, 0);
                assert!((threshold - 9.5 / 19.0).abs() < 1e-12);
            }
            _ => panic!("expected a split at the root"),
        }
        assert_eq!(model.predict(&[0.0]).unwrap(), 0.0);
        assert_eq!(model.predict(&[1.0]).unwrap(), 1.0);
    }

    #[test]
    fn tree_respects_min_leaf() {
        // a lone positive can never be isolated when leaves need five rows
        let data: Vec<Sample> = (0..12).map(|i| sample(vec![i as f64], (i == 0) as Class)).collect();
        let model = fit(&ModelSpec::new("t", Family::Tree), &data).unwrap();
        let FittedParams::Tree { tree } = &model.fitted else { unreachable!() };
        for node in &tree.nodes {
            if let TreeNode::Leaf { value } = node {
                assert!(*value <= 0.2 + 1e-12);
            }
        }
    }

    #[test]
    fn single_unbootstrapped_bag_equals_a_tree() {
        let data = grid();
        let tree = fit(&ModelSpec::new("t", Family::Tree), &data).unwrap();
        let bag = fit(
            &ModelSpec::new("b", Family::Bagging).with_seed(9).with_params(Hyperparameters {
                ensemble_size: Some(1),
                bootstrap: Some(false),
                ..Default::default()
            }),
            &data,
        )
        .unwrap();
        for s in &data {
            assert_eq!(bag.predict(&s.x).unwrap(), tree.predict(&s.x).unwrap());
        }
    }

    #[test]
    fn ensembles_predict_the_member_mean() {
        let data = grid();
        for family in [Family::Bagging, Family::RandomSubspace] {
            let model = fit(&ModelSpec::new("e", family).with_seed(4), &data).unwrap();
            for s in &data {
                let members = model.member_predictions(&s.x).unwrap().unwrap();
                assert_eq!(members.len(), DEFAULT_ENSEMBLE_SIZE);
                let mean = members.iter().sum::<f64>() / members.len() as f64;
                assert!((model.predict(&s.x).unwrap() - mean).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn subspace_members_use_their_feature_subset() {
        let data = grid();
        let model = fit(
            &ModelSpec::new("s", Family::RandomSubspace).with_seed(1).with_params(Hyperparameters {
                subspace_fraction: Some(0.5),
                ..Default::default()
            }),
            &data,
        )
        .unwrap();
        let FittedParams::Ensemble { members } = &model.fitted else { unreachable!() };
        for m in members {
            let allowed = m.features.as_ref().unwrap();
            assert_eq!(allowed.len(), 1);
            for node in &m.tree.nodes {
                if let TreeNode::Split { feature, .. } = node {
                    assert!(allowed.contains(feature));
                }
            }
        }
    }

    #[test]
    fn training_is_deterministic() {
        let data = grid();
        for spec in build_roster(&RosterConfig::default()).unwrap() {
            assert_eq!(fit(&spec, &data).unwrap(), fit(&spec, &data).unwrap(), "{}", spec.id);
        }
    }

    #[test]
    fn predict_checks_dimension() {
        let model = fit(&ModelSpec::new("t", Family::Tree), &grid()).unwrap();
        assert!(matches!(
            model.predict(&[0.5]),
            Err(Error::DimensionMismatch { expected: 2, got: 1 })
        ));
    }

    #[test]
    fn empty_training_set_is_rejected() {
        assert!(matches!(fit(&ModelSpec::new("t", Family::Tree), &[]), Err(Error::EmptyDataset)));
    }

    #[test]
    fn roster_config_json_round_trips() {
        let cfg = RosterConfig::default();
        let text = serde_json::to_string_pretty(&cfg).unwrap();
        assert_eq!(serde_json::from_str::<RosterConfig>(&text).unwrap(), cfg);
    }
}
