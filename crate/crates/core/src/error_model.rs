//! Per-model error clusters: the training set partitioned by
//! (actual class, predicted class), one centroid per partition, and the
//! distance vector of a query to those four centroids.

use serde::{Deserialize, Serialize};

use crate::consolidator::binarize;
use crate::dataset::{scaled_samples, Class, FeatureScaler, PatientRecord, Sample};
use crate::error::{Error, Result};
use crate::learners::{fit, ModelSpec, Predictor};

/// `(actual, predicted)` outcome category.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Category {
    /// true negative
    C00,
    /// false positive
    C01,
    /// false negative
    C10,
    /// true positive
    C11,
}

impl Category {
    pub const ALL: [Category; 4] = [Category::C00, Category::C01, Category::C10, Category::C11];

    pub fn of(actual: Class, predicted: Class) -> Category {
        match (actual, predicted) {
            (0, 0) => Category::C00,
            (0, _) => Category::C01,
            (_, 0) => Category::C10,
            _ => Category::C11,
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Cluster {
    /// `None` exactly when `count == 0`.
    pub centroid: Option<Vec<f64>>,
    pub count: usize,
}

impl Cluster {
    fn empty() -> Self {
        Cluster {
            centroid: None,
            count: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ErrorClusterSet {
    pub model_id: String,
    pub c00: Cluster,
    pub c01: Cluster,
    pub c10: Cluster,
    pub c11: Cluster,
}

impl ErrorClusterSet {
    pub fn cluster(&self, category: Category) -> &Cluster {
        match category {
            Category::C00 => &self.c00,
            Category::C01 => &self.c01,
            Category::C10 => &self.c10,
            Category::C11 => &self.c11,
        }
    }

    pub fn count(&self, category: Category) -> usize {
        self.cluster(category).count
    }

    pub fn total_count(&self) -> usize {
        Category::ALL.iter().map(|&c| self.count(c)).sum()
    }

    /// Dimension of the non-empty centroids (all agree); `None` if every
    /// cluster is empty.
    pub fn dim(&self) -> Option<usize> {
        Category::ALL
            .iter()
            .find_map(|&c| self.cluster(c).centroid.as_ref().map(Vec::len))
    }

    /// Builds the set from per-sample predicted classes.
    pub fn from_assignments(model_id: &str, samples: &[Sample], predicted: &[Class]) -> Result<Self> {
        let dim = samples.first().ok_or(Error::EmptyDataset)?.x.len();
        if samples.len() != predicted.len() {
            return Err(Error::LengthMismatch {
                left: samples.len(),
                right: predicted.len(),
            });
        }
        let mut sums = [(); 4].map(|_| vec![0.0; dim]);
        let mut counts = [0usize; 4];
        for (s, &p) in samples.iter().zip(predicted) {
            if s.x.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: s.x.len(),
                });
            }
            let c = Category::of(s.y, p).index();
            counts[c] += 1;
            for (acc, v) in sums[c].iter_mut().zip(&s.x) {
                *acc += v;
            }
        }
        let mut clusters = sums.into_iter().zip(counts).map(|(mut sum, count)| {
            if count == 0 {
                return Cluster::empty();
            }
            for v in sum.iter_mut() {
                // means of [0,1] values may overshoot by an ulp
                *v = (*v / count as f64).clamp(0.0, 1.0);
            }
            Cluster {
                centroid: Some(sum),
                count,
            }
        });
        let mut next = || clusters.next().expect("four clusters");
        Ok(ErrorClusterSet {
            model_id: model_id.to_string(),
            c00: next(),
            c01: next(),
            c10: next(),
            c11: next(),
        })
    }

    pub(crate) fn validate(&self, dim: usize) -> Result<()> {
        for c in Category::ALL {
            let cl = self.cluster(c);
            let ok = match &cl.centroid {
                None => cl.count == 0,
                Some(v) => cl.count > 0 && v.len() == dim && v.iter().all(|x| (0.0..=1.0).contains(x)),
            };
            if !ok {
                return Err(Error::BundleLoad(format!(
                    "error clusters of `{}`: {c:?} is inconsistent",
                    self.model_id
                )));
            }
        }
        Ok(())
    }
}

/// Distances of one query to a model's four cluster centroids. Empty
/// clusters are at `f64::INFINITY`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistanceVector {
    pub d00: f64,
    pub d01: f64,
    pub d10: f64,
    pub d11: f64,
}

impl DistanceVector {
    pub fn new(d00: f64, d01: f64, d10: f64, d11: f64) -> Self {
        DistanceVector { d00, d01, d10, d11 }
    }

    pub fn get(&self, category: Category) -> f64 {
        match category {
            Category::C00 => self.d00,
            Category::C01 => self.d01,
            Category::C10 => self.d10,
            Category::C11 => self.d11,
        }
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.d00, self.d01, self.d10, self.d11]
    }

    pub fn is_valid(&self) -> bool {
        self.as_array().iter().all(|d| *d >= 0.0 && (d.is_finite() || *d == f64::INFINITY))
    }
}

/// Assigns every training record to its category under `model` (prediction
/// thresholded at 0.5) and averages the scaled features per category.
pub fn build_error_clusters(
    model: &dyn Predictor,
    train: &[PatientRecord],
    scaler: &FeatureScaler,
) -> Result<ErrorClusterSet> {
    let samples = scaled_samples(train, scaler)?;
    clusters_from_samples(model, &samples)
}

pub fn clusters_from_samples(model: &dyn Predictor, samples: &[Sample]) -> Result<ErrorClusterSet> {
    if samples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let predicted = samples
        .iter()
        .map(|s| model.predict(&s.x).and_then(binarize))
        .collect::<Result<Vec<_>>>()?;
    ErrorClusterSet::from_assignments(model.id(), samples, &predicted)
}

/// Out-of-fold variant: each sample is categorised by a model of the same
/// spec trained without that sample's fold (fold = index mod `folds`).
pub fn clusters_out_of_fold(spec: &ModelSpec, samples: &[Sample], folds: usize) -> Result<ErrorClusterSet> {
    if samples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if folds < 2 || samples.len() < folds {
        return Err(Error::InvalidParams(format!(
            "{folds} folds over {} samples",
            samples.len()
        )));
    }
    let mut predicted = vec![0; samples.len()];
    for fold in 0..folds {
        let train: Vec<Sample> = samples
            .iter()
            .enumerate()
            .filter(|(i, _)| i % folds != fold)
            .map(|(_, s)| s.clone())
            .collect();
        let model = fit(spec, &train)?;
        for (i, s) in samples.iter().enumerate().filter(|(i, _)| i % folds == fold) {
            predicted[i] = binarize(model.predict(&s.x)?)?;
        }
    }
    ErrorClusterSet::from_assignments(&spec.id, samples, &predicted)
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

pub fn distance_vector(clusters: &ErrorClusterSet, scaled_features: &[f64]) -> Result<DistanceVector> {
    if let Some(dim) = clusters.dim() {
        if dim != scaled_features.len() {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: scaled_features.len(),
            });
        }
    }
    let d = |c: Category| {
        clusters
            .cluster(c)
            .centroid
            .as_ref()
            .map_or(f64::INFINITY, |centroid| euclidean(centroid, scaled_features))
    };
    Ok(DistanceVector::new(
        d(Category::C00),
        d(Category::C01),
        d(Category::C10),
        d(Category::C11),
    ))
}
