#![allow(dead_code)]

use std::path::PathBuf;

use multimodel::dataset::{scaled_samples, Sample};
use multimodel::error_model::clusters_from_samples;
use multimodel::synth::half_plane;
use multimodel::{Class, ErrorClusterSet, Predictor, Result};

pub fn facsimile_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data/framingham_facsimile.csv")
}

pub fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Where a [`RegionalExpert`] makes its mistakes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ErrorLayout {
    /// Contiguous strips: on its weak half the expert behaves as if the
    /// class boundary were shifted away from its strong half, and on its
    /// strong half it misses a thin strip at the far edge.
    Banded,
    /// Each point is missed independently (seeded hash of the point), so
    /// right and wrong answers are spread evenly over each half.
    Scattered,
}

/// Hand-specified model for the two-feature half-plane data: right on a
/// fraction `strong` of its own half and `weak` of the other.
pub struct RegionalExpert {
    pub id: String,
    pub strong_left: bool,
    pub strong: f64,
    pub weak: f64,
    pub layout: ErrorLayout,
    pub seed: u64,
}

impl RegionalExpert {
    pub fn pair(layout: ErrorLayout, seed: u64) -> [RegionalExpert; 2] {
        let expert = |id: &str, strong_left, seed| RegionalExpert {
            id: id.into(),
            strong_left,
            strong: 0.95,
            weak: 0.55,
            layout,
            seed,
        };
        [expert("expert-a", true, seed), expert("expert-b", false, seed ^ 0xb0b)]
    }

    pub fn is_correct(&self, x: &[f64]) -> bool {
        let own_half = (x[0] < 0.5) == self.strong_left;
        let p = if own_half { self.strong } else { self.weak };
        match self.layout {
            ErrorLayout::Banded => {
                // distance from the boundary, 0 ..= 0.5
                let depth = (x[0] - 0.5).abs();
                if own_half {
                    depth <= 0.5 * p
                } else {
                    depth >= 0.5 * (1.0 - p)
                }
            }
            ErrorLayout::Scattered => {
                let h = splitmix(x[0].to_bits() ^ splitmix(x[1].to_bits() ^ self.seed));
                ((h >> 11) as f64 / (1u64 << 53) as f64) < p
            }
        }
    }

    pub fn predicted_class(&self, x: &[f64]) -> Class {
        let truth = half_plane(x[0]);
        if self.is_correct(x) {
            truth
        } else {
            1 - truth
        }
    }
}

impl Predictor for RegionalExpert {
    fn id(&self) -> &str {
        &self.id
    }

    fn dim(&self) -> usize {
        2
    }

    fn predict(&self, x: &[f64]) -> Result<f64> {
        Ok(if self.predicted_class(x) == 1 { 0.9 } else { 0.1 })
    }
}

/// Regional features already lie in [0, 1], so they are used unscaled.
pub fn identity_samples(records: &[multimodel::PatientRecord]) -> Vec<Sample> {
    let scaler = multimodel::FeatureScaler {
        min: vec![0.0, 0.0],
        max: vec![1.0, 1.0],
    };
    scaled_samples(records, &scaler).expect("regional records are labelled and 2-D")
}

pub fn clusters_for<P: Predictor>(models: &[P], samples: &[Sample]) -> Vec<ErrorClusterSet> {
    models
        .iter()
        .map(|m| clusters_from_samples(m, samples).expect("non-empty training set"))
        .collect()
}

pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    values[values.len() / 2]
}
