//! Contention and consolidation of per-model predictions for one patient.
//!
//! A model takes part in the final prediction only when the query lies
//! closer to the cluster of training records the model got right for its
//! predicted class than to the cluster it got wrong. Participants are then
//! combined with normalised reciprocal-distance weights; if nobody
//! participates the plain mean of all predictions is used instead.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::dataset::Class;
use crate::error::{Error, Result};
use crate::error_model::DistanceVector;

/// Scores at or above this value are class 1.
pub const CLASS_THRESHOLD: f64 = 0.5;
/// Distances are floored here before inversion.
pub const DISTANCE_FLOOR: f64 = 1e-9;

pub fn binarize(rho: f64) -> Result<Class> {
    if !(0.0..=1.0).contains(&rho) {
        return Err(Error::OutOfRange(rho));
    }
    Ok((rho >= CLASS_THRESHOLD) as Class)
}

/// One model's opinion about one patient, as emitted by the mapper.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionVector {
    pub patient_id: String,
    pub model_id: String,
    pub distances: DistanceVector,
    pub rho: f64,
}

impl PredictionVector {
    fn predicted_class(&self) -> Class {
        (self.rho >= CLASS_THRESHOLD) as Class
    }
}

/// Strict comparison; ties (including two infinities) exclude the model.
pub fn participates(pv: &PredictionVector) -> bool {
    let d = &pv.distances;
    match pv.predicted_class() {
        0 => d.d00 < d.d01,
        _ => d.d11 < d.d10,
    }
}

/// Distance to the correct-prediction cluster of the model's own class.
pub fn confidence_distance(pv: &PredictionVector) -> f64 {
    match pv.predicted_class() {
        0 => pv.distances.d00,
        _ => pv.distances.d11,
    }
}

/// Normalised inverse-distance weights: `w_i ∝ 1 / max(d_i, DISTANCE_FLOOR)`.
pub fn idw_weights(distances: &[f64]) -> Result<Vec<f64>> {
    if distances.is_empty() {
        return Err(Error::EmptyInput);
    }
    if let Some(bad) = distances.iter().find(|d| !(d.is_finite() && **d >= 0.0)) {
        return Err(Error::InvalidParams(format!("distance {bad} is not finite and non-negative")));
    }
    let inverse: Vec<f64> = distances.iter().map(|d| 1.0 / d.max(DISTANCE_FLOOR)).collect();
    let total: f64 = inverse.iter().sum();
    Ok(inverse.into_iter().map(|v| v / total).collect())
}

/// Uniform `1/n` weighting, i.e. the arithmetic mean.
pub fn consolidate_static(rhos: &[f64]) -> Result<f64> {
    if rhos.is_empty() {
        return Err(Error::EmptyInput);
    }
    if let Some(bad) = rhos.iter().find(|r| !(0.0..=1.0).contains(*r)) {
        return Err(Error::OutOfRange(*bad));
    }
    let weight = 1.0 / rhos.len() as f64;
    Ok(weighted_sum(rhos, &vec![weight; rhos.len()]))
}

/// `Σ w_i ρ_i`, clamped into the hull of the inputs so rounding can never
/// push it outside.
fn weighted_sum(rhos: &[f64], weights: &[f64]) -> f64 {
    let sum: f64 = rhos.iter().zip(weights).map(|(r, w)| w * r).sum();
    let lo = rhos.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = rhos.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    sum.clamp(lo, hi)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Static,
    Dynamic,
    DynamicFallback,
    /// The reducer saw a group of the wrong size and averaged what it had.
    IncompleteFallback,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Static => "static",
            Mode::Dynamic => "dynamic",
            Mode::DynamicFallback => "dynamic-fallback",
            Mode::IncompleteFallback => "incomplete-fallback",
        }
    }

    pub fn parse(s: &str) -> Option<Mode> {
        [Mode::Static, Mode::Dynamic, Mode::DynamicFallback, Mode::IncompleteFallback]
            .into_iter()
            .find(|m| m.as_str() == s)
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConsolidationResult {
    pub patient_id: String,
    pub rho: f64,
    pub class: Class,
    pub participants: BTreeSet<String>,
    pub weights: BTreeMap<String, f64>,
    pub mode: Mode,
}

impl ConsolidationResult {
    /// Number of models that won contention (zero for fallbacks).
    pub fn contention_winners(&self) -> usize {
        match self.mode {
            Mode::Dynamic => self.participants.len(),
            _ => 0,
        }
    }
}

fn check_group(pvs: &[PredictionVector]) -> Result<()> {
    let first = pvs.first().ok_or(Error::EmptyInput)?;
    let mut seen = BTreeSet::new();
    for pv in pvs {
        if pv.patient_id != first.patient_id {
            return Err(Error::MixedPatientIds(first.patient_id.clone(), pv.patient_id.clone()));
        }
        if !seen.insert(pv.model_id.as_str()) {
            return Err(Error::DuplicateModel {
                patient: pv.patient_id.clone(),
                model: pv.model_id.clone(),
            });
        }
        if !(0.0..=1.0).contains(&pv.rho) {
            return Err(Error::OutOfRange(pv.rho));
        }
        if !pv.distances.is_valid() {
            return Err(Error::InvalidParams(format!(
                "model `{}` has an invalid distance vector {:?}",
                pv.model_id, pv.distances
            )));
        }
    }
    Ok(())
}

/// Uniform mean over `pvs` (any size), tagged with `mode`.
pub(crate) fn static_result(pvs: &[PredictionVector], mode: Mode) -> Result<ConsolidationResult> {
    check_group(pvs)?;
    let mut sorted: Vec<&PredictionVector> = pvs.iter().collect();
    sorted.sort_by(|a, b| a.model_id.cmp(&b.model_id));
    let rhos: Vec<f64> = sorted.iter().map(|pv| pv.rho).collect();
    let rho = consolidate_static(&rhos)?;
    let weight = 1.0 / rhos.len() as f64;
    Ok(ConsolidationResult {
        patient_id: sorted[0].patient_id.clone(),
        rho,
        class: binarize(rho)?,
        participants: sorted.iter().map(|pv| pv.model_id.clone()).collect(),
        weights: sorted.iter().map(|pv| (pv.model_id.clone(), weight)).collect(),
        mode,
    })
}

/// Contention followed by inverse-distance consolidation for one patient.
///
/// Input order does not matter: the group is processed in model-id order.
pub fn consolidate_dynamic(pvs: &[PredictionVector], expected_model_count: usize) -> Result<ConsolidationResult> {
    check_group(pvs)?;
    if pvs.len() != expected_model_count {
        return Err(Error::IncompleteGroup {
            patient: pvs[0].patient_id.clone(),
            expected: expected_model_count,
            got: pvs.len(),
        });
    }
    let mut sorted: Vec<&PredictionVector> = pvs.iter().collect();
    sorted.sort_by(|a, b| a.model_id.cmp(&b.model_id));

    let winners: Vec<&PredictionVector> = sorted.iter().copied().filter(|pv| participates(pv)).collect();
    if winners.is_empty() {
        return static_result(pvs, Mode::DynamicFallback);
    }
    let distances: Vec<f64> = winners.iter().map(|pv| confidence_distance(pv)).collect();
    let weights = idw_weights(&distances)?;
    let rhos: Vec<f64> = winners.iter().map(|pv| pv.rho).collect();
    let rho = weighted_sum(&rhos, &weights);
    Ok(ConsolidationResult {
        patient_id: sorted[0].patient_id.clone(),
        rho,
        class: binarize(rho)?,
        participants: winners.iter().map(|pv| pv.model_id.clone()).collect(),
        weights: winners.iter().zip(&weights).map(|(pv, w)| (pv.model_id.clone(), *w)).collect(),
        mode: Mode::Dynamic,
    })
}

/// Fraction of positions where prediction and truth agree.
pub fn efficiency(predicted: &[Class], actual: &[Class]) -> Result<f64> {
    if predicted.len() != actual.len() {
        return Err(Error::LengthMismatch {
            left: predicted.len(),
            right: actual.len(),
        });
    }
    if predicted.is_empty() {
        return Err(Error::EmptyInput);
    }
    let correct = predicted.iter().zip(actual).filter(|(p, a)| p == a).count();
    Ok(correct as f64 / predicted.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    const INF: f64 = f64::INFINITY;

    fn pv(model: &str, rho: f64, d: [f64; 4]) -> PredictionVector {
        PredictionVector {
            patient_id: "p".into(),
            model_id: model.into(),
            distances: DistanceVector::new(d[0], d[1], d[2], d[3]),
            rho,
        }
    }

    #[test]
    fn binarize_boundaries() {
        assert_eq!(binarize(0.0).unwrap(), 0);
        assert_eq!(binarize(1.0).unwrap(), 1);
        assert_eq!(binarize(0.5).unwrap(), 1);
        assert_eq!(binarize(0.4999999).unwrap(), 0);
        assert!(matches!(binarize(1.2), Err(Error::OutOfRange(_))));
        assert!(binarize(f64::NAN).is_err());
    }

    #[test]
    fn participation_rule() {
        assert!(participates(&pv("m", 0.1, [0.2, 0.5, 1.0, 1.0])));
        assert!(!participates(&pv("m", 0.9, [1.0, 1.0, 0.3, 0.9])));
        assert!(participates(&pv("m", 0.9, [1.0, 1.0, INF, 0.4])));
        // ties exclude, including two empty clusters
        assert!(!participates(&pv("m", 0.1, [0.5, 0.5, 0.0, 0.0])));
        assert!(!participates(&pv("m", 0.9, [0.0, 0.0, INF, INF])));
        assert!(!participates(&pv("m", 0.1, [INF, 0.3, 0.0, 0.0])));
    }

    #[test]
    fn confidence_distance_selection() {
        let d = [0.3, 0.6, 0.1, 0.9];
        assert_eq!(confidence_distance(&pv("m", 0.2, d)), 0.3);
        assert_eq!(confidence_distance(&pv("m", 0.8, d)), 0.9);
        assert_eq!(confidence_distance(&pv("m", 0.5, [1.0, 1.0, 1.0, 2.0])), 2.0);
    }

    #[test]
    fn idw_examples() {
        let w = idw_weights(&[1.0, 3.0]).unwrap();
        assert!((w[0] - 0.75).abs() < 1e-15 && (w[1] - 0.25).abs() < 1e-15);
        for d in [1e-3, 0.7, 42.0] {
            let w = idw_weights(&[d; 4]).unwrap();
            assert!(w.iter().all(|x| (x - 0.25).abs() < 1e-15));
        }
        let w = idw_weights(&[0.0, 5.0]).unwrap();
        assert!((w[0] - 1.0).abs() < 1e-8 && w[1].abs() < 1e-8);
        assert!(matches!(idw_weights(&[]), Err(Error::EmptyInput)));
        assert!(idw_weights(&[INF]).is_err());
        assert!(idw_weights(&[-1.0]).is_err());
    }

    #[test]
    fn static_examples() {
        assert_eq!(consolidate_static(&[1.0, 1.0, 1.0]).unwrap(), 1.0);
        assert!((consolidate_static(&[1.0, 0.0, 1.0]).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        let rhos: Vec<f64> = (0..25).map(|i| i as f64 / 24.0).collect();
        assert!((consolidate_static(&rhos).unwrap() - 0.5).abs() < 1e-15);
        assert!(matches!(consolidate_static(&[]), Err(Error::EmptyInput)));
        assert!(consolidate_static(&[1.5]).is_err());
    }

    #[test]
    fn dynamic_two_model_hand_case() {
        let group = [pv("m1", 0.9, [1.0, 1.0, 0.8, 0.1]), pv("m2", 0.2, [0.7, 0.3, 1.0, 1.0])];
        let r = consolidate_dynamic(&group, 2).unwrap();
        assert_eq!(r.mode, Mode::Dynamic);
        assert_eq!(r.participants, BTreeSet::from(["m1".to_string()]));
        assert_eq!(r.weights["m1"], 1.0);
        assert_eq!(r.rho, 0.9);
        assert_eq!(r.class, 1);
    }

    #[test]
    fn dynamic_falls_back_to_the_mean() {
        let group = [pv("a", 0.9, [0.0, 0.0, 0.1, 0.5]), pv("b", 0.2, [0.7, 0.3, 0.0, 0.0])];
        let r = consolidate_dynamic(&group, 2).unwrap();
        assert_eq!(r.mode, Mode::DynamicFallback);
        assert!((r.rho - 0.55).abs() < 1e-15);
        assert_eq!(r.weights.values().copied().collect::<Vec<_>>(), vec![0.5, 0.5]);
        assert_eq!(r.contention_winners(), 0);
    }

    #[test]
    fn symmetric_participants_land_on_the_boundary() {
        let group = [pv("a", 1.0, [1.0, 1.0, 0.6, 0.2]), pv("b", 0.0, [0.2, 0.6, 1.0, 1.0])];
        let r = consolidate_dynamic(&group, 2).unwrap();
        assert_eq!(r.mode, Mode::Dynamic);
        assert_eq!(r.rho, 0.5);
        assert_eq!(r.class, 1);
    }

    #[test]
    fn dynamic_group_errors() {
        let a = pv("a", 0.4, [0.1, 0.2, 0.3, 0.4]);
        let mut other = a.clone();
        other.patient_id = "q".into();
        other.model_id = "b".into();
        assert!(matches!(
            consolidate_dynamic(&[a.clone(), other], 2),
            Err(Error::MixedPatientIds(..))
        ));
        assert!(matches!(
            consolidate_dynamic(&[a.clone(), a.clone()], 2),
            Err(Error::DuplicateModel { .. })
        ));
        assert!(matches!(
            consolidate_dynamic(&[a], 3),
            Err(Error::IncompleteGroup {
                expected: 3,
                got: 1,
                ..
            })
        ));
        assert!(matches!(consolidate_dynamic(&[], 0), Err(Error::EmptyInput)));
    }

    #[test]
    fn efficiency_examples() {
        assert_eq!(efficiency(&[0, 1, 1], &[0, 1, 1]).unwrap(), 1.0);
        assert_eq!(efficiency(&[1, 0], &[0, 1]).unwrap(), 0.0);
        assert_eq!(efficiency(&[1, 1, 0, 0], &[1, 1, 0, 1]).unwrap(), 0.75);
        assert!(matches!(efficiency(&[1], &[1, 0]), Err(Error::LengthMismatch { .. })));
        assert!(matches!(efficiency(&[], &[]), Err(Error::EmptyInput)));
    }

    #[test]
    fn mode_names_round_trip() {
        for m in [Mode::Static, Mode::Dynamic, Mode::DynamicFallback, Mode::IncompleteFallback] {
            assert_eq!(Mode::parse(m.as_str()), Some(m));
        }
    }
}
