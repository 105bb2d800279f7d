//! Best-single vs static vs dynamic comparison on a labelled test set.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::consolidator::{binarize, consolidate_dynamic, consolidate_static, efficiency, ConsolidationResult, Mode, PredictionVector};
use crate::dataset::{Class, PatientRecord};
use crate::error::{Error, Result};
use crate::error_model::ErrorClusterSet;
use crate::learners::Predictor;
use crate::par::{self, Threads};
use crate::pipeline::{score_record, KeyAssigner, ModelBundle};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelEfficiency {
    pub model_id: String,
    pub efficiency: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticipationStats {
    pub mean: f64,
    pub min: usize,
    pub max: usize,
    pub fallback_count: usize,
}

/// Efficiencies are fractions in `[0, 1]` rounded to four decimals; the
/// text view prints the same numbers as percentages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub test_size: usize,
    pub per_model: Vec<ModelEfficiency>,
    pub best_single: ModelEfficiency,
    pub static_efficiency: f64,
    pub dynamic_efficiency: f64,
    pub participation: ParticipationStats,
}

/// Unrounded outcome of an evaluation, kept for callers that need exact
/// ratios or the per-patient results.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub labels: Vec<Class>,
    pub per_model: Vec<(String, Vec<Class>)>,
    pub static_classes: Vec<Class>,
    pub dynamic: Vec<ConsolidationResult>,
}

impl Evaluation {
    pub fn dynamic_classes(&self) -> Vec<Class> {
        self.dynamic.iter().map(|r| r.class).collect()
    }

    pub fn best_single(&self) -> Result<(String, f64)> {
        let mut best: Option<(String, f64)> = None;
        for (id, classes) in &self.per_model {
            let e = efficiency(classes, &self.labels)?;
            if best.as_ref().is_none_or(|(_, b)| e > *b) {
                best = Some((id.clone(), e));
            }
        }
        best.ok_or(Error::EmptyInput)
    }

    pub fn static_efficiency(&self) -> Result<f64> {
        efficiency(&self.static_classes, &self.labels)
    }

    pub fn dynamic_efficiency(&self) -> Result<f64> {
        efficiency(&self.dynamic_classes(), &self.labels)
    }

    pub fn report(&self) -> Result<ComparisonReport> {
        let per_model = self
            .per_model
            .iter()
            .map(|(id, classes)| {
                Ok(ModelEfficiency {
                    model_id: id.clone(),
                    efficiency: round4(efficiency(classes, &self.labels)?),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let (best_id, best) = self.best_single()?;
        let winners: Vec<usize> = self.dynamic.iter().map(ConsolidationResult::contention_winners).collect();
        Ok(ComparisonReport {
            test_size: self.labels.len(),
            per_model,
            best_single: ModelEfficiency {
                model_id: best_id,
                efficiency: round4(best),
            },
            static_efficiency: round4(self.static_efficiency()?),
            dynamic_efficiency: round4(self.dynamic_efficiency()?),
            participation: ParticipationStats {
                mean: round4(winners.iter().sum::<usize>() as f64 / winners.len() as f64),
                min: winners.iter().copied().min().unwrap_or(0),
                max: winners.iter().copied().max().unwrap_or(0),
                fallback_count: self.dynamic.iter().filter(|r| r.mode != Mode::Dynamic).count(),
            },
        })
    }
}

pub fn round4(x: f64) -> f64 {
    (x * 1e4).round() / 1e4
}

/// Scores every scaled, labelled sample with each model and with both
/// consolidations. Inputs are quantised exactly as on the wire, so the
/// dynamic column agrees with the streaming pipeline.
pub fn evaluate_predictors<P: Predictor>(
    models: &[P],
    clusters: &[ErrorClusterSet],
    ids: &[String],
    scaled: &[Vec<f64>],
    labels: &[Class],
    threads: Threads,
) -> Result<Evaluation> {
    if models.len() != clusters.len() || models.is_empty() {
        return Err(Error::LengthMismatch {
            left: models.len(),
            right: clusters.len(),
        });
    }
    if scaled.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if scaled.len() != labels.len() || ids.len() != labels.len() {
        return Err(Error::LengthMismatch {
            left: scaled.len(),
            right: labels.len(),
        });
    }
    let mut keys = KeyAssigner::default();
    let keyed: Vec<(String, &Vec<f64>)> = ids.iter().map(|id| keys.key_for(id)).zip(scaled).collect();
    let rows = par::try_map(&keyed, threads, |(key, x)| {
        let scores = score_record(models, clusters, x)?;
        let singles = scores.iter().map(|s| binarize(s.rho)).collect::<Result<Vec<_>>>()?;
        let rhos: Vec<f64> = scores.iter().map(|s| s.rho).collect();
        let static_class = binarize(consolidate_static(&rhos)?)?;
        let pvs: Vec<PredictionVector> = scores
            .into_iter()
            .map(|s| PredictionVector {
                patient_id: key.clone(),
                model_id: s.model_id,
                distances: s.distances,
                rho: s.rho,
            })
            .collect();
        let dynamic = consolidate_dynamic(&pvs, models.len())?;
        Ok::<_, Error>((singles, static_class, dynamic))
    })?;

    let mut per_model: Vec<(String, Vec<Class>)> = models.iter().map(|m| (m.id().to_string(), Vec::new())).collect();
    let mut static_classes = Vec::with_capacity(rows.len());
    let mut dynamic = Vec::with_capacity(rows.len());
    for (singles, s, d) in rows {
        for (slot, c) in per_model.iter_mut().zip(singles) {
            slot.1.push(c);
        }
        static_classes.push(s);
        dynamic.push(d);
    }
    Ok(Evaluation {
        labels: labels.to_vec(),
        per_model,
        static_classes,
        dynamic,
    })
}

pub fn evaluate_bundle(bundle: &ModelBundle, test: &[PatientRecord], threads: Threads) -> Result<Evaluation> {
    let labels = test.iter().map(PatientRecord::label).collect::<Result<Vec<_>>>()?;
    let scaled = test
        .iter()
        .map(|r| bundle.scaler.scale(&r.features))
        .collect::<Result<Vec<_>>>()?;
    let ids: Vec<String> = test.iter().map(|r| r.id.clone()).collect();
    evaluate_predictors(&bundle.models, &bundle.error_clusters, &ids, &scaled, &labels, threads)
}

fn pct(x: f64) -> String {
    format!("{:.2}%", x * 100.0)
}

impl ComparisonReport {
    pub fn to_json(&self) -> Result<String> {
        let mut text = serde_json::to_string_pretty(&serde_json::to_value(self)?)?;
        text.push('\n');
        Ok(text)
    }

    pub fn to_text(&self) -> String {
        let width = self.per_model.iter().map(|m| m.model_id.len()).max().unwrap_or(5).max(5);
        let mut out = String::new();
        let _ = writeln!(out, "Test patients: {}", self.test_size);
        let _ = writeln!(out);
        let _ = writeln!(out, "{:<width$}  Efficiency", "Model");
        for m in &self.per_model {
            let _ = writeln!(out, "{:<width$}  {:>10}", m.model_id, pct(m.efficiency));
        }
        let _ = writeln!(out);
        let rows = [
            (format!("Best model ({})", self.best_single.model_id), self.best_single.efficiency),
            ("Multi model, all models, static weights".to_string(), self.static_efficiency),
            ("Multi model, contention, dynamic weights".to_string(), self.dynamic_efficiency),
        ];
        let w = rows.iter().map(|(n, _)| n.len()).max().unwrap_or(0);
        let _ = writeln!(out, "{:<w$}  Efficiency", "Approach");
        for (name, e) in rows {
            let _ = writeln!(out, "{name:<w$}  {:>10}", pct(e));
        }
        let p = &self.participation;
        let _ = writeln!(out);
        let _ = writeln!(
            out,
            "Participants per patient: mean {:.2}, min {}, max {}; fallbacks {}",
            p.mean, p.min, p.max, p.fallback_count
        );
        out
    }
}
