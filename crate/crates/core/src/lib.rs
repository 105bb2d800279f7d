//! Multi-model prediction for binary outcomes.
//!
//! A roster of base models is trained on a cohort. For every model the
//! training records are split into four error clusters by
//! (actual, predicted) class. At prediction time each model's distance to
//! those clusters decides whether it takes part, and participants are
//! combined with normalised inverse-distance weights. The scoring stage is
//! delivered as a map/reduce streaming job with a deterministic local runner.

pub mod consolidator;
pub mod dataset;
pub mod error;
pub mod error_model;
pub mod experiment;
pub mod learners;
pub mod par;
pub mod pipeline;
pub mod report;
pub mod synth;

pub use consolidator::{
    binarize, confidence_distance, consolidate_dynamic, consolidate_static, efficiency, idw_weights, participates,
    ConsolidationResult, Mode, PredictionVector,
};
pub use dataset::{fit_scaler, parse_records, split, Class, DatasetSchema, FeatureScaler, PatientRecord};
pub use error::{Error, Result};
pub use error_model::{build_error_clusters, distance_vector, Category, DistanceVector, ErrorClusterSet};
pub use learners::{build_roster, predict, train_model, Family, ModelSpec, Predictor, RosterConfig, TrainedModel};
pub use par::Threads;
pub use pipeline::{map_stage, reduce_stage, run_local, ModelBundle, WireLine};
pub use report::ComparisonReport;
