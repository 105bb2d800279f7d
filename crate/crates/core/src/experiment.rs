//! Train / evaluate orchestration behind the `train` and `evaluate` commands.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::{read_records, split, write_csv, DatasetSchema};
use crate::error::{Error, Result};
use crate::learners::{build_roster, RosterConfig};
use crate::par::Threads;
use crate::pipeline::{ModelBundle, TrainOptions};
use crate::report::{evaluate_bundle, ComparisonReport, Evaluation};

pub const BUNDLE_FILE: &str = "model.bundle.json";
pub const TRAIN_FILE: &str = "train.csv";
pub const TEST_FILE: &str = "test.csv";

fn default_fraction() -> f64 {
    0.75
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

/// Paths are resolved relative to the working directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: PathBuf,
    /// Framingham layout when absent.
    #[serde(default)]
    pub schema: Option<PathBuf>,
    /// Built-in 25-model roster when absent.
    #[serde(default)]
    pub roster: Option<PathBuf>,
    #[serde(default = "default_fraction")]
    pub split_fraction: f64,
    #[serde(default)]
    pub split_seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub out_of_fold: bool,
}

impl ExperimentConfig {
    pub fn new(dataset: impl Into<PathBuf>) -> Self {
        ExperimentConfig {
            dataset: dataset.into(),
            schema: None,
            roster: None,
            split_fraction: default_fraction(),
            split_seed: 0,
            output_dir: default_output_dir(),
            out_of_fold: false,
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.split_fraction > 0.0 && self.split_fraction < 1.0) {
            return Err(Error::InvalidParams(format!(
                "split_fraction {} must lie strictly between 0 and 1",
                self.split_fraction
            )));
        }
        Ok(())
    }

    pub fn load_schema(&self) -> Result<DatasetSchema> {
        match &self.schema {
            Some(p) => DatasetSchema::load(p),
            None => Ok(DatasetSchema::framingham()),
        }
    }

    pub fn load_roster(&self) -> Result<RosterConfig> {
        match &self.roster {
            Some(p) => RosterConfig::load(p),
            None => Ok(RosterConfig::default()),
        }
    }
}

#[derive(Debug)]
pub struct TrainOutputs {
    pub bundle: ModelBundle,
    pub bundle_path: PathBuf,
    pub train_path: PathBuf,
    pub test_path: PathBuf,
    pub train_size: usize,
    pub test_size: usize,
}

/// Parse, split, train the roster, build error clusters and write the
/// bundle plus both split CSVs into the output directory.
pub fn train(config: &ExperimentConfig, threads: Threads) -> Result<TrainOutputs> {
    config.validate()?;
    let schema = config.load_schema()?;
    let specs = build_roster(&config.load_roster()?)?;
    let records = read_records(&config.dataset, &schema, true)?;
    let (train, test) = split(&records, config.split_fraction, config.split_seed)?;
    let bundle = ModelBundle::train(
        &schema,
        &train,
        &specs,
        TrainOptions {
            out_of_fold: config.out_of_fold,
            threads,
        },
    )?;

    let dir = &config.output_dir;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let bundle_path = dir.join(BUNDLE_FILE);
    let train_path = dir.join(TRAIN_FILE);
    let test_path = dir.join(TEST_FILE);
    bundle.save(&bundle_path)?;
    std::fs::write(&train_path, write_csv(&train, &schema)?).map_err(|e| Error::io(&train_path, e))?;
    std::fs::write(&test_path, write_csv(&test, &schema)?).map_err(|e| Error::io(&test_path, e))?;
    Ok(TrainOutputs {
        bundle,
        bundle_path,
        train_path,
        test_path,
        train_size: train.len(),
        test_size: test.len(),
    })
}

pub fn evaluate(bundle_path: &Path, test_path: &Path, threads: Threads) -> Result<(Evaluation, ComparisonReport)> {
    let bundle = ModelBundle::load(bundle_path)?;
    let test = read_records(test_path, &bundle.schema, true)?;
    let evaluation = evaluate_bundle(&bundle, &test, threads)?;
    let report = evaluation.report()?;
    Ok((evaluation, report))
}
