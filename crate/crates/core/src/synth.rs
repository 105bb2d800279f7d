//! Seeded synthetic cohorts with known ground truth.
//!
//! * [`regional`]: two uniform features, label = `x1 >= 0.5` with a
//!   per-half-plane flip rate. Different models can be made accurate in
//!   different halves, which makes the effect of contention predictable.
//! * [`framingham`]: records in the ten-column Framingham layout drawn from
//!   a hand-written risk model, for exercising the full pipeline when the
//!   real cohort is unavailable.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::dataset::{Class, DatasetSchema, PatientRecord};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegionalParams {
    pub n: usize,
    /// Flip probability for records with `x1 < 0.5`.
    pub noise_left: f64,
    /// Flip probability for records with `x1 >= 0.5`.
    pub noise_right: f64,
    pub seed: u64,
}

impl RegionalParams {
    pub fn new(n: usize, noise: f64, seed: u64) -> Self {
        RegionalParams {
            n,
            noise_left: noise,
            noise_right: noise,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::InvalidParams("n must be positive".into()));
        }
        for (name, p) in [("noise_left", self.noise_left), ("noise_right", self.noise_right)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidParams(format!("{name} {p} must lie in [0, 1]")));
            }
        }
        Ok(())
    }
}

/// Ground-truth rule of the regional fixture.
pub fn half_plane(x1: f64) -> Class {
    (x1 >= 0.5) as Class
}

pub fn regional_schema() -> DatasetSchema {
    DatasetSchema {
        columns: ["Id", "X1", "X2", "Class"].iter().map(|s| s.to_string()).collect(),
        id_column: "Id".into(),
        label_column: "Class".into(),
        categorical: BTreeMap::new(),
        label_map: BTreeMap::from([("0".to_string(), 0), ("1".to_string(), 1)]),
    }
}

/// Features are drawn on a 1e-6 grid so they survive CSV round trips.
pub fn regional(params: &RegionalParams) -> Result<Vec<PatientRecord>> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let grid = |rng: &mut ChaCha8Rng| rng.random_range(0..1_000_000u32) as f64 / 1e6;
    Ok((0..params.n)
        .map(|i| {
            let x1 = grid(&mut rng);
            let x2 = grid(&mut rng);
            let noise = if x1 < 0.5 { params.noise_left } else { params.noise_right };
            let flip = rng.random_bool(noise);
            PatientRecord {
                id: format!("s{i:06}"),
                features: vec![x1, x2],
                label: Some(half_plane(x1) ^ flip as Class),
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FraminghamParams {
    pub n: usize,
    pub seed: u64,
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Death probability of the facsimile risk model.
///
/// A smooth logistic core plus effects a linear score cannot express:
/// a U-shaped weight term, a threshold effect for old hypertensive
/// patients, and smoking that matters only for men.
pub fn framingham_risk(male: bool, age: f64, frw: f64, sbp: f64, chol: f64, cig: f64, chd: bool) -> f64 {
    let m = male as u8 as f64;
    let mut z = -1.75 + 0.07 * (age - 52.0) + 0.35 * m + 0.012 * (sbp - 135.0) + 1.1 * chd as u8 as f64
        + 0.003 * (chol - 230.0);
    z += 0.0009 * (frw - 105.0).powi(2) - 0.35;
    if age >= 60.0 && sbp >= 160.0 {
        z += 1.2;
    }
    if male {
        z += 0.035 * cig;
    }
    sigmoid(z)
}

/// Draws a cohort in [`DatasetSchema::framingham`] layout. Every value is an
/// integer (or `female`/`male`, `Alive`/`Death`), as in the real extract.
pub fn framingham(params: &FraminghamParams) -> Result<Vec<PatientRecord>> {
    if params.n == 0 {
        return Err(Error::InvalidParams("n must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
    let normal = |rng: &mut ChaCha8Rng, mean: f64, sd: f64| mean + sd * std_normal.sample(rng);
    let packs = [5.0, 10.0, 15.0, 20.0, 20.0, 20.0, 25.0, 30.0, 40.0, 60.0];

    let mut out = Vec::with_capacity(params.n);
    for i in 0..params.n {
        let male = rng.random_bool(0.45);
        let m = male as u8 as f64;
        let age = normal(&mut rng, 52.0, 8.5).round().clamp(30.0, 68.0);
        let frw = normal(&mut rng, 105.0 - 6.0 * m, 16.0).round().clamp(52.0, 222.0);
        let sbp = normal(&mut rng, 118.0 + 0.8 * (age - 40.0) + 0.25 * (frw - 100.0) + 4.0 * m, 22.0)
            .round()
            .clamp(90.0, 300.0);
        let dbp = (0.42 * sbp + normal(&mut rng, 30.0, 8.0)).round().clamp(50.0, 160.0);
        let chol = normal(&mut rng, 228.0 + 0.6 * (age - 50.0) - 6.0 * m, 42.0)
            .round()
            .clamp(96.0, 430.0);
        let smokes = rng.random_bool(if male { 0.6 } else { 0.35 });
        let cig = if smokes { packs[rng.random_range(0..packs.len())] } else { 0.0 };
        let chd_p = sigmoid(-3.6 + 0.06 * (age - 50.0) + 0.9 * m + 0.012 * (sbp - 130.0) + 0.006 * (chol - 230.0) + 0.02 * cig);
        let chd = rng.random_bool(chd_p);
        let death = rng.random_bool(framingham_risk(male, age, frw, sbp, chol, cig, chd));
        out.push(PatientRecord {
            id: (1000 + i).to_string(),
            features: vec![m, age, frw, sbp, dbp, chol, cig, chd as u8 as f64],
            label: Some(death as Class),
        });
    }
    Ok(out)
}
