//! Samples, trial/observational containers, feature subsets, and the
//! deterministic fold split used by the cross U-statistic.

mod csv_io;
mod generator;

pub use csv_io::{load_csv, load_csv_files, write_csv, CsvSchema, Dataset, Source, Standardize};
pub use generator::{
    generate, hillstrom, OracleBias, Scenario, ScenarioConfig, SubgroupBiasTable, BASE_CATE,
};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::rng_from_seed;

/// One observed unit: covariates, outcome, and binary treatment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub x: Vec<f64>,
    pub y: f64,
    pub t: bool,
}

impl Sample {
    pub fn new(x: Vec<f64>, y: f64, t: bool) -> Result<Self> {
        if !y.is_finite() {
            return Err(Error::Domain(format!("non-finite outcome {y}")));
        }
        if let Some(v) = x.iter().find(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("non-finite covariate {v}")));
        }
        Ok(Sample { x, y, t })
    }
}

fn check_rows(samples: &[Sample], what: &str) -> Result<usize> {
    let dim = samples.first().map_or(0, |s| s.x.len());
    if let Some((i, _)) = samples.iter().enumerate().find(|(_, s)| s.x.len() != dim) {
        return Err(Error::Shape(format!(
            "{what} row {i} has {} features, expected {dim}",
            samples[i].x.len()
        )));
    }
    let treated = samples.iter().filter(|s| s.t).count();
    if treated == 0 || treated == samples.len() {
        return Err(Error::Size(format!(
            "{what} needs both treatment arms (treated = {treated}, total = {})",
            samples.len()
        )));
    }
    Ok(dim)
}

/// Randomized trial with known assignment probability `pi`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialData {
    pub samples: Vec<Sample>,
    pub pi: f64,
    pub feature_names: Vec<String>,
}

impl TrialData {
    pub fn new(samples: Vec<Sample>, pi: f64, feature_names: Vec<String>) -> Result<Self> {
        if !(pi > 0.0 && pi < 1.0) {
            return Err(Error::Domain(format!("trial propensity {pi} not in (0, 1)")));
        }
        if samples.len() < 4 {
            return Err(Error::Size(format!(
                "trial has {} rows, at least 4 are required",
                samples.len()
            )));
        }
        let dim = check_rows(&samples, "trial")?;
        check_names(&feature_names, dim)?;
        Ok(TrialData {
            samples,
            pi,
            feature_names,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.feature_names.len()
    }

    /// `(control, treated)` counts.
    pub fn arm_sizes(&self) -> (usize, usize) {
        arm_sizes(&self.samples)
    }

    pub fn rows(&self) -> Vec<&[f64]> {
        self.samples.iter().map(|s| s.x.as_slice()).collect()
    }
}

/// Observational study sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObsData {
    pub samples: Vec<Sample>,
    pub feature_names: Vec<String>,
}

impl ObsData {
    pub fn new(samples: Vec<Sample>, feature_names: Vec<String>) -> Result<Self> {
        let dim = check_rows(&samples, "observational study")?;
        check_names(&feature_names, dim)?;
        Ok(ObsData {
            samples,
            feature_names,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.feature_names.len()
    }

    pub fn arm_sizes(&self) -> (usize, usize) {
        arm_sizes(&self.samples)
    }
}

fn check_names(names: &[String], dim: usize) -> Result<()> {
    if names.len() != dim {
        return Err(Error::Shape(format!(
            "{} feature names for {dim} features",
            names.len()
        )));
    }
    Ok(())
}

pub(crate) fn arm_sizes(samples: &[Sample]) -> (usize, usize) {
    let treated = samples.iter().filter(|s| s.t).count();
    (samples.len() - treated, treated)
}

/// A sorted set of feature indices `J`. The empty set is allowed and
/// corresponds to testing at average-effect granularity.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct FeatureSubset {
    indices: Vec<usize>,
}

impl FeatureSubset {
    /// Builds a subset from arbitrary-order indices; duplicates are an error.
    pub fn new(mut indices: Vec<usize>, dim: usize) -> Result<Self> {
        indices.sort_unstable();
        if indices.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Domain("duplicate feature index".into()));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= dim) {
            return Err(Error::Bounds(format!(
                "feature index {bad} with only {dim} features"
            )));
        }
        Ok(FeatureSubset { indices })
    }

    pub fn all(dim: usize) -> Self {
        FeatureSubset {
            indices: (0..dim).collect(),
        }
    }

    pub fn empty() -> Self {
        FeatureSubset::default()
    }

    /// Resolves column names. A name matches either a column exactly or every
    /// one-hot column `name=label` of a categorical feature.
    pub fn from_names<S: AsRef<str>>(names: &[S], feature_names: &[String]) -> Result<Self> {
        let mut indices = Vec::new();
        for name in names {
            let name = name.as_ref();
            let prefix = format!("{name}=");
            let before = indices.len();
            indices.extend(
                feature_names
                    .iter()
                    .enumerate()
                    .filter(|(_, f)| f.as_str() == name || f.starts_with(&prefix))
                    .map(|(i, _)| i),
            );
            if indices.len() == before {
                return Err(Error::Bounds(format!("unknown feature `{name}`")));
            }
        }
        FeatureSubset::new(indices, feature_names.len())
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn check_dim(&self, dim: usize) -> Result<()> {
        match self.indices.last() {
            Some(&i) if i >= dim => Err(Error::Bounds(format!(
                "feature index {i} with only {dim} features"
            ))),
            _ => Ok(()),
        }
    }

    pub fn restrict(&self, row: &[f64]) -> Vec<f64> {
        self.indices.iter().map(|&i| row[i]).collect()
    }
}

/// Two disjoint, equally sized folds of trial row indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitHalves {
    pub first: Vec<usize>,
    pub second: Vec<usize>,
}

impl SplitHalves {
    /// Shuffles `0..n` and cuts it in half. For odd `n` the last shuffled
    /// index is left out.
    pub fn new(n: usize, seed: u64) -> Result<Self> {
        if n < 4 {
            return Err(Error::Size(format!("cannot split {n} rows, need at least 4")));
        }
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut rng_from_seed(seed));
        let m = n / 2;
        Ok(SplitHalves {
            first: idx[..m].to_vec(),
            second: idx[m..2 * m].to_vec(),
        })
    }

    /// Fold size `m`.
    pub fn half(&self) -> usize {
        self.first.len()
    }
}

pub fn split_halves(trial: &TrialData, seed: u64) -> Result<SplitHalves> {
    SplitHalves::new(trial.len(), seed)
}
