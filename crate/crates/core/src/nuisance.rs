//! Observational regression difference `tau_obs(x) = m1(x) - m0(x)` and the
//! tolerance envelope built around it. Everything here is fit on the
//! observational study only.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{ObsData, Sample};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum RegressorSpec {
    /// k-nearest-neighbour mean under Euclidean distance. `k = None` uses
    /// `ceil(sqrt(n_arm))` per arm.
    Knn { k: Option<usize> },
    /// Ridge regression with an unpenalized intercept.
    Ridge { lambda: f64 },
}

impl Default for RegressorSpec {
    fn default() -> Self {
        RegressorSpec::Knn { k: None }
    }
}

impl RegressorSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            RegressorSpec::Knn { k: Some(0) } => Err(Error::Config("knn needs k >= 1".into())),
            RegressorSpec::Ridge { lambda } if !(lambda >= 0.0) => {
                Err(Error::Config(format!("ridge penalty {lambda} must be >= 0")))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone)]
enum ArmModel {
    Knn {
        x: Vec<f64>,
        y: Vec<f64>,
        dim: usize,
        k: usize,
    },
    Ridge {
        coef: Vec<f64>,
        intercept: f64,
    },
}

impl ArmModel {
    fn fit(rows: &[&Sample], spec: RegressorSpec, dim: usize) -> Result<Self> {
        let n = rows.len();
        match spec {
            RegressorSpec::Knn { k } => {
                let k = k.unwrap_or_else(|| (n as f64).sqrt().ceil() as usize).clamp(1, n);
                Ok(ArmModel::Knn {
                    x: rows.iter().flat_map(|s| s.x.iter().copied()).collect(),
                    y: rows.iter().map(|s| s.y).collect(),
                    dim,
                    k,
                })
            }
            RegressorSpec::Ridge { lambda } => {
                let nf = n as f64;
                let mut xm = vec![0.0; dim];
                for s in rows {
                    for (m, v) in xm.iter_mut().zip(&s.x) {
                        *m += v / nf;
                    }
                }
                let ym = rows.iter().map(|s| s.y).sum::<f64>() / nf;
                let xc = DMatrix::from_fn(n, dim, |i, j| rows[i].x[j] - xm[j]);
                let yc = DVector::from_fn(n, |i, _| rows[i].y - ym);
                let mut gram = xc.transpose() * &xc;
                for j in 0..dim {
                    gram[(j, j)] += lambda;
                }
                let rhs = xc.transpose() * yc;
                let chol = gram.cholesky().ok_or_else(|| {
                    Error::Fit("ridge normal equations are singular; use a positive penalty".into())
                })?;
                let coef: Vec<f64> = chol.solve(&rhs).iter().copied().collect();
                let intercept = ym - coef.iter().zip(&xm).map(|(c, m)| c * m).sum::<f64>();
                Ok(ArmModel::Ridge { coef, intercept })
            }
        }
    }

    fn predict(&self, q: &[f64]) -> f64 {
        match self {
            ArmModel::Knn { x, y, dim, k } => {
                let mut d: Vec<(f64, usize)> = x
                    .chunks_exact(*dim)
                    .enumerate()
                    .map(|(i, r)| {
                        let s: f64 = r.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum();
                        (s, i)
                    })
                    .collect();
                let k = (*k).min(d.len());
                let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
                if k < d.len() {
                    d.select_nth_unstable_by(k - 1, cmp);
                }
                d[..k].iter().map(|&(_, i)| y[i]).sum::<f64>() / k as f64
            }
            ArmModel::Ridge { coef, intercept } => {
                intercept + coef.iter().zip(q).map(|(c, v)| c * v).sum::<f64>()
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CateDiagnostics {
    pub n_control: usize,
    pub n_treated: usize,
    pub outcome_min: f64,
    pub outcome_max: f64,
    /// In-sample RMS residual per arm `(control, treated)`; ridge only.
    pub residual_rms: Option<(f64, f64)>,
}

/// Fitted T-learner. Immutable after fitting; predictions are clipped so the
/// signal stays bounded.
#[derive(Debug, Clone)]
pub struct CateEstimate {
    control: ArmModel,
    treated: ArmModel,
    dim: usize,
    clip: (f64, f64),
    pub spec: RegressorSpec,
    pub diagnostics: CateDiagnostics,
}

impl CateEstimate {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        let (lo, hi) = self.clip;
        self.treated.predict(x).clamp(lo, hi) - self.control.predict(x).clamp(lo, hi)
    }

    pub fn predict_rows<R: AsRef<[f64]> + Sync>(&self, rows: &[R]) -> Result<Vec<f64>> {
        if let Some(r) = rows.iter().find(|r| r.as_ref().len() != self.dim) {
            return Err(Error::Shape(format!(
                "query of dimension {} for a {}-dimensional fit",
                r.as_ref().len(),
                self.dim
            )));
        }
        Ok(rows.par_iter().map(|r| self.predict(r.as_ref())).collect())
    }
}

/// Fits separate outcome regressions on each observational arm.
pub fn fit_cate(obs: &ObsData, spec: RegressorSpec) -> Result<CateEstimate> {
    spec.validate()?;
    let dim = obs.dim();
    let treated: Vec<&Sample> = obs.samples.iter().filter(|s| s.t).collect();
    let control: Vec<&Sample> = obs.samples.iter().filter(|s| !s.t).collect();
    if treated.is_empty() || control.is_empty() {
        return Err(Error::Fit(format!(
            "empty arm (control = {}, treated = {})",
            control.len(),
            treated.len()
        )));
    }
    let (ymin, ymax) = obs
        .samples
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), s| (lo.min(s.y), hi.max(s.y)));
    let range = ymax - ymin;
    let control_model = ArmModel::fit(&control, spec, dim)?;
    let treated_model = ArmModel::fit(&treated, spec, dim)?;

    let residual_rms = match spec {
        RegressorSpec::Ridge { .. } => {
            let rms = |m: &ArmModel, rows: &[&Sample]| {
                (rows.iter().map(|s| (s.y - m.predict(&s.x)).powi(2)).sum::<f64>() / rows.len() as f64).sqrt()
            };
            Some((rms(&control_model, &control), rms(&treated_model, &treated)))
        }
        RegressorSpec::Knn { .. } => None,
    };

    Ok(CateEstimate {
        control: control_model,
        treated: treated_model,
        dim,
        clip: (ymin - range, ymax + range),
        spec,
        diagnostics: CateDiagnostics {
            n_control: control.len(),
            n_treated: treated.len(),
            outcome_min: ymin,
            outcome_max: ymax,
            residual_rms,
        },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TolerancePolicy {
    /// `tau_obs(x) -/+ delta`.
    Constant { delta: f64 },
    /// Externally supplied per-trial-row bounds, e.g. from a sensitivity model.
    PerRow { lower: Vec<f64>, upper: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyDescriptor {
    Constant { delta: f64 },
    PerRow,
}

/// Lower and upper tolerance values at each trial row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToleranceBounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub policy: PolicyDescriptor,
}

impl ToleranceBounds {
    /// Constant band around precomputed `tau_obs` values.
    pub fn around(center: &[f64], delta: f64) -> Result<Self> {
        if !(delta >= 0.0) || !delta.is_finite() {
            return Err(Error::Bound(format!("tolerance {delta} must be finite and >= 0")));
        }
        if center.iter().any(|c| !c.is_finite()) {
            return Err(Error::Bound("non-finite regression difference".into()));
        }
        Ok(ToleranceBounds {
            lower: center.iter().map(|c| c - delta).collect(),
            upper: center.iter().map(|c| c + delta).collect(),
            policy: PolicyDescriptor::Constant { delta },
        })
    }

    pub fn from_arrays(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::Shape(format!(
                "{} lower bounds but {} upper bounds",
                lower.len(),
                upper.len()
            )));
        }
        for (i, (l, u)) in lower.iter().zip(&upper).enumerate() {
            if !l.is_finite() || !u.is_finite() {
                return Err(Error::Bound(format!("non-finite bound at row {i}")));
            }
            if l > u {
                return Err(Error::Bound(format!("crossed bounds at row {i}: {l} > {u}")));
            }
        }
        Ok(ToleranceBounds {
            lower,
            upper,
            policy: PolicyDescriptor::PerRow,
        })
    }

    pub fn len(&self) -> usize {
        self.lower.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lower.is_empty()
    }
}

pub fn make_bounds<R: AsRef<[f64]> + Sync>(
    cate: &CateEstimate,
    trial_x: &[R],
    policy: TolerancePolicy,
) -> Result<ToleranceBounds> {
    match policy {
        TolerancePolicy::Constant { delta } => {
            let center = cate.predict_rows(trial_x)?;
            ToleranceBounds::around(&center, delta)
        }
        TolerancePolicy::PerRow { lower, upper } => {
            if lower.len() != trial_x.len() {
                return Err(Error::Shape(format!(
                    "{} bounds for {} trial rows",
                    lower.len(),
                    trial_x.len()
                )));
            }
            ToleranceBounds::from_arrays(lower, upper)
        }
    }
}

/// Reads per-row bounds from a CSV with `tau_lower` and `tau_upper` columns,
/// aligned with the trial rows.
pub fn load_bounds_csv(path: impl AsRef<Path>) -> Result<ToleranceBounds> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let headers = reader
        .headers()
        .map_err(|e| Error::Format(e.to_string()))?
        .clone();
    let col = |name: &str| {
        headers.iter().position(|h| h == name).ok_or_else(|| Error::Parse {
            row: 0,
            message: format!("missing column `{name}`"),
        })
    };
    let (li, ui) = (col("tau_lower")?, col("tau_upper")?);
    let mut lower = Vec::new();
    let mut upper = Vec::new();
    for (r, rec) in reader.records().enumerate() {
        let row = r + 1;
        let rec = rec.map_err(|e| Error::Parse {
            row,
            message: e.to_string(),
        })?;
        let num = |c: usize| -> Result<f64> {
            rec.get(c).unwrap_or("").parse().map_err(|_| Error::Parse {
                row,
                message: format!("non-numeric bound `{}`", rec.get(c).unwrap_or("")),
            })
        };
        lower.push(num(li)?);
        upper.push(num(ui)?);
    }
    ToleranceBounds::from_arrays(lower, upper)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate, Scenario, ScenarioConfig};

    fn obs_from(rows: &[(f64, f64, bool)]) -> ObsData {
        let samples = rows
            .iter()
            .map(|&(x, y, t)| Sample::new(vec![x], y, t).unwrap())
            .collect();
        ObsData::new(samples, vec!["x".into()]).unwrap()
    }

    #[test]
    fn constant_outcomes_give_constant_difference() {
        let rows: Vec<_> = (0..20).map(|i| (i as f64, if i % 2 == 0 { 5.0 } else { 2.0 }, i % 2 == 0)).collect();
        let obs = obs_from(&rows);
        for spec in [RegressorSpec::Knn { k: None }, RegressorSpec::Ridge { lambda: 1.0 }] {
            let cate = fit_cate(&obs, spec).unwrap();
            for q in [-3.0, 0.0, 7.5, 40.0] {
                assert!((cate.predict(&[q]) - 3.0).abs() < 1e-12, "{spec:?} at {q}");
            }
        }
    }

    #[test]
    fn full_k_knn_is_difference_of_means() {
        let rows: Vec<_> = (0..30)
            .map(|i| (i as f64 * 0.1, (i * 7 % 11) as f64, i % 3 != 0))
            .collect();
        let obs = obs_from(&rows);
        let (n0, n1) = obs.arm_sizes();
        let m1 = rows.iter().filter(|r| r.2).map(|r| r.1).sum::<f64>() / n1 as f64;
        let m0 = rows.iter().filter(|r| !r.2).map(|r| r.1).sum::<f64>() / n0 as f64;
        let cate = fit_cate(&obs, RegressorSpec::Knn { k: Some(1000) }).unwrap();
        for q in [0.0, 1.3, 9.0] {
            assert!((cate.predict(&[q]) - (m1 - m0)).abs() < 1e-12);
        }
    }

    #[test]
    fn deterministic_and_validated() {
        let rows: Vec<_> = (0..40).map(|i| (i as f64, (i % 5) as f64, i % 2 == 0)).collect();
        let obs = obs_from(&rows);
        let a = fit_cate(&obs, RegressorSpec::default()).unwrap();
        let b = fit_cate(&obs, RegressorSpec::default()).unwrap();
        let q: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64 * 3.7]).collect();
        assert_eq!(a.predict_rows(&q).unwrap(), b.predict_rows(&q).unwrap());
        assert!(fit_cate(&obs, RegressorSpec::Knn { k: Some(0) }).is_err());
        assert!(fit_cate(&obs, RegressorSpec::Ridge { lambda: -1.0 }).is_err());
        assert!(a.predict_rows(&[vec![1.0, 2.0]]).is_err());
    }

    #[test]
    fn bounds_policies() {
        let b = ToleranceBounds::around(&[1.0, 30.0], 0.0).unwrap();
        assert_eq!(b.lower, b.upper);
        let b = ToleranceBounds::around(&[30.0], 60.0).unwrap();
        assert_eq!((b.lower[0], b.upper[0]), (-30.0, 90.0));
        assert!(ToleranceBounds::around(&[0.0], -1.0).is_err());
        match ToleranceBounds::from_arrays(vec![0.0, 2.0, 5.0], vec![1.0, 1.0, 4.0]) {
            Err(Error::Bound(msg)) => assert!(msg.contains("row 1"), "{msg}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn make_bounds_on_rows() {
        let rows: Vec<_> = (0..20).map(|i| (i as f64, if i % 2 == 0 { 5.0 } else { 2.0 }, i % 2 == 0)).collect();
        let cate = fit_cate(&obs_from(&rows), RegressorSpec::default()).unwrap();
        let trial_x = vec![vec![0.5], vec![3.0]];
        let b = make_bounds(&cate, &trial_x, TolerancePolicy::Constant { delta: 1.0 }).unwrap();
        assert_eq!(b.lower, vec![2.0, 2.0]);
        assert_eq!(b.upper, vec![4.0, 4.0]);
        let bad = TolerancePolicy::PerRow {
            lower: vec![0.0],
            upper: vec![1.0],
        };
        assert!(make_bounds(&cate, &trial_x, bad).is_err());
    }

    #[test]
    fn bounds_csv() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("b.csv");
        std::fs::write(&p, "tau_lower,tau_upper\n-1,1\n0,2.5\n").unwrap();
        let b = load_bounds_csv(&p).unwrap();
        assert_eq!(b.upper, vec![1.0, 2.5]);
        std::fs::write(&p, "tau_lower,tau_upper\n-1,1\n3,2.5\n").unwrap();
        assert!(load_bounds_csv(&p).is_err());
    }

    #[test]
    fn recovers_scenario_one_subgroup_effect() {
        let cfg = ScenarioConfig {
            n_obs: 50_000,
            n_rct: 400,
            ..ScenarioConfig::new(Scenario::SingleSubgroup, 17)
        };
        let (trial, obs, oracle) = generate(&cfg).unwrap();
        let cate = fit_cate(&obs, RegressorSpec::Knn { k: Some(100) }).unwrap();
        let preds = cate.predict_rows(&trial.rows()).unwrap();
        let biased: Vec<f64> = preds
            .iter()
            .zip(&oracle.delta_star_trial)
            .filter(|(_, d)| **d != 0.0)
            .map(|(p, _)| *p)
            .collect();
        let m = biased.iter().sum::<f64>() / biased.len() as f64;
        assert!((m - 90.0).abs() < 5.0, "subgroup mean {m}");
    }
}
