//! Average-effect comparisons: a bootstrap t-test with tolerance, and the
//! zero-tolerance kernel test.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::biasmodel::OptConfig;
use crate::crossu::Decision;
use crate::dataset::TrialData;
use crate::error::{Error, Result};
use crate::lowerbound::CateTest;
use crate::seed::{derive_seed, rng_from_seed};
use crate::signal::pseudo_outcome;
use crate::stats::{mean, normal_quantile, sample_sd};

pub const MIN_BOOTSTRAP: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AteTestResult {
    /// Mean IPW pseudo-outcome over the trial.
    pub ate_rct: f64,
    /// Mean observational regression difference over the trial covariates.
    pub ate_obs: f64,
    pub diff: f64,
    pub boot_se: f64,
    /// `(|diff| - delta) / boot_se`.
    pub statistic: f64,
    /// `Φ⁻¹(1 - alpha)`.
    pub threshold: f64,
    pub reject: bool,
    pub delta: f64,
    pub alpha: f64,
    pub bootstrap_samples: usize,
}

/// Tests `|E[tau_rct] - E[tau_obs]| <= delta` with a bootstrap standard
/// error. Trial rows are resampled jointly with their `tau_obs` values; the
/// observational fit itself is held fixed.
pub fn ate_tolerance_test(
    trial: &TrialData,
    tau_obs: &[f64],
    delta: f64,
    alpha: f64,
    bootstrap_samples: usize,
    seed: u64,
) -> Result<AteTestResult> {
    if tau_obs.len() != trial.len() {
        return Err(Error::Shape(format!(
            "{} regression-difference values for {} trial rows",
            tau_obs.len(),
            trial.len()
        )));
    }
    if !(delta >= 0.0 && delta.is_finite()) {
        return Err(Error::Domain(format!("tolerance {delta} must be finite and >= 0")));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Domain(format!("alpha = {alpha} not in (0, 1)")));
    }
    if bootstrap_samples < MIN_BOOTSTRAP {
        return Err(Error::Config(format!(
            "{bootstrap_samples} bootstrap samples, need at least {MIN_BOOTSTRAP}"
        )));
    }
    let pseudo = pseudo_outcome(trial);
    let n = pseudo.len();
    let contrast: Vec<f64> = pseudo.iter().zip(tau_obs).map(|(p, t)| p - t).collect();
    let ate_rct = mean(&pseudo);
    let ate_obs = mean(tau_obs);
    let diff = ate_rct - ate_obs;

    let draws: Vec<f64> = (0..bootstrap_samples)
        .into_par_iter()
        .map(|b| {
            let mut rng = rng_from_seed(derive_seed(seed, &[b as u64]));
            (0..n).map(|_| contrast[rng.random_range(0..n)]).sum::<f64>() / n as f64
        })
        .collect();
    let boot_se = sample_sd(&draws);
    if !(boot_se > 0.0) {
        return Err(Error::DegenerateVariance);
    }
    let statistic = (diff.abs() - delta) / boot_se;
    let threshold = normal_quantile(1.0 - alpha);
    Ok(AteTestResult {
        ate_rct,
        ate_obs,
        diff,
        boot_se,
        statistic,
        threshold,
        reject: statistic >= threshold,
        delta,
        alpha,
        bootstrap_samples,
    })
}

/// Smallest tolerance the average-effect test accepts, in closed form.
pub fn ate_lower_bound(result: &AteTestResult) -> f64 {
    (result.diff.abs() - result.threshold * result.boot_se).max(0.0)
}

/// The kernel test with the band collapsed onto `tau_obs`. The interpolation
/// function plays no role, so a single evaluation decides.
pub fn zero_tolerance_cate_test(test: &CateTest, alpha: f64) -> Result<Decision> {
    let model = test.init_model(0)?;
    let cfg = OptConfig {
        epochs: 1,
        ..OptConfig::default()
    };
    Ok(test.run(0.0, alpha, &model, &cfg)?.decision)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::biasmodel::Architecture;
    use crate::dataset::{generate, FeatureSubset, Sample, Scenario, ScenarioConfig};
    use crate::kernels::KernelSpec;

    fn data(seed: u64, max_bias: f64) -> (TrialData, Vec<f64>) {
        let cfg = ScenarioConfig {
            max_bias,
            n_rct: 600,
            n_obs: 100,
            ..ScenarioConfig::new(Scenario::SingleSubgroup, seed)
        };
        let (trial, _, oracle) = generate(&cfg).unwrap();
        let tau = oracle
            .cate_trial
            .iter()
            .zip(&oracle.delta_star_trial)
            .map(|(c, d)| c + d)
            .collect();
        (trial, tau)
    }

    #[test]
    fn tolerance_covering_the_gap_accepts() {
        let (trial, tau) = data(1, 60.0);
        let r = ate_tolerance_test(&trial, &tau, 0.0, 0.05, 200, 3).unwrap();
        let wide = ate_tolerance_test(&trial, &tau, r.diff.abs() + 1e-9, 0.05, 200, 3).unwrap();
        assert!(wide.statistic <= 0.0 && !wide.reject);
        assert_eq!(wide.boot_se, r.boot_se);
    }

    #[test]
    fn bootstrap_is_deterministic() {
        let (trial, tau) = data(2, 0.0);
        let a = ate_tolerance_test(&trial, &tau, 1.0, 0.05, 150, 9).unwrap();
        let b = ate_tolerance_test(&trial, &tau, 1.0, 0.05, 150, 9).unwrap();
        assert_eq!(a, b);
        let c = ate_tolerance_test(&trial, &tau, 1.0, 0.05, 150, 10).unwrap();
        assert_ne!(a.boot_se, c.boot_se);
    }

    #[test]
    fn statistic_decreases_in_tolerance() {
        let (trial, tau) = data(3, 60.0);
        let mut prev = f64::INFINITY;
        let mut rejected_after_accept = false;
        let mut accepted = false;
        for k in 0..40 {
            let r = ate_tolerance_test(&trial, &tau, k as f64, 0.05, 100, 1).unwrap();
            assert!(r.statistic < prev);
            prev = r.statistic;
            rejected_after_accept |= accepted && r.reject;
            accepted |= !r.reject;
        }
        assert!(!rejected_after_accept);
    }

    #[test]
    fn closed_form_bound_is_the_crossing() {
        let (trial, tau) = data(4, 60.0);
        let r = ate_tolerance_test(&trial, &tau, 0.0, 0.05, 300, 2).unwrap();
        let lb = ate_lower_bound(&r);
        if lb > 0.0 {
            assert!(ate_tolerance_test(&trial, &tau, lb * 0.999, 0.05, 300, 2).unwrap().reject);
        }
        assert!(!ate_tolerance_test(&trial, &tau, lb + 1e-6, 0.05, 300, 2).unwrap().reject);
    }

    #[test]
    fn argument_checks() {
        let (trial, tau) = data(5, 0.0);
        assert!(matches!(ate_tolerance_test(&trial, &tau, 0.0, 0.05, 99, 0), Err(Error::Config(_))));
        assert!(ate_tolerance_test(&trial, &tau, -1.0, 0.05, 100, 0).is_err());
        assert!(ate_tolerance_test(&trial, &tau[1..], 0.0, 0.05, 100, 0).is_err());
    }

    #[test]
    fn zero_signal_is_degenerate() {
        let samples: Vec<Sample> = (0..20)
            .map(|i| Sample::new(vec![i as f64], 0.0, i % 2 == 0).unwrap())
            .collect();
        let trial = TrialData::new(samples, 0.5, vec!["x".into()]).unwrap();
        let test = CateTest::new(&trial, vec![0.0; 20], &FeatureSubset::all(1), &KernelSpec::default(), Architecture::Linear, 0)
            .unwrap();
        assert!(matches!(zero_tolerance_cate_test(&test, 0.05), Err(Error::DegenerateVariance)));
        assert!(matches!(ate_tolerance_test(&trial, &[0.0; 20], 0.0, 0.05, 100, 0), Err(Error::DegenerateVariance)));
    }

    #[test]
    fn zero_tolerance_detects_large_bias() {
        let (trial, tau) = data(6, 60.0);
        let test = CateTest::new(&trial, tau, &FeatureSubset::all(8), &KernelSpec::default(), Architecture::Linear, 6)
            .unwrap();
        assert!(zero_tolerance_cate_test(&test, 0.05).unwrap().reject);
    }
}
