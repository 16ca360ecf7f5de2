//! The tolerance test as a function of δ, the search for the smallest
//! accepted tolerance, and the benchmark verdict against a critical value.

use serde::{Deserialize, Serialize};

use crate::biasmodel::{optimize, Architecture, BiasModel, FoldedDesign, Objective, OptConfig, OptResult};
use crate::crossu::{decide, half_normal_threshold, Decision};
use crate::dataset::{split_halves, FeatureSubset, TrialData};
use crate::error::{Error, Result};
use crate::kernels::KernelSpec;
use crate::nuisance::{CateEstimate, ToleranceBounds};
use crate::signal::{pseudo_outcome, SignalParts};

/// A prepared test instance: pseudo-outcomes, the observational regression
/// difference at every trial row, and the fold design. Only the tolerance
/// changes between probes.
#[derive(Debug, Clone)]
pub struct CateTest {
    pub pseudo: Vec<f64>,
    pub tau_obs: Vec<f64>,
    pub design: FoldedDesign,
    pub architecture: Architecture,
}

/// One run of the optimized test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestOutcome {
    pub delta: Option<f64>,
    pub decision: Decision,
    pub optimization: OptResult,
}

impl CateTest {
    pub fn new(
        trial: &TrialData,
        tau_obs: Vec<f64>,
        subset: &FeatureSubset,
        kernel: &KernelSpec,
        architecture: Architecture,
        split_seed: u64,
    ) -> Result<Self> {
        if tau_obs.len() != trial.len() {
            return Err(Error::Shape(format!(
                "{} regression-difference values for {} trial rows",
                tau_obs.len(),
                trial.len()
            )));
        }
        architecture.validate()?;
        subset.check_dim(trial.dim())?;
        let split = split_halves(trial, split_seed)?;
        let design = FoldedDesign::new(&trial.rows(), split, subset, kernel)?;
        Ok(CateTest {
            pseudo: pseudo_outcome(trial),
            tau_obs,
            design,
            architecture,
        })
    }

    /// Evaluates a fitted regression difference at the trial rows first.
    pub fn from_cate(
        trial: &TrialData,
        cate: &CateEstimate,
        subset: &FeatureSubset,
        kernel: &KernelSpec,
        architecture: Architecture,
        split_seed: u64,
    ) -> Result<Self> {
        let tau = cate.predict_rows(&trial.rows())?;
        CateTest::new(trial, tau, subset, kernel, architecture, split_seed)
    }

    pub fn parts_at(&self, delta: f64) -> Result<SignalParts> {
        SignalParts::new(self.pseudo.clone(), &ToleranceBounds::around(&self.tau_obs, delta)?)
    }

    pub fn init_model(&self, seed: u64) -> Result<BiasModel> {
        BiasModel::init(self.architecture.clone(), self.design.input_dim(), seed)
    }

    /// Runs the test against arbitrary per-row bounds.
    pub fn run_with_bounds(
        &self,
        bounds: &ToleranceBounds,
        alpha: f64,
        model0: &BiasModel,
        cfg: &OptConfig,
    ) -> Result<TestOutcome> {
        let parts = SignalParts::new(self.pseudo.clone(), bounds)?;
        let objective = Objective::new(&self.design, &parts)?;
        let optimization = optimize(model0, &objective, cfg)?;
        Ok(TestOutcome {
            delta: None,
            decision: decide(optimization.min_abs_statistic, alpha)?,
            optimization,
        })
    }

    /// Runs the test with the constant band `tau_obs -/+ delta`.
    pub fn run(&self, delta: f64, alpha: f64, model0: &BiasModel, cfg: &OptConfig) -> Result<TestOutcome> {
        let bounds = ToleranceBounds::around(&self.tau_obs, delta)?;
        let mut out = self.run_with_bounds(&bounds, alpha, model0, cfg)?;
        out.delta = Some(delta);
        Ok(out)
    }
}

/// Optimizer settings that stop as soon as the test is sure to accept.
pub fn stop_at_acceptance(cfg: &OptConfig, alpha: f64) -> OptConfig {
    OptConfig {
        stop_below: Some(half_normal_threshold(alpha)),
        ..cfg.clone()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridConfig {
    pub delta_max: f64,
    /// Number of evenly spaced points on `[0, delta_max]`, both ends included.
    pub coarse_steps: usize,
    pub refine_iters: usize,
}

impl GridConfig {
    pub fn new(delta_max: f64) -> Self {
        GridConfig {
            delta_max,
            coarse_steps: 13,
            refine_iters: 6,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta_max > 0.0 && self.delta_max.is_finite()) {
            return Err(Error::Config(format!("delta_max {} must be > 0", self.delta_max)));
        }
        if self.coarse_steps < 2 {
            return Err(Error::Config("coarse grid needs at least 2 points".into()));
        }
        Ok(())
    }

    /// Worst-case distance between the returned bound and the true crossing.
    pub fn resolution(&self) -> f64 {
        self.delta_max / (self.coarse_steps - 1) as f64 / 2f64.powi(self.refine_iters as i32)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Probe {
    pub delta: f64,
    pub min_abs_statistic: f64,
    pub reject: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LowerBoundResult {
    pub delta_lb: f64,
    /// The test still rejected at `delta_max`; `delta_lb` is then only known
    /// to be at least `delta_max`.
    pub saturated: bool,
    /// Probes in ascending δ.
    pub grid_trace: Vec<Probe>,
    pub alpha: f64,
    pub grid: GridConfig,
    /// Interpolation function found at `delta_lb`.
    pub model: BiasModel,
}

/// Smallest tolerance at which the optimized test accepts: a coarse
/// ascending grid, then bisection between the last rejecting and first
/// accepting grid points.
///
/// Coarse probes start from a fresh initialization. A model fitted at a
/// rejected tolerance has typically driven `g` into the flat tails of the
/// sigmoid, and starting the next probe from it stalls far above the
/// minimum. Bisection probes start from the model of the last accepted
/// probe, which does not have that problem.
pub fn bias_lower_bound(
    test: &CateTest,
    alpha: f64,
    grid: &GridConfig,
    cfg: &OptConfig,
) -> Result<LowerBoundResult> {
    grid.validate()?;
    cfg.validate()?;
    let mut trace = Vec::new();
    let fresh = test.init_model(cfg.seed)?;
    let mut model = fresh.clone();
    let probe = |delta: f64, start: &BiasModel, trace: &mut Vec<Probe>| -> Result<TestOutcome> {
        let out = test.run(delta, alpha, start, cfg)?;
        trace.push(Probe {
            delta,
            min_abs_statistic: out.decision.statistic,
            reject: out.decision.reject,
        });
        Ok(out)
    };

    let step = grid.delta_max / (grid.coarse_steps - 1) as f64;
    let mut first_accept = None;
    for k in 0..grid.coarse_steps {
        let delta = if k + 1 == grid.coarse_steps { grid.delta_max } else { k as f64 * step };
        let out = probe(delta, &fresh, &mut trace)?;
        model = out.optimization.best_model;
        if !out.decision.reject {
            first_accept = Some(k);
            break;
        }
    }

    let (delta_lb, saturated) = match first_accept {
        None => (grid.delta_max, true),
        Some(0) => (0.0, false),
        Some(k) => {
            let mut lo = (k - 1) as f64 * step;
            let mut hi = if k + 1 == grid.coarse_steps { grid.delta_max } else { k as f64 * step };
            let mut accepted = model.clone();
            for _ in 0..grid.refine_iters {
                let mid = 0.5 * (lo + hi);
                let out = probe(mid, &accepted, &mut trace)?;
                if out.decision.reject {
                    lo = mid;
                } else {
                    hi = mid;
                    accepted = out.optimization.best_model;
                }
            }
            model = accepted;
            (hi, false)
        }
    };
    trace.sort_by(|a, b| a.delta.total_cmp(&b.delta));
    Ok(LowerBoundResult {
        delta_lb,
        saturated,
        grid_trace: trace,
        alpha,
        grid: *grid,
        model,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkVerdict {
    pub delta_lb: f64,
    pub delta_c: f64,
    pub discard_study: bool,
}

/// Discard the observational study when the bias lower bound reaches the
/// critical value.
pub fn benchmark(delta_lb: f64, delta_c: f64) -> Result<BenchmarkVerdict> {
    for (name, v) in [("delta_lb", delta_lb), ("delta_c", delta_c)] {
        if !(v >= 0.0) {
            return Err(Error::Domain(format!("{name} = {v} must be >= 0")));
        }
    }
    Ok(BenchmarkVerdict {
        delta_lb,
        delta_c,
        discard_study: delta_lb >= delta_c,
    })
}

/// `|mean tau_obs|` over a group: the bias that would cancel the estimated
/// effect there.
pub fn critical_value(tau_obs: &[f64], group_mask: &[bool]) -> Result<f64> {
    if tau_obs.len() != group_mask.len() {
        return Err(Error::Shape(format!(
            "{} values with a mask of length {}",
            tau_obs.len(),
            group_mask.len()
        )));
    }
    let (sum, n) = tau_obs
        .iter()
        .zip(group_mask)
        .filter(|(_, &m)| m)
        .fold((0.0, 0usize), |(s, n), (v, _)| (s + v, n + 1));
    if n == 0 {
        return Err(Error::Domain("empty group".into()));
    }
    Ok((sum / n as f64).abs())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate, Scenario, ScenarioConfig};

    fn null_test(seed: u64, arch: Architecture) -> CateTest {
        let cfg = ScenarioConfig {
            max_bias: 0.0,
            n_rct: 400,
            n_obs: 100,
            ..ScenarioConfig::new(Scenario::SingleSubgroup, seed)
        };
        let (trial, _, oracle) = generate(&cfg).unwrap();
        CateTest::new(&trial, oracle.cate_trial, &FeatureSubset::all(trial.dim()), &KernelSpec::default(), arch, seed)
            .unwrap()
    }

    #[test]
    fn verdict_rule() {
        assert!(!benchmark(0.25, 0.32).unwrap().discard_study);
        assert!(!benchmark(0.11, 0.32).unwrap().discard_study);
        assert!(benchmark(0.32, 0.32).unwrap().discard_study);
        assert!(benchmark(-0.1, 0.32).is_err());
    }

    #[test]
    fn critical_value_is_absolute_group_mean() {
        let v = critical_value(&[-1.0, -3.0, 10.0], &[true, true, false]).unwrap();
        assert_eq!(v, 2.0);
        assert!(critical_value(&[1.0], &[false]).is_err());
    }

    #[test]
    fn grid_validation() {
        assert!(GridConfig::new(0.0).validate().is_err());
        assert!(GridConfig { coarse_steps: 1, ..GridConfig::new(1.0) }.validate().is_err());
        assert!((GridConfig::new(120.0).resolution() - 10.0 / 64.0).abs() < 1e-12);
    }

    #[test]
    fn saturates_when_bias_exceeds_grid() {
        let cfg = ScenarioConfig {
            max_bias: 60.0,
            n_rct: 600,
            n_obs: 200,
            ..ScenarioConfig::new(Scenario::SingleSubgroup, 4)
        };
        let (trial, _, oracle) = generate(&cfg).unwrap();
        // Oracle regression difference of the biased study.
        let tau: Vec<f64> = oracle
            .delta_star_trial
            .iter()
            .zip(&oracle.cate_trial)
            .map(|(d, c)| c + d)
            .collect();
        let test = CateTest::new(&trial, tau, &FeatureSubset::all(8), &KernelSpec::default(), Architecture::Linear, 1)
            .unwrap();
        let opt = OptConfig {
            epochs: 300,
            ..OptConfig::default()
        };
        let res = bias_lower_bound(&test, 0.05, &GridConfig { coarse_steps: 3, ..GridConfig::new(2.0) }, &opt).unwrap();
        assert!(res.saturated);
        assert_eq!(res.delta_lb, 2.0);
        assert_eq!(res.grid_trace.len(), 3);
        assert!(res.grid_trace.iter().all(|p| p.reject));
    }

    #[test]
    fn trace_is_ascending_and_bound_is_smallest_accept() {
        let test = null_test(11, Architecture::Linear);
        let opt = OptConfig {
            epochs: 200,
            ..OptConfig::default()
        };
        // Shift the centre so the null fails at small tolerances.
        let mut shifted = test.clone();
        shifted.tau_obs.iter_mut().for_each(|t| *t += 25.0);
        let res = bias_lower_bound(&shifted, 0.05, &GridConfig::new(60.0), &opt).unwrap();
        assert!(!res.saturated);
        assert!(res.delta_lb > 0.0);
        assert!(res.grid_trace.windows(2).all(|w| w[0].delta <= w[1].delta));
        let smallest_accept = res.grid_trace.iter().find(|p| !p.reject).unwrap().delta;
        assert_eq!(smallest_accept, res.delta_lb);
        assert!(res.grid_trace.iter().filter(|p| p.delta < res.delta_lb).all(|p| p.reject));
    }

    #[test]
    fn zero_when_accepting_at_zero() {
        // Find a seed accepting at delta = 0 (most do under the null).
        let opt = OptConfig::default();
        for seed in 0..5 {
            let test = null_test(seed, Architecture::Linear);
            let model = test.init_model(0).unwrap();
            if !test.run(0.0, 0.05, &model, &opt).unwrap().decision.reject {
                let res = bias_lower_bound(&test, 0.05, &GridConfig::new(10.0), &opt).unwrap();
                assert_eq!(res.delta_lb, 0.0);
                assert_eq!(res.grid_trace.len(), 1);
                return;
            }
        }
        panic!("no accepting seed");
    }

    #[test]
    fn early_stop_keeps_decision() {
        let test = null_test(3, Architecture::small_mlp());
        let model = test.init_model(1).unwrap();
        let full = OptConfig {
            epochs: 400,
            ..OptConfig::default()
        };
        for delta in [0.5, 2.0, 8.0] {
            let a = test.run(delta, 0.05, &model, &full).unwrap().decision.reject;
            let b = test
                .run(delta, 0.05, &model, &stop_at_acceptance(&full, 0.05))
                .unwrap()
                .decision
                .reject;
            assert_eq!(a, b);
        }
    }
}
