//! Replicated experiments over generated data: rejection rates, lower-bound
//! distributions, and sweeps over one scenario or test setting.

use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{ate_lower_bound, ate_tolerance_test, zero_tolerance_cate_test};
use crate::biasmodel::{Architecture, OptConfig};
use crate::dataset::{generate, hillstrom, FeatureSubset, ScenarioConfig, TrialData};
use crate::error::{Error, Result};
use crate::kernels::KernelSpec;
use crate::lowerbound::{bias_lower_bound, stop_at_acceptance, CateTest, GridConfig};
use crate::nuisance::{fit_cate, RegressorSpec};
use crate::seed::derive_seed;
use crate::stats::{mean, sample_sd};

/// Share of failed replications above which a plan counts as failed.
pub const MAX_FAILURE_RATE: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepAxis {
    BiasedFraction,
    RctSize,
    Delta,
    /// Number of leading feature groups, in relevance order, forming `J`.
    FeatureSubsetSize,
    FunctionClass,
}

impl FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "biased-fraction" => SweepAxis::BiasedFraction,
            "rct-size" | "n-rct" => SweepAxis::RctSize,
            "delta" => SweepAxis::Delta,
            "feature-subset-size" => SweepAxis::FeatureSubsetSize,
            "function-class" => SweepAxis::FunctionClass,
            _ => return Err(Error::Config(format!("unknown sweep axis `{s}`"))),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TestKind {
    /// Kernel test with tolerance over the chosen feature subset.
    Cate,
    /// Bootstrap average-effect test with tolerance.
    Ate,
    /// Kernel test with zero tolerance over all features.
    Cate0,
    /// Bootstrap average-effect test with zero tolerance.
    Ate0,
}

impl fmt::Display for TestKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TestKind::Cate => "cate",
            TestKind::Ate => "ate",
            TestKind::Cate0 => "cate0",
            TestKind::Ate0 => "ate0",
        })
    }
}

impl FromStr for TestKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "cate" => TestKind::Cate,
            "ate" => TestKind::Ate,
            "cate0" => TestKind::Cate0,
            "ate0" => TestKind::Ate0,
            _ => return Err(Error::Config(format!("unknown test `{s}`"))),
        })
    }
}

/// Source of the observational regression difference at trial rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Nuisance {
    /// The exact regression difference of the generating process.
    Oracle,
    Fitted { regressor: RegressorSpec },
}

/// Feature subset used by the `cate` test unless the axis overrides it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "lowercase")]
pub enum SubsetChoice {
    All,
    None,
    /// The first `k` feature groups in relevance order.
    Leading(usize),
    Names(Vec<String>),
}

impl SubsetChoice {
    pub fn resolve(&self, feature_names: &[String], extra_noise: usize) -> Result<FeatureSubset> {
        match self {
            SubsetChoice::All => Ok(FeatureSubset::all(feature_names.len())),
            SubsetChoice::None => Ok(FeatureSubset::empty()),
            SubsetChoice::Leading(k) => {
                let groups = hillstrom::feature_groups(extra_noise);
                if *k > groups.len() {
                    return Err(Error::Config(format!("{k} feature groups requested, {} exist", groups.len())));
                }
                let idx = groups[..*k].iter().flat_map(|(_, g)| g.iter().copied()).collect();
                FeatureSubset::new(idx, feature_names.len())
            }
            SubsetChoice::Names(names) => FeatureSubset::from_names(names, feature_names),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptSettings {
    pub epochs: usize,
    pub restarts: usize,
    /// `None` picks the default for the function class.
    pub learning_rate: Option<f64>,
    /// End optimization once the statistic is below the acceptance threshold.
    pub stop_at_acceptance: bool,
    pub patience: Option<usize>,
    /// Abandon a start that cannot reach acceptance at its recent rate of
    /// improvement; only used together with `stop_at_acceptance`.
    pub futility_window: Option<usize>,
}

impl Default for OptSettings {
    fn default() -> Self {
        OptSettings {
            epochs: 6000,
            restarts: 1,
            learning_rate: None,
            stop_at_acceptance: true,
            patience: None,
            futility_window: Some(250),
        }
    }
}

impl OptSettings {
    pub fn config(&self, arch: &Architecture, seed: u64, alpha: f64) -> OptConfig {
        let mut cfg = OptConfig::for_architecture(arch);
        cfg.epochs = self.epochs;
        cfg.restarts = self.restarts;
        cfg.patience = self.patience;
        cfg.futility_window = self.futility_window;
        cfg.seed = seed;
        if let Some(lr) = self.learning_rate {
            cfg.learning_rate = lr;
        }
        if self.stop_at_acceptance {
            cfg = stop_at_acceptance(&cfg, alpha);
        }
        cfg
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentPlan {
    pub scenario: ScenarioConfig,
    pub axis: SweepAxis,
    pub values: Vec<String>,
    pub replications: usize,
    pub base_seed: u64,
    pub tests: Vec<TestKind>,
    pub alpha: f64,
    /// Tolerance for the `cate` and `ate` tests unless swept.
    pub delta: f64,
    /// When set, `cate` and `ate` report lower bounds instead of a decision
    /// at `delta`.
    pub lower_bound: Option<GridConfig>,
    pub architecture: Architecture,
    pub subset: SubsetChoice,
    pub kernel: KernelSpec,
    pub nuisance: Nuisance,
    pub optimizer: OptSettings,
    pub bootstrap_samples: usize,
}

impl ExperimentPlan {
    pub fn new(scenario: ScenarioConfig, axis: SweepAxis, values: Vec<String>) -> Self {
        ExperimentPlan {
            scenario,
            axis,
            values,
            replications: 5,
            base_seed: 0,
            tests: vec![TestKind::Cate, TestKind::Ate],
            alpha: 0.05,
            delta: 0.0,
            lower_bound: None,
            architecture: Architecture::small_mlp(),
            subset: SubsetChoice::All,
            kernel: KernelSpec::default(),
            nuisance: Nuisance::Fitted {
                regressor: RegressorSpec::Knn { k: None },
            },
            optimizer: OptSettings::default(),
            bootstrap_samples: 500,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.replications == 0 {
            return Err(Error::Config("replications must be >= 1".into()));
        }
        if self.values.is_empty() {
            return Err(Error::Config("the sweep needs at least one axis value".into()));
        }
        if self.tests.is_empty() {
            return Err(Error::Config("no tests requested".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!("alpha = {} not in (0, 1)", self.alpha)));
        }
        if let Some(g) = &self.lower_bound {
            g.validate()?;
        }
        for i in 0..self.values.len() {
            self.setting(i)?.scenario.validate()?;
        }
        Ok(())
    }

    /// The scenario and test settings at one axis value.
    fn setting(&self, index: usize) -> Result<Setting> {
        let raw = self.values[index].trim();
        let number = || -> Result<f64> {
            raw.parse::<f64>()
                .map_err(|_| Error::Config(format!("axis value `{raw}` is not a number")))
        };
        let mut s = Setting {
            scenario: self.scenario.clone(),
            delta: self.delta,
            architecture: self.architecture.clone(),
            subset: self.subset.clone(),
        };
        match self.axis {
            SweepAxis::BiasedFraction => s.scenario.biased_fraction = number()?,
            SweepAxis::RctSize => {
                s.scenario.n_rct = raw
                    .parse()
                    .map_err(|_| Error::Config(format!("axis value `{raw}` is not a row count")))?
            }
            SweepAxis::Delta => s.delta = number()?,
            SweepAxis::FeatureSubsetSize => {
                s.subset = SubsetChoice::Leading(
                    raw.parse()
                        .map_err(|_| Error::Config(format!("axis value `{raw}` is not a count")))?,
                )
            }
            SweepAxis::FunctionClass => s.architecture = raw.parse()?,
        }
        if !(s.delta >= 0.0) {
            return Err(Error::Config(format!("tolerance {} must be >= 0", s.delta)));
        }
        Ok(s)
    }
}

struct Setting {
    scenario: ScenarioConfig,
    delta: f64,
    architecture: Architecture,
    subset: SubsetChoice,
}

/// Outcome of one test in one replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRecord {
    pub axis_index: usize,
    pub axis_value: String,
    pub replication: usize,
    pub seed: u64,
    pub test: TestKind,
    pub reject: Option<bool>,
    pub statistic: Option<f64>,
    pub delta_lb: Option<f64>,
    pub saturated: Option<bool>,
    /// Largest absolute bias over the trial rows of this replication.
    pub delta_star_sup: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AxisSummary {
    pub axis_index: usize,
    pub axis_value: String,
    pub test: TestKind,
    pub completed: usize,
    pub failed: usize,
    pub rejection_rate: Option<f64>,
    pub mean_statistic: Option<f64>,
    pub delta_lb_mean: Option<f64>,
    /// `sd / sqrt(R)` over completed replications.
    pub delta_lb_se: Option<f64>,
    /// Share of replications with `delta_star_sup >= delta_lb`.
    pub coverage: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AxisTiming {
    pub axis_value: String,
    pub mean_runtime_secs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub plan: ExperimentPlan,
    pub rows: Vec<AxisSummary>,
    pub records: Vec<ReplicationRecord>,
    pub total_replications: usize,
    pub failed_replications: usize,
    /// More than `MAX_FAILURE_RATE` of the replications failed.
    pub failed: bool,
    /// Wall-clock figures; excluded from reproducibility comparisons.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub timing: Option<Vec<AxisTiming>>,
}

impl ExperimentSummary {
    pub fn row(&self, axis_index: usize, test: TestKind) -> Option<&AxisSummary> {
        self.rows.iter().find(|r| r.axis_index == axis_index && r.test == test)
    }

    pub fn without_timing(&self) -> ExperimentSummary {
        ExperimentSummary {
            timing: None,
            ..self.clone()
        }
    }
}

/// Observational regression difference evaluated at the trial rows.
pub fn nuisance_at_trial(
    nuisance: &Nuisance,
    trial: &TrialData,
    obs: &crate::dataset::ObsData,
    oracle: &crate::dataset::OracleBias,
) -> Result<Vec<f64>> {
    match nuisance {
        Nuisance::Oracle => Ok(oracle
            .cate_trial
            .iter()
            .zip(&oracle.delta_star_trial)
            .map(|(c, d)| c + d)
            .collect()),
        Nuisance::Fitted { regressor } => fit_cate(obs, regressor.clone())?.predict_rows(&trial.rows()),
    }
}

fn run_replication(plan: &ExperimentPlan, axis_index: usize, replication: usize) -> (Vec<ReplicationRecord>, f64) {
    let started = Instant::now();
    let seed = derive_seed(plan.base_seed, &[axis_index as u64, replication as u64]);
    let blank = |test: TestKind| ReplicationRecord {
        axis_index,
        axis_value: plan.values[axis_index].clone(),
        replication,
        seed,
        test,
        reject: None,
        statistic: None,
        delta_lb: None,
        saturated: None,
        delta_star_sup: None,
        error: None,
    };
    let prepared = (|| -> Result<_> {
        let setting = plan.setting(axis_index)?;
        let scenario = ScenarioConfig {
            seed: derive_seed(seed, &[0]),
            ..setting.scenario.clone()
        };
        let (trial, obs, oracle) = generate(&scenario)?;
        let tau = nuisance_at_trial(&plan.nuisance, &trial, &obs, &oracle)?;
        Ok((setting, trial, oracle, tau))
    })();
    let (setting, trial, oracle, tau) = match prepared {
        Ok(p) => p,
        Err(e) => {
            let records = plan
                .tests
                .iter()
                .map(|&t| ReplicationRecord {
                    error: Some(e.to_string()),
                    ..blank(t)
                })
                .collect();
            return (records, started.elapsed().as_secs_f64());
        }
    };

    let split_seed = derive_seed(seed, &[1]);
    let opt_seed = derive_seed(seed, &[2]);
    let boot_seed = derive_seed(seed, &[3]);
    let extra = setting.scenario.extra_noise_features;
    let mut records = Vec::with_capacity(plan.tests.len());
    for &test in &plan.tests {
        let mut rec = blank(test);
        rec.delta_star_sup = Some(oracle.delta_star_sup);
        let outcome = (|| -> Result<()> {
            match test {
                TestKind::Cate => {
                    let subset = setting.subset.resolve(&trial.feature_names, extra)?;
                    let ct = CateTest::new(&trial, tau.clone(), &subset, &plan.kernel, setting.architecture.clone(), split_seed)?;
                    let cfg = plan.optimizer.config(&setting.architecture, opt_seed, plan.alpha);
                    match &plan.lower_bound {
                        Some(grid) => {
                            let lb = bias_lower_bound(&ct, plan.alpha, grid, &cfg)?;
                            rec.delta_lb = Some(lb.delta_lb);
                            rec.saturated = Some(lb.saturated);
                            rec.reject = Some(lb.delta_lb > 0.0);
                        }
                        None => {
                            let out = ct.run(setting.delta, plan.alpha, &ct.init_model(opt_seed)?, &cfg)?;
                            rec.reject = Some(out.decision.reject);
                            rec.statistic = Some(out.decision.statistic);
                        }
                    }
                }
                TestKind::Cate0 => {
                    let ct = CateTest::new(
                        &trial,
                        tau.clone(),
                        &FeatureSubset::all(trial.dim()),
                        &plan.kernel,
                        Architecture::Constant,
                        split_seed,
                    )?;
                    let d = zero_tolerance_cate_test(&ct, plan.alpha)?;
                    rec.reject = Some(d.reject);
                    rec.statistic = Some(d.statistic);
                }
                TestKind::Ate | TestKind::Ate0 => {
                    let delta = if test == TestKind::Ate { setting.delta } else { 0.0 };
                    let r = ate_tolerance_test(&trial, &tau, delta, plan.alpha, plan.bootstrap_samples, boot_seed)?;
                    if test == TestKind::Ate && plan.lower_bound.is_some() {
                        let lb = ate_lower_bound(&r);
                        rec.delta_lb = Some(lb);
                        rec.reject = Some(lb > 0.0);
                    } else {
                        rec.reject = Some(r.reject);
                        rec.statistic = Some(r.statistic);
                    }
                }
            }
            Ok(())
        })();
        if let Err(e) = outcome {
            rec.error = Some(e.to_string());
        }
        records.push(rec);
    }
    (records, started.elapsed().as_secs_f64())
}

fn summarize(records: &[ReplicationRecord], axis_index: usize, axis_value: &str, test: TestKind) -> AxisSummary {
    let ok: Vec<&ReplicationRecord> = records
        .iter()
        .filter(|r| r.axis_index == axis_index && r.test == test && r.error.is_none())
        .collect();
    let failed = records
        .iter()
        .filter(|r| r.axis_index == axis_index && r.test == test && r.error.is_some())
        .count();
    let rate = |xs: Vec<bool>| (!xs.is_empty()).then(|| xs.iter().filter(|&&b| b).count() as f64 / xs.len() as f64);
    let avg = |xs: Vec<f64>| (!xs.is_empty()).then(|| mean(&xs));
    let lbs: Vec<f64> = ok.iter().filter_map(|r| r.delta_lb).collect();
    AxisSummary {
        axis_index,
        axis_value: axis_value.to_string(),
        test,
        completed: ok.len(),
        failed,
        rejection_rate: rate(ok.iter().filter_map(|r| r.reject).collect()),
        mean_statistic: avg(ok.iter().filter_map(|r| r.statistic).collect()),
        delta_lb_mean: avg(lbs.clone()),
        delta_lb_se: (lbs.len() >= 2).then(|| sample_sd(&lbs) / (lbs.len() as f64).sqrt()),
        coverage: rate(
            ok.iter()
                .filter_map(|r| Some(r.delta_star_sup? >= r.delta_lb?))
                .collect(),
        ),
    }
}

/// Runs every (axis value, replication) pair on the rayon pool and
/// aggregates. The result does not depend on scheduling.
pub fn run_plan(plan: &ExperimentPlan) -> Result<ExperimentSummary> {
    plan.validate()?;
    let jobs: Vec<(usize, usize)> = (0..plan.values.len())
        .flat_map(|a| (0..plan.replications).map(move |r| (a, r)))
        .collect();
    let results: Vec<(usize, Vec<ReplicationRecord>, f64)> = jobs
        .par_iter()
        .map(|&(a, r)| {
            let (recs, secs) = run_replication(plan, a, r);
            (a, recs, secs)
        })
        .collect();

    let mut records: Vec<ReplicationRecord> = results.iter().flat_map(|(_, r, _)| r.clone()).collect();
    records.sort_by_key(|r| (r.axis_index, r.replication, r.test));

    let mut rows = Vec::new();
    let mut timing = Vec::new();
    for (a, value) in plan.values.iter().enumerate() {
        for &test in &plan.tests {
            rows.push(summarize(&records, a, value, test));
        }
        let secs: Vec<f64> = results.iter().filter(|(i, _, _)| *i == a).map(|(_, _, s)| *s).collect();
        timing.push(AxisTiming {
            axis_value: value.clone(),
            mean_runtime_secs: mean(&secs),
        });
    }
    let total = jobs.len();
    let failed_replications = jobs
        .iter()
        .filter(|&&(a, r)| {
            records
                .iter()
                .any(|rec| rec.axis_index == a && rec.replication == r && rec.error.is_some())
        })
        .count();
    Ok(ExperimentSummary {
        plan: plan.clone(),
        rows,
        records,
        total_replications: total,
        failed_replications,
        failed: failed_replications as f64 > MAX_FAILURE_RATE * total as f64,
        timing: Some(timing),
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// One row per axis value and test.
pub fn write_summary_csv(summary: &ExperimentSummary, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Format(format!("{other:?}")),
    })?;
    let io = |e: csv::Error| Error::Format(e.to_string());
    w.write_record([
        "axis",
        "axis_value",
        "test",
        "completed",
        "failed",
        "rejection_rate",
        "mean_statistic",
        "delta_lb_mean",
        "delta_lb_se",
        "coverage",
    ])
    .map_err(io)?;
    let axis = serde_json::to_value(summary.plan.axis)?
        .as_str()
        .unwrap_or_default()
        .to_string();
    for r in &summary.rows {
        w.write_record([
            axis.clone(),
            r.axis_value.clone(),
            r.test.to_string(),
            r.completed.to_string(),
            r.failed.to_string(),
            fmt_opt(r.rejection_rate),
            fmt_opt(r.mean_statistic),
            fmt_opt(r.delta_lb_mean),
            fmt_opt(r.delta_lb_se),
            fmt_opt(r.coverage),
        ])
        .map_err(io)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_summary_json(summary: &ExperimentSummary, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(summary)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrowthCheck {
    pub n_values: Vec<usize>,
    pub mean_abs_statistic: Vec<f64>,
    /// Least-squares slope of `log mean|T|` on `log n`.
    pub slope: f64,
    pub failed_replications: usize,
}

/// Mean zero-tolerance kernel statistic (all features) across trial sizes,
/// and its log-log growth rate.
pub fn sqrtn_growth_check(
    scenario: &ScenarioConfig,
    n_values: &[usize],
    replications: usize,
    nuisance: &Nuisance,
    base_seed: u64,
) -> Result<GrowthCheck> {
    if n_values.len() < 3 {
        return Err(Error::Config(format!("need at least 3 trial sizes, got {}", n_values.len())));
    }
    let lo = *n_values.iter().min().unwrap_or(&0);
    let hi = *n_values.iter().max().unwrap_or(&0);
    if lo == 0 || hi < 4 * lo {
        return Err(Error::Config(format!("trial sizes must span at least 4x, got {lo}..{hi}")));
    }
    if replications == 0 {
        return Err(Error::Config("replications must be >= 1".into()));
    }
    let mut plan = ExperimentPlan::new(
        scenario.clone(),
        SweepAxis::RctSize,
        n_values.iter().map(|n| n.to_string()).collect(),
    );
    plan.replications = replications;
    plan.tests = vec![TestKind::Cate0];
    plan.nuisance = nuisance.clone();
    plan.base_seed = base_seed;
    let summary = run_plan(&plan)?;
    let means: Vec<f64> = (0..n_values.len())
        .map(|a| {
            summary
                .row(a, TestKind::Cate0)
                .and_then(|r| r.mean_statistic)
                .ok_or_else(|| Error::Fit(format!("no completed replication at n = {}", n_values[a])))
        })
        .collect::<Result<_>>()?;
    if means.iter().any(|&m| !(m > 0.0)) {
        return Err(Error::Fit("non-positive mean statistic; log-log fit undefined".into()));
    }
    let xs: Vec<f64> = n_values.iter().map(|&n| (n as f64).ln()).collect();
    let ys: Vec<f64> = means.iter().map(|m| m.ln()).collect();
    let (mx, my) = (mean(&xs), mean(&ys));
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    Ok(GrowthCheck {
        n_values: n_values.to_vec(),
        mean_abs_statistic: means,
        slope: sxy / sxx,
        failed_replications: summary.failed_replications,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Scenario;

    fn small_plan() -> ExperimentPlan {
        let scenario = ScenarioConfig {
            n_rct: 300,
            n_obs: 600,
            ..ScenarioConfig::new(Scenario::SingleSubgroup, 0)
        };
        let mut plan = ExperimentPlan::new(scenario, SweepAxis::Delta, vec!["0".into(), "90".into()]);
        plan.replications = 3;
        plan.tests = vec![TestKind::Cate, TestKind::Ate, TestKind::Cate0, TestKind::Ate0];
        plan.architecture = Architecture::Linear;
        plan.optimizer.epochs = 100;
        plan.bootstrap_samples = 100;
        plan
    }

    #[test]
    fn plan_is_reproducible() {
        let plan = small_plan();
        let a = run_plan(&plan).unwrap();
        let b = run_plan(&plan).unwrap();
        assert_eq!(a.without_timing(), b.without_timing());
        assert_eq!(a.rows.len(), 8);
        assert_eq!(a.records.len(), 24);
        let seeds: std::collections::BTreeSet<u64> = a.records.iter().map(|r| r.seed).collect();
        assert_eq!(seeds.len(), 6);
        for r in &a.rows {
            let f = r.rejection_rate.unwrap();
            assert!((0.0..=1.0).contains(&f));
        }
        // A tolerance beyond the largest bias is accepted by the average test.
        assert_eq!(a.row(1, TestKind::Ate).unwrap().rejection_rate, Some(0.0));
    }

    #[test]
    fn plan_validation() {
        let mut plan = small_plan();
        plan.replications = 0;
        assert!(matches!(run_plan(&plan), Err(Error::Config(_))));
        let mut plan = small_plan();
        plan.values.clear();
        assert!(plan.validate().is_err());
        let mut plan = small_plan();
        plan.axis = SweepAxis::FunctionClass;
        plan.values = vec!["tree".into()];
        assert!(plan.validate().is_err());
    }

    #[test]
    fn failures_are_counted_not_fatal() {
        let mut plan = small_plan();
        plan.axis = SweepAxis::FeatureSubsetSize;
        plan.values = vec!["2".into(), "40".into()];
        plan.tests = vec![TestKind::Cate];
        let s = run_plan(&plan).unwrap();
        assert_eq!(s.row(1, TestKind::Cate).unwrap().failed, 3);
        assert_eq!(s.failed_replications, 3);
        assert!(s.failed);
    }

    #[test]
    fn lower_bound_mode_and_writers() {
        let mut plan = small_plan();
        plan.axis = SweepAxis::BiasedFraction;
        plan.values = vec!["0.44".into()];
        plan.replications = 2;
        plan.tests = vec![TestKind::Cate, TestKind::Ate];
        plan.lower_bound = Some(GridConfig {
            coarse_steps: 5,
            refine_iters: 2,
            ..GridConfig::new(80.0)
        });
        let s = run_plan(&plan).unwrap();
        for t in [TestKind::Cate, TestKind::Ate] {
            let row = s.row(0, t).unwrap();
            assert!(row.delta_lb_mean.is_some() && row.coverage.is_some());
        }
        let dir = tempfile::tempdir().unwrap();
        write_summary_csv(&s, dir.path().join("s.csv")).unwrap();
        write_summary_json(&s, dir.path().join("s.json")).unwrap();
        let text = std::fs::read_to_string(dir.path().join("s.csv")).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert!(text.starts_with("axis,axis_value,test"));
    }

    #[test]
    fn growth_check_needs_a_spread_axis() {
        let sc = ScenarioConfig::new(Scenario::SingleSubgroup, 0);
        assert!(sqrtn_growth_check(&sc, &[500], 2, &Nuisance::Oracle, 0).is_err());
        assert!(sqrtn_growth_check(&sc, &[500, 600, 700], 2, &Nuisance::Oracle, 0).is_err());
    }

    #[test]
    fn axis_and_test_names() {
        assert_eq!("rct-size".parse::<SweepAxis>().unwrap(), SweepAxis::RctSize);
        assert!("size".parse::<SweepAxis>().is_err());
        for t in [TestKind::Cate, TestKind::Ate, TestKind::Cate0, TestKind::Ate0] {
            assert_eq!(t.to_string().parse::<TestKind>().unwrap(), t);
        }
    }
}
