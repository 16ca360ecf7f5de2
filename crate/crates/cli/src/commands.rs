use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use biasbench_core::biasmodel::{Architecture, BiasModel, OptConfig};
use biasbench_core::dataset::{
    generate, load_csv_files, write_csv, CsvSchema, FeatureSubset, ObsData, Scenario, ScenarioConfig, Source, TrialData,
};
use biasbench_core::kernels::{KernelFamily, KernelSpec};
use biasbench_core::lowerbound::{
    benchmark, bias_lower_bound, critical_value, stop_at_acceptance, BenchmarkVerdict, CateTest, GridConfig, Probe,
};
use biasbench_core::nuisance::{fit_cate, load_bounds_csv, RegressorSpec};
use biasbench_core::seed::derive_seed;
use biasbench_core::simharness::{
    run_plan, write_summary_csv, write_summary_json, AxisSummary, ExperimentPlan, Nuisance, OptSettings, SweepAxis,
    TestKind,
};
use serde::Serialize;
use serde_json::json;

use crate::args::{
    DataArgs, GenerateArgs, KernelArg, LowerBoundArgs, ModelArgs, PlanArgs, RegressorArg, ScenarioArgs, TestArgs,
    VerdictArgs,
};
use crate::error::{exit, writing, CliError};
use crate::report::{file_sha256, Report};

/// A finished command: its report and the exit code to return.
#[derive(Debug)]
pub struct Outcome {
    pub report: Report,
    pub code: u8,
}

fn usage<T, E: std::fmt::Display>(r: Result<T, E>) -> Result<T, CliError> {
    r.map_err(|e| CliError::Usage(e.to_string()))
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|source| CliError::Write {
        path: dir.to_path_buf(),
        source,
    })
}

fn scenario_config(a: &ScenarioArgs, seed: u64) -> Result<ScenarioConfig, CliError> {
    let scenario = usage(Scenario::try_from(a.scenario))?;
    let cfg = ScenarioConfig {
        n_obs: a.n_obs,
        n_rct: a.n_rct,
        max_bias: a.max_bias,
        biased_fraction: a.biased_fraction,
        pi: a.pi,
        extra_noise_features: a.extra_noise,
        ..ScenarioConfig::new(scenario, seed)
    };
    cfg.validate()?;
    Ok(cfg)
}

#[derive(Serialize)]
struct GeneratePayload {
    command: &'static str,
    config: ScenarioConfig,
    feature_names: Vec<String>,
    delta_star_sup: f64,
    /// SHA-256 of each written file, by file name.
    files: Vec<(String, String)>,
}

pub fn cmd_generate(a: &GenerateArgs) -> Result<Outcome, CliError> {
    let start = Instant::now();
    let cfg = scenario_config(&a.scenario, a.seed)?;
    let (trial, obs, oracle) = generate(&cfg)?;
    create_dir(&a.out_dir)?;
    let names = trial.feature_names.clone();
    let trial_path = a.out_dir.join("trial.csv");
    let obs_path = a.out_dir.join("obs.csv");
    let oracle_path = a.out_dir.join("oracle.json");
    writing(write_csv(&trial_path, &names, &trial.samples, Source::Rct))?;
    writing(write_csv(&obs_path, &names, &obs.samples, Source::Obs))?;
    let sidecar = json!({
        "schema": crate::report::SCHEMA,
        "config": cfg,
        "feature_names": names,
        "oracle": oracle,
    });
    let text = serde_json::to_string_pretty(&sidecar).map_err(|e| CliError::Internal(e.to_string()))?;
    std::fs::write(&oracle_path, text + "\n").map_err(|source| CliError::Write {
        path: oracle_path.clone(),
        source,
    })?;

    let mut files = Vec::new();
    for p in [&trial_path, &obs_path, &oracle_path] {
        let name = p.file_name().unwrap_or_default().to_string_lossy().into_owned();
        files.push((name, file_sha256(p)?));
    }
    let payload = GeneratePayload {
        command: "generate",
        config: cfg,
        feature_names: names,
        delta_star_sup: oracle.delta_star_sup,
        files,
    };
    Ok(Outcome {
        report: Report::new(&payload, start.elapsed())?,
        code: exit::ACCEPT,
    })
}

/// Everything the kernel-test commands derive from their data flags.
struct Prepared {
    trial: TrialData,
    test: CateTest,
    inputs: InputDigest,
    features: Vec<String>,
    opt_seed: u64,
}

#[derive(Debug, Clone, Serialize)]
struct InputDigest {
    trial_sha256: String,
    obs_sha256: String,
    n_rct: usize,
    n_obs: usize,
}

#[derive(Debug, Clone, Serialize)]
struct Settings {
    features: Vec<String>,
    architecture: String,
    kernel: KernelSpec,
    regressor: RegressorSpec,
    alpha: f64,
    seed: u64,
    optimizer: OptConfig,
}

fn parse_subset(spec: &str, names: &[String]) -> Result<FeatureSubset, CliError> {
    Ok(match spec.trim() {
        "all" => FeatureSubset::all(names.len()),
        "none" => FeatureSubset::empty(),
        list => {
            let wanted: Vec<&str> = list.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
            FeatureSubset::from_names(&wanted, names)?
        }
    })
}

fn regressor(d: &DataArgs) -> RegressorSpec {
    match d.regressor {
        RegressorArg::Knn => RegressorSpec::Knn { k: d.k },
        RegressorArg::Ridge => RegressorSpec::Ridge { lambda: d.ridge_lambda },
    }
}

fn kernel(d: &DataArgs) -> Result<KernelSpec, CliError> {
    let family = match d.kernel {
        KernelArg::Laplacian => KernelFamily::Laplacian,
        KernelArg::Gaussian => KernelFamily::Gaussian,
    };
    Ok(KernelSpec::new(family, d.kernel_scale)?)
}

fn load(d: &DataArgs) -> Result<(TrialData, ObsData), CliError> {
    let schema = CsvSchema {
        categorical: d.categorical.clone(),
        ..CsvSchema::default()
    };
    let ds = load_csv_files(&[&d.trial, &d.obs], &schema)?;
    Ok((ds.trial(d.pi)?, ds.observational()?))
}

fn prepare(d: &DataArgs, arch: &Architecture) -> Result<Prepared, CliError> {
    let (trial, obs) = load(d)?;
    let subset = parse_subset(&d.features, &trial.feature_names)?;
    let spec = regressor(d);
    spec.validate()?;
    let cate = fit_cate(&obs, spec)?;
    let test = CateTest::from_cate(&trial, &cate, &subset, &kernel(d)?, arch.clone(), derive_seed(d.seed, &[1]))?;
    let features = subset.indices().iter().map(|&i| trial.feature_names[i].clone()).collect();
    let inputs = InputDigest {
        trial_sha256: file_sha256(&d.trial)?,
        obs_sha256: file_sha256(&d.obs)?,
        n_rct: trial.len(),
        n_obs: obs.len(),
    };
    Ok(Prepared {
        trial,
        test,
        inputs,
        features,
        opt_seed: derive_seed(d.seed, &[2]),
    })
}

fn opt_config(m: &ModelArgs, arch: &Architecture, seed: u64, default_restarts: usize) -> Result<OptConfig, CliError> {
    let mut cfg = OptConfig::for_architecture(arch);
    cfg.epochs = m.epochs;
    cfg.restarts = m.restarts.unwrap_or(default_restarts);
    cfg.patience = m.patience;
    cfg.seed = seed;
    if let Some(lr) = m.learning_rate {
        cfg.learning_rate = lr;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn settings(d: &DataArgs, p: &Prepared, arch: &Architecture, optimizer: OptConfig) -> Result<Settings, CliError> {
    Ok(Settings {
        features: p.features.clone(),
        architecture: arch.to_string(),
        kernel: kernel(d)?,
        regressor: regressor(d),
        alpha: d.alpha,
        seed: d.seed,
        optimizer,
    })
}

#[derive(Serialize)]
struct TestPayload {
    command: &'static str,
    inputs: InputDigest,
    settings: Settings,
    /// `None` when per-row bounds were supplied.
    delta: Option<f64>,
    bounds_sha256: Option<String>,
    statistic: f64,
    threshold: f64,
    p_value: f64,
    reject: bool,
    epochs_run: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    opt_trace: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    g_model: Option<BiasModel>,
}

pub fn cmd_test(a: &TestArgs) -> Result<Outcome, CliError> {
    let start = Instant::now();
    let arch: Architecture = usage(a.model.arch.parse())?;
    let p = prepare(&a.data, &arch)?;
    let mut cfg = opt_config(&a.model, &arch, p.opt_seed, 1)?;
    cfg.record_trace = a.trace;
    if a.stop_at_acceptance {
        cfg = stop_at_acceptance(&cfg, a.data.alpha);
    }
    let model0 = p.test.init_model(p.opt_seed)?;
    let (out, bounds_sha256) = match &a.bounds {
        Some(path) => {
            let bounds = load_bounds_csv(path)?;
            (p.test.run_with_bounds(&bounds, a.data.alpha, &model0, &cfg)?, Some(file_sha256(path)?))
        }
        None => (p.test.run(a.delta, a.data.alpha, &model0, &cfg)?, None),
    };
    let d = out.decision;
    let payload = TestPayload {
        command: "test",
        inputs: p.inputs.clone(),
        settings: settings(&a.data, &p, &arch, cfg)?,
        delta: out.delta,
        bounds_sha256,
        statistic: d.statistic,
        threshold: d.threshold,
        p_value: d.p_value,
        reject: d.reject,
        epochs_run: out.optimization.epochs_run,
        opt_trace: out.optimization.trace,
        g_model: a.model_out.then_some(out.optimization.best_model),
    };
    let report = Report::new(&payload, start.elapsed())?;
    if let Some(path) = &a.out {
        report.write(path)?;
    }
    Ok(Outcome {
        report,
        code: if d.reject { exit::REJECT } else { exit::ACCEPT },
    })
}

#[derive(Serialize)]
struct LowerBoundPayload {
    command: &'static str,
    inputs: InputDigest,
    settings: Settings,
    grid: GridConfig,
    resolution: f64,
    delta_lb: f64,
    saturated: bool,
    delta_c: Option<f64>,
    discard: Option<bool>,
    trace: Vec<Probe>,
    #[serde(skip_serializing_if = "Option::is_none")]
    g_model: Option<BiasModel>,
}

fn group_mask(trial: &TrialData, column: &str) -> Result<Vec<bool>, CliError> {
    let j = trial
        .feature_names
        .iter()
        .position(|n| n == column)
        .ok_or_else(|| CliError::Usage(format!("unknown column `{column}`")))?;
    Ok(trial.samples.iter().map(|s| s.x[j] > 0.5).collect())
}

fn write_trace_csv(path: &Path, trace: &[Probe]) -> Result<(), CliError> {
    let mut text = String::from("delta,min_abs_statistic,reject\n");
    for p in trace {
        text.push_str(&format!("{},{},{}\n", p.delta, p.min_abs_statistic, p.reject));
    }
    std::fs::write(path, text).map_err(|source| CliError::Write {
        path: path.to_path_buf(),
        source,
    })
}

pub fn cmd_lower_bound(a: &LowerBoundArgs) -> Result<Outcome, CliError> {
    let start = Instant::now();
    let arch: Architecture = usage(a.model.arch.parse())?;
    let p = prepare(&a.data, &arch)?;
    let mut cfg = stop_at_acceptance(&opt_config(&a.model, &arch, p.opt_seed, 3)?, a.data.alpha);
    cfg.futility_window = (a.futility_window > 0).then_some(a.futility_window);
    let grid = GridConfig {
        delta_max: a.delta_max,
        coarse_steps: a.coarse_steps,
        refine_iters: a.refine_iters,
    };
    let delta_c = match (&a.critical_group, a.delta_c) {
        (Some(col), _) => Some(critical_value(&p.test.tau_obs, &group_mask(&p.trial, col)?)?),
        (None, dc) => dc,
    };
    let res = bias_lower_bound(&p.test, a.data.alpha, &grid, &cfg)?;
    let verdict: Option<BenchmarkVerdict> = delta_c.map(|dc| benchmark(res.delta_lb, dc)).transpose()?;
    if let Some(path) = &a.trace_csv {
        write_trace_csv(path, &res.grid_trace)?;
    }
    let payload = LowerBoundPayload {
        command: "lower-bound",
        inputs: p.inputs.clone(),
        settings: settings(&a.data, &p, &arch, cfg)?,
        grid,
        resolution: grid.resolution(),
        delta_lb: res.delta_lb,
        saturated: res.saturated,
        delta_c,
        discard: verdict.map(|v| v.discard_study),
        trace: res.grid_trace,
        g_model: a.model_out.then_some(res.model),
    };
    let report = Report::new(&payload, start.elapsed())?;
    if let Some(path) = &a.out {
        report.write(path)?;
    }
    Ok(Outcome {
        report,
        code: exit::ACCEPT,
    })
}

fn plan_from_args(a: &PlanArgs) -> Result<ExperimentPlan, CliError> {
    if let Some(path) = &a.config {
        let text = std::fs::read_to_string(path).map_err(|source| biasbench_core::Error::Io {
            path: path.clone(),
            source,
        })?;
        return Ok(serde_json::from_str(&text).map_err(biasbench_core::Error::from)?);
    }
    let axis = usage(SweepAxis::from_str(&a.axis))?;
    let tests = a
        .tests
        .iter()
        .map(|t| usage(TestKind::from_str(t)))
        .collect::<Result<Vec<_>, _>>()?;
    let mut plan = ExperimentPlan::new(scenario_config(&a.scenario, 0)?, axis, a.values.clone());
    plan.replications = a.replications;
    plan.base_seed = a.seed;
    plan.tests = tests;
    plan.alpha = a.alpha;
    plan.delta = a.delta;
    plan.lower_bound = a.lower_bound.map(GridConfig::new);
    plan.architecture = usage(a.arch.parse())?;
    if a.oracle_nuisance {
        plan.nuisance = Nuisance::Oracle;
    }
    plan.optimizer = OptSettings {
        epochs: a.epochs,
        restarts: a.restarts,
        ..OptSettings::default()
    };
    plan.bootstrap_samples = a.bootstrap;
    Ok(plan)
}

#[derive(Serialize)]
struct PlanPayload {
    command: &'static str,
    plan: ExperimentPlan,
    rows: Vec<AxisSummary>,
    total_replications: usize,
    failed_replications: usize,
    failed: bool,
    files: Vec<(String, String)>,
}

pub fn cmd_plan(a: &PlanArgs) -> Result<Outcome, CliError> {
    let start = Instant::now();
    let plan = plan_from_args(a)?;
    plan.validate()?;
    let summary = run_plan(&plan)?;
    create_dir(&a.out_dir)?;
    let csv_path: PathBuf = a.out_dir.join("summary.csv");
    let json_path: PathBuf = a.out_dir.join("summary.json");
    writing(write_summary_csv(&summary, &csv_path))?;
    // Timing stays out of the file so reruns are byte-identical.
    writing(write_summary_json(&summary.without_timing(), &json_path))?;
    let files = vec![
        ("summary.csv".to_string(), file_sha256(&csv_path)?),
        ("summary.json".to_string(), file_sha256(&json_path)?),
    ];
    let payload = PlanPayload {
        command: "plan",
        plan,
        rows: summary.rows.clone(),
        total_replications: summary.total_replications,
        failed_replications: summary.failed_replications,
        failed: summary.failed,
        files,
    };
    let report = Report::new(&payload, start.elapsed())?.with_timing(json!({
        "axis": summary.timing,
    }));
    if summary.failed {
        eprintln!(
            "error: {} of {} replications failed",
            summary.failed_replications, summary.total_replications
        );
        println!("{}", report.to_json());
        return Err(CliError::Internal("experiment plan failed".into()));
    }
    Ok(Outcome {
        report,
        code: exit::ACCEPT,
    })
}

pub fn cmd_verdict(a: &VerdictArgs) -> Result<Outcome, CliError> {
    let start = Instant::now();
    let v = benchmark(a.delta_lb, a.delta_c)?;
    let payload = json!({
        "command": "verdict",
        "delta_lb": v.delta_lb,
        "delta_c": v.delta_c,
        "discard": v.discard_study,
    });
    Ok(Outcome {
        report: Report::new(&payload, start.elapsed())?,
        code: exit::ACCEPT,
    })
}
