//! Shared fixtures for the benchmarks.

use biasbench_core::biasmodel::Architecture;
use biasbench_core::dataset::{generate, FeatureSubset, ObsData, Scenario, ScenarioConfig, TrialData};
use biasbench_core::kernels::KernelSpec;
use biasbench_core::lowerbound::CateTest;
use biasbench_core::simharness::{nuisance_at_trial, Nuisance};

pub struct Fixture {
    pub trial: TrialData,
    pub obs: ObsData,
    pub tau_obs: Vec<f64>,
}

/// Scenario-1 data with the true regression difference at the trial rows.
pub fn fixture(n_rct: usize, n_obs: usize) -> Fixture {
    let cfg = ScenarioConfig {
        n_rct,
        n_obs,
        ..ScenarioConfig::new(Scenario::SingleSubgroup, 1)
    };
    let (trial, obs, oracle) = generate(&cfg).expect("valid scenario");
    let tau_obs = nuisance_at_trial(&Nuisance::Oracle, &trial, &obs, &oracle).expect("oracle nuisance");
    Fixture { trial, obs, tau_obs }
}

pub fn cate_test(f: &Fixture, arch: Architecture) -> CateTest {
    CateTest::new(
        &f.trial,
        f.tau_obs.clone(),
        &FeatureSubset::all(f.trial.dim()),
        &KernelSpec::default(),
        arch,
        2,
    )
    .expect("test instance")
}
