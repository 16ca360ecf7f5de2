//! Synthetic trial/observational pairs with an exactly known bias.
//!
//! Covariates follow an email-marketing layout: a skewed spending feature
//! (`history`), four binary flags (`recent`, `newbie`, `mens`, `womens`),
//! and a three-level purchase channel, one-hot encoded. Both studies share the covariate law
//! and the outcome model; the observational study additionally has
//! `delta_star(x)` added to every treated outcome, so its regression
//! difference equals `BASE_CATE + delta_star(x)` by construction.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{ObsData, Sample, TrialData};
use crate::error::{Error, Result};
use crate::seed::{derive_seed, rng_from_seed};
use crate::stats::normal_quantile;

/// Constant treatment effect added to every treated unit in both studies.
pub const BASE_CATE: f64 = 30.0;

const LATENT_SD: f64 = 0.5;
const LATENT_CLIP: f64 = 3.0;
const NOISE_SD: f64 = 10.0;

/// Column layout of generated data.
pub mod hillstrom {
    pub const HISTORY: usize = 0;
    pub const RECENT: usize = 1;
    pub const NEWBIE: usize = 2;
    pub const MENS: usize = 3;
    pub const WOMENS: usize = 4;
    pub const CHANNEL: [usize; 3] = [5, 6, 7];
    pub const CHANNEL_LABELS: [&str; 3] = ["multichannel", "phone", "web"];
    /// Width without the optional noise columns.
    pub const BASE_DIM: usize = 8;
    /// Number of `(newbie, mens, channel)` cells.
    pub const CELLS: usize = 12;

    pub fn feature_names(extra_noise: usize) -> Vec<String> {
        let mut names: Vec<String> = ["history", "recent", "newbie", "mens", "womens"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        names.extend(CHANNEL_LABELS.iter().map(|l| format!("channel={l}")));
        names.extend((1..=extra_noise).map(|i| format!("noise_{i}")));
        names
    }

    pub fn channel_of(x: &[f64]) -> usize {
        CHANNEL.iter().position(|&c| x[c] > 0.5).unwrap_or(0)
    }

    /// Cell index `newbie * 6 + mens * 3 + channel`, in `0..12`.
    pub fn cell_of(x: &[f64]) -> usize {
        let newbie = usize::from(x[NEWBIE] > 0.5);
        let mens = usize::from(x[MENS] > 0.5);
        newbie * 6 + mens * 3 + channel_of(x)
    }

    /// Feature groups in decreasing relevance for the subgroup table:
    /// the three table features first, then the remaining covariates, then
    /// pure-noise columns.
    pub fn feature_groups(extra_noise: usize) -> Vec<(String, Vec<usize>)> {
        let mut groups = vec![
            ("newbie".to_string(), vec![NEWBIE]),
            ("mens".to_string(), vec![MENS]),
            ("channel".to_string(), CHANNEL.to_vec()),
            ("history".to_string(), vec![HISTORY]),
            ("recent".to_string(), vec![RECENT]),
            ("womens".to_string(), vec![WOMENS]),
        ];
        groups.extend((0..extra_noise).map(|i| (format!("noise_{}", i + 1), vec![BASE_DIM + i])));
        groups
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Scenario {
    /// One subgroup (low `history`) with constant bias.
    SingleSubgroup,
    /// Twelve `(newbie, mens, channel)` cells with biases that cancel on average.
    CancelingCells,
    /// Quadratic bias in `history`, with coefficients per `newbie` value.
    Polynomial,
}

impl TryFrom<u8> for Scenario {
    type Error = Error;

    fn try_from(v: u8) -> Result<Self> {
        match v {
            1 => Ok(Scenario::SingleSubgroup),
            2 => Ok(Scenario::CancelingCells),
            3 => Ok(Scenario::Polynomial),
            other => Err(Error::Config(format!("unknown scenario {other}"))),
        }
    }
}

impl From<Scenario> for u8 {
    fn from(s: Scenario) -> u8 {
        match s {
            Scenario::SingleSubgroup => 1,
            Scenario::CancelingCells => 2,
            Scenario::Polynomial => 3,
        }
    }
}

/// Relative bias per cell, indexed `[newbie][mens][channel]`, scaled by
/// `max_bias`. Entries lie in `[-1, 1]`.
pub type SubgroupBiasTable = [[[f64; 3]; 2]; 2];

/// Default cell layout: a sign checkerboard over `newbie x mens` that no
/// additive model can represent, with exactly zero mean over the 12 cells.
pub const DEFAULT_TABLE: SubgroupBiasTable = [
    [[1.0, -4.0 / 6.0, 2.0 / 6.0], [-5.0 / 6.0, 3.0 / 6.0, -2.0 / 6.0]],
    [[-3.0 / 6.0, 4.0 / 6.0, -2.0 / 6.0], [4.0 / 6.0, -1.0, 3.0 / 6.0]],
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub scenario: Scenario,
    pub n_obs: usize,
    pub n_rct: usize,
    pub max_bias: f64,
    /// Population share of the biased subgroup (scenario 1).
    pub biased_fraction: f64,
    pub subgroup_bias_table: SubgroupBiasTable,
    /// Standard deviation of the polynomial coefficients (scenario 3).
    pub poly_coeff_std: f64,
    /// Fixed `(a, b, c)` per `newbie` value; drawn from the seed when absent.
    pub poly_coeffs: Option<[[f64; 3]; 2]>,
    pub pi: f64,
    /// Extra `N(0, 1)` columns unrelated to outcome or bias.
    pub extra_noise_features: usize,
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            scenario: Scenario::SingleSubgroup,
            n_obs: 8_000,
            n_rct: 2_000,
            max_bias: 60.0,
            biased_fraction: 0.44,
            subgroup_bias_table: DEFAULT_TABLE,
            poly_coeff_std: 5.0,
            poly_coeffs: None,
            pi: 2.0 / 3.0,
            extra_noise_features: 0,
            seed: 0,
        }
    }
}

impl ScenarioConfig {
    pub fn new(scenario: Scenario, seed: u64) -> Self {
        ScenarioConfig {
            scenario,
            seed,
            ..Default::default()
        }
    }

    /// Splits `total` rows 80/20 between observational study and trial.
    pub fn with_total(mut self, total: usize) -> Self {
        self.n_obs = total * 4 / 5;
        self.n_rct = total - self.n_obs;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_obs < 4 || self.n_rct < 4 {
            return Err(Error::Config(format!(
                "need at least 4 rows per study (n_obs = {}, n_rct = {})",
                self.n_obs, self.n_rct
            )));
        }
        if !self.max_bias.is_finite() {
            return Err(Error::Config("max_bias must be finite".into()));
        }
        if !(self.pi > 0.0 && self.pi < 1.0) {
            return Err(Error::Config(format!("pi = {} not in (0, 1)", self.pi)));
        }
        match self.scenario {
            Scenario::SingleSubgroup => {
                if !(self.biased_fraction > 0.0 && self.biased_fraction <= 1.0) {
                    return Err(Error::Config(format!(
                        "biased_fraction = {} not in (0, 1]",
                        self.biased_fraction
                    )));
                }
            }
            Scenario::CancelingCells => {
                let cells = self.subgroup_bias_table.iter().flatten().flatten();
                if cells.clone().any(|v| !v.is_finite() || v.abs() > 1.0) {
                    return Err(Error::Config("subgroup table entries must lie in [-1, 1]".into()));
                }
                let mean = cells.sum::<f64>() / 12.0;
                if mean.abs() > 0.02 {
                    return Err(Error::Config(format!(
                        "subgroup table must cancel on average (relative mean {mean:.4})"
                    )));
                }
            }
            Scenario::Polynomial => {
                if !(self.poly_coeff_std >= 0.0) {
                    return Err(Error::Config("poly_coeff_std must be non-negative".into()));
                }
            }
        }
        Ok(())
    }

    /// Polynomial coefficients actually used for scenario 3.
    pub fn resolved_poly_coeffs(&self) -> [[f64; 3]; 2] {
        if let Some(c) = self.poly_coeffs {
            return c;
        }
        let mut rng = rng_from_seed(derive_seed(self.seed, &[0x5eed_c0ef]));
        let sd = self.poly_coeff_std;
        let mut out = [[0.0; 3]; 2];
        for row in out.iter_mut() {
            for c in row.iter_mut() {
                let z: f64 = rng.sample(rand_distr::StandardNormal);
                *c = sd * z;
            }
        }
        out
    }

    /// Bias `delta_star(x)` added to the observational regression difference.
    pub fn bias_at(&self, x: &[f64]) -> f64 {
        BiasFunction::new(self).eval(x)
    }
}

enum BiasFunction {
    Threshold { bias: f64, history_cut: f64 },
    Table { bias: f64, table: SubgroupBiasTable },
    Poly { coeffs: [[f64; 3]; 2] },
}

fn latent_to_history(z: f64) -> f64 {
    let s2 = LATENT_SD * LATENT_SD;
    let mean = (0.5 * s2).exp();
    let sd = ((s2.exp() - 1.0) * s2.exp()).sqrt();
    ((LATENT_SD * z).exp() - mean) / sd
}

impl BiasFunction {
    fn new(cfg: &ScenarioConfig) -> Self {
        match cfg.scenario {
            Scenario::SingleSubgroup => {
                let q = normal_quantile(cfg.biased_fraction);
                let history_cut = if q >= LATENT_CLIP {
                    f64::INFINITY
                } else {
                    latent_to_history(q)
                };
                BiasFunction::Threshold {
                    bias: cfg.max_bias,
                    history_cut,
                }
            }
            Scenario::CancelingCells => BiasFunction::Table {
                bias: cfg.max_bias,
                table: cfg.subgroup_bias_table,
            },
            Scenario::Polynomial => BiasFunction::Poly {
                coeffs: cfg.resolved_poly_coeffs(),
            },
        }
    }

    fn in_subgroup(&self, x: &[f64]) -> bool {
        match self {
            BiasFunction::Threshold { history_cut, .. } => x[hillstrom::HISTORY] < *history_cut,
            _ => true,
        }
    }

    fn eval(&self, x: &[f64]) -> f64 {
        use hillstrom::*;
        match self {
            BiasFunction::Threshold { bias, .. } => {
                if self.in_subgroup(x) {
                    *bias
                } else {
                    0.0
                }
            }
            BiasFunction::Table { bias, table } => {
                let newbie = usize::from(x[NEWBIE] > 0.5);
                let mens = usize::from(x[MENS] > 0.5);
                bias * table[newbie][mens][channel_of(x)]
            }
            BiasFunction::Poly { coeffs } => {
                let [a, b, c] = coeffs[usize::from(x[NEWBIE] > 0.5)];
                let h = x[HISTORY];
                a * h * h + b * h + c
            }
        }
    }
}

/// Ground-truth bias attached to generated data, for validation only.
///
/// Sign convention: `delta_star = tau_obs - mu`, the amount added to the
/// observational regression difference relative to the true effect.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleBias {
    /// Bias at each observational row.
    pub delta_star: Vec<f64>,
    /// Bias evaluated at each trial row.
    pub delta_star_trial: Vec<f64>,
    /// `max |delta_star|` over the trial rows.
    pub delta_star_sup: f64,
    /// True conditional effect at each trial row.
    pub cate_trial: Vec<f64>,
}

fn baseline(x: &[f64]) -> f64 {
    use hillstrom::*;
    let channel_shift = [0.0, 3.0, -2.0][channel_of(x)];
    10.0 + 4.0 * x[HISTORY] - 2.0 * x[RECENT] + 3.0 * x[NEWBIE] - 2.0 * x[MENS]
        + 2.0 * x[WOMENS]
        + channel_shift
}

fn draw_covariates<R: Rng>(rng: &mut R, extra_noise: usize) -> Vec<f64> {
    let mut x = vec![0.0; hillstrom::BASE_DIM + extra_noise];
    let z: f64 = rng.sample::<f64, _>(rand_distr::StandardNormal);
    x[hillstrom::HISTORY] = latent_to_history(z.clamp(-LATENT_CLIP, LATENT_CLIP));
    // Purchased within the last six months.
    x[hillstrom::RECENT] = f64::from(u8::from(rng.random_bool(0.5)));
    x[hillstrom::NEWBIE] = f64::from(u8::from(rng.random_bool(0.5)));
    x[hillstrom::MENS] = f64::from(u8::from(rng.random_bool(0.5)));
    x[hillstrom::WOMENS] = f64::from(u8::from(rng.random_bool(0.5)));
    x[hillstrom::CHANNEL[rng.random_range(0..3)]] = 1.0;
    for v in &mut x[hillstrom::BASE_DIM..] {
        *v = rng.sample(rand_distr::StandardNormal);
    }
    x
}

/// Draws a trial/observational pair under `config`. Identical configs give
/// bit-identical output.
pub fn generate(config: &ScenarioConfig) -> Result<(TrialData, ObsData, OracleBias)> {
    config.validate()?;
    let bias = BiasFunction::new(config);
    let noise = Normal::new(0.0, NOISE_SD).expect("valid normal");
    let mut rng = rng_from_seed(config.seed);
    let extra = config.extra_noise_features;

    let unit = |rng: &mut rand_chacha::ChaCha8Rng, extra_effect: &dyn Fn(&[f64]) -> f64| {
        let x = draw_covariates(rng, extra);
        let eps = noise.sample(rng).clamp(-3.0 * NOISE_SD, 3.0 * NOISE_SD);
        let t = rng.random_bool(config.pi);
        let mut y = baseline(&x) + eps;
        if t {
            y += BASE_CATE + extra_effect(&x);
        }
        Sample { x, y, t }
    };

    let trial: Vec<Sample> = (0..config.n_rct).map(|_| unit(&mut rng, &|_| 0.0)).collect();
    let obs: Vec<Sample> = (0..config.n_obs)
        .map(|_| unit(&mut rng, &|x| bias.eval(x)))
        .collect();

    if matches!(config.scenario, Scenario::SingleSubgroup)
        && !obs.iter().any(|s| bias.in_subgroup(&s.x))
    {
        return Err(Error::Config(
            "biased subgroup is empty in the observational sample".into(),
        ));
    }

    let delta_star: Vec<f64> = obs.iter().map(|s| bias.eval(&s.x)).collect();
    let delta_star_trial: Vec<f64> = trial.iter().map(|s| bias.eval(&s.x)).collect();
    let delta_star_sup = delta_star_trial.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let oracle = OracleBias {
        delta_star,
        delta_star_trial,
        delta_star_sup,
        cate_trial: vec![BASE_CATE; trial.len()],
    };

    let names = hillstrom::feature_names(extra);
    Ok((
        TrialData::new(trial, config.pi, names.clone())?,
        ObsData::new(obs, names)?,
        oracle,
    ))
}
