//! The interpolation function class, the minimized studentized statistic and
//! its exact gradient, the Adam loop, and the witness readout.

mod model;

pub use model::{Architecture, BiasModel};

use model::ForwardCache;
use serde::{Deserialize, Serialize};

use crate::crossu::StatisticWorkspace;
use crate::dataset::{FeatureSubset, SplitHalves};
use crate::error::{Error, Result};
use crate::kernels::{cross_gram, CrossGram, KernelSpec};
use crate::seed::derive_seed;
use crate::signal::SignalParts;

/// Everything about a test instance that does not depend on the tolerance:
/// the fold split, the kernel block between the folds, and the model inputs
/// `x^J` laid out first fold then second fold.
#[derive(Debug, Clone)]
pub struct FoldedDesign {
    pub split: SplitHalves,
    pub gram: CrossGram,
    inputs: Vec<f64>,
    input_dim: usize,
}

impl FoldedDesign {
    pub fn new<R: AsRef<[f64]> + Sync>(
        trial_x: &[R],
        split: SplitHalves,
        subset: &FeatureSubset,
        kernel: &KernelSpec,
    ) -> Result<Self> {
        let n = trial_x.len();
        if let Some(&i) = split.first.iter().chain(&split.second).find(|&&i| i >= n) {
            return Err(Error::Bounds(format!("split index {i} for {n} trial rows")));
        }
        let x1: Vec<&[f64]> = split.first.iter().map(|&i| trial_x[i].as_ref()).collect();
        let x2: Vec<&[f64]> = split.second.iter().map(|&i| trial_x[i].as_ref()).collect();
        let gram = cross_gram(&x1, &x2, subset, kernel)?;
        let inputs = x1
            .iter()
            .chain(&x2)
            .flat_map(|r| subset.restrict(r))
            .collect();
        Ok(FoldedDesign {
            split,
            gram,
            inputs,
            input_dim: subset.len(),
        })
    }

    /// Fold size `m`.
    pub fn m(&self) -> usize {
        self.split.half()
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    /// Model inputs for the `2m` used rows, first fold then second.
    pub fn input_rows(&self) -> Vec<&[f64]> {
        if self.input_dim == 0 {
            return vec![&[][..]; 2 * self.m()];
        }
        self.inputs.chunks_exact(self.input_dim).collect()
    }

    /// Trial row index of each fold-ordered position.
    pub fn row_order(&self) -> impl Iterator<Item = usize> + '_ {
        self.split.first.iter().chain(&self.split.second).copied()
    }
}

/// `|T|` as a function of `g`, for one tolerance envelope.
#[derive(Debug, Clone)]
pub struct Objective<'a> {
    design: &'a FoldedDesign,
    base: Vec<f64>,
    span: Vec<f64>,
}

impl<'a> Objective<'a> {
    pub fn new(design: &'a FoldedDesign, parts: &SignalParts) -> Result<Self> {
        let n = parts.len();
        if let Some(i) = design.row_order().find(|&i| i >= n) {
            return Err(Error::Bounds(format!("split index {i} for {n} signal rows")));
        }
        Ok(Objective {
            design,
            base: design.row_order().map(|i| parts.base[i]).collect(),
            span: design.row_order().map(|i| parts.span[i]).collect(),
        })
    }

    pub fn design(&self) -> &FoldedDesign {
        self.design
    }

    pub fn is_span_free(&self) -> bool {
        self.span.iter().all(|&s| s == 0.0)
    }

    /// `|T|` and `d|T|/dg` for a free weight per fold-ordered row.
    pub fn abs_statistic_and_grad_g(&self, g: &[f64]) -> Result<(f64, Vec<f64>)> {
        let mut ev = Evaluator::new(self);
        let t = ev.statistic_from_g(g, true)?;
        Ok((t.abs(), ev.dg.clone()))
    }

    pub fn abs_statistic_at(&self, g: &[f64]) -> Result<f64> {
        Ok(Evaluator::new(self).statistic_from_g(g, false)?.abs())
    }
}

struct Evaluator<'o, 'a> {
    obj: &'o Objective<'a>,
    ws: StatisticWorkspace,
    cache: ForwardCache,
    psi1: Vec<f64>,
    psi2: Vec<f64>,
    dg: Vec<f64>,
}

impl<'o, 'a> Evaluator<'o, 'a> {
    fn new(obj: &'o Objective<'a>) -> Self {
        Evaluator {
            obj,
            ws: StatisticWorkspace::default(),
            cache: ForwardCache::default(),
            psi1: Vec::new(),
            psi2: Vec::new(),
            dg: Vec::new(),
        }
    }

    /// Signed `T`; with `with_grad`, leaves `d|T|/dg` in `self.dg`.
    fn statistic_from_g(&mut self, g: &[f64], with_grad: bool) -> Result<f64> {
        let obj = self.obj;
        let m = obj.design.m();
        if g.len() != 2 * m {
            return Err(Error::Shape(format!("{} weights for {} rows", g.len(), 2 * m)));
        }
        let psi = |r: usize| obj.base[r] - g[r] * obj.span[r];
        self.psi1.clear();
        self.psi1.extend((0..m).map(psi));
        self.psi2.clear();
        self.psi2.extend((m..2 * m).map(psi));
        let t = self.ws.evaluate(&self.psi1, &self.psi2, &obj.design.gram, with_grad)?;
        if with_grad {
            // Subgradient 0 at T = 0, where the minimum is already attained.
            let sign = if t > 0.0 {
                1.0
            } else if t < 0.0 {
                -1.0
            } else {
                0.0
            };
            self.dg.clear();
            self.dg
                .extend((0..m).map(|r| -sign * obj.span[r] * self.ws.d_psi1[r]));
            self.dg
                .extend((0..m).map(|j| -sign * obj.span[m + j] * self.ws.d_psi2[j]));
        }
        Ok(t)
    }

    /// `|T|` at the model; fills `grad` with `d|T|/dparams` when given.
    fn eval(&mut self, model: &BiasModel, grad: Option<&mut [f64]>) -> Result<f64> {
        let design = self.obj.design;
        let n = 2 * design.m();
        let g = self.cache.forward(model, &design.inputs, n).to_vec();
        let t = self.statistic_from_g(&g, grad.is_some())?;
        if let Some(grad) = grad {
            self.cache.backward(model, &design.inputs, n, &self.dg, grad);
        }
        Ok(t.abs())
    }
}

fn check_model(model: &BiasModel, design: &FoldedDesign) -> Result<()> {
    if model.input_dim != design.input_dim() {
        return Err(Error::Shape(format!(
            "model takes {} inputs, feature subset has {}",
            model.input_dim,
            design.input_dim()
        )));
    }
    Ok(())
}

/// `|T|` at the model and its gradient with respect to every parameter.
pub fn statistic_and_gradient(model: &BiasModel, objective: &Objective) -> Result<(f64, Vec<f64>)> {
    check_model(model, objective.design)?;
    let mut grad = vec![0.0; model.param_count()];
    let t = Evaluator::new(objective).eval(model, Some(&mut grad))?;
    Ok((t, grad))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
    pub record_trace: bool,
    /// Independent starts; the first uses the supplied model, later ones are
    /// freshly initialized from seeds derived from `seed`.
    pub restarts: usize,
    /// Stop as soon as `|T|` falls below this value. Passing the acceptance
    /// threshold here gives the same decision as running all epochs.
    pub stop_below: Option<f64>,
    /// Stop a start once `patience` epochs pass without the best `|T|`
    /// improving by a relative 1e-3.
    pub patience: Option<usize>,
    /// With `stop_below` set: give up on a start when, at the average rate
    /// of improvement over the last `futility_window` epochs, the best `|T|`
    /// could not reach `stop_below` within the remaining epochs. The decay is
    /// convex in practice, so the linear extrapolation is optimistic.
    pub futility_window: Option<usize>,
}

impl Default for OptConfig {
    fn default() -> Self {
        OptConfig {
            epochs: 6000,
            learning_rate: 0.1,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
            record_trace: false,
            restarts: 1,
            stop_below: None,
            patience: None,
            futility_window: None,
        }
    }
}

const PATIENCE_REL_TOL: f64 = 1e-3;

impl OptConfig {
    /// Defaults with the learning rate suited to the architecture.
    pub fn for_architecture(arch: &Architecture) -> Self {
        let learning_rate = match arch {
            Architecture::Mlp(w) if w.len() > 1 => 0.01,
            _ => 0.1,
        };
        OptConfig {
            learning_rate,
            ..OptConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning rate {} must be > 0", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("adam betas must lie in [0, 1)".into()));
        }
        if !(self.eps > 0.0) {
            return Err(Error::Config("adam eps must be > 0".into()));
        }
        if self.restarts == 0 {
            return Err(Error::Config("restarts must be >= 1".into()));
        }
        if self.patience == Some(0) {
            return Err(Error::Config("patience must be >= 1".into()));
        }
        if self.futility_window == Some(0) {
            return Err(Error::Config("futility window must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptResult {
    pub min_abs_statistic: f64,
    pub best_model: BiasModel,
    /// Per-epoch `|T|` of the start that reached the minimum.
    pub trace: Option<Vec<f64>>,
    pub epoch_of_min: usize,
    pub restart_of_min: usize,
    /// Gradient evaluations summed over all starts.
    pub epochs_run: usize,
}

struct StartOutcome {
    best: f64,
    params: Vec<f64>,
    epoch_of_min: usize,
    trace: Vec<f64>,
    epochs: usize,
}

fn run_start(ev: &mut Evaluator, mut model: BiasModel, cfg: &OptConfig) -> Result<Option<StartOutcome>> {
    let p = model.param_count();
    let (mut m1, mut m2, mut grad) = (vec![0.0; p], vec![0.0; p], vec![0.0; p]);
    let mut out = StartOutcome {
        best: f64::INFINITY,
        params: model.parameters.clone(),
        epoch_of_min: 0,
        trace: Vec::new(),
        epochs: 0,
    };
    let mut mark = (f64::INFINITY, 0usize);
    // Best value after each epoch, for the futility check.
    let mut best_path: Vec<f64> = Vec::new();
    let (mut b1t, mut b2t) = (1.0, 1.0);
    for epoch in 0..cfg.epochs {
        let t = match ev.eval(&model, Some(&mut grad)) {
            Ok(t) => t,
            Err(Error::DegenerateVariance) => break,
            Err(e) => return Err(e),
        };
        out.epochs += 1;
        if cfg.record_trace {
            out.trace.push(t);
        }
        if t < out.best {
            out.best = t;
            out.params.copy_from_slice(&model.parameters);
            out.epoch_of_min = epoch;
        }
        if cfg.stop_below.is_some_and(|s| t < s) {
            break;
        }
        if let (Some(target), Some(w)) = (cfg.stop_below, cfg.futility_window) {
            best_path.push(out.best);
            if epoch >= w {
                let rate = (best_path[epoch - w] - out.best) / w as f64;
                let remaining = (cfg.epochs - 1 - epoch) as f64;
                if out.best - rate * remaining >= target {
                    break;
                }
            }
        }
        if let Some(patience) = cfg.patience {
            if out.best < mark.0 * (1.0 - PATIENCE_REL_TOL) {
                mark = (out.best, epoch);
            } else if epoch - mark.1 >= patience {
                break;
            }
        }
        if grad.iter().any(|g| !g.is_finite()) {
            break;
        }
        b1t *= cfg.beta1;
        b2t *= cfg.beta2;
        for k in 0..p {
            m1[k] = cfg.beta1 * m1[k] + (1.0 - cfg.beta1) * grad[k];
            m2[k] = cfg.beta2 * m2[k] + (1.0 - cfg.beta2) * grad[k] * grad[k];
            let mh = m1[k] / (1.0 - b1t);
            let vh = m2[k] / (1.0 - b2t);
            model.parameters[k] -= cfg.learning_rate * mh / (vh.sqrt() + cfg.eps);
        }
    }
    Ok(out.best.is_finite().then_some(out))
}

/// Minimizes `|T|` over the model parameters with Adam and returns the
/// smallest value seen at any epoch of any start.
pub fn optimize(model0: &BiasModel, objective: &Objective, cfg: &OptConfig) -> Result<OptResult> {
    cfg.validate()?;
    check_model(model0, objective.design)?;
    let mut ev = Evaluator::new(objective);

    if objective.is_span_free() {
        // The signal does not depend on g.
        let t = ev.eval(model0, None)?;
        return Ok(OptResult {
            min_abs_statistic: t,
            best_model: model0.clone(),
            trace: cfg.record_trace.then(|| vec![t]),
            epoch_of_min: 0,
            restart_of_min: 0,
            epochs_run: 1,
        });
    }

    let mut best: Option<(usize, StartOutcome)> = None;
    let mut epochs_run = 0;
    for r in 0..cfg.restarts {
        let start = if r == 0 {
            model0.clone()
        } else {
            BiasModel::init(
                model0.architecture.clone(),
                model0.input_dim,
                derive_seed(cfg.seed, &[r as u64]),
            )?
        };
        if let Some(out) = run_start(&mut ev, start, cfg)? {
            epochs_run += out.epochs;
            if best.as_ref().is_none_or(|(_, b)| out.best < b.best) {
                best = Some((r, out));
            }
        }
        if let (Some((_, b)), Some(s)) = (&best, cfg.stop_below) {
            if b.best < s {
                break;
            }
        }
    }
    let (restart_of_min, out) = best.ok_or_else(|| {
        Error::Optimization("the variance estimate was degenerate at every start".into())
    })?;
    Ok(OptResult {
        min_abs_statistic: out.best,
        best_model: BiasModel::new(model0.architecture.clone(), model0.input_dim, out.params)?,
        trace: cfg.record_trace.then_some(out.trace),
        epoch_of_min: out.epoch_of_min,
        restart_of_min,
        epochs_run,
    })
}

/// Estimated bias over a group, `delta_lb (2 mean(g) - 1)`, from a fitted
/// interpolation function. Positive values mean the trial effect exceeds
/// the observational regression difference.
pub fn witness_bias<R: AsRef<[f64]>>(
    model: &BiasModel,
    delta_lb: f64,
    group_mask: &[bool],
    rows: &[R],
) -> Result<f64> {
    if group_mask.len() != rows.len() {
        return Err(Error::Shape(format!(
            "mask of length {} for {} rows",
            group_mask.len(),
            rows.len()
        )));
    }
    if !(delta_lb >= 0.0) {
        return Err(Error::Domain(format!("lower bound {delta_lb} must be >= 0")));
    }
    let members: Vec<&[f64]> = rows
        .iter()
        .zip(group_mask)
        .filter(|(_, &m)| m)
        .map(|(r, _)| r.as_ref())
        .collect();
    if members.is_empty() {
        return Err(Error::Domain("empty group".into()));
    }
    let g = model.forward(&members)?;
    let mean_g = g.iter().sum::<f64>() / g.len() as f64;
    Ok(delta_lb * (2.0 * mean_g - 1.0))
}

#[cfg(test)]
mod tests;
