//! IPW pseudo-outcomes and the signal `psi_g` on trial rows.
//!
//! The signal is kept in the affine form `psi_i = base_i - g_i * span_i`,
//! where `base_i = P_i - lower_i` and `span_i = upper_i - lower_i`, so that
//! `d psi_i / d g_i = -span_i` exactly.

use serde::{Deserialize, Serialize};

use crate::dataset::TrialData;
use crate::error::{Error, Result};
use crate::nuisance::ToleranceBounds;

/// `P_i = Y_i (T_i / pi - (1 - T_i) / (1 - pi))`.
pub fn pseudo_outcome(trial: &TrialData) -> Vec<f64> {
    let pi = trial.pi;
    trial
        .samples
        .iter()
        .map(|s| if s.t { s.y / pi } else { -s.y / (1.0 - pi) })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalParts {
    pub pseudo: Vec<f64>,
    pub base: Vec<f64>,
    pub span: Vec<f64>,
}

impl SignalParts {
    pub fn new(pseudo: Vec<f64>, bounds: &ToleranceBounds) -> Result<Self> {
        if pseudo.len() != bounds.len() {
            return Err(Error::Shape(format!(
                "{} pseudo-outcomes but {} tolerance rows",
                pseudo.len(),
                bounds.len()
            )));
        }
        let base: Vec<f64> = pseudo.iter().zip(&bounds.lower).map(|(p, l)| p - l).collect();
        let span: Vec<f64> = bounds
            .upper
            .iter()
            .zip(&bounds.lower)
            .map(|(u, l)| u - l)
            .collect();
        if base.iter().chain(&span).any(|v| !v.is_finite()) {
            return Err(Error::Domain("non-finite signal component".into()));
        }
        if let Some(i) = span.iter().position(|&s| s < 0.0) {
            return Err(Error::Bound(format!("negative span at row {i}")));
        }
        Ok(SignalParts { pseudo, base, span })
    }

    pub fn from_trial(trial: &TrialData, bounds: &ToleranceBounds) -> Result<Self> {
        SignalParts::new(pseudo_outcome(trial), bounds)
    }

    pub fn len(&self) -> usize {
        self.base.len()
    }

    pub fn is_empty(&self) -> bool {
        self.base.is_empty()
    }

    /// True when the envelope has zero width everywhere, so `g` is irrelevant.
    pub fn is_span_free(&self) -> bool {
        self.span.iter().all(|&s| s == 0.0)
    }
}

/// `psi_i = base_i - g_i span_i`, for `g` aligned with the trial rows.
pub fn signal_values(parts: &SignalParts, g: &[f64]) -> Result<Vec<f64>> {
    if g.len() != parts.len() {
        return Err(Error::Shape(format!(
            "{} interpolation weights for {} rows",
            g.len(),
            parts.len()
        )));
    }
    if let Some((i, v)) = g.iter().enumerate().find(|(_, v)| !(0.0..=1.0).contains(*v)) {
        return Err(Error::Domain(format!("g[{i}] = {v} outside [0, 1]")));
    }
    Ok(parts
        .base
        .iter()
        .zip(&parts.span)
        .zip(g)
        .map(|((b, s), g)| b - g * s)
        .collect())
}
