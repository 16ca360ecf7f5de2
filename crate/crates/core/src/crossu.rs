//! Cross U-statistic over two folds, its variance estimate, the studentized
//! statistic, and the half-normal decision rule.
//!
//! With folds of size `m`, kernel block `K` (first fold by second fold), and
//! signal values `psi1`, `psi2`:
//!
//! ```text
//! f_i   = (1/m) sum_j K_ij psi2_j
//! h_i   = psi1_i f_i
//! H2    = (1/m) sum_i h_i
//! var   = (1/m) sum_i h_i^2 - H2^2
//! T     = sqrt(m) H2 / sqrt(var)
//! ```
//!
//! The statistic is one-directional: the first fold indexes the outer sum.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::CrossGram;
use crate::stats::{normal_quantile, normal_sf};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossUResult {
    pub h_values: Vec<f64>,
    pub hhat2: f64,
    pub sigma_hat: f64,
    pub m: usize,
    pub studentized: f64,
}

fn check_shapes(psi1: &[f64], psi2: &[f64], gram: &CrossGram) -> Result<usize> {
    let m = psi1.len();
    if psi2.len() != m || gram.rows() != m || gram.cols() != m {
        return Err(Error::Shape(format!(
            "folds of sizes {} and {} with a {}x{} kernel block",
            m,
            psi2.len(),
            gram.rows(),
            gram.cols()
        )));
    }
    if m == 0 {
        return Err(Error::Shape("empty folds".into()));
    }
    Ok(m)
}

/// Population-form moments of `h`: `(H2, var)`.
fn moments(h: &[f64]) -> (f64, f64) {
    let m = h.len() as f64;
    let mean = h.iter().sum::<f64>() / m;
    let second = h.iter().map(|v| v * v).sum::<f64>() / m;
    (mean, (second - mean * mean).max(0.0))
}

pub fn cross_u(psi1: &[f64], psi2: &[f64], gram: &CrossGram) -> Result<CrossUResult> {
    let m = check_shapes(psi1, psi2, gram)?;
    let mut f = vec![0.0; m];
    gram.mul_vec(psi2, &mut f);
    let inv_m = 1.0 / m as f64;
    let h_values: Vec<f64> = psi1.iter().zip(&f).map(|(p, fi)| p * fi * inv_m).collect();
    let (hhat2, var) = moments(&h_values);
    let sigma_hat = var.sqrt();
    if !(sigma_hat > 0.0) {
        return Err(Error::DegenerateVariance);
    }
    Ok(CrossUResult {
        studentized: (m as f64).sqrt() * hhat2 / sigma_hat,
        h_values,
        hhat2,
        sigma_hat,
        m,
    })
}

/// Studentized statistic with its gradient with respect to both folds of
/// the signal. Scratch buffers are reused across calls.
#[derive(Debug, Default)]
pub(crate) struct StatisticWorkspace {
    f: Vec<f64>,
    h: Vec<f64>,
    w: Vec<f64>,
    pub d_psi1: Vec<f64>,
    pub d_psi2: Vec<f64>,
}

impl StatisticWorkspace {
    /// Returns `T`; when `with_grad` is set, fills `d_psi1 = dT/dpsi1` and
    /// `d_psi2 = dT/dpsi2`, including the dependence of the variance term.
    pub fn evaluate(
        &mut self,
        psi1: &[f64],
        psi2: &[f64],
        gram: &CrossGram,
        with_grad: bool,
    ) -> Result<f64> {
        let m = check_shapes(psi1, psi2, gram)?;
        let mf = m as f64;
        self.f.resize(m, 0.0);
        self.h.resize(m, 0.0);
        gram.mul_vec(psi2, &mut self.f);
        for ((h, p), f) in self.h.iter_mut().zip(psi1).zip(&self.f) {
            *h = p * f / mf;
        }
        let (hh, var) = moments(&self.h);
        let sigma = var.sqrt();
        if !(sigma > 0.0) {
            return Err(Error::DegenerateVariance);
        }
        let sqrt_m = mf.sqrt();
        let t = sqrt_m * hh / sigma;
        if !with_grad {
            return Ok(t);
        }

        // dT/dh_i = (sqrt(m)/m) [1/sigma - H2 (h_i - H2) / sigma^3]
        let c = sqrt_m / mf;
        let s3 = sigma * sigma * sigma;
        self.d_psi1.resize(m, 0.0);
        self.w.resize(m, 0.0);
        for i in 0..m {
            let a = c * (1.0 / sigma - hh * (self.h[i] - hh) / s3);
            // h_i = psi1_i f_i / m
            self.d_psi1[i] = a * self.f[i] / mf;
            self.w[i] = a * psi1[i] / mf;
        }
        self.d_psi2.resize(m, 0.0);
        gram.mul_vec_transposed(&self.w, &mut self.d_psi2);
        Ok(t)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    /// The (minimized) absolute studentized statistic.
    pub statistic: f64,
    /// Half-normal `(1 - alpha)` quantile, `Φ⁻¹(1 - alpha/2)`.
    pub threshold: f64,
    pub p_value: f64,
    pub reject: bool,
    pub alpha: f64,
}

pub fn half_normal_threshold(alpha: f64) -> f64 {
    normal_quantile(1.0 - alpha / 2.0)
}

pub fn decide(abs_statistic: f64, alpha: f64) -> Result<Decision> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Domain(format!("alpha = {alpha} not in (0, 1)")));
    }
    if !(abs_statistic >= 0.0) {
        return Err(Error::Domain(format!("statistic {abs_statistic} must be >= 0")));
    }
    let threshold = half_normal_threshold(alpha);
    Ok(Decision {
        statistic: abs_statistic,
        threshold,
        p_value: (2.0 * normal_sf(abs_statistic)).min(1.0),
        reject: abs_statistic >= threshold,
        alpha,
    })
}
