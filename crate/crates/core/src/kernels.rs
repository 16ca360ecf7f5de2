//! Bounded characteristic kernels and cross-Gram matrices over a feature
//! subset.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::FeatureSubset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelFamily {
    /// `exp(-|u - v|_1 / scale)`
    Laplacian,
    /// `exp(-|u - v|_2^2 / (2 scale^2))`
    Gaussian,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub family: KernelFamily,
    pub scale: f64,
}

impl Default for KernelSpec {
    fn default() -> Self {
        KernelSpec {
            family: KernelFamily::Laplacian,
            scale: 1.0,
        }
    }
}

impl KernelSpec {
    pub fn new(family: KernelFamily, scale: f64) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::Domain(format!("kernel scale {scale} must be positive")));
        }
        Ok(KernelSpec { family, scale })
    }

    #[inline]
    fn eval_unchecked(&self, u: &[f64], v: &[f64]) -> f64 {
        match self.family {
            KernelFamily::Laplacian => {
                let d: f64 = u.iter().zip(v).map(|(a, b)| (a - b).abs()).sum();
                (-d / self.scale).exp()
            }
            KernelFamily::Gaussian => {
                let d: f64 = u.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum();
                (-d / (2.0 * self.scale * self.scale)).exp()
            }
        }
    }
}

pub fn eval_kernel(spec: &KernelSpec, u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::Shape(format!(
            "kernel arguments have dimensions {} and {}",
            u.len(),
            v.len()
        )));
    }
    Ok(spec.eval_unchecked(u, v))
}

/// Row-major `rows x cols` matrix of kernel values `k(x1_i^J, x2_j^J)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossGram {
    values: Vec<f64>,
    rows: usize,
    cols: usize,
    pub kernel: KernelSpec,
    pub subset: FeatureSubset,
}

impl CrossGram {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.cols + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// `out = K v`.
    pub fn mul_vec(&self, v: &[f64], out: &mut [f64]) {
        debug_assert_eq!(v.len(), self.cols);
        debug_assert_eq!(out.len(), self.rows);
        for (o, row) in out.iter_mut().zip(self.values.chunks_exact(self.cols)) {
            *o = dot(row, v);
        }
    }

    /// `out = K^T w`.
    pub fn mul_vec_transposed(&self, w: &[f64], out: &mut [f64]) {
        debug_assert_eq!(w.len(), self.rows);
        debug_assert_eq!(out.len(), self.cols);
        out.iter_mut().for_each(|o| *o = 0.0);
        for (&wi, row) in w.iter().zip(self.values.chunks_exact(self.cols)) {
            if wi != 0.0 {
                for (o, &k) in out.iter_mut().zip(row) {
                    *o += wi * k;
                }
            }
        }
    }
}

/// Dot product with four independent accumulators so the compiler can
/// vectorize the loop. The reduction order is fixed.
#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let i = 4 * c;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut tail = 0.0;
    for i in 4 * chunks..a.len() {
        tail += a[i] * b[i];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Cross-Gram between two row sets restricted to `subset`. With an empty
/// subset every entry is 1.
pub fn cross_gram<R1, R2>(
    x1: &[R1],
    x2: &[R2],
    subset: &FeatureSubset,
    spec: &KernelSpec,
) -> Result<CrossGram>
where
    R1: AsRef<[f64]> + Sync,
    R2: AsRef<[f64]> + Sync,
{
    fn check_rows<R: AsRef<[f64]>>(rows: &[R], d: usize) -> Result<()> {
        match rows.iter().find(|r| r.as_ref().len() != d) {
            Some(bad) => Err(Error::Shape(format!(
                "row of dimension {} in a {d}-dimensional set",
                bad.as_ref().len()
            ))),
            None => Ok(()),
        }
    }
    let dim = x1
        .first()
        .map(|r| r.as_ref().len())
        .or_else(|| x2.first().map(|r| r.as_ref().len()));
    if let Some(d) = dim {
        check_rows(x1, d)?;
        check_rows(x2, d)?;
        subset.check_dim(d)?;
    }

    let a: Vec<Vec<f64>> = x1.iter().map(|r| subset.restrict(r.as_ref())).collect();
    let b: Vec<Vec<f64>> = x2.iter().map(|r| subset.restrict(r.as_ref())).collect();
    let cols = b.len();
    let mut values = vec![0.0; a.len() * cols];
    if cols > 0 {
        values
            .par_chunks_mut(cols)
            .zip(a.par_iter())
            .for_each(|(out, u)| {
                for (o, v) in out.iter_mut().zip(&b) {
                    *o = spec.eval_unchecked(u, v);
                }
            });
    }
    Ok(CrossGram {
        values,
        rows: a.len(),
        cols,
        kernel: *spec,
        subset: subset.clone(),
    })
}
