use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::rng_from_seed;

/// Function class for the interpolation weight `g: R^|J| -> [0, 1]`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", content = "hidden", rename_all = "lowercase")]
pub enum Architecture {
    Constant,
    Linear,
    /// Hidden layer widths; `tanh` hidden units, sigmoid output.
    Mlp(Vec<usize>),
}

impl Architecture {
    pub fn small_mlp() -> Self {
        Architecture::Mlp(vec![10])
    }

    pub fn large_mlp() -> Self {
        Architecture::Mlp(vec![100, 50, 10, 5])
    }

    /// `(fan_in, fan_out)` of each dense layer, output layer last.
    pub fn layer_dims(&self, input_dim: usize) -> Vec<(usize, usize)> {
        match self {
            Architecture::Constant => vec![(0, 1)],
            Architecture::Linear => vec![(input_dim, 1)],
            Architecture::Mlp(widths) => {
                let mut dims = Vec::with_capacity(widths.len() + 1);
                let mut fan_in = input_dim;
                for &w in widths {
                    dims.push((fan_in, w));
                    fan_in = w;
                }
                dims.push((fan_in, 1));
                dims
            }
        }
    }

    pub fn param_count(&self, input_dim: usize) -> usize {
        self.layer_dims(input_dim)
            .iter()
            .map(|(i, o)| i * o + o)
            .sum()
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Architecture::Mlp(w) if w.is_empty() || w.contains(&0) => Err(Error::Config(
                "mlp needs at least one hidden layer of positive width".into(),
            )),
            _ => Ok(()),
        }
    }
}

impl std::fmt::Display for Architecture {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Architecture::Constant => write!(f, "constant"),
            Architecture::Linear => write!(f, "linear"),
            Architecture::Mlp(w) => {
                let parts: Vec<String> = w.iter().map(|v| v.to_string()).collect();
                write!(f, "mlp:{}", parts.join("-"))
            }
        }
    }
}

impl std::str::FromStr for Architecture {
    type Err = Error;

    /// Accepts `constant`, `linear`, `small-mlp`, `large-mlp`, or
    /// `mlp:W1-W2-...`.
    fn from_str(s: &str) -> Result<Self> {
        let arch = match s {
            "constant" => Architecture::Constant,
            "linear" => Architecture::Linear,
            "small-mlp" => Architecture::small_mlp(),
            "large-mlp" => Architecture::large_mlp(),
            _ => {
                let widths = s
                    .strip_prefix("mlp:")
                    .ok_or_else(|| Error::Config(format!("unknown function class `{s}`")))?;
                let widths = widths
                    .split('-')
                    .map(|w| {
                        w.parse::<usize>()
                            .map_err(|_| Error::Config(format!("bad layer width `{w}` in `{s}`")))
                    })
                    .collect::<Result<Vec<_>>>()?;
                Architecture::Mlp(widths)
            }
        };
        arch.validate()?;
        Ok(arch)
    }
}

/// A parametric interpolation function. Parameters are stored flat, layer by
/// layer, each as a row-major `fan_out x fan_in` weight block followed by
/// `fan_out` biases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasModel {
    pub architecture: Architecture,
    pub input_dim: usize,
    pub parameters: Vec<f64>,
}

#[inline]
pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl BiasModel {
    pub fn new(architecture: Architecture, input_dim: usize, parameters: Vec<f64>) -> Result<Self> {
        architecture.validate()?;
        let want = architecture.param_count(input_dim);
        if parameters.len() != want {
            return Err(Error::Shape(format!(
                "{architecture} on {input_dim} inputs needs {want} parameters, got {}",
                parameters.len()
            )));
        }
        if parameters.iter().any(|p| !p.is_finite()) {
            return Err(Error::Domain("non-finite model parameter".into()));
        }
        Ok(BiasModel {
            architecture,
            input_dim,
            parameters,
        })
    }

    /// Uniform `(-1/sqrt(fan_in), 1/sqrt(fan_in))` initialization.
    pub fn init(architecture: Architecture, input_dim: usize, seed: u64) -> Result<Self> {
        architecture.validate()?;
        let mut rng = rng_from_seed(seed);
        let mut parameters = Vec::with_capacity(architecture.param_count(input_dim));
        for (fan_in, fan_out) in architecture.layer_dims(input_dim) {
            let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
            for _ in 0..(fan_in * fan_out + fan_out) {
                parameters.push(rng.random_range(-bound..bound));
            }
        }
        BiasModel::new(architecture, input_dim, parameters)
    }

    pub fn param_count(&self) -> usize {
        self.parameters.len()
    }

    /// Evaluates `g` on each row of `rows` (each of width `input_dim`).
    pub fn forward<R: AsRef<[f64]>>(&self, rows: &[R]) -> Result<Vec<f64>> {
        if let Some(r) = rows.iter().find(|r| r.as_ref().len() != self.input_dim) {
            return Err(Error::Shape(format!(
                "model expects {} inputs, row has {}",
                self.input_dim,
                r.as_ref().len()
            )));
        }
        let flat: Vec<f64> = rows.iter().flat_map(|r| r.as_ref().iter().copied()).collect();
        let mut cache = ForwardCache::default();
        Ok(cache.forward(self, &flat, rows.len()).to_vec())
    }

    /// Evaluates `g` on a row-major `n x input_dim` matrix.
    #[cfg(test)]
    pub(crate) fn forward_flat(&self, inputs: &[f64], n: usize, cache: &mut ForwardCache) -> Vec<f64> {
        cache.forward(self, inputs, n).to_vec()
    }

    /// Serializes architecture and parameters as JSON.
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let m: BiasModel = serde_json::from_str(s)?;
        BiasModel::new(m.architecture, m.input_dim, m.parameters)
    }
}

/// Activations kept from the last forward pass for backpropagation.
#[derive(Debug, Default)]
pub(crate) struct ForwardCache {
    /// Post-activation output of each layer; the last entry holds `g`.
    acts: Vec<Vec<f64>>,
    delta: Vec<f64>,
    delta_prev: Vec<f64>,
}

impl ForwardCache {
    pub fn forward<'a>(&'a mut self, model: &BiasModel, inputs: &[f64], n: usize) -> &'a [f64] {
        let dims = model.architecture.layer_dims(model.input_dim);
        self.acts.resize_with(dims.len(), Vec::new);
        let stride_in = model.input_dim;
        let mut offset = 0;
        for (l, &(fan_in, fan_out)) in dims.iter().enumerate() {
            let w = &model.parameters[offset..offset + fan_in * fan_out];
            let b = &model.parameters[offset + fan_in * fan_out..offset + fan_in * fan_out + fan_out];
            offset += fan_in * fan_out + fan_out;
            let (done, rest) = self.acts.split_at_mut(l);
            let (input, stride) = if l == 0 {
                (inputs, stride_in)
            } else {
                (done[l - 1].as_slice(), fan_in)
            };
            let out = &mut rest[0];
            out.resize(n * fan_out, 0.0);
            let last = l + 1 == dims.len();
            for r in 0..n {
                let x = &input[r * stride..r * stride + fan_in];
                for o in 0..fan_out {
                    let z = b[o] + crate::kernels::dot(&w[o * fan_in..(o + 1) * fan_in], x);
                    out[r * fan_out + o] = if last { sigmoid(z) } else { z.tanh() };
                }
            }
        }
        self.acts.last().map(Vec::as_slice).unwrap_or(&[])
    }

    /// Accumulates `d loss / d params` given `d loss / d g` per row, using
    /// the activations of the preceding `forward` call.
    pub fn backward(&mut self, model: &BiasModel, inputs: &[f64], n: usize, dg: &[f64], grad: &mut [f64]) {
        let dims = model.architecture.layer_dims(model.input_dim);
        let mut offsets = Vec::with_capacity(dims.len());
        let mut off = 0;
        for &(i, o) in &dims {
            offsets.push(off);
            off += i * o + o;
        }
        grad.iter_mut().for_each(|g| *g = 0.0);

        let g = self.acts.last().expect("forward before backward");
        self.delta.clear();
        self.delta.extend(dg.iter().zip(g).map(|(d, g)| d * g * (1.0 - g)));

        for l in (0..dims.len()).rev() {
            let (fan_in, fan_out) = dims[l];
            let off = offsets[l];
            let (input, stride) = if l == 0 {
                (inputs, model.input_dim)
            } else {
                (self.acts[l - 1].as_slice(), fan_in)
            };
            {
                let (gw, gb) = grad[off..off + fan_in * fan_out + fan_out].split_at_mut(fan_in * fan_out);
                for r in 0..n {
                    let x = &input[r * stride..r * stride + fan_in];
                    let d = &self.delta[r * fan_out..(r + 1) * fan_out];
                    for o in 0..fan_out {
                        let dv = d[o];
                        if dv == 0.0 {
                            continue;
                        }
                        gb[o] += dv;
                        for (gwi, xi) in gw[o * fan_in..(o + 1) * fan_in].iter_mut().zip(x) {
                            *gwi += dv * xi;
                        }
                    }
                }
            }
            if l == 0 {
                break;
            }
            let w = &model.parameters[off..off + fan_in * fan_out];
            self.delta_prev.clear();
            self.delta_prev.resize(n * fan_in, 0.0);
            for r in 0..n {
                let d = &self.delta[r * fan_out..(r + 1) * fan_out];
                let dp = &mut self.delta_prev[r * fan_in..(r + 1) * fan_in];
                for o in 0..fan_out {
                    let dv = d[o];
                    if dv == 0.0 {
                        continue;
                    }
                    for (p, wi) in dp.iter_mut().zip(&w[o * fan_in..(o + 1) * fan_in]) {
                        *p += dv * wi;
                    }
                }
                let a = &self.acts[l - 1][r * fan_in..(r + 1) * fan_in];
                for (p, ai) in dp.iter_mut().zip(a) {
                    *p *= 1.0 - ai * ai;
                }
            }
            std::mem::swap(&mut self.delta, &mut self.delta_prev);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_at_zero_is_one_half() {
        let m = BiasModel::new(Architecture::Constant, 3, vec![0.0]).unwrap();
        let g = m.forward(&[vec![1.0, 2.0, 3.0], vec![-5.0, 0.0, 9.0]]).unwrap();
        assert_eq!(g, vec![0.5, 0.5]);
    }

    #[test]
    fn linear_saturates() {
        let m = BiasModel::new(Architecture::Linear, 2, vec![0.0, 0.0, 50.0]).unwrap();
        let g = m.forward(&[vec![1.0, -1.0], vec![100.0, 3.0]]).unwrap();
        assert!(g.iter().all(|&v| v > 1.0 - 1e-12 && v <= 1.0));
    }

    #[test]
    fn mlp_is_reproducible_and_bounded() {
        let a = BiasModel::init(Architecture::small_mlp(), 4, 9).unwrap();
        let b = BiasModel::init(Architecture::small_mlp(), 4, 9).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.param_count(), 4 * 10 + 10 + 10 + 1);
        let rows: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64 * 0.1 - 1.0; 4]).collect();
        let g1 = a.forward(&rows).unwrap();
        assert_eq!(g1, b.forward(&rows).unwrap());
        assert!(g1.iter().all(|&v| v > 0.0 && v < 1.0));
        assert!(a.forward(&[vec![0.0; 3]]).is_err());
    }

    #[test]
    fn param_counts() {
        assert_eq!(Architecture::Constant.param_count(8), 1);
        assert_eq!(Architecture::Linear.param_count(8), 9);
        assert_eq!(Architecture::Linear.param_count(0), 1);
        assert_eq!(Architecture::large_mlp().param_count(8), 900 + 5050 + 510 + 55 + 6);
        assert!(BiasModel::new(Architecture::Linear, 2, vec![0.0; 2]).is_err());
    }

    #[test]
    fn empty_input_mlp_is_constant() {
        let m = BiasModel::init(Architecture::small_mlp(), 0, 1).unwrap();
        let g = m.forward(&[Vec::<f64>::new(), Vec::new()]).unwrap();
        assert_eq!(g[0], g[1]);
    }

    #[test]
    fn parse_and_display() {
        for s in ["constant", "linear", "mlp:10", "mlp:100-50-10-5"] {
            let a: Architecture = s.parse().unwrap();
            assert_eq!(a.to_string(), s);
        }
        assert_eq!("small-mlp".parse::<Architecture>().unwrap(), Architecture::small_mlp());
        assert!("mlp:".parse::<Architecture>().is_err());
        assert!("mlp:0".parse::<Architecture>().is_err());
        assert!("tree".parse::<Architecture>().is_err());
    }

    #[test]
    fn json_round_trip() {
        let m = BiasModel::init(Architecture::Mlp(vec![3, 2]), 2, 4).unwrap();
        let back = BiasModel::from_json(&m.to_json().unwrap()).unwrap();
        assert_eq!(m, back);
    }

    #[test]
    fn backward_matches_finite_differences_of_sum() {
        let m = BiasModel::init(Architecture::Mlp(vec![4, 3]), 3, 2).unwrap();
        let n = 5;
        let inputs: Vec<f64> = (0..n * 3).map(|i| ((i * 7) % 11) as f64 / 5.0 - 1.0).collect();
        let weights: Vec<f64> = (0..n).map(|i| i as f64 - 2.0).collect();
        let loss = |p: &[f64]| {
            let mm = BiasModel::new(m.architecture.clone(), 3, p.to_vec()).unwrap();
            let mut c = ForwardCache::default();
            let g = mm.forward_flat(&inputs, n, &mut c);
            g.iter().zip(&weights).map(|(g, w)| g * w).sum::<f64>()
        };
        let mut cache = ForwardCache::default();
        cache.forward(&m, &inputs, n);
        let mut grad = vec![0.0; m.param_count()];
        cache.backward(&m, &inputs, n, &weights, &mut grad);
        for k in 0..m.param_count() {
            let mut p = m.parameters.clone();
            p[k] += 1e-6;
            let up = loss(&p);
            p[k] -= 2e-6;
            let fd = (up - loss(&p)) / 2e-6;
            assert!((fd - grad[k]).abs() < 1e-7, "param {k}: {fd} vs {}", grad[k]);
        }
    }
}
