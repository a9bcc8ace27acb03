use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::space::Design;

/// How a [`KernelConfig`] was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HyperMode {
    Fixed,
    EmpiricalBayes,
}

/// Hyperparameters of the squared-exponential GP
/// `k(x, x') = signal_var * exp(-0.5 * (|x - x'| / range)^2)` with constant prior mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelConfig {
    pub range: f64,
    pub prior_mean: f64,
    /// Observation-noise variance added to the diagonal.
    pub nugget: f64,
    #[serde(default = "one")]
    pub signal_var: f64,
    pub mode: HyperMode,
}

fn one() -> f64 {
    1.0
}

impl KernelConfig {
    pub fn fixed(range: f64, prior_mean: f64, nugget: f64) -> Self {
        KernelConfig {
            range,
            prior_mean,
            nugget,
            signal_var: 1.0,
            mode: HyperMode::Fixed,
        }
    }

    pub fn with_signal_var(mut self, signal_var: f64) -> Self {
        self.signal_var = signal_var;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.range.is_finite() && self.range > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "kernel range must be positive, got {}",
                self.range
            )));
        }
        if !(self.nugget.is_finite() && self.nugget >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "nugget must be nonnegative, got {}",
                self.nugget
            )));
        }
        if !(self.signal_var.is_finite() && self.signal_var > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "signal variance must be positive, got {}",
                self.signal_var
            )));
        }
        if !self.prior_mean.is_finite() {
            return Err(Error::InvalidConfig("prior mean must be finite".into()));
        }
        Ok(())
    }
}

#[inline]
pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[inline]
pub(crate) fn correlation(a: &[f64], b: &[f64], range: f64) -> f64 {
    (-0.5 * sq_dist(a, b) / (range * range)).exp()
}

/// Dense Cholesky factor stored row-major (lower triangle only is meaningful).
#[derive(Debug, Clone)]
pub(crate) struct CholFactor {
    pub(crate) n: usize,
    pub(crate) l: Vec<f64>,
}

impl CholFactor {
    /// Factorizes a symmetric matrix given as a closure over (i, j).
    pub(crate) fn factor(n: usize, entry: impl Fn(usize, usize) -> f64) -> Result<Self> {
        let m = DMatrix::from_fn(n, n, entry);
        let chol = m
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Factorization("matrix is not positive definite".into()))?;
        let lm = chol.l();
        let mut l = vec![0.0; n * n];
        for i in 0..n {
            let pivot = lm[(i, i)];
            if !(pivot * pivot > 1e-13 * m[(i, i)].abs().max(f64::MIN_POSITIVE)) {
                return Err(Error::Factorization(format!(
                    "pivot {i} vanished (near-duplicate inputs)"
                )));
            }
            for j in 0..=i {
                l[i * n + j] = lm[(i, j)];
            }
        }
        Ok(CholFactor { n, l })
    }

    pub(crate) fn len(&self) -> usize {
        self.n
    }

    /// Solves `L v = b` in place.
    pub(crate) fn forward(&self, b: &mut [f64]) {
        let n = self.n;
        for i in 0..n {
            let row = &self.l[i * n..i * n + i];
            let s: f64 = row.iter().zip(&b[..i]).map(|(a, v)| a * v).sum();
            b[i] = (b[i] - s) / self.l[i * n + i];
        }
    }

    /// Solves `L^T v = b` in place.
    pub(crate) fn backward(&self, b: &mut [f64]) {
        let n = self.n;
        for i in (0..n).rev() {
            let mut s = b[i];
            for k in i + 1..n {
                s -= self.l[k * n + i] * b[k];
            }
            b[i] = s / self.l[i * n + i];
        }
    }

    /// Solves `(L L^T) x = b`.
    pub(crate) fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.forward(&mut x);
        self.backward(&mut x);
        x
    }

    pub(crate) fn log_det(&self) -> f64 {
        (0..self.n)
            .map(|i| self.l[i * self.n + i].ln())
            .sum::<f64>()
            * 2.0
    }
}

/// Posterior mean and standard deviation at one point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub mean: f64,
    pub sd: f64,
}

/// A fitted GP. Immutable after construction.
#[derive(Debug, Clone)]
pub struct GpPosterior {
    design: Design,
    inputs: Vec<Vec<f64>>,
    kernel: KernelConfig,
    chol: CholFactor,
    weights: Vec<f64>,
}

impl GpPosterior {
    pub fn fit(design: &Design, kernel: &KernelConfig) -> Result<Self> {
        kernel.validate()?;
        if design.is_empty() {
            return Err(Error::Empty("design"));
        }
        let inputs: Vec<Vec<f64>> = design.thetas().map(<[f64]>::to_vec).collect();
        let n = inputs.len();
        let s = kernel.signal_var;
        let chol = CholFactor::factor(n, |i, j| {
            let k = s * correlation(&inputs[i], &inputs[j], kernel.range);
            if i == j {
                k + kernel.nugget
            } else {
                k
            }
        })?;
        let centered: Vec<f64> = design
            .psis()
            .iter()
            .map(|y| y - kernel.prior_mean)
            .collect();
        let weights = chol.solve(&centered);
        Ok(GpPosterior {
            design: design.clone(),
            inputs,
            kernel: kernel.clone(),
            chol,
            weights,
        })
    }

    pub fn design(&self) -> &Design {
        &self.design
    }

    pub fn kernel(&self) -> &KernelConfig {
        &self.kernel
    }

    pub fn dim(&self) -> usize {
        self.inputs[0].len()
    }

    pub(crate) fn chol(&self) -> &CholFactor {
        &self.chol
    }

    pub fn prior_sd(&self) -> f64 {
        self.kernel.signal_var.sqrt()
    }

    fn cross_cov(&self, theta: &[f64], out: &mut Vec<f64>) {
        let s = self.kernel.signal_var;
        out.clear();
        out.extend(
            self.inputs
                .iter()
                .map(|x| s * correlation(x, theta, self.kernel.range)),
        );
    }

    /// Posterior mean and sd; errors on dimension mismatch.
    pub fn predict(&self, theta: &[f64]) -> Result<Prediction> {
        self.check_dim(theta)?;
        Ok(self.predict_point(theta))
    }

    pub fn predict_batch(&self, thetas: &[Vec<f64>]) -> Result<Vec<Prediction>> {
        thetas.iter().map(|t| self.predict(t)).collect()
    }

    pub fn predict_mean(&self, theta: &[f64]) -> Result<f64> {
        self.check_dim(theta)?;
        Ok(self.mean_point(theta))
    }

    fn check_dim(&self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: theta.len(),
            });
        }
        Ok(())
    }

    pub(crate) fn predict_point(&self, theta: &[f64]) -> Prediction {
        let mut k = Vec::with_capacity(self.inputs.len());
        self.cross_cov(theta, &mut k);
        let mean = self.kernel.prior_mean + dot(&k, &self.weights);
        self.chol.forward(&mut k);
        let var = self.kernel.signal_var - dot(&k, &k);
        Prediction {
            mean,
            sd: var.max(0.0).sqrt(),
        }
    }

    pub(crate) fn mean_point(&self, theta: &[f64]) -> f64 {
        let s = self.kernel.signal_var;
        let r = self.kernel.range;
        self.kernel.prior_mean
            + self
                .inputs
                .iter()
                .zip(&self.weights)
                .map(|(x, w)| s * correlation(x, theta, r) * w)
                .sum::<f64>()
    }

    /// `k(theta, X) K^{-1} 1`, the weight the data put on the prior mean's complement.
    pub(crate) fn cross_cov_dot(&self, theta: &[f64], v: &[f64]) -> f64 {
        let s = self.kernel.signal_var;
        let r = self.kernel.range;
        self.inputs
            .iter()
            .zip(v)
            .map(|(x, w)| s * correlation(x, theta, r) * w)
            .sum()
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
