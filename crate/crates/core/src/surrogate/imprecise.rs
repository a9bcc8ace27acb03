use serde::{Deserialize, Serialize};

use super::gp::{GpPosterior, KernelConfig};
use crate::error::{Error, Result};
use crate::space::{mean_var, Design};

/// Lower and upper posterior mean over the prior-mean interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanEnvelope {
    pub lower: f64,
    pub upper: f64,
}

impl MeanEnvelope {
    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }
}

/// The set of GP posteriors obtained by letting the constant prior mean range over
/// `[m - c*s, m + c*s]` (s the sample sd of the targets). The posterior mean is affine
/// in the prior mean, so the two endpoint posteriors bound the whole set.
#[derive(Debug, Clone)]
pub struct ImpreciseGpPosterior {
    base: GpPosterior,
    imprecision: f64,
    prior_interval: (f64, f64),
    weights_lo: Vec<f64>,
    weights_hi: Vec<f64>,
}

impl ImpreciseGpPosterior {
    pub fn fit(design: &Design, imprecision: f64, kernel: &KernelConfig) -> Result<Self> {
        let base = GpPosterior::fit(design, kernel)?;
        Self::from_base(base, imprecision)
    }

    pub fn from_base(base: GpPosterior, imprecision: f64) -> Result<Self> {
        if base.dim() != 1 {
            return Err(Error::Unsupported(format!(
                "imprecise GP is univariate only, got p = {}",
                base.dim()
            )));
        }
        if !(imprecision.is_finite() && imprecision >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "degree of imprecision must be nonnegative, got {imprecision}"
            )));
        }
        let (_, var) = mean_var(&base.design().psis());
        let half = imprecision * var.sqrt();
        let m = base.kernel().prior_mean;
        let prior_interval = (m - half, m + half);
        let psis = base.design().psis();
        let weights_at = |prior: f64| {
            let centered: Vec<f64> = psis.iter().map(|y| y - prior).collect();
            base.chol().solve(&centered)
        };
        let weights_lo = weights_at(prior_interval.0);
        let weights_hi = weights_at(prior_interval.1);
        Ok(ImpreciseGpPosterior {
            base,
            imprecision,
            prior_interval,
            weights_lo,
            weights_hi,
        })
    }

    pub fn base(&self) -> &GpPosterior {
        &self.base
    }

    pub fn imprecision(&self) -> f64 {
        self.imprecision
    }

    pub fn prior_interval(&self) -> (f64, f64) {
        self.prior_interval
    }

    pub fn envelope(&self, theta: &[f64]) -> Result<MeanEnvelope> {
        if theta.len() != 1 {
            return Err(Error::DimensionMismatch {
                expected: 1,
                got: theta.len(),
            });
        }
        Ok(self.envelope_point(theta))
    }

    pub(crate) fn envelope_point(&self, theta: &[f64]) -> MeanEnvelope {
        let a = self.prior_interval.0 + self.base.cross_cov_dot(theta, &self.weights_lo);
        let b = self.prior_interval.1 + self.base.cross_cov_dot(theta, &self.weights_hi);
        MeanEnvelope {
            lower: a.min(b),
            upper: a.max(b),
        }
    }

    pub fn width(&self, theta: &[f64]) -> Result<f64> {
        Ok(self.envelope(theta)?.width())
    }
}
