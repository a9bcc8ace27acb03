use serde::{Deserialize, Serialize};

use super::gp::{correlation, CholFactor, HyperMode, KernelConfig};
use crate::error::{Error, Result};
use crate::space::{mean_var, Design, ParamSpace};

/// Options for the empirical-Bayes grid search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperOptions {
    /// Also search the nugget-to-signal ratio instead of using the fixed default.
    #[serde(default)]
    pub estimate_nugget: bool,
    #[serde(default = "default_grid")]
    pub grid_size: usize,
}

fn default_grid() -> usize {
    32
}

impl Default for HyperOptions {
    fn default() -> Self {
        HyperOptions {
            estimate_nugget: false,
            grid_size: default_grid(),
        }
    }
}

impl HyperOptions {
    pub fn noisy() -> Self {
        HyperOptions {
            estimate_nugget: true,
            ..HyperOptions::default()
        }
    }
}

/// Default nugget-to-signal ratio when nothing better is known.
pub const DEFAULT_NUGGET_RATIO: f64 = 1e-6;

fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n <= 1 {
        return vec![hi];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..n)
        .map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp())
        .collect()
}

/// Pooled within-group variance over replicate groups, if any group has two or more members.
pub(crate) fn pooled_replicate_variance(design: &Design) -> Option<f64> {
    let mut ss = 0.0;
    let mut dof = 0usize;
    for (_, psis) in design.replicate_groups() {
        if psis.len() > 1 {
            let (_, v) = mean_var(&psis);
            ss += v * (psis.len() - 1) as f64;
            dof += psis.len() - 1;
        }
    }
    (dof > 0).then(|| ss / dof as f64)
}

/// Empirical-Bayes hyperparameters: sample-mean prior, range (and optionally the
/// nugget ratio) maximizing the profile log marginal likelihood on a log grid over
/// `[0.01 * diam, diam]`, with the signal variance profiled out in closed form.
pub fn estimate_hyperparams(
    design: &Design,
    space: &ParamSpace,
    opts: &HyperOptions,
) -> Result<KernelConfig> {
    if design.len() < 2 {
        return Err(Error::DegenerateDesign(format!(
            "need at least 2 observations, got {}",
            design.len()
        )));
    }
    if design.distinct_thetas() < 2 {
        return Err(Error::DegenerateDesign(
            "all thetas identical; the kernel range is not identifiable".into(),
        ));
    }
    let psis = design.psis();
    let (mean, var) = mean_var(&psis);
    let centered: Vec<f64> = psis.iter().map(|y| y - mean).collect();
    let n = psis.len();
    let inputs: Vec<&[f64]> = design.thetas().collect();

    let ratios = if opts.estimate_nugget {
        log_grid(1e-6, 1.0, 13)
    } else if let Some(pooled) = pooled_replicate_variance(design) {
        let r = if var > 0.0 { pooled / var } else { 0.0 };
        vec![r.clamp(DEFAULT_NUGGET_RATIO, 1e3)]
    } else {
        vec![DEFAULT_NUGGET_RATIO]
    };
    let diam = space.diameter();
    let ranges = log_grid(1e-2 * diam, diam, opts.grid_size.max(1));
    let var_floor = 1e-12 * mean.abs().max(1.0).powi(2);

    let mut best: Option<(f64, f64, f64, f64)> = None;
    for &ratio in &ratios {
        for &range in &ranges {
            let chol = match CholFactor::factor(n, |i, j| {
                let c = correlation(inputs[i], inputs[j], range);
                if i == j {
                    c + ratio
                } else {
                    c
                }
            }) {
                Ok(c) => c,
                Err(_) => continue,
            };
            let alpha = chol.solve(&centered);
            let quad: f64 = centered.iter().zip(&alpha).map(|(a, b)| a * b).sum();
            let sigma2 = (quad / n as f64).max(var_floor);
            let ll = -0.5 * n as f64 * sigma2.ln() - 0.5 * chol.log_det();
            if best.is_none_or(|(b, ..)| ll > b) {
                best = Some((ll, range, ratio, sigma2));
            }
        }
    }
    let (_, range, ratio, sigma2) = best.ok_or_else(|| {
        Error::Factorization("no grid point yielded a positive definite covariance".into())
    })?;
    Ok(KernelConfig {
        range,
        prior_mean: mean,
        nugget: ratio * sigma2,
        signal_var: sigma2,
        mode: HyperMode::EmpiricalBayes,
    })
}
