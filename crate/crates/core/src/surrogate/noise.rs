use serde::{Deserialize, Serialize};

use super::gp::{GpPosterior, HyperMode, KernelConfig};
use super::hyper::{estimate_hyperparams, HyperOptions};
use crate::error::{Error, Result};
use crate::space::{mean_var, Design, Observation, ParamSpace};

/// `sqrt(pi / 2)`: rescales an absolute Gaussian residual into an sd estimate.
const ABS_TO_SD: f64 = 1.253_314_137_315_500_3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseOptions {
    #[serde(default = "default_floor")]
    pub floor: f64,
    /// Residual targets are averaged over this many nearest design points.
    #[serde(default = "default_window")]
    pub window: usize,
}

fn default_floor() -> f64 {
    1e-8
}

fn default_window() -> usize {
    1
}

impl Default for NoiseOptions {
    fn default() -> Self {
        NoiseOptions {
            floor: default_floor(),
            window: default_window(),
        }
    }
}

/// Mean of `raw` over the `window` nearest points of each point, distances scaled
/// by the box widths; ties keep design order.
fn rolling_mean(points: &[&[f64]], raw: &[f64], space: &ParamSpace, window: usize) -> Vec<f64> {
    let w = window.clamp(1, points.len());
    let widths: Vec<f64> = space
        .lower()
        .iter()
        .zip(space.upper())
        .map(|(a, b)| b - a)
        .collect();
    points
        .iter()
        .map(|p| {
            let mut d: Vec<(f64, usize)> = points
                .iter()
                .enumerate()
                .map(|(i, q)| {
                    let dist: f64 = p
                        .iter()
                        .zip(*q)
                        .zip(&widths)
                        .map(|((a, b), w)| ((a - b) / w).powi(2))
                        .sum();
                    (dist, i)
                })
                .collect();
            d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            d[..w].iter().map(|(_, i)| raw[*i]).sum::<f64>() / w as f64
        })
        .collect()
}

/// On-the-fly estimate of the local noise scale.
#[derive(Debug, Clone)]
pub struct NoiseModel {
    inner: Option<GpPosterior>,
    floor: f64,
    targets: Design,
}

impl NoiseModel {
    /// Targets are replicate sds where a theta was evaluated more than once and
    /// rescaled absolute residuals against a smoothing GP fit elsewhere, averaged over
    /// a window of nearest neighbours; a second GP is fit to those targets and its
    /// mean clamped at `floor`.
    pub fn fit(design: &Design, space: &ParamSpace, opts: &NoiseOptions) -> Result<Self> {
        if design.is_empty() {
            return Err(Error::Empty("design"));
        }
        if !(opts.floor.is_finite() && opts.floor >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "noise floor must be nonnegative, got {}",
                opts.floor
            )));
        }
        let groups = design.replicate_groups();
        let needs_residuals = groups.iter().any(|(_, p)| p.len() == 1);
        let preliminary = if needs_residuals && groups.len() >= 2 {
            let k = estimate_hyperparams(design, space, &HyperOptions::noisy())?;
            Some(GpPosterior::fit(design, &k)?)
        } else {
            None
        };

        let raw: Vec<f64> = groups
            .iter()
            .map(|(theta, psis)| {
                if psis.len() > 1 {
                    mean_var(psis).1.sqrt()
                } else if let Some(gp) = &preliminary {
                    (psis[0] - gp.predict_point(theta).mean).abs() * ABS_TO_SD
                } else {
                    0.0
                }
            })
            .collect();
        let points: Vec<&[f64]> = groups.iter().map(|(t, _)| t.as_slice()).collect();
        let rolled = rolling_mean(&points, &raw, space, opts.window);
        let mut targets = Design::new();
        for (i, (theta, psis)) in groups.iter().enumerate() {
            let t = if psis.len() > 1 { raw[i] } else { rolled[i] };
            targets.push(Observation::new(theta.clone(), t))?;
        }

        let all_small = targets.observations().iter().all(|o| o.psi <= opts.floor);
        let inner = if all_small {
            None
        } else if targets.distinct_thetas() >= 2 {
            let k = estimate_hyperparams(&targets, space, &HyperOptions::noisy())?;
            Some(GpPosterior::fit(&targets, &k)?)
        } else {
            let t = targets.observations()[0].psi;
            let k = KernelConfig {
                range: space.diameter(),
                prior_mean: t,
                nugget: 1e-6,
                signal_var: 1.0,
                mode: HyperMode::Fixed,
            };
            Some(GpPosterior::fit(&targets, &k)?)
        };
        Ok(NoiseModel {
            inner,
            floor: opts.floor,
            targets,
        })
    }

    pub fn floor(&self) -> f64 {
        self.floor
    }

    /// The per-theta noise-scale targets the inner GP was fit to.
    pub fn targets(&self) -> &Design {
        &self.targets
    }

    pub fn predict(&self, theta: &[f64]) -> Result<f64> {
        let expected = self.targets.dim().unwrap_or(theta.len());
        if theta.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                got: theta.len(),
            });
        }
        Ok(self.predict_point(theta))
    }

    pub(crate) fn predict_point(&self, theta: &[f64]) -> f64 {
        match &self.inner {
            Some(gp) => gp.mean_point(theta).max(self.floor),
            None => self.floor,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::benchmarks::{hetero_mean, hetero_noise_scale};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn rolling_window_averages_nearest() {
        let space = ParamSpace::cube(1, 0.0, 10.0).unwrap();
        let pts: Vec<Vec<f64>> = [0.0, 1.0, 2.0, 9.0].iter().map(|x| vec![*x]).collect();
        let refs: Vec<&[f64]> = pts.iter().map(Vec::as_slice).collect();
        let raw = [3.0, 6.0, 9.0, 30.0];
        assert_eq!(rolling_mean(&refs, &raw, &space, 1), raw);
        assert_eq!(rolling_mean(&refs, &raw, &space, 3), [6.0, 6.0, 6.0, 15.0]);
        assert_eq!(rolling_mean(&refs, &raw, &space, 10), [12.0; 4]);
    }

    #[test]
    fn zero_noise_predicts_floor() {
        let space = ParamSpace::cube(2, -1.0, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let d = Design::from_observations(
            space
                .sample_n(15, &mut rng)
                .into_iter()
                .map(|t| Observation::new(t, 2.5))
                .collect(),
        )
        .unwrap();
        let nm = NoiseModel::fit(&d, &space, &NoiseOptions::default()).unwrap();
        for t in space.sample_n(50, &mut rng) {
            assert!(nm.predict(&t).unwrap() <= nm.floor());
        }
    }

    #[test]
    fn replicate_sd_anchors_estimate() {
        let space = ParamSpace::cube(1, 0.0, 1.0).unwrap();
        // sample sd of {1, 4, 7} is 3
        let mut obs: Vec<Observation> = [1.0, 4.0, 7.0]
            .iter()
            .map(|y| Observation::new(vec![0.5], *y))
            .collect();
        obs.push(Observation::new(vec![0.1], 4.0));
        obs.push(Observation::new(vec![0.9], 4.2));
        let d = Design::from_observations(obs).unwrap();
        assert_eq!(mean_var(&[1.0, 4.0, 7.0]).1.sqrt(), 3.0);
        let nm = NoiseModel::fit(&d, &space, &NoiseOptions::default()).unwrap();
        let e = nm.predict(&[0.5]).unwrap();
        assert!((1.5..=4.5).contains(&e), "estimate {e}");
    }

    #[test]
    fn learns_heteroscedastic_ordering() {
        let space = ParamSpace::cube(2, -15.0, 15.0).unwrap();
        let mut wins = 0;
        for seed in 0..5u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let obs = space
                .sample_n(60, &mut rng)
                .into_iter()
                .map(|t| {
                    let sd = hetero_noise_scale(&t);
                    let y = hetero_mean(&t) + Normal::new(0.0, sd).unwrap().sample(&mut rng);
                    Observation::new(t, y)
                })
                .collect();
            let d = Design::from_observations(obs).unwrap();
            let nm = NoiseModel::fit(&d, &space, &NoiseOptions::default()).unwrap();
            if nm.predict(&[-15.0, 0.0]).unwrap() > nm.predict(&[15.0, 0.0]).unwrap() {
                wins += 1;
            }
        }
        assert!(wins >= 3, "ordering held for {wins}/5 seeds");
    }
}
