//! Synthetic targets: the hyper-ellipsoid, the heteroscedastic ellipsoid and
//! GP-sampled smooth utilities.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::acquisition::coordinate_search;
use crate::error::{Error, Result};
use crate::space::{Design, Observation, ParamSpace};
use crate::surrogate::{GpPosterior, HyperMode, KernelConfig};

pub const HYPER_ELLIPSOID_BOUND: f64 = 5.12;
pub const HETERO_BOUND: f64 = 15.0;

pub fn hyper_ellipsoid_space() -> ParamSpace {
    ParamSpace::cube(4, -HYPER_ELLIPSOID_BOUND, HYPER_ELLIPSOID_BOUND).expect("valid box")
}

pub fn hetero_space() -> ParamSpace {
    ParamSpace::cube(2, -HETERO_BOUND, HETERO_BOUND).expect("valid box")
}

/// `sum_j j * theta_j^2` on `[-5.12, 5.12]^4`.
pub fn hyper_ellipsoid(theta: &[f64]) -> Result<f64> {
    hyper_ellipsoid_space().check(theta)?;
    Ok(weighted_squares(theta))
}

pub fn hyper_ellipsoid_gradient(theta: &[f64]) -> Result<Vec<f64>> {
    hyper_ellipsoid_space().check(theta)?;
    Ok(theta
        .iter()
        .enumerate()
        .map(|(j, x)| 2.0 * (j + 1) as f64 * x)
        .collect())
}

fn weighted_squares(theta: &[f64]) -> f64 {
    theta
        .iter()
        .enumerate()
        .map(|(j, x)| (j + 1) as f64 * x * x)
        .sum()
}

/// Mean of the heteroscedastic ellipsoid, `theta_1^2 + 2 theta_2^2`.
pub fn hetero_mean(theta: &[f64]) -> f64 {
    weighted_squares(theta)
}

/// Noise scale `30 |theta_1 - 15| + 0.3 |theta_2 - 15|`.
pub fn hetero_noise_scale(theta: &[f64]) -> f64 {
    30.0 * (theta[0] - 15.0).abs() + 0.3 * (theta[1] - 15.0).abs()
}

/// Bounds-checked `(mean, noise_scale)` of the heteroscedastic ellipsoid.
pub fn hetero_ellipsoid(theta: &[f64]) -> Result<(f64, f64)> {
    hetero_space().check(theta)?;
    Ok((hetero_mean(theta), hetero_noise_scale(theta)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    #[default]
    Minimize,
    Maximize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum NoiseSpec {
    #[default]
    None,
    Homoscedastic {
        sd: f64,
    },
    /// Uses the target's own noise-scale function. `offset = true` adds the scale as
    /// a deterministic term instead of using it as a Gaussian sd.
    Heteroscedastic {
        #[serde(default)]
        offset: bool,
    },
}

fn default_smoothness() -> f64 {
    0.3
}

fn default_amplitude() -> f64 {
    1.0
}

fn default_grid() -> usize {
    12
}

fn default_unit_lower() -> Vec<f64> {
    vec![0.1, 0.1]
}

fn default_unit_upper() -> Vec<f64> {
    vec![1.0, 1.0]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum TargetKind {
    HyperEllipsoid,
    HeteroEllipsoid,
    /// A fixed-seed GP prior draw on a grid, interpolated by the GP posterior mean.
    GpUtility {
        seed: u64,
        /// Kernel range relative to the box width.
        #[serde(default = "default_smoothness")]
        smoothness: f64,
        #[serde(default = "default_amplitude")]
        amplitude: f64,
        #[serde(default = "default_grid")]
        grid: usize,
        #[serde(default = "default_unit_lower")]
        lower: Vec<f64>,
        #[serde(default = "default_unit_upper")]
        upper: Vec<f64>,
    },
    /// `|theta - center|^2` on an explicit box.
    Quadratic {
        center: Vec<f64>,
        lower: Vec<f64>,
        upper: Vec<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetSpec {
    #[serde(flatten)]
    pub kind: TargetKind,
    #[serde(default)]
    pub direction: Direction,
    #[serde(default)]
    pub noise: NoiseSpec,
}

impl TargetSpec {
    pub fn new(kind: TargetKind) -> Self {
        TargetSpec {
            kind,
            direction: Direction::Minimize,
            noise: NoiseSpec::None,
        }
    }

    pub fn hyper_ellipsoid() -> Self {
        TargetSpec::new(TargetKind::HyperEllipsoid)
    }

    pub fn hetero_ellipsoid() -> Self {
        TargetSpec {
            noise: NoiseSpec::Heteroscedastic { offset: false },
            ..TargetSpec::new(TargetKind::HeteroEllipsoid)
        }
    }

    pub fn gp_utility(seed: u64) -> Self {
        TargetSpec {
            direction: Direction::Maximize,
            ..TargetSpec::new(TargetKind::GpUtility {
                seed,
                smoothness: default_smoothness(),
                amplitude: default_amplitude(),
                grid: default_grid(),
                lower: default_unit_lower(),
                upper: default_unit_upper(),
            })
        }
    }

    pub fn build(&self) -> Result<Target> {
        Target::new(self.clone())
    }

    /// Targets addressable by name: `hyper_ellipsoid`, `hetero_ellipsoid`,
    /// `hetero_ellipsoid_offset`, `gp_utility:<seed>`.
    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "hyper_ellipsoid" => Ok(TargetSpec::hyper_ellipsoid()),
            "hetero_ellipsoid" => Ok(TargetSpec::hetero_ellipsoid()),
            "hetero_ellipsoid_offset" => Ok(TargetSpec {
                noise: NoiseSpec::Heteroscedastic { offset: true },
                ..TargetSpec::new(TargetKind::HeteroEllipsoid)
            }),
            other => match other.strip_prefix("gp_utility:") {
                Some(seed) => seed
                    .parse()
                    .map(TargetSpec::gp_utility)
                    .map_err(|_| Error::InvalidConfig(format!("bad gp_utility seed {seed:?}"))),
                None => Err(Error::InvalidConfig(format!("unknown target {other:?}"))),
            },
        }
    }
}

/// A smooth surface drawn once from a GP prior.
#[derive(Debug, Clone)]
pub struct GpUtility {
    interpolant: GpPosterior,
}

impl GpUtility {
    pub fn new(
        seed: u64,
        space: &ParamSpace,
        smoothness: f64,
        amplitude: f64,
        grid: usize,
    ) -> Result<Self> {
        if space.dim() != 2 {
            return Err(Error::Unsupported(
                "gp_utility is defined on 2-d boxes".into(),
            ));
        }
        if grid < 2 || !(smoothness > 0.0) || !(amplitude > 0.0) {
            return Err(Error::InvalidConfig(
                "gp_utility needs grid >= 2, smoothness > 0, amplitude > 0".into(),
            ));
        }
        let (lo, hi) = (space.lower(), space.upper());
        let width = (hi[0] - lo[0]).max(hi[1] - lo[1]);
        let range = smoothness * width;
        let mut nodes = Vec::with_capacity(grid * grid);
        for a in 0..grid {
            for b in 0..grid {
                let u = a as f64 / (grid - 1) as f64;
                let v = b as f64 / (grid - 1) as f64;
                nodes.push(vec![
                    lo[0] + u * (hi[0] - lo[0]),
                    lo[1] + v * (hi[1] - lo[1]),
                ]);
            }
        }
        let jitter = 1e-8;
        let kernel = KernelConfig {
            range,
            prior_mean: 0.0,
            nugget: jitter,
            signal_var: 1.0,
            mode: HyperMode::Fixed,
        };
        // Prior draw via the factor of the grid covariance.
        let unit = Design::from_observations(
            nodes
                .iter()
                .map(|x| Observation::new(x.clone(), 0.0))
                .collect(),
        )?;
        let prior = GpPosterior::fit(&unit, &kernel)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z: Vec<f64> = (0..nodes.len())
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        let chol = prior.chol();
        let n = chol.len();
        let values: Vec<f64> = (0..n)
            .map(|i| amplitude * (0..=i).map(|j| chol.l[i * n + j] * z[j]).sum::<f64>())
            .collect();
        let design = Design::from_observations(
            nodes
                .into_iter()
                .zip(values)
                .map(|(x, y)| Observation::new(x, y))
                .collect(),
        )?;
        Ok(GpUtility {
            interpolant: GpPosterior::fit(&design, &kernel)?,
        })
    }

    pub fn value(&self, theta: &[f64]) -> f64 {
        self.interpolant.mean_point(theta)
    }
}

/// A built target: evaluates noise-free values and noisy observations.
#[derive(Debug, Clone)]
pub struct Target {
    spec: TargetSpec,
    space: ParamSpace,
    utility: Option<GpUtility>,
    optimum: f64,
    argmin: Vec<f64>,
}

impl Target {
    pub fn new(spec: TargetSpec) -> Result<Self> {
        if let NoiseSpec::Homoscedastic { sd } = spec.noise {
            if !(sd.is_finite() && sd >= 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "noise sd must be >= 0, got {sd}"
                )));
            }
        }
        let (space, utility) = match &spec.kind {
            TargetKind::HyperEllipsoid => (hyper_ellipsoid_space(), None),
            TargetKind::HeteroEllipsoid => (hetero_space(), None),
            TargetKind::GpUtility {
                seed,
                smoothness,
                amplitude,
                grid,
                lower,
                upper,
            } => {
                let space = ParamSpace::new(
                    vec!["theta_lif".into(), "theta_low".into()],
                    lower.clone(),
                    upper.clone(),
                )?;
                let u = GpUtility::new(*seed, &space, *smoothness, *amplitude, *grid)?;
                (space, Some(u))
            }
            TargetKind::Quadratic {
                center,
                lower,
                upper,
            } => {
                let space = ParamSpace::from_bounds(lower.clone(), upper.clone())?;
                space.check(center)?;
                (space, None)
            }
        };
        let mut target = Target {
            spec,
            space,
            utility,
            optimum: 0.0,
            argmin: Vec::new(),
        };
        (target.optimum, target.argmin) = match &target.spec.kind {
            TargetKind::GpUtility { .. } => target.grid_optimum(200),
            TargetKind::Quadratic { center, .. } => (0.0, center.clone()),
            _ => (0.0, vec![0.0; target.space.dim()]),
        };
        Ok(target)
    }

    pub fn spec(&self) -> &TargetSpec {
        &self.spec
    }

    pub fn space(&self) -> &ParamSpace {
        &self.space
    }

    /// Noise-free value in the target's natural direction.
    pub fn value(&self, theta: &[f64]) -> Result<f64> {
        self.space.check(theta)?;
        Ok(self.value_unchecked(theta))
    }

    fn value_unchecked(&self, theta: &[f64]) -> f64 {
        match &self.spec.kind {
            TargetKind::HyperEllipsoid | TargetKind::HeteroEllipsoid => weighted_squares(theta),
            TargetKind::GpUtility { .. } => self.utility.as_ref().expect("built").value(theta),
            TargetKind::Quadratic { center, .. } => theta
                .iter()
                .zip(center)
                .map(|(x, c)| (x - c) * (x - c))
                .sum(),
        }
    }

    /// Noise-free value in minimization convention.
    pub fn loss(&self, theta: &[f64]) -> Result<f64> {
        let v = self.value(theta)?;
        Ok(match self.spec.direction {
            Direction::Minimize => v,
            Direction::Maximize => -v,
        })
    }

    pub fn noise_scale(&self, theta: &[f64]) -> f64 {
        match self.spec.noise {
            NoiseSpec::None => 0.0,
            NoiseSpec::Homoscedastic { sd } => sd,
            NoiseSpec::Heteroscedastic { .. } => match self.spec.kind {
                TargetKind::HeteroEllipsoid => hetero_noise_scale(theta),
                _ => 0.0,
            },
        }
    }

    /// One noisy observation in minimization convention.
    pub fn observe<R: Rng + ?Sized>(&self, theta: &[f64], rng: &mut R) -> Result<f64> {
        let v = self.value(theta)?;
        let noisy = match self.spec.noise {
            NoiseSpec::None => v,
            NoiseSpec::Heteroscedastic { offset: true } => v + self.noise_scale(theta),
            _ => {
                let z: f64 = StandardNormal.sample(rng);
                v + self.noise_scale(theta) * z
            }
        };
        Ok(match self.spec.direction {
            Direction::Minimize => noisy,
            Direction::Maximize => -noisy,
        })
    }

    /// Optimal loss: exact for the analytic targets, grid-plus-refinement for utilities.
    pub fn optimum(&self) -> f64 {
        self.optimum
    }

    /// Location of [`Target::optimum`].
    pub fn argmin(&self) -> &[f64] {
        &self.argmin
    }

    fn grid_optimum(&self, per_axis: usize) -> (f64, Vec<f64>) {
        let (lo, hi) = (self.space.lower(), self.space.upper());
        let mut best = (f64::INFINITY, vec![lo[0], lo[1]]);
        for a in 0..per_axis {
            for b in 0..per_axis {
                let mut t = vec![
                    lo[0] + (hi[0] - lo[0]) * a as f64 / (per_axis - 1) as f64,
                    lo[1] + (hi[1] - lo[1]) * b as f64 / (per_axis - 1) as f64,
                ];
                self.space.clamp(&mut t);
                let l = self.loss(&t).expect("grid inside box");
                if l < best.0 {
                    best = (l, t);
                }
            }
        }
        let f = |t: &[f64]| self.loss(t).expect("refinement inside box");
        let refined = coordinate_search(&f, &self.space, best.1.clone(), best.0);
        if refined.1 < best.0 {
            (refined.1, refined.0)
        } else {
            (best.0, best.1)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::space::mean_var;

    #[test]
    fn hyper_ellipsoid_values() {
        assert_eq!(hyper_ellipsoid(&[0.0; 4]).unwrap(), 0.0);
        assert_eq!(hyper_ellipsoid(&[1.0; 4]).unwrap(), 10.0);
        assert!(hyper_ellipsoid(&[6.0, 0.0, 0.0, 0.0]).is_err());
        assert_eq!(
            hyper_ellipsoid_gradient(&[1.0; 4]).unwrap(),
            vec![2.0, 4.0, 6.0, 8.0]
        );
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let space = ParamSpace::cube(4, -5.0, 5.0).unwrap();
        let h = 1e-5;
        for t in space.sample_n(20, &mut rng) {
            let g = hyper_ellipsoid_gradient(&t).unwrap();
            for j in 0..4 {
                let (mut a, mut b) = (t.clone(), t.clone());
                a[j] += h;
                b[j] -= h;
                let fd = (hyper_ellipsoid(&a).unwrap() - hyper_ellipsoid(&b).unwrap()) / (2.0 * h);
                assert!((fd - g[j]).abs() < 1e-6, "{fd} vs {}", g[j]);
            }
        }
    }

    #[test]
    fn hetero_noise_scale_values() {
        assert_eq!(hetero_ellipsoid(&[15.0, 15.0]).unwrap().1, 0.0);
        assert_eq!(hetero_ellipsoid(&[-15.0, 15.0]).unwrap().1, 900.0);
        assert!(hetero_ellipsoid(&[16.0, 0.0]).is_err());
    }

    #[test]
    fn hetero_draws_have_scale_as_sd() {
        let t = TargetSpec::hetero_ellipsoid().build().unwrap();
        let theta = [3.0, -4.0];
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let draws: Vec<f64> = (0..10_000)
            .map(|_| t.observe(&theta, &mut rng).unwrap())
            .collect();
        let sd = mean_var(&draws).1.sqrt();
        let expected = hetero_noise_scale(&theta);
        assert!(
            (sd - expected).abs() < 0.05 * expected,
            "{sd} vs {expected}"
        );
    }

    #[test]
    fn offset_reading_is_deterministic() {
        let t = TargetSpec::by_name("hetero_ellipsoid_offset")
            .unwrap()
            .build()
            .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(t.observe(&[0.0, 0.0], &mut rng).unwrap(), 450.0 + 4.5);
    }

    #[test]
    fn gp_utility_is_seeded() {
        let a = TargetSpec::gp_utility(4).build().unwrap();
        let b = TargetSpec::gp_utility(4).build().unwrap();
        let c = TargetSpec::gp_utility(5).build().unwrap();
        let center = [0.55, 0.55];
        assert_eq!(a.value(&center).unwrap(), b.value(&center).unwrap());
        assert_ne!(a.value(&center).unwrap(), c.value(&center).unwrap());
        assert_eq!(a.spec().direction, Direction::Maximize);
    }

    /// Dense 100x100 scan never beats the recorded optimum.
    #[test]
    fn gp_utility_optimum_bounds_dense_scan() {
        let t = TargetSpec::gp_utility(2).build().unwrap();
        let (lo, hi) = (t.space().lower().to_vec(), t.space().upper().to_vec());
        let mut best = f64::INFINITY;
        for a in 0..100 {
            for b in 0..100 {
                let mut x = [
                    lo[0] + (hi[0] - lo[0]) * a as f64 / 99.0,
                    lo[1] + (hi[1] - lo[1]) * b as f64 / 99.0,
                ];
                t.space().clamp(&mut x);
                best = best.min(t.loss(&x).unwrap());
            }
        }
        assert!(t.optimum() <= best + 1e-12);
        assert!(best - t.optimum() < 1e-2 * (1.0 + best.abs()));
    }

    #[test]
    fn unknown_name_is_rejected() {
        assert!(TargetSpec::by_name("branin").is_err());
        assert!(TargetSpec::by_name("gp_utility:x").is_err());
    }

    #[test]
    fn spec_json_round_trip() {
        let s = TargetSpec::gp_utility(3);
        let j = serde_json::to_string(&s).unwrap();
        assert_eq!(serde_json::from_str::<TargetSpec>(&j).unwrap(), s);
        let parsed: TargetSpec = serde_json::from_str(r#"{"type":"hyper_ellipsoid"}"#).unwrap();
        assert_eq!(parsed, TargetSpec::hyper_ellipsoid());
    }
}
