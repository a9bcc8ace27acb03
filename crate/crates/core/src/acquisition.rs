//! Additive confidence-bound acquisition functions and their minimizer.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::space::{Design, ParamSpace};
use crate::surrogate::{GpPosterior, ImpreciseGpPosterior, KernelConfig, NoiseModel, NoiseOptions};

fn one() -> f64 {
    1.0
}

/// Which acquisition family to minimize, with its weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AcquisitionSpec {
    /// `mu - lambda * sigma`
    Cb { lambda: f64 },
    /// `mu - tau * sigma + alpha * eps`
    Racb { tau: f64, alpha: f64 },
    /// `mu - lambda * sigma - rho * (upper_mu - lower_mu) + alpha * eps`; univariate only.
    Uacb {
        lambda: f64,
        rho: f64,
        alpha: f64,
        #[serde(default = "one")]
        imprecision: f64,
    },
}

/// One additive term of an acquisition function.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Component {
    M,
    Se,
    Noise,
    Model,
}

impl Component {
    pub const ALL: [Component; 4] = [
        Component::M,
        Component::Se,
        Component::Noise,
        Component::Model,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Component::M => "m",
            Component::Se => "se",
            Component::Noise => "noise",
            Component::Model => "model",
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

impl AcquisitionSpec {
    pub fn validate(&self, dim: usize) -> Result<()> {
        let weights: Vec<f64> = self.weights().iter().map(|(_, w)| w.abs()).collect();
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.to_string()));
        match *self {
            AcquisitionSpec::Cb { lambda } if !(lambda >= 0.0) => bad("lambda must be >= 0"),
            AcquisitionSpec::Racb { tau, alpha } if !(tau >= 0.0 && alpha >= 0.0) => {
                bad("tau and alpha must be >= 0")
            }
            AcquisitionSpec::Uacb {
                lambda,
                rho,
                alpha,
                imprecision,
            } => {
                if !(lambda >= 0.0 && rho >= 0.0 && alpha >= 0.0 && imprecision >= 0.0) {
                    return bad("uacb weights and imprecision must be >= 0");
                }
                if dim != 1 {
                    return Err(Error::Unsupported(format!(
                        "uacb requires a univariate space, got p = {dim}"
                    )));
                }
                Ok(())
            }
            _ if weights.iter().any(|w| !w.is_finite()) => bad("weights must be finite"),
            _ => Ok(()),
        }
    }

    /// Short family name: `cb`, `racb` or `uacb`.
    pub fn name(&self) -> &'static str {
        match self {
            AcquisitionSpec::Cb { .. } => "cb",
            AcquisitionSpec::Racb { .. } => "racb",
            AcquisitionSpec::Uacb { .. } => "uacb",
        }
    }

    /// Signed coefficient of each raw component; the acquisition is `sum w_c * raw_c`.
    pub fn weights(&self) -> Vec<(Component, f64)> {
        match *self {
            AcquisitionSpec::Cb { lambda } => vec![(Component::M, 1.0), (Component::Se, -lambda)],
            AcquisitionSpec::Racb { tau, alpha } => vec![
                (Component::M, 1.0),
                (Component::Se, -tau),
                (Component::Noise, alpha),
            ],
            AcquisitionSpec::Uacb {
                lambda, rho, alpha, ..
            } => vec![
                (Component::M, 1.0),
                (Component::Se, -lambda),
                (Component::Noise, alpha),
                (Component::Model, -rho),
            ],
        }
    }

    pub fn needs_noise_model(&self) -> bool {
        !matches!(self, AcquisitionSpec::Cb { .. })
    }

    pub fn imprecision(&self) -> Option<f64> {
        match *self {
            AcquisitionSpec::Uacb { imprecision, .. } => Some(imprecision),
            _ => None,
        }
    }

    pub fn breakdown(&self, raw: &RawComponents) -> AcquisitionBreakdown {
        let components: BTreeMap<Component, f64> = self
            .weights()
            .into_iter()
            .map(|(c, w)| (c, w * raw.get(c)))
            .collect();
        AcquisitionBreakdown {
            total: components.values().sum(),
            components,
        }
    }

    /// Acquisition value; same arithmetic as [`AcquisitionSpec::breakdown`].
    pub fn value(&self, raw: &RawComponents) -> f64 {
        self.weights()
            .into_iter()
            .map(|(c, w)| w * raw.get(c))
            .sum()
    }

    pub fn evaluate(&self, surrogate: &Surrogate, theta: &[f64]) -> Result<AcquisitionBreakdown> {
        surrogate.check_dim(theta)?;
        Ok(self.breakdown(&surrogate.raw(theta)))
    }
}

/// Unweighted component values at a point: posterior mean and sd, noise estimate,
/// and imprecise-mean envelope width.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RawComponents(pub [f64; 4]);

impl RawComponents {
    pub fn get(&self, c: Component) -> f64 {
        self.0[c.index()]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcquisitionBreakdown {
    pub total: f64,
    pub components: BTreeMap<Component, f64>,
}

/// Everything an acquisition needs at one BO iteration.
#[derive(Debug, Clone)]
pub struct Surrogate {
    pub gp: GpPosterior,
    pub noise: Option<NoiseModel>,
    pub imprecise: Option<ImpreciseGpPosterior>,
}

impl Surrogate {
    /// Fits the GP with `kernel` plus whatever auxiliary models `spec` requires.
    pub fn fit(
        design: &Design,
        space: &ParamSpace,
        spec: &AcquisitionSpec,
        kernel: &KernelConfig,
        noise_opts: &NoiseOptions,
    ) -> Result<Self> {
        spec.validate(space.dim())?;
        let gp = GpPosterior::fit(design, kernel)?;
        let noise = if spec.needs_noise_model() {
            Some(NoiseModel::fit(design, space, noise_opts)?)
        } else {
            None
        };
        let imprecise = match spec.imprecision() {
            Some(c) => Some(ImpreciseGpPosterior::from_base(gp.clone(), c)?),
            None => None,
        };
        Ok(Surrogate {
            gp,
            noise,
            imprecise,
        })
    }

    pub fn dim(&self) -> usize {
        self.gp.dim()
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

    pub fn raw(&self, theta: &[f64]) -> RawComponents {
        let p = self.gp.predict_point(theta);
        let noise = self.noise.as_ref().map_or(0.0, |n| n.predict_point(theta));
        let width = self
            .imprecise
            .as_ref()
            .map_or(0.0, |i| i.envelope_point(theta).width());
        RawComponents([p.mean, p.sd, noise, width])
    }
}

fn check_weight(name: &str, w: f64) -> Result<()> {
    if w >= 0.0 && w.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!(
            "{name} must be a finite nonnegative weight, got {w}"
        )))
    }
}

pub fn eval_cb(gp: &GpPosterior, theta: &[f64], lambda: f64) -> Result<AcquisitionBreakdown> {
    check_weight("lambda", lambda)?;
    let p = gp.predict(theta)?;
    Ok(AcquisitionSpec::Cb { lambda }.breakdown(&RawComponents([p.mean, p.sd, 0.0, 0.0])))
}

pub fn eval_racb(
    gp: &GpPosterior,
    noise: &NoiseModel,
    theta: &[f64],
    tau: f64,
    alpha: f64,
) -> Result<AcquisitionBreakdown> {
    check_weight("tau", tau)?;
    check_weight("alpha", alpha)?;
    let p = gp.predict(theta)?;
    let e = noise.predict(theta)?;
    Ok(AcquisitionSpec::Racb { tau, alpha }.breakdown(&RawComponents([p.mean, p.sd, e, 0.0])))
}

pub fn eval_uacb(
    gp: &GpPosterior,
    igp: &ImpreciseGpPosterior,
    noise: &NoiseModel,
    theta: &[f64],
    lambda: f64,
    rho: f64,
    alpha: f64,
) -> Result<AcquisitionBreakdown> {
    if gp.dim() != 1 {
        return Err(Error::Unsupported(format!(
            "uacb requires a univariate space, got p = {}",
            gp.dim()
        )));
    }
    for (n, w) in [("lambda", lambda), ("rho", rho), ("alpha", alpha)] {
        check_weight(n, w)?;
    }
    let p = gp.predict(theta)?;
    let e = noise.predict(theta)?;
    let w = igp.width(theta)?;
    let spec = AcquisitionSpec::Uacb {
        lambda,
        rho,
        alpha,
        imprecision: igp.imprecision(),
    };
    Ok(spec.breakdown(&RawComponents([p.mean, p.sd, e, w])))
}

/// Orders by value, then lexicographically by theta, so the reduction does not depend
/// on evaluation order.
fn candidate_order(a: &(Vec<f64>, f64), b: &(Vec<f64>, f64)) -> Ordering {
    a.1.total_cmp(&b.1).then_with(|| {
        a.0.iter()
            .zip(&b.0)
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(Ordering::Equal)
    })
}

const LOCAL_STARTS: usize = 5;
const MAX_SWEEPS: usize = 400;

/// Compass search with per-coordinate steps starting at a tenth of the box width,
/// halving on failure; points are clamped to the box.
pub(crate) fn coordinate_search(
    f: &dyn Fn(&[f64]) -> f64,
    space: &ParamSpace,
    start: Vec<f64>,
    start_value: f64,
) -> (Vec<f64>, f64) {
    let widths: Vec<f64> = space
        .lower()
        .iter()
        .zip(space.upper())
        .map(|(lo, hi)| hi - lo)
        .collect();
    let mut step: Vec<f64> = widths.iter().map(|w| 0.1 * w).collect();
    let mut x = start;
    let mut fx = start_value;
    for _ in 0..MAX_SWEEPS {
        let mut improved = false;
        for j in 0..x.len() {
            for dir in [1.0, -1.0] {
                let mut y = x.clone();
                y[j] = (y[j] + dir * step[j]).clamp(space.lower()[j], space.upper()[j]);
                if y[j] == x[j] {
                    continue;
                }
                let fy = f(&y);
                if fy < fx {
                    x = y;
                    fx = fy;
                    improved = true;
                    break;
                }
            }
        }
        if !improved {
            for s in step.iter_mut() {
                *s *= 0.5;
            }
            if step.iter().zip(&widths).all(|(s, w)| *s < 1e-9 * w) {
                break;
            }
        }
    }
    (x, fx)
}

/// Multistart minimizer: `budget` uniform candidates, then coordinate refinement
/// from the best five. Deterministic given the rng state.
pub fn minimize<R: Rng + ?Sized>(
    f: &dyn Fn(&[f64]) -> f64,
    space: &ParamSpace,
    budget: usize,
    rng: &mut R,
) -> (Vec<f64>, f64) {
    let budget = budget.max(1);
    let mut candidates: Vec<(Vec<f64>, f64)> = (0..budget)
        .map(|_| {
            let t = space.sample(rng);
            let v = f(&t);
            (t, v)
        })
        .collect();
    candidates.sort_by(candidate_order);
    let mut results: Vec<(Vec<f64>, f64)> = candidates
        .into_iter()
        .take(LOCAL_STARTS)
        .map(|(t, v)| coordinate_search(f, space, t, v))
        .collect();
    results.sort_by(candidate_order);
    results.swap_remove(0)
}

pub fn default_budget(space: &ParamSpace) -> usize {
    1000 * space.dim()
}

pub fn minimize_acquisition<R: Rng + ?Sized>(
    spec: &AcquisitionSpec,
    surrogate: &Surrogate,
    space: &ParamSpace,
    budget: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    spec.validate(space.dim())?;
    if surrogate.dim() != space.dim() {
        return Err(Error::DimensionMismatch {
            expected: space.dim(),
            got: surrogate.dim(),
        });
    }
    let f = |t: &[f64]| spec.value(&surrogate.raw(t));
    Ok(minimize(&f, space, budget, rng).0)
}
