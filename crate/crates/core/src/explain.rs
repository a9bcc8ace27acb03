//! Per-iteration Shapley reports of BO proposals and informativeness paths across
//! restarts.

use std::collections::BTreeMap;
use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::acquisition::{AcquisitionSpec, Component, Surrogate};
use crate::bo::RunTrace;
use crate::error::{Error, Result};
use crate::shapley::{
    check_sample_size, compute_payout_multi, estimate_shapley_multi, search_sample_size,
    AdequacyVerdict, AttributionEstimate, KSearch,
};
use crate::space::{mean_var, ParamSpace};
use crate::surrogate::GpPosterior;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplainOptions {
    pub k: usize,
    /// Defaults to `1000 * p`.
    #[serde(default)]
    pub background_size: Option<usize>,
}

impl ExplainOptions {
    pub fn new(k: usize) -> Self {
        ExplainOptions {
            k,
            background_size: None,
        }
    }

    pub fn background_for(&self, space: &ParamSpace) -> usize {
        self.background_size.unwrap_or(1000 * space.dim())
    }
}

/// Uniform background sample; drawn from a stream the permutation draws never use.
pub fn background_sample(space: &ParamSpace, n: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::MAX);
    space.sample_n(n, &mut rng)
}

/// Attribution of one proposal's acquisition value. Component vectors carry their
/// acquisition weight and sign, so per parameter they add up to `phi_af`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapleyReport {
    pub iteration: usize,
    pub explicand: Vec<f64>,
    pub acquisition: AcquisitionSpec,
    pub phi_m: Vec<f64>,
    pub phi_se: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phi_noise: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phi_model: Option<Vec<f64>>,
    pub phi_af: Vec<f64>,
    /// Standard errors of the weighted components and of `phi_af`, keyed by name.
    pub stderr: BTreeMap<String, Vec<f64>>,
    pub adequacy: AdequacyVerdict,
    pub k: usize,
    pub seed: u64,
    pub background_size: usize,
}

impl ShapleyReport {
    pub fn dim(&self) -> usize {
        self.phi_af.len()
    }

    pub fn component(&self, c: Component) -> Option<&[f64]> {
        match c {
            Component::M => Some(&self.phi_m),
            Component::Se => Some(&self.phi_se),
            Component::Noise => self.phi_noise.as_deref(),
            Component::Model => self.phi_model.as_deref(),
        }
    }

    /// Named rows in display order: the components present, then the acquisition total.
    pub fn rows(&self) -> Vec<(&'static str, &[f64])> {
        let mut out: Vec<(&'static str, &[f64])> = Component::ALL
            .iter()
            .filter_map(|c| self.component(*c).map(|v| (c.name(), v)))
            .collect();
        out.push((self.acquisition.name(), &self.phi_af));
        out
    }
}

/// Largest per-parameter gap between `phi_af` and the sum of its components.
pub fn report_linearity_check(report: &ShapleyReport) -> f64 {
    (0..report.dim())
        .map(|j| {
            let parts: f64 = Component::ALL
                .iter()
                .filter_map(|c| report.component(*c).map(|v| v[j]))
                .sum();
            (report.phi_af[j] - parts).abs()
        })
        .fold(0.0, f64::max)
}

/// Explains `explicand` under an already fitted surrogate: one shared-draw pass over
/// every raw component and the acquisition itself.
pub fn explain_point(
    surrogate: &Surrogate,
    spec: &AcquisitionSpec,
    space: &ParamSpace,
    explicand: &[f64],
    iteration: usize,
    opts: &ExplainOptions,
    seed: u64,
) -> Result<ShapleyReport> {
    space.check(explicand)?;
    let background = background_sample(space, opts.background_for(space), seed);
    let weights = spec.weights();
    let n_out = weights.len() + 1;
    let value_fn = |t: &[f64], out: &mut [f64]| {
        let raw = surrogate.raw(t);
        for (o, (c, _)) in out.iter_mut().zip(&weights) {
            *o = raw.get(*c);
        }
        out[n_out - 1] = spec.value(&raw);
    };
    let est = estimate_shapley_multi(&value_fn, n_out, explicand, &background, opts.k, seed)?;
    let payouts = compute_payout_multi(&value_fn, n_out, explicand, &background)?;

    let af_name = spec.name();
    let adequacy = check_sample_size(
        weights
            .iter()
            .map(|(c, _)| c.name())
            .chain([af_name])
            .zip(&est)
            .zip(&payouts)
            .map(|((name, e), p)| (name, e, *p)),
    );

    let mut folded: BTreeMap<Component, Vec<f64>> = BTreeMap::new();
    let mut stderr = BTreeMap::new();
    for ((c, w), e) in weights.iter().zip(&est) {
        folded.insert(*c, e.scaled(*w));
        stderr.insert(
            c.name().to_string(),
            e.stderr.iter().map(|s| w.abs() * s).collect(),
        );
    }
    let af = &est[n_out - 1];
    stderr.insert(af_name.to_string(), af.stderr.clone());
    Ok(ShapleyReport {
        iteration,
        explicand: explicand.to_vec(),
        acquisition: spec.clone(),
        phi_m: folded
            .remove(&Component::M)
            .expect("mean term always present"),
        phi_se: folded
            .remove(&Component::Se)
            .expect("sd term always present"),
        phi_noise: folded.remove(&Component::Noise),
        phi_model: folded.remove(&Component::Model),
        phi_af: af.phi.clone(),
        stderr,
        adequacy,
        k: opts.k,
        seed,
        background_size: background.len(),
    })
}

/// Shapley values of the posterior mean alone at `explicand`.
pub fn mean_attribution(
    gp: &GpPosterior,
    space: &ParamSpace,
    explicand: &[f64],
    opts: &ExplainOptions,
    seed: u64,
) -> Result<AttributionEstimate> {
    let background = background_sample(space, opts.background_for(space), seed);
    let f = |t: &[f64], out: &mut [f64]| out[0] = gp.mean_point(t);
    Ok(estimate_shapley_multi(&f, 1, explicand, &background, opts.k, seed)?.remove(0))
}

/// Refits the surrogate of iteration `t` (1-based) from the design prefix and the
/// hyperparameters recorded in the trace, and explains that iteration's proposal.
pub fn explain_iteration(
    trace: &RunTrace,
    t: usize,
    spec: &AcquisitionSpec,
    opts: &ExplainOptions,
    seed: u64,
) -> Result<ShapleyReport> {
    let record = trace.iteration(t)?;
    let config = &trace.setup.config;
    let design = trace.design_before(t)?;
    let surrogate = Surrogate::fit(&design, &config.space, spec, &record.kernel, &config.noise)?;
    explain_point(
        &surrogate,
        spec,
        &config.space,
        &record.proposal,
        t,
        opts,
        seed,
    )
}

/// Doubles K from `start` until the report for iteration `t` passes the sample-size
/// check or `cap` is reached.
pub fn search_k_for_iteration(
    trace: &RunTrace,
    t: usize,
    spec: &AcquisitionSpec,
    background_size: Option<usize>,
    start: usize,
    cap: usize,
    seed: u64,
) -> Result<KSearch> {
    search_sample_size(start, cap, |k| {
        let opts = ExplainOptions { k, background_size };
        Ok(explain_iteration(trace, t, spec, &opts, seed)?.adequacy)
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathPoint {
    pub iteration: usize,
    pub parameter: String,
    pub component: String,
    pub mean: f64,
    pub sd: f64,
}

/// Per-iteration, per-parameter, per-component mean and sd across restarts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InformativenessPath {
    pub restarts: usize,
    pub points: Vec<PathPoint>,
}

impl InformativenessPath {
    /// `runs[r][i]` is restart `r`'s report for its `i`-th explained iteration; every
    /// run must cover the same iterations with the same components.
    pub fn from_reports(runs: &[Vec<ShapleyReport>], names: &[String]) -> Result<Self> {
        let first = runs.first().ok_or(Error::Empty("trace list"))?;
        for run in runs {
            if run.len() != first.len() {
                return Err(Error::InvalidConfig(
                    "all traces must cover the same iterations".into(),
                ));
            }
        }
        let mut points = Vec::new();
        for (i, head) in first.iter().enumerate() {
            if names.len() != head.dim() {
                return Err(Error::DimensionMismatch {
                    expected: head.dim(),
                    got: names.len(),
                });
            }
            for (component, _) in head.rows() {
                for (j, name) in names.iter().enumerate() {
                    let mut xs = Vec::with_capacity(runs.len());
                    for run in runs {
                        let r = &run[i];
                        let row = r
                            .rows()
                            .into_iter()
                            .find(|(c, _)| *c == component)
                            .ok_or_else(|| {
                                Error::InvalidConfig(format!(
                                    "component {component} missing in a restart"
                                ))
                            })?;
                        xs.push(row.1[j]);
                    }
                    let (mean, var) = mean_var(&xs);
                    points.push(PathPoint {
                        iteration: head.iteration,
                        parameter: name.clone(),
                        component: component.to_string(),
                        mean,
                        sd: if xs.len() > 1 { var.sqrt() } else { 0.0 },
                    });
                }
            }
        }
        Ok(InformativenessPath {
            restarts: runs.len(),
            points,
        })
    }

    pub fn get(&self, iteration: usize, parameter: &str, component: &str) -> Option<&PathPoint> {
        self.points.iter().find(|p| {
            p.iteration == iteration && p.parameter == parameter && p.component == component
        })
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["iteration", "parameter", "component", "mean", "sd"])?;
        for p in &self.points {
            out.write_record([
                p.iteration.to_string(),
                p.parameter.clone(),
                p.component.clone(),
                p.mean.to_string(),
                p.sd.to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Explains `iterations` of every trace and aggregates across traces. Report seeds are
/// `seed + restart index`.
pub fn informativeness_path(
    traces: &[RunTrace],
    iterations: &[usize],
    spec: &AcquisitionSpec,
    opts: &ExplainOptions,
    seed: u64,
) -> Result<InformativenessPath> {
    let first = traces.first().ok_or(Error::Empty("trace list"))?;
    let space = &first.setup.config.space;
    for t in traces {
        if t.iterations.len() != first.iterations.len() || t.setup.config.space.dim() != space.dim()
        {
            return Err(Error::InvalidConfig(
                "traces must share length and dimension".into(),
            ));
        }
    }
    let runs = traces
        .iter()
        .enumerate()
        .map(|(r, trace)| {
            iterations
                .iter()
                .map(|t| explain_iteration(trace, *t, spec, opts, seed.wrapping_add(r as u64)))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    InformativenessPath::from_reports(&runs, space.names())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shapley::exact_shapley_multi;
    use crate::space::{Design, Observation};
    use crate::surrogate::{KernelConfig, NoiseOptions};
    use proptest::prelude::*;

    fn fixture_report(m: f64, se: f64, noise: f64, total: f64) -> ShapleyReport {
        let verdict = check_sample_size(std::iter::empty());
        ShapleyReport {
            iteration: 1,
            explicand: vec![0.0],
            acquisition: AcquisitionSpec::Racb {
                tau: 1.0,
                alpha: 1.0,
            },
            phi_m: vec![m],
            phi_se: vec![se],
            phi_noise: Some(vec![noise]),
            phi_model: None,
            phi_af: vec![total],
            stderr: BTreeMap::new(),
            adequacy: verdict,
            k: 1,
            seed: 0,
            background_size: 1,
        }
    }

    #[test]
    fn tabled_row_sums_to_total() {
        let r = fixture_report(-163.1, 2.2, 1.5, -159.4);
        assert!(report_linearity_check(&r) < 1e-10);
        let zero = fixture_report(0.0, 0.0, 0.0, 0.0);
        assert_eq!(report_linearity_check(&zero), 0.0);
        let off = fixture_report(-163.1, 2.2, 1.5, -150.0);
        assert!(report_linearity_check(&off) > 9.0);
    }

    fn smooth_design(space: &ParamSpace, n: usize, seed: u64) -> Design {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Design::from_observations(
            space
                .sample_n(n, &mut rng)
                .into_iter()
                .map(|t| {
                    let y = t[0] * t[0] + 2.0 * t[1] * t[1] + 0.5 * t[0];
                    Observation::new(t, y)
                })
                .collect(),
        )
        .unwrap()
    }

    fn surrogate(spec: &AcquisitionSpec, space: &ParamSpace) -> Surrogate {
        let d = smooth_design(space, 15, 4);
        let k = KernelConfig::fixed(1.0, 3.0, 1e-6).with_signal_var(4.0);
        Surrogate::fit(&d, space, spec, &k, &NoiseOptions::default()).unwrap()
    }

    #[test]
    fn zero_lambda_gives_zero_sd_term() {
        let space = ParamSpace::cube(2, -2.0, 2.0).unwrap();
        let spec = AcquisitionSpec::Cb { lambda: 0.0 };
        let s = surrogate(&spec, &space);
        let r = explain_point(
            &s,
            &spec,
            &space,
            &[0.3, -1.2],
            1,
            &ExplainOptions::new(200),
            5,
        )
        .unwrap();
        assert!(r.phi_se.iter().all(|v| *v == 0.0));
        for j in 0..2 {
            assert!((r.phi_af[j] - r.phi_m[j]).abs() < 1e-10);
        }
        assert_eq!(r.background_size, 2000);
    }

    #[test]
    fn reports_are_reproducible_and_linear() {
        let space = ParamSpace::cube(2, -2.0, 2.0).unwrap();
        let spec = AcquisitionSpec::Racb {
            tau: 1.5,
            alpha: 0.7,
        };
        let s = surrogate(&spec, &space);
        let opts = ExplainOptions {
            k: 300,
            background_size: Some(500),
        };
        let a = explain_point(&s, &spec, &space, &[1.0, 0.5], 3, &opts, 9).unwrap();
        let b = explain_point(&s, &spec, &space, &[1.0, 0.5], 3, &opts, 9).unwrap();
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
        assert!(report_linearity_check(&a) <= 1e-10);
        assert!(a.phi_noise.is_some() && a.phi_model.is_none());
        let keys: Vec<&String> = a.adequacy.games.keys().collect();
        assert_eq!(keys, ["m", "noise", "racb", "se"]);
    }

    /// A mean that is additive in the two features is attributed exactly per feature.
    #[test]
    fn additive_mean_matches_exact_oracle() {
        let space = ParamSpace::cube(2, -1.0, 1.0).unwrap();
        let obs: Vec<Observation> = (0..6)
            .flat_map(|i| {
                (0..6).map(move |j| {
                    let (a, b) = (-1.0 + 0.4 * i as f64, -1.0 + 0.4 * j as f64);
                    Observation::new(vec![a, b], a.sin() + b * b)
                })
            })
            .collect();
        let d = Design::from_observations(obs).unwrap();
        let gp = GpPosterior::fit(&d, &KernelConfig::fixed(0.7, 0.0, 1e-6)).unwrap();
        let opts = ExplainOptions {
            k: 2000,
            background_size: Some(200),
        };
        let x = [0.6, -0.8];
        let est = mean_attribution(&gp, &space, &x, &opts, 31).unwrap();
        let bg = background_sample(&space, 200, 31);
        let exact = exact_shapley_multi(&|t, o| o[0] = gp.mean_point(t), 1, &x, &bg).unwrap();
        for j in 0..2 {
            assert!((est.phi[j] - exact[0].phi[j]).abs() <= 3.0 * est.stderr[j] + 1e-9);
        }
    }

    #[test]
    fn path_from_two_restarts() {
        let mk = |m: f64, se: f64| {
            let mut r = fixture_report(m, se, 0.0, m + se);
            r.phi_noise = None;
            r.acquisition = AcquisitionSpec::Cb { lambda: 1.0 };
            r
        };
        let runs = vec![vec![mk(1.0, -2.0)], vec![mk(3.0, -5.0)]];
        let path = InformativenessPath::from_reports(&runs, &["a".to_string()]).unwrap();
        let m = path.get(1, "a", "m").unwrap();
        assert_eq!((m.mean, m.sd), (2.0, 2f64.sqrt()));
        let cb = path.get(1, "a", "cb").unwrap();
        assert_eq!((cb.mean, cb.sd), (-1.5, 0.5f64.sqrt()));
        assert_eq!(path.restarts, 2);

        let single = InformativenessPath::from_reports(&runs[..1], &["a".to_string()]).unwrap();
        assert_eq!(single.get(1, "a", "se").unwrap().sd, 0.0);
        assert_eq!(single.get(1, "a", "se").unwrap().mean, -2.0);

        let mut buf = Vec::new();
        path.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("iteration,parameter,component,mean,sd\n"));
        assert_eq!(text.lines().count(), 4);
        assert!(InformativenessPath::from_reports(&[], &[]).is_err());
    }

    proptest! {
        #[test]
        fn constructed_reports_pass_linearity(
            m in proptest::collection::vec(-1e3f64..1e3, 1..5),
            lambda in 0f64..30.0, alpha in 0f64..5.0,
        ) {
            let p = m.len();
            let se: Vec<f64> = m.iter().map(|x| -lambda * x.abs().sqrt()).collect();
            let noise: Vec<f64> = m.iter().map(|x| alpha * x.cos()).collect();
            let total: Vec<f64> = (0..p).map(|j| m[j] + se[j] + noise[j]).collect();
            let mut r = fixture_report(0.0, 0.0, 0.0, 0.0);
            r.phi_m = m;
            r.phi_se = se;
            r.phi_noise = Some(noise);
            r.phi_af = total;
            prop_assert!(report_linearity_check(&r) <= 1e-10);
        }
    }
}
