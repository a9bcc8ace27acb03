//! The BO loop, the human-AI collaborative loop and its intervention policies, and
//! the event-sourced run trace.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::acquisition::{default_budget, minimize_acquisition, AcquisitionSpec, Surrogate};
use crate::benchmarks::{Target, TargetSpec};
use crate::error::{Error, Result};
use crate::explain::{explain_point, mean_attribution, ExplainOptions, ShapleyReport};
use crate::seeds;
use crate::space::{mean_var, Design, Observation, ParamSpace};
use crate::surrogate::{
    estimate_hyperparams, GpPosterior, HyperMode, HyperOptions, KernelConfig, NoiseOptions,
    DEFAULT_NUGGET_RATIO,
};
use crate::tree::TreeRule;

/// Sample count used for reports when a run needs them and none is configured.
pub const DEFAULT_K: usize = 1000;
/// Denominators below this make an alignment quotient infinite.
pub const RATIO_EPS: f64 = 1e-12;

pub(crate) mod role {
    pub const INIT_DESIGN: u64 = 1;
    pub const INIT_NOISE: u64 = 2;
    pub const OPTIMIZER: u64 = 3;
    pub const EVAL_NOISE: u64 = 4;
    pub const HUMAN_OPTIMIZER: u64 = 5;
    pub const HUMAN_PRIOR: u64 = 6;
    pub const HUMAN_PRIOR_NOISE: u64 = 7;
    pub const REPORT: u64 = 8;
    pub const HUMAN_REPORT: u64 = 9;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoConfig {
    pub space: ParamSpace,
    pub acquisition: AcquisitionSpec,
    pub n_init: usize,
    pub max_iterations: usize,
    /// Acquisition evaluations per proposal; defaults to `1000 * p`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub budget: Option<usize>,
    /// Drives the optimizer, observation noise and reports.
    pub seed: u64,
    /// Drives the initial design and any simulated human's prior design; defaults
    /// to `seed`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub design_seed: Option<u64>,
    #[serde(default)]
    pub hyper: HyperOptions,
    #[serde(default)]
    pub noise: NoiseOptions,
    /// Attach a Shapley report to every iteration.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub explain: Option<ExplainOptions>,
}

impl BoConfig {
    pub fn new(space: ParamSpace, acquisition: AcquisitionSpec) -> Self {
        BoConfig {
            space,
            acquisition,
            n_init: 3,
            max_iterations: 10,
            budget: None,
            seed: 0,
            design_seed: None,
            hyper: HyperOptions::default(),
            noise: NoiseOptions::default(),
            explain: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_init == 0 {
            return Err(Error::InvalidConfig("n_init must be >= 1".into()));
        }
        if self.budget == Some(0) {
            return Err(Error::InvalidConfig("budget must be >= 1".into()));
        }
        if let Some(e) = &self.explain {
            if e.k == 0 {
                return Err(Error::InvalidConfig("explain.k must be >= 1".into()));
            }
        }
        self.acquisition.validate(self.space.dim())
    }

    pub fn budget(&self) -> usize {
        self.budget.unwrap_or_else(|| default_budget(&self.space))
    }

    pub fn design_seed(&self) -> u64 {
        self.design_seed.unwrap_or(self.seed)
    }

    pub fn explain_options(&self) -> ExplainOptions {
        self.explain
            .clone()
            .unwrap_or_else(|| ExplainOptions::new(DEFAULT_K))
    }
}

/// Seed of the report attached to iteration `t`.
pub fn report_seed(seed: u64, t: usize) -> u64 {
    seeds::derive(seed, &[role::REPORT, t as u64])
}

pub fn initial_thetas(config: &BoConfig) -> Vec<Vec<f64>> {
    let mut rng = seeds::stream(config.design_seed(), role::INIT_DESIGN, 0);
    config.space.sample_n(config.n_init, &mut rng)
}

pub fn initial_design(config: &BoConfig, target: &Target) -> Result<Design> {
    let mut noise = seeds::stream(config.design_seed(), role::INIT_NOISE, 0);
    let mut d = Design::new();
    for theta in initial_thetas(config) {
        let psi = target.observe(&theta, &mut noise)?;
        d.push(Observation::new(theta, psi))?;
    }
    Ok(d)
}

/// Empirical-Bayes hyperparameters, or a fixed fallback while the design has fewer
/// than two distinct inputs.
pub fn fit_hyperparams(
    design: &Design,
    space: &ParamSpace,
    opts: &HyperOptions,
) -> Result<KernelConfig> {
    if design.distinct_thetas() >= 2 {
        return estimate_hyperparams(design, space, opts);
    }
    let (mean, var) = mean_var(&design.psis());
    let signal_var = 1f64.max(mean * mean);
    Ok(KernelConfig {
        range: 0.25 * space.diameter(),
        prior_mean: mean,
        nugget: DEFAULT_NUGGET_RATIO * var.max(signal_var),
        signal_var,
        mode: HyperMode::Fixed,
    })
}

pub struct Proposal {
    pub theta: Vec<f64>,
    pub kernel: KernelConfig,
    pub surrogate: Surrogate,
}

/// Refits the surrogate on `design` and minimizes the acquisition for iteration `t`.
pub fn propose(config: &BoConfig, design: &Design, t: usize) -> Result<Proposal> {
    let kernel = fit_hyperparams(design, &config.space, &config.hyper)?;
    let surrogate = Surrogate::fit(
        design,
        &config.space,
        &config.acquisition,
        &kernel,
        &config.noise,
    )?;
    let mut rng = seeds::stream(config.seed, role::OPTIMIZER, t as u64);
    let theta = minimize_acquisition(
        &config.acquisition,
        &surrogate,
        &config.space,
        config.budget(),
        &mut rng,
    )?;
    Ok(Proposal {
        theta,
        kernel,
        surrogate,
    })
}

/// Where the simulated human's prior knowledge comes from.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum PriorRegion {
    #[default]
    Full,
    Box {
        lower: Vec<f64>,
        upper: Vec<f64>,
    },
    /// A box of `fraction` of each side length around the target's optimum, shifted
    /// to stay inside the space and moved by `offset` (in side lengths of the box).
    AroundOptimum {
        fraction: f64,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        offset: Vec<f64>,
    },
}

fn default_lambda_h() -> f64 {
    200.0
}

fn default_prior_size() -> usize {
    90
}

fn yes() -> bool {
    true
}

/// A human modelled as a second BO with its own exploration weight and a prior design
/// drawn from a region it knows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HumanModel {
    #[serde(default = "default_lambda_h")]
    pub lambda: f64,
    #[serde(default = "default_prior_size")]
    pub prior_size: usize,
    #[serde(default)]
    pub region: PriorRegion,
    /// Restrict the human's own proposals to the prior region.
    #[serde(default = "yes")]
    pub search_within_region: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub budget: Option<usize>,
}

impl Default for HumanModel {
    fn default() -> Self {
        HumanModel {
            lambda: default_lambda_h(),
            prior_size: default_prior_size(),
            region: PriorRegion::Full,
            search_within_region: true,
            budget: None,
        }
    }
}

impl HumanModel {
    pub fn region_space(&self, target: &Target) -> Result<ParamSpace> {
        let space = target.space();
        match &self.region {
            PriorRegion::Full => Ok(space.clone()),
            PriorRegion::Box { lower, upper } => {
                let r = ParamSpace::new(space.names().to_vec(), lower.clone(), upper.clone())?;
                space.check(lower)?;
                space.check(upper)?;
                Ok(r)
            }
            PriorRegion::AroundOptimum { fraction, offset } => {
                if !(*fraction > 0.0 && *fraction <= 1.0) {
                    return Err(Error::InvalidConfig(format!(
                        "prior region fraction must lie in (0, 1], got {fraction}"
                    )));
                }
                if !offset.is_empty() && offset.len() != space.dim() {
                    return Err(Error::DimensionMismatch {
                        expected: space.dim(),
                        got: offset.len(),
                    });
                }
                let (mut lo, mut hi) = (Vec::new(), Vec::new());
                for j in 0..space.dim() {
                    let (a, b) = (space.lower()[j], space.upper()[j]);
                    let side = fraction * (b - a);
                    let shift = offset.get(j).copied().unwrap_or(0.0) * side;
                    let start = (target.argmin()[j] + shift - 0.5 * side).clamp(a, b - side);
                    lo.push(start);
                    hi.push((start + side).min(b));
                }
                ParamSpace::new(space.names().to_vec(), lo, hi)
            }
        }
    }
}

/// A human model bound to a target: its region and evaluated prior design.
#[derive(Debug, Clone)]
pub struct SimulatedHuman {
    pub model: HumanModel,
    pub region: ParamSpace,
    pub space: ParamSpace,
    pub prior: Design,
    seed: u64,
    hyper: HyperOptions,
}

pub struct HumanFit {
    pub theta: Vec<f64>,
    pub gp: GpPosterior,
}

impl SimulatedHuman {
    pub fn new(model: &HumanModel, config: &BoConfig, target: &Target) -> Result<Self> {
        if !(model.lambda >= 0.0 && model.lambda.is_finite()) {
            return Err(Error::InvalidConfig("human lambda must be >= 0".into()));
        }
        let region = model.region_space(target)?;
        let mut rng = seeds::stream(config.design_seed(), role::HUMAN_PRIOR, 0);
        let mut noise = seeds::stream(config.design_seed(), role::HUMAN_PRIOR_NOISE, 0);
        let mut prior = Design::new();
        for theta in region.sample_n(model.prior_size, &mut rng) {
            let psi = target.observe(&theta, &mut noise)?;
            prior.push(Observation::new(theta, psi))?;
        }
        Ok(SimulatedHuman {
            model: model.clone(),
            region,
            space: config.space.clone(),
            prior,
            seed: config.seed,
            hyper: config.hyper.clone(),
        })
    }

    /// One proposal of the human's BO on its prior design plus the shared history.
    pub fn propose(&self, shared: &Design, t: usize) -> Result<HumanFit> {
        let mut d = self.prior.clone();
        for o in shared.observations() {
            d.push(o.clone())?;
        }
        if d.is_empty() {
            return Err(Error::Empty("human design"));
        }
        let kernel = fit_hyperparams(&d, &self.space, &self.hyper)?;
        let gp = GpPosterior::fit(&d, &kernel)?;
        let search = if self.model.search_within_region {
            &self.region
        } else {
            &self.space
        };
        let spec = AcquisitionSpec::Cb {
            lambda: self.model.lambda,
        };
        let surrogate = Surrogate {
            gp,
            noise: None,
            imprecise: None,
        };
        let mut rng = seeds::stream(self.seed, role::HUMAN_OPTIMIZER, t as u64);
        let budget = self.model.budget.unwrap_or_else(|| default_budget(search));
        let theta = minimize_acquisition(&spec, &surrogate, search, budget, &mut rng)?;
        Ok(HumanFit {
            theta,
            gp: surrogate.gp,
        })
    }
}

pub fn simulate_human(human: &SimulatedHuman, shared: &Design, t: usize) -> Result<Vec<f64>> {
    Ok(human.propose(shared, t)?.theta)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum InterventionPolicy {
    Never,
    Always,
    /// Compares the proposal's first-to-second parameter ratio with the human's.
    ParamRatio {
        beta: f64,
    },
    /// Overrides on every `k`-th iteration.
    EveryK {
        k: usize,
    },
    /// Compares the ratio of the first two mean attributions with the human's.
    ShapRatio {
        beta: f64,
    },
    TreeRule {
        tree: TreeRule,
    },
}

impl InterventionPolicy {
    pub fn validate(&self) -> Result<()> {
        match self {
            InterventionPolicy::ParamRatio { beta } | InterventionPolicy::ShapRatio { beta }
                if !(*beta > 1.0 && beta.is_finite()) =>
            {
                Err(Error::InvalidConfig(format!(
                    "beta must exceed 1, got {beta}"
                )))
            }
            InterventionPolicy::EveryK { k: 0 } => {
                Err(Error::InvalidConfig("k must be >= 1".into()))
            }
            _ => Ok(()),
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            InterventionPolicy::Never => "A0",
            InterventionPolicy::Always => "A1",
            InterventionPolicy::ParamRatio { .. } => "A2",
            InterventionPolicy::EveryK { .. } => "A3",
            InterventionPolicy::ShapRatio { .. } => "A4",
            InterventionPolicy::TreeRule { .. } => "tree",
        }
    }

    pub fn needs_human(&self) -> bool {
        !matches!(self, InterventionPolicy::Never)
    }

    pub fn needs_report(&self) -> bool {
        matches!(
            self,
            InterventionPolicy::ShapRatio { .. } | InterventionPolicy::TreeRule { .. }
        )
    }

    pub fn needs_human_attribution(&self) -> bool {
        matches!(self, InterventionPolicy::ShapRatio { .. })
    }

    fn needs_ratio_pair(&self) -> bool {
        matches!(
            self,
            InterventionPolicy::ParamRatio { .. } | InterventionPolicy::ShapRatio { .. }
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Decision {
    Accept,
    Override { theta: Vec<f64> },
}

impl Decision {
    pub fn evaluated<'a>(&'a self, proposal: &'a [f64]) -> &'a [f64] {
        match self {
            Decision::Accept => proposal,
            Decision::Override { theta } => theta,
        }
    }

    pub fn is_override(&self) -> bool {
        matches!(self, Decision::Override { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Gate {
    Accept,
    Override,
}

/// `(num / den) / reference`, infinite when either denominator is near zero.
pub fn alignment_quotient(num: f64, den: f64, reference: f64) -> f64 {
    if den.abs() < RATIO_EPS || reference.abs() < RATIO_EPS || !reference.is_finite() {
        return f64::INFINITY;
    }
    (num / den) / reference
}

/// Open band `(1/beta, beta)`.
pub fn within_band(q: f64, beta: f64) -> bool {
    q > 1.0 / beta && q < beta
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HumanProposal {
    pub theta: Vec<f64>,
    /// Mean attributions of the proposal under the human's own model.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phi_m: Option<Vec<f64>>,
}

/// Running averages of the human's own first-to-second ratios; ratios with a
/// near-zero denominator are left out.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct HumanStats {
    param_ratios: Vec<f64>,
    shap_ratios: Vec<f64>,
}

fn ratio(v: &[f64]) -> Option<f64> {
    (v.len() >= 2 && v[1].abs() >= RATIO_EPS).then(|| v[0] / v[1])
}

fn average(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

impl HumanStats {
    pub fn push(&mut self, h: &HumanProposal) {
        if let Some(r) = ratio(&h.theta) {
            self.param_ratios.push(r);
        }
        if let Some(r) = h.phi_m.as_deref().and_then(ratio) {
            self.shap_ratios.push(r);
        }
    }

    pub fn mean_param_ratio(&self) -> Option<f64> {
        average(&self.param_ratios)
    }

    pub fn mean_shap_ratio(&self) -> Option<f64> {
        average(&self.shap_ratios)
    }
}

fn band_gate(num: f64, den: f64, reference: Option<f64>, beta: f64) -> Gate {
    let q = alignment_quotient(num, den, reference.unwrap_or(f64::NAN));
    if within_band(q, beta) {
        Gate::Accept
    } else {
        Gate::Override
    }
}

/// Whether to keep the BO proposal. `iteration` is 1-based.
pub fn decide_intervention(
    policy: &InterventionPolicy,
    iteration: usize,
    proposal: &[f64],
    report: Option<&ShapleyReport>,
    stats: &HumanStats,
) -> Result<Gate> {
    if policy.needs_ratio_pair() && proposal.len() < 2 {
        return Err(Error::Unsupported(
            "ratio policies need at least two parameters".into(),
        ));
    }
    let need_report = || {
        report.ok_or_else(|| {
            Error::InvalidConfig(format!("policy {} needs a report", policy.label()))
        })
    };
    Ok(match policy {
        InterventionPolicy::Never => Gate::Accept,
        InterventionPolicy::Always => Gate::Override,
        InterventionPolicy::EveryK { k } => {
            if iteration.is_multiple_of(*k) {
                Gate::Override
            } else {
                Gate::Accept
            }
        }
        InterventionPolicy::ParamRatio { beta } => {
            band_gate(proposal[0], proposal[1], stats.mean_param_ratio(), *beta)
        }
        InterventionPolicy::ShapRatio { beta } => {
            let r = need_report()?;
            band_gate(r.phi_m[0], r.phi_m[1], stats.mean_shap_ratio(), *beta)
        }
        InterventionPolicy::TreeRule { tree } => {
            if tree.fires(&need_report()?.phi_m)? {
                Gate::Override
            } else {
                Gate::Accept
            }
        }
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSetup {
    pub config: BoConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<TargetSpec>,
    /// Absent when decisions are made interactively.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub policy: Option<InterventionPolicy>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub human: Option<HumanModel>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    /// Hyperparameters of the surrogate the proposal came from.
    pub kernel: KernelConfig,
    pub proposal: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report: Option<ShapleyReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub human: Option<HumanProposal>,
    pub decision: Decision,
    pub theta: Vec<f64>,
    pub psi: f64,
    pub incumbent: f64,
    pub incumbent_theta: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunTrace {
    pub setup: RunSetup,
    pub initial: Vec<Observation>,
    pub iterations: Vec<IterationRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "snake_case")]
pub enum TraceEvent {
    /// One initial-design point; the first carries the run setup. `psi` is absent
    /// until observed when evaluations happen outside the process.
    Init {
        index: usize,
        theta: Vec<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        psi: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        setup: Option<Box<RunSetup>>,
    },
    Propose {
        iteration: usize,
        theta: Vec<f64>,
        kernel: KernelConfig,
    },
    Report {
        iteration: usize,
        report: Box<ShapleyReport>,
    },
    Decide {
        iteration: usize,
        decision: Decision,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        human: Option<HumanProposal>,
    },
    /// `iteration` 0 observes the next pending initial point.
    Observe {
        iteration: usize,
        theta: Vec<f64>,
        psi: f64,
        incumbent: f64,
        incumbent_theta: Vec<f64>,
    },
}

impl TraceEvent {
    pub fn kind(&self) -> &'static str {
        match self {
            TraceEvent::Init { .. } => "init",
            TraceEvent::Propose { .. } => "propose",
            TraceEvent::Report { .. } => "report",
            TraceEvent::Decide { .. } => "decide",
            TraceEvent::Observe { .. } => "observe",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoggedEvent {
    pub seq: u64,
    /// Milliseconds since the Unix epoch; batch traces leave it out so files are
    /// reproducible byte for byte.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<u64>,
    #[serde(flatten)]
    pub event: TraceEvent,
}

pub fn write_events<W: Write>(mut w: W, events: &[LoggedEvent]) -> Result<()> {
    for e in events {
        serde_json::to_writer(&mut w, e)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_events<R: BufRead>(r: R) -> Result<Vec<LoggedEvent>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let e: LoggedEvent = serde_json::from_str(&line)
            .map_err(|err| Error::EventLog(format!("line {}: {err}", i + 1)))?;
        out.push(e);
    }
    Ok(out)
}

/// Incremental fold of an event log into a trace.
#[derive(Debug, Clone, Default)]
pub struct TraceBuilder {
    setup: Option<RunSetup>,
    initial: Vec<(Vec<f64>, Option<f64>)>,
    iterations: Vec<IterationRecord>,
    pending: Option<PendingStep>,
    last_seq: Option<u64>,
}

/// A proposal that has not been observed yet.
#[derive(Debug, Clone, PartialEq)]
pub struct PendingStep {
    pub iteration: usize,
    pub theta: Vec<f64>,
    pub kernel: KernelConfig,
    pub report: Option<ShapleyReport>,
    pub decision: Option<(Decision, Option<HumanProposal>)>,
}

fn log_err(seq: u64, msg: impl std::fmt::Display) -> Error {
    Error::EventLog(format!("event {seq}: {msg}"))
}

impl TraceBuilder {
    pub fn apply(&mut self, e: &LoggedEvent) -> Result<()> {
        let seq = e.seq;
        if self.last_seq.is_some_and(|s| seq <= s) {
            return Err(log_err(seq, "sequence numbers must increase"));
        }
        match &e.event {
            TraceEvent::Init {
                index,
                theta,
                psi,
                setup,
            } => {
                if *index != self.initial.len()
                    || !self.iterations.is_empty()
                    || self.pending.is_some()
                {
                    return Err(log_err(seq, "init out of order"));
                }
                if let Some(s) = setup {
                    self.setup = Some((**s).clone());
                }
                if self.setup.is_none() {
                    return Err(log_err(seq, "first init must carry the setup"));
                }
                self.initial.push((theta.clone(), *psi));
            }
            TraceEvent::Propose {
                iteration,
                theta,
                kernel,
            } => {
                if self.pending.is_some() || *iteration != self.iterations.len() + 1 {
                    return Err(log_err(seq, "unexpected propose"));
                }
                if self.initial.iter().any(|(_, p)| p.is_none()) || self.initial.is_empty() {
                    return Err(log_err(
                        seq,
                        "propose before the initial design is observed",
                    ));
                }
                self.pending = Some(PendingStep {
                    iteration: *iteration,
                    theta: theta.clone(),
                    kernel: kernel.clone(),
                    report: None,
                    decision: None,
                });
            }
            TraceEvent::Report { iteration, report } => match &mut self.pending {
                Some(p) if p.iteration == *iteration && p.decision.is_none() => {
                    p.report = Some((**report).clone());
                }
                _ => return Err(log_err(seq, "report without a matching proposal")),
            },
            TraceEvent::Decide {
                iteration,
                decision,
                human,
            } => match &mut self.pending {
                Some(p) if p.iteration == *iteration && p.decision.is_none() => {
                    p.decision = Some((decision.clone(), human.clone()));
                }
                _ => return Err(log_err(seq, "decision without a matching proposal")),
            },
            TraceEvent::Observe {
                iteration,
                theta,
                psi,
                incumbent,
                incumbent_theta,
            } => {
                if *iteration == 0 {
                    let slot = self
                        .initial
                        .iter_mut()
                        .find(|(_, p)| p.is_none())
                        .ok_or_else(|| log_err(seq, "no initial point awaits observation"))?;
                    if slot.0 != *theta {
                        return Err(log_err(
                            seq,
                            "observed theta differs from the initial point",
                        ));
                    }
                    slot.1 = Some(*psi);
                } else {
                    let p = match self.pending.take() {
                        Some(p) if p.iteration == *iteration && p.decision.is_some() => p,
                        other => {
                            self.pending = other;
                            return Err(log_err(seq, "observation without a decision"));
                        }
                    };
                    let (decision, human) = p.decision.expect("checked above");
                    if decision.evaluated(&p.theta) != theta.as_slice() {
                        return Err(log_err(seq, "observed theta differs from the decided one"));
                    }
                    self.iterations.push(IterationRecord {
                        iteration: p.iteration,
                        kernel: p.kernel,
                        proposal: p.theta,
                        report: p.report,
                        human,
                        decision,
                        theta: theta.clone(),
                        psi: *psi,
                        incumbent: *incumbent,
                        incumbent_theta: incumbent_theta.clone(),
                    });
                }
            }
        }
        self.last_seq = Some(seq);
        Ok(())
    }

    pub fn setup(&self) -> Option<&RunSetup> {
        self.setup.as_ref()
    }

    /// Index and theta of the first initial point still awaiting its observation.
    pub fn pending_initial(&self) -> Option<(usize, &[f64])> {
        self.initial
            .iter()
            .position(|(_, p)| p.is_none())
            .map(|i| (i, self.initial[i].0.as_slice()))
    }

    pub fn pending(&self) -> Option<&PendingStep> {
        self.pending.as_ref()
    }

    pub fn completed(&self) -> usize {
        self.iterations.len()
    }

    pub fn next_seq(&self) -> u64 {
        self.last_seq.map_or(0, |s| s + 1)
    }

    /// The trace of everything fully observed so far.
    pub fn trace(&self) -> Result<RunTrace> {
        let setup = self.setup.clone().ok_or(Error::Empty("event log"))?;
        let initial = self
            .initial
            .iter()
            .filter_map(|(t, p)| p.map(|psi| Observation::new(t.clone(), psi)))
            .collect();
        Ok(RunTrace {
            setup,
            initial,
            iterations: self.iterations.clone(),
        })
    }
}

impl RunTrace {
    pub fn len(&self) -> usize {
        self.iterations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.iterations.is_empty()
    }

    pub fn iteration(&self, t: usize) -> Result<&IterationRecord> {
        if t == 0 || t > self.iterations.len() {
            return Err(Error::IterationOutOfRange {
                t,
                len: self.iterations.len(),
            });
        }
        Ok(&self.iterations[t - 1])
    }

    /// The data the surrogate of iteration `t` was trained on.
    pub fn design_before(&self, t: usize) -> Result<Design> {
        if t == 0 || t > self.iterations.len() + 1 {
            return Err(Error::IterationOutOfRange {
                t,
                len: self.iterations.len(),
            });
        }
        let mut d = Design::from_observations(self.initial.clone())?;
        for r in &self.iterations[..t - 1] {
            d.push(Observation::new(r.theta.clone(), r.psi))?;
        }
        Ok(d)
    }

    pub fn design(&self) -> Result<Design> {
        self.design_before(self.iterations.len() + 1)
    }

    /// Best observation over the whole design, earliest on ties.
    pub fn incumbent(&self) -> Option<Observation> {
        self.design().ok()?.argmin().cloned()
    }

    pub fn to_events(&self) -> Vec<LoggedEvent> {
        let mut events = Vec::new();
        let mut push = |event: TraceEvent| {
            events.push(LoggedEvent {
                seq: events.len() as u64,
                timestamp: None,
                event,
            })
        };
        for (i, o) in self.initial.iter().enumerate() {
            push(TraceEvent::Init {
                index: i,
                theta: o.theta.clone(),
                psi: Some(o.psi),
                setup: (i == 0).then(|| Box::new(self.setup.clone())),
            });
        }
        for r in &self.iterations {
            push(TraceEvent::Propose {
                iteration: r.iteration,
                theta: r.proposal.clone(),
                kernel: r.kernel.clone(),
            });
            if let Some(rep) = &r.report {
                push(TraceEvent::Report {
                    iteration: r.iteration,
                    report: Box::new(rep.clone()),
                });
            }
            push(TraceEvent::Decide {
                iteration: r.iteration,
                decision: r.decision.clone(),
                human: r.human.clone(),
            });
            push(TraceEvent::Observe {
                iteration: r.iteration,
                theta: r.theta.clone(),
                psi: r.psi,
                incumbent: r.incumbent,
                incumbent_theta: r.incumbent_theta.clone(),
            });
        }
        events
    }

    pub fn from_events(events: &[LoggedEvent]) -> Result<Self> {
        let mut b = TraceBuilder::default();
        for e in events {
            b.apply(e)?;
        }
        b.trace()
    }

    pub fn write_jsonl<W: Write>(&self, w: W) -> Result<()> {
        write_events(w, &self.to_events())
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Self> {
        Self::from_events(&read_events(r)?)
    }

    /// Recomputes every gate from the logged proposals, reports and human proposals.
    pub fn replay_decisions(&self) -> Result<Vec<Gate>> {
        let policy = self
            .setup
            .policy
            .as_ref()
            .ok_or_else(|| Error::InvalidConfig("trace has no policy to replay".into()))?;
        let mut stats = HumanStats::default();
        self.iterations
            .iter()
            .map(|r| {
                if let Some(h) = &r.human {
                    stats.push(h);
                }
                decide_intervention(policy, r.iteration, &r.proposal, r.report.as_ref(), &stats)
            })
            .collect()
    }
}

fn check_target(config: &BoConfig, target: &Target) -> Result<()> {
    if config.space.lower() != target.space().lower()
        || config.space.upper() != target.space().upper()
    {
        return Err(Error::InvalidConfig(
            "run space differs from the target's space".into(),
        ));
    }
    Ok(())
}

/// Plain BO: the collaborative loop with the gate disabled.
pub fn run_bo(config: &BoConfig, target: &Target) -> Result<RunTrace> {
    run_collaborative(config, target, &InterventionPolicy::Never, None)
}

pub fn run_collaborative(
    config: &BoConfig,
    target: &Target,
    policy: &InterventionPolicy,
    human: Option<&HumanModel>,
) -> Result<RunTrace> {
    config.validate()?;
    policy.validate()?;
    check_target(config, target)?;
    let sim = if policy.needs_human() {
        let model = human.ok_or_else(|| {
            Error::InvalidConfig(format!("policy {} needs a human model", policy.label()))
        })?;
        Some(SimulatedHuman::new(model, config, target)?)
    } else {
        None
    };
    let mut design = initial_design(config, target)?;
    let initial = design.observations().to_vec();
    let opts = config.explain_options();
    let mut stats = HumanStats::default();
    let mut eval_rng = seeds::stream(config.seed, role::EVAL_NOISE, 0);
    let mut iterations = Vec::with_capacity(config.max_iterations);
    for t in 1..=config.max_iterations {
        let prop = propose(config, &design, t)?;
        let report = if policy.needs_report() || config.explain.is_some() {
            let seed = report_seed(config.seed, t);
            Some(explain_point(
                &prop.surrogate,
                &config.acquisition,
                &config.space,
                &prop.theta,
                t,
                &opts,
                seed,
            )?)
        } else {
            None
        };
        let human_rec = match &sim {
            Some(h) => {
                let fit = h.propose(&design, t)?;
                let phi_m = if policy.needs_human_attribution() {
                    let seed = seeds::derive(config.seed, &[role::HUMAN_REPORT, t as u64]);
                    Some(mean_attribution(&fit.gp, &config.space, &fit.theta, &opts, seed)?.phi)
                } else {
                    None
                };
                Some(HumanProposal {
                    theta: fit.theta,
                    phi_m,
                })
            }
            None => None,
        };
        if let Some(h) = &human_rec {
            stats.push(h);
        }
        let decision = match decide_intervention(policy, t, &prop.theta, report.as_ref(), &stats)? {
            Gate::Accept => Decision::Accept,
            Gate::Override => Decision::Override {
                theta: human_rec
                    .as_ref()
                    .map(|h| h.theta.clone())
                    .expect("override policies run with a human"),
            },
        };
        let theta = decision.evaluated(&prop.theta).to_vec();
        let psi = target
            .observe(&theta, &mut eval_rng)
            .map_err(|e| Error::Evaluation {
                iteration: t,
                source: Box::new(e),
            })?;
        design.push(Observation::new(theta.clone(), psi))?;
        let best = design.argmin().expect("design is nonempty").clone();
        iterations.push(IterationRecord {
            iteration: t,
            kernel: prop.kernel,
            proposal: prop.theta,
            report,
            human: human_rec,
            decision,
            theta,
            psi,
            incumbent: best.psi,
            incumbent_theta: best.theta,
        });
    }
    Ok(RunTrace {
        setup: RunSetup {
            config: config.clone(),
            target: Some(target.spec().clone()),
            policy: Some(policy.clone()),
            human: human.cloned(),
        },
        initial,
        iterations,
    })
}
