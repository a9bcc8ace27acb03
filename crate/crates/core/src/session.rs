//! Interactive sessions as a pure fold over an event log: the human makes every
//! decision, and evaluations happen in process (benchmark targets) or are supplied
//! by the client (external targets).

use serde::{Deserialize, Serialize};

use crate::benchmarks::{Target, TargetSpec};
use crate::bo::{
    initial_thetas, propose, report_seed, role, BoConfig, Decision, LoggedEvent, PendingStep,
    RunSetup, RunTrace, TraceBuilder, TraceEvent, DEFAULT_K,
};
use crate::error::{Error, Result};
use crate::explain::{explain_point, ExplainOptions, ShapleyReport};
use crate::seeds;
use crate::shapley::{search_sample_size, K_CAP};
use crate::space::{Design, Observation};
use crate::surrogate::KernelConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum TargetBinding {
    Benchmark {
        target: TargetSpec,
    },
    /// Observations are posted by the client.
    External,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CreateSession {
    pub config: BoConfig,
    pub target: TargetBinding,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionStatus {
    AwaitingProposal,
    AwaitingDecision,
    AwaitingObservation,
    Done,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PendingInitial {
    pub index: usize,
    pub theta: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProposalView {
    pub iteration: usize,
    pub theta: Vec<f64>,
    pub kernel: KernelConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report: Option<ShapleyReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decision: Option<Decision>,
}

impl From<&PendingStep> for ProposalView {
    fn from(p: &PendingStep) -> Self {
        ProposalView {
            iteration: p.iteration,
            theta: p.theta.clone(),
            kernel: p.kernel.clone(),
            report: p.report.clone(),
            decision: p.decision.as_ref().map(|(d, _)| d.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionView {
    pub id: String,
    pub status: SessionStatus,
    /// Completed iterations.
    pub iteration: usize,
    pub max_iterations: usize,
    pub design_size: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pending_initial: Option<PendingInitial>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub proposal: Option<ProposalView>,
    /// Best observation so far, the returned optimum once done.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub incumbent: Option<Observation>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub last_seq: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObservationRequest {
    pub psi: f64,
}

#[derive(Debug, Clone)]
pub struct Session {
    pub id: String,
    builder: TraceBuilder,
    events: Vec<LoggedEvent>,
    target: Option<Target>,
}

fn conflict(status: SessionStatus, action: &str) -> Error {
    Error::Conflict(format!("cannot {action} while {status:?}"))
}

/// The events that open a session: one init event per initial point, the first
/// carrying the setup. Benchmark points come already observed.
pub fn init_events(req: &CreateSession) -> Result<Vec<TraceEvent>> {
    let config = &req.config;
    config.validate()?;
    if config.max_iterations == 0 {
        return Err(Error::InvalidConfig("max_iterations must be >= 1".into()));
    }
    let target = match &req.target {
        TargetBinding::Benchmark { target } => {
            let t = target.build()?;
            if t.space().lower() != config.space.lower()
                || t.space().upper() != config.space.upper()
            {
                return Err(Error::InvalidConfig(
                    "config space differs from the target's space".into(),
                ));
            }
            Some(t)
        }
        TargetBinding::External => None,
    };
    let setup = RunSetup {
        config: config.clone(),
        target: target.as_ref().map(|t| t.spec().clone()),
        policy: None,
        human: None,
    };
    let mut noise = seeds::stream(config.design_seed(), role::INIT_NOISE, 0);
    initial_thetas(config)
        .into_iter()
        .enumerate()
        .map(|(i, theta)| {
            let psi = match &target {
                Some(t) => Some(t.observe(&theta, &mut noise)?),
                None => None,
            };
            Ok(TraceEvent::Init {
                index: i,
                theta,
                psi,
                setup: (i == 0).then(|| Box::new(setup.clone())),
            })
        })
        .collect()
}

/// Inputs of one proposal, detached from the session so it can run elsewhere.
#[derive(Debug, Clone)]
pub struct ProposeJob {
    pub config: BoConfig,
    pub design: Design,
    pub iteration: usize,
}

#[derive(Debug, Clone)]
pub struct ProposeOutcome {
    pub events: Vec<TraceEvent>,
    /// Sample count of the attached report.
    pub k: usize,
    pub sufficient: bool,
}

impl ProposeJob {
    /// Proposes and explains. When the report at `k` fails the sample-size check, K
    /// doubles up to `cap` on the same proposal.
    pub fn run(&self, k: usize, cap: usize) -> Result<ProposeOutcome> {
        let c = &self.config;
        let t = self.iteration;
        let prop = propose(c, &self.design, t)?;
        let seed = report_seed(c.seed, t);
        let background_size = c.explain.as_ref().and_then(|e| e.background_size);
        let explain = |k: usize| {
            let opts = ExplainOptions { k, background_size };
            explain_point(
                &prop.surrogate,
                &c.acquisition,
                &c.space,
                &prop.theta,
                t,
                &opts,
                seed,
            )
        };
        let mut report = explain(k)?;
        if !report.adequacy.overall && k < cap {
            let search = search_sample_size((2 * k).min(cap), cap, |k| Ok(explain(k)?.adequacy))?;
            report = explain(search.k)?;
        }
        let (k, sufficient) = (report.k, report.adequacy.overall);
        Ok(ProposeOutcome {
            events: vec![
                TraceEvent::Propose {
                    iteration: t,
                    theta: prop.theta,
                    kernel: prop.kernel,
                },
                TraceEvent::Report {
                    iteration: t,
                    report: Box::new(report),
                },
            ],
            k,
            sufficient,
        })
    }
}

/// Default cap for the live K search.
pub const LIVE_K_CAP: usize = K_CAP / 16;

impl Session {
    pub fn new(id: impl Into<String>) -> Self {
        Session {
            id: id.into(),
            builder: TraceBuilder::default(),
            events: Vec::new(),
            target: None,
        }
    }

    pub fn replay(id: impl Into<String>, events: &[LoggedEvent]) -> Result<Self> {
        let mut s = Session::new(id);
        for e in events {
            s.apply(e.clone())?;
        }
        if s.builder.setup().is_none() {
            return Err(Error::EventLog("session log has no setup".into()));
        }
        Ok(s)
    }

    pub fn apply(&mut self, e: LoggedEvent) -> Result<()> {
        self.builder.apply(&e)?;
        if self.target.is_none() {
            if let Some(spec) = self.builder.setup().and_then(|s| s.target.as_ref()) {
                self.target = Some(spec.build()?);
            }
        }
        self.events.push(e);
        Ok(())
    }

    /// Wraps events with the next sequence numbers.
    pub fn sequence(&self, events: Vec<TraceEvent>, timestamp: Option<u64>) -> Vec<LoggedEvent> {
        let start = self.builder.next_seq();
        events
            .into_iter()
            .enumerate()
            .map(|(i, event)| LoggedEvent {
                seq: start + i as u64,
                timestamp,
                event,
            })
            .collect()
    }

    pub fn events(&self) -> &[LoggedEvent] {
        &self.events
    }

    pub fn setup(&self) -> Result<&RunSetup> {
        self.builder.setup().ok_or(Error::Empty("session setup"))
    }

    pub fn config(&self) -> Result<&BoConfig> {
        Ok(&self.setup()?.config)
    }

    pub fn is_external(&self) -> bool {
        self.target.is_none()
    }

    pub fn trace(&self) -> Result<RunTrace> {
        self.builder.trace()
    }

    pub fn status(&self) -> SessionStatus {
        if self.builder.pending_initial().is_some() {
            return SessionStatus::AwaitingObservation;
        }
        match self.builder.pending() {
            Some(p) if p.decision.is_none() => SessionStatus::AwaitingDecision,
            Some(_) => SessionStatus::AwaitingObservation,
            None => {
                let max = self.builder.setup().map_or(0, |s| s.config.max_iterations);
                if self.builder.completed() >= max {
                    SessionStatus::Done
                } else {
                    SessionStatus::AwaitingProposal
                }
            }
        }
    }

    pub fn view(&self) -> Result<SessionView> {
        let trace = self.trace()?;
        Ok(SessionView {
            id: self.id.clone(),
            status: self.status(),
            iteration: trace.len(),
            max_iterations: self.config()?.max_iterations,
            design_size: trace.initial.len() + trace.len(),
            pending_initial: self
                .builder
                .pending_initial()
                .map(|(index, theta)| PendingInitial {
                    index,
                    theta: theta.to_vec(),
                }),
            proposal: self.builder.pending().map(ProposalView::from),
            incumbent: trace.incumbent(),
            last_seq: self.events.last().map(|e| e.seq),
        })
    }

    /// The logged pending proposal, if any.
    pub fn pending_proposal(&self) -> Option<ProposalView> {
        self.builder.pending().map(ProposalView::from)
    }

    pub fn propose_job(&self) -> Result<ProposeJob> {
        let status = self.status();
        if status != SessionStatus::AwaitingProposal {
            return Err(conflict(status, "propose"));
        }
        Ok(ProposeJob {
            config: self.config()?.clone(),
            design: self.trace()?.design()?,
            iteration: self.builder.completed() + 1,
        })
    }

    /// Sample count for the next report: the configured one, else `hint`, else the
    /// default.
    pub fn report_k(&self, hint: Option<usize>) -> Result<usize> {
        Ok(self
            .config()?
            .explain
            .as_ref()
            .map(|e| e.k)
            .or(hint)
            .unwrap_or(DEFAULT_K))
    }

    fn observe_event(&self, iteration: usize, theta: Vec<f64>, psi: f64) -> Result<TraceEvent> {
        let mut design = self.trace()?.design()?;
        design.push(Observation::new(theta.clone(), psi))?;
        let best = design.argmin().expect("nonempty").clone();
        Ok(TraceEvent::Observe {
            iteration,
            theta,
            psi,
            incumbent: best.psi,
            incumbent_theta: best.theta,
        })
    }

    pub fn decide_events(&self, decision: Decision) -> Result<Vec<TraceEvent>> {
        let status = self.status();
        if status != SessionStatus::AwaitingDecision {
            return Err(conflict(status, "decide"));
        }
        let pending = self.builder.pending().expect("awaiting decision");
        let config = self.config()?;
        if let Decision::Override { theta } = &decision {
            config.space.check(theta)?;
        }
        let theta = decision.evaluated(&pending.theta).to_vec();
        let t = pending.iteration;
        let mut events = vec![TraceEvent::Decide {
            iteration: t,
            decision,
            human: None,
        }];
        if let Some(target) = &self.target {
            let mut rng = seeds::stream(config.seed, role::EVAL_NOISE, t as u64);
            let psi = target
                .observe(&theta, &mut rng)
                .map_err(|e| Error::Evaluation {
                    iteration: t,
                    source: Box::new(e),
                })?;
            events.push(self.observe_event(t, theta, psi)?);
        }
        Ok(events)
    }

    pub fn observe_events(&self, psi: f64) -> Result<Vec<TraceEvent>> {
        let status = self.status();
        if status != SessionStatus::AwaitingObservation {
            return Err(conflict(status, "observe"));
        }
        if !self.is_external() {
            return Err(Error::Conflict(
                "benchmark sessions evaluate their own points".into(),
            ));
        }
        if !psi.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "psi must be finite, got {psi}"
            )));
        }
        if let Some((_, theta)) = self.builder.pending_initial() {
            let theta = theta.to_vec();
            let mut design = self.trace()?.design()?;
            design.push(Observation::new(theta.clone(), psi))?;
            let best = design.argmin().expect("nonempty").clone();
            return Ok(vec![TraceEvent::Observe {
                iteration: 0,
                theta,
                psi,
                incumbent: best.psi,
                incumbent_theta: best.theta,
            }]);
        }
        let p = self.builder.pending().expect("awaiting observation");
        let (d, _) = p.decision.as_ref().expect("decided");
        let theta = d.evaluated(&p.theta).to_vec();
        Ok(vec![self.observe_event(p.iteration, theta, psi)?])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::acquisition::AcquisitionSpec;
    use crate::benchmarks::TargetKind;

    fn quad_request(external: bool, iters: usize) -> CreateSession {
        let spec = TargetSpec::new(TargetKind::Quadratic {
            center: vec![0.3, -0.2],
            lower: vec![-1.0, -1.0],
            upper: vec![1.0, 1.0],
        });
        let space = spec.build().unwrap().space().clone();
        CreateSession {
            config: BoConfig {
                n_init: 3,
                max_iterations: iters,
                seed: 5,
                budget: Some(200),
                explain: Some(ExplainOptions {
                    k: 100,
                    background_size: Some(200),
                }),
                ..BoConfig::new(space, AcquisitionSpec::Cb { lambda: 1.0 })
            },
            target: if external {
                TargetBinding::External
            } else {
                TargetBinding::Benchmark { target: spec }
            },
        }
    }

    fn commit(s: &mut Session, events: Vec<TraceEvent>) {
        for e in s.sequence(events, None) {
            s.apply(e).unwrap();
        }
    }

    fn step(s: &mut Session, decision: Decision) {
        let out = s
            .propose_job()
            .unwrap()
            .run(s.report_k(None).unwrap(), 800)
            .unwrap();
        commit(s, out.events);
        assert_eq!(s.status(), SessionStatus::AwaitingDecision);
        let ev = s.decide_events(decision).unwrap();
        commit(s, ev);
    }

    #[test]
    fn benchmark_session_runs_to_done_and_replays() {
        let mut s = Session::new("a");
        let init = init_events(&quad_request(false, 3)).unwrap();
        assert_eq!(init.len(), 3);
        commit(&mut s, init);
        assert_eq!(s.status(), SessionStatus::AwaitingProposal);
        step(&mut s, Decision::Accept);
        assert_eq!(s.view().unwrap().design_size, 4);
        let tr = s.trace().unwrap();
        assert_eq!(tr.iterations[0].theta, tr.iterations[0].proposal);
        step(
            &mut s,
            Decision::Override {
                theta: vec![0.3, -0.2],
            },
        );
        assert_eq!(s.trace().unwrap().iterations[1].theta, [0.3, -0.2]);
        step(&mut s, Decision::Accept);
        let view = s.view().unwrap();
        assert_eq!(view.status, SessionStatus::Done);
        assert_eq!(view.incumbent.as_ref().unwrap().psi, 0.0);
        assert!(matches!(
            s.decide_events(Decision::Accept),
            Err(Error::Conflict(_))
        ));

        let back = Session::replay("a", s.events()).unwrap();
        assert_eq!(back.view().unwrap(), view);
    }

    #[test]
    fn external_session_waits_for_observations() {
        let mut s = Session::new("b");
        commit(&mut s, init_events(&quad_request(true, 1)).unwrap());
        for i in 0..3 {
            let v = s.view().unwrap();
            assert_eq!(v.status, SessionStatus::AwaitingObservation);
            assert_eq!(v.pending_initial.as_ref().unwrap().index, i);
            assert!(matches!(s.propose_job(), Err(Error::Conflict(_))));
            let ev = s.observe_events(i as f64).unwrap();
            commit(&mut s, ev);
        }
        assert!(s.observe_events(f64::NAN).is_err());
        step(&mut s, Decision::Accept);
        assert_eq!(s.status(), SessionStatus::AwaitingObservation);
        let ev = s.observe_events(-1.0).unwrap();
        commit(&mut s, ev);
        let v = s.view().unwrap();
        assert_eq!(v.status, SessionStatus::Done);
        assert_eq!(v.incumbent.unwrap().psi, -1.0);
    }

    #[test]
    fn out_of_bounds_override_names_bounds() {
        let mut s = Session::new("c");
        commit(&mut s, init_events(&quad_request(false, 2)).unwrap());
        let out = s.propose_job().unwrap().run(100, 100).unwrap();
        commit(&mut s, out.events);
        let err = s
            .decide_events(Decision::Override {
                theta: vec![3.0, 0.0],
            })
            .unwrap_err();
        assert!(err.to_string().contains("upper"), "{err}");
    }

    #[test]
    fn reports_follow_column_convention() {
        let mut s = Session::new("d");
        commit(&mut s, init_events(&quad_request(false, 1)).unwrap());
        let out = s.propose_job().unwrap().run(100, 1600).unwrap();
        commit(&mut s, out.events);
        let p = s.pending_proposal().unwrap();
        let r = p.report.unwrap();
        assert!(crate::explain::report_linearity_check(&r) <= 1e-10);
        assert_eq!(r.k, out.k);
    }
}
