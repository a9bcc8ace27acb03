//! Batch experiments: repetitions × agents collaborative runs, regret statistics and
//! persisted outputs.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::acquisition::AcquisitionSpec;
use crate::benchmarks::{Target, TargetKind, TargetSpec};
use crate::bo::{run_collaborative, BoConfig, HumanModel, InterventionPolicy, RunTrace};
use crate::error::{Error, Result};
use crate::explain::ExplainOptions;
use crate::seeds;
use crate::space::mean_var;
use crate::surrogate::{HyperOptions, NoiseOptions};
use crate::tree::{fit_tree_rule, DEFAULT_MAX_DEPTH};

const DESIGN_ROLE: u64 = 101;
const TARGET_ROLE: u64 = 102;

/// Normal-approximation 95% interval multiplier.
pub const CI_Z: f64 = 1.96;

fn default_k() -> usize {
    1000
}

fn default_depth() -> usize {
    DEFAULT_MAX_DEPTH
}

fn yes() -> bool {
    true
}

/// Fit a tree rule on the reports of another agent, leaving out the repetition it
/// is applied to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeLearning {
    pub source: String,
    #[serde(default = "default_depth")]
    pub max_depth: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentConfig {
    /// Defaults to the policy label (`A0` ... `A4`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub policy: Option<InterventionPolicy>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub learn_tree: Option<TreeLearning>,
    /// Overrides the experiment-wide human model.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub human: Option<HumanModel>,
}

impl AgentConfig {
    pub fn new(policy: InterventionPolicy) -> Self {
        AgentConfig {
            name: None,
            policy: Some(policy),
            learn_tree: None,
            human: None,
        }
    }

    pub fn name(&self) -> String {
        match (&self.name, &self.policy) {
            (Some(n), _) => n.clone(),
            (None, Some(p)) => p.label().to_string(),
            (None, None) => "tree".to_string(),
        }
    }

    fn needs_report(&self) -> bool {
        self.learn_tree.is_some() || self.policy.as_ref().is_some_and(|p| p.needs_report())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub target: TargetSpec,
    /// Give every repetition its own `gp_utility` surface.
    #[serde(default = "yes")]
    pub vary_target: bool,
    pub agents: Vec<AgentConfig>,
    #[serde(default)]
    pub human: HumanModel,
    pub repetitions: usize,
    pub iterations: usize,
    pub n_init: usize,
    pub acquisition: AcquisitionSpec,
    /// Shapley sample count for reports.
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub background_size: Option<usize>,
    /// Attach reports to every iteration of every agent.
    #[serde(default)]
    pub explain: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub budget: Option<usize>,
    #[serde(default)]
    pub hyper: HyperOptions,
    #[serde(default)]
    pub noise: NoiseOptions,
    pub seed: u64,
    /// Relative paths resolve against the config file's directory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    /// Worker threads; defaults to the available parallelism.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
}

impl ExperimentConfig {
    pub fn from_json(s: &str) -> Result<Self> {
        let c: ExperimentConfig = serde_json::from_str(s)?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.repetitions == 0 {
            return Err(Error::InvalidConfig("repetitions must be >= 1".into()));
        }
        if self.n_init == 0 {
            return Err(Error::InvalidConfig("n_init must be >= 1".into()));
        }
        if self.k == 0 {
            return Err(Error::InvalidConfig("k must be >= 1".into()));
        }
        if self.agents.is_empty() {
            return Err(Error::InvalidConfig(
                "at least one agent is required".into(),
            ));
        }
        let names: Vec<String> = self.agents.iter().map(AgentConfig::name).collect();
        for (i, a) in self.agents.iter().enumerate() {
            if names[..i].contains(&names[i]) {
                return Err(Error::InvalidConfig(format!(
                    "duplicate agent name {}",
                    names[i]
                )));
            }
            match (&a.policy, &a.learn_tree) {
                (Some(p), None) => p.validate()?,
                (None, Some(t)) => {
                    let src = self
                        .agents
                        .iter()
                        .find(|b| b.name() == t.source)
                        .ok_or_else(|| {
                            Error::InvalidConfig(format!("unknown tree source {}", t.source))
                        })?;
                    if src.learn_tree.is_some() {
                        return Err(Error::InvalidConfig(
                            "tree source must have a fixed policy".into(),
                        ));
                    }
                    if !(self.explain || src.needs_report()) {
                        return Err(Error::InvalidConfig(format!(
                            "tree source {} produces no reports; set explain",
                            t.source
                        )));
                    }
                    if self.repetitions < 2 {
                        return Err(Error::InvalidConfig(
                            "tree learning needs >= 2 repetitions".into(),
                        ));
                    }
                }
                _ => {
                    return Err(Error::InvalidConfig(format!(
                        "agent {} needs exactly one of policy and learn_tree",
                        names[i]
                    )))
                }
            }
        }
        let target = self.target.build()?;
        self.acquisition.validate(target.space().dim())
    }

    pub fn agent_names(&self) -> Vec<String> {
        self.agents.iter().map(AgentConfig::name).collect()
    }

    pub fn target_for(&self, repetition: usize) -> Result<Target> {
        let mut spec = self.target.clone();
        if self.vary_target {
            if let TargetKind::GpUtility { seed, .. } = &mut spec.kind {
                *seed = seeds::derive(self.seed, &[TARGET_ROLE, repetition as u64]);
            }
        }
        spec.build()
    }

    /// The run configuration of one cell. Agents share the initial design and the
    /// human's prior design within a repetition.
    pub fn cell_config(&self, agent: usize, repetition: usize, target: &Target) -> BoConfig {
        let a = &self.agents[agent];
        let explain = (self.explain || a.needs_report()).then(|| ExplainOptions {
            k: self.k,
            background_size: self.background_size,
        });
        BoConfig {
            space: target.space().clone(),
            acquisition: self.acquisition.clone(),
            n_init: self.n_init,
            max_iterations: self.iterations,
            budget: self.budget,
            seed: seeds::derive(self.seed, &[agent as u64, repetition as u64]),
            design_seed: Some(seeds::derive(self.seed, &[DESIGN_ROLE, repetition as u64])),
            hyper: self.hyper.clone(),
            noise: self.noise.clone(),
            explain,
        }
    }

    fn human_for(&self, agent: usize) -> &HumanModel {
        self.agents[agent].human.as_ref().unwrap_or(&self.human)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegretCurve {
    pub simple: Vec<f64>,
    pub cumulative: f64,
}

/// Per-iteration `incumbent - optimum` and its sum over the iterations.
pub fn regret_curve(trace: &RunTrace, optimum: f64) -> RegretCurve {
    let simple: Vec<f64> = trace
        .iterations
        .iter()
        .map(|r| r.incumbent - optimum)
        .collect();
    RegretCurve {
        cumulative: simple.iter().sum(),
        simple,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub agent: String,
    pub repetition: usize,
    pub seed: u64,
    pub optimum: f64,
    #[serde(skip)]
    pub trace: Option<RunTrace>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub regret: Option<RegretCurve>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Mean incumbent at one iteration across repetitions. `ci_half_width` is NaN when
/// only one repetition is available.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationAggregate {
    pub agent: String,
    pub iteration: usize,
    pub n: usize,
    pub mean_incumbent: f64,
    pub sd: f64,
    pub ci_half_width: f64,
    pub mean_regret: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentSummary {
    pub agent: String,
    pub n: usize,
    pub failures: usize,
    pub mean_cumulative_regret: f64,
    pub sd: f64,
    pub ci_half_width: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchResult {
    pub cells: Vec<CellResult>,
    pub aggregates: Vec<IterationAggregate>,
    pub summary: Vec<AgentSummary>,
    pub output_dir: Option<PathBuf>,
}

impl BatchResult {
    pub fn failures(&self) -> usize {
        self.cells.iter().filter(|c| c.error.is_some()).count()
    }

    pub fn summary_for(&self, agent: &str) -> Option<&AgentSummary> {
        self.summary.iter().find(|s| s.agent == agent)
    }

    /// Cumulative regret of one agent per repetition, `None` for failed cells.
    pub fn cumulative_regrets(&self, agent: &str) -> Vec<Option<f64>> {
        self.cells
            .iter()
            .filter(|c| c.agent == agent)
            .map(|c| c.regret.as_ref().map(|r| r.cumulative))
            .collect()
    }
}

fn ci_half_width(sd: f64, n: usize) -> f64 {
    if n < 2 {
        f64::NAN
    } else {
        CI_Z * sd / (n as f64).sqrt()
    }
}

fn sd_of(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        f64::NAN
    } else {
        mean_var(xs).1.sqrt()
    }
}

/// Aggregates and summaries from the cells; a pure fold over their traces.
pub fn aggregate(
    cells: &[CellResult],
    agents: &[String],
) -> (Vec<IterationAggregate>, Vec<AgentSummary>) {
    let mut aggregates = Vec::new();
    let mut summary = Vec::new();
    for agent in agents {
        let ok: Vec<&CellResult> = cells
            .iter()
            .filter(|c| &c.agent == agent && c.error.is_none() && c.trace.is_some())
            .collect();
        let failures = cells
            .iter()
            .filter(|c| &c.agent == agent && c.error.is_some())
            .count();
        let len = ok
            .iter()
            .map(|c| c.trace.as_ref().map_or(0, RunTrace::len))
            .min()
            .unwrap_or(0);
        for t in 0..len {
            let inc: Vec<f64> = ok
                .iter()
                .map(|c| c.trace.as_ref().unwrap().iterations[t].incumbent)
                .collect();
            let reg: Vec<f64> = ok
                .iter()
                .map(|c| c.trace.as_ref().unwrap().iterations[t].incumbent - c.optimum)
                .collect();
            let sd = sd_of(&inc);
            aggregates.push(IterationAggregate {
                agent: agent.clone(),
                iteration: t + 1,
                n: inc.len(),
                mean_incumbent: mean_var(&inc).0,
                sd,
                ci_half_width: ci_half_width(sd, inc.len()),
                mean_regret: mean_var(&reg).0,
            });
        }
        let cum: Vec<f64> = ok
            .iter()
            .map(|c| regret_curve(c.trace.as_ref().unwrap(), c.optimum).cumulative)
            .collect();
        let sd = sd_of(&cum);
        summary.push(AgentSummary {
            agent: agent.clone(),
            n: cum.len(),
            failures,
            mean_cumulative_regret: if cum.is_empty() {
                f64::NAN
            } else {
                mean_var(&cum).0
            },
            sd,
            ci_half_width: ci_half_width(sd, cum.len()),
        });
    }
    (aggregates, summary)
}

/// Writes `bytes` to a sibling temporary file, syncs it and renames it into place.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

fn csv_bytes<T: Serialize>(rows: &[T]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

pub fn trace_path(dir: &Path, agent: &str, repetition: usize) -> PathBuf {
    dir.join("traces")
        .join(agent)
        .join(format!("rep_{repetition:03}.jsonl"))
}

#[derive(Serialize)]
struct RegretRow<'a> {
    agent: &'a str,
    repetition: usize,
    seed: u64,
    optimum: f64,
    cumulative_regret: f64,
    final_regret: f64,
    error: &'a str,
}

fn persist(
    dir: &Path,
    config: &ExperimentConfig,
    cells: &[CellResult],
    aggregates: &[IterationAggregate],
    summary: &[AgentSummary],
) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut cfg = serde_json::to_vec_pretty(config)?;
    cfg.push(b'\n');
    atomic_write(&dir.join("config.json"), &cfg)?;
    for c in cells {
        if let Some(trace) = &c.trace {
            let mut buf = Vec::new();
            trace.write_jsonl(&mut buf)?;
            atomic_write(&trace_path(dir, &c.agent, c.repetition), &buf)?;
        }
    }
    let rows: Vec<RegretRow> = cells
        .iter()
        .map(|c| RegretRow {
            agent: &c.agent,
            repetition: c.repetition,
            seed: c.seed,
            optimum: c.optimum,
            cumulative_regret: c.regret.as_ref().map_or(f64::NAN, |r| r.cumulative),
            final_regret: c
                .regret
                .as_ref()
                .and_then(|r| r.simple.last().copied())
                .unwrap_or(f64::NAN),
            error: c.error.as_deref().unwrap_or(""),
        })
        .collect();
    atomic_write(&dir.join("regret.csv"), &csv_bytes(&rows)?)?;
    atomic_write(&dir.join("aggregates.csv"), &csv_bytes(aggregates)?)?;
    atomic_write(&dir.join("summary.csv"), &csv_bytes(summary)?)?;
    Ok(())
}

fn run_cell(
    config: &ExperimentConfig,
    agent: usize,
    repetition: usize,
    policy: &InterventionPolicy,
) -> CellResult {
    let name = config.agents[agent].name();
    let mut cell = CellResult {
        agent: name,
        repetition,
        seed: 0,
        optimum: f64::NAN,
        trace: None,
        regret: None,
        error: None,
    };
    let outcome = config.target_for(repetition).and_then(|target| {
        let bo = config.cell_config(agent, repetition, &target);
        cell.seed = bo.seed;
        cell.optimum = target.optimum();
        let human = policy.needs_human().then(|| config.human_for(agent));
        run_collaborative(&bo, &target, policy, human)
    });
    match outcome {
        Ok(trace) => {
            cell.regret = Some(regret_curve(&trace, cell.optimum));
            cell.trace = Some(trace);
        }
        Err(e) => cell.error = Some(e.to_string()),
    }
    cell
}

fn run_parallel<F>(jobs: &[(usize, usize)], threads: usize, f: F) -> Vec<CellResult>
where
    F: Fn(usize, usize) -> CellResult + Sync,
{
    let threads = threads.clamp(1, jobs.len().max(1));
    if threads == 1 {
        return jobs.iter().map(|&(a, r)| f(a, r)).collect();
    }
    let next = AtomicUsize::new(0);
    let out: Mutex<Vec<Option<CellResult>>> = Mutex::new(vec![None; jobs.len()]);
    std::thread::scope(|s| {
        for _ in 0..threads {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(&(a, r)) = jobs.get(i) else { break };
                let c = f(a, r);
                out.lock().expect("worker panicked")[i] = Some(c);
            });
        }
    });
    out.into_inner()
        .expect("worker panicked")
        .into_iter()
        .map(|c| c.expect("every job ran"))
        .collect()
}

fn learned_policy(
    learn: &TreeLearning,
    repetition: usize,
    cells: &[CellResult],
) -> Result<InterventionPolicy> {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for c in cells
        .iter()
        .filter(|c| c.agent == learn.source && c.repetition != repetition)
    {
        let Some(trace) = &c.trace else { continue };
        for r in &trace.iterations {
            if let Some(rep) = &r.report {
                xs.push(rep.phi_m.clone());
                ys.push(r.psi);
            }
        }
    }
    if xs.is_empty() {
        return Err(Error::InvalidConfig(format!(
            "no reports from {} to learn a tree for repetition {repetition}",
            learn.source
        )));
    }
    Ok(InterventionPolicy::TreeRule {
        tree: fit_tree_rule(&xs, &ys, learn.max_depth)?,
    })
}

/// Runs every repetition × agent cell. Cell failures are recorded and the batch
/// continues; only configuration and I/O errors abort. With `out` set, the
/// resolved config, traces and CSVs are written there.
pub fn run_batch(config: &ExperimentConfig, out: Option<&Path>) -> Result<BatchResult> {
    config.validate()?;
    let threads = config
        .threads
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let fixed: Vec<(usize, usize)> = (0..config.repetitions)
        .flat_map(|r| {
            (0..config.agents.len())
                .filter(|&a| config.agents[a].learn_tree.is_none())
                .map(move |a| (a, r))
        })
        .collect();
    let mut cells = run_parallel(&fixed, threads, |a, r| {
        run_cell(
            config,
            a,
            r,
            config.agents[a].policy.as_ref().expect("fixed agent"),
        )
    });
    let learned: Vec<(usize, usize)> = (0..config.repetitions)
        .flat_map(|r| {
            (0..config.agents.len())
                .filter(|&a| config.agents[a].learn_tree.is_some())
                .map(move |a| (a, r))
        })
        .collect();
    if !learned.is_empty() {
        let source = cells.clone();
        cells.extend(run_parallel(&learned, threads, |a, r| {
            let learn = config.agents[a].learn_tree.as_ref().expect("tree agent");
            match learned_policy(learn, r, &source) {
                Ok(policy) => run_cell(config, a, r, &policy),
                Err(e) => CellResult {
                    agent: config.agents[a].name(),
                    repetition: r,
                    seed: 0,
                    optimum: f64::NAN,
                    trace: None,
                    regret: None,
                    error: Some(e.to_string()),
                },
            }
        }));
    }
    let order: BTreeMap<String, usize> = config
        .agent_names()
        .into_iter()
        .enumerate()
        .map(|(i, n)| (n, i))
        .collect();
    cells.sort_by_key(|c| (order[&c.agent], c.repetition));
    let (aggregates, summary) = aggregate(&cells, &config.agent_names());
    if let Some(dir) = out {
        persist(dir, config, &cells, &aggregates, &summary)?;
    }
    Ok(BatchResult {
        cells,
        aggregates,
        summary,
        output_dir: out.map(Path::to_path_buf),
    })
}

/// Rebuilds the cells of a persisted batch from its config and trace files.
pub fn load_batch(dir: &Path) -> Result<(ExperimentConfig, Vec<CellResult>)> {
    let config = ExperimentConfig::load(&dir.join("config.json"))?;
    let mut cells = Vec::new();
    for (a, agent) in config.agent_names().iter().enumerate() {
        for r in 0..config.repetitions {
            let path = trace_path(dir, agent, r);
            let target = config.target_for(r)?;
            let mut cell = CellResult {
                agent: agent.clone(),
                repetition: r,
                seed: config.cell_config(a, r, &target).seed,
                optimum: target.optimum(),
                trace: None,
                regret: None,
                error: None,
            };
            if path.exists() {
                let trace = RunTrace::read_jsonl(BufReader::new(fs::File::open(&path)?))?;
                cell.regret = Some(regret_curve(&trace, cell.optimum));
                cell.trace = Some(trace);
            } else {
                cell.error = Some("trace missing".into());
            }
            cells.push(cell);
        }
    }
    Ok((config, cells))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bo::{IterationRecord, PriorRegion, RunSetup};
    use crate::surrogate::KernelConfig;

    fn quad_experiment(reps: usize, agents: Vec<AgentConfig>) -> ExperimentConfig {
        ExperimentConfig {
            name: None,
            target: TargetSpec::new(TargetKind::Quadratic {
                center: vec![0.8, -0.6],
                lower: vec![-2.0, -2.0],
                upper: vec![2.0, 2.0],
            }),
            vary_target: true,
            agents,
            human: HumanModel {
                lambda: 0.0,
                prior_size: 20,
                region: PriorRegion::AroundOptimum {
                    fraction: 0.05,
                    offset: vec![],
                },
                search_within_region: true,
                budget: Some(200),
            },
            repetitions: reps,
            iterations: 5,
            n_init: 3,
            acquisition: AcquisitionSpec::Cb { lambda: 1.0 },
            k: 50,
            background_size: Some(100),
            explain: false,
            budget: Some(200),
            hyper: HyperOptions::default(),
            noise: NoiseOptions::default(),
            seed: 11,
            output_dir: None,
            threads: Some(1),
        }
    }

    fn toy_trace(incumbents: &[f64]) -> RunTrace {
        let config = BoConfig::new(
            crate::space::ParamSpace::cube(1, 0.0, 1.0).unwrap(),
            AcquisitionSpec::Cb { lambda: 1.0 },
        );
        RunTrace {
            setup: RunSetup {
                config,
                target: None,
                policy: Some(InterventionPolicy::Never),
                human: None,
            },
            initial: vec![],
            iterations: incumbents
                .iter()
                .enumerate()
                .map(|(i, &inc)| IterationRecord {
                    iteration: i + 1,
                    kernel: KernelConfig::fixed(0.1, 0.0, 1e-6),
                    proposal: vec![0.5],
                    report: None,
                    human: None,
                    decision: crate::bo::Decision::Accept,
                    theta: vec![0.5],
                    psi: inc,
                    incumbent: inc,
                    incumbent_theta: vec![0.5],
                })
                .collect(),
        }
    }

    #[test]
    fn regret_examples() {
        assert_eq!(regret_curve(&toy_trace(&[1.0; 4]), 1.0).cumulative, 0.0);
        assert_eq!(regret_curve(&toy_trace(&[3.5; 10]), 1.0).cumulative, 25.0);
        let r = regret_curve(&toy_trace(&[4.0, 2.5, 2.0]), 1.5);
        assert_eq!(r.simple, [2.5, 1.0, 0.5]);
        assert_eq!(r.cumulative, 4.0);
    }

    #[test]
    fn single_repetition_has_nan_interval() {
        let cfg = quad_experiment(1, vec![AgentConfig::new(InterventionPolicy::Never)]);
        let res = run_batch(&cfg, None).unwrap();
        assert!(res
            .aggregates
            .iter()
            .all(|a| a.n == 1 && a.ci_half_width.is_nan()));
        assert!(res.summary[0].ci_half_width.is_nan());
    }

    #[test]
    fn interval_uses_normal_approximation() {
        let cfg = quad_experiment(3, vec![AgentConfig::new(InterventionPolicy::Never)]);
        let res = run_batch(&cfg, None).unwrap();
        for a in &res.aggregates {
            let xs: Vec<f64> = res
                .cells
                .iter()
                .map(|c| c.trace.as_ref().unwrap().iterations[a.iteration - 1].incumbent)
                .collect();
            let m = xs.iter().sum::<f64>() / 3.0;
            let sd = (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / 2.0).sqrt();
            assert!((a.ci_half_width - 1.96 * sd / 3f64.sqrt()).abs() < 1e-12);
        }
    }

    #[test]
    fn omniscient_human_beats_plain_bo() {
        let cfg = quad_experiment(
            4,
            vec![
                AgentConfig::new(InterventionPolicy::Never),
                AgentConfig::new(InterventionPolicy::Always),
            ],
        );
        let res = run_batch(&cfg, None).unwrap();
        assert_eq!(res.failures(), 0);
        let never = res.summary_for("A0").unwrap().mean_cumulative_regret;
        let always = res.summary_for("A1").unwrap().mean_cumulative_regret;
        assert!(always < never, "A1 {always} vs A0 {never}");
    }

    #[test]
    fn persisted_batch_is_deterministic_and_refoldable() {
        let agents = vec![
            AgentConfig::new(InterventionPolicy::Never),
            AgentConfig::new(InterventionPolicy::ShapRatio { beta: 2.0 }),
            AgentConfig {
                name: None,
                policy: None,
                learn_tree: Some(TreeLearning {
                    source: "A4".into(),
                    max_depth: 2,
                }),
                human: None,
            },
        ];
        let cfg = quad_experiment(3, agents);
        let (d1, d2) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let a = run_batch(&cfg, Some(d1.path())).unwrap();
        let threaded = ExperimentConfig {
            threads: Some(3),
            ..cfg.clone()
        };
        run_batch(&threaded, Some(d2.path())).unwrap();
        assert_eq!(
            a.failures(),
            0,
            "{:?}",
            a.cells.iter().map(|c| &c.error).collect::<Vec<_>>()
        );
        for agent in cfg.agent_names() {
            for r in 0..3 {
                let x = fs::read(trace_path(d1.path(), &agent, r)).unwrap();
                let y = fs::read(trace_path(d2.path(), &agent, r)).unwrap();
                assert_eq!(x, y, "{agent} rep {r}");
            }
        }
        let (loaded, cells) = load_batch(d1.path()).unwrap();
        let (agg, summary) = aggregate(&cells, &loaded.agent_names());
        assert_eq!(
            csv_bytes(&agg).unwrap(),
            fs::read(d1.path().join("aggregates.csv")).unwrap()
        );
        assert_eq!(
            csv_bytes(&summary).unwrap(),
            fs::read(d1.path().join("summary.csv")).unwrap()
        );
    }

    #[test]
    fn failing_cell_is_recorded() {
        let mut cfg = quad_experiment(
            2,
            vec![
                AgentConfig::new(InterventionPolicy::Never),
                AgentConfig::new(InterventionPolicy::Always),
            ],
        );
        cfg.human.lambda = -1.0;
        let res = run_batch(&cfg, None).unwrap();
        assert_eq!(res.failures(), 2);
        assert_eq!(res.summary_for("A0").unwrap().n, 2);
        assert_eq!(res.summary_for("A1").unwrap().n, 0);
    }

    #[test]
    fn config_validation() {
        let mut cfg = quad_experiment(0, vec![AgentConfig::new(InterventionPolicy::Never)]);
        assert!(cfg.validate().is_err());
        cfg.repetitions = 2;
        cfg.agents.push(AgentConfig::new(InterventionPolicy::Never));
        assert!(cfg.validate().is_err());
        cfg.agents.pop();
        let json = serde_json::to_string(&cfg).unwrap();
        assert_eq!(ExperimentConfig::from_json(&json).unwrap(), cfg);
    }
}
