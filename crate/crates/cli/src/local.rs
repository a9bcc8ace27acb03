//! Subcommands that compute in process.

use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use serde::Deserialize;

use attribo_core::acquisition::AcquisitionSpec;
use attribo_core::benchmarks::TargetSpec;
use attribo_core::bo::{
    report_seed, run_collaborative, BoConfig, HumanModel, InterventionPolicy, RunTrace,
};
use attribo_core::explain::{
    explain_iteration, informativeness_path, search_k_for_iteration, ExplainOptions,
};
use attribo_core::harness::{run_batch, ExperimentConfig};
use attribo_core::surrogate::{HyperOptions, NoiseOptions};

use crate::{BatchArgs, CheckKArgs, CollabArgs, ExplainArgs, PathsArgs, RunArgs};

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RunFile {
    target: Option<TargetSpec>,
    acquisition: Option<AcquisitionSpec>,
    n_init: Option<usize>,
    iterations: Option<usize>,
    seed: Option<u64>,
    k: Option<usize>,
    background_size: Option<usize>,
    budget: Option<usize>,
    hyper: Option<HyperOptions>,
    noise: Option<NoiseOptions>,
    policy: Option<InterventionPolicy>,
    human: Option<HumanModel>,
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn default_acquisition(kind: &str) -> Result<AcquisitionSpec> {
    Ok(match kind {
        "cb" => AcquisitionSpec::Cb { lambda: 1.0 },
        "racb" => AcquisitionSpec::Racb {
            tau: 1.0,
            alpha: 1.0,
        },
        "uacb" => AcquisitionSpec::Uacb {
            lambda: 1.0,
            rho: 1.0,
            alpha: 1.0,
            imprecision: 1.0,
        },
        other => bail!("unknown acquisition {other:?}; expected cb, racb, uacb or JSON"),
    })
}

fn acquisition(
    args: &RunArgs,
    file: Option<AcquisitionSpec>,
    default: AcquisitionSpec,
) -> Result<AcquisitionSpec> {
    let mut spec = match &args.acquisition {
        Some(s) if s.trim_start().starts_with('{') => {
            serde_json::from_str(s).context("parsing --acquisition")?
        }
        Some(s) => default_acquisition(s)?,
        None => file.unwrap_or(default),
    };
    let name = spec.name();
    let unused = |flag: &str| anyhow::anyhow!("--{flag} does not apply to {name}");
    match &mut spec {
        AcquisitionSpec::Cb { lambda } => {
            if args.tau.is_some() || args.rho.is_some() || args.alpha.is_some() {
                return Err(unused("tau/--rho/--alpha"));
            }
            *lambda = args.lambda.unwrap_or(*lambda);
        }
        AcquisitionSpec::Racb { tau, alpha } => {
            if args.lambda.is_some() || args.rho.is_some() {
                return Err(unused("lambda/--rho"));
            }
            *tau = args.tau.unwrap_or(*tau);
            *alpha = args.alpha.unwrap_or(*alpha);
        }
        AcquisitionSpec::Uacb {
            lambda, rho, alpha, ..
        } => {
            if args.tau.is_some() {
                return Err(unused("tau"));
            }
            *lambda = args.lambda.unwrap_or(*lambda);
            *rho = args.rho.unwrap_or(*rho);
            *alpha = args.alpha.unwrap_or(*alpha);
        }
    }
    Ok(spec)
}

struct Resolved {
    target: TargetSpec,
    config: BoConfig,
    file: RunFile,
}

fn resolve(
    args: &RunArgs,
    default_target: TargetSpec,
    default_acq: AcquisitionSpec,
) -> Result<Resolved> {
    let mut file: RunFile = match &args.config {
        Some(p) => read_json(p)?,
        None => RunFile::default(),
    };
    let target = match &args.target {
        Some(name) => TargetSpec::by_name(name)?,
        None => file.target.take().unwrap_or(default_target),
    };
    let built = target.build()?;
    let acq = acquisition(args, file.acquisition.take(), default_acq)?;
    let k = args.k.or(file.k);
    let background_size = args.background_size.or(file.background_size);
    let config = BoConfig {
        n_init: args.n_init.or(file.n_init).unwrap_or(3),
        max_iterations: args.iterations.or(file.iterations).unwrap_or(10),
        seed: args.seed.or(file.seed).unwrap_or(0),
        budget: args.budget.or(file.budget),
        hyper: file.hyper.take().unwrap_or_default(),
        noise: file.noise.take().unwrap_or_default(),
        explain: k.map(|k| ExplainOptions { k, background_size }),
        ..BoConfig::new(built.space().clone(), acq)
    };
    config.validate()?;
    Ok(Resolved {
        target,
        config,
        file,
    })
}

fn write_trace(trace: &RunTrace, out: Option<&Path>) -> Result<()> {
    match out {
        Some(p) => {
            let mut w = BufWriter::new(
                File::create(p).with_context(|| format!("creating {}", p.display()))?,
            );
            trace.write_jsonl(&mut w)?;
            w.flush()?;
        }
        None => trace.write_jsonl(io::stdout().lock())?,
    }
    if let Some(best) = trace.incumbent() {
        eprintln!(
            "{} iterations, incumbent psi {} at {:?}",
            trace.len(),
            best.psi,
            best.theta
        );
    }
    Ok(())
}

fn run_with(
    target: &TargetSpec,
    config: &BoConfig,
    policy: &InterventionPolicy,
    human: Option<&HumanModel>,
    out: Option<&Path>,
) -> Result<ExitCode> {
    let t = target.build()?;
    let trace = run_collaborative(config, &t, policy, human)?;
    write_trace(&trace, out)?;
    Ok(ExitCode::SUCCESS)
}

pub fn run(args: &RunArgs) -> Result<ExitCode> {
    let r = resolve(
        args,
        TargetSpec::hyper_ellipsoid(),
        AcquisitionSpec::Cb { lambda: 1.0 },
    )?;
    if r.file.policy.is_some() || r.file.human.is_some() {
        bail!("policy and human belong to `collab`");
    }
    run_with(
        &r.target,
        &r.config,
        &InterventionPolicy::Never,
        None,
        args.out.as_deref(),
    )
}

fn policy(name: &str, beta: f64, every: usize) -> Result<InterventionPolicy> {
    if name.trim_start().starts_with('{') {
        return serde_json::from_str(name).context("parsing --policy");
    }
    Ok(match name {
        "never" => InterventionPolicy::Never,
        "always" => InterventionPolicy::Always,
        "param_ratio" => InterventionPolicy::ParamRatio { beta },
        "every_k" => InterventionPolicy::EveryK { k: every },
        "shap_ratio" => InterventionPolicy::ShapRatio { beta },
        other => bail!("unknown policy {other:?}"),
    })
}

pub fn collab(args: &CollabArgs) -> Result<ExitCode> {
    let r = resolve(
        &args.run,
        TargetSpec::gp_utility(0),
        AcquisitionSpec::Cb { lambda: 20.0 },
    )?;
    let p = match (&args.policy, r.file.policy.clone()) {
        (Some(name), _) => policy(name, args.beta.unwrap_or(2.0), args.every.unwrap_or(2))?,
        (None, Some(mut p)) => {
            match &mut p {
                InterventionPolicy::ParamRatio { beta }
                | InterventionPolicy::ShapRatio { beta } => *beta = args.beta.unwrap_or(*beta),
                InterventionPolicy::EveryK { k } => *k = args.every.unwrap_or(*k),
                _ => {}
            }
            p
        }
        (None, None) => InterventionPolicy::ShapRatio {
            beta: args.beta.unwrap_or(2.0),
        },
    };
    p.validate()?;
    let mut human = r.file.human.clone().unwrap_or_default();
    human.lambda = args.human_lambda.unwrap_or(human.lambda);
    human.prior_size = args.prior_size.unwrap_or(human.prior_size);
    run_with(
        &r.target,
        &r.config,
        &p,
        Some(&human),
        args.run.out.as_deref(),
    )
}

fn read_trace(path: &Path) -> Result<RunTrace> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    RunTrace::read_jsonl(BufReader::new(f))
        .with_context(|| format!("reading trace {}", path.display()))
}

pub fn explain(args: &ExplainArgs) -> Result<ExitCode> {
    let trace = read_trace(&args.trace)?;
    let config = &trace.setup.config;
    let seed = args
        .seed
        .unwrap_or_else(|| report_seed(config.seed, args.iteration));
    let opts = ExplainOptions {
        k: args.k,
        background_size: args.background_size,
    };
    let report = explain_iteration(&trace, args.iteration, &config.acquisition, &opts, seed)?;
    let mut json = serde_json::to_string_pretty(&report)?;
    json.push('\n');
    match &args.out {
        Some(p) => fs::write(p, json)?,
        None => io::stdout().write_all(json.as_bytes())?,
    }
    if !report.adequacy.overall {
        eprintln!(
            "sample-size check failed at K = {}; consider a larger --k",
            report.k
        );
    }
    Ok(ExitCode::SUCCESS)
}

pub fn check_k(args: &CheckKArgs) -> Result<ExitCode> {
    let trace = read_trace(&args.trace)?;
    let config = &trace.setup.config;
    let seed = args
        .seed
        .unwrap_or_else(|| report_seed(config.seed, args.iteration));
    let search = search_k_for_iteration(
        &trace,
        args.iteration,
        &config.acquisition,
        args.background_size,
        args.start,
        args.cap,
        seed,
    )?;
    for (k, ok) in &search.tried {
        println!("K = {k}: {}", if *ok { "sufficient" } else { "increase K" });
    }
    println!("{}", search.k);
    Ok(if search.sufficient {
        ExitCode::SUCCESS
    } else {
        eprintln!("cap {} reached without passing", args.cap);
        ExitCode::FAILURE
    })
}

fn output_dir(args: &BatchArgs, config: &ExperimentConfig) -> PathBuf {
    if let Some(o) = &args.out {
        return o.clone();
    }
    let base = args
        .config
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_default();
    match &config.output_dir {
        Some(d) if d.is_absolute() => d.clone(),
        Some(d) => base.join(d),
        None => {
            let stem = args
                .config
                .file_stem()
                .and_then(|s| s.to_str())
                .unwrap_or("batch");
            base.join(format!("{stem}-results"))
        }
    }
}

pub fn batch(args: &BatchArgs) -> Result<ExitCode> {
    let mut config = ExperimentConfig::load(&args.config)
        .with_context(|| format!("loading {}", args.config.display()))?;
    config.seed = args.seed.unwrap_or(config.seed);
    config.repetitions = args.repetitions.unwrap_or(config.repetitions);
    config.iterations = args.iterations.unwrap_or(config.iterations);
    config.n_init = args.n_init.unwrap_or(config.n_init);
    config.k = args.k.unwrap_or(config.k);
    config.threads = args.threads.or(config.threads);
    let dir = output_dir(args, &config);
    config.output_dir = None;
    let res = run_batch(&config, Some(&dir))?;
    println!("agent\tn\tfailures\tmean_cumulative_regret\tci95");
    for s in &res.summary {
        println!(
            "{}\t{}\t{}\t{:.4}\t{:.4}",
            s.agent, s.n, s.failures, s.mean_cumulative_regret, s.ci_half_width
        );
    }
    eprintln!("wrote {}", dir.display());
    let failures = res.failures();
    if failures > 0 {
        for c in res.cells.iter().filter(|c| c.error.is_some()) {
            eprintln!(
                "{} repetition {}: {}",
                c.agent,
                c.repetition,
                c.error.as_deref().unwrap_or("")
            );
        }
        return Ok(ExitCode::FAILURE);
    }
    Ok(ExitCode::SUCCESS)
}

fn trace_files(inputs: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for p in inputs {
        if p.is_dir() {
            let mut found: Vec<PathBuf> = fs::read_dir(p)?
                .map(|e| e.map(|e| e.path()))
                .collect::<io::Result<_>>()?;
            found.retain(|f| f.extension().is_some_and(|e| e == "jsonl"));
            found.sort();
            out.extend(found);
        } else {
            out.push(p.clone());
        }
    }
    if out.is_empty() {
        bail!("no trace files found");
    }
    Ok(out)
}

pub fn paths(args: &PathsArgs) -> Result<ExitCode> {
    let traces = trace_files(&args.traces)?
        .iter()
        .map(|p| read_trace(p))
        .collect::<Result<Vec<_>>>()?;
    let to = args.to.unwrap_or(traces[0].len());
    if args.from == 0 || args.from > to {
        bail!("iteration range {}..={to} is empty", args.from);
    }
    let iterations: Vec<usize> = (args.from..=to).collect();
    let spec = traces[0].setup.config.acquisition.clone();
    let opts = ExplainOptions {
        k: args.k,
        background_size: args.background_size,
    };
    let path = informativeness_path(&traces, &iterations, &spec, &opts, args.seed)?;
    match &args.out {
        Some(p) => path.write_csv(BufWriter::new(File::create(p)?))?,
        None => path.write_csv(io::stdout().lock())?,
    }
    Ok(ExitCode::SUCCESS)
}
