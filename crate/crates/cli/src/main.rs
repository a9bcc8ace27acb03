mod local;
mod remote;

use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "attribo",
    version,
    about = "Bayesian optimization with Shapley attributions of the acquisition function"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Single BO run; writes the trace as JSON lines.
    Run(RunArgs),
    /// Collaborative run with a simulated human and an intervention policy.
    Collab(CollabArgs),
    /// Shapley report for one iteration of a stored trace.
    Explain(ExplainArgs),
    /// Full repetitions x agents experiment.
    Batch(BatchArgs),
    /// Informativeness paths across stored traces, as CSV.
    Paths(PathsArgs),
    /// Doubles K until the sample-size check passes for one iteration.
    CheckK(CheckKArgs),
    /// Starts the session service.
    Serve(ServeArgs),
    /// Talks to a running session service.
    Session(remote::SessionArgs),
}

/// Flags shared by `run` and `collab`. Unset flags fall back to the config file,
/// then to built-in defaults.
#[derive(Args, Debug, Default)]
pub struct RunArgs {
    /// JSON file with any of: target, acquisition, n_init, iterations, seed, k,
    /// background_size, budget, hyper, noise, policy, human.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// hyper_ellipsoid, hetero_ellipsoid, hetero_ellipsoid_offset or gp_utility:<seed>.
    #[arg(long)]
    pub target: Option<String>,
    /// cb, racb, uacb or a JSON spec.
    #[arg(long)]
    pub acquisition: Option<String>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub rho: Option<f64>,
    #[arg(long)]
    pub n_init: Option<usize>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Attach a Shapley report with this K to every iteration.
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub background_size: Option<usize>,
    /// Inner optimizer candidate budget.
    #[arg(long)]
    pub budget: Option<usize>,
    /// Trace output; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct CollabArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// never, always, param_ratio, every_k, shap_ratio or a JSON policy.
    #[arg(long)]
    pub policy: Option<String>,
    #[arg(long)]
    pub beta: Option<f64>,
    /// Period of every_k.
    #[arg(long)]
    pub every: Option<usize>,
    #[arg(long)]
    pub human_lambda: Option<f64>,
    #[arg(long)]
    pub prior_size: Option<usize>,
}

#[derive(Args, Debug)]
pub struct ExplainArgs {
    #[arg(long)]
    pub trace: PathBuf,
    #[arg(long = "iter")]
    pub iteration: usize,
    #[arg(long, default_value_t = 1000)]
    pub k: usize,
    #[arg(long)]
    pub background_size: Option<usize>,
    /// Defaults to the seed the run itself would use for this iteration.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct BatchArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub repetitions: Option<usize>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub n_init: Option<usize>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub threads: Option<usize>,
    /// Defaults to the config's output_dir, else `<config stem>-results` next to it.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct PathsArgs {
    /// Trace files or directories searched for `*.jsonl`.
    #[arg(long, required = true, num_args = 1..)]
    pub traces: Vec<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub from: usize,
    /// Last iteration; defaults to the trace length.
    #[arg(long)]
    pub to: Option<usize>,
    #[arg(long, default_value_t = 1000)]
    pub k: usize,
    #[arg(long)]
    pub background_size: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct CheckKArgs {
    #[arg(long)]
    pub trace: PathBuf,
    #[arg(long = "iter")]
    pub iteration: usize,
    #[arg(long, default_value_t = 100)]
    pub start: usize,
    #[arg(long, default_value_t = attribo_core::shapley::K_CAP)]
    pub cap: usize,
    #[arg(long)]
    pub background_size: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub addr: SocketAddr,
    #[arg(long, default_value = "sessions")]
    pub data_dir: PathBuf,
    #[arg(long, default_value_t = attribo_core::session::LIVE_K_CAP)]
    pub k_cap: usize,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => local::run(&a),
        Command::Collab(a) => local::collab(&a),
        Command::Explain(a) => local::explain(&a),
        Command::Batch(a) => local::batch(&a),
        Command::Paths(a) => local::paths(&a),
        Command::CheckK(a) => local::check_k(&a),
        Command::Serve(a) => remote::serve(&a),
        Command::Session(a) => remote::session(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
