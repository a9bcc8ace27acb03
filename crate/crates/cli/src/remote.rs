//! `serve` and the `session` client subcommands.

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Subcommand};
use futures::StreamExt;
use serde::Serialize;

use attribo_client::Client;
use attribo_core::bo::Decision;
use attribo_core::session::CreateSession;
use attribo_service::{AppState, ServiceConfig};

use crate::ServeArgs;

#[derive(Args, Debug)]
pub struct SessionArgs {
    #[arg(long, env = "ATTRIBO_URL", default_value = "http://127.0.0.1:8080")]
    pub url: String,
    #[command(subcommand)]
    pub command: SessionCommand,
}

#[derive(Subcommand, Debug)]
pub enum SessionCommand {
    /// Creates a session from a JSON request with `config` and `target`.
    Create {
        #[arg(long)]
        request: PathBuf,
        #[arg(long)]
        idempotency_key: Option<String>,
    },
    Get {
        id: String,
    },
    Propose {
        id: String,
    },
    /// Accepts the pending proposal, or overrides it with `--theta`.
    Decide {
        id: String,
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
        theta: Option<Vec<f64>>,
    },
    Observe {
        id: String,
        #[arg(long, allow_negative_numbers = true)]
        psi: f64,
    },
    /// Prints events as JSON lines, from `--from` on, until interrupted.
    Events {
        id: String,
        #[arg(long, default_value_t = 0)]
        from: u64,
    },
}

fn runtime() -> Result<tokio::runtime::Runtime> {
    Ok(tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()?)
}

pub fn serve(args: &ServeArgs) -> Result<ExitCode> {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .init();
    let state = AppState::open(ServiceConfig {
        data_dir: args.data_dir.clone(),
        k_cap: args.k_cap,
    })?;
    runtime()?.block_on(async {
        let listener = tokio::net::TcpListener::bind(args.addr).await?;
        eprintln!("listening on http://{}", listener.local_addr()?);
        attribo_service::serve(listener, state).await
    })?;
    Ok(ExitCode::SUCCESS)
}

fn print<T: Serialize>(v: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

pub fn session(args: SessionArgs) -> Result<ExitCode> {
    let client = Client::new(args.url);
    runtime()?.block_on(async move {
        match args.command {
            SessionCommand::Create {
                request,
                idempotency_key,
            } => {
                let text = std::fs::read_to_string(&request)
                    .with_context(|| format!("reading {}", request.display()))?;
                let req: CreateSession =
                    serde_json::from_str(&text).context("parsing session request")?;
                print(&client.create(&req, idempotency_key.as_deref()).await?)?;
            }
            SessionCommand::Get { id } => print(&client.get(&id).await?)?,
            SessionCommand::Propose { id } => print(&client.propose(&id).await?)?,
            SessionCommand::Decide { id, theta } => {
                let d = match theta {
                    Some(theta) => Decision::Override { theta },
                    None => Decision::Accept,
                };
                print(&client.decide(&id, &d).await?)?;
            }
            SessionCommand::Observe { id, psi } => print(&client.observe(&id, psi).await?)?,
            SessionCommand::Events { id, from } => {
                let mut events = Box::pin(client.events(&id, from).await?);
                let mut out = std::io::stdout();
                while let Some(e) = events.next().await {
                    serde_json::to_writer(&mut out, &e?)?;
                    out.write_all(b"\n")?;
                    out.flush()?;
                }
            }
        }
        Ok(ExitCode::SUCCESS)
    })
}
