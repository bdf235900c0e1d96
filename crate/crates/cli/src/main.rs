mod artifact;
mod config;
mod plot;
mod report;
mod stages;

use std::io::IsTerminal;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use emi_remote::{Client, MockRules, MockServer};
use tracing_subscriber::EnvFilter;

use artifact::{Stage, Workspace};
use config::RunConfig;
use stages::Ctx;

/// Measures evidence-based versus intuition-based language in parliamentary
/// speeches and relates it to democracy indicators.
#[derive(Parser, Debug)]
#[command(name = "emi", version)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Global {
    /// Run configuration (TOML).
    #[arg(long, short = 'c', global = true, default_value = "emi.toml")]
    config: PathBuf,
    /// Output directory; overrides `output` in the config.
    #[arg(long, short = 'o', global = true)]
    out: Option<PathBuf>,
    /// Worker threads and concurrent requests per endpoint.
    #[arg(long, short = 'j', global = true, default_value_t = 4)]
    jobs: usize,
    /// Keep only the first N segments (smoke runs).
    #[arg(long, global = true)]
    limit: Option<usize>,
    /// Reuse upstream artifacts even if settings or files changed.
    #[arg(long, global = true)]
    force: bool,
    /// Override a config key, e.g. `--set fuse.z_scope=global`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Point every endpoint at this base URL.
    #[arg(long, global = true)]
    endpoint_url: Option<String>,
    /// More logging (-v info is the default, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    /// Only log errors.
    #[arg(short, long, global = true)]
    quiet: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Read raw speeches, drop chair turns and duplicates.
    Ingest,
    /// Apply lexical filters and split speeches into segments.
    Preprocess,
    /// Drop procedural material and rate segments with the LLM ensemble.
    Rate,
    /// Embed segments and score them against the anchor sentences.
    Embed,
    /// Standardize and combine the two component scores.
    Fuse,
    /// Aggregate to country-years and join the indicator tables.
    Panel,
    /// Fit the configured models and write the report.
    Analyze,
    /// Compare scores with human annotations.
    Validate {
        /// Annotation CSV; overrides `inputs.annotations`.
        #[arg(long)]
        annotations: Option<PathBuf>,
    },
    /// Draw trend and scatter charts from the panel.
    Plot,
    /// Run every stage in order.
    RunAll {
        /// Start at this stage, reusing earlier artifacts.
        #[arg(long, value_enum)]
        from: Option<Stage>,
        /// Serve the mock backend in-process from these rules and use it for every endpoint.
        #[arg(long, value_name = "RULES")]
        with_mock: Option<PathBuf>,
        /// Annotation CSV; overrides `inputs.annotations`.
        #[arg(long)]
        annotations: Option<PathBuf>,
    },
    /// Serve the deterministic mock backend until interrupted.
    Mockserve {
        #[arg(long)]
        rules: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8089")]
        addr: SocketAddr,
    },
}

fn init_logging(g: &Global) {
    let level = if g.quiet {
        "error"
    } else {
        match g.verbose {
            0 | 1 => "info",
            2 => "debug",
            _ => "trace",
        }
    };
    let filter = EnvFilter::try_from_env("EMI_LOG").unwrap_or_else(|_| EnvFilter::new(level));
    tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_target(false)
        .with_ansi(std::io::stderr().is_terminal())
        .with_writer(std::io::stderr)
        .init();
}

fn load_config(g: &Global) -> Result<RunConfig> {
    let mut cfg = RunConfig::load_with(&g.config, &g.set)?;
    if let Some(out) = &g.out {
        cfg.output = out.clone();
    }
    if let Some(url) = &g.endpoint_url {
        cfg.endpoints.all_mut().for_each(|e| e.base_url = url.clone());
    }
    Ok(cfg)
}

async fn run(cli: Cli) -> Result<()> {
    let g = &cli.global;
    if let Command::Mockserve { rules, addr } = &cli.command {
        let server = MockServer::start(MockRules::load(rules)?, *addr).await?;
        tracing::info!("mock backend listening on {}", server.base_url());
        tokio::signal::ctrl_c().await.context("waiting for interrupt")?;
        server.shutdown().await;
        return Ok(());
    }

    let mut cfg = load_config(g)?;
    let mut mock = None;
    if let Command::RunAll { with_mock: Some(rules), .. } = &cli.command {
        let server = MockServer::start_local(MockRules::load(rules)?).await?;
        let url = server.base_url();
        tracing::info!("mock backend listening on {url}");
        cfg.endpoints.all_mut().for_each(|e| e.base_url = url.clone());
        mock = Some(server);
    }
    cfg.validate()?;

    let annotations = match &cli.command {
        Command::Validate { annotations } | Command::RunAll { annotations, .. } => annotations.clone(),
        _ => None,
    };
    let ctx = Ctx {
        ws: Workspace::new(cfg.output.clone()),
        cfg,
        jobs: g.jobs,
        limit: g.limit,
        force: g.force,
        client: Client::new(std::env::var("EMI_API_KEY").ok()),
        annotations,
    };

    let single = match &cli.command {
        Command::Ingest => Some(Stage::Ingest),
        Command::Preprocess => Some(Stage::Preprocess),
        Command::Rate => Some(Stage::Rate),
        Command::Embed => Some(Stage::Embed),
        Command::Fuse => Some(Stage::Fuse),
        Command::Panel => Some(Stage::Panel),
        Command::Analyze => Some(Stage::Analyze),
        Command::Validate { .. } => Some(Stage::Validate),
        Command::Plot => Some(Stage::Plot),
        Command::RunAll { .. } | Command::Mockserve { .. } => None,
    };
    let result = match single {
        Some(stage) => stages::run_stage(&ctx, stage).await.map(|_| ()),
        None => {
            let from = match &cli.command {
                Command::RunAll { from, .. } => from.unwrap_or(Stage::Ingest),
                _ => Stage::Ingest,
            };
            run_all(&ctx, from).await
        }
    };
    if let Some(server) = mock {
        server.shutdown().await;
    }
    result
}

async fn run_all(ctx: &Ctx, from: Stage) -> Result<()> {
    for stage in Stage::PIPELINE.into_iter().filter(|s| *s >= from) {
        if stage == Stage::Validate && ctx.annotations_path().is_none() {
            tracing::info!("no annotations configured; skipping `validate`");
            continue;
        }
        stages::run_stage(ctx, stage).await?;
    }
    tracing::info!("outputs in {}", ctx.ws.root.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging(&cli.global);
    let jobs = cli.global.jobs.max(1);
    if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global() {
        tracing::warn!("thread pool already initialised: {e}");
    }
    let runtime = match tokio::runtime::Builder::new_multi_thread().worker_threads(jobs.max(2)).enable_all().build() {
        Ok(rt) => rt,
        Err(e) => {
            eprintln!("error: starting runtime: {e}");
            return ExitCode::FAILURE;
        }
    };
    match runtime.block_on(run(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
