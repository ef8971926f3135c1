use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ergolab_cli::config::{resolve_seed, ExperimentConfig, Scenario};
use ergolab_cli::output::Manifest;
use ergolab_cli::{run_to_dir, CliError};

#[derive(Parser)]
#[command(
    name = "lab",
    version,
    about = "Equilibrium-measure experiments for rational maps"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Coding tree, successive gaps, contraction census and cylinder variance.
    Tree(RunArgs),
    /// A batch of samples of the equilibrium measure.
    Sample(RunArgs),
    /// Sampled preimage measures against a deep reference.
    Equidistribution(RunArgs),
    /// Autocovariances along coded orbits.
    Covariance(RunArgs),
    /// Asymptotic variance by the spectral sum and the Birkhoff slope.
    Sigma(RunArgs),
    /// Central limit theorem check.
    Clt(RunArgs),
    /// Almost sure central limit theorem probe.
    Asclt(RunArgs),
    /// Cocycle reconstruction for an observable with vanishing variance.
    Cocycle(RunArgs),
    /// Transfer operator norm decay.
    Transfer(RunArgs),
    /// Lyapunov exponent.
    Lyapunov(RunArgs),
    /// Lattès diagnostics.
    Lattes(RunArgs),
    /// Every scenario on one configuration.
    Full(RunArgs),
    /// List the catalog of named maps.
    Catalog {
        /// Print JSON instead of a table.
        #[arg(long)]
        json: bool,
    },
    /// Re-run the configuration recorded in a manifest.
    Replay {
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        workers: Option<usize>,
    },
}

#[derive(Args)]
struct RunArgs {
    /// TOML or JSON experiment configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Catalog map name, overriding the config.
    #[arg(long)]
    map: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    workers: Option<usize>,
    /// Also emit plot.gp.
    #[arg(long)]
    plot: bool,
}

fn default_workers() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

fn run(scenario: Scenario, args: RunArgs) -> Result<(), CliError> {
    let mut cfg = match &args.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(name) = args.map {
        cfg.map = ergolab_cli::config::MapConfig::Catalog(name);
    }
    cfg.params.plot |= args.plot;
    let env = std::env::var("LAB_DEFAULT_SEED").ok();
    let seed = resolve_seed(args.seed, cfg.seed, env.as_deref())?;
    let workers = args.workers.or(cfg.workers).unwrap_or_else(default_workers);
    let out = args
        .out
        .or(cfg.out.clone())
        .unwrap_or_else(|| PathBuf::from(format!("lab-{}", scenario.name())));
    let resolved = cfg.resolve(scenario, seed)?;
    let manifest = run_to_dir(&resolved, workers, &out)?;
    println!(
        "{} -> {} ({} files, config {})",
        scenario.name(),
        out.display(),
        manifest.files.len() + 1,
        &manifest.config_hash[..12]
    );
    Ok(())
}

fn catalog(json: bool) {
    let entries = ergolab::catalog_list();
    if json {
        println!(
            "{}",
            serde_json::to_string_pretty(&entries).expect("catalog serializes")
        );
        return;
    }
    for e in entries {
        println!(
            "{:<12} d={} d_t={:<3} P^{}  {}",
            e.name, e.degree, e.topological_degree, e.dimension, e.formula
        );
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Tree(a) => run(Scenario::Tree, a),
        Command::Sample(a) => run(Scenario::Sample, a),
        Command::Equidistribution(a) => run(Scenario::Equidistribution, a),
        Command::Covariance(a) => run(Scenario::Covariance, a),
        Command::Sigma(a) => run(Scenario::Sigma, a),
        Command::Clt(a) => run(Scenario::Clt, a),
        Command::Asclt(a) => run(Scenario::Asclt, a),
        Command::Cocycle(a) => run(Scenario::Cocycle, a),
        Command::Transfer(a) => run(Scenario::Transfer, a),
        Command::Lyapunov(a) => run(Scenario::Lyapunov, a),
        Command::Lattes(a) => run(Scenario::Lattes, a),
        Command::Full(a) => run(Scenario::Full, a),
        Command::Catalog { json } => {
            catalog(json);
            Ok(())
        }
        Command::Replay {
            manifest,
            out,
            workers,
        } => Manifest::load(&manifest).and_then(|m| {
            let w = workers.unwrap_or(m.workers);
            run_to_dir(&m.config, w, &out)
                .map(|_| println!("replayed {} -> {}", manifest.display(), out.display()))
        }),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("lab: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
