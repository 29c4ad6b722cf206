use std::path::PathBuf;
use std::process::ExitCode;

use basketproj::config::{preset, ExperimentConfig};
use basketproj::error::{Error, Result};
use basketproj::pipeline::{self, all_passed, format_checks, ValidateOptions};
use clap::{Args, Parser, Subcommand};

/// Basket American put bounds via Markovian projection.
#[derive(Parser)]
#[command(version)]
struct Cli {
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (defaults to the config's `outputs.dir`).
    #[arg(long, global = true, env = "BASKETPROJ_OUT_DIR")]
    out_dir: Option<PathBuf>,
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Source {
    /// Experiment file.
    config: Option<PathBuf>,
    /// Shipped preset instead of a file.
    #[arg(long, conflicts_with = "config")]
    preset: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Full pipeline: surface, solves, bounds, CSVs.
    Run(Source),
    /// Oracle cross-checks and invariant suites.
    Validate {
        /// Replaces the volatility floor of the solver check (fault injection).
        #[arg(long)]
        floor: Option<f64>,
    },
    /// Bounds per tier and fitted bias decay slopes.
    Convergence(Source),
    /// Write the coefficient surface table only.
    Surface(Source),
}

fn load(src: &Source, cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match (&src.config, &src.preset) {
        (Some(path), None) => ExperimentConfig::load(path)?,
        (None, Some(name)) => preset(name)?,
        _ => return Err(Error::Config("give a config file or --preset".into())),
    };
    if let Some(seed) = cli.seed {
        cfg.numerics.seed = seed;
    }
    if let Some(dir) = &cli.out_dir {
        cfg.outputs.dir = dir.clone();
    }
    Ok(cfg)
}

fn execute(cli: &Cli) -> Result<bool> {
    match &cli.command {
        Command::Run(src) => {
            let cfg = load(src, cli)?;
            let report = pipeline::run(&cfg, Some(&cfg.outputs.dir))?;
            print!("{}", report.summary());
            Ok(report.passed())
        }
        Command::Convergence(src) => {
            let cfg = load(src, cli)?;
            let report = pipeline::convergence(&cfg, Some(&cfg.outputs.dir))?;
            print!("{}", report.summary());
            Ok(report.passed())
        }
        Command::Surface(src) => {
            let cfg = load(src, cli)?;
            let build = pipeline::surface(&cfg)?;
            std::fs::create_dir_all(&cfg.outputs.dir)?;
            let path = cfg.outputs.dir.join("surface.txt");
            build.surface.write_table(std::fs::File::create(&path)?)?;
            println!("wrote {} ({} evaluations, {} skipped)", path.display(), build.evaluations.len(), build.skipped);
            Ok(true)
        }
        Command::Validate { floor } => {
            let checks = pipeline::validate(&ValidateOptions { seed: cli.seed.unwrap_or(1), floor: *floor });
            print!("{}", format_checks(&checks));
            Ok(all_passed(&checks))
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    match execute(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() { 2 } else { 1 })
        }
    }
}
