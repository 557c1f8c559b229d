use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use mlangevin_cli::config::Stage;
use mlangevin_cli::{emit, run, CliError, ExperimentConfig, DEFAULT_OUT, OUT_ENV};

/// Certify convergence rates for a Langevin model and cross-check them
/// numerically.
#[derive(Debug, Parser)]
#[command(name = "mlangevin", version)]
struct Args {
    /// Experiment configuration (TOML).
    config: PathBuf,
    /// Comma-separated subset of assumptions,certify,operators,semigroup,sde.
    #[arg(long, value_delimiter = ',')]
    stages: Option<Vec<String>>,
    /// Output directory; falls back to the config, then the MLANGEVIN_OUT
    /// environment variable.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    threads: Option<usize>,
    #[arg(short, long)]
    verbose: bool,
}

fn load(args: &Args) -> Result<ExperimentConfig, CliError> {
    let text = std::fs::read_to_string(&args.config)
        .map_err(|e| CliError::Config(format!("{}: {e}", args.config.display())))?;
    let mut cfg = ExperimentConfig::from_toml(&text)?;
    if let Some(s) = &args.stages {
        cfg.stages = s.iter().filter(|x| !x.trim().is_empty()).map(|x| Stage::parse(x)).collect::<Result<_, _>>()?;
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(t) = args.threads {
        cfg.threads = Some(t);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn main() -> ExitCode {
    let args = Args::parse();
    env_logger::Builder::new()
        .filter_level(if args.verbose { log::LevelFilter::Info } else { log::LevelFilter::Warn })
        .init();
    let cfg = match load(&args) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("{e}");
            return ExitCode::from(e.exit_code());
        }
    };
    let out = args
        .out
        .clone()
        .or_else(|| cfg.out.clone().map(PathBuf::from))
        .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(cfg.threads.unwrap_or(0)).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("thread pool: {e}");
            return ExitCode::from(2);
        }
    };
    let bundle = pool.install(|| run(&cfg));
    if let Err(e) = emit(&bundle, &out) {
        eprintln!("{e}");
        return ExitCode::from(e.exit_code());
    }
    print!("{}", mlangevin_cli::emit::summary_table(&bundle));
    if bundle.verdict.passed {
        println!("verdict: PASS");
        ExitCode::SUCCESS
    } else {
        println!("verdict: FAIL");
        for f in &bundle.verdict.failures {
            println!("  failed: {f}");
        }
        ExitCode::from(1)
    }
}
