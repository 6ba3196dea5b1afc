use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use starflow_cli::{CliError, PipelineConfig, Session, Stage};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum StageArg {
    Simulate,
    Spectrum,
    Strings,
    Close,
    Compare,
    Plots,
    Run,
}

impl From<StageArg> for Stage {
    fn from(s: StageArg) -> Self {
        match s {
            StageArg::Simulate => Stage::Simulate,
            StageArg::Spectrum => Stage::Spectrum,
            StageArg::Strings => Stage::Strings,
            StageArg::Close => Stage::Close,
            StageArg::Compare => Stage::Compare,
            StageArg::Plots => Stage::Plots,
            StageArg::Run => Stage::Run,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Preset {
    Lorenz,
    Hopf,
}

/// Approximate invariant measures of a 3-D flow by periodic orbits.
///
/// Exit status: 0 success, 1 the run completed but d_M + tail did not
/// reach epsilon, 2 configuration error, 3 missing cache or stage failure.
#[derive(Debug, Parser)]
#[command(name = "starflow", version)]
struct Args {
    /// Stage to run (default: run, which executes all of them).
    #[arg(value_enum)]
    stage: Option<StageArg>,
    /// Same as the positional stage.
    #[arg(long = "stage", value_enum, conflicts_with = "stage")]
    stage_flag: Option<StageArg>,
    /// TOML configuration file.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Built-in configuration used when no file is given.
    #[arg(long, value_enum, default_value = "lorenz")]
    preset: Preset,
    /// Output directory (overrides the config).
    #[arg(long, short)]
    out: Option<PathBuf>,
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long)]
    threads: Option<usize>,
    /// Initial state "x,y,z" (overrides the config).
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    seed_state: Option<Vec<f64>>,
    /// Target accuracy for d_M (overrides the config).
    #[arg(long)]
    epsilon: Option<f64>,
    /// No progress output on stderr.
    #[arg(long, short)]
    quiet: bool,
    /// Print the effective configuration as TOML and exit.
    #[arg(long)]
    print_config: bool,
}

fn build(args: &Args) -> Result<PipelineConfig, CliError> {
    let mut cfg = match &args.config {
        Some(path) => PipelineConfig::load(path)?,
        None => match args.preset {
            Preset::Lorenz => PipelineConfig::lorenz(),
            Preset::Hopf => PipelineConfig::hopf(),
        },
    };
    if let Some(out) = &args.out {
        cfg.out = out.clone();
    }
    if let Some(seed) = &args.seed_state {
        cfg.orbit.seed_state = seed.clone();
    }
    if let Some(eps) = args.epsilon {
        cfg.measures.epsilon = eps;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn main() -> ExitCode {
    let args = Args::parse();
    if let Some(n) = args.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: thread pool: {e}");
            return ExitCode::from(2);
        }
    }
    let stage: Stage = args.stage.or(args.stage_flag).unwrap_or(StageArg::Run).into();
    if args.print_config {
        return match build(&args) {
            Ok(cfg) => {
                print!("{}", cfg.to_toml());
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("error [{}]: {e}", e.code());
                ExitCode::from(e.exit_code() as u8)
            }
        };
    }
    let result = build(&args).and_then(|cfg| {
        let mut session = Session::new(cfg)?;
        session.verbose = !args.quiet;
        session.execute(stage)
    });
    match result {
        Ok(Some(outcome)) => {
            println!("{}", outcome.summary);
            if outcome.success {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Ok(None) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error [{}]: {e}", e.code());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
