use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use relgp::config::{PipelineConfig, Setting};
use relgp::pipeline::{self, Outcome, Stage};
use relgp::CliError;

#[derive(Parser)]
#[command(name = "relgp", version, about = "Posterior exceedance-probability studies with Gaussian-process surrogates")]
struct Cli {
    /// Pipeline configuration (JSON).
    #[arg(long, global = true, default_value = "relgp.json")]
    config: PathBuf,
    /// Master seed; overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Range-parameter treatment for simulate-pf and report; overrides the config.
    #[arg(long, global = true, value_enum)]
    setting: Option<Setting>,
    #[command(subcommand)]
    verb: Verb,
}

#[derive(Subcommand, Clone, Copy)]
enum Verb {
    /// Fit posteriors of the input-variable parameters.
    FitInputs,
    /// Fit the regularized REML surrogate.
    FitGp,
    /// Cross-validate the REML penalty.
    TuneLambda,
    /// Choose the range-parameter prior and sample its posterior.
    TunePrior,
    /// Simulate the exceedance-probability posterior.
    SimulatePf,
    /// Write plot-ready report files.
    Report,
    /// Generate the synthetic fixture dataset.
    Synth,
    /// Run every stage except synth.
    All,
}

fn stage_of(v: Verb) -> Option<Stage> {
    Some(match v {
        Verb::FitInputs => Stage::FitInputs,
        Verb::FitGp => Stage::FitGp,
        Verb::TuneLambda => Stage::TuneLambda,
        Verb::TunePrior => Stage::TunePrior,
        Verb::SimulatePf => Stage::SimulatePf,
        Verb::Report => Stage::Report,
        Verb::Synth => Stage::Synth,
        Verb::All => return None,
    })
}

fn announce(stage: Stage, outcome: Outcome) {
    match outcome {
        Outcome::Ran => println!("{}: done", stage.name()),
        Outcome::UpToDate => println!("{}: up to date", stage.name()),
    }
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let mut cfg = PipelineConfig::load(&cli.config)?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(s) = cli.setting {
        cfg.setting = s;
    }
    if let Some(j) = cli.jobs {
        if j == 0 {
            return Err(CliError::Config("--jobs must be >= 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(j)
            .build_global()
            .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    }
    match stage_of(cli.verb) {
        Some(stage) => announce(stage, pipeline::run_stage(&cfg, stage)?),
        None => {
            for (stage, outcome) in pipeline::run_all(&cfg)? {
                announce(stage, outcome);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
