use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use tristack_cli::config::RunConfig;
use tristack_cli::pipeline;
use tristack_cli::Failure;

#[derive(Parser)]
#[command(name = "tristack", version, about = "Stacked boosting pipeline: synth, train, tune, evaluate, explain, report")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON run configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the run seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Generate the synthetic cohort.
    Synth,
    /// Preprocess, split, oversample and fit the eight models per task.
    Train,
    /// Randomized grid search with stratified cross-validation.
    Tune,
    /// Score every model on the held-out rows with bootstrap intervals.
    Evaluate,
    /// SHAP values, rankings and plots.
    Explain,
    /// Collect tables, rankings and tuning results into report.md.
    Report,
}

fn run(cli: &Cli) -> Result<(), Failure> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Config(format!("`--threads`: {e}")))?;
    }
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    match cli.command {
        Command::Synth => {
            let files = pipeline::cmd_synth(&cfg)?;
            println!("wrote {}", files.features.display());
        }
        Command::Train => pipeline::cmd_train(&cfg)?,
        Command::Tune => {
            let s = pipeline::cmd_tune(&cfg)?;
            println!("best {:?} {:.4}: {}", s.scoring, s.best_score, serde_json::to_string(&s.best_params).unwrap_or_default());
        }
        Command::Evaluate => {
            for t in pipeline::cmd_evaluate(&cfg)? {
                println!("{}", t.to_text());
            }
        }
        Command::Explain => pipeline::cmd_explain(&cfg)?,
        Command::Report => {
            pipeline::cmd_report(&cfg)?;
            println!("wrote {}", cfg.output.dir.join("report.md").display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
