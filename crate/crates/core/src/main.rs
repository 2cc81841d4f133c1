use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use tracing::Level;

use prepi::pipeline::{Outcome, Overrides, Pipeline, RunConfig};
use prepi::Result;

#[derive(Parser)]
#[command(name = "prepi", version, about = "Predict privacy issues for features before they ship")]
struct Cli {
    /// Run configuration (TOML).
    #[arg(long, global = true, default_value = "prepi.toml")]
    config: PathBuf,
    /// Run directory; defaults to <run_root>/<app>-<config hash>.
    #[arg(long, global = true)]
    run_dir: Option<PathBuf>,
    /// Global seed override.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Substitute stub backends for every real one.
    #[arg(long, global = true)]
    stub: bool,
    /// More logging (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load features and reviews and split them at the cutoff.
    Ingest,
    /// Train the three privacy classifiers and label existing-period reviews.
    Classify,
    /// Pair each existing feature with its most similar privacy reviews.
    Map,
    /// Fine-tune a model.
    Train {
        #[arg(value_enum)]
        stage: TrainStage,
    },
    /// Produce issue ledgers for the candidate instances.
    Run {
        #[arg(value_enum)]
        method: RunMethod,
    },
    /// Compute overlap series and write the tables.
    Evaluate,
    /// Write the Markdown summary.
    Report,
}

#[derive(Clone, Copy, ValueEnum)]
enum TrainStage {
    Simulator,
    IssueModel,
}

#[derive(Clone, Copy, ValueEnum)]
enum RunMethod {
    PrePi,
    Baseline,
    Both,
}

fn dispatch(cli: Cli) -> Result<Vec<Outcome>> {
    let overrides = Overrides {
        seed: cli.seed,
        stub: cli.stub,
    };
    let config = RunConfig::load(&cli.config, &overrides)?;
    let mut p = Pipeline::open(config, cli.run_dir)?;
    let outcomes = match cli.command {
        Command::Ingest => vec![p.ingest()?],
        Command::Classify => vec![p.classify()?],
        Command::Map => vec![p.map()?],
        Command::Train { stage: TrainStage::Simulator } => vec![p.train_simulator()?],
        Command::Train { stage: TrainStage::IssueModel } => vec![p.train_issue_model()?],
        Command::Run { method: RunMethod::PrePi } => vec![p.run_prepi()?],
        Command::Run { method: RunMethod::Baseline } => vec![p.run_baseline()?],
        Command::Run { method: RunMethod::Both } => vec![p.run_prepi()?, p.run_baseline()?],
        Command::Evaluate => vec![p.evaluate()?],
        Command::Report => vec![p.report()?],
    };
    println!("{}", p.run_dir().root().display());
    Ok(outcomes)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => Level::WARN,
        1 => Level::INFO,
        _ => Level::DEBUG,
    };
    tracing_subscriber::fmt().with_max_level(level).with_writer(std::io::stderr).init();
    match dispatch(cli) {
        Ok(outcomes) => {
            for o in outcomes {
                if o == Outcome::Reused {
                    eprintln!("up to date; artifacts reused");
                }
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
