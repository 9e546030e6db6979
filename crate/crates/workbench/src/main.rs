//! `workbench`: generate datasets and traces, train executors, evaluate and report.
//!
//! Exit codes: 0 success, 1 user error (arguments, config, input files), 2 internal error.

use std::path::PathBuf;
use std::process::ExitCode;

use algoexec::config::FlatConfig;
use algoexec::executor::load_checkpoint;
use algoexec::experiment::{Experiment, ExperimentConfig};
use algoexec::regimes::TrainReport;
use algoexec::Error;
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "workbench", version, about = "Neural execution of graph algorithms")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Flat `key = value` experiment configuration.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Output directory (overrides `output` in the config).
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Extra `key=value` settings applied after the config file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate training and evaluation graphs.
    Generate(Common),
    /// Run the classical algorithms on the training graphs.
    Trace(Common),
    /// Train the model of the configured regime.
    Train(Common),
    /// Evaluate the stored checkpoint and write report.csv / report.md.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Evaluate this checkpoint instead of the experiment's own.
        #[arg(long, value_name = "PATH")]
        checkpoint: Option<PathBuf>,
    },
    /// Print the stored markdown report.
    Report(Common),
    /// Run every remaining stage.
    Run(Common),
}

fn load_config(c: &Common) -> Result<ExperimentConfig, Error> {
    let mut flat = match &c.config {
        Some(p) => FlatConfig::load(p)?,
        None => FlatConfig::default(),
    };
    for kv in &c.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::InvalidArgument(format!("--set expects KEY=VALUE, got '{kv}'")))?;
        flat.set(k.trim(), v.trim());
    }
    let mut cfg = ExperimentConfig::from_flat(&flat)?;
    if let Some(out) = &c.out {
        cfg.output = out.clone();
    }
    Ok(cfg)
}

fn summary(label: &str, r: &TrainReport) {
    println!(
        "{label}: {} epochs, best epoch {} with validation loss {:.6e}",
        r.stopped_epoch + 1,
        r.best_epoch + 1,
        r.best_val_loss
    );
}

fn execute(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Generate(c) => {
            let e = Experiment::open(load_config(&c)?)?;
            e.generate()?;
            println!("graphs in {}", e.path("data").display());
        }
        Command::Trace(c) => {
            let e = Experiment::open(load_config(&c)?)?;
            e.build_traces()?;
            println!("traces in {}", e.path("traces").display());
        }
        Command::Train(c) => {
            let e = Experiment::open(load_config(&c)?)?;
            match e.train()? {
                (Some(r), base) => {
                    if let Some(b) = base {
                        summary("base", &b);
                    }
                    summary("target", &r);
                }
                _ => println!("already trained"),
            }
            println!("checkpoint {}", e.path("model.ckpt.json").display());
        }
        Command::Eval { common, checkpoint } => {
            let e = Experiment::open(load_config(&common)?)?;
            let report = match checkpoint {
                Some(p) => e.evaluate_with(&load_checkpoint::<f64>(&p)?.params)?,
                None => e.evaluate()?,
            };
            print!("{}", report.to_markdown());
        }
        Command::Report(c) => {
            let cfg = load_config(&c)?;
            let path = cfg.output.join("report.md");
            let text = std::fs::read_to_string(&path)
                .map_err(|_| Error::InvalidArgument(format!("no report at {}; run eval first", path.display())))?;
            print!("{text}");
        }
        Command::Run(c) => {
            let e = Experiment::open(load_config(&c)?)?;
            let outcome = e.run()?;
            if let Some(b) = &outcome.base_train {
                summary("base", b);
            }
            if let Some(r) = &outcome.train {
                summary("target", r);
            }
            print!("{}", outcome.report.to_markdown());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_user_error() { 1 } else { 2 })
        }
    }
}
