use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use promptmine_cli::io::write_text;
use promptmine_cli::{cmd_evaluate, cmd_run, cmd_simulate, load_config, load_dataset};
use tracing_subscriber::EnvFilter;

/// Task-generic promptable segmentation. Log verbosity follows RUST_LOG.
#[derive(Parser)]
#[command(name = "promptmine", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Segment every image in a directory.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        images: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Images processed concurrently.
        #[arg(long, default_value_t = 1)]
        workers: usize,
        /// Overrides `task_prompt` from the config file.
        #[arg(long)]
        task_prompt: Option<String>,
    },
    /// Score predicted masks against ground truth.
    Evaluate {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        /// Report file; printed to stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Mining against a single-iteration ablation on simulated worlds.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        n: usize,
        /// Report file; only the summary is printed when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn execute(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Run {
            config,
            images,
            out,
            workers,
            task_prompt,
        } => {
            let mut config = load_config(&config)?;
            if let Some(p) = task_prompt {
                config.set("task_prompt", &p)?;
            }
            let manifest = load_dataset(&images, None)?;
            let outcome = cmd_run(&config, &manifest, &out, workers)?;
            println!(
                "{} succeeded, {} failed; outputs in {}",
                outcome.succeeded.len(),
                outcome.failed.len(),
                out.display()
            );
            for (id, e) in &outcome.failed {
                eprintln!("{id}: {e}");
            }
            Ok(outcome.all_succeeded())
        }
        Command::Evaluate { pred, gt, out } => {
            let outcome = cmd_evaluate(&pred, &gt)?;
            let json = outcome.to_json()?;
            match out {
                Some(path) => write_text(&path, &json)?,
                None => print!("{json}"),
            }
            for (id, e) in &outcome.errors {
                eprintln!("{id}: {e}");
            }
            Ok(outcome.ok())
        }
        Command::Simulate { config, n, out } => {
            let config = load_config(&config)?;
            let report = cmd_simulate(&config, n)?;
            if let Some(path) = out {
                write_text(&path, &report.to_json()?)
                    .with_context(|| format!("writing {}", path.display()))?;
            }
            print!("{}", report.summary());
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("warn")))
        .with_writer(std::io::stderr)
        .init();
    match execute(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
