use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use netrack::{Algorithm, ExperimentConfig, Overrides};

#[derive(Parser)]
#[command(name = "netrack", version, about = "Distributed multi-object tracking experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a Monte Carlo experiment and write results.csv and summary.json.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<String>,
        #[arg(long)]
        algorithm: Option<Algorithm>,
        #[arg(long = "consensus-steps")]
        consensus_steps: Option<usize>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let Command::Run { config, trials, seed, out, algorithm, consensus_steps } = cli.command;
    let result = ExperimentConfig::load(&config).and_then(|mut cfg| {
        cfg.apply(&Overrides { trials, seed, out, algorithm, consensus_steps })?;
        netrack::run_and_write(&cfg)
    });
    match result {
        Ok((res, csv, json)) => {
            println!("{} rows -> {}", res.rows.len(), csv.display());
            println!("summary -> {}", json.display());
            for (name, m) in &res.summary.metrics {
                println!("mean {name}: {:.6}", m.mean);
            }
            if let Some(p) = res.summary.prmse {
                println!("PRMSE: {p:.6}");
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
