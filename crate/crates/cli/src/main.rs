use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fedzz::{cmd_partition_inspect, cmd_run, cmd_sweep, CliError, SweepParam};

#[derive(Parser)]
#[command(name = "fedzz", version, about = "Federated learning poisoning-defense simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write epochs.csv, summary.json and drops.csv.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the config's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Train clients on this many threads; results do not change.
        #[arg(long, default_value_t = 1)]
        parallel_clients: usize,
    },
    /// One run per value of a parameter plus a comparison.csv.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// alpha, beta, attack_pct or m.
        #[arg(long)]
        param: String,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', num_args = 0..)]
        values: Vec<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 1)]
        parallel_clients: usize,
    },
    /// Print per-client, per-class training sample counts as CSV.
    PartitionInspect {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run {
            config,
            out,
            seed,
            parallel_clients,
        } => {
            let s = cmd_run(&config, &out, seed, parallel_clients)?;
            print!("final_gta={:.4}", s.final_gta);
            if let Some(dr) = s.detection_rate {
                print!(" detection_rate={dr:.4}");
            }
            println!(" afpr={:.4} drops={}", s.afpr, s.total_drops);
        }
        Command::Sweep {
            config,
            out,
            param,
            values,
            seed,
            parallel_clients,
        } => {
            let param: SweepParam = param.parse()?;
            let values: Vec<String> = values.into_iter().filter(|v| !v.trim().is_empty()).collect();
            let summaries = cmd_sweep(&config, param, &values, &out, seed, parallel_clients)?;
            for (v, s) in values.iter().zip(&summaries) {
                println!("{}={v} final_gta={:.4}", param.name(), s.final_gta);
            }
        }
        Command::PartitionInspect { config, seed } => {
            cmd_partition_inspect(&config, seed, &mut std::io::stdout().lock())?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
