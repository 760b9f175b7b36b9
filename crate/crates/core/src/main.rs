use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fedms::runner::{cmd_ablate, cmd_axioms, cmd_run, OUT_DIR_ENV};

#[derive(Parser)]
#[command(name = "fedms", version, about = "Federated-learning simulator with class-wise Shapley client selection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment.
    Run {
        config: PathBuf,
        #[arg(long, env = OUT_DIR_ENV)]
        out: PathBuf,
        /// Overrides `experiment.seed`.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run an experiment and its Maverick-free ablation under paired seeds.
    Ablate {
        config: PathBuf,
        #[arg(long, env = OUT_DIR_ENV)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Check the Shapley axioms on random scripted games.
    Axioms {
        #[arg(long, default_value_t = 6)]
        max_players: usize,
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn main() -> ExitCode {
    let outcome = match Cli::parse().command {
        Command::Run { config, out, seed } => cmd_run(&config, &out, seed).map(|m| {
            println!("wrote {}", m.output_dir.display());
            true
        }),
        Command::Ablate { config, out, seed } => cmd_ablate(&config, &out, seed).map(|d| {
            println!(
                "all clients {:.4}  without mavericks {:.4}  delta {:+.4}",
                d.all_clients_accuracy, d.without_mavericks_accuracy, d.delta
            );
            true
        }),
        Command::Axioms {
            max_players,
            trials,
            seed,
        } => cmd_axioms(max_players, trials, seed).map(|report| {
            print!("{report}");
            report.passed()
        }),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
