use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use feshflow_cli::{apply, load_config, run, summary, Overrides};

#[derive(Parser)]
#[command(name = "feshflow", version, about = "Smooth Feshbach-Schur maps and renormalization flow checks")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the selected suites and write reports.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Restrict to these suites (repeatable).
        #[arg(long = "suite")]
        suites: Vec<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Describe what a suite checks.
    Explain { suite: String },
}

fn main() -> ExitCode {
    match Cli::parse().cmd {
        Cmd::Explain { suite } => match feshflow::suites::explain(&suite) {
            Ok(text) => {
                println!("{text}");
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("error: {e}; known suites: {}", feshflow::suites::SUITES.join(", "));
                ExitCode::from(2)
            }
        },
        Cmd::Run { config, suites, seed, out } => {
            let cfg = match load_config(&config).and_then(|c| apply(c, &Overrides { suites, seed, out })) {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("error: {e:#}");
                    return ExitCode::from(2);
                }
            };
            match run(&cfg) {
                Ok((manifest, _)) => {
                    print!("{}", summary(&manifest));
                    if manifest.passed {
                        ExitCode::SUCCESS
                    } else {
                        ExitCode::FAILURE
                    }
                }
                Err(e) => {
                    eprintln!("error: {e:#}");
                    ExitCode::from(3)
                }
            }
        }
    }
}
