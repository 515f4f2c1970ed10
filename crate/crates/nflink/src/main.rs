use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use nflink::config::ScenarioConfig;
use nflink::experiment::{run_experiment, Kind};

#[derive(Parser)]
#[command(name = "nflink", version, about = "Near-field mmWave link-configuration experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write CSVs plus a manifest.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum)]
        kind: Kind,
        /// Overrides `master_seed`.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides `output_dir`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overrides `trials`.
        #[arg(long)]
        trials: Option<usize>,
        /// Worker threads (default: all cores).
        #[arg(long)]
        threads: Option<usize>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let Command::Run { config, kind, seed, out, trials, threads } = Cli::parse().command;
    let result = ScenarioConfig::load(&config).and_then(|mut cfg| {
        if let Some(s) = seed {
            cfg.master_seed = s;
        }
        if let Some(t) = trials {
            cfg.trials = t;
        }
        if let Some(o) = out {
            cfg.output_dir = o;
        }
        let dir = cfg.output_dir.clone();
        run_experiment(&cfg, kind, &dir, threads)
    });
    match result {
        Ok(summary) => {
            for f in &summary.files {
                println!("{}", f.display());
            }
            if summary.failures > 0 {
                eprintln!("{} trial(s) failed; see the manifest", summary.failures);
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
