use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use swarmtrack::config::{Mode, ScenarioConfig};
use swarmtrack::runner::{run, sweep, write_sweep, RunError, RunOptions};

#[derive(Parser)]
#[command(name = "swarmtrack", about = "Risk-aware decentralized multi-robot target tracking simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one scenario and write steps.csv and summary.json.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        mode: Option<Mode>,
        #[arg(long)]
        risk_aware: Option<bool>,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
        /// Also write every message to messages.jsonl.
        #[arg(long)]
        log_messages: bool,
    },
    /// Run once per fixed sensor margin and write sweep.csv.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated margins; falls back to the config's sweep_eta.
        #[arg(long, value_delimiter = ',')]
        eta: Vec<f64>,
        /// Comma-separated seeds; defaults to the config seed.
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
    },
}

fn execute(cli: Cli) -> Result<(), RunError> {
    match cli.command {
        Command::Run { config, seed, steps, mode, risk_aware, out_dir, log_messages } => {
            let mut cfg = ScenarioConfig::load(&config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(s) = steps {
                cfg.steps = s;
            }
            if let Some(m) = mode {
                cfg.mode = m;
            }
            if let Some(r) = risk_aware {
                cfg.planner.risk_aware = r;
            }
            let out = run(&cfg, &RunOptions { log_messages, eta_override: None })?;
            out.write_to(&out_dir)?;
            log::info!("wrote {} steps to {}", out.records.len(), out_dir.display());
        }
        Command::Sweep { config, eta, seeds, out_dir } => {
            let cfg = ScenarioConfig::load(&config)?;
            let etas = if eta.is_empty() { cfg.sweep_eta.clone() } else { eta };
            if etas.is_empty() {
                return Err(swarmtrack::config::ConfigError::Invalid("no eta values given".into()).into());
            }
            let seeds = if seeds.is_empty() { vec![cfg.seed] } else { seeds };
            let rows = sweep(&cfg, &etas, &seeds)?;
            std::fs::create_dir_all(&out_dir)?;
            write_sweep(std::fs::File::create(out_dir.join("sweep.csv"))?, &rows)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
