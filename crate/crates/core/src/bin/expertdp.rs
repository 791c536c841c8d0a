use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use expertdp::harness::{commands, Pipeline, RunConfig};
use expertdp::Result;

#[derive(Parser)]
#[command(name = "expertdp", version, about = "Expert-level private offline RL experiments")]
struct Cli {
    /// Run config (TOML) or a manifest (JSON) to replay.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config's root seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the config's output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the expert ensemble.
    GenExperts,
    /// Roll the experts out into a demonstration dataset.
    GenData,
    /// Run the stable-prefix release.
    Release,
    /// Train the Q-network.
    Train,
    /// Evaluate the trained greedy policy.
    Evaluate,
    /// Run every (method, eps, seed) cell of the sweep block.
    Sweep,
    /// Run the privacy verification suite.
    VerifyDp,
}

fn run(cli: Cli) -> Result<serde_json::Value> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    let out = cli.out.unwrap_or_else(|| cfg.out.clone());
    let p = Pipeline::new(cfg, out)?;
    let summary = match cli.command {
        Command::GenExperts => {
            let e = commands::gen_experts(&p)?;
            serde_json::json!({ "experts": e.len(), "dir": p.ensemble_dir() })
        }
        Command::GenData => {
            let d = commands::gen_data(&p)?;
            serde_json::json!({ "trajectories": d.len(), "dir": p.dataset_dir() })
        }
        Command::Release => {
            let r = commands::release(&p)?;
            serde_json::json!({
                "stable_records": r.stable.len(),
                "unstable_records": r.unstable.len(),
                "consumed": r.header.consumed,
            })
        }
        Command::Train => {
            let t = commands::train(&p)?;
            serde_json::json!({
                "stats": t.summary.stats,
                "accountant": t.summary.accountant,
                "consumed": t.ledger.consumed(),
            })
        }
        Command::Evaluate => serde_json::to_value(commands::evaluate(&p)?)?,
        Command::Sweep => serde_json::to_value(commands::sweep(&p)?.summary)?,
        Command::VerifyDp => {
            let r = commands::verify_dp(&p)?;
            serde_json::json!({ "passed": r.passed, "checks": r.checks.len() })
        }
    };
    Ok(summary)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(v) => {
            println!("{v}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
