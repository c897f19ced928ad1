use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::{error, info};
use vtflow::config::KvConfig;
use vtflow::harness::{self, RunConfig};
use vtflow::Error;

#[derive(Parser)]
#[command(name = "vtflow", version, about = "Visuotactile flow-policy experiments on a simulated match-striking task")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Key-value config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config seed (and for `train`, the seed list).
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "runs")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Record successful scripted-expert demonstrations.
    DemoGen(Common),
    /// Train one policy per seed on recorded demonstrations.
    Train(Common),
    /// Evaluate checkpoints over seeded rollouts.
    Eval(Common),
    /// Run and record one rollout.
    Rollout(Common),
    /// Dump attention weights along a recorded episode.
    Attn(Common),
}

fn load_config(c: &Common, is_train: bool) -> vtflow::Result<RunConfig> {
    let mut kv = match &c.config {
        Some(p) => KvConfig::load(p)?,
        None => KvConfig::default(),
    };
    if let Some(s) = c.seed {
        kv.set("seed", s);
        if is_train {
            kv.set("seeds", s);
        }
    }
    RunConfig::from_kv(kv)
}

fn run(cli: Cli) -> vtflow::Result<()> {
    let (common, is_train) = match &cli.command {
        Command::Train(c) => (c, true),
        Command::DemoGen(c) | Command::Eval(c) | Command::Rollout(c) | Command::Attn(c) => (c, false),
    };
    let cfg = load_config(common, is_train)?;
    let out: &Path = &common.out;
    match cli.command {
        Command::DemoGen(_) => {
            let s = harness::cmd_demo_gen(&cfg, out)?;
            info!("{} demonstrations from {} attempts", s.successes, s.attempts);
        }
        Command::Train(_) => {
            for s in harness::cmd_train(&cfg, out)? {
                info!(
                    "seed {}: final loss {:.5} -> {}",
                    s.seed,
                    s.final_loss().unwrap_or(f64::NAN),
                    s.checkpoint.display()
                );
            }
        }
        Command::Eval(_) => {
            let r = harness::cmd_eval(&cfg, out)?;
            println!("success {:.3} (std {:.3}) over {} seeds", r.mean_success, r.std_success, r.seeds.len());
            for (label, n) in &r.histogram {
                println!("  {label}: {n}");
            }
        }
        Command::Rollout(_) => {
            let r = harness::cmd_rollout(&cfg, out)?;
            println!("{} after {} steps, max force {:.2} N", r.outcome, r.episode_len, r.max_force);
        }
        Command::Attn(_) => {
            let rows = harness::cmd_attn(&cfg, out)?;
            info!("{} attention rows written", rows.len());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e}");
            match e {
                Error::Config { .. } => ExitCode::from(2),
                Error::Numeric { .. } => ExitCode::from(3),
                _ => ExitCode::FAILURE,
            }
        }
    }
}
