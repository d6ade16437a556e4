//! `afpnkit`: command-line front end for the afpnkit library.
//!
//! Exit codes: 0 success, 1 a check ran and failed, 2 bad input or config.

mod cmd;
mod config;
mod dataset;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "afpnkit", version, about = "AF-FPN neck, CIoU, augmentation search and detection metrics toolkit")]
struct Cli {
    /// Run configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output file, or output directory for `aug` and `search`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a neck weight container for the configured neck.
    InitWeights {
        #[arg(long, value_enum, default_value_t = InitKind::Random)]
        init: InitKind,
    },
    /// Run the neck on seeded inputs and verify shapes, attention range and
    /// agreement with an independent recomposition.
    NeckCheck {
        #[arg(long)]
        weights: PathBuf,
        /// Square input resolution; defaults to the config `resize`.
        #[arg(long)]
        input_size: Option<usize>,
    },
    /// Compare the analytic CIoU gradient with central differences.
    GradCheck {
        #[arg(long, default_value_t = 1000)]
        trials: usize,
        /// Scale the analytic width gradient by 1.05 before comparing.
        #[arg(long, hide = true)]
        inject_bug: bool,
    },
    /// Apply an augmentation policy to every image of an annotation set.
    Aug {
        #[arg(long)]
        annotations: PathBuf,
        /// Policy file; defaults to the config `policy`.
        #[arg(long)]
        policy: Option<PathBuf>,
    },
    /// Search for an augmentation policy.
    Search {
        #[arg(long, default_value_t = 300)]
        budget: usize,
        #[arg(long, value_enum, default_value_t = AlgoArg::Ppo)]
        algo: AlgoArg,
        #[arg(long, value_enum, default_value_t = RewardArg::Synthetic)]
        reward: RewardArg,
        /// Continue from a checkpoint written by an earlier run.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Score detections against annotations.
    Eval {
        #[arg(long)]
        detections: PathBuf,
        #[arg(long)]
        annotations: PathBuf,
    },
    /// Time one component on synthetic inputs.
    Bench {
        #[arg(long, value_enum)]
        component: Component,
        /// Neck weights; seeded random weights when absent.
        #[arg(long)]
        weights: Option<PathBuf>,
        #[arg(long)]
        policy: Option<PathBuf>,
        #[arg(long)]
        input_size: Option<usize>,
        #[arg(long, default_value_t = 1)]
        warmup: usize,
        #[arg(long, default_value_t = 5)]
        iters: usize,
    },
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum InitKind {
    Zeros,
    Random,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum AlgoArg {
    Ppo,
    Random,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum RewardArg {
    Synthetic,
    Proxy,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum Component {
    Neck,
    Aam,
    Fem,
    Nms,
    Policy,
}

/// Outcome of a command that ran to completion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Status {
    Pass,
    Fail,
}

fn cap_threads() -> anyhow::Result<()> {
    if let Ok(v) = std::env::var("AFPNKIT_THREADS") {
        let n: usize = v
            .trim()
            .parse()
            .map_err(|_| anyhow::anyhow!("AFPNKIT_THREADS must be a positive integer, got `{v}`"))?;
        anyhow::ensure!(n >= 1, "AFPNKIT_THREADS must be >= 1");
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<Status> {
    cap_threads()?;
    let cfg = config::RunConfig::load(cli.config.as_deref())?;
    let seed = cli.seed.unwrap_or(cfg.seed);
    let out = cli.out.as_deref();
    match cli.command {
        Command::InitWeights { init } => cmd::neck::init_weights(&cfg, seed, init == InitKind::Zeros, out),
        Command::NeckCheck { weights, input_size } => {
            cmd::neck::neck_check(&cfg, seed, &weights, input_size.unwrap_or(cfg.resize), out)
        }
        Command::GradCheck { trials, inject_bug } => cmd::grad::grad_check(trials, seed, inject_bug, out),
        Command::Aug { annotations, policy } => {
            let policy = policy.or_else(|| cfg.policy.clone()).ok_or_else(|| {
                anyhow::anyhow!("aug needs a policy: pass --policy or set `policy` in the config")
            })?;
            cmd::aug::aug(&annotations, &policy, seed, out)
        }
        Command::Search { budget, algo, reward, resume } => {
            let algo = match algo {
                AlgoArg::Ppo => afpnkit_core::search::Algo::Ppo,
                AlgoArg::Random => afpnkit_core::search::Algo::Random,
            };
            cmd::search::search(&cfg, seed, budget, algo, reward == RewardArg::Proxy, resume.as_deref(), out)
        }
        Command::Eval { detections, annotations } => cmd::eval::eval(&cfg, &detections, &annotations, out),
        Command::Bench { component, weights, policy, input_size, warmup, iters } => {
            let args = cmd::bench::BenchArgs {
                component,
                weights,
                policy: policy.or_else(|| cfg.policy.clone()),
                input_size: input_size.unwrap_or(cfg.resize),
                warmup,
                iters,
                seed,
            };
            cmd::bench::bench(&cfg, &args, out)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(Status::Pass) => ExitCode::SUCCESS,
        Ok(Status::Fail) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
