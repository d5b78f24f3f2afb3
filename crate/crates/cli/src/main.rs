use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use arl_cli::commands::{self, Axis, EvalMode};
use arl_cli::config::RunConfig;
use clap::{Parser, Subcommand, ValueEnum};

/// Adversarial reinforcement learning experiments: train, sweep, evaluate and compare.
#[derive(Parser, Debug)]
#[command(name = "arl", version, about)]
struct Cli {
    /// JSON run configuration; built-in defaults (maze, adversarial SAC) when absent
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Overrides the configured seed
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory (run directories for train/sweep, report directory for eval/compare)
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Dotted-path override such as arl.k_a=100; repeatable
    #[arg(long = "override", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Mode {
    Uniform,
    Scenarios,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train one run
    Train {
        /// Continue from a checkpoint written by the same configuration
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Train one run per point of the given axes at a constant episode budget
    Sweep {
        /// name=v1,v2,... with name one of k, k_a, k_p, h_a, seed, adversary_kind
        #[arg(long = "axis", required = true)]
        axes: Vec<Axis>,
    },
    /// Evaluate the protagonist of a checkpoint
    Eval {
        checkpoint: PathBuf,
        #[arg(long, value_enum, default_value = "uniform")]
        mode: Mode,
    },
    /// Uniform-start maze evaluation with heatmap (same as eval --mode uniform)
    Heatmap { checkpoint: PathBuf },
    /// Tabulate summaries of finished runs per method
    Compare {
        #[arg(required = true)]
        runs: Vec<PathBuf>,
    },
}

fn eval_out(cli_out: Option<PathBuf>, checkpoint: &std::path::Path, mode: EvalMode) -> PathBuf {
    cli_out.unwrap_or_else(|| {
        let name = match mode {
            EvalMode::Uniform => "eval-uniform",
            EvalMode::Scenarios => "eval-scenarios",
        };
        checkpoint.parent().unwrap_or(std::path::Path::new(".")).join(name)
    })
}

fn run(cli: Cli) -> Result<()> {
    let out_root = cli.out.clone().unwrap_or_else(|| PathBuf::from("runs"));
    match cli.command {
        Command::Train { resume } => {
            let cfg = match &resume {
                Some(path) if cli.config.is_none() && cli.overrides.is_empty() && cli.seed.is_none() => {
                    arl_cli::checkpoint::Checkpoint::load(path)?.config
                }
                _ => RunConfig::load(cli.config.as_deref(), &cli.overrides, cli.seed)?,
            };
            let o = commands::train(&cfg, &out_root, resume.as_deref())?;
            println!("{}", o.dir.display());
            println!("{}", serde_json::to_string_pretty(&o.summary)?);
        }
        Command::Sweep { axes } => {
            let cfg = RunConfig::load(cli.config.as_deref(), &cli.overrides, cli.seed)?;
            for o in commands::sweep(&cfg, &axes, &out_root)? {
                let headline: Vec<String> = o
                    .summary
                    .evaluations
                    .iter()
                    .map(|(k, v)| format!("{k} success {:.3}", v.success_rate))
                    .collect();
                println!("{}  {}", o.dir.display(), headline.join(", "));
            }
        }
        Command::Eval { checkpoint, mode } => {
            let mode = match mode {
                Mode::Uniform => EvalMode::Uniform,
                Mode::Scenarios => EvalMode::Scenarios,
            };
            eval_cmd(&cli.config, &cli.overrides, cli.seed, cli.out, &checkpoint, mode)?;
        }
        Command::Heatmap { checkpoint } => {
            eval_cmd(&cli.config, &cli.overrides, cli.seed, cli.out, &checkpoint, EvalMode::Uniform)?;
        }
        Command::Compare { runs } => {
            let c = commands::compare(&runs, &cli.out.unwrap_or_else(|| PathBuf::from(".")))?;
            print!("{}", c.to_table());
        }
    }
    Ok(())
}

fn eval_cmd(
    config: &Option<PathBuf>,
    overrides: &[String],
    seed: Option<u64>,
    out: Option<PathBuf>,
    checkpoint: &std::path::Path,
    mode: EvalMode,
) -> Result<()> {
    let env_cfg = match config {
        Some(_) => Some(RunConfig::load(config.as_deref(), overrides, None)?),
        None => None,
    };
    let out = eval_out(out, checkpoint, mode);
    let report = commands::eval(checkpoint, mode, &out, seed, env_cfg.as_ref())?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(arl_cli::exit_code(&e) as u8)
        }
    }
}
