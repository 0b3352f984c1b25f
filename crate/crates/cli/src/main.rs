use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use swarm_sysid::dataset::{IcMatch, Phase};
use swarm_sysid_cli::{
    cmd_compare, cmd_evaluate, cmd_make_dataset, cmd_simulate, cmd_train, threads_from_env, CliError,
    ExperimentConfig, ModelChoice,
};

#[derive(Parser)]
#[command(name = "swarm-sysid", version, about = "Swarm simulation and system identification experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one trajectory and classify its regime.
    Simulate,
    /// Write the train/test split of one methodology.
    MakeDataset,
    /// Train one model on one methodology.
    Train,
    /// Roll out a trained model and score it against ground truth.
    Evaluate,
    /// Train and evaluate every configured (model, methodology) cell.
    Compare,
}

#[derive(Args)]
struct Common {
    /// Flat `key = value` config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_parser = parse_model)]
    model: Option<ModelChoice>,
    #[arg(long, global = true, value_parser = parse_phase)]
    phase: Option<Phase>,
    #[arg(long, global = true, value_parser = parse_ic)]
    ic: Option<IcMatch>,
    /// Extra `key=value` override, applied after the config file.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

fn parse_model(s: &str) -> Result<ModelChoice, String> {
    s.parse()
}

fn parse_phase(s: &str) -> Result<Phase, String> {
    s.parse().map_err(|e: swarm_sysid::Error| e.to_string())
}

fn parse_ic(s: &str) -> Result<IcMatch, String> {
    s.parse().map_err(|e: swarm_sysid::Error| e.to_string())
}

fn build_config(common: &Common) -> Result<ExperimentConfig, CliError> {
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::from_file(path)?,
        None => ExperimentConfig::default(),
    };
    for kv in &common.overrides {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("--set expects key=value, got {kv:?}")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.out = out.clone();
    }
    if let Some(model) = common.model {
        cfg.model = model;
        cfg.models = vec![model];
    }
    if let Some(phase) = common.phase {
        cfg.phase = phase;
    }
    if let Some(ic) = common.ic {
        cfg.ic = ic;
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let cfg = build_config(&cli.common)?;
    match cli.command {
        Command::Simulate => {
            let out = cmd_simulate(&cfg)?;
            println!("{} regime={}", out.trajectory.display(), out.regime);
        }
        Command::MakeDataset => {
            let dir = cmd_make_dataset(&cfg)?;
            println!("{}", dir.display());
        }
        Command::Train => {
            let out = cmd_train(&cfg)?;
            let last = out.loss_history.last().copied().unwrap_or(f64::NAN);
            println!("{} final_loss={last:.6e}", out.model_path.display());
        }
        Command::Evaluate => {
            let row = cmd_evaluate(&cfg)?;
            println!("{}", row.to_csv());
        }
        Command::Compare => {
            let rows = cmd_compare(&cfg, threads_from_env()?)?;
            println!("{}", swarm_sysid_cli::SummaryRow::HEADER);
            for r in rows {
                println!("{}", r.to_csv());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
