//! `evanon` command-line driver.
//!
//! Settings resolve in this order, later wins: built-in defaults, the
//! `EVANON_SEED` environment variable, the `--config` file, `--set`
//! overrides in order, then the dedicated flags. The fully resolved
//! configuration is written next to each report.
//!
//! Exit codes: 0 success, 1 usage or invalid argument, 2 data error
//! (io, parse, image, stream, shape or checkpoint), 3 numerical failure.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use commands::Failure;
use config::{RunConfig, SEED_ENV};

#[derive(Parser, Debug)]
#[command(
    name = "evanon",
    version,
    about = "Event-stream anonymization experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug)]
struct Common {
    /// `key = value` configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one configuration key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    corpus: Option<PathBuf>,
    #[arg(long, global = true)]
    checkpoints: Option<PathBuf>,
    #[arg(long, global = true)]
    reports: Option<PathBuf>,
    #[arg(long, global = true)]
    input: Option<PathBuf>,
    #[arg(long, global = true)]
    output: Option<PathBuf>,
    #[arg(long, global = true)]
    epochs: Option<usize>,
    #[arg(long, global = true)]
    lr: Option<f64>,
    #[arg(long, global = true)]
    ratio: Option<f64>,
    /// scramble, descramble or discard.
    #[arg(long, global = true)]
    mode: Option<String>,
    /// toy or paper network widths.
    #[arg(long, global = true)]
    model: Option<String>,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Generate the synthetic multi-camera corpus.
    GenDataset,
    /// Simulate events for every corpus sequence.
    Simulate,
    /// Train and freeze the reconstruction attacker.
    TrainAttacker,
    /// Jointly train the anonymizer and the ReId network.
    TrainJoint,
    /// Scramble, descramble or discard events of one event file.
    EncryptBaseline,
    /// Image quality, ReId and retrieval-attack evaluation.
    Eval,
    /// Train an inverter and run the inversion retrieval attack.
    InvertAttack,
    /// Finite-difference gradient checks over several seeds.
    Gradcheck,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::GenDataset => "gen-dataset",
            Command::Simulate => "simulate",
            Command::TrainAttacker => "train-attacker",
            Command::TrainJoint => "train-joint",
            Command::EncryptBaseline => "encrypt-baseline",
            Command::Eval => "eval",
            Command::InvertAttack => "invert-attack",
            Command::Gradcheck => "gradcheck",
        }
    }
}

fn resolve(common: &Common) -> Result<RunConfig, String> {
    let mut cfg = RunConfig::default();
    if let Ok(seed) = std::env::var(SEED_ENV) {
        cfg.set("seed", &seed)
            .map_err(|e| format!("{SEED_ENV}: {e}"))?;
    }
    if let Some(path) = &common.config {
        cfg.apply_file(path)?;
    }
    for s in &common.set {
        cfg.apply_assignment(s)?;
    }
    let flags: [(&str, Option<String>); 11] = [
        ("seed", common.seed.map(|v| v.to_string())),
        (
            "corpus",
            common.corpus.as_ref().map(|p| p.display().to_string()),
        ),
        (
            "checkpoints",
            common.checkpoints.as_ref().map(|p| p.display().to_string()),
        ),
        (
            "reports",
            common.reports.as_ref().map(|p| p.display().to_string()),
        ),
        (
            "input",
            common.input.as_ref().map(|p| p.display().to_string()),
        ),
        (
            "output",
            common.output.as_ref().map(|p| p.display().to_string()),
        ),
        ("epochs", common.epochs.map(|v| v.to_string())),
        ("lr", common.lr.map(|v| v.to_string())),
        ("ratio", common.ratio.map(|v| v.to_string())),
        ("mode", common.mode.clone()),
        ("model", common.model.clone()),
    ];
    for (key, value) in flags {
        if let Some(v) = value {
            cfg.set(key, &v)?;
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<(), Failure> {
    let cfg = resolve(&cli.common).map_err(Failure::usage)?;
    let report = match cli.command {
        Command::GenDataset => commands::gen_dataset(&cfg),
        Command::Simulate => commands::simulate(&cfg),
        Command::TrainAttacker => commands::train_attacker_cmd(&cfg),
        Command::TrainJoint => commands::train_joint_cmd(&cfg),
        Command::EncryptBaseline => commands::encrypt_baseline(&cfg),
        Command::Eval => commands::eval(&cfg),
        Command::InvertAttack => commands::invert_attack(&cfg),
        Command::Gradcheck => commands::gradcheck(&cfg),
    }?;
    commands::finish(&cfg, cli.command.name(), &report)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            if !e.use_stderr() {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let text = e.render().to_string();
            eprintln!("evanon: {}", text.lines().next().unwrap_or("invalid usage"));
            return ExitCode::from(1);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!(
                "evanon {}: {}",
                cli.command.name(),
                f.message.replace('\n', " ")
            );
            ExitCode::from(f.code)
        }
    }
}
