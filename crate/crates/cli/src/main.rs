//! `cardiovae`: synthetic data generation, pre-training, fine-tuning,
//! cross-validated evaluation, and attribution from the command line.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use commands::Command;
use config::{read_config_file, CliConfig, Origin, Setting};
use error::{CliError, CliResult};

#[derive(Parser, Debug)]
#[command(name = "cardiovae", version, about = "Tri-stream multimodal VAE over paired images and 1D signals")]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Subcommand, Debug)]
enum Sub {
    /// Generate a synthetic paired dataset.
    SynthData(Flags),
    /// Pre-train encoders and decoders; writes checkpoints, history, and a Fréchet report.
    Pretrain(Flags),
    /// Train the classification head on frozen encoders.
    Finetune(Flags),
    /// Stratified k-fold evaluation of head fine-tuning.
    Evaluate(Flags),
    /// Integrated-gradients attribution for one sample.
    Attribute(Flags),
}

#[derive(Args, Debug, Default)]
struct Flags {
    /// `key = value` config file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_parser = ["tri", "joint-only"])]
    streams: Option<String>,
    #[arg(long, value_parser = ["cxr", "ecg", "joint"])]
    modality: Option<String>,
    #[arg(long, value_parser = ["desk", "paper"])]
    arch: Option<String>,
    /// Parent directory for run directories.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Dataset directory or manifest.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Number of synthetic samples.
    #[arg(long)]
    n: Option<usize>,
    /// Epochs for the command's training stage.
    #[arg(long)]
    epochs: Option<usize>,
    /// Number of cross-validation folds.
    #[arg(long)]
    folds: Option<usize>,
    /// Sample id to attribute.
    #[arg(long)]
    sample: Option<String>,
    /// Integrated-gradients steps.
    #[arg(long)]
    steps: Option<usize>,
    /// Print per-epoch progress to standard error.
    #[arg(long)]
    verbose: bool,
    /// Override any config key, e.g. `--set pretrain.batch_size=32`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl Flags {
    fn settings(&self, cmd: Command) -> CliResult<Vec<Setting>> {
        let mut out = match &self.config {
            Some(p) => read_config_file(p)?,
            None => Vec::new(),
        };
        let mut push = |key: &str, value: String, flag: &str| {
            out.push(Setting { key: key.into(), value, origin: Origin::Flag(flag.into()) });
        };
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| CliError::usage(format!("--set expects KEY=VALUE, got {kv:?}")))?;
            push(k.trim(), v.trim().to_string(), "--set");
        }
        let path = |p: &PathBuf| p.display().to_string();
        let epochs_key = match cmd {
            Command::Pretrain => "pretrain.epochs",
            _ => "finetune.epochs",
        };
        let flags: [(&str, &str, Option<String>); 12] = [
            ("seed", "--seed", self.seed.map(|v| v.to_string())),
            ("streams", "--streams", self.streams.clone()),
            ("modality", "--modality", self.modality.clone()),
            ("arch", "--arch", self.arch.clone()),
            ("out", "--out", self.out.as_ref().map(path)),
            ("data", "--data", self.data.as_ref().map(path)),
            ("checkpoint", "--checkpoint", self.checkpoint.as_ref().map(path)),
            ("synth.n", "--n", self.n.map(|v| v.to_string())),
            (epochs_key, "--epochs", self.epochs.map(|v| v.to_string())),
            ("evaluate.folds", "--folds", self.folds.map(|v| v.to_string())),
            ("attribute.sample", "--sample", self.sample.clone()),
            ("attribute.steps", "--steps", self.steps.map(|v| v.to_string())),
        ];
        for (key, flag, value) in flags {
            if let Some(v) = value {
                push(key, v, flag);
            }
        }
        if self.verbose {
            push("verbose", "true".into(), "--verbose");
        }
        Ok(out)
    }
}

fn execute(cli: Cli) -> CliResult<PathBuf> {
    let (cmd, flags) = match cli.command {
        Sub::SynthData(f) => (Command::SynthData, f),
        Sub::Pretrain(f) => (Command::Pretrain, f),
        Sub::Finetune(f) => (Command::Finetune, f),
        Sub::Evaluate(f) => (Command::Evaluate, f),
        Sub::Attribute(f) => (Command::Attribute, f),
    };
    let cfg = CliConfig::resolve(&flags.settings(cmd)?)?;
    commands::run(cmd, cfg)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.to_string();
            let first = text.lines().next().unwrap_or_default().trim_start_matches("error: ");
            eprintln!("{}", CliError::usage(first).line());
            return ExitCode::from(2);
        }
    };
    match execute(cli) {
        Ok(dir) => {
            println!("run = {}", dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", e.line());
            ExitCode::from(e.category.exit_code() as u8)
        }
    }
}
