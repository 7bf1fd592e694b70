//! `fcnn3d`: scan depth datasets, train, fine-tune, evaluate, predict and
//! benchmark the 3D fully convolutional action classifier.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::commands::Failure;
use crate::config::RunConfig;

/// Exit codes.
pub const EXIT_OTHER: u8 = 1;
pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_DATA: u8 = 3;
pub const EXIT_CHECKPOINT: u8 = 4;

#[derive(Args, Clone, Default)]
struct Common {
    /// Flat key=value configuration file; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Dataset root directory (or manifest CSV in generic mode).
    #[arg(long, global = true)]
    root: Option<PathBuf>,
    /// Dataset naming scheme: ntu or generic.
    #[arg(long, global = true)]
    naming: Option<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    batch_size: Option<usize>,
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    checkpoint: Option<PathBuf>,
    /// Split protocol file.
    #[arg(long, global = true)]
    protocol: Option<PathBuf>,
    /// Architecture preset: full, compact or tiny.
    #[arg(long, global = true)]
    arch: Option<String>,
    #[arg(long, global = true)]
    n_classes: Option<usize>,
    #[arg(long, global = true)]
    epochs: Option<usize>,
    /// Replace the classifier when a checkpoint's class count differs.
    #[arg(long, global = true)]
    swap_head: bool,
    /// Any configuration key, as KEY=VALUE; may be repeated.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Index a dataset and report counts per class, subject and camera.
    Scan,
    /// Train from scratch.
    Train,
    /// Continue training the last layers of a checkpoint.
    Finetune {
        /// Number of trailing parameterized layers left trainable.
        #[arg(long)]
        tail: Option<usize>,
    },
    /// Evaluate a checkpoint on the test side of the split.
    Eval,
    /// Print the five most likely classes for one clip directory.
    Predict {
        /// Directory of 16-bit PNG frames.
        clip: PathBuf,
    },
    /// Measure per-clip inference latency.
    Bench,
    /// Write a synthetic moving-blob dataset under --root.
    Synth {
        #[arg(long, default_value_t = 4)]
        classes: usize,
        #[arg(long, default_value_t = 14)]
        clips_per_class: usize,
    },
}

impl Common {
    fn resolve(&self) -> Result<RunConfig, Failure> {
        let mut cfg = RunConfig::default();
        if let Some(path) = &self.config {
            cfg.apply_file(path).map_err(Failure::config)?;
        }
        let mut pairs: Vec<(String, String)> = Vec::new();
        let mut push = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                pairs.push((k.to_string(), v));
            }
        };
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string());
        push("root", path(&self.root));
        push("naming", self.naming.clone());
        push("seed", self.seed.map(|v| v.to_string()));
        push("batch_size", self.batch_size.map(|v| v.to_string()));
        push("out_dir", path(&self.out_dir));
        push("checkpoint", path(&self.checkpoint));
        push("protocol", path(&self.protocol));
        push("arch", self.arch.clone());
        push("n_classes", self.n_classes.map(|v| v.to_string()));
        push("epochs", self.epochs.map(|v| v.to_string()));
        push("swap_head", self.swap_head.then(|| "true".to_string()));
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Failure::config(format!("--set {kv:?} is not KEY=VALUE")))?;
            pairs.push((k.to_string(), v.to_string()));
        }
        for (k, v) in pairs {
            cfg.set(&k, &v).map_err(|e| Failure::config(format!("--{k}: {e}")))?;
        }
        Ok(cfg)
    }
}

#[derive(Parser)]
#[command(name = "fcnn3d", version, about = "3D fully convolutional network for depth-video action recognition")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

fn run(inv: Cli) -> Result<(), Failure> {
    let mut cfg = inv.common.resolve()?;
    match inv.command {
        Command::Scan => commands::scan(&cfg),
        Command::Train => commands::train(&cfg),
        Command::Finetune { tail } => {
            if let Some(t) = tail {
                cfg.set("tail", &t.to_string()).map_err(Failure::config)?;
            }
            commands::finetune(&cfg)
        }
        Command::Eval => commands::eval(&cfg),
        Command::Predict { clip } => commands::predict(&cfg, &clip),
        Command::Bench => commands::bench(&cfg),
        Command::Synth { classes, clips_per_class } => commands::synth(&cfg, classes, clips_per_class),
    }
}

fn main() -> ExitCode {
    let inv = match Cli::try_parse() {
        Ok(inv) => inv,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(inv) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
