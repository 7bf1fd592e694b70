//! Run configuration: defaults, overridden by a `key=value` file, overridden
//! by command-line flags.

use std::path::{Path, PathBuf};

use fcnn3d::data::{ClipConfig, Naming, ShortFill};
use fcnn3d::model::Architecture;
use fcnn3d::optim::LrSchedule;

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub root: Option<PathBuf>,
    pub naming: Naming,
    pub protocol: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub arch: String,
    /// `None` accepts whatever a loaded checkpoint says.
    pub n_classes: Option<usize>,
    pub batch_size: usize,
    pub epochs: usize,
    pub phase1_end: Option<usize>,
    pub phase2_end: Option<usize>,
    pub seed: u64,
    pub fill: ShortFill,
    pub bn_momentum: Option<f64>,
    pub tail: usize,
    pub swap_head: bool,
    pub prefetch: usize,
    pub workers: usize,
    pub bench_clips: usize,
    pub repetitions: usize,
    pub warmup: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            root: None,
            naming: Naming::Ntu,
            protocol: None,
            checkpoint: None,
            out_dir: PathBuf::from("runs"),
            arch: "full".into(),
            n_classes: None,
            batch_size: 12,
            epochs: 50,
            phase1_end: None,
            phase2_end: None,
            seed: 0,
            fill: ShortFill::Reflect,
            bn_momentum: None,
            tail: 3,
            swap_head: false,
            prefetch: 2,
            workers: std::thread::available_parallelism().map_or(1, |n| n.get()),
            bench_clips: 10,
            repetitions: 3,
            warmup: 2,
        }
    }
}

pub const DEFAULT_CLASSES: usize = 60;

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, String> {
    value.parse().map_err(|_| format!("{key}: cannot parse {value:?}"))
}

fn positive(key: &str, value: &str) -> Result<usize, String> {
    match parse::<usize>(key, value)? {
        0 => Err(format!("{key} must be positive")),
        n => Ok(n),
    }
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        let value = value.trim();
        match key.trim() {
            "root" => self.root = Some(PathBuf::from(value)),
            "naming" => self.naming = value.parse().map_err(|e: fcnn3d::Error| e.to_string())?,
            "protocol" => self.protocol = Some(PathBuf::from(value)),
            "checkpoint" => self.checkpoint = Some(PathBuf::from(value)),
            "out_dir" => self.out_dir = PathBuf::from(value),
            "arch" => {
                Architecture::preset(value, 2).map_err(|e| e.to_string())?;
                self.arch = value.to_string();
            }
            "n_classes" => match parse::<usize>(key, value)? {
                n if n >= 2 => self.n_classes = Some(n),
                _ => return Err("n_classes must be at least 2".into()),
            },
            "batch_size" => self.batch_size = positive(key, value)?,
            "epochs" => self.epochs = positive(key, value)?,
            "phase1_end" => self.phase1_end = Some(positive(key, value)?),
            "phase2_end" => self.phase2_end = Some(positive(key, value)?),
            "seed" => self.seed = parse(key, value)?,
            "fill" => {
                self.fill = match value {
                    "reflect" => ShortFill::Reflect,
                    "repeat-last" => ShortFill::RepeatLast,
                    _ => return Err(format!("fill must be reflect or repeat-last, got {value:?}")),
                }
            }
            "bn_momentum" => match parse::<f64>(key, value)? {
                m if (0.0..1.0).contains(&m) => self.bn_momentum = Some(m),
                _ => return Err("bn_momentum must be in [0, 1)".into()),
            },
            "tail" => self.tail = positive(key, value)?,
            "swap_head" => self.swap_head = parse(key, value)?,
            "prefetch" => self.prefetch = positive(key, value)?,
            "workers" => self.workers = positive(key, value)?,
            "bench_clips" => self.bench_clips = positive(key, value)?,
            "repetitions" => self.repetitions = parse(key, value)?,
            "warmup" => self.warmup = parse(key, value)?,
            other => return Err(format!("unknown configuration key {other:?}")),
        }
        Ok(())
    }

    /// Applies every `key=value` line of `text`; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str, origin: &str) -> Result<(), String> {
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| format!("{origin}:{}: expected key=value", n + 1))?;
            self.set(k, v).map_err(|e| format!("{origin}:{}: {e}", n + 1))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<(), String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        self.apply_text(&text, &path.display().to_string())
    }

    pub fn architecture(&self) -> Architecture {
        let mut arch = Architecture::preset(&self.arch, self.n_classes.unwrap_or(DEFAULT_CLASSES))
            .expect("validated when set");
        if let Some(m) = self.bn_momentum {
            arch.bn_momentum = m;
        }
        arch
    }

    pub fn schedule(&self) -> Result<LrSchedule, String> {
        let result = match (self.phase1_end, self.phase2_end) {
            (None, None) => LrSchedule::standard_scaled(self.epochs),
            (p1, p2) => {
                let p2 = p2.unwrap_or(self.epochs.saturating_sub(5));
                let p1 = p1.unwrap_or(p2 / 2);
                if !(p1 < p2 && p2 < self.epochs) {
                    return Err(format!(
                        "phase boundaries {p1} < {p2} < {} do not hold",
                        self.epochs
                    ));
                }
                LrSchedule::three_phase(p1, p2, self.epochs)
            }
        };
        result.map_err(|e| e.to_string())
    }

    pub fn clip(arch: &Architecture, fill: ShortFill) -> ClipConfig {
        ClipConfig {
            size: arch.input[0],
            frames: arch.input[2],
            fill,
        }
    }

    pub fn to_text(&self) -> String {
        let opt = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        let mut lines = vec![
            format!("root={}", opt(&self.root)),
            format!("naming={}", self.naming),
            format!("protocol={}", opt(&self.protocol)),
            format!("checkpoint={}", opt(&self.checkpoint)),
            format!("out_dir={}", self.out_dir.display()),
            format!("arch={}", self.arch),
            format!("batch_size={}", self.batch_size),
            format!("epochs={}", self.epochs),
            format!("seed={}", self.seed),
            format!(
                "fill={}",
                if self.fill == ShortFill::Reflect { "reflect" } else { "repeat-last" }
            ),
            format!("tail={}", self.tail),
            format!("swap_head={}", self.swap_head),
            format!("prefetch={}", self.prefetch),
            format!("workers={}", self.workers),
            format!("bench_clips={}", self.bench_clips),
            format!("repetitions={}", self.repetitions),
            format!("warmup={}", self.warmup),
        ];
        if let Some(p) = self.phase1_end {
            lines.push(format!("phase1_end={p}"));
        }
        if let Some(p) = self.phase2_end {
            lines.push(format!("phase2_end={p}"));
        }
        if let Some(n) = self.n_classes {
            lines.push(format!("n_classes={n}"));
        }
        if let Some(m) = self.bn_momentum {
            lines.push(format!("bn_momentum={m}"));
        }
        lines.retain(|l| !l.ends_with('='));
        lines.join("\n") + "\n"
    }
}
