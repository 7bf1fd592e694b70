//! One function per subcommand.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use fcnn3d::data::{
    load_clip, scan_dataset, single_video, ClipSet, DiskSource, ScanReport, StartPolicy, SyntheticSource,
    SyntheticSpec, VideoSource,
};
use fcnn3d::error::CheckpointError;
use fcnn3d::eval::{
    apply_split, benchmark_latency, confused_pairs, confusion_csv, evaluate, per_class_csv, summary_csv,
    top_recognized, SplitProtocol,
};
use fcnn3d::model::{self, Checkpoint, Model};
use fcnn3d::optim::{fit, TrainConfig};
use fcnn3d::{Error, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::RunConfig;
use crate::{EXIT_CHECKPOINT, EXIT_CONFIG, EXIT_DATA, EXIT_OTHER};

#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn config(message: impl Into<String>) -> Self {
        Failure {
            code: EXIT_CONFIG,
            message: message.into(),
        }
    }

    fn checkpoint(e: Error) -> Self {
        Failure {
            code: EXIT_CHECKPOINT,
            message: e.to_string(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Checkpoint(_) => EXIT_CHECKPOINT,
            Error::Data(_) | Error::Io { .. } => EXIT_DATA,
            _ => EXIT_OTHER,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

fn write_output(cfg: &RunConfig, name: &str, contents: &str) -> Result<(), Failure> {
    std::fs::create_dir_all(&cfg.out_dir).map_err(|e| Error::Io {
        path: cfg.out_dir.clone(),
        source: e,
    })?;
    let path = cfg.out_dir.join(name);
    std::fs::write(&path, contents).map_err(|e| Failure {
        code: EXIT_OTHER,
        message: format!("{}: {e}", path.display()),
    })
}

fn scan_root(cfg: &RunConfig) -> Result<ScanReport, Failure> {
    let root = cfg.root.as_ref().ok_or_else(|| Failure::config("no dataset root (set root or --root)"))?;
    Ok(scan_dataset(root, cfg.naming)?)
}

fn histogram(report: &ScanReport) -> BTreeMap<&'static str, usize> {
    let mut h = BTreeMap::new();
    for s in &report.samples {
        let bin = match s.frames {
            0..=25 => "a) under 26",
            26..=59 => "b) 26-59",
            60..=119 => "c) 60-119",
            120..=199 => "d) 120-199",
            200..=300 => "e) 200-300",
            _ => "f) over 300",
        };
        *h.entry(bin).or_insert(0) += 1;
    }
    h
}

pub fn scan(cfg: &RunConfig) -> Result<(), Failure> {
    let report = scan_root(cfg)?;
    let line = |m: BTreeMap<u32, usize>| m.iter().map(|(k, v)| format!("{k}:{v}")).collect::<Vec<_>>().join(" ");
    println!("samples: {}", report.samples.len());
    println!("rejects: {}", report.rejects.len());
    let mut classes: BTreeMap<u32, usize> = BTreeMap::new();
    for s in &report.samples {
        *classes.entry(s.label as u32).or_insert(0) += 1;
    }
    println!("per class: {}", line(classes));
    println!("per subject: {}", line(report.count_by(|s| s.meta.subject)));
    println!("per camera: {}", line(report.count_by(|s| s.meta.camera)));
    if let (Some(min), Some(max)) = (
        report.samples.iter().map(|s| s.frames).min(),
        report.samples.iter().map(|s| s.frames).max(),
    ) {
        println!("frames: {min} to {max}");
    }
    for (bin, n) in histogram(&report) {
        println!("  {}: {n}", &bin[3..]);
    }
    for s in &report.samples {
        let m = &s.meta;
        let f = |v: Option<u32>| v.map_or("-".to_string(), |v| v.to_string());
        println!(
            "{}\tlabel={} frames={} camera={} subject={} action={}",
            s.id,
            s.label,
            s.frames,
            f(m.camera),
            f(m.subject),
            f(m.action)
        );
    }
    write_output(cfg, "rejects.txt", &report.rejects_text())?;
    if !report.rejects.is_empty() {
        eprintln!(
            "warning: {} unparsable entries listed in {}",
            report.rejects.len(),
            cfg.out_dir.join("rejects.txt").display()
        );
    }
    Ok(())
}

/// Training and test sets of the configured dataset and split.
fn dataset(cfg: &RunConfig, n_classes: usize) -> Result<(ClipSet, ClipSet), Failure> {
    let report = scan_root(cfg)?;
    if report.samples.is_empty() {
        return Err(Failure {
            code: EXIT_DATA,
            message: "dataset root holds no videos".into(),
        });
    }
    if let Some(s) = report.samples.iter().find(|s| s.label >= n_classes) {
        return Err(Failure {
            code: EXIT_DATA,
            message: format!("{} has label {} but the model has {n_classes} classes", s.id, s.label),
        });
    }
    let split = match &cfg.protocol {
        Some(p) => {
            let protocol = SplitProtocol::load(p).map_err(|e| Failure::config(e.to_string()))?;
            Some(apply_split(&report.samples, &protocol)?)
        }
        None => None,
    };
    let source: Arc<dyn VideoSource> = Arc::new(DiskSource::new(report.samples));
    Ok(match split {
        Some(split) => {
            eprintln!("split: {} training, {} test clips", split.train.len(), split.test.len());
            (
                ClipSet {
                    source: source.clone(),
                    indices: split.train,
                },
                ClipSet {
                    source,
                    indices: split.test,
                },
            )
        }
        None => {
            eprintln!("no protocol given: every clip is used for both training and testing");
            (ClipSet::all(source.clone()), ClipSet::all(source))
        }
    })
}

fn load_checkpoint(cfg: &RunConfig) -> Result<Checkpoint, Failure> {
    let path = cfg
        .checkpoint
        .as_ref()
        .ok_or_else(|| Failure::config("no checkpoint (set checkpoint or --checkpoint)"))?;
    model::load(path).map_err(Failure::checkpoint)
}

fn check_classes(cfg: &RunConfig, model: &Model<f32>) -> Result<(), Failure> {
    match cfg.n_classes {
        Some(n) if n != model.n_classes() => Err(Failure::checkpoint(
            CheckpointError::ClassMismatch {
                found: model.n_classes(),
                expected: n,
            }
            .into(),
        )),
        _ => Ok(()),
    }
}

fn run_fit(cfg: &RunConfig, model: &mut Model<f32>, train: &ClipSet, val: &ClipSet) -> Result<(), Failure> {
    let mut tc = TrainConfig::new(cfg.epochs, cfg.schedule().map_err(Failure::config)?, cfg.seed);
    tc.batch_size = cfg.batch_size;
    tc.clip = RunConfig::clip(model.architecture(), cfg.fill);
    tc.prefetch = cfg.prefetch;
    tc.out_dir = Some(cfg.out_dir.clone());
    write_output(cfg, "config.txt", &cfg.to_text())?;
    eprintln!(
        "training {} of {} parameters on {} clips, validating on {}",
        model.trainable_layers().join(", "),
        model.parameter_count(),
        train.len(),
        val.len()
    );
    let history = fit(model, train, val, &tc, |r| {
        eprintln!(
            "epoch {:>3}  phase {}  lr {:.2e}  loss {:.4}  acc {:.4}  val_loss {:.4}  val_acc {:.4}",
            r.epoch, r.phase, r.lr, r.train_loss, r.train_acc, r.val_loss, r.val_acc
        );
    })?;
    if let Some(last) = history.epochs.last() {
        println!(
            "final epoch {}: train_acc {:.4} val_acc {:.4}; outputs in {}",
            last.epoch,
            last.train_acc,
            last.val_acc,
            cfg.out_dir.display()
        );
    }
    Ok(())
}

pub fn train(cfg: &RunConfig) -> Result<(), Failure> {
    let arch = cfg.architecture();
    let (train, val) = dataset(cfg, arch.n_classes)?;
    let mut model = Model::build(arch, cfg.seed).map_err(|e| Failure::config(e.to_string()))?;
    run_fit(cfg, &mut model, &train, &val)
}

pub fn finetune(cfg: &RunConfig) -> Result<(), Failure> {
    let mut model = load_checkpoint(cfg)?.model;
    let n = cfg.n_classes.unwrap_or(model.n_classes());
    if n != model.n_classes() {
        if !cfg.swap_head {
            let mut f = Failure::checkpoint(
                CheckpointError::ClassMismatch {
                    found: model.n_classes(),
                    expected: n,
                }
                .into(),
            );
            f.message.push_str(" (pass --swap-head to replace the classifier)");
            return Err(f);
        }
        eprintln!("replacing the {}-class head with a {n}-class one", model.n_classes());
        model.replace_head(n, cfg.seed)?;
    }
    model
        .freeze_for_finetune(cfg.tail)
        .map_err(|e| Failure::config(e.to_string()))?;
    let (train, val) = dataset(cfg, n)?;
    run_fit(cfg, &mut model, &train, &val)
}

pub fn eval(cfg: &RunConfig) -> Result<(), Failure> {
    let model = load_checkpoint(cfg)?.model;
    check_classes(cfg, &model)?;
    let (_, test) = dataset(cfg, model.n_classes())?;
    let clip = RunConfig::clip(model.architecture(), cfg.fill);
    let report = evaluate(&model, &test, &clip, cfg.batch_size, cfg.workers)?;
    write_output(cfg, "confusion.csv", &confusion_csv(&report.confusion))?;
    write_output(cfg, "per_class.csv", &per_class_csv(&report.confusion))?;
    write_output(cfg, "summary.csv", &summary_csv(&report))?;
    println!(
        "accuracy {:.2}% ({} of {} clips)",
        100.0 * report.accuracy,
        report.confusion.trace(),
        report.confusion.total()
    );
    println!("most accurate classes:");
    for (c, acc) in top_recognized(&report.confusion, 10) {
        println!("  {c} ({:.2}%)", 100.0 * acc);
    }
    println!("confused pairs:");
    for pair in confused_pairs(&report.confusion, 10) {
        println!("  {pair}");
    }
    Ok(())
}

pub fn predict(cfg: &RunConfig, clip_dir: &Path) -> Result<(), Failure> {
    let model = load_checkpoint(cfg)?.model;
    check_classes(cfg, &model)?;
    let clip = RunConfig::clip(model.architecture(), cfg.fill);
    let sample = single_video(clip_dir)?;
    let source = DiskSource::new(vec![sample]);
    let data = load_clip(&source, 0, &clip, StartPolicy::Midpoint, &mut ChaCha8Rng::seed_from_u64(0))?;
    let input = Tensor::from_vec(&[1, clip.size, clip.size, clip.frames, 1], data)?;
    let probs = model.infer(&input)?;
    let mut ranked: Vec<(usize, f32)> = probs.data().iter().copied().enumerate().collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    println!("rank,class,probability");
    for (rank, (class, p)) in ranked.iter().take(5).enumerate() {
        println!("{},{class},{p:.6}", rank + 1);
    }
    Ok(())
}

pub fn bench(cfg: &RunConfig) -> Result<(), Failure> {
    let model = match &cfg.checkpoint {
        Some(_) => load_checkpoint(cfg)?.model,
        None => {
            eprintln!("no checkpoint given: timing a freshly initialized network");
            Model::build(cfg.architecture(), cfg.seed).map_err(|e| Failure::config(e.to_string()))?
        }
    };
    let (_, test) = dataset(cfg, usize::MAX)?;
    let set = ClipSet {
        indices: test.indices.iter().copied().take(cfg.bench_clips).collect(),
        source: test.source,
    };
    let clip = RunConfig::clip(model.architecture(), cfg.fill);
    let report = benchmark_latency(&model, &set, &clip, cfg.repetitions, cfg.warmup)?;
    write_output(cfg, "bench.csv", &report.to_csv())?;
    println!(
        "{} clips x {} repetitions on {}",
        report.clips, report.repetitions, report.hardware
    );
    for (scope, s) in [("forward", &report.forward), ("end-to-end", &report.end_to_end)] {
        println!(
            "{scope:>10}: mean {:.4} s  p50 {:.4} s  p95 {:.4} s per clip",
            s.mean, s.p50, s.p95
        );
    }
    Ok(())
}

pub fn synth(cfg: &RunConfig, classes: usize, clips_per_class: usize) -> Result<(), Failure> {
    let root = cfg.root.as_ref().ok_or_else(|| Failure::config("synth needs --root"))?;
    let source = SyntheticSource::new(SyntheticSpec::new(classes, clips_per_class, cfg.seed))
        .map_err(|e| Failure::config(e.to_string()))?;
    let dirs = source.write_tree(root)?;
    println!("wrote {} videos under {}", dirs.len(), root.display());
    Ok(())
}
