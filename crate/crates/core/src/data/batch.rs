//! Clip assembly, batching and the prefetch queue.

use std::sync::mpsc::{sync_channel, Receiver};
use std::sync::Arc;
use std::thread::JoinHandle;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::preprocess::{
    compute_roi, crop_resize, normalize_depth, select_frames, RoiBox, ShortFill, StartPolicy,
};
use crate::data::source::VideoSource;
use crate::error::{DataError, Error, Result};
use crate::rng::{stream, Stream};
use crate::tensor::Tensor;

/// Clip geometry: `frames` frames of `size × size` pixels.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ClipConfig {
    pub size: usize,
    pub frames: usize,
    pub fill: ShortFill,
}

impl Default for ClipConfig {
    fn default() -> Self {
        ClipConfig {
            size: 64,
            frames: 30,
            fill: ShortFill::Reflect,
        }
    }
}

/// A subset of a source's samples, e.g. one side of a split.
#[derive(Clone)]
pub struct ClipSet {
    pub source: Arc<dyn VideoSource>,
    pub indices: Vec<usize>,
}

impl ClipSet {
    pub fn all(source: Arc<dyn VideoSource>) -> Self {
        let indices = (0..source.samples().len()).collect();
        ClipSet { source, indices }
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn label(&self, position: usize) -> usize {
        self.source.samples()[self.indices[position]].label
    }

    pub fn labels(&self) -> Vec<usize> {
        (0..self.len()).map(|i| self.label(i)).collect()
    }
}

/// Loads one sample as a `[size, size, frames]` normalized clip. A clip with
/// no foreground at all is resized from the full frame.
pub fn load_clip<R: Rng + ?Sized>(
    source: &dyn VideoSource,
    sample: usize,
    cfg: &ClipConfig,
    start: StartPolicy,
    rng: &mut R,
) -> Result<Vec<f32>> {
    let info = &source.samples()[sample];
    if info.frames == 0 {
        return Err(DataError::NoFrames(info.path.clone()).into());
    }
    let picks = select_frames(info.frames, cfg.frames, start, cfg.fill, rng);
    let mut distinct = picks.clone();
    distinct.sort_unstable();
    distinct.dedup();
    let frames = source.load_frames(sample, &distinct)?;
    let roi = match compute_roi(&frames) {
        Ok(roi) => roi,
        Err(DataError::EmptyForeground) => RoiBox {
            top: 0,
            left: 0,
            bottom: frames[0].height,
            right: frames[0].width,
        },
        Err(e) => return Err(e.into()),
    };
    let (size, t_len) = (cfg.size, cfg.frames);
    let mut out = vec![0.0f32; size * size * t_len];
    for (t, pick) in picks.iter().enumerate() {
        let slot = distinct.binary_search(pick).expect("pick is among the loaded frames");
        for (p, &d) in crop_resize(&frames[slot], &roi, size).iter().enumerate() {
            out[p * t_len + t] = normalize_depth(d);
        }
    }
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct Batch {
    /// `[B, size, size, frames, 1]`.
    pub input: Tensor<f32>,
    pub labels: Vec<usize>,
    /// Source sample index of each row.
    pub samples: Vec<usize>,
    /// Set on a final batch holding fewer than the batch size.
    pub short: bool,
}

/// Which samples go into one batch, and the seed for each clip's start draw.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BatchPlan {
    pub samples: Vec<usize>,
    /// `None` selects the midpoint start.
    pub clip_seeds: Option<Vec<u64>>,
    pub short: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Order {
    /// Shuffled order and random starts, drawn from the sampler stream of
    /// `seed` for this epoch.
    Train { seed: u64, epoch: usize },
    /// Set order and midpoint starts.
    Eval,
}

/// Splits `set` into batches for one pass.
pub fn plan_epoch(set: &ClipSet, batch_size: usize, order: Order) -> Result<Vec<BatchPlan>> {
    if batch_size == 0 {
        return Err(Error::invalid("batch size must be positive"));
    }
    let mut samples = set.indices.clone();
    let mut rng = match order {
        Order::Train { seed, epoch } => {
            let mut rng = stream(seed, Stream::Sampler);
            let skip: u64 = epoch as u64;
            let epoch_seed = (0..=skip).fold(0u64, |_, _| rng.random());
            let mut rng = ChaCha8Rng::seed_from_u64(epoch_seed);
            samples.shuffle(&mut rng);
            Some(rng)
        }
        Order::Eval => None,
    };
    Ok(samples
        .chunks(batch_size)
        .map(|chunk| BatchPlan {
            samples: chunk.to_vec(),
            clip_seeds: rng.as_mut().map(|r| chunk.iter().map(|_| r.random()).collect()),
            short: chunk.len() < batch_size,
        })
        .collect())
}

/// Assembles the planned clips into one input tensor.
pub fn make_batch(source: &dyn VideoSource, plan: &BatchPlan, cfg: &ClipConfig) -> Result<Batch> {
    let clip_len = cfg.size * cfg.size * cfg.frames;
    let mut data = Vec::with_capacity(plan.samples.len() * clip_len);
    for (i, &s) in plan.samples.iter().enumerate() {
        let clip = match &plan.clip_seeds {
            Some(seeds) => load_clip(source, s, cfg, StartPolicy::Random, &mut ChaCha8Rng::seed_from_u64(seeds[i]))?,
            None => load_clip(source, s, cfg, StartPolicy::Midpoint, &mut ChaCha8Rng::seed_from_u64(0))?,
        };
        data.extend_from_slice(&clip);
    }
    let labels = plan.samples.iter().map(|&s| source.samples()[s].label).collect();
    Ok(Batch {
        input: Tensor::from_vec(&[plan.samples.len(), cfg.size, cfg.size, cfg.frames, 1], data)?,
        labels,
        samples: plan.samples.clone(),
        short: plan.short,
    })
}

/// Assembles batches on a producer thread, at most `capacity` ahead of the
/// consumer, delivered in plan order.
pub struct Prefetcher {
    rx: Option<Receiver<Result<Batch>>>,
    handle: Option<JoinHandle<()>>,
}

impl Prefetcher {
    pub fn spawn(source: Arc<dyn VideoSource>, plans: Vec<BatchPlan>, cfg: ClipConfig, capacity: usize) -> Self {
        let (tx, rx) = sync_channel(capacity.max(1));
        let handle = std::thread::spawn(move || {
            for plan in &plans {
                let batch = make_batch(source.as_ref(), plan, &cfg);
                let failed = batch.is_err();
                if tx.send(batch).is_err() || failed {
                    break;
                }
            }
        });
        Prefetcher {
            rx: Some(rx),
            handle: Some(handle),
        }
    }
}

impl Iterator for Prefetcher {
    type Item = Result<Batch>;

    fn next(&mut self) -> Option<Self::Item> {
        self.rx.as_ref()?.recv().ok()
    }
}

impl Drop for Prefetcher {
    fn drop(&mut self) {
        drop(self.rx.take());
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}
