//! Where clip frames come from: directories on disk or a procedural generator.

use std::path::{Path, PathBuf};

use rand::Rng;

use crate::data::index::{list_frames, ntu_name, Sample, SampleMeta};
use crate::data::{read_frame, write_frame, DepthFrame};
use crate::error::{DataError, Error, Result};
use crate::rng::{stream, Stream};

pub trait VideoSource: Send + Sync {
    fn samples(&self) -> &[Sample];

    /// Decodes the requested frames (0-based, in video order) of one sample.
    fn load_frames(&self, sample: usize, frames: &[usize]) -> Result<Vec<DepthFrame>>;
}

/// Videos stored as one directory of 16-bit PNG frames each.
pub struct DiskSource {
    samples: Vec<Sample>,
}

impl DiskSource {
    pub fn new(samples: Vec<Sample>) -> Self {
        DiskSource { samples }
    }
}

impl VideoSource for DiskSource {
    fn samples(&self) -> &[Sample] {
        &self.samples
    }

    fn load_frames(&self, sample: usize, frames: &[usize]) -> Result<Vec<DepthFrame>> {
        let s = &self.samples[sample];
        let files = list_frames(&s.path)?;
        if files.is_empty() {
            return Err(DataError::NoFrames(s.path.clone()).into());
        }
        load_from_files(&files, frames)
    }
}

fn load_from_files(files: &[PathBuf], frames: &[usize]) -> Result<Vec<DepthFrame>> {
    let mut out: Vec<DepthFrame> = Vec::with_capacity(frames.len());
    for &f in frames {
        let path = files
            .get(f)
            .ok_or_else(|| Error::invalid(format!("frame {f} of a {}-frame video", files.len())))?;
        let frame = read_frame(path)?;
        if let Some(first) = out.first() {
            if (frame.width, frame.height) != (first.width, first.height) {
                return Err(DataError::FrameSize {
                    path: path.clone(),
                    found: (frame.width, frame.height),
                    expected: (first.width, first.height),
                }
                .into());
            }
        }
        out.push(frame);
    }
    Ok(out)
}

/// Parameters of the procedural moving-blob dataset. Each class moves a
/// round blob across the frame in its own direction.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSpec {
    /// At most 8: four axis-aligned and four diagonal directions.
    pub n_classes: usize,
    pub clips_per_class: usize,
    pub width: usize,
    pub height: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn new(n_classes: usize, clips_per_class: usize, seed: u64) -> Self {
        SyntheticSpec {
            n_classes,
            clips_per_class,
            width: 96,
            height: 80,
            min_len: 26,
            max_len: 90,
            seed,
        }
    }
}

const D: f64 = std::f64::consts::FRAC_1_SQRT_2;

const DIRECTIONS: [(f64, f64); 8] = [
    (0.0, 1.0),
    (0.0, -1.0),
    (1.0, 0.0),
    (-1.0, 0.0),
    (D, D),
    (-D, -D),
    (D, -D),
    (-D, D),
];

#[derive(Clone, Debug)]
struct BlobClip {
    len: usize,
    radius: f64,
    depth: f64,
    start: (f64, f64),
    velocity: (f64, f64),
}

/// Moving-blob clips generated on demand; nothing is stored but parameters.
pub struct SyntheticSource {
    spec: SyntheticSpec,
    samples: Vec<Sample>,
    clips: Vec<BlobClip>,
}

impl SyntheticSource {
    pub fn new(spec: SyntheticSpec) -> Result<Self> {
        if spec.n_classes < 2 || spec.n_classes > DIRECTIONS.len() {
            return Err(Error::invalid(format!(
                "synthetic data supports 2 to {} classes, got {}",
                DIRECTIONS.len(),
                spec.n_classes
            )));
        }
        if spec.min_len == 0 || spec.min_len > spec.max_len || spec.width < 16 || spec.height < 16 {
            return Err(Error::invalid("synthetic clip lengths or frame size out of range"));
        }
        let mut rng = stream(spec.seed, Stream::Synthetic);
        let mut samples = Vec::new();
        let mut clips = Vec::new();
        let (w, h) = (spec.width as f64, spec.height as f64);
        let span = 0.55 * w.min(h);
        for k in 0..spec.clips_per_class {
            for class in 0..spec.n_classes {
                let len = rng.random_range(spec.min_len..=spec.max_len);
                let (dy, dx) = DIRECTIONS[class];
                let offset = rng.random_range(-0.12..0.12) * h.min(w);
                let centre = (h / 2.0 + offset * dx, w / 2.0 - offset * dy);
                let travel = span * rng.random_range(0.8..1.0);
                let clip = BlobClip {
                    len,
                    radius: rng.random_range(0.07..0.11) * h.min(w),
                    depth: rng.random_range(1800.0..3200.0),
                    start: (centre.0 - dy * travel / 2.0, centre.1 - dx * travel / 2.0),
                    velocity: (dy * travel / len as f64, dx * travel / len as f64),
                };
                let meta = SampleMeta {
                    setup: Some(1 + (k / 12) as u32),
                    camera: Some(1 + ((k / 4) % 3) as u32),
                    subject: Some(1 + (k % 4) as u32),
                    replication: Some(1),
                    action: Some(class as u32 + 1),
                };
                let id = ntu_name(&meta);
                samples.push(Sample {
                    path: PathBuf::from(&id),
                    id,
                    label: class,
                    frames: len,
                    meta,
                });
                clips.push(clip);
            }
        }
        Ok(SyntheticSource { spec, samples, clips })
    }

    pub fn spec(&self) -> &SyntheticSpec {
        &self.spec
    }

    fn render(&self, clip: &BlobClip, t: usize) -> DepthFrame {
        let (w, h) = (self.spec.width, self.spec.height);
        let mut frame = DepthFrame::blank(w, h);
        let cy = clip.start.0 + clip.velocity.0 * t as f64;
        let cx = clip.start.1 + clip.velocity.1 * t as f64;
        let r = clip.radius;
        let rows = ((cy - r).floor().max(0.0) as usize)..((cy + r).ceil().min(h as f64 - 1.0) as usize + 1);
        for row in rows {
            for col in ((cx - r).floor().max(0.0) as usize)..((cx + r).ceil().min(w as f64 - 1.0) as usize + 1) {
                let d2 = ((row as f64 - cy).powi(2) + (col as f64 - cx).powi(2)) / (r * r);
                if d2 <= 1.0 {
                    frame.set(row, col, (clip.depth + 400.0 * d2) as u16);
                }
            }
        }
        frame
    }

    /// Writes every clip as an NTU-named directory of PNG frames under `root`.
    pub fn write_tree(&self, root: &Path) -> Result<Vec<PathBuf>> {
        let mut dirs = Vec::new();
        for (sample, clip) in self.samples.iter().zip(&self.clips) {
            let dir = root.join(&sample.id);
            std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            for t in 0..clip.len {
                write_frame(&dir.join(format!("MDepth-{:08}.png", t + 1)), &self.render(clip, t))?;
            }
            dirs.push(dir);
        }
        Ok(dirs)
    }
}

impl VideoSource for SyntheticSource {
    fn samples(&self) -> &[Sample] {
        &self.samples
    }

    fn load_frames(&self, sample: usize, frames: &[usize]) -> Result<Vec<DepthFrame>> {
        let clip = &self.clips[sample];
        frames
            .iter()
            .map(|&t| {
                if t >= clip.len {
                    Err(Error::invalid(format!("frame {t} of a {}-frame video", clip.len)))
                } else {
                    Ok(self.render(clip, t))
                }
            })
            .collect()
    }
}
