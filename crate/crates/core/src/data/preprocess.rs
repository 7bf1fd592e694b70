//! Region-of-interest crop, resize, depth normalization and frame selection.

use rand::Rng;

use crate::data::DepthFrame;
use crate::error::{DataError, Result};

/// Depths at or beyond this many millimetres map to 1.0.
pub const DEPTH_RANGE_MM: f64 = 4500.0;
/// Fractional margin added to each side of the foreground box.
pub const ROI_MARGIN: f64 = 0.05;

/// Half-open pixel box: rows `top..bottom`, columns `left..right`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RoiBox {
    pub top: usize,
    pub left: usize,
    pub bottom: usize,
    pub right: usize,
}

impl RoiBox {
    pub fn height(&self) -> usize {
        self.bottom - self.top
    }

    pub fn width(&self) -> usize {
        self.right - self.left
    }
}

/// Grows `[lo, hi)` to length `len`, centred, then shifts it inside `[0, limit)`.
/// Clamps to the whole axis when `len` exceeds `limit`.
fn fit_span(lo: usize, hi: usize, len: usize, limit: usize) -> (usize, usize) {
    if len >= limit {
        return (0, limit);
    }
    let extra = len - (hi - lo);
    let start = lo as isize - (extra / 2) as isize;
    let start = start.clamp(0, (limit - len) as isize) as usize;
    (start, start + len)
}

/// One box for the whole clip: the union of nonzero pixels over every frame,
/// widened by the margin on each side, squared, and kept inside the frame.
pub fn compute_roi(frames: &[DepthFrame]) -> Result<RoiBox, DataError> {
    let first = frames.first().ok_or(DataError::EmptyForeground)?;
    let (w, h) = (first.width, first.height);
    let (mut top, mut left, mut bottom, mut right) = (usize::MAX, usize::MAX, 0, 0);
    for frame in frames {
        if (frame.width, frame.height) != (w, h) {
            return Err(DataError::Malformed(format!(
                "clip mixes {w}x{h} and {}x{} frames",
                frame.width, frame.height
            )));
        }
        for (r, row) in frame.depth.chunks_exact(w).enumerate() {
            if let Some(c0) = row.iter().position(|&d| d != 0) {
                let c1 = row.iter().rposition(|&d| d != 0).expect("row has a nonzero");
                top = top.min(r);
                bottom = bottom.max(r + 1);
                left = left.min(c0);
                right = right.max(c1 + 1);
            }
        }
    }
    if top == usize::MAX {
        return Err(DataError::EmptyForeground);
    }
    let pad_y = (ROI_MARGIN * (bottom - top) as f64).ceil() as usize;
    let pad_x = (ROI_MARGIN * (right - left) as f64).ceil() as usize;
    let (top, bottom) = (top.saturating_sub(pad_y), (bottom + pad_y).min(h));
    let (left, right) = (left.saturating_sub(pad_x), (right + pad_x).min(w));
    let side = (bottom - top).max(right - left);
    let (top, bottom) = fit_span(top, bottom, side, h);
    let (left, right) = fit_span(left, right, side, w);
    Ok(RoiBox {
        top,
        left,
        bottom,
        right,
    })
}

/// Nearest-neighbour resample of the box to `size × size`.
pub fn crop_resize(frame: &DepthFrame, roi: &RoiBox, size: usize) -> Vec<u16> {
    let (h, w) = (roi.height(), roi.width());
    let rows: Vec<usize> = (0..size).map(|i| roi.top + ((2 * i + 1) * h) / (2 * size)).collect();
    let cols: Vec<usize> = (0..size).map(|j| roi.left + ((2 * j + 1) * w) / (2 * size)).collect();
    let mut out = Vec::with_capacity(size * size);
    for &r in &rows {
        for &c in &cols {
            out.push(frame.at(r, c));
        }
    }
    out
}

pub fn normalize_depth(depth_mm: u16) -> f32 {
    (f64::from(depth_mm).min(DEPTH_RANGE_MM) / DEPTH_RANGE_MM) as f32
}

pub fn normalize(depth: &[u16]) -> Vec<f32> {
    depth.iter().map(|&d| normalize_depth(d)).collect()
}

/// How a video shorter than the clip is padded.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ShortFill {
    /// Play backwards from the second-to-last frame, bouncing at each end.
    #[default]
    Reflect,
    RepeatLast,
}

/// How the first frame is chosen when the video is long enough to offer a choice.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StartPolicy {
    Random,
    /// Middle of the valid range, for reproducible evaluation.
    Midpoint,
}

/// Source frame indices for a clip of `n` frames from a video of `len` frames.
///
/// * `len < n`: every frame once, then padded according to `fill`.
/// * `n <= len < 2n`: `n` consecutive frames.
/// * `len >= 2n`: every second frame, `n` of them.
pub fn select_frames<R: Rng + ?Sized>(
    len: usize,
    n: usize,
    start: StartPolicy,
    fill: ShortFill,
    rng: &mut R,
) -> Vec<usize> {
    assert!(len >= 1 && n >= 1, "select_frames needs a non-empty video and clip");
    if len < n {
        let period = 2 * (len - 1);
        return (0..n)
            .map(|k| match fill {
                ShortFill::RepeatLast => k.min(len - 1),
                ShortFill::Reflect if period == 0 => 0,
                ShortFill::Reflect => {
                    let p = k % period;
                    if p < len {
                        p
                    } else {
                        period - p
                    }
                }
            })
            .collect();
    }
    let (span, step) = if len < 2 * n { (n, 1) } else { (2 * n - 1, 2) };
    let last_start = len - span;
    let s = match start {
        StartPolicy::Random => rng.random_range(0..=last_start),
        StartPolicy::Midpoint => last_start / 2,
    };
    (0..n).map(|k| s + k * step).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn frame_with(w: usize, h: usize, pts: &[(usize, usize, u16)]) -> DepthFrame {
        let mut f = DepthFrame::blank(w, h);
        for &(r, c, v) in pts {
            f.set(r, c, v);
        }
        f
    }

    #[test]
    fn point_support_gives_small_centred_square() {
        let roi = compute_roi(&[frame_with(512, 424, &[(100, 100, 1500)])]).unwrap();
        assert_eq!(roi.height(), roi.width());
        assert!(roi.top <= 100 && roi.bottom > 100 && roi.left <= 100 && roi.right > 100);
        assert_eq!(roi, RoiBox { top: 99, left: 99, bottom: 102, right: 102 });
    }

    #[test]
    fn full_foreground_is_the_frame() {
        let f = DepthFrame::new(40, 30, vec![900; 1200]).unwrap();
        assert_eq!(compute_roi(&[f]).unwrap(), RoiBox { top: 0, left: 0, bottom: 30, right: 40 });
    }

    #[test]
    fn empty_clip_is_an_error() {
        assert!(matches!(compute_roi(&[DepthFrame::blank(8, 8)]), Err(DataError::EmptyForeground)));
        assert!(matches!(compute_roi(&[]), Err(DataError::EmptyForeground)));
    }

    #[test]
    fn square_box_is_shifted_inside_near_edges() {
        let roi = compute_roi(&[frame_with(100, 50, &[(0, 0, 5), (1, 30, 5)])]).unwrap();
        assert_eq!(roi.height(), roi.width());
        assert_eq!(roi.top, 0);
        assert!(roi.bottom <= 50 && roi.right <= 100);
    }

    #[test]
    fn identity_and_constant_resize() {
        let f = DepthFrame::new(64, 64, (0..4096).map(|v| v as u16).collect()).unwrap();
        let roi = RoiBox { top: 0, left: 0, bottom: 64, right: 64 };
        assert_eq!(crop_resize(&f, &roi, 64), f.depth);

        let f = DepthFrame::new(200, 150, vec![2000; 30000]).unwrap();
        let roi = RoiBox { top: 10, left: 20, bottom: 138, right: 148 };
        assert!(crop_resize(&f, &roi, 64).iter().all(|&v| v == 2000));
    }

    #[test]
    fn normalization_anchors() {
        assert_eq!(normalize_depth(0), 0.0);
        assert_eq!(normalize_depth(4500), 1.0);
        assert_eq!(normalize_depth(2250), 0.5);
        assert_eq!(normalize_depth(60000), 1.0);
    }

    #[test]
    fn selection_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let r = select_frames(30, 30, StartPolicy::Random, ShortFill::Reflect, &mut rng);
        assert_eq!(r, (0..30).collect::<Vec<_>>());
        let r = select_frames(26, 30, StartPolicy::Random, ShortFill::Reflect, &mut rng);
        let mut expected: Vec<usize> = (0..26).collect();
        expected.extend([24, 23, 22, 21]);
        assert_eq!(r, expected);
        let r = select_frames(26, 30, StartPolicy::Random, ShortFill::RepeatLast, &mut rng);
        assert_eq!(&r[25..], &[25; 5]);
        assert_eq!(select_frames(1, 30, StartPolicy::Random, ShortFill::Reflect, &mut rng), vec![0; 30]);
        let r = select_frames(80, 30, StartPolicy::Midpoint, ShortFill::Reflect, &mut rng);
        assert_eq!(r[0], 10);
        assert!(r.windows(2).all(|w| w[1] - w[0] == 2));
    }

    #[test]
    fn short_reflection_bounces() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let r = select_frames(3, 10, StartPolicy::Random, ShortFill::Reflect, &mut rng);
        assert_eq!(r, vec![0, 1, 2, 1, 0, 1, 2, 1, 0, 1]);
    }
}
