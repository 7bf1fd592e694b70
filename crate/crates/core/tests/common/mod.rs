//! Reference implementations shared by the integration tests. Each is a
//! direct nested loop over the definition, with no reuse of library kernels.
#![allow(dead_code)]

use fcnn3d::layers::{ConvParams, ConvSpec, Padding};
use fcnn3d::Tensor;
use rand::Rng;

pub fn random_tensor<R: Rng>(rng: &mut R, shape: &[usize], scale: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-scale..scale)).collect()).unwrap()
}

/// Output extent and leading pad of one axis.
fn axis(extent: usize, k: usize, s: usize, padding: Padding) -> (usize, usize) {
    match padding {
        Padding::Valid => ((extent - k) / s + 1, 0),
        Padding::Same => {
            let out = extent.div_ceil(s);
            let total = ((out - 1) * s + k).saturating_sub(extent);
            (out, total / 2)
        }
    }
}

/// Cross-correlation over channels-last input `[B, H, W, (T,) C]` with
/// weights `[kh, kw, (kt,) Cin, Cout]`; 2-D is treated as `kt = 1`.
pub fn naive_conv(x: &Tensor<f64>, spec: &ConvSpec, p: &ConvParams<f64>) -> Tensor<f64> {
    let s = x.shape();
    let three = spec.spatial_rank == 3;
    let (b, h, w) = (s[0], s[1], s[2]);
    let (t, cin) = if three { (s[3], s[4]) } else { (1, s[3]) };
    let kt = if three { spec.kernel[2] } else { 1 };
    let st = if three { spec.strides[2] } else { 1 };
    let (oh, ph) = axis(h, spec.kernel[0], spec.strides[0], spec.padding);
    let (ow, pw) = axis(w, spec.kernel[1], spec.strides[1], spec.padding);
    let (ot, pt) = axis(t, kt, st, spec.padding);
    let cout = spec.out_channels;
    let xd = x.data();
    let wd = p.weight.data();
    let mut out = vec![0.0; b * oh * ow * ot * cout];
    for bi in 0..b {
        for i in 0..oh {
            for j in 0..ow {
                for l in 0..ot {
                    for co in 0..cout {
                        let mut acc = p.bias.data()[co];
                        for di in 0..spec.kernel[0] {
                            for dj in 0..spec.kernel[1] {
                                for dl in 0..kt {
                                    let yi = (i * spec.strides[0] + di) as isize - ph as isize;
                                    let yj = (j * spec.strides[1] + dj) as isize - pw as isize;
                                    let yl = (l * st + dl) as isize - pt as isize;
                                    if yi < 0 || yj < 0 || yl < 0 || yi >= h as isize || yj >= w as isize || yl >= t as isize {
                                        continue;
                                    }
                                    let (yi, yj, yl) = (yi as usize, yj as usize, yl as usize);
                                    for ci in 0..cin {
                                        let xv = xd[(((bi * h + yi) * w + yj) * t + yl) * cin + ci];
                                        let wv = wd[(((di * spec.kernel[1] + dj) * kt + dl) * cin + ci) * cout + co];
                                        acc += xv * wv;
                                    }
                                }
                            }
                        }
                        out[(((bi * oh + i) * ow + j) * ot + l) * cout + co] = acc;
                    }
                }
            }
        }
    }
    let shape = if three { vec![b, oh, ow, ot, cout] } else { vec![b, oh, ow, cout] };
    Tensor::from_vec(&shape, out).unwrap()
}

/// Ceil-mode 3-D max pooling; returns the output and, per output, the flat
/// input index of the first maximum in scan order.
pub fn naive_maxpool(x: &Tensor<f64>, window: [usize; 3], strides: [usize; 3]) -> (Tensor<f64>, Vec<usize>) {
    let s = x.shape();
    let (b, h, w, t, c) = (s[0], s[1], s[2], s[3], s[4]);
    // Windows are added until one reaches the last input element.
    let ext = |n: usize, k: usize, st: usize| {
        let mut count = 1;
        while (count - 1) * st + k < n && count * st < n {
            count += 1;
        }
        count
    };
    let (oh, ow, ot) = (ext(h, window[0], strides[0]), ext(w, window[1], strides[1]), ext(t, window[2], strides[2]));
    let mut out = Vec::new();
    let mut arg = Vec::new();
    for bi in 0..b {
        for i in 0..oh {
            for j in 0..ow {
                for l in 0..ot {
                    for ch in 0..c {
                        let mut best = f64::NEG_INFINITY;
                        let mut at = usize::MAX;
                        for yi in i * strides[0]..(i * strides[0] + window[0]).min(h) {
                            for yj in j * strides[1]..(j * strides[1] + window[1]).min(w) {
                                for yl in l * strides[2]..(l * strides[2] + window[2]).min(t) {
                                    let idx = (((bi * h + yi) * w + yj) * t + yl) * c + ch;
                                    if x.data()[idx] > best {
                                        best = x.data()[idx];
                                        at = idx;
                                    }
                                }
                            }
                        }
                        out.push(best);
                        arg.push(at);
                    }
                }
            }
        }
    }
    (Tensor::from_vec(&[b, oh, ow, ot, c], out).unwrap(), arg)
}

/// `|a - n| / max(|a|, |n|, 1e-6)`.
pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

pub const FD_STEP: f64 = 1e-5;

/// Central difference of `f` with respect to element `i` of `x`.
pub fn central_difference(x: &mut Tensor<f64>, i: usize, mut f: impl FnMut(&Tensor<f64>) -> f64) -> f64 {
    let orig = x.data()[i];
    x.data_mut()[i] = orig + FD_STEP;
    let up = f(x);
    x.data_mut()[i] = orig - FD_STEP;
    let down = f(x);
    x.data_mut()[i] = orig;
    (up - down) / (2.0 * FD_STEP)
}

/// `sum(y * r)`, the scalar loss used to probe a layer's backward pass with
/// upstream gradient `r`.
pub fn probe(y: &Tensor<f64>, r: &Tensor<f64>) -> f64 {
    y.data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
}
