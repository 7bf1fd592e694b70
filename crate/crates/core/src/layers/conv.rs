//! 2-D and 3-D convolution, lowered to tiled im2col + GEMM.
//!
//! Inputs are channels-last: `[B, H, W, T, C]` for 3-D and `[B, H, W, C]` for
//! 2-D. A 2-D convolution runs through the 3-D path with a unit time axis.
//! Weights are laid out `kh × kw × [kt ×] in × out`, which is exactly the
//! `K × out` matrix the GEMM consumes.

use crate::error::{Error, Result};
use crate::tensor::{gemm, Scalar, Tensor};

/// Upper bound on the im2col scratch buffer, in elements.
const TILE_ELEMS: usize = 1 << 19;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    /// Zero padding so that `out = ceil(in / stride)`.
    Same,
    /// No padding: `out = floor((in - k) / stride) + 1`.
    Valid,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    /// `(kh, kw, kt)`; `kt` is 1 for 2-D convolutions.
    pub kernel: [usize; 3],
    pub strides: [usize; 3],
    pub padding: Padding,
    pub in_channels: usize,
    pub out_channels: usize,
    /// 2 or 3.
    pub spatial_rank: usize,
}

impl ConvSpec {
    pub fn conv3d(
        kernel: [usize; 3],
        strides: [usize; 3],
        padding: Padding,
        in_channels: usize,
        out_channels: usize,
    ) -> Self {
        ConvSpec {
            kernel,
            strides,
            padding,
            in_channels,
            out_channels,
            spatial_rank: 3,
        }
    }

    pub fn conv2d(
        kernel: [usize; 2],
        strides: [usize; 2],
        padding: Padding,
        in_channels: usize,
        out_channels: usize,
    ) -> Self {
        ConvSpec {
            kernel: [kernel[0], kernel[1], 1],
            strides: [strides[0], strides[1], 1],
            padding,
            in_channels,
            out_channels,
            spatial_rank: 2,
        }
    }

    pub fn weight_shape(&self) -> Vec<usize> {
        let mut shape = self.kernel[..self.spatial_rank].to_vec();
        shape.push(self.in_channels);
        shape.push(self.out_channels);
        shape
    }

    /// Rows of the lowered weight matrix.
    pub fn patch_len(&self) -> usize {
        self.kernel.iter().product::<usize>() * self.in_channels
    }

    pub fn parameter_count(&self) -> usize {
        self.patch_len() * self.out_channels + self.out_channels
    }

    fn validate(&self) -> Result<()> {
        if self.spatial_rank != 2 && self.spatial_rank != 3 {
            return Err(Error::invalid(format!(
                "spatial rank {} is not 2 or 3",
                self.spatial_rank
            )));
        }
        if self.kernel.contains(&0) || self.strides.contains(&0) {
            return Err(Error::invalid("kernel extents and strides must be positive"));
        }
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::invalid("channel counts must be positive"));
        }
        Ok(())
    }

    /// Output extent and leading pad along one spatial axis.
    pub fn axis_output(&self, axis: usize, extent: usize) -> Result<(usize, usize)> {
        let k = self.kernel[axis];
        let s = self.strides[axis];
        match self.padding {
            Padding::Valid => {
                if k > extent {
                    return Err(Error::shape(format!(
                        "kernel extent {k} exceeds input extent {extent} on axis {axis}"
                    )));
                }
                Ok(((extent - k) / s + 1, 0))
            }
            Padding::Same => {
                let out = extent.div_ceil(s);
                let total = ((out - 1) * s + k).saturating_sub(extent);
                if k > extent + total {
                    return Err(Error::shape(format!(
                        "kernel extent {k} exceeds padded input on axis {axis}"
                    )));
                }
                Ok((out, total / 2))
            }
        }
    }

    /// Shape of the forward output for an input of shape `input`.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let g = Geometry::new(self, input)?;
        let mut shape = vec![g.batch];
        shape.extend_from_slice(&g.output[..self.spatial_rank]);
        shape.push(self.out_channels);
        Ok(shape)
    }
}

#[derive(Clone, Debug)]
pub struct ConvParams<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Scalar> ConvParams<T> {
    pub fn zeros(spec: &ConvSpec) -> Result<Self> {
        Ok(ConvParams {
            weight: Tensor::zeros(&spec.weight_shape())?,
            bias: Tensor::zeros(&[spec.out_channels])?,
        })
    }

    fn check(&self, spec: &ConvSpec) -> Result<()> {
        if self.weight.shape() != spec.weight_shape().as_slice() {
            return Err(Error::shape(format!(
                "weight shape {:?} does not match kernel {:?}",
                self.weight.shape(),
                spec.weight_shape()
            )));
        }
        if self.bias.shape() != [spec.out_channels] {
            return Err(Error::shape(format!(
                "bias shape {:?} does not match {} filters",
                self.bias.shape(),
                spec.out_channels
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct ConvGrads<T> {
    /// `None` when the caller did not ask for the input gradient.
    pub input: Option<Tensor<T>>,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

/// Canonical 3-axis geometry of one convolution call.
#[derive(Clone, Debug)]
struct Geometry {
    batch: usize,
    input: [usize; 3],
    output: [usize; 3],
    pad: [usize; 3],
    kernel: [usize; 3],
    strides: [usize; 3],
    cin: usize,
    cout: usize,
}

impl Geometry {
    fn new(spec: &ConvSpec, shape: &[usize]) -> Result<Self> {
        spec.validate()?;
        let rank = spec.spatial_rank + 2;
        if shape.len() != rank {
            return Err(Error::shape(format!(
                "conv{}d expects a rank-{rank} input, got {shape:?}",
                spec.spatial_rank
            )));
        }
        let cin = shape[rank - 1];
        if cin != spec.in_channels {
            return Err(Error::shape(format!(
                "input has {cin} channels, layer expects {}",
                spec.in_channels
            )));
        }
        let mut input = [1; 3];
        input[..spec.spatial_rank].copy_from_slice(&shape[1..rank - 1]);
        let mut output = [1; 3];
        let mut pad = [0; 3];
        for axis in 0..3 {
            let (o, p) = spec.axis_output(axis, input[axis])?;
            output[axis] = o;
            pad[axis] = p;
        }
        Ok(Geometry {
            batch: shape[0],
            input,
            output,
            pad,
            kernel: spec.kernel,
            strides: spec.strides,
            cin,
            cout: spec.out_channels,
        })
    }

    fn input_len(&self) -> usize {
        self.input.iter().product::<usize>() * self.cin
    }

    fn positions(&self) -> usize {
        self.output.iter().product()
    }

    fn patch_len(&self) -> usize {
        self.kernel.iter().product::<usize>() * self.cin
    }

    /// Patches coincide with input rows: 1×1×1 kernel, unit stride, no pad.
    fn is_pointwise(&self) -> bool {
        self.kernel == [1, 1, 1] && self.strides == [1, 1, 1] && self.pad == [0, 0, 0]
    }

    fn tile_rows(&self) -> usize {
        (TILE_ELEMS / self.patch_len()).clamp(1, self.positions())
    }

    fn output_shape(&self, spatial_rank: usize) -> Vec<usize> {
        let mut shape = vec![self.batch];
        shape.extend_from_slice(&self.output[..spatial_rank]);
        shape.push(self.cout);
        shape
    }

    /// Visits every kernel row `(d0, d1)` of output position `p`, passing the
    /// patch column offset, the input offset of tap `d2 = 0` (may be out of
    /// range), and the in-range tap interval `[lo, hi)`. Rows that fall
    /// entirely outside the input get `None`.
    #[inline]
    fn for_each_row(&self, p: usize, mut f: impl FnMut(usize, Option<(isize, usize, usize)>)) {
        let o2 = p % self.output[2];
        let o1 = (p / self.output[2]) % self.output[1];
        let o0 = p / (self.output[2] * self.output[1]);
        let base2 = (o2 * self.strides[2]) as isize - self.pad[2] as isize;
        let lo = (-base2).max(0) as usize;
        let hi = ((self.input[2] as isize - base2).max(0) as usize).min(self.kernel[2]);
        let run = self.kernel[2] * self.cin;
        let mut col = 0;
        for d0 in 0..self.kernel[0] {
            let i0 = (o0 * self.strides[0] + d0) as isize - self.pad[0] as isize;
            for d1 in 0..self.kernel[1] {
                let i1 = (o1 * self.strides[1] + d1) as isize - self.pad[1] as isize;
                let inside = i0 >= 0
                    && (i0 as usize) < self.input[0]
                    && i1 >= 0
                    && (i1 as usize) < self.input[1]
                    && lo < hi;
                if inside {
                    let start = ((i0 * self.input[1] as isize + i1) * self.input[2] as isize
                        + base2)
                        * self.cin as isize;
                    f(col, Some((start, lo, hi)));
                } else {
                    f(col, None);
                }
                col += run;
            }
        }
    }

    /// Transposed patch matrix (`K × positions`) for output planes
    /// `o0_start..o0_end`, read from a channels-first copy of the input.
    fn im2col_t<T: Scalar>(&self, xt: &[T], o0_start: usize, o0_end: usize, buf: &mut [T]) {
        let [i0_ext, i1_ext, i2_ext] = self.input;
        let [_, o1_ext, o2_ext] = self.output;
        let cols = (o0_end - o0_start) * o1_ext * o2_ext;
        let mut r = 0;
        for d0 in 0..self.kernel[0] {
            for d1 in 0..self.kernel[1] {
                for d2 in 0..self.kernel[2] {
                    let base2 = d2 as isize - self.pad[2] as isize;
                    for ci in 0..self.cin {
                        let row = &mut buf[r * cols..(r + 1) * cols];
                        r += 1;
                        for o0 in o0_start..o0_end {
                            let i0 = (o0 * self.strides[0] + d0) as isize - self.pad[0] as isize;
                            for o1 in 0..o1_ext {
                                let seg_start = ((o0 - o0_start) * o1_ext + o1) * o2_ext;
                                let seg = &mut row[seg_start..seg_start + o2_ext];
                                let i1 = (o1 * self.strides[1] + d1) as isize - self.pad[1] as isize;
                                if i0 < 0 || i0 as usize >= i0_ext || i1 < 0 || i1 as usize >= i1_ext {
                                    seg.fill(T::zero());
                                    continue;
                                }
                                let line_start = ((ci * i0_ext + i0 as usize) * i1_ext + i1 as usize) * i2_ext;
                                let line = &xt[line_start..line_start + i2_ext];
                                if self.strides[2] == 1 {
                                    let lo = ((-base2).max(0) as usize).min(o2_ext);
                                    let hi = ((i2_ext as isize - base2).max(0) as usize).min(o2_ext).max(lo);
                                    seg[..lo].fill(T::zero());
                                    let src = (lo as isize + base2) as usize;
                                    seg[lo..hi].copy_from_slice(&line[src..src + hi - lo]);
                                    seg[hi..].fill(T::zero());
                                } else {
                                    for (o2, v) in seg.iter_mut().enumerate() {
                                        let i2 = (o2 * self.strides[2]) as isize + base2;
                                        *v = if i2 >= 0 && (i2 as usize) < i2_ext {
                                            line[i2 as usize]
                                        } else {
                                            T::zero()
                                        };
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    fn im2col<T: Scalar>(&self, x: &[T], p0: usize, p1: usize, buf: &mut [T]) {
        let k = self.patch_len();
        let cin = self.cin;
        let run = self.kernel[2] * cin;
        for p in p0..p1 {
            let row = &mut buf[(p - p0) * k..(p - p0 + 1) * k];
            self.for_each_row(p, |col, span| {
                let dst = &mut row[col..col + run];
                match span {
                    None => dst.fill(T::zero()),
                    Some((start, lo, hi)) => {
                        dst[..lo * cin].fill(T::zero());
                        let src = (start + (lo * cin) as isize) as usize;
                        dst[lo * cin..hi * cin].copy_from_slice(&x[src..src + (hi - lo) * cin]);
                        dst[hi * cin..].fill(T::zero());
                    }
                }
            });
        }
    }

    fn col2im<T: Scalar>(&self, buf: &[T], p0: usize, p1: usize, gx: &mut [T]) {
        let k = self.patch_len();
        let cin = self.cin;
        for p in p0..p1 {
            let row = &buf[(p - p0) * k..(p - p0 + 1) * k];
            self.for_each_row(p, |col, span| {
                if let Some((start, lo, hi)) = span {
                    let dst = (start + (lo * cin) as isize) as usize;
                    let src = &row[col + lo * cin..col + hi * cin];
                    for (g, &v) in gx[dst..dst + src.len()].iter_mut().zip(src) {
                        *g = *g + v;
                    }
                }
            });
        }
    }
}

/// Windowed dot product plus bias.
pub fn conv_forward<T: Scalar>(
    x: &Tensor<T>,
    spec: &ConvSpec,
    params: &ConvParams<T>,
) -> Result<Tensor<T>> {
    params.check(spec)?;
    let g = Geometry::new(spec, x.shape())?;
    let positions = g.positions();
    let plane = g.output[1] * g.output[2];
    let k = g.patch_len();
    let cout = g.cout;
    let wt = transpose(params.weight.data(), k, cout);
    let bias = params.bias.data();
    let mut out = vec![T::zero(); g.batch * positions * cout];
    let planes_per_tile = (TILE_ELEMS / (k * plane)).clamp(1, g.output[0]);
    let mut cols = vec![T::zero(); k * planes_per_tile * plane];
    let mut tile_out = vec![T::zero(); cout * planes_per_tile * plane];
    let spatial = g.input_len() / g.cin;

    for b in 0..g.batch {
        let xb = &x.data()[b * g.input_len()..(b + 1) * g.input_len()];
        let xt = transpose(xb, spatial, g.cin);
        let ob = &mut out[b * positions * cout..(b + 1) * positions * cout];
        let mut o0 = 0;
        while o0 < g.output[0] {
            let o0_end = (o0 + planes_per_tile).min(g.output[0]);
            let n = (o0_end - o0) * plane;
            g.im2col_t(&xt, o0, o0_end, &mut cols[..k * n]);
            gemm(cout, k, n, &wt, false, &cols[..k * n], false, T::zero(), &mut tile_out[..cout * n]);
            let dst = &mut ob[o0 * plane * cout..o0_end * plane * cout];
            for (co, row) in tile_out[..cout * n].chunks_exact(n).enumerate() {
                let bias_c = bias[co];
                for (p, &v) in row.iter().enumerate() {
                    dst[p * cout + co] = v + bias_c;
                }
            }
            o0 = o0_end;
        }
    }
    Tensor::from_vec(&g.output_shape(spec.spatial_rank), out)
}

/// Row-major `rows × cols` to `cols × rows`.
fn transpose<T: Scalar>(src: &[T], rows: usize, cols: usize) -> Vec<T> {
    const BLOCK: usize = 32;
    let mut dst = vec![T::zero(); rows * cols];
    for r0 in (0..rows).step_by(BLOCK) {
        for c0 in (0..cols).step_by(BLOCK) {
            for r in r0..(r0 + BLOCK).min(rows) {
                for c in c0..(c0 + BLOCK).min(cols) {
                    dst[c * rows + r] = src[r * cols + c];
                }
            }
        }
    }
    dst
}

/// Gradients of a convolution with respect to its input and parameters.
pub fn conv_backward<T: Scalar>(
    grad_out: &Tensor<T>,
    x: &Tensor<T>,
    spec: &ConvSpec,
    params: &ConvParams<T>,
    need_input_grad: bool,
) -> Result<ConvGrads<T>> {
    params.check(spec)?;
    let g = Geometry::new(spec, x.shape())?;
    let expected = g.output_shape(spec.spatial_rank);
    if grad_out.shape() != expected.as_slice() {
        return Err(Error::shape(format!(
            "output gradient {:?} does not match forward output {expected:?}",
            grad_out.shape()
        )));
    }
    let positions = g.positions();
    let k = g.patch_len();
    let cout = g.cout;
    let wt = transpose(params.weight.data(), k, cout);
    // Accumulated as `cout × K`; transposed back at the end.
    let mut gwt = vec![T::zero(); cout * k];
    let mut gb = vec![T::zero(); cout];
    let mut gx = if need_input_grad {
        vec![T::zero(); x.len()]
    } else {
        Vec::new()
    };
    let tile = g.tile_rows();
    let mut buf = if g.is_pointwise() {
        Vec::new()
    } else {
        vec![T::zero(); tile * k]
    };

    for b in 0..g.batch {
        let xb = &x.data()[b * g.input_len()..(b + 1) * g.input_len()];
        let gob = &grad_out.data()[b * positions * cout..(b + 1) * positions * cout];
        for row in gob.chunks_exact(cout) {
            for (acc, &v) in gb.iter_mut().zip(row) {
                *acc = *acc + v;
            }
        }
        let mut p0 = 0;
        while p0 < positions {
            let p1 = (p0 + tile).min(positions);
            let rows = p1 - p0;
            let g_tile = &gob[p0 * cout..p1 * cout];
            if g.is_pointwise() {
                gemm(cout, rows, k, g_tile, true, &xb[p0 * k..p1 * k], false, T::one(), &mut gwt);
                if need_input_grad {
                    let gxb = &mut gx[b * g.input_len()..(b + 1) * g.input_len()];
                    gemm(rows, cout, k, g_tile, false, &wt, false, T::zero(), &mut gxb[p0 * k..p1 * k]);
                }
            } else {
                g.im2col(xb, p0, p1, &mut buf);
                gemm(cout, rows, k, g_tile, true, &buf[..rows * k], false, T::one(), &mut gwt);
                if need_input_grad {
                    gemm(rows, cout, k, g_tile, false, &wt, false, T::zero(), &mut buf[..rows * k]);
                    let gxb = &mut gx[b * g.input_len()..(b + 1) * g.input_len()];
                    g.col2im(&buf, p0, p1, gxb);
                }
            }
            p0 = p1;
        }
    }
    let gw = transpose(&gwt, cout, k);

    Ok(ConvGrads {
        input: if need_input_grad {
            Some(Tensor::from_vec(x.shape(), gx)?)
        } else {
            None
        },
        weight: Tensor::from_vec(&spec.weight_shape(), gw)?,
        bias: Tensor::from_vec(&[cout], gb)?,
    })
}
