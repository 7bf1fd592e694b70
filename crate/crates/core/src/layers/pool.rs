//! Max pooling with ceil-mode extents and global average pooling.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Output extent of a ceil-mode pooling window. Ragged trailing windows are
/// kept; every window starts inside the input.
pub fn ceil_pool_extent(extent: usize, window: usize, stride: usize) -> usize {
    if extent <= window {
        return 1;
    }
    let mut out = (extent - window).div_ceil(stride) + 1;
    if (out - 1) * stride >= extent {
        out -= 1;
    }
    out
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MaxPool3d {
    pub window: [usize; 3],
    pub strides: [usize; 3],
}

/// Flat input offsets of each output's winning element.
#[derive(Clone, Debug)]
pub struct PoolArgmax {
    input_shape: Vec<usize>,
    winners: Vec<u32>,
}

impl MaxPool3d {
    pub fn new(window: [usize; 3], strides: [usize; 3]) -> Result<Self> {
        if window.contains(&0) || strides.contains(&0) {
            return Err(Error::invalid("pooling window and strides must be positive"));
        }
        Ok(MaxPool3d { window, strides })
    }

    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        if input.len() != 5 {
            return Err(Error::shape(format!("max pool 3d expects rank 5, got {input:?}")));
        }
        let mut out = input.to_vec();
        for axis in 0..3 {
            out[axis + 1] = ceil_pool_extent(input[axis + 1], self.window[axis], self.strides[axis]);
        }
        Ok(out)
    }

    /// Window maxima over `[B, H, W, T, C]`. Cells past the input edge are
    /// ignored; ties go to the first element in scan order.
    pub fn forward<T: Scalar>(&self, x: &Tensor<T>) -> Result<(Tensor<T>, PoolArgmax)> {
        let out_shape = self.output_shape(x.shape())?;
        if x.len() > u32::MAX as usize {
            return Err(Error::shape("pooling input too large for 32-bit argmax"));
        }
        let s = x.shape();
        let (b, h, w, t, c) = (s[0], s[1], s[2], s[3], s[4]);
        let (oh, ow, ot) = (out_shape[1], out_shape[2], out_shape[3]);
        let data = x.data();
        let n_out = b * oh * ow * ot * c;
        let mut out = Vec::with_capacity(n_out);
        let mut winners = Vec::with_capacity(n_out);
        let mut best = vec![T::zero(); c];
        let mut best_at = vec![0u32; c];
        for n in 0..b {
            for y in 0..oh {
                let h0 = y * self.strides[0];
                let h1 = (h0 + self.window[0]).min(h);
                for xx in 0..ow {
                    let w0 = xx * self.strides[1];
                    let w1 = (w0 + self.window[1]).min(w);
                    for z in 0..ot {
                        let t0 = z * self.strides[2];
                        let t1 = (t0 + self.window[2]).min(t);
                        best.fill(T::neg_infinity());
                        let mut first = true;
                        for ih in h0..h1 {
                            for iw in w0..w1 {
                                for it in t0..t1 {
                                    let base = (((n * h + ih) * w + iw) * t + it) * c;
                                    let row = &data[base..base + c];
                                    for ch in 0..c {
                                        if first || row[ch] > best[ch] {
                                            best[ch] = row[ch];
                                            best_at[ch] = (base + ch) as u32;
                                        }
                                    }
                                    first = false;
                                }
                            }
                        }
                        out.extend_from_slice(&best);
                        winners.extend_from_slice(&best_at);
                    }
                }
            }
        }
        Ok((
            Tensor::from_vec(&out_shape, out)?,
            PoolArgmax {
                input_shape: s.to_vec(),
                winners,
            },
        ))
    }

    /// Routes each output gradient to its window's winner.
    pub fn backward<T: Scalar>(&self, grad_out: &Tensor<T>, cache: Option<&PoolArgmax>) -> Result<Tensor<T>> {
        let cache = cache.ok_or_else(|| Error::MissingCache("max pool".into()))?;
        if grad_out.len() != cache.winners.len() {
            return Err(Error::shape(format!(
                "pool gradient of {} elements for {} pooled outputs",
                grad_out.len(),
                cache.winners.len()
            )));
        }
        let mut gx = Tensor::zeros(&cache.input_shape)?;
        let dst = gx.data_mut();
        for (&g, &at) in grad_out.data().iter().zip(&cache.winners) {
            dst[at as usize] = dst[at as usize] + g;
        }
        Ok(gx)
    }
}

/// Mean over the spatial axes of `[B, H, W, C]`, giving `[B, C]`.
pub fn global_avgpool2d<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    if x.rank() != 4 {
        return Err(Error::shape(format!(
            "global average pooling expects [B, H, W, C], got {:?}",
            x.shape()
        )));
    }
    let (b, c) = (x.shape()[0], x.shape()[3]);
    let cells = x.shape()[1] * x.shape()[2];
    let inv = T::one() / T::from_usize(cells).expect("cell count fits a float");
    let mut out = vec![T::zero(); b * c];
    for (n, item) in x.data().chunks_exact(cells * c).enumerate() {
        let acc = &mut out[n * c..(n + 1) * c];
        for row in item.chunks_exact(c) {
            for (a, &v) in acc.iter_mut().zip(row) {
                *a = *a + v;
            }
        }
        acc.iter_mut().for_each(|a| *a = *a * inv);
    }
    Tensor::from_vec(&[b, c], out)
}

pub fn global_avgpool2d_backward<T: Scalar>(grad_out: &Tensor<T>, input_shape: &[usize]) -> Result<Tensor<T>> {
    if input_shape.len() != 4 || grad_out.shape() != [input_shape[0], input_shape[3]] {
        return Err(Error::shape(format!(
            "average pool gradient {:?} does not match input {input_shape:?}",
            grad_out.shape()
        )));
    }
    let c = input_shape[3];
    let cells = input_shape[1] * input_shape[2];
    let inv = T::one() / T::from_usize(cells).expect("cell count fits a float");
    let mut gx = Vec::with_capacity(grad_out.len() * cells);
    for g in grad_out.data().chunks_exact(c) {
        for _ in 0..cells {
            gx.extend(g.iter().map(|&v| v * inv));
        }
    }
    Tensor::from_vec(input_shape, gx)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ceil_extents() {
        assert_eq!(ceil_pool_extent(64, 3, 3), 22);
        assert_eq!(ceil_pool_extent(30, 3, 3), 10);
        assert_eq!(ceil_pool_extent(8, 3, 3), 3);
        assert_eq!(ceil_pool_extent(2, 3, 3), 1);
        assert_eq!(ceil_pool_extent(5, 2, 2), 3);
    }

    #[test]
    fn table_shape() {
        let pool = MaxPool3d::new([3; 3], [3; 3]).unwrap();
        assert_eq!(pool.output_shape(&[1, 64, 64, 30, 32]).unwrap(), vec![1, 22, 22, 10, 32]);
    }

    #[test]
    fn ties_route_to_first_element() {
        let pool = MaxPool3d::new([3; 3], [3; 3]).unwrap();
        let x = Tensor::full(&[1, 4, 4, 3, 1], 2.0f32).unwrap();
        let (y, cache) = pool.forward(&x).unwrap();
        assert_eq!(y.shape(), &[1, 2, 2, 1, 1]);
        assert!(y.data().iter().all(|&v| v == 2.0));
        let g = pool.backward(&Tensor::full(y.shape(), 1.0f32).unwrap(), Some(&cache)).unwrap();
        // window starts: (0,0,0), (0,3,0), (3,0,0), (3,3,0)
        for (h, w) in [(0, 0), (0, 3), (3, 0), (3, 3)] {
            assert_eq!(g.get(&[0, h, w, 0, 0]).unwrap(), 1.0);
        }
        assert_eq!(g.sum(), 4.0);
    }

    #[test]
    fn ragged_windows_ignore_padding() {
        let pool = MaxPool3d::new([3; 3], [3; 3]).unwrap();
        let x = Tensor::full(&[1, 4, 1, 1, 1], -5.0f32).unwrap();
        let (y, _) = pool.forward(&x).unwrap();
        assert_eq!(y.data(), &[-5.0, -5.0]);
    }

    #[test]
    fn backward_without_cache_fails() {
        let pool = MaxPool3d::new([3; 3], [3; 3]).unwrap();
        let g = Tensor::<f32>::zeros(&[1]).unwrap();
        assert!(matches!(pool.backward(&g, None), Err(Error::MissingCache(_))));
    }

    #[test]
    fn average_pool_values() {
        let ones = Tensor::full(&[1, 8, 8, 60], 1.0f32).unwrap();
        let y = global_avgpool2d(&ones).unwrap();
        assert_eq!(y.shape(), &[1, 60]);
        assert!(y.data().iter().all(|&v| v == 1.0));

        let g = Tensor::full(&[1, 60], 2.0f64).unwrap();
        let gx = global_avgpool2d_backward(&g, &[1, 8, 8, 60]).unwrap();
        assert!(gx.data().iter().all(|&v| v == 2.0 / 64.0));
    }
}
