use rand::Rng;

use crate::error::{Error, Result};
use crate::layers::Mode;
use crate::tensor::{Scalar, Tensor};

pub const DEFAULT_RATE: f64 = 0.25;

/// Keep mask of one train-mode dropout call.
#[derive(Clone, Debug)]
pub struct DropoutMask {
    keep: Vec<bool>,
    scale: f64,
}

pub fn check_rate(rate: f64) -> Result<()> {
    if (0.0..1.0).contains(&rate) {
        Ok(())
    } else {
        Err(Error::invalid(format!("dropout rate {rate} is not in [0, 1)")))
    }
}

/// Inverted dropout: train mode zeroes each element with probability `rate`
/// and scales survivors by `1 / (1 - rate)`; infer mode is the identity.
pub fn dropout<T: Scalar, R: Rng + ?Sized>(
    x: &Tensor<T>,
    rate: f64,
    mode: Mode,
    rng: &mut R,
) -> Result<(Tensor<T>, Option<DropoutMask>)> {
    check_rate(rate)?;
    if mode == Mode::Infer || rate == 0.0 {
        return Ok((x.clone(), None));
    }
    let scale = 1.0 / (1.0 - rate);
    let s = T::from_f64_lossy(scale);
    let keep: Vec<bool> = (0..x.len()).map(|_| rng.random::<f64>() >= rate).collect();
    let data = x
        .data()
        .iter()
        .zip(&keep)
        .map(|(&v, &k)| if k { v * s } else { T::zero() })
        .collect();
    Ok((Tensor::from_vec(x.shape(), data)?, Some(DropoutMask { keep, scale })))
}

pub fn dropout_backward<T: Scalar>(grad_out: &Tensor<T>, mask: Option<&DropoutMask>) -> Result<Tensor<T>> {
    let Some(mask) = mask else {
        return Ok(grad_out.clone());
    };
    if mask.keep.len() != grad_out.len() {
        return Err(Error::shape("dropout gradient does not match its mask"));
    }
    let s = T::from_f64_lossy(mask.scale);
    let data = grad_out
        .data()
        .iter()
        .zip(&mask.keep)
        .map(|(&g, &k)| if k { g * s } else { T::zero() })
        .collect();
    Tensor::from_vec(grad_out.shape(), data)
}
