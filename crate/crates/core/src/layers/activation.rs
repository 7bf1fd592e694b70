use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Negative-side slope used throughout the network.
pub const LEAKY_ALPHA: f64 = 0.3;

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("leaky relu slope {alpha} is not in (0, 1)")))
    }
}

/// `f(x) = x` for `x >= 0`, `alpha * x` otherwise.
pub fn leaky_relu<T: Scalar>(x: &Tensor<T>, alpha: f64) -> Result<Tensor<T>> {
    check_alpha(alpha)?;
    let a = T::from_f64_lossy(alpha);
    Ok(x.map(|v| if v >= T::zero() { v } else { a * v }))
}

/// The derivative is 1 or `alpha` depending on the sign of the forward input.
/// The output has the same sign, so either may be passed as `x`.
pub fn leaky_relu_backward<T: Scalar>(grad_out: &Tensor<T>, x: &Tensor<T>, alpha: f64) -> Result<Tensor<T>> {
    check_alpha(alpha)?;
    let a = T::from_f64_lossy(alpha);
    grad_out.zip_with(x, |g, v| if v >= T::zero() { g } else { a * g })
}
