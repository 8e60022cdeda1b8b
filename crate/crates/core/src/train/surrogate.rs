use std::f64::consts::PI;

use crate::snn::Real;

/// Smooth arctangent step, `atan(pi·k·(u - theta))/pi + 1/2`.
#[inline]
pub fn surrogate_sigma<F: Real>(u: F, theta: F, k: F) -> F {
    let pi = F::lit(PI);
    let z = pi * k * (u - theta);
    // far below threshold atan(z)/pi + 1/2 cancels; use the reciprocal form
    if z < -F::one() {
        -(z.recip()).atan() / pi
    } else {
        z.atan() / pi + F::lit(0.5)
    }
}

/// Derivative of [`surrogate_sigma`] with respect to `u`.
#[inline]
pub fn surrogate_grad<F: Real>(u: F, theta: F, k: F) -> F {
    let z = F::lit(PI) * k * (u - theta);
    k / (F::one() + z * z)
}
