use super::Geometry;
use super::PhantomSpec;
use crate::error::{Error, Result};

/// Optical thickness in mean free paths along the light path: the slab is
/// crossed twice in reflection geometry and once in transmission.
pub fn mfp_count(spec: &PhantomSpec, geometry: Geometry) -> f64 {
    let passes = match geometry {
        Geometry::Reflection => 2.0,
        Geometry::Transmission => 1.0,
    };
    spec.mu_s * spec.thickness * passes
}

/// Exponential free path `-ln(u) / mu_t` for a uniform deviate `u ∈ (0, 1]`.
pub fn sample_step(u: f64, mu_t: f64) -> Result<f64> {
    if !(u > 0.0 && u <= 1.0) {
        return Err(Error::invalid(format!("uniform deviate {u} outside (0, 1]")));
    }
    if !(mu_t > 0.0) {
        return Err(Error::invalid(format!("attenuation {mu_t} must be positive")));
    }
    Ok(-u.ln() / mu_t)
}

/// Henyey-Greenstein deflection cosine by inverse-CDF sampling.
#[inline]
pub fn sample_hg(g: f64, u: f64) -> f64 {
    let cos_t = if g.abs() < 1e-9 {
        2.0 * u - 1.0
    } else {
        let f = (1.0 - g * g) / (1.0 - g + 2.0 * g * u);
        (1.0 + g * g - f * f) / (2.0 * g)
    };
    cos_t.clamp(-1.0, 1.0)
}

/// Rotates the unit direction `d` by polar angle `acos(cos_t)` and azimuth
/// `phi` about itself.
#[inline]
pub fn rotate_direction(d: [f64; 3], cos_t: f64, phi: f64) -> [f64; 3] {
    let sin_t = (1.0 - cos_t * cos_t).max(0.0).sqrt();
    let (sin_p, cos_p) = phi.sin_cos();
    let [ux, uy, uz] = d;
    if uz.abs() > 0.999_999_99 {
        let s = uz.signum();
        return [sin_t * cos_p, sin_t * sin_p, s * cos_t];
    }
    let tmp = (1.0 - uz * uz).sqrt();
    let nx = sin_t * (ux * uz * cos_p - uy * sin_p) / tmp + ux * cos_t;
    let ny = sin_t * (uy * uz * cos_p + ux * sin_p) / tmp + uy * cos_t;
    let nz = -sin_t * cos_p * tmp + uz * cos_t;
    let norm = (nx * nx + ny * ny + nz * nz).sqrt();
    [nx / norm, ny / norm, nz / norm]
}
