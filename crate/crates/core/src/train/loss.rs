use crate::error::{Error, Result};
use crate::snn::min_max_normalize;

/// Mean squared per-pixel difference.
pub fn membrane_mse(a: &[f32], b: &[f32]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::shape(format!("images of {} and {} pixels", a.len(), b.len())));
    }
    if a.is_empty() {
        return Ok(0.0);
    }
    Ok(a.iter().zip(b).map(|(&x, &y)| (x as f64 - y as f64).powi(2)).sum::<f64>() / a.len() as f64)
}

/// MSE between the min-max normalised accumulated membrane `raw` and
/// `target`, with the gradient with respect to `raw`.
pub fn membrane_loss(raw: &[f64], target: &[f32]) -> Result<(f64, Vec<f64>)> {
    if raw.len() != target.len() {
        return Err(Error::shape(format!("{} accumulated pixels for a {}-pixel target", raw.len(), target.len())));
    }
    let n = raw.len().max(1) as f64;
    let norm = min_max_normalize(raw);
    let loss = norm.iter().zip(target).map(|(&x, &y)| (x - y as f64).powi(2)).sum::<f64>() / n;
    let mut grad = vec![0.0; raw.len()];
    let (Some(lo), Some(hi)) = (argmin(raw), argmax(raw)) else {
        return Ok((loss, grad));
    };
    let range = raw[hi] - raw[lo];
    if norm.iter().all(|&v| v == 0.0) || !(range > 0.0) {
        return Ok((loss, grad));
    }
    let g_norm: Vec<f64> = norm.iter().zip(target).map(|(&x, &y)| 2.0 * (x - y as f64) / n).collect();
    let (mut to_lo, mut to_hi) = (0.0, 0.0);
    for (k, (&g, &v)) in g_norm.iter().zip(&norm).enumerate() {
        grad[k] = g / range;
        to_lo += g * (v - 1.0) / range;
        to_hi -= g * v / range;
    }
    grad[lo] += to_lo;
    grad[hi] += to_hi;
    Ok((loss, grad))
}

fn argmin(v: &[f64]) -> Option<usize> {
    (0..v.len()).reduce(|a, b| if v[b] < v[a] { b } else { a })
}

fn argmax(v: &[f64]) -> Option<usize> {
    (0..v.len()).reduce(|a, b| if v[b] > v[a] { b } else { a })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mse_examples() {
        assert_eq!(membrane_mse(&[0.3, 0.4], &[0.3, 0.4]).unwrap(), 0.0);
        assert_eq!(membrane_mse(&[0.0; 4], &[1.0; 4]).unwrap(), 1.0);
        assert_eq!(membrane_mse(&[0.0, 0.5], &[0.0, 1.0]).unwrap(), 0.125);
        assert!(membrane_mse(&[0.0], &[0.0, 1.0]).is_err());
    }

    #[test]
    fn normalised_gradient_matches_finite_differences() {
        let raw = vec![3.0, -1.0, 0.5, 7.0, 2.0, 2.5];
        let tgt = vec![0.2f32, 0.0, 1.0, 0.9, 0.1, 0.6];
        let (_, g) = membrane_loss(&raw, &tgt).unwrap();
        let h = 1e-6;
        for k in 0..raw.len() {
            let mut p = raw.clone();
            p[k] += h;
            let mut m = raw.clone();
            m[k] -= h;
            let fd = (membrane_loss(&p, &tgt).unwrap().0 - membrane_loss(&m, &tgt).unwrap().0) / (2.0 * h);
            assert!((fd - g[k]).abs() < 1e-7, "pixel {k}: {fd} vs {}", g[k]);
        }
    }

    #[test]
    fn flat_input_has_zero_gradient() {
        let (l, g) = membrane_loss(&[2.0; 3], &[1.0, 0.0, 0.0]).unwrap();
        assert!((l - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(g, vec![0.0; 3]);
    }
}
