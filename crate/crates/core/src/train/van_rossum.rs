//! van Rossum spike-train distance on a discrete time grid.
//!
//! Each train, given as per-step spike counts, is filtered by the causal
//! kernel `exp(-t/tau)` with the exact per-step recursion
//! `f_t = e^{-1/tau}·f_{t-1} + s_t`. Between grid points the difference of
//! the filtered traces decays exponentially, so the integral
//! `(1/tau)·∫(f_a - f_b)^2 dt` is evaluated in closed form interval by
//! interval; after the last step the trace decays freely to infinity.

use crate::error::{Error, Result};
use crate::snn::Real;

/// Integration weights per step: `(1 - e^{-2/tau})/2`, and `1/2` for the
/// final step whose tail runs to infinity.
fn weights(steps: usize, tau_steps: f64) -> Vec<f64> {
    let w = 0.5 * (1.0 - (-2.0 / tau_steps).exp());
    let mut out = vec![w; steps];
    if let Some(last) = out.last_mut() {
        *last = 0.5;
    }
    out
}

/// Squared distance between two single-neuron trains of per-step counts.
pub fn van_rossum_sq(a: &[f64], b: &[f64], tau_steps: f64) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::shape(format!("trains of {} and {} steps", a.len(), b.len())));
    }
    if !(tau_steps > 0.0) {
        return Err(Error::invalid("van Rossum tau must be positive"));
    }
    let decay = (-1.0 / tau_steps).exp();
    let w = weights(a.len(), tau_steps);
    let mut d = 0.0;
    let mut acc = 0.0;
    for t in 0..a.len() {
        d = decay * d + (a[t] - b[t]);
        acc += w[t] * d * d;
    }
    Ok(acc)
}

/// Distance between two populations of trains (one per neuron), combining
/// the per-neuron squared distances.
pub fn van_rossum(a: &[Vec<f64>], b: &[Vec<f64>], tau_steps: f64) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::shape(format!("{} vs {} neurons", a.len(), b.len())));
    }
    let mut total = 0.0;
    for (x, y) in a.iter().zip(b) {
        total += van_rossum_sq(x, y, tau_steps)?;
    }
    Ok(total.sqrt())
}

/// Closed-form distance between spike-time lists in continuous time.
pub fn van_rossum_times(a: &[f64], b: &[f64], tau: f64) -> f64 {
    let k = |x: &[f64], y: &[f64]| -> f64 {
        x.iter().flat_map(|&s| y.iter().map(move |&t| (-(s - t).abs() / tau).exp())).sum()
    };
    (0.5 * (k(a, a) + k(b, b) - 2.0 * k(a, b))).max(0.0).sqrt()
}

/// Mean squared distance over neurons and its gradient with respect to the
/// output spikes. `out` and `target` are indexed `[step][neuron]`.
pub fn van_rossum_loss<F: Real>(out: &[Vec<F>], target: &[Vec<F>], tau_steps: f64) -> Result<(f64, Vec<Vec<F>>)> {
    if out.len() != target.len() || out.iter().zip(target).any(|(a, b)| a.len() != b.len()) {
        return Err(Error::shape("output and target spike trains differ in shape"));
    }
    if !(tau_steps > 0.0) {
        return Err(Error::invalid("van Rossum tau must be positive"));
    }
    let steps = out.len();
    let n = out.first().map_or(0, Vec::len);
    if steps == 0 || n == 0 {
        return Ok((0.0, out.to_vec()));
    }
    let decay = (-1.0 / tau_steps).exp();
    let w = weights(steps, tau_steps);
    let mut d = vec![0.0f64; n];
    let mut diffs = Vec::with_capacity(steps);
    let mut loss = 0.0;
    for t in 0..steps {
        for j in 0..n {
            d[j] = decay * d[j] + (out[t][j] - target[t][j]).to_f64().unwrap();
            loss += w[t] * d[j] * d[j];
        }
        diffs.push(d.clone());
    }
    // dL/ds_t = sum_{t' >= t} decay^{t'-t} · 2·w_t'·d_t' / n
    let mut grad = vec![vec![F::zero(); n]; steps];
    let mut carry = vec![0.0f64; n];
    for t in (0..steps).rev() {
        for j in 0..n {
            carry[j] = decay * carry[j] + 2.0 * w[t] * diffs[t][j] / n as f64;
            grad[t][j] = F::lit(carry[j]);
        }
    }
    Ok((loss / n as f64, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Midpoint-rule integration of the continuous filtered traces.
    fn fine_oracle(a: &[f64], b: &[f64], tau: f64, horizon: f64) -> f64 {
        let n = 2_000_000;
        let dt = horizon / n as f64;
        let f = |ts: &[f64], t: f64| ts.iter().filter(|&&s| s <= t).map(|&s| (-(t - s) / tau).exp()).sum::<f64>();
        let mut acc = 0.0;
        for k in 0..n {
            let t = (k as f64 + 0.5) * dt;
            let d = f(a, t) - f(b, t);
            acc += d * d * dt;
        }
        (acc / tau).sqrt()
    }

    fn grid(times: &[usize], steps: usize) -> Vec<f64> {
        let mut v = vec![0.0; steps];
        for &t in times {
            v[t] += 1.0;
        }
        v
    }

    #[test]
    fn identical_is_zero() {
        let a = grid(&[1, 4, 4, 9], 12);
        assert_eq!(van_rossum_sq(&a, &a, 3.0).unwrap(), 0.0);
    }

    #[test]
    fn single_spike_against_empty() {
        let steps = 10_000;
        let tau = 500.0;
        let d = van_rossum(&[grid(&[100], steps)], &[vec![0.0; steps]], tau).unwrap();
        let oracle = fine_oracle(&[100.0], &[], tau, 40.0 * tau);
        assert!((d - 0.5f64.sqrt()).abs() < 1e-3);
        assert!((oracle - 0.5f64.sqrt()).abs() < 1e-3);
        assert!((van_rossum_times(&[3.0], &[], 2.0) - 0.5f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn offset_spikes() {
        let steps = 10_000;
        let tau = 400.0;
        for delta in [1usize, 50, 400, 1500] {
            let d2 = van_rossum_sq(&grid(&[200], steps), &grid(&[200 + delta], steps), tau).unwrap();
            let analytic = 1.0 - (-(delta as f64) / tau).exp();
            assert!((d2 - analytic).abs() < 1e-3, "delta {delta}: {d2} vs {analytic}");
            let oracle = fine_oracle(&[200.0], &[200.0 + delta as f64], tau, 200.0 + delta as f64 + 40.0 * tau);
            assert!((oracle * oracle - analytic).abs() < 1e-3);
        }
    }

    #[test]
    fn loss_gradient_matches_finite_differences() {
        let out: Vec<Vec<f64>> = (0..6).map(|t| vec![(t % 2) as f64 * 0.7, 0.2 * t as f64]).collect();
        let tgt: Vec<Vec<f64>> = (0..6).map(|t| vec![(t == 3) as u8 as f64, 0.0]).collect();
        let (_, g) = van_rossum_loss(&out, &tgt, 2.5).unwrap();
        let h = 1e-6;
        for t in 0..6 {
            for j in 0..2 {
                let mut p = out.clone();
                p[t][j] += h;
                let mut m = out.clone();
                m[t][j] -= h;
                let fd = (van_rossum_loss(&p, &tgt, 2.5).unwrap().0 - van_rossum_loss(&m, &tgt, 2.5).unwrap().0) / (2.0 * h);
                assert!((fd - g[t][j]).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn rejects_bad_arguments() {
        assert!(van_rossum_sq(&[0.0], &[0.0, 1.0], 1.0).is_err());
        assert!(van_rossum_sq(&[0.0], &[1.0], 0.0).is_err());
    }
}
