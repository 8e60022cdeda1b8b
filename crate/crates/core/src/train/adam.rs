use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Adam with bias correction. Moments are kept per parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<Vec<f32>>,
    pub v: Vec<Vec<f32>>,
}

impl Adam {
    pub fn new(config: AdamConfig, sizes: impl IntoIterator<Item = usize>) -> Self {
        let (m, v): (Vec<_>, Vec<_>) = sizes.into_iter().map(|n| (vec![0.0; n], vec![0.0; n])).unzip();
        Self { config, step: 0, m, v }
    }

    pub fn update(&mut self, params: &mut [&mut [f32]], grads: &[Vec<f32>]) {
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let c1 = 1.0 - beta1.powi(self.step.min(i32::MAX as u64) as i32);
        let c2 = 1.0 - beta2.powi(self.step.min(i32::MAX as u64) as i32);
        for (k, p) in params.iter_mut().enumerate() {
            let (m, v, g) = (&mut self.m[k], &mut self.v[k], &grads[k]);
            for j in 0..p.len() {
                let gj = g[j] as f64;
                let mj = beta1 * m[j] as f64 + (1.0 - beta1) * gj;
                let vj = beta2 * v[j] as f64 + (1.0 - beta2) * gj * gj;
                m[j] = mj as f32;
                v[j] = vj as f32;
                let delta = lr * (mj / c1) / ((vj / c2).sqrt() + eps);
                p[j] = (p[j] as f64 - delta) as f32;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr() {
        let mut opt = Adam::new(AdamConfig::default(), [2]);
        let mut p = [1.0f32, -1.0];
        opt.update(&mut [&mut p[..]], &[vec![0.5, -3.0]]);
        assert!((p[0] - (1.0 - 1e-3)).abs() < 1e-6);
        assert!((p[1] - (-1.0 + 1e-3)).abs() < 1e-6);
    }

    #[test]
    fn zero_lr_is_identity() {
        let mut opt = Adam::new(AdamConfig { lr: 0.0, ..AdamConfig::default() }, [1]);
        let mut p = vec![0.25f32];
        for _ in 0..10 {
            opt.update(&mut [&mut p[..]], &[vec![4.0]]);
        }
        assert_eq!(p, vec![0.25]);
    }

    #[test]
    fn minimises_quadratic() {
        let mut opt = Adam::new(AdamConfig { lr: 0.05, ..AdamConfig::default() }, [1]);
        let mut p = [3.0f32];
        for _ in 0..500 {
            let g = vec![2.0 * (p[0] - 1.0)];
            opt.update(&mut [&mut p[..]], &[g]);
        }
        assert!((p[0] - 1.0).abs() < 1e-2);
    }
}
