use super::bptt::{sample_loss, LossKind, Target, TrainConfig, TrainSample};
use crate::error::Result;
use crate::events::{BinMode, SpikeTensor};
use crate::rng::stream_rng;
use crate::snn::{ConvSpec, Sae, SaeConfig, SaeParams, SpikeFn};
use rand::Rng;

/// Finite-difference step.
pub const GRADCHECK_STEP: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckReport {
    pub max_rel_error: f64,
    /// Parameter with the largest error, as `tensor[index]`.
    pub worst: String,
    pub n_params: usize,
    pub analytic: Vec<f64>,
}

/// `[2, 4, 4]` input, one stride-2 convolution, latent width 4.
pub fn tiny_sae_config(loss: LossKind) -> SaeConfig {
    SaeConfig {
        input_shape: [2, 4, 4],
        encoder: vec![ConvSpec::k3s2(2)],
        latent_dim: 4,
        theta_out: match loss {
            LossKind::MembraneMse => 1e6,
            LossKind::VanRossum => 1.0,
        },
        ..SaeConfig::default()
    }
}

/// Random network, input and target for the tiny configuration over 3 steps.
pub fn tiny_problem(loss: LossKind, seed: u64) -> Result<(Sae<f64>, TrainSample)> {
    let cfg = tiny_sae_config(loss);
    let layers = cfg.layers()?;
    let mut params = SaeParams::<f64>::init(&layers, 1.0, seed);
    let mut rng = stream_rng(seed, &[0x6c]);
    for t in params.tensors.iter_mut().filter(|t| t.name.ends_with(".bias")) {
        t.data.iter_mut().for_each(|v| *v = rng.gen_range(-0.3..0.3));
    }
    let sae = Sae::new(cfg, params)?;
    let steps = 3;
    let mut random_tensor = |p: f64| {
        let mut t = SpikeTensor::zeros(steps, 4, 4, BinMode::Binary, 1.0);
        for c in 0..2 {
            for s in 0..steps {
                for y in 0..4 {
                    for x in 0..4 {
                        if rng.gen_bool(p) {
                            t.add(c, s, y, x);
                        }
                    }
                }
            }
        }
        t
    };
    let input = random_tensor(0.4);
    let target = match loss {
        LossKind::MembraneMse => Target::Image((0..16).map(|k| ((k * 7) % 5) as f32 / 4.0).collect()),
        LossKind::VanRossum => Target::Spikes(random_tensor(0.3)),
    };
    Ok((sae, TrainSample { input, target }))
}

/// Backprop gradients of `sample` in smooth mode.
pub fn smooth_gradients(sae: &Sae<f64>, sample: &TrainSample, cfg: &TrainConfig) -> Result<(f64, Vec<Vec<f64>>)> {
    let mut st = sae.zero_state();
    let spike_fn = SpikeFn::Smooth { slope: cfg.surrogate_slope };
    let (loss, g) = sample_loss(sae, sample, cfg, spike_fn, &mut st, true)?;
    Ok((loss, g.unwrap_or_default()))
}

/// Compares backprop against central differences on every parameter.
/// Relative error is `|a - b| / max(|a|, |b|, floor)` with
/// `floor = 1e-3 · max|a|` so that near-zero entries are judged on the
/// gradient's own scale.
pub fn gradcheck(sae: &Sae<f64>, sample: &TrainSample, cfg: &TrainConfig) -> Result<GradcheckReport> {
    let spike_fn = SpikeFn::Smooth { slope: cfg.surrogate_slope };
    let (_, grads) = smooth_gradients(sae, sample, cfg)?;
    let scale = grads.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
    let floor = (1e-3 * scale).max(1e-12);
    let mut probe = sae.clone();
    let mut max_rel = 0.0;
    let mut worst = String::new();
    let mut analytic = Vec::new();
    let eval = |net: &Sae<f64>| -> Result<f64> {
        let mut st = net.zero_state();
        Ok(sample_loss(net, sample, cfg, spike_fn, &mut st, false)?.0)
    };
    for k in 0..sae.params().tensors.len() {
        for j in 0..sae.params().tensors[k].data.len() {
            let orig = sae.params().tensors[k].data[j];
            probe.params_mut().tensors[k].data[j] = orig + GRADCHECK_STEP;
            let up = eval(&probe)?;
            probe.params_mut().tensors[k].data[j] = orig - GRADCHECK_STEP;
            let down = eval(&probe)?;
            probe.params_mut().tensors[k].data[j] = orig;
            let fd = (up - down) / (2.0 * GRADCHECK_STEP);
            let a = grads[k][j];
            analytic.push(a);
            let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(floor);
            if rel > max_rel {
                max_rel = rel;
                worst = format!("{}[{j}]", sae.params().tensors[k].name);
            }
        }
    }
    Ok(GradcheckReport { max_rel_error: max_rel, worst, n_params: analytic.len(), analytic })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(loss: LossKind, slope: f64) -> TrainConfig {
        TrainConfig { loss, steps: 3, surrogate_slope: slope, ..TrainConfig::default() }
    }

    #[test]
    fn smooth_membrane_gradients() {
        let (sae, s) = tiny_problem(LossKind::MembraneMse, 11).unwrap();
        let r = gradcheck(&sae, &s, &cfg(LossKind::MembraneMse, 2.0)).unwrap();
        assert!(r.max_rel_error < 1e-4, "{r:?}");
        assert!(r.analytic.iter().any(|v| v.abs() > 1e-6));
    }

    #[test]
    fn smooth_van_rossum_gradients() {
        let (sae, s) = tiny_problem(LossKind::VanRossum, 12).unwrap();
        let r = gradcheck(&sae, &s, &cfg(LossKind::VanRossum, 2.0)).unwrap();
        assert!(r.max_rel_error < 1e-4, "{} at {}", r.max_rel_error, r.worst);
    }

    #[test]
    fn dead_input_gives_zero_weight_gradients() {
        let (mut sae, mut s) = tiny_problem(LossKind::MembraneMse, 13).unwrap();
        for t in sae.params_mut().tensors.iter_mut().filter(|t| t.name.ends_with(".bias")) {
            t.data.iter_mut().for_each(|v| *v = 0.0);
        }
        s.input = SpikeTensor::zeros(3, 4, 4, BinMode::Binary, 1.0);
        let c = cfg(LossKind::MembraneMse, 2.0);
        let mut st = sae.zero_state();
        let (_, g) = sample_loss(&sae, &s, &c, SpikeFn::Hard, &mut st, true).unwrap();
        for (t, g) in sae.params().tensors.iter().zip(g.unwrap()) {
            if t.name.ends_with(".weight") {
                assert!(g.iter().all(|&v| v == 0.0), "{}", t.name);
            }
        }
    }

    #[test]
    fn slope_sweep_stays_finite() {
        for loss in [LossKind::MembraneMse, LossKind::VanRossum] {
            let (sae, s) = tiny_problem(loss, 14).unwrap();
            for k in [0.5, 1.0, 2.0, 4.0, 10.0] {
                let (_, g) = smooth_gradients(&sae, &s, &cfg(loss, k)).unwrap();
                assert!(g.iter().flatten().all(|v| v.is_finite()));
            }
        }
    }
}
