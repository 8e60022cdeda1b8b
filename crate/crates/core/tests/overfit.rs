//! Training end to end on a single synthetic sample.

use turbidspike::events::{BinMode, SpikeTensor};
use turbidspike::snn::{ConvSpec, Sae, SaeConfig};
use turbidspike::train::{evaluate_losses, LossKind, Target, TrainConfig, TrainSample, Trainer};

const SIDE: usize = 16;
const STEPS: usize = 20;

// a bar seen through a dithered spiking input, to be recovered as a clean
// image (membrane mode) or as regular spike trains on the bar (van Rossum mode)
fn problem(loss: LossKind) -> (SaeConfig, TrainConfig, TrainSample) {
    let mut input = SpikeTensor::zeros(STEPS, SIDE, SIDE, BinMode::Binary, 1.0);
    let mut image = vec![0.0f32; SIDE * SIDE];
    let mut spikes = SpikeTensor::zeros(STEPS, SIDE, SIDE, BinMode::Binary, 1.0);
    for y in 4..12 {
        for x in 6..10 {
            image[y * SIDE + x] = 1.0;
            for t in (4..STEPS).step_by(4) {
                spikes.add(0, t, y, x);
            }
        }
    }
    for t in 0..STEPS {
        for y in 2..14 {
            for x in 3..13 {
                if (t * 7 + y * 3 + x * 5) % 4 == 0 {
                    input.add(0, t, y, x);
                }
            }
        }
    }
    let (theta_out, target) = match loss {
        LossKind::MembraneMse => (1e6, Target::Image(image)),
        LossKind::VanRossum => (1.0, Target::Spikes(spikes)),
    };
    let sae = SaeConfig {
        input_shape: [2, SIDE, SIDE],
        encoder: vec![ConvSpec::k3s2(8), ConvSpec::k3s2(16)],
        latent_dim: 32,
        theta_out,
        ..SaeConfig::default()
    };
    let train = TrainConfig {
        loss,
        steps: STEPS,
        batch_size: 1,
        epochs: 200,
        learning_rate: 5e-3,
        tau_vr_steps: 10.0,
        ..TrainConfig::default()
    };
    (sae, train, TrainSample { input, target })
}

fn overfit_ratio(loss: LossKind) -> f64 {
    let (sae_cfg, cfg, sample) = problem(loss);
    let samples = [sample];
    let initial = evaluate_losses(&Sae::init(sae_cfg.clone(), cfg.seed).unwrap(), &samples, &cfg).unwrap()[0];
    let mut tr = Trainer::new(sae_cfg, cfg.clone()).unwrap();
    tr.fit(&samples, &[], |_, _| Ok(())).unwrap();
    let last = evaluate_losses(tr.network(), &samples, &cfg).unwrap()[0];
    last / initial
}

#[test]
fn membrane_loss_overfits_one_sample() {
    assert!(overfit_ratio(LossKind::MembraneMse) < 0.1);
}

#[test]
fn van_rossum_loss_overfits_one_sample() {
    assert!(overfit_ratio(LossKind::VanRossum) < 0.1);
}

#[test]
fn reset_per_sample_losses_ignore_order() {
    let (sae_cfg, cfg, a) = problem(LossKind::MembraneMse);
    let mut b = a.clone();
    b.input = SpikeTensor::zeros(STEPS, SIDE, SIDE, BinMode::Binary, 1.0);
    b.input.add(0, 3, 8, 8);
    let sae = Sae::init(sae_cfg, 5).unwrap();
    let fwd = evaluate_losses(&sae, &[a.clone(), b.clone()], &cfg).unwrap();
    let rev = evaluate_losses(&sae, &[b, a], &cfg).unwrap();
    assert_eq!(fwd, vec![rev[1], rev[0]]);
}
