use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::adam::{Adam, AdamConfig};
use super::loss::membrane_loss;
use super::surrogate::surrogate_grad;
use super::van_rossum::van_rossum_loss;
use crate::error::{Error, Result};
use crate::events::SpikeTensor;
use crate::snn::{chw_to_hwc, NetState, Real, Reset, Sae, SaeConfig, SpikeFn, StepTrace};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    MembraneMse,
    VanRossum,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Persistence {
    #[default]
    ResetPerSample,
    /// LIF states carry over between consecutive samples in the same batch
    /// slot and are cleared at the start of every epoch.
    PersistAcrossSamples,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub loss: LossKind,
    pub surrogate_slope: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: u64,
    pub steps: usize,
    /// van Rossum kernel time constant in time steps.
    pub tau_vr_steps: f64,
    pub seed: u64,
    pub membrane_persistence: Persistence,
    pub shuffle: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            loss: LossKind::MembraneMse,
            surrogate_slope: 2.0,
            learning_rate: 1e-3,
            batch_size: 8,
            epochs: 10,
            steps: 50,
            tau_vr_steps: 5.0,
            seed: 0,
            membrane_persistence: Persistence::ResetPerSample,
            shuffle: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.surrogate_slope > 0.0) || !(self.tau_vr_steps > 0.0) {
            return Err(Error::Config("surrogate slope and van Rossum tau must be positive".into()));
        }
        if self.steps == 0 || self.batch_size == 0 {
            return Err(Error::Config("steps and batch size must be at least 1".into()));
        }
        if !(self.learning_rate >= 0.0) {
            return Err(Error::Config("learning rate must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Target {
    /// Image in `[0, 1]` at the network's resolution.
    Image(Vec<f32>),
    Spikes(SpikeTensor),
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainSample {
    pub input: SpikeTensor,
    pub target: Target,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: u64,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

fn frame_hwc<F: Real>(t: &SpikeTensor, step: usize) -> Vec<F> {
    let f: Vec<F> = t.step_frame(step).into_iter().map(|v| F::lit(v as f64)).collect();
    chw_to_hwc(&f, 2, t.height(), t.width())
}

/// Runs one sample from `state` and returns its loss, plus parameter
/// gradients when `grad` is set.
pub(crate) fn sample_loss<F: Real>(
    sae: &Sae<F>,
    sample: &TrainSample,
    cfg: &TrainConfig,
    spike_fn: SpikeFn,
    state: &mut NetState<F>,
    grad: bool,
) -> Result<(f64, Option<Vec<Vec<F>>>)> {
    let [c, h, w] = sae.config().input_shape;
    let input = &sample.input;
    if c != 2 || input.height() != h || input.width() != w {
        return Err(Error::shape(format!("input {}x{} does not match network {h}x{w}", input.height(), input.width())));
    }
    if input.steps() != cfg.steps {
        return Err(Error::shape(format!("input has {} steps, training uses {}", input.steps(), cfg.steps)));
    }
    let steps = cfg.steps;
    let mut traces = Vec::with_capacity(if grad { steps } else { 0 });
    let mut out_u = Vec::with_capacity(steps);
    let mut out_s = Vec::with_capacity(steps);
    for t in 0..steps {
        let mut tr = StepTrace::default();
        let (_, u, s) = sae.step_hwc(frame_hwc(input, t), state, spike_fn, grad.then_some(&mut tr))?;
        if grad {
            traces.push(tr);
        }
        out_u.push(u);
        out_s.push(s);
    }
    let (loss, g_u, g_s) = match (&sample.target, cfg.loss) {
        (Target::Image(img), LossKind::MembraneMse) => {
            let mut raw = vec![0.0f64; h * w];
            for u in &out_u {
                for (p, r) in raw.iter_mut().enumerate() {
                    *r += u[p * c].to_f64().unwrap();
                }
            }
            let (loss, g_raw) = membrane_loss(&raw, img)?;
            let mut g = vec![F::zero(); h * w * c];
            for (p, &v) in g_raw.iter().enumerate() {
                g[p * c] = F::lit(v);
            }
            (loss, Some(g), None)
        }
        (Target::Spikes(tgt), LossKind::VanRossum) => {
            if tgt.steps() != steps || tgt.height() != h || tgt.width() != w {
                return Err(Error::shape("spike target does not match input shape"));
            }
            let tgt_frames: Vec<Vec<F>> = (0..steps).map(|t| frame_hwc(tgt, t)).collect();
            let (loss, g) = van_rossum_loss(&out_s, &tgt_frames, cfg.tau_vr_steps)?;
            (loss, None, Some(g))
        }
        _ => return Err(Error::invalid("target kind does not match the loss")),
    };
    if !loss.is_finite() {
        return Err(Error::Numeric(format!("non-finite loss {loss}")));
    }
    if !grad {
        return Ok((loss, None));
    }
    let grads = backward(sae, &traces, g_u.as_deref(), g_s.as_deref(), spike_fn, cfg.surrogate_slope);
    Ok((loss, Some(grads)))
}

/// Backpropagation through time. `g_u` is a per-step gradient on the output
/// membrane (the same every step), `g_s` per-step gradients on output spikes.
fn backward<F: Real>(
    sae: &Sae<F>,
    traces: &[StepTrace<F>],
    g_u: Option<&[F]>,
    g_s: Option<&[Vec<F>]>,
    spike_fn: SpikeFn,
    slope: f64,
) -> Vec<Vec<F>> {
    let layers = sae.layers();
    let params = &sae.params().tensors;
    let mut grads: Vec<Vec<F>> = params.iter().map(|t| vec![F::zero(); t.data.len()]).collect();
    let mut carry_i: Vec<Vec<F>> = layers.iter().map(|l| vec![F::zero(); l.geom.out_len()]).collect();
    let mut carry_u = carry_i.clone();
    let k = F::lit(slope);
    let last = layers.len() - 1;
    for t in (0..traces.len()).rev() {
        let mut g_spk = match g_s {
            Some(g) => g[t].clone(),
            None => vec![F::zero(); layers[last].geom.out_len()],
        };
        for l in (0..layers.len()).rev() {
            let layer = &layers[l];
            let (alpha, beta, theta) = (F::lit(layer.lif.alpha), F::lit(layer.lif.beta), F::lit(layer.lif.theta));
            let u_pre = &traces[t].u_pre[l];
            let mut g_c = vec![F::zero(); u_pre.len()];
            for j in 0..u_pre.len() {
                let up = u_pre[j];
                let ds = surrogate_grad(up, theta, k);
                let mut gu = carry_u[l][j];
                if l == last {
                    if let Some(g) = g_u {
                        gu += g[j];
                    }
                }
                let gs = g_spk[j];
                let gup = match layer.lif.reset {
                    Reset::Subtract => gu + (gs - theta * gu) * ds,
                    Reset::Zero => {
                        let s = spike_fn.fire(up, theta);
                        gu * ((F::one() - s) - up * ds) + gs * ds
                    }
                };
                let gi = gup + carry_i[l][j];
                carry_i[l][j] = alpha * gi;
                carry_u[l][j] = beta * gup;
                g_c[j] = gi;
            }
            let (gw, rest) = grads[2 * l..].split_at_mut(1);
            let mut g_in = (l > 0).then(|| vec![F::zero(); layer.geom.in_len()]);
            layer.backward(&params[2 * l].data, &traces[t].inputs[l], &g_c, &mut gw[0], &mut rest[0], g_in.as_deref_mut());
            if let Some(g) = g_in {
                g_spk = g;
            }
        }
    }
    grads
}

/// Loss of each sample from a fresh state, evaluated in parallel.
pub fn evaluate_losses(sae: &Sae<f32>, samples: &[TrainSample], cfg: &TrainConfig) -> Result<Vec<f64>> {
    samples
        .par_iter()
        .map(|s| {
            let mut st = sae.zero_state();
            sample_loss(sae, s, cfg, SpikeFn::Hard, &mut st, false).map(|r| r.0)
        })
        .collect()
}

/// Serializable position of the shuffling RNG.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self { seed: rng.get_seed(), stream: rng.get_stream(), word_pos: rng.get_word_pos() }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

/// Mini-batch BPTT trainer with Adam.
#[derive(Clone, Debug)]
pub struct Trainer {
    sae: Sae<f32>,
    cfg: TrainConfig,
    adam: Adam,
    rng: ChaCha8Rng,
    epoch: u64,
    history: Vec<EpochLoss>,
}

impl Trainer {
    pub fn new(sae_config: SaeConfig, cfg: TrainConfig) -> Result<Self> {
        let sae = Sae::init(sae_config, cfg.seed)?;
        Self::with_network(sae, cfg)
    }

    pub fn with_network(sae: Sae<f32>, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let adam = Adam::new(
            AdamConfig { lr: cfg.learning_rate, ..AdamConfig::default() },
            sae.params().tensors.iter().map(|t| t.data.len()),
        );
        let rng = crate::rng::stream_rng(cfg.seed, &[0x7a1]);
        Ok(Self { sae, cfg, adam, rng, epoch: 0, history: Vec::new() })
    }

    /// Rebuilds a trainer at a saved position.
    pub fn resume(
        sae: Sae<f32>,
        cfg: TrainConfig,
        adam: Adam,
        rng: RngState,
        epoch: u64,
        history: Vec<EpochLoss>,
    ) -> Result<Self> {
        cfg.validate()?;
        if adam.m.len() != sae.params().tensors.len()
            || adam.m.iter().zip(&sae.params().tensors).any(|(m, t)| m.len() != t.data.len())
        {
            return Err(Error::shape("optimizer state does not match parameters"));
        }
        let mut adam = adam;
        adam.config.lr = cfg.learning_rate;
        Ok(Self { sae, cfg, adam, rng: rng.restore(), epoch, history })
    }

    pub fn network(&self) -> &Sae<f32> {
        &self.sae
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn adam(&self) -> &Adam {
        &self.adam
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    pub fn history(&self) -> &[EpochLoss] {
        &self.history
    }

    pub fn rng_state(&self) -> RngState {
        RngState::capture(&self.rng)
    }

    /// One optimisation step on `batch`, starting each sample from the
    /// matching entry of `states`. Returns the per-sample losses.
    pub fn step_batch(&mut self, batch: &[&TrainSample], states: &mut [NetState<f32>]) -> Result<Vec<f64>> {
        if batch.is_empty() {
            return Err(Error::invalid("empty batch"));
        }
        let sae = &self.sae;
        let cfg = &self.cfg;
        let spike_fn = SpikeFn::Hard;
        let results: Vec<Result<(f64, Option<Vec<Vec<f32>>>)>> = batch
            .par_iter()
            .zip(states.par_iter_mut())
            .map(|(s, st)| sample_loss(sae, s, cfg, spike_fn, st, true))
            .collect();
        let mut losses = Vec::with_capacity(batch.len());
        let mut total: Vec<Vec<f32>> = sae.params().tensors.iter().map(|t| vec![0.0; t.data.len()]).collect();
        for (k, r) in results.into_iter().enumerate() {
            let (loss, g) = r.map_err(|e| match e {
                Error::Numeric(m) => Error::Numeric(format!("epoch {} batch sample {k}: {m}", self.epoch + 1)),
                other => other,
            })?;
            losses.push(loss);
            for (a, b) in total.iter_mut().zip(g.unwrap()) {
                a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
            }
        }
        let scale = 1.0 / batch.len() as f32;
        for g in &mut total {
            g.iter_mut().for_each(|v| *v *= scale);
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!("non-finite gradient in epoch {}", self.epoch + 1)));
            }
        }
        let mut views: Vec<&mut [f32]> = self.sae.params_mut().tensors.iter_mut().map(|t| &mut t.data[..]).collect();
        self.adam.update(&mut views, &total);
        Ok(losses)
    }

    /// Trains one epoch and evaluates `val` afterwards.
    pub fn train_epoch(&mut self, train: &[TrainSample], val: &[TrainSample]) -> Result<EpochLoss> {
        if train.is_empty() {
            return Err(Error::invalid("empty training set"));
        }
        let mut order: Vec<usize> = (0..train.len()).collect();
        if self.cfg.shuffle {
            order.shuffle(&mut self.rng);
        }
        let bs = self.cfg.batch_size;
        let mut slots: Vec<NetState<f32>> = (0..bs).map(|_| self.sae.zero_state()).collect();
        let mut sum = 0.0;
        for chunk in order.chunks(bs) {
            let batch: Vec<&TrainSample> = chunk.iter().map(|&i| &train[i]).collect();
            if self.cfg.membrane_persistence == Persistence::ResetPerSample {
                slots.iter_mut().for_each(|s| *s = self.sae.zero_state());
            }
            let losses = self.step_batch(&batch, &mut slots[..batch.len()])?;
            sum += losses.iter().sum::<f64>();
        }
        self.epoch += 1;
        let val_loss = if val.is_empty() {
            None
        } else {
            let l = evaluate_losses(&self.sae, val, &self.cfg)?;
            Some(l.iter().sum::<f64>() / l.len() as f64)
        };
        let rec = EpochLoss { epoch: self.epoch, train_loss: sum / train.len() as f64, val_loss };
        self.history.push(rec);
        Ok(rec)
    }

    /// Trains until the configured epoch count, calling `on_epoch` after each.
    pub fn fit<C>(&mut self, train: &[TrainSample], val: &[TrainSample], mut on_epoch: C) -> Result<()>
    where
        C: FnMut(&Trainer, &EpochLoss) -> Result<()>,
    {
        while self.epoch < self.cfg.epochs {
            let rec = self.train_epoch(train, val)?;
            on_epoch(self, &rec)?;
        }
        Ok(())
    }

    pub fn into_network(self) -> Sae<f32> {
        self.sae
    }
}

/// Trains from `initial` parameters and returns the network and loss history.
pub fn bptt_train(
    sae: Sae<f32>,
    train: &[TrainSample],
    val: &[TrainSample],
    cfg: &TrainConfig,
) -> Result<(Sae<f32>, Vec<EpochLoss>)> {
    let mut tr = Trainer::with_network(sae, cfg.clone())?;
    tr.fit(train, val, |_, _| Ok(()))?;
    let hist = tr.history.clone();
    Ok((tr.into_network(), hist))
}

/// Writes `epoch,train_loss,val_loss` rows.
pub fn write_loss_csv<W: std::io::Write>(history: &[EpochLoss], mut w: W) -> Result<()> {
    writeln!(w, "epoch,train_loss,val_loss")?;
    for h in history {
        match h.val_loss {
            Some(v) => writeln!(w, "{},{:e},{:e}", h.epoch, h.train_loss, v)?,
            None => writeln!(w, "{},{:e},", h.epoch, h.train_loss)?,
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::events::BinMode;
    use crate::snn::ConvSpec;

    pub(crate) fn small_config() -> SaeConfig {
        SaeConfig {
            input_shape: [2, 8, 8],
            encoder: vec![ConvSpec::k3s2(4)],
            latent_dim: 8,
            ..SaeConfig::default()
        }
    }

    fn sample(seed: usize, steps: usize) -> TrainSample {
        let mut t = SpikeTensor::zeros(steps, 8, 8, BinMode::Binary, 1.0);
        let mut img = vec![0.0f32; 64];
        for y in 2..6 {
            for x in (seed % 3)..(seed % 3 + 4) {
                img[y * 8 + x] = 1.0;
                for s in 0..steps {
                    if (s + x + y + seed).is_multiple_of(3) {
                        t.add(0, s, y, x);
                    }
                }
            }
        }
        TrainSample { input: t, target: Target::Image(img) }
    }

    fn cfg(steps: usize) -> TrainConfig {
        TrainConfig { steps, batch_size: 2, epochs: 3, learning_rate: 5e-3, ..TrainConfig::default() }
    }

    #[test]
    fn zero_learning_rate_keeps_params() {
        let data: Vec<TrainSample> = (0..3).map(|k| sample(k, 6)).collect();
        let mut c = cfg(6);
        c.learning_rate = 0.0;
        let mut tr = Trainer::new(small_config(), c).unwrap();
        let before = tr.network().params().clone();
        tr.fit(&data, &[], |_, _| Ok(())).unwrap();
        assert_eq!(tr.network().params(), &before);
        assert_eq!(tr.history().len(), 3);
    }

    #[test]
    fn deterministic_history() {
        let data: Vec<TrainSample> = (0..5).map(|k| sample(k, 6)).collect();
        let run = || {
            let mut tr = Trainer::new(small_config(), cfg(6)).unwrap();
            tr.fit(&data, &data[..2], |_, _| Ok(())).unwrap();
            tr.history().to_vec()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn mismatched_target_is_rejected() {
        let mut s = sample(0, 4);
        s.target = Target::Spikes(s.input.clone());
        let mut tr = Trainer::new(small_config(), cfg(4)).unwrap();
        assert!(tr.train_epoch(&[s], &[]).is_err());
        let mut tr = Trainer::new(small_config(), cfg(5)).unwrap();
        assert!(matches!(tr.train_epoch(&[sample(0, 4)], &[]), Err(Error::Shape(_))));
    }

    #[test]
    fn persistence_changes_later_samples_only() {
        let data: Vec<TrainSample> = (0..4).map(|k| sample(k, 6)).collect();
        let mut c = cfg(6);
        c.batch_size = 1;
        c.shuffle = false;
        c.learning_rate = 0.0;
        let mut a = Trainer::new(small_config(), c.clone()).unwrap();
        c.membrane_persistence = Persistence::PersistAcrossSamples;
        let mut b = Trainer::new(small_config(), c).unwrap();
        let sa = a.network().clone();
        let mut st: Vec<NetState<f32>> = vec![sa.zero_state()];
        let la = a.step_batch(&[&data[0]], &mut st).unwrap();
        let mut st2 = vec![b.network().zero_state()];
        let lb = b.step_batch(&[&data[0]], &mut st2).unwrap();
        assert_eq!(la, lb);
        assert_ne!(st2[0], b.network().zero_state());
    }

    #[test]
    fn loss_csv_layout() {
        let h = [EpochLoss { epoch: 1, train_loss: 0.5, val_loss: Some(0.25) }, EpochLoss { epoch: 2, train_loss: 0.125, val_loss: None }];
        let mut buf = Vec::new();
        write_loss_csv(&h, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "epoch,train_loss,val_loss\n1,5e-1,2.5e-1\n2,1.25e-1,\n");
    }
}
