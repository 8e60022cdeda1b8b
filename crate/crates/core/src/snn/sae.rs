use std::io::{BufRead, Write};

use rand::distributions::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use super::layers::conv_out;
use super::lif::lif_update;
use super::{Layer, LayerGeom, LifConfig, LifState, Real, SpatialMap, SpikeFn};
use crate::error::{Error, Result};
use crate::events::SpikeTensor;
use crate::rng::stream_rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvSpec {
    pub channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvSpec {
    pub fn k3s2(channels: usize) -> Self {
        Self { channels, kernel: 3, stride: 2, padding: 1 }
    }
}

/// Autoencoder topology. The decoder mirrors the encoder with transposed
/// convolutions so the output has the input's shape.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SaeConfig {
    /// `[channels, height, width]`.
    pub input_shape: [usize; 3],
    pub encoder: Vec<ConvSpec>,
    pub latent_dim: usize,
    /// Hidden-layer neurons.
    pub lif: LifConfig,
    /// Output-layer threshold; large values make it a pure accumulator.
    pub theta_out: f64,
    /// Scale on the uniform fan-in initialisation bound `sqrt(6 / fan_in)`.
    /// The synaptic and membrane leaks integrate input over many steps, so
    /// unit gain drives most hidden neurons into saturation or silence.
    pub init_gain: f64,
}

impl Default for SaeConfig {
    fn default() -> Self {
        Self {
            input_shape: [2, 64, 64],
            encoder: vec![ConvSpec::k3s2(32), ConvSpec::k3s2(64), ConvSpec::k3s2(128)],
            latent_dim: 128,
            lif: LifConfig::default(),
            theta_out: 1e6,
            init_gain: 0.3,
        }
    }
}

impl SaeConfig {
    /// Default network for square `size`×`size` inputs: 64 keeps three encoder
    /// stages, 32 drops the first.
    pub fn for_input(size: usize) -> Self {
        let mut cfg = Self { input_shape: [2, size, size], ..Self::default() };
        if size == 32 {
            cfg.encoder = vec![ConvSpec::k3s2(64), ConvSpec::k3s2(128)];
        }
        cfg
    }

    /// Output-layer spiking configuration.
    pub fn output_lif(&self) -> LifConfig {
        LifConfig { theta: self.theta_out, ..self.lif }
    }

    /// Builds the layer stack.
    pub fn layers(&self) -> Result<Vec<Layer>> {
        self.lif.validate()?;
        if !(self.theta_out > 0.0) || !(self.init_gain > 0.0) {
            return Err(Error::Config("theta_out and init_gain must be positive".into()));
        }
        let [c0, h0, w0] = self.input_shape;
        if c0 == 0 || h0 == 0 || w0 == 0 || self.latent_dim == 0 || self.encoder.is_empty() {
            return Err(Error::Config("network dimensions must be positive".into()));
        }
        let mut shapes = vec![(c0, h0, w0)];
        let mut layers = Vec::new();
        for (k, spec) in self.encoder.iter().enumerate() {
            let (c, h, w) = *shapes.last().unwrap();
            if spec.channels == 0 {
                return Err(Error::Config("conv channels must be positive".into()));
            }
            let (map, oh, ow) = SpatialMap::conv(h, w, spec.kernel, spec.stride, spec.padding)?;
            layers.push(Layer {
                name: format!("enc{k}"),
                geom: LayerGeom { in_ch: c, in_h: h, in_w: w, out_ch: spec.channels, out_h: oh, out_w: ow },
                map,
                lif: self.lif,
            });
            shapes.push((spec.channels, oh, ow));
        }
        let (c, h, w) = *shapes.last().unwrap();
        let flat = c * h * w;
        let dense = |name: &str, nin: usize, nout: usize| Layer {
            name: name.into(),
            geom: LayerGeom { in_ch: nin, in_h: 1, in_w: 1, out_ch: nout, out_h: 1, out_w: 1 },
            map: SpatialMap::dense(),
            lif: self.lif,
        };
        layers.push(dense("latent", flat, self.latent_dim));
        layers.push(dense("dec_dense", self.latent_dim, flat));
        let n = self.encoder.len();
        for j in 0..n {
            let spec = self.encoder[n - 1 - j];
            let (ci, ih, iw) = shapes[n - j];
            let (co, th, tw) = shapes[n - 1 - j];
            for (inp, target) in [(ih, th), (iw, tw)] {
                let base = ((inp - 1) * spec.stride + spec.kernel) as isize - 2 * spec.padding as isize;
                let extra = target as isize - base;
                if extra < 0 || extra >= spec.stride.max(1) as isize {
                    return Err(Error::Config(format!("decoder cannot restore size {target} from {inp}")));
                }
            }
            let map = SpatialMap::deconv(ih, iw, spec.kernel, spec.stride, spec.padding, th, tw);
            let last = j == n - 1;
            layers.push(Layer {
                name: format!("dec{j}"),
                geom: LayerGeom { in_ch: ci, in_h: ih, in_w: iw, out_ch: co, out_h: th, out_w: tw },
                map,
                lif: if last { self.output_lif() } else { self.lif },
            });
        }
        Ok(layers)
    }

    /// Width of the flattened encoder output.
    pub fn pre_latent_width(&self) -> Result<usize> {
        let [_, mut h, mut w] = self.input_shape;
        for s in &self.encoder {
            h = conv_out(h, s.kernel, s.stride, s.padding)?;
            w = conv_out(w, s.kernel, s.stride, s.padding)?;
        }
        Ok(self.encoder.last().map_or(0, |s| s.channels) * h * w)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamTensor<F = f32> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<F>,
}

/// Weights and biases, two tensors per layer in layer order.
#[derive(Clone, Debug, PartialEq)]
pub struct SaeParams<F = f32> {
    pub tensors: Vec<ParamTensor<F>>,
}

impl<F: Real> SaeParams<F> {
    pub fn zeros_for(layers: &[Layer]) -> Self {
        let mut tensors = Vec::with_capacity(layers.len() * 2);
        for l in layers {
            tensors.push(ParamTensor {
                name: format!("{}.weight", l.name),
                shape: l.weight_shape(),
                data: vec![F::zero(); l.weight_len()],
            });
            tensors.push(ParamTensor {
                name: format!("{}.bias", l.name),
                shape: vec![l.geom.out_ch],
                data: vec![F::zero(); l.geom.out_ch],
            });
        }
        Self { tensors }
    }

    /// Uniform fan-in weights and zero biases, one random stream per layer.
    pub fn init(layers: &[Layer], gain: f64, seed: u64) -> Self {
        let mut p = Self::zeros_for(layers);
        for (k, l) in layers.iter().enumerate() {
            let bound = gain * (6.0 / l.fan_in() as f64).sqrt();
            let dist = Uniform::new_inclusive(-bound, bound);
            let mut rng = stream_rng(seed, &[0x5ae, k as u64]);
            for v in &mut p.tensors[2 * k].data {
                *v = F::lit(dist.sample(&mut rng));
            }
        }
        p
    }

    pub fn cast<G: Real>(&self) -> SaeParams<G> {
        SaeParams {
            tensors: self
                .tensors
                .iter()
                .map(|t| ParamTensor {
                    name: t.name.clone(),
                    shape: t.shape.clone(),
                    data: t.data.iter().map(|v| G::lit(v.to_f64().unwrap())).collect(),
                })
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn check_against(&self, layers: &[Layer]) -> Result<()> {
        let expect = Self::zeros_for(layers);
        if expect.tensors.len() != self.tensors.len() {
            return Err(Error::shape(format!("{} tensors, network needs {}", self.tensors.len(), expect.tensors.len())));
        }
        for (a, b) in self.tensors.iter().zip(&expect.tensors) {
            if a.name != b.name || a.shape != b.shape || a.data.len() != b.data.len() {
                return Err(Error::shape(format!("tensor {} {:?} does not match {} {:?}", a.name, a.shape, b.name, b.shape)));
            }
        }
        if self.tensors.iter().any(|t| t.data.iter().any(|v| !v.is_finite())) {
            return Err(Error::Numeric("non-finite parameter".into()));
        }
        Ok(())
    }
}

/// LIF states of every layer.
#[derive(Clone, Debug, PartialEq)]
pub struct NetState<F = f32> {
    pub layers: Vec<LifState<F>>,
}

/// Values recorded during a step for the backward pass.
#[derive(Clone, Debug, Default)]
pub struct StepTrace<F = f32> {
    pub inputs: Vec<Vec<F>>,
    pub u_pre: Vec<Vec<F>>,
}

/// Result of one forward step, images in `[C, H, W]` order.
#[derive(Clone, Debug, PartialEq)]
pub struct StepOutput<F = f32> {
    pub latent_spikes: Vec<F>,
    pub out_membrane: Vec<F>,
    pub out_spikes: Vec<F>,
}

/// Spiking autoencoder: topology plus parameters.
#[derive(Clone, Debug)]
pub struct Sae<F: Real = f32> {
    config: SaeConfig,
    layers: Vec<Layer>,
    params: SaeParams<F>,
}

impl<F: Real> Sae<F> {
    pub fn new(config: SaeConfig, params: SaeParams<F>) -> Result<Self> {
        let layers = config.layers()?;
        params.check_against(&layers)?;
        Ok(Self { config, layers, params })
    }

    pub fn init(config: SaeConfig, seed: u64) -> Result<Self> {
        let layers = config.layers()?;
        let params = SaeParams::init(&layers, config.init_gain, seed);
        Ok(Self { config, layers, params })
    }

    pub fn config(&self) -> &SaeConfig {
        &self.config
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn params(&self) -> &SaeParams<F> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut SaeParams<F> {
        &mut self.params
    }

    pub fn into_params(self) -> SaeParams<F> {
        self.params
    }

    pub fn latent_index(&self) -> usize {
        self.config.encoder.len()
    }

    pub fn zero_state(&self) -> NetState<F> {
        NetState { layers: self.layers.iter().map(|l| LifState::zeros(l.geom.out_len())).collect() }
    }

    /// Input length of one step, `C·H·W`.
    pub fn frame_len(&self) -> usize {
        self.config.input_shape.iter().product()
    }

    /// One step on a pixel-major input; returns latent spikes and the output
    /// layer's membrane and spikes, pixel-major.
    pub(crate) fn step_hwc(
        &self,
        x: Vec<F>,
        state: &mut NetState<F>,
        spike_fn: SpikeFn,
        mut trace: Option<&mut StepTrace<F>>,
    ) -> Result<(Vec<F>, Vec<F>, Vec<F>)> {
        let mut act = x;
        let mut latent = Vec::new();
        for (k, layer) in self.layers.iter().enumerate() {
            let n = layer.geom.out_len();
            let mut current = vec![F::zero(); n];
            layer.forward(&self.params.tensors[2 * k].data, &self.params.tensors[2 * k + 1].data, &act, &mut current);
            let mut u_pre = vec![F::zero(); n];
            let mut spikes = vec![F::zero(); n];
            lif_update(&mut state.layers[k], &current, &layer.lif, spike_fn, &mut u_pre, &mut spikes);
            if u_pre.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!("non-finite membrane in layer {}", layer.name)));
            }
            if k == self.latent_index() {
                latent = spikes.clone();
            }
            if let Some(tr) = trace.as_deref_mut() {
                tr.inputs.push(std::mem::replace(&mut act, spikes));
                tr.u_pre.push(u_pre);
            } else {
                act = spikes;
            }
        }
        let out_u = state.layers.last().unwrap().u.clone();
        Ok((latent, out_u, act))
    }

    /// One forward step on a `[2, H, W]` frame with hard spikes.
    pub fn forward_step(&self, x: &[F], state: &mut NetState<F>) -> Result<StepOutput<F>> {
        let [c, h, w] = self.config.input_shape;
        if x.len() != c * h * w {
            return Err(Error::shape(format!("frame of {} values, expected {}", x.len(), c * h * w)));
        }
        if state.layers.len() != self.layers.len() {
            return Err(Error::shape("state does not match network"));
        }
        let (latent, u, s) = self.step_hwc(chw_to_hwc(x, c, h, w), state, SpikeFn::Hard, None)?;
        Ok(StepOutput { latent_spikes: latent, out_membrane: hwc_to_chw(&u, c, h, w), out_spikes: hwc_to_chw(&s, c, h, w) })
    }

    /// Runs all steps of `input` from `state`, returning per-step outputs.
    pub fn run(&self, input: &SpikeTensor, state: &mut NetState<F>) -> Result<Vec<StepOutput<F>>> {
        let [c, h, w] = self.config.input_shape;
        if c != 2 || input.height() != h || input.width() != w {
            return Err(Error::shape(format!(
                "tensor {}x{} does not match network input {c}x{h}x{w}",
                input.height(),
                input.width()
            )));
        }
        (0..input.steps())
            .map(|t| {
                let frame: Vec<F> = input.step_frame(t).into_iter().map(|v| F::lit(v as f64)).collect();
                self.forward_step(&frame, state)
            })
            .collect()
    }

    /// Reconstructed image from a fresh state.
    pub fn reconstruct(&self, input: &SpikeTensor) -> Result<(Vec<f32>, Vec<StepOutput<F>>)> {
        let mut state = self.zero_state();
        let outs = self.run(input, &mut state)?;
        let traces: Vec<Vec<F>> = outs.iter().map(|o| o.out_membrane.clone()).collect();
        let img = accumulate_membrane(&traces, input.height(), input.width());
        Ok((img, outs))
    }
}

/// Runs a single synaptic layer and its LIF population on pixel-major spikes.
pub fn conv_spike_layer<F: Real>(
    layer: &Layer,
    weight: &[F],
    bias: &[F],
    spikes_in: &[F],
    state: &mut LifState<F>,
) -> Result<Vec<F>> {
    if spikes_in.len() != layer.geom.in_len()
        || weight.len() != layer.weight_len()
        || bias.len() != layer.geom.out_ch
        || state.len() != layer.geom.out_len()
    {
        return Err(Error::shape(format!("layer {} called with mismatched shapes", layer.name)));
    }
    let mut current = vec![F::zero(); layer.geom.out_len()];
    layer.forward(weight, bias, spikes_in, &mut current);
    let mut u_pre = vec![F::zero(); current.len()];
    let mut spikes = vec![F::zero(); current.len()];
    lif_update(state, &current, &layer.lif, SpikeFn::Hard, &mut u_pre, &mut spikes);
    Ok(spikes)
}

pub fn chw_to_hwc<F: Copy>(x: &[F], c: usize, h: usize, w: usize) -> Vec<F> {
    let mut out = Vec::with_capacity(x.len());
    for p in 0..h * w {
        for ch in 0..c {
            out.push(x[ch * h * w + p]);
        }
    }
    out
}

pub fn hwc_to_chw<F: Copy + Default>(x: &[F], c: usize, h: usize, w: usize) -> Vec<F> {
    let mut out = vec![F::default(); x.len()];
    for p in 0..h * w {
        for ch in 0..c {
            out[ch * h * w + p] = x[p * c + ch];
        }
    }
    out
}

/// Rescales to [0, 1]; a constant input maps to zeros.
pub fn min_max_normalize(v: &[f64]) -> Vec<f64> {
    let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = hi - lo;
    if !(range > 1e-12 * hi.abs().max(lo.abs()).max(1e-300)) {
        return vec![0.0; v.len()];
    }
    v.iter().map(|x| (x - lo) / range).collect()
}

/// Sums the ON channel of per-step `[2, H, W]` output membranes and
/// normalises the result.
pub fn accumulate_membrane<F: Real>(traces: &[Vec<F>], height: usize, width: usize) -> Vec<f32> {
    let n = height * width;
    let mut sum = vec![0.0f64; n];
    for tr in traces {
        for (s, v) in sum.iter_mut().zip(&tr[..n]) {
            *s += v.to_f64().unwrap();
        }
    }
    min_max_normalize(&sum).into_iter().map(|v| v as f32).collect()
}

/// Binary `[T][latent]` table.
pub fn export_latent<F: Real>(latent: &[Vec<F>]) -> Vec<Vec<u8>> {
    latent.iter().map(|row| row.iter().map(|&v| u8::from(v > F::lit(0.5))).collect()).collect()
}

pub fn write_latent_csv<W: Write>(table: &[Vec<u8>], mut w: W) -> Result<()> {
    let width = table.first().map_or(0, Vec::len);
    let header: Vec<String> = (0..width).map(|k| format!("neuron_{k}")).collect();
    writeln!(w, "{}", header.join(","))?;
    for row in table {
        if row.len() != width {
            return Err(Error::shape("ragged latent table"));
        }
        let cells: Vec<&str> = row.iter().map(|&v| if v == 0 { "0" } else { "1" }).collect();
        writeln!(w, "{}", cells.join(","))?;
    }
    Ok(())
}

pub fn read_latent_csv<R: BufRead>(r: R) -> Result<Vec<Vec<u8>>> {
    let mut lines = r.lines();
    let header = lines.next().ok_or_else(|| Error::format("empty latent CSV"))??;
    let width = if header.trim().is_empty() { 0 } else { header.split(',').count() };
    for (k, name) in header.split(',').enumerate().filter(|_| width > 0) {
        if name.trim() != format!("neuron_{k}") {
            return Err(Error::format(format!("unexpected latent column {name:?}")));
        }
    }
    let mut table = Vec::new();
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let row = line
            .split(',')
            .map(|c| match c.trim() {
                "0" => Ok(0),
                "1" => Ok(1),
                other => Err(Error::format(format!("latent cell {other:?} is not 0 or 1"))),
            })
            .collect::<Result<Vec<u8>>>()?;
        if row.len() != width {
            return Err(Error::format("latent row width differs from header"));
        }
        table.push(row);
    }
    Ok(table)
}
