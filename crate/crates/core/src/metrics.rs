//! Image-quality metrics, raster export and batch evaluation.

use std::io::Write;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::events::SpikeTensor;
use crate::snn::{export_latent, min_max_normalize};
use crate::train::Checkpoint;

pub use crate::train::membrane_mse as mse_metric;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SsimConfig {
    /// Odd side length of the Gaussian window.
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
    pub dynamic_range: f64,
}

impl Default for SsimConfig {
    fn default() -> Self {
        Self { window: 7, sigma: 1.5, k1: 0.01, k2: 0.03, dynamic_range: 1.0 }
    }
}

impl SsimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window < 3 || self.window.is_multiple_of(2) {
            return Err(Error::Config("SSIM window must be odd and at least 3".into()));
        }
        if !(self.k1 > 0.0 && self.k2 > 0.0 && self.sigma > 0.0 && self.dynamic_range > 0.0) {
            return Err(Error::Config("SSIM constants must be positive".into()));
        }
        Ok(())
    }

    fn kernel(&self) -> Vec<f64> {
        let r = (self.window / 2) as f64;
        let mut k: Vec<f64> = (0..self.window * self.window)
            .map(|i| {
                let (dy, dx) = ((i / self.window) as f64 - r, (i % self.window) as f64 - r);
                (-(dx * dx + dy * dy) / (2.0 * self.sigma * self.sigma)).exp()
            })
            .collect();
        let s: f64 = k.iter().sum();
        k.iter_mut().for_each(|v| *v /= s);
        k
    }
}

/// Mean SSIM over every window position fully inside the image. Images
/// smaller than the window are compared with a single window covering them.
pub fn ssim(a: &[f32], b: &[f32], height: usize, width: usize, cfg: &SsimConfig) -> Result<f64> {
    cfg.validate()?;
    if a.len() != height * width || b.len() != a.len() {
        return Err(Error::shape(format!("images of {} and {} pixels for {height}x{width}", a.len(), b.len())));
    }
    let c1 = (cfg.k1 * cfg.dynamic_range).powi(2);
    let c2 = (cfg.k2 * cfg.dynamic_range).powi(2);
    let n = cfg.window;
    let (kernel, wh, ww) = if height >= n && width >= n {
        (cfg.kernel(), n, n)
    } else {
        (vec![1.0 / (height * width) as f64; height * width], height, width)
    };
    let mut total = 0.0;
    let mut count = 0usize;
    for y0 in 0..=height - wh {
        for x0 in 0..=width - ww {
            let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for dy in 0..wh {
                for dx in 0..ww {
                    let k = kernel[dy * ww + dx];
                    let p = (y0 + dy) * width + x0 + dx;
                    let (va, vb) = (a[p] as f64, b[p] as f64);
                    ma += k * va;
                    mb += k * vb;
                    saa += k * va * va;
                    sbb += k * vb * vb;
                    sab += k * va * vb;
                }
            }
            let (va, vb, cov) = (saa - ma * ma, sbb - mb * mb, sab - ma * mb);
            total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// Min-max normalised `f32` image.
pub fn normalize_image(img: &[f32]) -> Vec<f32> {
    let v: Vec<f64> = img.iter().map(|&x| x as f64).collect();
    min_max_normalize(&v).into_iter().map(|x| x as f32).collect()
}

/// Writes `(set_name, neuron, step)` rows for every spike of every set,
/// with `neuron = y·W + x` over both polarity channels.
pub fn raster_export<W: Write>(sets: &[(&str, &SpikeTensor)], mut w: W) -> Result<()> {
    writeln!(w, "set_name,neuron,step")?;
    for (name, t) in sets {
        if name.contains(',') || name.contains('\n') {
            return Err(Error::invalid(format!("raster set name {name:?} contains a separator")));
        }
        for step in 0..t.steps() {
            for y in 0..t.height() {
                for x in 0..t.width() {
                    if t.get(0, step, y, x) + t.get(1, step, y, x) > 0 {
                        writeln!(w, "{name},{},{step}", y * t.width() + x)?;
                    }
                }
            }
        }
    }
    Ok(())
}

/// Per-sample evaluation input.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalSample {
    pub id: String,
    pub input: SpikeTensor,
    pub target: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleScores {
    pub sample_id: String,
    pub ssim_input: f64,
    pub mse_input: f64,
    pub ssim_recon: f64,
    pub mse_recon: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub samples: Vec<SampleScores>,
    pub mean_ssim_input: f64,
    pub mean_mse_input: f64,
    pub mean_ssim_recon: f64,
    pub mean_mse_recon: f64,
    pub config_digest: Option<String>,
}

impl EvalReport {
    pub fn from_samples(samples: Vec<SampleScores>, config_digest: Option<String>) -> Self {
        let n = samples.len().max(1) as f64;
        let mean = |f: fn(&SampleScores) -> f64| samples.iter().map(f).sum::<f64>() / n;
        Self {
            mean_ssim_input: mean(|s| s.ssim_input),
            mean_mse_input: mean(|s| s.mse_input),
            mean_ssim_recon: mean(|s| s.ssim_recon),
            mean_mse_recon: mean(|s| s.mse_recon),
            samples,
            config_digest,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "sample_id,ssim_input,mse_input,ssim_recon,mse_recon")?;
        for s in &self.samples {
            writeln!(w, "{},{:.6},{:.6},{:.6},{:.6}", s.sample_id, s.ssim_input, s.mse_input, s.ssim_recon, s.mse_recon)?;
        }
        writeln!(
            w,
            "mean,{:.6},{:.6},{:.6},{:.6}",
            self.mean_ssim_input, self.mean_mse_input, self.mean_ssim_recon, self.mean_mse_recon
        )?;
        Ok(())
    }
}

/// Images and latent activity produced for one sample.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleOutput {
    pub input_image: Vec<f32>,
    pub recon_image: Vec<f32>,
    pub latent: Vec<Vec<u8>>,
    pub output_spikes: SpikeTensor,
    pub elapsed_ms: f64,
}

/// Input image of a spike tensor: the normalised ON-channel spike count.
pub fn input_image(t: &SpikeTensor) -> Vec<f32> {
    normalize_image(&t.channel_sum(0))
}

/// Scores a reconstruction and the raw input against the target.
pub fn score(id: &str, input: &[f32], recon: &[f32], target: &[f32], h: usize, w: usize, cfg: &SsimConfig) -> Result<SampleScores> {
    Ok(SampleScores {
        sample_id: id.to_string(),
        ssim_input: ssim(input, target, h, w, cfg)?,
        mse_input: mse_metric(input, target)?,
        ssim_recon: ssim(recon, target, h, w, cfg)?,
        mse_recon: mse_metric(recon, target)?,
    })
}

/// Runs inference on every sample and scores it. Fails if the checkpoint
/// was trained on differently preprocessed data.
pub fn evaluate_batch(
    ckpt: &Checkpoint,
    test: &[EvalSample],
    test_digest: Option<&str>,
    cfg: &SsimConfig,
) -> Result<(EvalReport, Vec<SampleOutput>)> {
    if let (Some(a), Some(b)) = (ckpt.preprocess_digest.as_deref(), test_digest) {
        if a != b {
            return Err(Error::Config(format!("preprocessing digest {b} differs from the checkpoint's {a}")));
        }
    }
    let sae = ckpt.network()?;
    let results: Vec<Result<(SampleScores, SampleOutput)>> = test
        .par_iter()
        .map(|s| {
            let (h, w) = (s.input.height(), s.input.width());
            let start = Instant::now();
            let (recon, outs) = sae.reconstruct(&s.input)?;
            let elapsed_ms = start.elapsed().as_secs_f64() * 1e3;
            let input = input_image(&s.input);
            let target = normalize_target(&s.target);
            let scores = score(&s.id, &input, &recon, &target, h, w, cfg)?;
            let mut spikes = SpikeTensor::zeros(outs.len(), h, w, crate::events::BinMode::Binary, s.input.dt_us());
            for (t, o) in outs.iter().enumerate() {
                for (k, &v) in o.out_spikes.iter().enumerate() {
                    if v > 0.5 {
                        spikes.add(k / (h * w), t, (k % (h * w)) / w, k % w);
                    }
                }
            }
            let latent: Vec<Vec<f32>> = outs.iter().map(|o| o.latent_spikes.clone()).collect();
            log::info!("sample {}: inference {:.2} ms", s.id, elapsed_ms);
            Ok((scores, SampleOutput { input_image: input, recon_image: recon, latent: export_latent(&latent), output_spikes: spikes, elapsed_ms }))
        })
        .collect();
    let mut scores = Vec::with_capacity(test.len());
    let mut outputs = Vec::with_capacity(test.len());
    for r in results {
        let (s, o) = r?;
        scores.push(s);
        outputs.push(o);
    }
    Ok((EvalReport::from_samples(scores, ckpt.preprocess_digest.clone()), outputs))
}

/// Targets already in [0, 1] are kept; anything else is rescaled.
fn normalize_target(t: &[f32]) -> Vec<f32> {
    if t.iter().all(|v| (0.0..=1.0).contains(v)) {
        t.to_vec()
    } else {
        normalize_image(t)
    }
}

/// Plain `P2` grid with one row per sample and the given images as columns.
pub fn write_pgm_grid<W: Write>(rows: &[Vec<&[f32]>], height: usize, width: usize, mut w: W) -> Result<()> {
    let cols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != cols || r.iter().any(|img| img.len() != height * width)) {
        return Err(Error::shape("grid images differ in size"));
    }
    let gap = 1;
    let gw = cols * width + cols.saturating_sub(1) * gap;
    let gh = rows.len() * height + rows.len().saturating_sub(1) * gap;
    writeln!(w, "P2\n{gw} {gh}\n255")?;
    for gy in 0..gh {
        let (r, y) = (gy / (height + gap), gy % (height + gap));
        let mut line = Vec::with_capacity(gw);
        for gx in 0..gw {
            let (c, x) = (gx / (width + gap), gx % (width + gap));
            let v = if y >= height || x >= width { 128 } else { (rows[r][c][y * width + x].clamp(0.0, 1.0) * 255.0).round() as u32 };
            line.push(v.to_string());
        }
        writeln!(w, "{}", line.join(" "))?;
    }
    Ok(())
}
