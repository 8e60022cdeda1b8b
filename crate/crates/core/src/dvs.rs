//! Dynamic vision sensor emulation.
//!
//! Every pixel is an independent state machine holding the log intensity at
//! its last event. Whenever the current log intensity departs from that
//! memory by a whole number of contrast thresholds, the pixel emits that many
//! events and advances its memory by the same multiple, keeping the
//! sub-threshold residual.

use rand::Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::events::{Event, EventStream, Polarity, Trigger};
use crate::rng::stream_rng;
use crate::scatter::IntensityFrame;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DvsConfig {
    /// Log-intensity step per event, `ln(1 + percent / 100)`.
    pub contrast_threshold: f64,
    /// Relative standard deviation of the per-pixel threshold.
    pub threshold_mismatch_sigma: f64,
    /// Noise events per pixel per second.
    pub background_rate_hz: f64,
    pub refractory_us: u64,
    /// Added to intensities before taking the log.
    pub intensity_floor: f64,
}

impl Default for DvsConfig {
    fn default() -> Self {
        Self {
            contrast_threshold: 1.25f64.ln(),
            threshold_mismatch_sigma: 0.02,
            background_rate_hz: 0.1,
            refractory_us: 220,
            intensity_floor: 1e-2,
        }
    }
}

impl DvsConfig {
    /// Noise-free, mismatch-free, refractory-free sensor.
    pub fn ideal(contrast_threshold: f64) -> Self {
        Self {
            contrast_threshold,
            threshold_mismatch_sigma: 0.0,
            background_rate_hz: 0.0,
            refractory_us: 0,
            intensity_floor: 1e-9,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.contrast_threshold > 0.0) {
            return Err(Error::Config("contrast threshold must be positive".into()));
        }
        if !(self.threshold_mismatch_sigma >= 0.0 && self.background_rate_hz >= 0.0) {
            return Err(Error::Config("mismatch sigma and background rate must be non-negative".into()));
        }
        if !(self.intensity_floor > 0.0) {
            return Err(Error::Config("intensity floor must be positive".into()));
        }
        Ok(())
    }
}

/// Sets the contrast threshold from a percentage change in intensity.
pub fn set_threshold_percent(cfg: &DvsConfig, percent: f64) -> Result<DvsConfig> {
    if !(percent > 0.0 && percent < 100.0) {
        return Err(Error::invalid(format!("threshold {percent}% outside (0, 100)")));
    }
    Ok(DvsConfig { contrast_threshold: (1.0 + percent / 100.0).ln(), ..cfg.clone() })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PixelState {
    pub log_memory: f64,
    pub last_event_t: Option<u64>,
}

fn pixel_events(
    frames: &[IntensityFrame],
    idx: usize,
    cfg: &DvsConfig,
    seed: u64,
) -> Vec<(u64, Polarity)> {
    let mut rng = stream_rng(seed, &[idx as u64]);
    let mismatch: f64 = rng.sample(StandardNormal);
    let theta = cfg.contrast_threshold * (1.0 + cfg.threshold_mismatch_sigma * mismatch).max(0.05);
    let floor = cfg.intensity_floor;
    let log_i = |f: &IntensityFrame| (f.pixels[idx] as f64 + floor).ln();

    let mut state = PixelState { log_memory: log_i(&frames[0]), last_event_t: None };
    let mut crossings = Vec::new();
    for pair in frames.windows(2) {
        let (l0, l1) = (log_i(&pair[0]), log_i(&pair[1]));
        let delta = l1 - state.log_memory;
        let count = (delta.abs() / theta).floor() as u64;
        if count == 0 {
            continue;
        }
        let sign = delta.signum();
        let polarity = if sign > 0.0 { Polarity::On } else { Polarity::Off };
        let (t0, t1) = (pair[0].t_us as f64, pair[1].t_us as f64);
        for j in 1..=count {
            let level = state.log_memory + sign * j as f64 * theta;
            let frac = if l1 != l0 { ((level - l0) / (l1 - l0)).clamp(0.0, 1.0) } else { 1.0 };
            crossings.push(((t0 + frac * (t1 - t0)).floor() as u64, polarity));
        }
        state.log_memory += sign * count as f64 * theta;
    }

    if cfg.background_rate_hz > 0.0 {
        let (start, end) = (frames[0].t_us, frames[frames.len() - 1].t_us);
        let gap = Exp::new(cfg.background_rate_hz * 1e-6).expect("positive rate");
        let mut t = start as f64;
        loop {
            t += gap.sample(&mut rng);
            if t > end as f64 {
                break;
            }
            let p = if rng.gen::<bool>() { Polarity::On } else { Polarity::Off };
            crossings.push((t.floor() as u64, p));
        }
    }
    crossings.sort_by_key(|&(t, p)| (t, p));

    let mut out = Vec::with_capacity(crossings.len());
    for (t, p) in crossings {
        if let Some(last) = state.last_event_t {
            if t - last < cfg.refractory_us {
                continue;
            }
        }
        state.last_event_t = Some(t);
        out.push((t, p));
    }
    out
}

/// Converts time-sorted intensity frames into a polarity event stream.
///
/// Event times are interpolated linearly in log intensity between frame
/// timestamps, Poisson background events are superposed, and the per-pixel
/// refractory period is applied to the merged train. `triggers` are copied
/// into the output stream.
pub fn emulate(
    frames: &[IntensityFrame],
    triggers: &[Trigger],
    cfg: &DvsConfig,
    seed: u64,
) -> Result<EventStream> {
    cfg.validate()?;
    let first = frames.first().ok_or_else(|| Error::invalid("emulation needs at least one frame"))?;
    let (h, w) = (first.height, first.width);
    if frames.iter().any(|f| f.height != h || f.width != w || f.pixels.len() != h * w) {
        return Err(Error::shape("all frames must share the sensor geometry"));
    }
    if frames.windows(2).any(|p| p[0].t_us > p[1].t_us) {
        return Err(Error::invalid("frames must be sorted by time"));
    }
    if frames.iter().any(|f| f.pixels.iter().any(|&v| !(v >= 0.0 && v.is_finite()))) {
        return Err(Error::invalid("negative or non-finite intensity"));
    }
    let width = u16::try_from(w).map_err(|_| Error::invalid("sensor width exceeds u16"))?;
    let height = u16::try_from(h).map_err(|_| Error::invalid("sensor height exceeds u16"))?;

    let per_pixel: Vec<Vec<(u64, Polarity)>> =
        (0..h * w).into_par_iter().map(|idx| pixel_events(frames, idx, cfg, seed)).collect();
    let mut events: Vec<Event> = per_pixel
        .iter()
        .enumerate()
        .flat_map(|(idx, evs)| {
            let (x, y) = ((idx % w) as u16, (idx / w) as u16);
            evs.iter().map(move |&(t, p)| Event::new(t, x, y, p))
        })
        .collect();
    events.sort_unstable_by_key(Event::key);
    EventStream::from_unsorted(width, height, events, triggers.to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frames(values: &[f32]) -> Vec<IntensityFrame> {
        values
            .iter()
            .enumerate()
            .map(|(k, &v)| IntensityFrame::new(1, 1, k as u64 * 1000, vec![v]).unwrap())
            .collect()
    }

    #[test]
    fn constant_intensity_is_silent() {
        let s = emulate(&frames(&[0.5; 6]), &[], &DvsConfig::ideal(1.25f64.ln()), 0).unwrap();
        assert!(s.is_empty());
    }

    #[test]
    fn doubling_emits_three_on_events() {
        let s = emulate(&frames(&[1.0, 2.0]), &[], &DvsConfig::ideal(1.25f64.ln()), 0).unwrap();
        assert_eq!(s.len(), 3);
        assert!(s.events().iter().all(|e| e.p == Polarity::On));
        let t: Vec<u64> = s.events().iter().map(|e| e.t).collect();
        // crossings at k·ln1.25 / ln2 of the interval
        let expect: Vec<u64> = (1..=3).map(|k| (1000.0 * k as f64 * 1.25f64.ln() / 2f64.ln()).floor() as u64).collect();
        assert_eq!(t, expect);
    }

    #[test]
    fn step_up_then_down_is_symmetric() {
        let s = emulate(&frames(&[1.0, 3.0, 1.0]), &[], &DvsConfig::ideal(0.2), 0).unwrap();
        let on = s.events().iter().filter(|e| e.p == Polarity::On).count();
        let off = s.events().iter().filter(|e| e.p == Polarity::Off).count();
        assert_eq!(on, (3f64.ln() / 0.2).floor() as usize);
        assert_eq!(on, off);
        assert!(s.events()[..on].iter().all(|e| e.p == Polarity::On));
    }

    #[test]
    fn residual_contrast_carries_over() {
        // two half steps of 0.6θ each add up to one event on the second frame
        let th = 0.2f64;
        let a = 1.0f32;
        let b = (0.6 * th).exp() as f32;
        let c = (1.2 * th).exp() as f32;
        let s = emulate(&frames(&[a, b, c]), &[], &DvsConfig::ideal(th), 0).unwrap();
        assert_eq!(s.len(), 1);
        assert!(s.events()[0].t >= 1000);
    }

    #[test]
    fn refractory_spacing() {
        let cfg = DvsConfig { refractory_us: 300, ..DvsConfig::ideal(0.05) };
        let s = emulate(&frames(&[1.0, 10.0]), &[], &cfg, 0).unwrap();
        assert!(s.len() >= 2);
        for w in s.events().windows(2) {
            assert!(w[1].t - w[0].t >= 300);
        }
    }

    #[test]
    fn background_noise_is_seeded() {
        let cfg = DvsConfig { background_rate_hz: 2000.0, ..DvsConfig::ideal(0.2) };
        let fr: Vec<IntensityFrame> = (0..2)
            .map(|k| IntensityFrame::new(4, 4, k * 100_000, vec![1.0; 16]).unwrap())
            .collect();
        let a = emulate(&fr, &[], &cfg, 1).unwrap();
        let b = emulate(&fr, &[], &cfg, 1).unwrap();
        assert_eq!(a, b);
        // 16 pixels · 2000 Hz · 0.1 s ≈ 3200
        assert!((2800..3600).contains(&a.len()), "{}", a.len());
        assert_ne!(a, emulate(&fr, &[], &cfg, 2).unwrap());
    }

    #[test]
    fn threshold_percent() {
        let base = DvsConfig::default();
        assert!((set_threshold_percent(&base, 25.0).unwrap().contrast_threshold - 0.223_14).abs() < 1e-5);
        assert!((set_threshold_percent(&base, 12.0).unwrap().contrast_threshold - 0.113_33).abs() < 1e-5);
        assert!(set_threshold_percent(&base, 0.0).is_err());
        assert!(set_threshold_percent(&base, 100.0).is_err());
    }

    #[test]
    fn rejects_bad_input() {
        assert!(emulate(&[], &[], &DvsConfig::default(), 0).is_err());
        let mut f = frames(&[1.0, 2.0]);
        f[1].pixels[0] = -1.0;
        assert!(emulate(&f, &[], &DvsConfig::default(), 0).is_err());
    }
}
