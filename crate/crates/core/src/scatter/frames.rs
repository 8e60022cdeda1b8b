//! Frame synthesis from target states and the `IFR1` frame stack format.

use std::io::{Read, Write};
use std::path::Path;

use rayon::prelude::*;

use super::transport::{propagate_photon, Diagnostics, ExitKind, TargetState};
use super::{Geometry, IntensityFrame, PhantomSpec, SceneSpec};
use crate::error::{Error, Result};
use crate::events::Trigger;
use crate::rng::stream_rng;

/// Photons per work unit. Fixed so tallies do not depend on the worker count.
const CHUNK: u64 = 8192;

/// Accumulates detected photon weight on the detector grid for one target
/// state. Photon `i` of state `state_index` draws from its own stream
/// seeded by `(seed, state_index, i)`.
pub fn simulate_state(
    phantom: &PhantomSpec,
    scene: &SceneSpec,
    target: TargetState<'_>,
    n_photons: u64,
    seed: u64,
    state_index: u64,
) -> (Vec<f64>, Diagnostics) {
    let det = &scene.detector;
    let detect_kind = match scene.geometry {
        Geometry::Transmission => ExitKind::Rear,
        Geometry::Reflection => ExitKind::Front,
    };
    let n_chunks = n_photons.div_ceil(CHUNK);
    let partials: Vec<(Vec<f64>, Diagnostics)> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let mut tally = vec![0.0f64; det.height * det.width];
            let mut diag = Diagnostics::default();
            let end = ((c + 1) * CHUNK).min(n_photons);
            for i in c * CHUNK..end {
                let mut rng = stream_rng(seed, &[state_index, i]);
                let exit = propagate_photon(phantom, scene, target, &mut rng);
                diag.record(&exit);
                if exit.kind == detect_kind {
                    if let Some((r, col)) = det.pixel(exit.position[0], exit.position[1]) {
                        tally[r * det.width + col] += exit.weight;
                        diag.detected_weight += exit.weight;
                    }
                }
            }
            (tally, diag)
        })
        .collect();

    let mut tally = vec![0.0f64; det.height * det.width];
    let mut diag = Diagnostics::default();
    for (part, d) in &partials {
        for (t, p) in tally.iter_mut().zip(part) {
            *t += p;
        }
        diag.merge(d);
    }
    (tally, diag)
}

impl SceneSpec {
    /// Rising edge at each target onset, falling edge at its offset.
    pub fn triggers(&self) -> Vec<Trigger> {
        let mut out: Vec<Trigger> = self
            .target_frames
            .iter()
            .flat_map(|f| [Trigger::rising(f.onset_us), Trigger::falling(f.onset_us + f.duration_us)])
            .collect();
        out.sort_by_key(|t| t.t);
        out
    }
}

/// Renders the scene's target sequence into detector frames.
///
/// Each target is flashed: the detector sees the "off" state (an all-black
/// display) at the onset, the target fully on at mid-flash, and "off" again
/// at the offset. A leading off frame at `t = 0` is added when the first
/// onset is later. States are simulated once each (state 0 is "off",
/// state `k + 1` is target `k`), so identical states yield identical frames.
/// Pixel values are raw detected photon weight.
pub fn simulate_frames(
    scene: &SceneSpec,
    phantom: &PhantomSpec,
    n_photons: u64,
    seed: u64,
) -> Result<(Vec<IntensityFrame>, Diagnostics)> {
    scene.validate()?;
    phantom.validate()?;
    if n_photons == 0 {
        return Err(Error::invalid("n_photons must be at least 1"));
    }
    let det = &scene.detector;
    let to_frame = |tally: &[f64], t_us| IntensityFrame {
        height: det.height,
        width: det.width,
        t_us,
        pixels: tally.iter().map(|&w| w as f32).collect(),
    };

    let mut diagnostics = Diagnostics::default();
    let off = match scene.target_frames.first() {
        Some(first) => {
            let black = first.image.black_like();
            let (tally, diag) = simulate_state(phantom, scene, TargetState::Image(&black), n_photons, seed, 0);
            diagnostics.merge(&diag);
            tally
        }
        None => vec![0.0; det.height * det.width],
    };

    let mut frames = Vec::with_capacity(3 * scene.target_frames.len() + 1);
    if scene.target_frames.first().is_none_or(|f| f.onset_us > 0) {
        frames.push(to_frame(&off, 0));
    }
    for (k, tf) in scene.target_frames.iter().enumerate() {
        let (on, diag) =
            simulate_state(phantom, scene, TargetState::Image(&tf.image), n_photons, seed, k as u64 + 1);
        diagnostics.merge(&diag);
        let mid = tf.onset_us + tf.duration_us / 2;
        frames.push(to_frame(&off, tf.onset_us));
        frames.push(to_frame(&on, mid));
        frames.push(to_frame(&off, tf.onset_us + tf.duration_us));
    }
    if frames.windows(2).any(|w| w[0].t_us > w[1].t_us) {
        return Err(Error::invalid("target frames overlap in time"));
    }
    Ok((frames, diagnostics))
}

/// `IFR1` magic, u16 H, u16 W, u32 frame count, then per frame a u64
/// timestamp and `H·W` little-endian f32 values.
pub fn encode_frames<W: Write>(frames: &[IntensityFrame], mut w: W) -> Result<()> {
    let (h, wd) = frames.first().map_or((0, 0), |f| (f.height, f.width));
    if frames.iter().any(|f| f.height != h || f.width != wd) {
        return Err(Error::shape("frames in a stack must share dimensions"));
    }
    w.write_all(b"IFR1")?;
    w.write_all(&u16::try_from(h).map_err(|_| Error::invalid("height exceeds u16"))?.to_le_bytes())?;
    w.write_all(&u16::try_from(wd).map_err(|_| Error::invalid("width exceeds u16"))?.to_le_bytes())?;
    w.write_all(&(frames.len() as u32).to_le_bytes())?;
    for f in frames {
        w.write_all(&f.t_us.to_le_bytes())?;
        for p in &f.pixels {
            w.write_all(&p.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn decode_frames<R: Read>(mut r: R) -> Result<Vec<IntensityFrame>> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)?;
    if buf.len() < 12 || &buf[..4] != b"IFR1" {
        return Err(Error::format("bad magic, expected IFR1"));
    }
    let h = u16::from_le_bytes([buf[4], buf[5]]) as usize;
    let w = u16::from_le_bytes([buf[6], buf[7]]) as usize;
    let n = u32::from_le_bytes(buf[8..12].try_into().unwrap()) as usize;
    let rec = 8 + 4 * h * w;
    if buf.len() != 12 + n * rec {
        return Err(Error::format("frame stack length does not match its header"));
    }
    (0..n)
        .map(|k| {
            let r = &buf[12 + k * rec..12 + (k + 1) * rec];
            let t = u64::from_le_bytes(r[..8].try_into().unwrap());
            let pixels = r[8..].chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
            IntensityFrame::new(h, w, t, pixels).map_err(|e| Error::format(e.to_string()))
        })
        .collect()
}

pub fn write_frames(frames: &[IntensityFrame], path: impl AsRef<Path>) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    encode_frames(frames, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn read_frames(path: impl AsRef<Path>) -> Result<Vec<IntensityFrame>> {
    decode_frames(std::fs::File::open(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scatter::{DetectorSpec, SourceSpec, TargetFrame, TargetImage};

    fn scene(pixels: Vec<bool>) -> SceneSpec {
        SceneSpec {
            geometry: Geometry::Transmission,
            source: SourceSpec { beam_radius_mm: 3.0, ..Default::default() },
            target_plane_mm: 0.0,
            detector: DetectorSpec { height: 4, width: 4, pitch_mm: 1.0, offset_mm: [0.0, 0.0] },
            target_frames: vec![TargetFrame {
                image: TargetImage::new(4, 4, 1.0, pixels).unwrap(),
                onset_us: 1000,
                duration_us: 1000,
            }],
        }
    }

    fn phantom() -> PhantomSpec {
        PhantomSpec { mu_s: 2.0, thickness: 1.0, ..Default::default() }
    }

    #[test]
    fn black_target_gives_zero_frames() {
        let (frames, _) = simulate_frames(&scene(vec![false; 16]), &phantom(), 5000, 1).unwrap();
        assert_eq!(frames.len(), 4);
        assert!(frames.iter().all(|f| f.total() == 0.0));
        let times: Vec<u64> = frames.iter().map(|f| f.t_us).collect();
        assert_eq!(times, vec![0, 1000, 1500, 2000]);
    }

    #[test]
    fn identical_seed_is_bit_identical_and_pool_independent() {
        let sc = scene((0..16).map(|i| i % 3 == 0).collect());
        let (a, _) = simulate_frames(&sc, &phantom(), 20_000, 9).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let (b, _) = pool.install(|| simulate_frames(&sc, &phantom(), 20_000, 9).unwrap());
        assert_eq!(a, b);
        let (c, _) = simulate_frames(&sc, &phantom(), 20_000, 10).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn doubling_photons_doubles_weight() {
        let sc = scene(vec![true; 16]);
        let (a, _) = simulate_frames(&sc, &phantom(), 50_000, 3).unwrap();
        let (b, _) = simulate_frames(&sc, &phantom(), 100_000, 4).unwrap();
        let ratio = b[2].total() / a[2].total();
        assert!((ratio - 2.0).abs() < 0.05, "ratio {ratio}");
    }

    #[test]
    fn trigger_markers_follow_targets() {
        let sc = scene(vec![true; 16]);
        assert_eq!(sc.triggers(), vec![Trigger::rising(1000), Trigger::falling(2000)]);
    }

    #[test]
    fn frame_stack_roundtrip() {
        let frames = vec![
            IntensityFrame::new(2, 3, 0, vec![0.0, 1.0, 2.0, 3.0, 4.5, 5.0]).unwrap(),
            IntensityFrame::new(2, 3, 77, vec![0.25; 6]).unwrap(),
        ];
        let mut buf = Vec::new();
        encode_frames(&frames, &mut buf).unwrap();
        assert_eq!(buf.len(), 12 + 2 * (8 + 24));
        assert_eq!(decode_frames(&buf[..]).unwrap(), frames);
        assert!(decode_frames(&buf[..buf.len() - 2]).is_err());
    }
}
