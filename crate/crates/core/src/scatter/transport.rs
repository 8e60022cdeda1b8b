use std::f64::consts::PI;

use rand::Rng;

use super::sampling::{rotate_direction, sample_hg};
use super::{BeamProfile, Geometry, PhantomSpec, SceneSpec, TargetImage, SPEED_OF_LIGHT_MM_PER_PS};
use crate::rng::open_unit;

/// Weight below which Russian roulette is played.
pub const ROULETTE_THRESHOLD: f64 = 1e-4;
/// Survival probability in Russian roulette.
pub const ROULETTE_SURVIVAL: f64 = 0.1;
const MAX_SCATTER_EVENTS: u32 = 1_000_000;

/// What the photon meets at the target plane.
#[derive(Clone, Copy, Debug)]
pub enum TargetState<'a> {
    /// No target plane at all: light passes (transmission) or escapes
    /// (reflection) unmodified.
    Absent,
    /// A black-and-white display; an all-black image is the "off" state.
    Image(&'a TargetImage),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ExitKind {
    /// Left through the entry face (`z = 0`).
    Front,
    /// Left through the rear face (`z = thickness`).
    Rear,
    AbsorbedByTarget,
    /// Terminated by Russian roulette.
    Roulette,
    /// Non-finite state or runaway walk.
    Discarded,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PhotonExit {
    pub kind: ExitKind,
    pub position: [f64; 3],
    pub direction: [f64; 3],
    pub weight: f64,
    pub path_length_mm: f64,
    pub scatter_events: u32,
}

impl PhotonExit {
    pub fn time_of_flight_ps(&self, refractive_index: f64) -> f64 {
        self.path_length_mm * refractive_index / SPEED_OF_LIGHT_MM_PER_PS
    }
}

/// Per-outcome photon counts and weights.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Diagnostics {
    pub launched: u64,
    pub front: u64,
    pub rear: u64,
    pub absorbed_by_target: u64,
    pub roulette: u64,
    pub discarded: u64,
    pub front_weight: f64,
    pub rear_weight: f64,
    pub detected_weight: f64,
}

impl Diagnostics {
    pub fn record(&mut self, exit: &PhotonExit) {
        self.launched += 1;
        match exit.kind {
            ExitKind::Front => {
                self.front += 1;
                self.front_weight += exit.weight;
            }
            ExitKind::Rear => {
                self.rear += 1;
                self.rear_weight += exit.weight;
            }
            ExitKind::AbsorbedByTarget => self.absorbed_by_target += 1,
            ExitKind::Roulette => self.roulette += 1,
            ExitKind::Discarded => self.discarded += 1,
        }
    }

    pub fn merge(&mut self, other: &Diagnostics) {
        self.launched += other.launched;
        self.front += other.front;
        self.rear += other.rear;
        self.absorbed_by_target += other.absorbed_by_target;
        self.roulette += other.roulette;
        self.discarded += other.discarded;
        self.front_weight += other.front_weight;
        self.rear_weight += other.rear_weight;
        self.detected_weight += other.detected_weight;
    }
}

fn fresnel_reflectance(n_in: f64, n_out: f64, cos_i: f64) -> f64 {
    if (n_in - n_out).abs() < 1e-12 {
        return 0.0;
    }
    let sin_i = (1.0 - cos_i * cos_i).max(0.0).sqrt();
    let sin_t = n_in / n_out * sin_i;
    if sin_t >= 1.0 {
        return 1.0;
    }
    let cos_t = (1.0 - sin_t * sin_t).sqrt();
    let rs = (n_in * cos_i - n_out * cos_t) / (n_in * cos_i + n_out * cos_t);
    let rp = (n_in * cos_t - n_out * cos_i) / (n_in * cos_t + n_out * cos_i);
    0.5 * (rs * rs + rp * rp)
}

fn launch_position<R: Rng + ?Sized>(scene: &SceneSpec, rng: &mut R) -> (f64, f64) {
    match scene.source.profile {
        BeamProfile::Pencil => (0.0, 0.0),
        BeamProfile::UniformDisk => {
            let r = scene.source.beam_radius_mm * rng.gen::<f64>().sqrt();
            let phi = 2.0 * PI * rng.gen::<f64>();
            (r * phi.cos(), r * phi.sin())
        }
    }
}

/// Traces one photon packet from launch until it leaves the slab, is absorbed
/// by the target, or is terminated.
///
/// Free paths are drawn from the scattering coefficient alone; absorption is
/// applied continuously as `exp(-mu_a · length)` on every segment, with
/// Russian roulette once the weight falls below [`ROULETTE_THRESHOLD`].
pub fn propagate_photon<R: Rng + ?Sized>(
    phantom: &PhantomSpec,
    scene: &SceneSpec,
    target: TargetState<'_>,
    rng: &mut R,
) -> PhotonExit {
    let (x0, y0) = launch_position(scene, rng);
    let mut pos = [x0, y0, 0.0];
    let mut dir = [0.0, 0.0, 1.0];
    let mut weight = 1.0;
    let mut path = 0.0;
    let mut scatters = 0u32;
    let d = phantom.thickness;
    let n = phantom.refractive_index;

    let finish = |kind, pos, dir, weight, path, scatters| PhotonExit {
        kind,
        position: pos,
        direction: dir,
        weight,
        path_length_mm: path,
        scatter_events: scatters,
    };

    if scene.geometry == Geometry::Transmission {
        if let TargetState::Image(img) = target {
            if !img.is_white(x0, y0) {
                return finish(ExitKind::AbsorbedByTarget, pos, dir, 0.0, 0.0, 0);
            }
        }
    }
    if phantom.fresnel {
        let r0 = ((n - 1.0) / (n + 1.0)).powi(2);
        weight *= 1.0 - r0;
    }

    loop {
        let step = if phantom.mu_s > 0.0 { -open_unit(rng).ln() / phantom.mu_s } else { f64::INFINITY };
        let to_boundary = if dir[2] > 0.0 {
            (d - pos[2]) / dir[2]
        } else if dir[2] < 0.0 {
            -pos[2] / dir[2]
        } else {
            f64::INFINITY
        };

        if step >= to_boundary {
            for k in 0..3 {
                pos[k] += dir[k] * to_boundary;
            }
            path += to_boundary;
            weight *= (-phantom.mu_a * to_boundary).exp();
            let rear = dir[2] > 0.0;
            pos[2] = if rear { d } else { 0.0 };
            if !(weight.is_finite() && pos.iter().all(|v| v.is_finite())) {
                return finish(ExitKind::Discarded, pos, dir, 0.0, path, scatters);
            }
            if phantom.fresnel && rng.gen::<f64>() < fresnel_reflectance(n, 1.0, dir[2].abs()) {
                dir[2] = -dir[2];
                continue;
            }
            if rear && scene.geometry == Geometry::Reflection {
                if let TargetState::Image(img) = target {
                    let gap = scene.target_plane_mm;
                    let out = gap / dir[2];
                    let hit = [pos[0] + dir[0] * out, pos[1] + dir[1] * out];
                    if !img.is_white(hit[0], hit[1]) {
                        return finish(ExitKind::AbsorbedByTarget, pos, dir, 0.0, path + out, scatters);
                    }
                    // Lambertian reflection back towards the slab.
                    let cos_t = rng.gen::<f64>().sqrt();
                    let sin_t = (1.0 - cos_t * cos_t).sqrt();
                    let phi = 2.0 * PI * rng.gen::<f64>();
                    dir = [sin_t * phi.cos(), sin_t * phi.sin(), -cos_t];
                    let back = if cos_t > 0.0 { gap / cos_t } else { f64::INFINITY };
                    pos = [hit[0] + dir[0] * back, hit[1] + dir[1] * back, d];
                    path += out + back;
                    if !pos.iter().all(|v| v.is_finite()) {
                        return finish(ExitKind::Discarded, pos, dir, 0.0, path, scatters);
                    }
                    continue;
                }
            }
            let kind = if rear { ExitKind::Rear } else { ExitKind::Front };
            return finish(kind, pos, dir, weight, path, scatters);
        }

        for k in 0..3 {
            pos[k] += dir[k] * step;
        }
        path += step;
        weight *= (-phantom.mu_a * step).exp();
        let cos_t = sample_hg(phantom.g, rng.gen::<f64>());
        dir = rotate_direction(dir, cos_t, 2.0 * PI * rng.gen::<f64>());
        scatters += 1;

        if !(weight.is_finite() && pos.iter().chain(dir.iter()).all(|v| v.is_finite()))
            || scatters > MAX_SCATTER_EVENTS
        {
            return finish(ExitKind::Discarded, pos, dir, 0.0, path, scatters);
        }
        if weight < ROULETTE_THRESHOLD {
            if rng.gen::<f64>() < ROULETTE_SURVIVAL {
                weight /= ROULETTE_SURVIVAL;
            } else {
                return finish(ExitKind::Roulette, pos, dir, 0.0, path, scatters);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;
    use crate::scatter::{DetectorSpec, SourceSpec};

    fn scene(geometry: Geometry) -> SceneSpec {
        SceneSpec {
            geometry,
            source: SourceSpec { beam_radius_mm: 2.0, ..Default::default() },
            target_plane_mm: 0.0,
            detector: DetectorSpec::default(),
            target_frames: vec![],
        }
    }

    #[test]
    fn zero_thickness_exits_at_entry() {
        let ph = PhantomSpec { thickness: 0.0, ..Default::default() };
        let sc = scene(Geometry::Transmission);
        let mut rng = stream_rng(1, &[]);
        for _ in 0..100 {
            let e = propagate_photon(&ph, &sc, TargetState::Absent, &mut rng);
            assert_eq!(e.kind, ExitKind::Rear);
            assert_eq!(e.weight, 1.0);
            assert_eq!(e.path_length_mm, 0.0);
            assert_eq!(e.scatter_events, 0);
            assert!(e.position[0].hypot(e.position[1]) <= 2.0);
        }
    }

    #[test]
    fn beer_lambert_without_scattering() {
        let ph = PhantomSpec { mu_s: 0.0, mu_a: 0.3, thickness: 4.0, ..Default::default() };
        let sc = scene(Geometry::Transmission);
        let mut rng = stream_rng(2, &[]);
        let e = propagate_photon(&ph, &sc, TargetState::Absent, &mut rng);
        assert_eq!(e.kind, ExitKind::Rear);
        assert!((e.weight - (-1.2f64).exp()).abs() < 1e-15);
        assert!((e.time_of_flight_ps(1.0) - 4.0 / SPEED_OF_LIGHT_MM_PER_PS).abs() < 1e-9);
    }

    #[test]
    fn energy_is_conserved_without_absorption() {
        let ph = PhantomSpec { mu_s: 3.0, mu_a: 0.0, g: 0.8, thickness: 2.0, ..Default::default() };
        for geometry in [Geometry::Transmission, Geometry::Reflection] {
            let sc = scene(geometry);
            let mut rng = stream_rng(3, &[]);
            let mut diag = Diagnostics::default();
            for _ in 0..20_000 {
                diag.record(&propagate_photon(&ph, &sc, TargetState::Absent, &mut rng));
            }
            let out = diag.front_weight + diag.rear_weight;
            assert!((out - 20_000.0).abs() / 20_000.0 < 1e-3, "{geometry:?}: {out}");
            assert_eq!(diag.roulette + diag.discarded, 0);
        }
    }

    #[test]
    fn black_target_blocks_transmission() {
        let ph = PhantomSpec::default();
        let sc = scene(Geometry::Transmission);
        let img = TargetImage::new(4, 4, 1.0, vec![false; 16]).unwrap();
        let mut rng = stream_rng(4, &[]);
        for _ in 0..100 {
            let e = propagate_photon(&ph, &sc, TargetState::Image(&img), &mut rng);
            assert_eq!(e.kind, ExitKind::AbsorbedByTarget);
        }
    }

    #[test]
    fn white_target_returns_light_in_reflection() {
        let ph = PhantomSpec { thickness: 0.0, ..Default::default() };
        let sc = scene(Geometry::Reflection);
        let img = TargetImage::new(8, 8, 1.0, vec![true; 64]).unwrap();
        let mut rng = stream_rng(5, &[]);
        let e = propagate_photon(&ph, &sc, TargetState::Image(&img), &mut rng);
        assert_eq!(e.kind, ExitKind::Front);
        assert_eq!(e.weight, 1.0);
        assert!(e.direction[2] < 0.0);
    }

    #[test]
    fn fresnel_reflectance_limits() {
        assert_eq!(fresnel_reflectance(1.4, 1.4, 0.3), 0.0);
        let normal = fresnel_reflectance(1.5, 1.0, 1.0);
        assert!((normal - 0.04).abs() < 1e-12);
        assert_eq!(fresnel_reflectance(1.5, 1.0, 0.1), 1.0);
    }
}
