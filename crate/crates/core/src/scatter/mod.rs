//! Monte Carlo photon transport through a homogeneous scattering slab.
//!
//! The slab occupies `0 <= z <= thickness` with light entering at `z = 0`.
//! In transmission geometry the target modulates the beam at the entry face
//! and the detector images the rear face; in reflection geometry the target
//! sits behind the rear face and the detector images the entry face.

mod frames;
mod sampling;
mod transport;

pub use frames::{decode_frames, encode_frames, read_frames, simulate_frames, simulate_state, write_frames};
pub use sampling::{mfp_count, rotate_direction, sample_hg, sample_step};
pub use transport::{propagate_photon, Diagnostics, ExitKind, PhotonExit, TargetState};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Speed of light in vacuum, mm per picosecond.
pub const SPEED_OF_LIGHT_MM_PER_PS: f64 = 0.299_792_458;

/// Optical properties of the slab phantom. Lengths in mm.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhantomSpec {
    /// Scattering coefficient, mm⁻¹.
    pub mu_s: f64,
    /// Absorption coefficient, mm⁻¹.
    pub mu_a: f64,
    /// Henyey-Greenstein anisotropy.
    pub g: f64,
    pub thickness: f64,
    pub refractive_index: f64,
    /// Fresnel reflection at the slab faces. Off means index-matched faces.
    pub fresnel: bool,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        Self { mu_s: 6.0, mu_a: 0.01, g: 0.9, thickness: 12.0, refractive_index: 1.41, fresnel: false }
    }
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.mu_s >= 0.0 && self.mu_a >= 0.0) {
            return Err(Error::Config("phantom mu_s and mu_a must be non-negative".into()));
        }
        if !(self.g > -1.0 && self.g < 1.0) {
            return Err(Error::Config(format!("anisotropy g={} outside (-1, 1)", self.g)));
        }
        if !(self.thickness >= 0.0 && self.thickness.is_finite()) {
            return Err(Error::Config("phantom thickness must be a finite non-negative length".into()));
        }
        if !(self.refractive_index >= 1.0) {
            return Err(Error::Config("refractive index must be at least 1".into()));
        }
        Ok(())
    }

    /// The same phantom with zero thickness: the clear optical path.
    pub fn cleared(&self) -> Self {
        Self { thickness: 0.0, ..self.clone() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Geometry {
    Reflection,
    Transmission,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BeamProfile {
    /// Collimated beam with uniform fluence over a disk.
    UniformDisk,
    /// Infinitely narrow collimated beam at the origin.
    Pencil,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SourceSpec {
    /// Documentation only.
    pub wavelength_nm: f64,
    pub beam_radius_mm: f64,
    /// Documentation only, mW/mm².
    pub fluence: f64,
    pub profile: BeamProfile,
}

impl Default for SourceSpec {
    fn default() -> Self {
        Self { wavelength_nm: 532.0, beam_radius_mm: 15.0, fluence: 0.021, profile: BeamProfile::UniformDisk }
    }
}

/// Detector pixel grid, centred on the optical axis plus `offset_mm`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorSpec {
    pub height: usize,
    pub width: usize,
    pub pitch_mm: f64,
    pub offset_mm: [f64; 2],
}

impl Default for DetectorSpec {
    fn default() -> Self {
        Self { height: 64, width: 64, pitch_mm: 0.25, offset_mm: [0.0, 0.0] }
    }
}

impl DetectorSpec {
    /// Pixel `(row, col)` hit at lateral position `(x, y)`.
    #[inline]
    pub fn pixel(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        let col = ((x - self.offset_mm[0]) / self.pitch_mm + self.width as f64 / 2.0).floor();
        let row = ((y - self.offset_mm[1]) / self.pitch_mm + self.height as f64 / 2.0).floor();
        if col >= 0.0 && row >= 0.0 && (col as usize) < self.width && (row as usize) < self.height {
            Some((row as usize, col as usize))
        } else {
            None
        }
    }

    /// Lateral position of a pixel centre.
    pub fn pixel_center(&self, row: usize, col: usize) -> (f64, f64) {
        (
            (col as f64 + 0.5 - self.width as f64 / 2.0) * self.pitch_mm + self.offset_mm[0],
            (row as f64 + 0.5 - self.height as f64 / 2.0) * self.pitch_mm + self.offset_mm[1],
        )
    }
}

/// A black-and-white target, centred on the optical axis. `true` is white
/// (reflective, or transmitting).
#[derive(Clone, Debug, PartialEq)]
pub struct TargetImage {
    pub height: usize,
    pub width: usize,
    pub pitch_mm: f64,
    pub pixels: Vec<bool>,
}

impl TargetImage {
    pub fn new(height: usize, width: usize, pitch_mm: f64, pixels: Vec<bool>) -> Result<Self> {
        if pixels.len() != height * width {
            return Err(Error::shape("target pixel count does not match its dimensions"));
        }
        if !(pitch_mm > 0.0) {
            return Err(Error::invalid("target pitch must be positive"));
        }
        Ok(Self { height, width, pitch_mm, pixels })
    }

    /// Thresholds a grayscale image at `threshold`.
    pub fn from_gray(gray: &[f32], height: usize, width: usize, pitch_mm: f64, threshold: f32) -> Result<Self> {
        Self::new(height, width, pitch_mm, gray.iter().map(|&v| v >= threshold).collect())
    }

    pub fn black_like(&self) -> Self {
        Self { pixels: vec![false; self.pixels.len()], ..self.clone() }
    }

    #[inline]
    pub fn is_white(&self, x: f64, y: f64) -> bool {
        let col = (x / self.pitch_mm + self.width as f64 / 2.0).floor();
        let row = (y / self.pitch_mm + self.height as f64 / 2.0).floor();
        if col < 0.0 || row < 0.0 {
            return false;
        }
        let (r, c) = (row as usize, col as usize);
        r < self.height && c < self.width && self.pixels[r * self.width + c]
    }
}

/// One displayed target: on from `onset_us` for `duration_us`.
#[derive(Clone, Debug, PartialEq)]
pub struct TargetFrame {
    pub image: TargetImage,
    pub onset_us: u64,
    pub duration_us: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneSpec {
    pub geometry: Geometry,
    pub source: SourceSpec,
    /// Gap between the slab's rear face and the target plane (reflection).
    pub target_plane_mm: f64,
    pub detector: DetectorSpec,
    pub target_frames: Vec<TargetFrame>,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.source.beam_radius_mm > 0.0) {
            return Err(Error::Config("beam radius must be positive".into()));
        }
        if !(self.target_plane_mm >= 0.0) {
            return Err(Error::Config("target plane distance must be non-negative".into()));
        }
        if self.detector.height == 0 || self.detector.width == 0 || !(self.detector.pitch_mm > 0.0) {
            return Err(Error::Config("detector needs a non-empty grid and positive pitch".into()));
        }
        Ok(())
    }

    /// Expected photon weight per detector pixel from an unobstructed,
    /// unscattered beam of `n_photons`.
    pub fn unobstructed_pixel_weight(&self, n_photons: u64) -> f64 {
        match self.source.profile {
            BeamProfile::UniformDisk => {
                let area = std::f64::consts::PI * self.source.beam_radius_mm.powi(2);
                n_photons as f64 * self.detector.pitch_mm.powi(2) / area
            }
            BeamProfile::Pencil => n_photons as f64,
        }
    }
}

/// Detector irradiance at time `t_us`, `[H, W]` row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct IntensityFrame {
    pub height: usize,
    pub width: usize,
    pub t_us: u64,
    pub pixels: Vec<f32>,
}

impl IntensityFrame {
    pub fn new(height: usize, width: usize, t_us: u64, pixels: Vec<f32>) -> Result<Self> {
        if pixels.len() != height * width {
            return Err(Error::shape("frame pixel count does not match its dimensions"));
        }
        if pixels.iter().any(|&p| !(p >= 0.0)) {
            return Err(Error::invalid("frame intensities must be non-negative"));
        }
        Ok(Self { height, width, t_us, pixels })
    }

    pub fn scaled(&self, factor: f32) -> Self {
        Self { pixels: self.pixels.iter().map(|p| p * factor).collect(), ..self.clone() }
    }

    pub fn total(&self) -> f64 {
        self.pixels.iter().map(|&p| p as f64).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn detector_pixel_mapping() {
        let d = DetectorSpec { height: 4, width: 4, pitch_mm: 1.0, offset_mm: [0.0, 0.0] };
        assert_eq!(d.pixel(-2.0, -2.0), Some((0, 0)));
        assert_eq!(d.pixel(1.99, 0.5), Some((2, 3)));
        assert_eq!(d.pixel(2.0, 0.0), None);
        let (x, y) = d.pixel_center(2, 3);
        assert_eq!(d.pixel(x, y), Some((2, 3)));
    }

    #[test]
    fn target_lookup() {
        let t = TargetImage::new(2, 2, 0.5, vec![true, false, false, true]).unwrap();
        assert!(t.is_white(-0.25, -0.25));
        assert!(!t.is_white(0.25, -0.25));
        assert!(t.is_white(0.25, 0.25));
        assert!(!t.is_white(0.6, 0.25));
        assert!(!t.black_like().is_white(-0.25, -0.25));
    }

    #[test]
    fn phantom_validation() {
        assert!(PhantomSpec::default().validate().is_ok());
        assert!(PhantomSpec { g: 1.0, ..Default::default() }.validate().is_err());
        assert!(PhantomSpec { mu_s: -1.0, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn negative_frame_rejected() {
        assert!(IntensityFrame::new(1, 2, 0, vec![0.0, -1.0]).is_err());
    }
}
