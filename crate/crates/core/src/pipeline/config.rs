use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dvs::DvsConfig;
use crate::error::{Error, Result};
use crate::events::PairingMode;
use crate::metrics::SsimConfig;
use crate::preprocess::{BinSpec, FilterParams, FilterStage, RoiRect};
use crate::scatter::{DetectorSpec, Geometry, PhantomSpec, SourceSpec};
use crate::snn::SaeConfig;
use crate::train::{LossKind, TrainConfig};

/// Scene layout without the target sequence, which comes from the dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneSection {
    pub geometry: Geometry,
    pub source: SourceSpec,
    pub target_plane_mm: f64,
    pub detector: DetectorSpec,
}

impl Default for SceneSection {
    fn default() -> Self {
        Self {
            geometry: Geometry::Transmission,
            source: SourceSpec::default(),
            target_plane_mm: 0.0,
            detector: DetectorSpec::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateSection {
    pub n_photons: u64,
    /// Start of the target flash.
    pub flash_onset_us: u64,
    /// Flash length; by default 1 ms in transmission and 400 ms in reflection.
    pub flash_duration_us: Option<u64>,
    /// Grey level at which dataset pixels count as white.
    pub target_threshold: f32,
    /// Physical size of one dataset pixel; defaults to the detector pitch.
    pub target_pitch_mm: Option<f64>,
    /// Divide frames by the unobstructed per-pixel photon weight so the DVS
    /// sees intensities relative to the bare beam.
    pub normalize_frames: bool,
}

impl Default for SimulateSection {
    fn default() -> Self {
        Self {
            n_photons: 200_000,
            flash_onset_us: 100,
            flash_duration_us: None,
            target_threshold: 0.5,
            target_pitch_mm: None,
            normalize_frames: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessSection {
    /// Defaults to the whole detector.
    pub roi: Option<RoiRect>,
    pub filters: FilterParams,
    /// Filters applied in order; empty disables filtering.
    pub chain: Vec<FilterStage>,
    pub pairing: PairingMode,
    pub bin: BinSpec,
}

impl Default for PreprocessSection {
    fn default() -> Self {
        Self {
            roi: None,
            filters: FilterParams::default(),
            chain: Vec::new(),
            pairing: PairingMode::Strict,
            bin: BinSpec::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsSection {
    pub dataset_images: PathBuf,
    pub dataset_labels: PathBuf,
    pub output_dir: PathBuf,
}

impl Default for PathsSection {
    fn default() -> Self {
        Self {
            dataset_images: PathBuf::from("data/mnist-600/images-idx3-ubyte"),
            dataset_labels: PathBuf::from("data/mnist-600/labels-idx1-ubyte"),
            output_dir: PathBuf::from("out"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    /// Use only the first samples of the dataset.
    pub max_samples: Option<usize>,
    /// Trailing samples held out for validation and evaluation.
    pub holdout: usize,
}

impl Default for DataSection {
    fn default() -> Self {
        Self { max_samples: None, holdout: 100 }
    }
}

/// Complete pipeline configuration. Every field has a default.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub phantom: PhantomSpec,
    pub scene: SceneSection,
    pub simulate: SimulateSection,
    pub dvs: DvsConfig,
    pub preprocess: PreprocessSection,
    pub sae: SaeConfig,
    pub train: TrainConfig,
    pub eval: SsimConfig,
    pub data: DataSection,
    pub paths: PathsSection,
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())
            .map_err(|e| Error::Config(format!("{}: {e}", path.as_ref().display())))?;
        Self::from_toml(&text)
    }

    /// Applies `key.path=value` overrides; values are parsed as TOML and fall
    /// back to plain strings.
    pub fn with_overrides<S: AsRef<str>>(&self, overrides: &[S]) -> Result<Self> {
        let mut root = toml::Value::try_from(self).map_err(|e| Error::Config(e.to_string()))?;
        for o in overrides {
            let o = o.as_ref();
            let (key, raw) = o.split_once('=').ok_or_else(|| Error::Config(format!("override {o:?} is not key=value")))?;
            let value = parse_value(raw.trim());
            set_path(&mut root, key.trim(), value)?;
        }
        root.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn flash_duration_us(&self) -> u64 {
        self.simulate.flash_duration_us.unwrap_or(match self.scene.geometry {
            Geometry::Transmission => 1_000,
            Geometry::Reflection => 400_000,
        })
    }

    pub fn roi(&self) -> RoiRect {
        self.preprocess.roi.unwrap_or_else(|| {
            RoiRect::full(self.scene.detector.width as u16, self.scene.detector.height as u16)
        })
    }

    /// Checks each section and their consistency with one another.
    pub fn validate(&self) -> Result<()> {
        let cfg_err = |e: Error| match e {
            Error::Config(m) => Error::Config(m),
            other => Error::Config(other.to_string()),
        };
        self.phantom.validate().map_err(cfg_err)?;
        self.dvs.validate().map_err(cfg_err)?;
        self.preprocess.filters.validate()?;
        self.train.validate()?;
        self.eval.validate()?;
        self.sae.layers().map_err(cfg_err)?;
        let det = &self.scene.detector;
        if det.width > u16::MAX as usize || det.height > u16::MAX as usize {
            return Err(Error::Config("detector grid exceeds 65535 pixels per side".into()));
        }
        let roi = self.roi();
        if roi.x0 as usize + roi.w as usize > det.width || roi.y0 as usize + roi.h as usize > det.height {
            return Err(Error::Config(format!("ROI {roi:?} exceeds the {}x{} detector", det.width, det.height)));
        }
        let bin = &self.preprocess.bin;
        if bin.width == 0 || bin.height == 0 || !(roi.w as usize).is_multiple_of(bin.width) || !(roi.h as usize).is_multiple_of(bin.height) {
            return Err(Error::Config(format!("ROI {}x{} is not divisible into {}x{} bins", roi.w, roi.h, bin.width, bin.height)));
        }
        if self.sae.input_shape != [2, bin.height, bin.width] {
            return Err(Error::Config(format!(
                "network input {:?} does not match the {}x{} bin grid",
                self.sae.input_shape, bin.height, bin.width
            )));
        }
        if self.train.steps != bin.steps {
            return Err(Error::Config(format!("training uses {} steps but binning produces {}", self.train.steps, bin.steps)));
        }
        if self.simulate.n_photons == 0 {
            return Err(Error::Config("n_photons must be at least 1".into()));
        }
        if self.flash_duration_us() == 0 {
            return Err(Error::Config("flash duration must be positive".into()));
        }
        if self.train.loss == LossKind::VanRossum && self.sae.theta_out > 1e3 {
            log::warn!("van Rossum training with theta_out {} will rarely produce output spikes", self.sae.theta_out);
        }
        Ok(())
    }

    /// SHA-256 of the canonical (key-sorted, compact) JSON form.
    pub fn digest(&self) -> String {
        canonical_digest(self)
    }

    /// Digest of the sections that determine the preprocessed tensors.
    pub fn preprocess_digest(&self) -> String {
        #[derive(Serialize)]
        struct Producing<'a> {
            seed: u64,
            phantom: &'a PhantomSpec,
            scene: &'a SceneSection,
            simulate: &'a SimulateSection,
            dvs: &'a DvsConfig,
            preprocess: &'a PreprocessSection,
        }
        canonical_digest(&Producing {
            seed: self.seed,
            phantom: &self.phantom,
            scene: &self.scene,
            simulate: &self.simulate,
            dvs: &self.dvs,
            preprocess: &self.preprocess,
        })
    }
}

/// SHA-256 hex of a value serialised as key-sorted JSON.
pub fn canonical_digest<T: Serialize>(value: &T) -> String {
    let v = serde_json::to_value(value).expect("config serialises to JSON");
    hex(&Sha256::digest(canonical_json(&v).as_bytes()))
}

fn canonical_json(v: &serde_json::Value) -> String {
    match v {
        serde_json::Value::Object(m) => {
            let mut keys: Vec<&String> = m.keys().collect();
            keys.sort();
            let parts: Vec<String> = keys
                .iter()
                .map(|k| format!("{}:{}", serde_json::Value::String((*k).clone()), canonical_json(&m[*k])))
                .collect();
            format!("{{{}}}", parts.join(","))
        }
        serde_json::Value::Array(a) => format!("[{}]", a.iter().map(canonical_json).collect::<Vec<_>>().join(",")),
        other => other.to_string(),
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}

fn parse_value(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.into())),
        Err(_) => toml::Value::String(raw.into()),
    }
}

fn set_path(root: &mut toml::Value, key: &str, value: toml::Value) -> Result<()> {
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().filter(|k| !k.is_empty()).ok_or_else(|| Error::Config(format!("empty override key {key:?}")))?;
    let mut cur = root;
    for p in parts {
        let table = cur.as_table_mut().ok_or_else(|| Error::Config(format!("{key}: {p} is not a section")))?;
        cur = table.entry(p.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
    }
    let table = cur.as_table_mut().ok_or_else(|| Error::Config(format!("{key}: parent is not a section")))?;
    // integers given for float fields are accepted as floats
    let value = match (table.get(last), value) {
        (Some(toml::Value::Float(_)), toml::Value::Integer(i)) => toml::Value::Float(i as f64),
        (_, v) => v,
    };
    table.insert(last.to_string(), value);
    Ok(())
}
