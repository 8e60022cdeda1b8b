use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::events::{BinMode, EventStream, SpikeTensor};

/// Target geometry of a binned spike tensor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BinSpec {
    pub height: usize,
    pub width: usize,
    pub steps: usize,
    pub mode: BinMode,
    /// Recording duration. When absent it is taken from the stream's trigger
    /// span, or from its last event.
    pub duration_us: Option<u64>,
}

impl Default for BinSpec {
    fn default() -> Self {
        Self { height: 64, width: 64, steps: 50, mode: BinMode::Binary, duration_us: None }
    }
}

/// Bins events into a `[2, T, H, W]` tensor.
///
/// Spatial bin `floor(x / (w / W))`, temporal bin `min(floor(t · T / D), T - 1)`
/// with `D` the recording duration.
pub fn bin(stream: &EventStream, spec: &BinSpec) -> Result<SpikeTensor> {
    let (w, h) = (stream.width() as usize, stream.height() as usize);
    if spec.width == 0 || spec.height == 0 || spec.steps == 0 {
        return Err(Error::invalid("bin geometry must be non-empty"));
    }
    if w % spec.width != 0 || h % spec.height != 0 {
        return Err(Error::shape(format!(
            "{}x{} sensor is not divisible into {}x{} bins",
            w, h, spec.width, spec.height
        )));
    }
    let duration = spec
        .duration_us
        .or_else(|| stream.duration())
        .filter(|&d| d > 0)
        .ok_or_else(|| Error::invalid("recording duration must be positive"))?;
    let (sx, sy) = (w / spec.width, h / spec.height);
    let steps = spec.steps as u128;
    let mut out = SpikeTensor::zeros(spec.steps, spec.height, spec.width, spec.mode, duration as f64 / spec.steps as f64);
    for e in stream.events() {
        let t = ((e.t as u128 * steps / duration as u128) as usize).min(spec.steps - 1);
        out.add(e.p.channel(), t, e.y as usize / sy, e.x as usize / sx);
    }
    Ok(out)
}
