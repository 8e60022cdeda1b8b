//! Spiking neurons and the spiking autoencoder.

mod layers;
mod lif;
mod sae;

pub use layers::{Layer, LayerGeom, SpatialMap};
pub use lif::{lif_step, LifConfig, LifState, Reset, SpikeFn};
pub(crate) use sae::chw_to_hwc;
pub use sae::{
    accumulate_membrane, conv_spike_layer, export_latent, min_max_normalize, read_latent_csv, write_latent_csv, ConvSpec,
    NetState, ParamTensor, Sae, SaeConfig, SaeParams, StepOutput, StepTrace,
};

/// Floating-point element type of the network: `f32` for training and
/// inference, `f64` for gradient checking.
pub trait Real:
    num_traits::Float
    + num_traits::FromPrimitive
    + Default
    + Send
    + Sync
    + std::fmt::Debug
    + std::fmt::Display
    + std::ops::AddAssign
    + std::ops::SubAssign
    + std::iter::Sum
    + 'static
{
    #[inline]
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("finite literal")
    }
}

impl Real for f32 {}
impl Real for f64 {}
