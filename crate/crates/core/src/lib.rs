//! Neuromorphic imaging through turbid media.
//!
//! The crate covers the whole desk-scale pipeline: Monte Carlo photon
//! transport through a scattering slab ([`scatter`]), dynamic vision sensor
//! emulation ([`dvs`]), event preprocessing and binning ([`preprocess`]), a
//! spiking autoencoder ([`snn`]) trained with surrogate-gradient BPTT
//! ([`train`]), and image-quality evaluation ([`metrics`]). [`pipeline`] ties
//! the stages together behind a single configuration.

pub mod dvs;
pub mod error;
pub mod events;
pub mod metrics;
pub mod pipeline;
pub mod preprocess;
pub mod rng;
pub mod scatter;
pub mod snn;
pub mod train;

pub use error::{Error, Result};
