//! Configuration and end-to-end orchestration of the pipeline stages.

mod config;
mod run;

pub use config::{
    canonical_digest, sha256_hex, DataSection, PathsSection, PipelineConfig, PreprocessSection, SceneSection,
    SimulateSection,
};
pub use run::{
    bin_image, detector_target, preprocess_stream, read_loss_csv, run_evaluate, run_preprocess, run_simulate,
    run_train, scene_for, simulate_events, split_holdout, target_image, RunManifest, TensorSet, MANIFEST_FILE,
};
