//! Surrogate-gradient training of the spiking autoencoder.

mod adam;
mod bptt;
mod checkpoint;
mod gradcheck;
mod loss;
mod surrogate;
mod van_rossum;

pub use adam::{Adam, AdamConfig};
pub use bptt::{
    bptt_train, evaluate_losses, write_loss_csv, EpochLoss, LossKind, Persistence, RngState, Target, TrainConfig,
    TrainSample, Trainer,
};
pub use checkpoint::{load_checkpoint, load_checkpoint_for, save_checkpoint, Checkpoint, CHECKPOINT_VERSION};
pub use gradcheck::{gradcheck, smooth_gradients, tiny_problem, tiny_sae_config, GradcheckReport, GRADCHECK_STEP};
pub use loss::{membrane_loss, membrane_mse};
pub use surrogate::{surrogate_grad, surrogate_sigma};
pub use van_rossum::{van_rossum, van_rossum_loss, van_rossum_sq, van_rossum_times};
