//! Forward-backward models: networks, latent sampling, greedy policy, TD
//! training with target networks, and checkpoints.

mod checkpoint;
mod model;
mod train;

pub use checkpoint::{load_model, save_model, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use model::{argmax_lowest, project_z, sphere_latent, ActionSpace, FbArch, FbModel};
pub use train::{continue_training, fb_td_loss, train_fb, window_means, FbBatch, FbLoss, FbTrainConfig, PreparedData};
