//! Part autoencoder: canonicalization of library parts, a PointNet-style encoder, an MLP
//! decoder, training, and a versioned weight file.

mod library;
mod model;
mod train;
mod weights;

pub use library::{canonicalize_part, PartEntry, PartLibrary};
pub use model::{gaussian_kl, vae_loss, ParamLeaves, PartCodec, VaeArch, VaeParams};
pub use train::{evaluate_vae, train_vae, TrainedVae, VaeTrainConfig};
pub use weights::{load_weights, read_weights, save_weights, write_weights};
