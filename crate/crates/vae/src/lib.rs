//! Modality-fusing variational autoencoder. The image path is a 3D conv
//! stack, the tabular path a small transformer over per-feature token
//! embeddings; flattened image-grid positions attend to the tabular tokens
//! through cross-attention blocks, and two 1x1x1 conv heads emit the joint
//! latent (mu, logvar). Distinct decoders reconstruct each modality from the
//! same latent sample.

mod config;
mod loss;
mod model;
mod params;
mod train;

pub use config::{LossWeights, TabularDims, VaeConfig};
pub use loss::{
    discriminator_loss, perceptual_distance_graph, vae_loss_graph, LossInputs, LossParts,
    VaeLossReport,
};
pub use model::{
    attention_core, decode_image, decode_tabular, discriminator, encode_joint, mha,
    reparameterize, AttnVars, BatchInput, ParamSource,
};
pub use params::{init_discriminator_params, init_vae_params};
pub use train::{
    encode_latents, load_vae_checkpoint, train_vae, LatentBatch, TrainedVae, VaeCheckpointMeta,
    VaeTrainSettings,
};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum VaeError {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("training diverged at step {step}: non-finite {term}")]
    Divergence { step: usize, term: String },

    #[error(transparent)]
    Nn(#[from] jointsynth_nn::NnError),

    #[error(transparent)]
    Tabular(#[from] jointsynth_tabular::TabularError),

    #[error("io error on {0}: {1}")]
    Io(String, #[source] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, VaeError>;
