//! Minimal tape-based autodiff engine used by the fusion VAE and the latent
//! diffusion model: dense tensors, 3D convolution / attention building blocks,
//! Adam, seeded RNG streams, and a checkpoint container.

pub mod conv;
pub mod extractor;
pub mod graph;
pub mod io;
pub mod optim;
pub mod rng;
pub mod scalar;
pub mod tensor;

pub use extractor::{RandomConvExtractor, VolumeEmbedder, DEFAULT_EXTRACTOR_SEED};
pub use graph::{Grads, Graph, Var};
pub use io::{load_checkpoint, save_checkpoint, Checkpoint};
pub use optim::{clip_global_norm, AdamConfig, ParamStore};
pub use rng::Rng;
pub use scalar::Scalar;
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("io error on {0}: {1}")]
    Io(String, #[source] std::io::Error),

    #[error("checkpoint format error: {0}")]
    Format(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),
}
