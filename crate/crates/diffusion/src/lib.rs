//! Epsilon-prediction latent diffusion: a U-Net-shaped denoiser over the
//! fused latent grid, trained with a linear beta schedule and sampled with a
//! deterministic DDIM trajectory that skips most timesteps.

mod ddim;
mod denoiser;
mod forward;
mod sample;
mod schedule;
mod train;

pub use ddim::{ddim_step, SamplerConfig};
pub use denoiser::{denoiser_forward, init_denoiser_params, timestep_embedding, DenoiserConfig};
pub use forward::{eps_prediction_loss, q_sample};
pub use sample::{sample_latents, synthesize_pairs};
pub use schedule::{make_linear_schedule, NoiseSchedule};
pub use train::{
    latent_scale_factor, load_ldm_checkpoint, train_ldm, LdmCheckpointMeta, LdmTrainSettings,
    ScheduleSettings, TrainedLdm,
};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DiffusionError {
    #[error("config error: {0}")]
    Config(String),

    #[error("timestep {0} out of range 1..={1}")]
    TimestepOutOfRange(usize, usize),

    #[error("numeric domain error: {0}")]
    NumericDomain(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("training diverged at step {step}: non-finite loss")]
    Divergence { step: usize },

    #[error(transparent)]
    Nn(#[from] jointsynth_nn::NnError),

    #[error(transparent)]
    Vae(#[from] jointsynth_vae::VaeError),

    #[error(transparent)]
    Tabular(#[from] jointsynth_tabular::TabularError),

    #[error("io error on {0}: {1}")]
    Io(String, #[source] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, DiffusionError>;
