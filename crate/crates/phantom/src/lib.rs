//! Procedurally generated 3D body phantoms with analytically coupled tabular
//! attributes. Each phantom is an elliptic-cylinder torso with an outer fat
//! shell and a head sphere; height drives the axial extent, BMI the
//! cross-section, body-fat % the shell thickness — so the image/tabular
//! coupling a generative model must reproduce is directly measurable.

mod attributes;
mod cohort;
mod csv;
mod render;
mod volume;

pub use attributes::{nako_schema, sample_phantom_attributes, AttributeParams};
pub use cohort::{
    generate_cohort, load_cohort, save_cohort, split_dataset, Cohort, CohortConfig, CohortEntry,
    CohortManifest, Split,
};
pub use render::{axial_extent, fat_fraction, render_phantom_volume, PhantomGeometry};
pub use volume::{preprocess_volume, read_volume, write_volume, Volume};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum PhantomError {
    #[error("config error: {0}")]
    Config(String),

    #[error("geometry for subject exceeds the voxel grid: {0}; use a larger volume_shape")]
    Geometry(String),

    #[error("split error: {0}")]
    Split(String),

    #[error("integrity error for subject `{subject_id}`: {reason}")]
    Integrity { subject_id: String, reason: String },

    #[error("volume file format error at {path}: {reason}")]
    VolumeFormat { path: String, reason: String },

    #[error("io error on {0}: {1}")]
    Io(String, #[source] std::io::Error),

    #[error(transparent)]
    Tabular(#[from] jointsynth_tabular::TabularError),
}

pub type Result<T> = std::result::Result<T, PhantomError>;
