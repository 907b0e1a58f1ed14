//! Mixed tabular domain: schema definition, record normalization, and the
//! token/embedding mapping consumed by the fusion VAE. Numeric features are
//! standardized, categorical features are index-tokenized; each gets its own
//! learnable embedding table.

mod codec;
mod schema;

pub use codec::{
    decode_outputs, embed_tokens, encode_record, fit_normalizer, EmbeddingParams, Normalizer,
    TokenSequence, STD_FLOOR,
};
pub use schema::{FeatureKind, FeatureSpec, MixedRecord, TabularSchema};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TabularError {
    #[error("schema invalid: {0}")]
    SchemaInvalid(String),

    #[error("record does not match schema at feature `{feature}`: {reason}")]
    SchemaMismatch { feature: String, reason: String },

    #[error("cannot fit a normalizer on an empty record list")]
    EmptyRecords,

    #[error("unknown category `{label}` for feature `{feature}`")]
    UnknownCategory { feature: String, label: String },

    #[error("non-finite numeric value for feature `{feature}`")]
    NonFinite { feature: String },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, TabularError>;
