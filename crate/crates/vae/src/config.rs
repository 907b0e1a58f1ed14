use serde::{Deserialize, Serialize};

use jointsynth_tabular::TabularSchema;

use crate::{Result, VaeError};

/// Composite-loss weights: total = l1 + lambda_perc*l_perc + lambda_adv*l_adv
/// + l_mse + l_ce + lambda_kl*l_kl.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_perc: f64,
    pub lambda_adv: f64,
    pub lambda_kl: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_perc: 0.3,
            lambda_adv: 0.1,
            lambda_kl: 1e-6,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if self.lambda_perc < 0.0 || self.lambda_adv < 0.0 || self.lambda_kl < 0.0 {
            return Err(VaeError::Config("loss weights must be >= 0".into()));
        }
        Ok(())
    }
}

/// Feature counts, vocabulary sizes, and slot order derived from a schema;
/// fixed at parameter-initialization time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TabularDims {
    pub n_numeric: usize,
    pub n_categorical: usize,
    pub vocab_sizes: Vec<usize>,
    /// Schema positions of the numeric features, in numeric order.
    pub numeric_slots: Vec<usize>,
    /// Schema positions of the categorical features, in categorical order.
    pub categorical_slots: Vec<usize>,
}

impl TabularDims {
    pub fn from_schema(schema: &TabularSchema) -> Self {
        let mut numeric_slots = Vec::new();
        let mut categorical_slots = Vec::new();
        for (slot, f) in schema.features.iter().enumerate() {
            match f.kind {
                jointsynth_tabular::FeatureKind::Numeric => numeric_slots.push(slot),
                jointsynth_tabular::FeatureKind::Categorical => categorical_slots.push(slot),
            }
        }
        TabularDims {
            n_numeric: schema.n_numeric(),
            n_categorical: schema.n_categorical(),
            vocab_sizes: schema
                .categorical_features()
                .map(|f| f.categories.len())
                .collect(),
            numeric_slots,
            categorical_slots,
        }
    }

    pub fn n_features(&self) -> usize {
        self.n_numeric + self.n_categorical
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VaeConfig {
    pub volume_shape: [usize; 3],
    /// Output channels of each stride-2 encoder conv; length = n_down.
    pub enc_channels: Vec<usize>,
    /// Decoder widths from the latent side; length = n_down + 1.
    pub dec_channels: Vec<usize>,
    /// Transposed-conv kernel per upsampling level (4 or 2); length = n_down.
    pub dec_kernels: Vec<usize>,
    pub c_lat: usize,
    pub d_tok: usize,
    pub n_heads: usize,
    pub d_head: usize,
    pub n_fuse: usize,
    pub n_tab_layers: usize,
    pub ffn_mult: usize,
    pub gn_groups: usize,
    pub logvar_clamp: (f64, f64),
    pub disc_channels: Vec<usize>,
    pub extractor_seed: u64,
    pub init_seed: u64,
    pub tabular: TabularDims,
}

impl VaeConfig {
    pub fn for_schema(schema: &TabularSchema, volume_shape: [usize; 3]) -> Self {
        VaeConfig {
            volume_shape,
            enc_channels: vec![8, 16, 32],
            dec_channels: vec![32, 32, 16, 8],
            dec_kernels: vec![4, 4, 2],
            c_lat: 4,
            d_tok: 16,
            n_heads: 4,
            d_head: 32,
            n_fuse: 2,
            n_tab_layers: 2,
            ffn_mult: 2,
            gn_groups: 4,
            logvar_clamp: (-30.0, 20.0),
            disc_channels: vec![8, 16],
            extractor_seed: jointsynth_nn::DEFAULT_EXTRACTOR_SEED,
            init_seed: 1,
            tabular: TabularDims::from_schema(schema),
        }
    }

    pub fn n_down(&self) -> usize {
        self.enc_channels.len()
    }

    /// Width of the fused token stream; equals the encoder's final channels.
    pub fn d_model(&self) -> usize {
        *self.enc_channels.last().expect("non-empty enc_channels")
    }

    pub fn latent_grid(&self) -> [usize; 3] {
        let s = 1 << self.n_down();
        [
            self.volume_shape[0] / s,
            self.volume_shape[1] / s,
            self.volume_shape[2] / s,
        ]
    }

    pub fn n_latent_tokens(&self) -> usize {
        self.latent_grid().iter().product()
    }

    pub fn validate(&self) -> Result<()> {
        let s = 1 << self.n_down();
        if self.volume_shape.iter().any(|&d| d % s != 0) {
            return Err(VaeError::Shape(format!(
                "volume shape {:?} not divisible by 2^{}",
                self.volume_shape,
                self.n_down()
            )));
        }
        if self.dec_channels.len() != self.n_down() + 1 {
            return Err(VaeError::Config(
                "dec_channels must have n_down + 1 entries".into(),
            ));
        }
        if self.dec_kernels.len() != self.n_down() {
            return Err(VaeError::Config(
                "dec_kernels must have n_down entries".into(),
            ));
        }
        if self.dec_kernels.iter().any(|&k| k != 2 && k != 4) {
            return Err(VaeError::Config(
                "dec_kernels entries must be 2 or 4 (stride-2 doubling)".into(),
            ));
        }
        if self.tabular.n_features() == 0 {
            return Err(VaeError::Config("schema has no features".into()));
        }
        Ok(())
    }
}

/// Largest divisor of `channels` that is at most `preferred`.
pub(crate) fn norm_groups(preferred: usize, channels: usize) -> usize {
    (1..=preferred.min(channels))
        .rev()
        .find(|g| channels % g == 0)
        .unwrap_or(1)
}
