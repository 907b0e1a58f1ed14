use jointsynth_nn::VolumeEmbedder;
use jointsynth_phantom::Volume;

use crate::{MetricsError, Result};

/// Dense feature rows (samples x embedding dim), all finite.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix {
    pub rows: Vec<Vec<f64>>,
}

impl FeatureMatrix {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        if let Some(first) = rows.first() {
            let dim = first.len();
            for (i, r) in rows.iter().enumerate() {
                if r.len() != dim {
                    return Err(MetricsError::Dimension(format!(
                        "row {i} has {} columns, expected {dim}",
                        r.len()
                    )));
                }
                if r.iter().any(|v| !v.is_finite()) {
                    return Err(MetricsError::NonFinite(format!("feature row {i}")));
                }
            }
        }
        Ok(FeatureMatrix { rows })
    }

    pub fn n(&self) -> usize {
        self.rows.len()
    }

    pub fn dim(&self) -> usize {
        self.rows.first().map_or(0, |r| r.len())
    }
}

/// One embedding row per volume through a deterministic extractor.
pub fn embed_volumes(volumes: &[Volume], embedder: &dyn VolumeEmbedder) -> Result<FeatureMatrix> {
    if volumes.is_empty() {
        return Ok(FeatureMatrix { rows: Vec::new() });
    }
    let shape = volumes[0].shape;
    for (i, v) in volumes.iter().enumerate() {
        if v.shape != shape {
            return Err(MetricsError::Dimension(format!(
                "volume {i} shape {:?} differs from {:?}",
                v.shape, shape
            )));
        }
    }
    let bufs: Vec<Vec<f32>> = volumes.iter().map(|v| v.voxels.clone()).collect();
    let rows = embedder.embed(&bufs, &shape);
    FeatureMatrix::new(rows)
}
