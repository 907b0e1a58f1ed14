//! Fixed, seeded random 3D conv feature stack.
//!
//! Serves two roles behind one set of frozen weights: the perceptual-loss
//! feature maps used while training the VAE, and pooled per-volume embedding
//! vectors for distribution metrics. Random features are deterministic and
//! dependency-free; a pretrained network can be dropped in through the
//! `VolumeEmbedder` trait without touching callers.

use crate::graph::{Graph, Var};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const DEFAULT_EXTRACTOR_SEED: u64 = 0x5EED_FACE;

/// Channel widths of the three stride-2 stages.
const STAGES: [usize; 3] = [8, 16, 32];

/// Pluggable volume-to-vector embedding used by evaluation metrics.
pub trait VolumeEmbedder {
    /// One embedding row per volume; must be deterministic.
    fn embed(&self, volumes: &[Vec<f32>], shape: &[usize; 3]) -> Vec<Vec<f64>>;
    fn dim(&self) -> usize;
}

pub struct RandomConvExtractor {
    weights: Vec<Tensor<f32>>, // [co, ci, 3,3,3] per stage
    biases: Vec<Tensor<f32>>,
    pub seed: u64,
}

impl RandomConvExtractor {
    pub fn new(seed: u64) -> Self {
        let mut rng = Rng::from_seed(seed);
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        let mut c_in = 1usize;
        for &c_out in &STAGES {
            let fan_in = c_in * 27;
            let std = (2.0 / fan_in as f64).sqrt();
            weights.push(Tensor::randn(vec![c_out, c_in, 3, 3, 3], std, &mut rng));
            biases.push(Tensor::zeros(vec![c_out]));
            c_in = c_out;
        }
        RandomConvExtractor {
            weights,
            biases,
            seed,
        }
    }

    /// Feature maps per stage for a batch already on a graph. Weights enter
    /// as inputs (constants), so gradients flow to `x` but never to the stack.
    pub fn features<S: Scalar>(&self, g: &mut Graph<S>, x: Var) -> Vec<Var> {
        let mut maps = Vec::with_capacity(STAGES.len());
        let mut h = x;
        for (w, b) in self.weights.iter().zip(&self.biases) {
            let w = g.input(cast_tensor(w));
            let b = g.input(cast_tensor(b));
            let conv = g.conv3d(h, w, b, 2, 1);
            h = g.silu(conv);
            maps.push(h);
        }
        maps
    }
}

fn cast_tensor<S: Scalar>(t: &Tensor<f32>) -> Tensor<S> {
    Tensor::from_vec(
        t.shape().to_vec(),
        t.data().iter().map(|&v| S::from_f64(v as f64)).collect(),
    )
}

impl VolumeEmbedder for RandomConvExtractor {
    fn embed(&self, volumes: &[Vec<f32>], shape: &[usize; 3]) -> Vec<Vec<f64>> {
        let (d, h, w) = (shape[0], shape[1], shape[2]);
        let mut out = Vec::with_capacity(volumes.len());
        for vol in volumes {
            assert_eq!(vol.len(), d * h * w, "volume does not match shape");
            let mut g: Graph<f32> = Graph::new();
            let x = g.input(Tensor::from_vec(vec![1, 1, d, h, w], vol.clone()));
            let maps = self.features(&mut g, x);
            let mut row = Vec::with_capacity(self.dim());
            for m in maps {
                let pooled = g.global_avg_pool(m);
                row.extend(g.value(pooled).data().iter().map(|&v| v as f64));
            }
            out.push(row);
        }
        out
    }

    fn dim(&self) -> usize {
        STAGES.iter().sum()
    }
}
