use serde::{Deserialize, Serialize};

use jointsynth_nn::{Graph, ParamStore, Rng, Scalar, Tensor, Var};
use jointsynth_vae::ParamSource;

use crate::{DiffusionError, Result};

/// U-Net-shaped epsilon predictor over the latent grid. Input and output
/// shapes are identical. Each level halves the grid; skip connections concat
/// back on the way up. Timesteps enter through a sinusoidal embedding and
/// per-resblock channel shifts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenoiserConfig {
    pub c_lat: usize,
    pub latent_grid: [usize; 3],
    /// Channels per resolution level, coarsest last; len >= 1.
    pub channels: Vec<usize>,
    pub temb_dim: usize,
    pub gn_groups: usize,
    pub init_seed: u64,
}

impl DenoiserConfig {
    pub fn for_latent(c_lat: usize, latent_grid: [usize; 3]) -> Self {
        // don't downsample past the grid
        let min_extent = *latent_grid.iter().min().unwrap();
        let channels = if min_extent >= 4 {
            vec![48, 96]
        } else {
            vec![48]
        };
        DenoiserConfig {
            c_lat,
            latent_grid,
            channels,
            temb_dim: 64,
            gn_groups: 4,
            init_seed: 2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels.is_empty() {
            return Err(DiffusionError::Config("denoiser needs >= 1 level".into()));
        }
        let levels = self.channels.len();
        let min_extent = *self.latent_grid.iter().min().unwrap();
        if levels > 1 && min_extent < (1 << (levels - 1)) {
            return Err(DiffusionError::Config(format!(
                "latent grid {:?} too small for {levels} levels",
                self.latent_grid
            )));
        }
        Ok(())
    }
}

fn groups_for(preferred: usize, channels: usize) -> usize {
    (1..=preferred.min(channels))
        .rev()
        .find(|g| channels % g == 0)
        .unwrap_or(1)
}

/// Sinusoidal embedding of integer timesteps, [B, dim].
pub fn timestep_embedding<S: Scalar>(ts: &[usize], dim: usize) -> Tensor<S> {
    let half = dim / 2;
    let mut data = Vec::with_capacity(ts.len() * dim);
    for &t in ts {
        for i in 0..half {
            let freq = (-(i as f64) * (10000f64).ln() / half as f64).exp();
            let angle = t as f64 * freq;
            data.push(S::from_f64(angle.sin()));
        }
        for i in 0..half {
            let freq = (-(i as f64) * (10000f64).ln() / half as f64).exp();
            let angle = t as f64 * freq;
            data.push(S::from_f64(angle.cos()));
        }
    }
    Tensor::from_vec(vec![ts.len(), dim], data)
}

fn conv_w<S: Scalar>(co: usize, ci: usize, k: usize, rng: &mut Rng) -> Tensor<S> {
    let fan_in = ci * k * k * k;
    Tensor::randn(vec![co, ci, k, k, k], (2.0 / fan_in as f64).sqrt(), rng)
}

fn linear_w<S: Scalar>(fan_in: usize, fan_out: usize, rng: &mut Rng) -> Tensor<S> {
    Tensor::randn(vec![fan_in, fan_out], (1.0 / fan_in as f64).sqrt(), rng)
}

fn register_ln<S: Scalar>(store: &mut ParamStore<S>, prefix: &str, dim: usize) {
    store.register(&format!("{prefix}.g"), Tensor::full(vec![dim], S::ONE));
    store.register(&format!("{prefix}.b"), Tensor::zeros(vec![dim]));
}

fn register_resblock<S: Scalar>(
    store: &mut ParamStore<S>,
    prefix: &str,
    c_in: usize,
    c_out: usize,
    temb_dim: usize,
    rng: &mut Rng,
) {
    register_ln(store, &format!("{prefix}.gn1"), c_in);
    store.register(&format!("{prefix}.conv1.w"), conv_w(c_out, c_in, 3, rng));
    store.register(&format!("{prefix}.conv1.b"), Tensor::zeros(vec![c_out]));
    store.register(&format!("{prefix}.temb.w"), linear_w(temb_dim, c_out, rng));
    store.register(&format!("{prefix}.temb.b"), Tensor::zeros(vec![c_out]));
    register_ln(store, &format!("{prefix}.gn2"), c_out);
    store.register(&format!("{prefix}.conv2.w"), conv_w(c_out, c_out, 3, rng));
    store.register(&format!("{prefix}.conv2.b"), Tensor::zeros(vec![c_out]));
    if c_in != c_out {
        store.register(&format!("{prefix}.skip.w"), conv_w(c_out, c_in, 1, rng));
        store.register(&format!("{prefix}.skip.b"), Tensor::zeros(vec![c_out]));
    }
}

pub fn init_denoiser_params<S: Scalar>(config: &DenoiserConfig) -> ParamStore<S> {
    let mut rng = Rng::from_seed(config.init_seed);
    let mut store = ParamStore::new();
    let ch = &config.channels;
    let levels = ch.len();

    store.register("ldm.temb.w1", linear_w(config.temb_dim, config.temb_dim, &mut rng));
    store.register("ldm.temb.b1", Tensor::zeros(vec![config.temb_dim]));
    store.register("ldm.temb.w2", linear_w(config.temb_dim, config.temb_dim, &mut rng));
    store.register("ldm.temb.b2", Tensor::zeros(vec![config.temb_dim]));

    store.register("ldm.conv_in.w", conv_w(ch[0], config.c_lat, 3, &mut rng));
    store.register("ldm.conv_in.b", Tensor::zeros(vec![ch[0]]));

    for i in 0..levels {
        register_resblock(&mut store, &format!("ldm.down{i}.res"), ch[i], ch[i], config.temb_dim, &mut rng);
        if i + 1 < levels {
            store.register(&format!("ldm.down{i}.pool.w"), conv_w(ch[i + 1], ch[i], 3, &mut rng));
            store.register(&format!("ldm.down{i}.pool.b"), Tensor::zeros(vec![ch[i + 1]]));
        }
    }
    let top = ch[levels - 1];
    register_resblock(&mut store, "ldm.mid.res", top, top, config.temb_dim, &mut rng);
    for i in (0..levels.saturating_sub(1)).rev() {
        // convT [ci, co, 4,4,4]
        let fan_in = ch[i + 1] * 64;
        store.register(
            &format!("ldm.up{i}.unpool.w"),
            Tensor::randn(vec![ch[i + 1], ch[i], 4, 4, 4], (2.0 / fan_in as f64).sqrt(), &mut rng),
        );
        store.register(&format!("ldm.up{i}.unpool.b"), Tensor::zeros(vec![ch[i]]));
        // after skip concat: 2*ch[i] -> ch[i]
        register_resblock(&mut store, &format!("ldm.up{i}.res"), 2 * ch[i], ch[i], config.temb_dim, &mut rng);
    }
    register_ln(&mut store, "ldm.out.gn", ch[0]);
    // zero-initialized output head: the model starts by predicting zero noise
    store.register("ldm.out.w", Tensor::zeros(vec![config.c_lat, ch[0], 3, 3, 3]));
    store.register("ldm.out.b", Tensor::zeros(vec![config.c_lat]));
    store
}

fn resblock<S: Scalar>(
    g: &mut Graph<S>,
    src: &ParamSource<S>,
    prefix: &str,
    x: Var,
    temb: Var,
    gn_groups: usize,
) -> Var {
    let c_in = g.shape(x)[1];
    let g1g = src.var(g, &format!("{prefix}.gn1.g"));
    let g1b = src.var(g, &format!("{prefix}.gn1.b"));
    let h = g.group_norm(x, g1g, g1b, groups_for(gn_groups, c_in), 1e-5);
    let h = g.silu(h);
    let w1 = src.var(g, &format!("{prefix}.conv1.w"));
    let b1 = src.var(g, &format!("{prefix}.conv1.b"));
    let h = g.conv3d(h, w1, b1, 1, 1);
    let c_out = g.shape(h)[1];

    let tw = src.var(g, &format!("{prefix}.temb.w"));
    let tb = src.var(g, &format!("{prefix}.temb.b"));
    let shift = g.linear(temb, tw, tb); // [B, c_out]
    let h = g.add_channel_vec(h, shift);

    let g2g = src.var(g, &format!("{prefix}.gn2.g"));
    let g2b = src.var(g, &format!("{prefix}.gn2.b"));
    let h = g.group_norm(h, g2g, g2b, groups_for(gn_groups, c_out), 1e-5);
    let h = g.silu(h);
    let w2 = src.var(g, &format!("{prefix}.conv2.w"));
    let b2 = src.var(g, &format!("{prefix}.conv2.b"));
    let h = g.conv3d(h, w2, b2, 1, 1);

    let skip = if c_in != c_out {
        let sw = src.var(g, &format!("{prefix}.skip.w"));
        let sb = src.var(g, &format!("{prefix}.skip.b"));
        g.conv3d(x, sw, sb, 1, 0)
    } else {
        x
    };
    g.add(h, skip)
}

/// eps prediction for a noisy latent batch [B, c_lat, grid] at timesteps `ts`.
pub fn denoiser_forward<S: Scalar>(
    g: &mut Graph<S>,
    src: &ParamSource<S>,
    config: &DenoiserConfig,
    z_t: Var,
    ts: &[usize],
) -> Var {
    let levels = config.channels.len();
    let temb0 = g.input(timestep_embedding::<S>(ts, config.temb_dim));
    let w1 = src.var(g, "ldm.temb.w1");
    let b1 = src.var(g, "ldm.temb.b1");
    let h = g.linear(temb0, w1, b1);
    let h = g.silu(h);
    let w2 = src.var(g, "ldm.temb.w2");
    let b2 = src.var(g, "ldm.temb.b2");
    let temb = g.linear(h, w2, b2);

    let wi = src.var(g, "ldm.conv_in.w");
    let bi = src.var(g, "ldm.conv_in.b");
    let mut h = g.conv3d(z_t, wi, bi, 1, 1);

    let mut skips = Vec::with_capacity(levels);
    for i in 0..levels {
        h = resblock(g, src, &format!("ldm.down{i}.res"), h, temb, config.gn_groups);
        skips.push(h);
        if i + 1 < levels {
            let pw = src.var(g, &format!("ldm.down{i}.pool.w"));
            let pb = src.var(g, &format!("ldm.down{i}.pool.b"));
            h = g.conv3d(h, pw, pb, 2, 1);
        }
    }
    h = resblock(g, src, "ldm.mid.res", h, temb, config.gn_groups);
    for i in (0..levels.saturating_sub(1)).rev() {
        let uw = src.var(g, &format!("ldm.up{i}.unpool.w"));
        let ub = src.var(g, &format!("ldm.up{i}.unpool.b"));
        h = g.conv_transpose3d(h, uw, ub, 2, 1);
        h = g.concat(1, h, skips[i]);
        h = resblock(g, src, &format!("ldm.up{i}.res"), h, temb, config.gn_groups);
    }
    let og = src.var(g, "ldm.out.gn.g");
    let ob = src.var(g, "ldm.out.gn.b");
    let c = g.shape(h)[1];
    h = g.group_norm(h, og, ob, groups_for(config.gn_groups, c), 1e-5);
    h = g.silu(h);
    let ow = src.var(g, "ldm.out.w");
    let obias = src.var(g, "ldm.out.b");
    g.conv3d(h, ow, obias, 1, 1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn output_shape_matches_input() {
        for grid in [[4usize, 4, 4], [2, 2, 2]] {
            let cfg = DenoiserConfig::for_latent(4, grid);
            cfg.validate().unwrap();
            let store = init_denoiser_params::<f32>(&cfg);
            let mut g = Graph::new();
            let src = ParamSource::frozen(&store);
            let z = g.input(Tensor::randn(
                vec![2, 4, grid[0], grid[1], grid[2]],
                1.0,
                &mut Rng::from_seed(1),
            ));
            let out = denoiser_forward(&mut g, &src, &cfg, z, &[10, 500]);
            assert_eq!(g.shape(out), g.shape(z));
        }
    }

    #[test]
    fn fresh_model_predicts_zero() {
        // zero-initialized output head: the initial prediction is exactly 0
        let cfg = DenoiserConfig::for_latent(2, [4, 4, 4]);
        let store = init_denoiser_params::<f32>(&cfg);
        let mut g = Graph::new();
        let src = ParamSource::frozen(&store);
        let z = g.input(Tensor::randn(vec![1, 2, 4, 4, 4], 1.0, &mut Rng::from_seed(2)));
        let out = denoiser_forward(&mut g, &src, &cfg, z, &[3]);
        assert!(g.value(out).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn timestep_embedding_distinguishes_timesteps() {
        let a = timestep_embedding::<f64>(&[1], 64);
        let b = timestep_embedding::<f64>(&[999], 64);
        assert_ne!(a.data(), b.data());
        let c = timestep_embedding::<f64>(&[1], 64);
        assert_eq!(a.data(), c.data());
    }
}
