use jointsynth_nn::{Graph, ParamStore, Rng, Tensor};
use jointsynth_phantom::Volume;
use jointsynth_tabular::{decode_outputs, MixedRecord};
use jointsynth_vae::{decode_image, decode_tabular, ParamSource, VaeCheckpointMeta};

use crate::ddim::{ddim_step, SamplerConfig};
use crate::denoiser::denoiser_forward;
use crate::train::LdmCheckpointMeta;
use crate::Result;

const CHAIN_BATCH: usize = 32;

/// Draws `n` latents by DDIM, starting from N(0, I) and walking the
/// decreasing timestep subsequence. Each chain owns the rng stream
/// (seed, chain index); with eta = 0 the result is a pure function of
/// (seed, params, config). Returned latents are in the scaled model space.
pub fn sample_latents(
    n: usize,
    store: &ParamStore<f32>,
    meta: &LdmCheckpointMeta,
    sampler: &SamplerConfig,
    seed: u64,
) -> Result<Vec<Vec<f32>>> {
    let schedule = meta.schedule.build()?;
    sampler.validate(schedule.len())?;
    let [c, gd, gh, gw] = meta.latent_shape;
    let numel = c * gd * gh * gw;

    let mut rngs: Vec<Rng> = (0..n).map(|i| Rng::from_stream(seed, i as u64)).collect();
    let mut chains: Vec<Vec<f32>> = rngs
        .iter_mut()
        .map(|r| (0..numel).map(|_| r.normal() as f32).collect())
        .collect();

    let transitions = sampler.transitions();
    for &(t, t_prev) in &transitions {
        for start in (0..n).step_by(CHAIN_BATCH) {
            let end = (start + CHAIN_BATCH).min(n);
            let b = end - start;
            let mut flat = Vec::with_capacity(b * numel);
            for chain in &chains[start..end] {
                flat.extend_from_slice(chain);
            }
            let mut g = Graph::new();
            let src = ParamSource::frozen(store);
            let z = g.input(Tensor::from_vec(vec![b, c, gd, gh, gw], flat));
            let pred = denoiser_forward(&mut g, &src, &meta.denoiser, z, &vec![t; b]);
            let pred = g.value(pred).data().to_vec();
            for (k, chain) in chains[start..end].iter_mut().enumerate() {
                let eps = &pred[k * numel..(k + 1) * numel];
                *chain = ddim_step(
                    chain,
                    eps,
                    t,
                    t_prev,
                    &schedule,
                    sampler.eta,
                    Some(&mut rngs[start + k]),
                )?;
            }
        }
    }
    Ok(chains)
}

/// Full joint synthesis: sample latents, unscale, and decode both modalities
/// from the same latent sample.
pub fn synthesize_pairs(
    n: usize,
    vae_store: &ParamStore<f32>,
    vae_meta: &VaeCheckpointMeta,
    ldm_store: &ParamStore<f32>,
    ldm_meta: &LdmCheckpointMeta,
    sampler: &SamplerConfig,
    seed: u64,
) -> Result<Vec<(Volume, MixedRecord)>> {
    let latents = sample_latents(n, ldm_store, ldm_meta, sampler, seed)?;
    let inv_scale = (1.0 / ldm_meta.latent_scale) as f32;
    let [c, gd, gh, gw] = ldm_meta.latent_shape;
    let numel = c * gd * gh * gw;
    let [d, h, w] = vae_meta.config.volume_shape;
    let voxel_size = [1800.0 / d as f32, 600.0 / h as f32, 600.0 / w as f32];
    let schema = &vae_meta.schema;
    let norm = &vae_meta.normalizer;

    let mut out = Vec::with_capacity(n);
    for start in (0..n).step_by(CHAIN_BATCH) {
        let end = (start + CHAIN_BATCH).min(n);
        let b = end - start;
        let mut flat = Vec::with_capacity(b * numel);
        for l in &latents[start..end] {
            flat.extend(l.iter().map(|&v| v * inv_scale));
        }
        let mut g = Graph::new();
        let src = ParamSource::frozen(vae_store);
        let z = g.input(Tensor::from_vec(vec![b, c, gd, gh, gw], flat));
        let recon = decode_image(&mut g, &src, &vae_meta.config, z);
        let (numeric_preds, categorical_logits) = decode_tabular(&mut g, &src, &vae_meta.config, z);
        let vox = g.value(recon).data();
        let nums = g.value(numeric_preds).data();
        let n_num = vae_meta.config.tabular.n_numeric;
        let logits: Vec<&[f32]> = categorical_logits
            .iter()
            .map(|&v| g.value(v).data())
            .collect();
        for k in 0..b {
            let voxels: Vec<f32> = vox[k * d * h * w..(k + 1) * d * h * w]
                .iter()
                .map(|&v| v.clamp(0.0, 1.0))
                .collect();
            let volume = Volume::new([d, h, w], voxels, voxel_size);
            let numeric: Vec<f64> = (0..n_num).map(|i| nums[k * n_num + i] as f64).collect();
            let cat_logits: Vec<Vec<f64>> = logits
                .iter()
                .zip(&vae_meta.config.tabular.vocab_sizes)
                .map(|(l, &kk)| l[k * kk..(k + 1) * kk].iter().map(|&v| v as f64).collect())
                .collect();
            let record = decode_outputs(&numeric, &cat_logits, schema, norm)?;
            out.push((volume, record));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::denoiser::DenoiserConfig;
    use crate::train::{train_ldm, LdmTrainSettings, ScheduleSettings};
    use jointsynth_vae::LatentBatch;

    fn toy_latents(n: usize, seed: u64) -> LatentBatch {
        let mut rng = Rng::from_seed(seed);
        let latents = (0..n)
            .map(|_| {
                let c = if rng.bernoulli(0.5) { 1.5f32 } else { -1.5 };
                vec![c + 0.2 * rng.normal() as f32, c + 0.2 * rng.normal() as f32]
            })
            .collect();
        LatentBatch {
            latents,
            latent_shape: [2, 1, 1, 1],
        }
    }

    #[test]
    fn sample_shapes_and_determinism() {
        let latents = toy_latents(64, 1);
        let mut cfg = DenoiserConfig::for_latent(2, [1, 1, 1]);
        cfg.channels = vec![16];
        cfg.temb_dim = 16;
        let settings = LdmTrainSettings {
            steps: 20,
            batch_size: 16,
            lr: 1e-3,
            seed: 2,
            schedule: ScheduleSettings::default(),
            grad_clip: Some(1.0),
        };
        let trained = train_ldm(&latents, &cfg, &settings, None, None).unwrap();
        let sampler = SamplerConfig::uniform(1000, 25).unwrap();
        let a = sample_latents(5, &trained.store, &trained.meta, &sampler, 9).unwrap();
        assert_eq!(a.len(), 5);
        assert_eq!(a[0].len(), 2);
        let b = sample_latents(5, &trained.store, &trained.meta, &sampler, 9).unwrap();
        assert_eq!(a, b, "eta = 0 sampling must be deterministic");
        let c = sample_latents(5, &trained.store, &trained.meta, &sampler, 10).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn coarse_ddim_matches_fine_ddim_on_toy_mixture() {
        // train a small denoiser on a two-component mixture, then compare
        // 1000-step and 50-step DDIM sample means
        let latents = toy_latents(512, 3);
        let mut cfg = DenoiserConfig::for_latent(2, [1, 1, 1]);
        cfg.channels = vec![32];
        cfg.temb_dim = 32;
        let settings = LdmTrainSettings {
            steps: 1200,
            batch_size: 32,
            lr: 2e-3,
            seed: 4,
            schedule: ScheduleSettings::default(),
            grad_clip: Some(1.0),
        };
        let trained = train_ldm(&latents, &cfg, &settings, None, None).unwrap();
        let n = 200;
        let fine = SamplerConfig::uniform(1000, 1000).unwrap();
        let coarse = SamplerConfig::uniform(1000, 50).unwrap();
        let a = sample_latents(n, &trained.store, &trained.meta, &fine, 11).unwrap();
        let b = sample_latents(n, &trained.store, &trained.meta, &coarse, 11).unwrap();
        for dim in 0..2 {
            let ma: f64 = a.iter().map(|s| s[dim] as f64).sum::<f64>() / n as f64;
            let mb: f64 = b.iter().map(|s| s[dim] as f64).sum::<f64>() / n as f64;
            assert!(
                (ma - mb).abs() < 0.1,
                "dim {dim}: fine mean {ma} vs coarse {mb}"
            );
        }
    }
}
