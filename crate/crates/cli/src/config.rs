use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};

use jointsynth_diffusion::{LdmTrainSettings, SamplerConfig, ScheduleSettings};
use jointsynth_metrics::EvalConfig;
use jointsynth_phantom::{AttributeParams, CohortConfig};
use jointsynth_tabular::TabularSchema;
use jointsynth_vae::{LossWeights, VaeConfig, VaeTrainSettings};

use crate::ini::Ini;

/// Everything a run needs, read from one flat INI file. Seeds are explicit
/// (no wall-clock defaults); `--seed` overrides the seed of the section
/// driving the current command.
#[derive(Clone, Debug)]
pub struct RunConfig {
    pub cohort: CohortConfig,
    pub split_ratio: f64,
    pub split_seed: u64,
    pub vae_train: VaeTrainSettings,
    pub vae_arch: VaeArchSettings,
    pub latent_seed: u64,
    pub ldm_train: LdmTrainSettings,
    pub ldm_channels: Vec<usize>,
    pub sampler_steps: usize,
    pub sampler_eta: f64,
    pub sampler_seed: u64,
    pub n_samples: usize,
    pub eval: EvalConfig,
    pub workdir: PathBuf,
}

/// Architecture knobs forwarded into `VaeConfig::for_schema`.
#[derive(Clone, Debug)]
pub struct VaeArchSettings {
    pub enc_channels: Vec<usize>,
    pub dec_channels: Vec<usize>,
    pub dec_kernels: Vec<usize>,
    pub c_lat: usize,
    pub d_tok: usize,
    pub n_heads: usize,
    pub d_head: usize,
    pub n_fuse: usize,
    pub n_tab_layers: usize,
    pub init_seed: u64,
}

impl RunConfig {
    pub fn load(path: &Path, workdir_override: Option<&Path>) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        let ini = Ini::parse(&text)?;

        let c = ini.section("cohort");
        let shape = c.get_list::<usize>("volume_shape", &[32, 32, 32])?;
        if shape.len() != 3 {
            bail!("[cohort] volume_shape needs exactly 3 components");
        }
        let cohort = CohortConfig {
            n_subjects: c.get("n_subjects", 100)?,
            volume_shape: [shape[0], shape[1], shape[2]],
            rng_seed: c.require::<u64>("seed")?,
            noise_sigma: c.get("noise_sigma", 0.02)?,
            render_supersample: c.get("render_supersample", 3)?,
            attributes: AttributeParams::default(),
        };
        let split_ratio = c.get("split_ratio", 0.9)?;
        let split_seed = c.get("split_seed", cohort.rng_seed ^ 0x5011)?;

        let v = ini.section("vae");
        let vae_train = VaeTrainSettings {
            steps: v.get("steps", 2000)?,
            batch_size: v.get("batch_size", 4)?,
            lr: v.get("lr", 1e-4)?,
            disc_lr: v.get("disc_lr", 1e-4)?,
            seed: v.require::<u64>("seed")?,
            adv_warmup: v.get("adv_warmup", 500)?,
            weights: LossWeights {
                lambda_perc: v.get("lambda_perc", 0.3)?,
                lambda_adv: v.get("lambda_adv", 0.1)?,
                lambda_kl: v.get("lambda_kl", 1e-6)?,
            },
            grad_clip: Some(v.get("grad_clip", 1.0)?),
        };
        let vae_arch = VaeArchSettings {
            enc_channels: v.get_list("enc_channels", &[8, 16, 32])?,
            dec_channels: v.get_list("dec_channels", &[32, 32, 16, 8])?,
            dec_kernels: v.get_list("dec_kernels", &[4, 4, 2])?,
            c_lat: v.get("c_lat", 4)?,
            d_tok: v.get("d_tok", 16)?,
            n_heads: v.get("n_heads", 4)?,
            d_head: v.get("d_head", 32)?,
            n_fuse: v.get("n_fuse", 2)?,
            n_tab_layers: v.get("n_tab_layers", 2)?,
            init_seed: v.get("init_seed", 1)?,
        };
        let latent_seed = v.get("latent_seed", vae_train.seed ^ 0xA17E)?;

        let d = ini.section("diffusion");
        let ldm_train = LdmTrainSettings {
            steps: d.get("steps", 20_000)?,
            batch_size: d.get("batch_size", 16)?,
            lr: d.get("lr", 1e-3)?,
            seed: d.require::<u64>("seed")?,
            schedule: ScheduleSettings {
                timesteps: d.get("timesteps", 1000)?,
                beta_start: d.get("beta_start", 1e-4)?,
                beta_end: d.get("beta_end", 2e-2)?,
            },
            grad_clip: Some(d.get("grad_clip", 1.0)?),
        };
        let ldm_channels = d.get_list("channels", &[48, 96])?;

        let s = ini.section("sampler");
        let sampler_steps = s.get("n_steps", 50)?;
        let sampler_eta = s.get("eta", 0.0)?;
        let sampler_seed = s.require::<u64>("seed")?;
        let n_samples = s.get("n_samples", 256)?;

        let e = ini.section("eval");
        let eval = EvalConfig {
            seed: e.require::<u64>("seed")?,
            sinkhorn_eps_scale: e.get("sinkhorn_eps_scale", 0.05)?,
            sinkhorn_max_iters: e.get("sinkhorn_max_iters", 1000)?,
            sinkhorn_tol: e.get("sinkhorn_tol", 1e-6)?,
            alpha_grid_levels: e.get("alpha_grid_levels", 30)?,
            extractor_seed: e.get("extractor_seed", jointsynth_nn::DEFAULT_EXTRACTOR_SEED)?,
        };

        let workdir = if let Some(w) = workdir_override {
            w.to_path_buf()
        } else if let Ok(env) = std::env::var("JOINT_SYNTH_WORKDIR") {
            PathBuf::from(env)
        } else if let Some(p) = ini.section("paths").raw("workdir") {
            PathBuf::from(p)
        } else {
            bail!("no work directory: set [paths] workdir, JOINT_SYNTH_WORKDIR, or --workdir");
        };

        Ok(RunConfig {
            cohort,
            split_ratio,
            split_seed,
            vae_train,
            vae_arch,
            latent_seed,
            ldm_train,
            ldm_channels,
            sampler_steps,
            sampler_eta,
            sampler_seed,
            n_samples,
            eval,
            workdir,
        })
    }

    pub fn vae_config(&self, schema: &TabularSchema) -> VaeConfig {
        let a = &self.vae_arch;
        let mut cfg = VaeConfig::for_schema(schema, self.cohort.volume_shape);
        cfg.enc_channels = a.enc_channels.clone();
        cfg.dec_channels = a.dec_channels.clone();
        cfg.dec_kernels = a.dec_kernels.clone();
        cfg.c_lat = a.c_lat;
        cfg.d_tok = a.d_tok;
        cfg.n_heads = a.n_heads;
        cfg.d_head = a.d_head;
        cfg.n_fuse = a.n_fuse;
        cfg.n_tab_layers = a.n_tab_layers;
        cfg.init_seed = a.init_seed;
        cfg.extractor_seed = self.eval.extractor_seed;
        cfg
    }

    pub fn sampler(&self, t_total: usize) -> anyhow::Result<SamplerConfig> {
        let mut cfg = SamplerConfig::uniform(t_total, self.sampler_steps)?;
        cfg.eta = self.sampler_eta;
        Ok(cfg)
    }

    pub fn cohorts_dir(&self) -> PathBuf {
        self.workdir.join("cohorts")
    }

    pub fn checkpoints_dir(&self) -> PathBuf {
        self.workdir.join("checkpoints")
    }

    pub fn samples_dir(&self) -> PathBuf {
        self.workdir.join("samples")
    }

    pub fn reports_dir(&self) -> PathBuf {
        self.workdir.join("reports")
    }
}
