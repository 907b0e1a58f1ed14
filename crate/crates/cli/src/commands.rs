use std::fmt;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};

use jointsynth_diffusion::{
    load_ldm_checkpoint, synthesize_pairs, train_ldm, DenoiserConfig,
};
use jointsynth_metrics::{evaluate_all, MetricsReport};
use jointsynth_phantom::{
    generate_cohort, load_cohort, save_cohort, split_dataset, Cohort, Split,
};
use jointsynth_vae::{encode_latents, load_vae_checkpoint, train_vae};

use crate::config::RunConfig;
use crate::plot;

/// Marker attached to failures that should exit with the config code.
#[derive(Debug)]
pub struct ConfigStage;

impl fmt::Display for ConfigStage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("configuration error")
    }
}

/// A required upstream artifact is absent.
#[derive(Debug)]
pub struct MissingArtifact(pub PathBuf);

impl fmt::Display for MissingArtifact {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "missing artifact: expected {} (run the upstream command first)",
            self.0.display()
        )
    }
}

impl std::error::Error for MissingArtifact {}

fn require_path(path: &Path) -> Result<()> {
    if !path.exists() {
        return Err(MissingArtifact(path.to_path_buf()).into());
    }
    Ok(())
}

fn log(quiet: bool, msg: &str) {
    if !quiet {
        eprintln!("{msg}");
    }
}

pub fn cmd_generate_cohort(cfg: &RunConfig, quiet: bool) -> Result<Vec<PathBuf>> {
    let dir = cfg.cohorts_dir().join("real");
    log(quiet, &format!(
        "generating {} phantoms at {:?} (supersample x{}) ...",
        cfg.cohort.n_subjects, cfg.cohort.volume_shape, cfg.cohort.render_supersample
    ));
    let mut cohort = generate_cohort(&cfg.cohort)?;
    split_dataset(&mut cohort.manifest, cfg.split_ratio, cfg.split_seed)?;
    save_cohort(&cohort, &dir)?;
    log(quiet, &format!("cohort written to {}", dir.display()));
    Ok(vec![dir])
}

fn load_real_cohort(cfg: &RunConfig) -> Result<Cohort> {
    let dir = cfg.cohorts_dir().join("real");
    require_path(&dir.join("manifest.csv"))?;
    Ok(load_cohort(&dir)?)
}

pub fn cmd_train_vae(cfg: &RunConfig, quiet: bool) -> Result<Vec<PathBuf>> {
    let cohort = load_real_cohort(cfg)?;
    let vae_cfg = cfg.vae_config(&cohort.manifest.schema);
    vae_cfg.validate()?;
    std::fs::create_dir_all(cfg.checkpoints_dir())?;
    std::fs::create_dir_all(cfg.reports_dir())?;
    let ckpt = cfg.checkpoints_dir().join("vae.ckpt");
    let curve = cfg.reports_dir().join("vae_loss.csv");
    log(quiet, &format!(
        "training VAE: {} steps, batch {}, {} train subjects ...",
        cfg.vae_train.steps,
        cfg.vae_train.batch_size,
        cohort
            .manifest
            .entries
            .iter()
            .filter(|e| e.split == Split::Train)
            .count()
    ));
    let trained = train_vae(&cohort, &vae_cfg, &cfg.vae_train, Some(&ckpt), Some(&curve))?;
    if let Some(last) = trained.reports.last() {
        log(quiet, &format!("final VAE loss {:.4}", last.total));
    }
    Ok(vec![ckpt, curve])
}

pub fn cmd_train_ldm(cfg: &RunConfig, quiet: bool) -> Result<Vec<PathBuf>> {
    let cohort = load_real_cohort(cfg)?;
    let vae_ckpt = cfg.checkpoints_dir().join("vae.ckpt");
    require_path(&vae_ckpt)?;
    let (vae_store, vae_meta) = load_vae_checkpoint(&vae_ckpt)?;
    log(quiet, "encoding training latents ...");
    let latents = encode_latents(&cohort, &vae_store, &vae_meta, Split::Train, cfg.latent_seed)?;
    let mut denoiser = DenoiserConfig::for_latent(
        vae_meta.config.c_lat,
        vae_meta.config.latent_grid(),
    );
    denoiser.channels = cfg.ldm_channels.clone();
    let ckpt = cfg.checkpoints_dir().join("ldm.ckpt");
    let curve = cfg.reports_dir().join("ldm_loss.csv");
    std::fs::create_dir_all(cfg.reports_dir())?;
    log(quiet, &format!(
        "training LDM: {} steps over {} latents ...",
        cfg.ldm_train.steps,
        latents.latents.len()
    ));
    let trained = train_ldm(&latents, &denoiser, &cfg.ldm_train, Some(&ckpt), Some(&curve))?;
    if let Some((_, last)) = trained.losses.last() {
        log(quiet, &format!("final LDM loss {last:.5}"));
    }
    Ok(vec![ckpt, curve])
}

pub fn cmd_sample(cfg: &RunConfig, n_override: Option<usize>, quiet: bool) -> Result<Vec<PathBuf>> {
    let vae_ckpt = cfg.checkpoints_dir().join("vae.ckpt");
    let ldm_ckpt = cfg.checkpoints_dir().join("ldm.ckpt");
    require_path(&vae_ckpt)?;
    require_path(&ldm_ckpt)?;
    let (vae_store, vae_meta) = load_vae_checkpoint(&vae_ckpt)?;
    let (ldm_store, ldm_meta) = load_ldm_checkpoint(&ldm_ckpt)?;
    let n = n_override.unwrap_or(cfg.n_samples);
    let sampler = cfg.sampler(ldm_meta.schedule.timesteps)?;
    log(quiet, &format!(
        "sampling {n} joint pairs with {}-step DDIM (eta {}) ...",
        sampler.timesteps.len(),
        sampler.eta
    ));
    let pairs = synthesize_pairs(
        n,
        &vae_store,
        &vae_meta,
        &ldm_store,
        &ldm_meta,
        &sampler,
        cfg.sampler_seed,
    )?;
    let dir = cfg.samples_dir().join("synthetic");
    let entries = pairs
        .iter()
        .enumerate()
        .map(|(i, (_, record))| jointsynth_phantom::CohortEntry {
            subject_id: format!("synthetic-{i:05}"),
            volume_file: format!("synthetic-{i:05}.mmjs"),
            split: Split::Synthetic,
            record: record.clone(),
        })
        .collect();
    let cohort = Cohort {
        manifest: jointsynth_phantom::CohortManifest {
            schema: vae_meta.schema.clone(),
            entries,
        },
        volumes: pairs.into_iter().map(|(v, _)| v).collect(),
    };
    save_cohort(&cohort, &dir)?;
    log(quiet, &format!("synthetic cohort written to {}", dir.display()));
    Ok(vec![dir])
}

fn filter_cohort(cohort: Cohort, split: Option<Split>) -> Cohort {
    match split {
        None => cohort,
        Some(s) => cohort.filter_split(s),
    }
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_evaluate(
    cfg: &RunConfig,
    real_dir: Option<PathBuf>,
    synth_dir: Option<PathBuf>,
    real_split: Option<Split>,
    synth_split: Option<Split>,
    quiet: bool,
) -> Result<Vec<PathBuf>> {
    let real_dir = real_dir.unwrap_or_else(|| cfg.cohorts_dir().join("real"));
    let synth_dir = synth_dir.unwrap_or_else(|| cfg.samples_dir().join("synthetic"));
    require_path(&real_dir.join("manifest.csv"))?;
    require_path(&synth_dir.join("manifest.csv"))?;
    let real = filter_cohort(load_cohort(&real_dir)?, real_split);
    let synth = filter_cohort(load_cohort(&synth_dir)?, synth_split);
    log(quiet, &format!(
        "evaluating {} real vs {} synthetic subjects ...",
        real.len(),
        synth.len()
    ));
    let report = evaluate_all(&real, &synth, &cfg.eval)?;
    std::fs::create_dir_all(cfg.reports_dir())?;
    let json_path = cfg.reports_dir().join("metrics.json");
    std::fs::write(&json_path, report.to_json())?;

    // per-feature breakdown CSVs
    let uni_path = cfg.reports_dir().join("per_feature_univariate.csv");
    let mut uni = String::from("feature,distance\n");
    for (k, v) in &report.per_feature_univariate {
        uni.push_str(&format!("{k},{v}\n"));
    }
    std::fs::write(&uni_path, uni)?;
    let corr_path = cfg.reports_dir().join("correlation_pairs.csv");
    let mut corr = String::from("feature_a,feature_b,kind,real,synth,distance\n");
    for p in &report.correlation_pairs {
        corr.push_str(&format!(
            "{},{},{:?},{},{},{}\n",
            p.feature_a, p.feature_b, p.kind, p.real, p.synth, p.distance
        ));
    }
    std::fs::write(&corr_path, corr)?;

    for w in &report.warnings {
        log(quiet, &format!("warning: {w}"));
    }
    log(quiet, &format!("metrics written to {}", json_path.display()));
    Ok(vec![json_path, uni_path, corr_path])
}

pub fn cmd_report(cfg: &RunConfig, quiet: bool) -> Result<Vec<PathBuf>> {
    let out_dir = cfg.reports_dir().join("plots");
    std::fs::create_dir_all(&out_dir)?;
    let mut artifacts = Vec::new();

    // metric bars from metrics.json
    let metrics_path = cfg.reports_dir().join("metrics.json");
    if metrics_path.exists() {
        let text = std::fs::read_to_string(&metrics_path)?;
        let report = MetricsReport::from_json(&text).context("malformed metrics.json")?;
        let mut bars = Vec::new();
        for (name, m) in [
            ("fd", &report.fd),
            ("wd_sinkhorn", &report.wd_sinkhorn),
            ("detection", &report.detection),
            ("alpha_precision", &report.alpha_precision),
            ("beta_recall", &report.beta_recall),
            ("univariate_distance", &report.univariate_distance),
            ("correlation_distance", &report.correlation_distance),
        ] {
            match m.value {
                Some(v) => bars.push((name.to_string(), v)),
                None => log(quiet, &format!("warning: metric `{name}` missing, skipped")),
            }
        }
        if bars.is_empty() {
            log(quiet, "warning: no metric values present, metric plot skipped");
        } else {
            let p = out_dir.join("metrics.png");
            plot::bar_chart(&p, "evaluation metrics", &bars)?;
            artifacts.push(p);
        }
    } else {
        log(quiet, "warning: metrics.json not found, metric plot skipped");
    }

    // loss curves
    for (file, title) in [("vae_loss.csv", "vae loss"), ("ldm_loss.csv", "ldm loss")] {
        let path = cfg.reports_dir().join(file);
        if !path.exists() {
            log(quiet, &format!("warning: {file} not found, curve skipped"));
            continue;
        }
        let text = std::fs::read_to_string(&path)?;
        let mut lines = text.lines();
        let Some(header) = lines.next() else { continue };
        let cols: Vec<&str> = header.split(',').collect();
        let mut series: Vec<(String, Vec<(f64, f64)>)> = cols[1..]
            .iter()
            .map(|c| (c.to_string(), Vec::new()))
            .collect();
        for line in lines {
            let cells: Vec<&str> = line.split(',').collect();
            if cells.len() != cols.len() {
                continue;
            }
            let step: f64 = cells[0].parse().unwrap_or(0.0);
            for (i, cell) in cells[1..].iter().enumerate() {
                if let Ok(v) = cell.parse::<f64>() {
                    series[i].1.push((step, v));
                }
            }
        }
        let p = out_dir.join(file.replace(".csv", ".png"));
        plot::line_chart(&p, title, &series, true)?;
        artifacts.push(p);
    }

    // center-slice montage of sampled volumes with their tabular rows
    let samples_dir = cfg.samples_dir().join("synthetic");
    if samples_dir.join("manifest.csv").exists() {
        let cohort = load_cohort(&samples_dir)?;
        let n = cohort.len().min(4);
        let pairs: Vec<_> = (0..n)
            .map(|i| (&cohort.volumes[i], &cohort.manifest.entries[i].record))
            .collect();
        if !pairs.is_empty() {
            let p = out_dir.join("sample_montage.png");
            plot::montage(&p, &pairs, &cohort.manifest.schema)?;
            artifacts.push(p);
        }
    } else {
        log(quiet, "warning: synthetic samples not found, montage skipped");
    }

    if artifacts.is_empty() {
        bail!("report produced no plots (no inputs found)");
    }
    log(quiet, &format!("{} plot(s) in {}", artifacts.len(), out_dir.display()));
    Ok(artifacts)
}
