//! Acceptance suite: every criterion runs at its stated tolerance and prints
//! one PASS/FAIL line (visible with `cargo test --test acceptance -- --nocapture`).
//!
//! Criteria 7 and 8 train real models and dominate the runtime (tens of
//! minutes on one CPU core); everything else finishes in seconds.

use std::time::Instant;

use jointsynth_diffusion::{
    ddim_step, make_linear_schedule, q_sample, synthesize_pairs, train_ldm, DenoiserConfig,
    LdmTrainSettings, SamplerConfig, ScheduleSettings,
};
use jointsynth_metrics::reference::{
    cramers_v_brute, eta_brute, exact_ot_assignment, ks_brute, pearson_brute, tv_brute,
};
use jointsynth_metrics::{
    association, detection_score, evaluate_all, frechet_distance, ks_distance,
    sinkhorn_divergence, tv_distance, Column, Epsilon, EvalConfig, FeatureMatrix, FeaturizeStats,
    MixedTable,
};
use jointsynth_nn::{Graph, Rng, Tensor};
use jointsynth_phantom::{
    axial_extent, fat_fraction, generate_cohort, split_dataset, Cohort, CohortConfig, Split,
};
use jointsynth_tabular::{encode_record, FeatureSpec, MixedRecord, TabularSchema};
use jointsynth_vae::{
    decode_image, decode_tabular, discriminator, encode_joint, init_discriminator_params,
    init_vae_params, perceptual_distance_graph, reparameterize, train_vae, vae_loss_graph,
    BatchInput, LossInputs, LossWeights, ParamSource, VaeConfig, VaeLossReport, VaeTrainSettings,
};

fn verdict(criterion: usize, ok: bool, detail: &str) {
    let status = if ok { "PASS" } else { "FAIL" };
    println!("ACCEPTANCE {criterion} {status}: {detail}");
    assert!(ok, "criterion {criterion} failed: {detail}");
}

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut cov, mut vx, mut vy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        cov += (a - mx) * (b - my);
        vx += (a - mx) * (a - mx);
        vy += (b - my) * (b - my);
    }
    cov / (vx.sqrt() * vy.sqrt())
}

// ---------------------------------------------------------------- criterion 1

#[test]
fn criterion_01_metric_oracles() {
    let t0 = Instant::now();
    let mut rng = Rng::from_seed(1001);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let n = 2 + rng.index(31);
        let x: Vec<f64> = (0..n).map(|_| rng.normal() * 2.0).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.normal() * 2.0 + 0.3).collect();
        let g: Vec<usize> = (0..n).map(|_| rng.index(3)).collect();
        let h: Vec<usize> = (0..n).map(|_| rng.index(2)).collect();
        let vocab: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        let p: Vec<String> = (0..n).map(|_| vocab[rng.index(3)].clone()).collect();
        let q: Vec<String> = (0..n).map(|_| vocab[rng.index(3)].clone()).collect();

        worst = worst.max((ks_distance(&x, &y).unwrap() - ks_brute(&x, &y)).abs());
        worst = worst.max((tv_distance(&p, &q, &vocab).unwrap() - tv_brute(&p, &q, &vocab)).abs());
        let (rho, _) = association(&Column::Numeric(&x), &Column::Numeric(&y)).unwrap();
        worst = worst.max((rho - pearson_brute(&x, &y)).abs());
        let (eta, _) = association(&Column::Categorical(&g, 3), &Column::Numeric(&y)).unwrap();
        worst = worst.max((eta - eta_brute(&g, 3, &y)).abs());
        let (v, _) = association(&Column::Categorical(&g, 3), &Column::Categorical(&h, 2)).unwrap();
        worst = worst.max((v - cramers_v_brute(&g, 3, &h, 2)).abs());
    }
    let secs = t0.elapsed().as_secs_f64();
    verdict(
        1,
        worst <= 1e-9 && secs < 10.0,
        &format!("KS/TV/V/eta/Pearson vs oracles, worst |diff| {worst:.2e}, {secs:.2}s"),
    );
}

// ---------------------------------------------------------------- criterion 2

#[test]
fn criterion_02_frechet_closed_form() {
    let t0 = Instant::now();
    let mut rng = Rng::from_seed(1002);
    let n = 100_000;
    let a = FeatureMatrix::new((0..n).map(|_| vec![rng.normal()]).collect()).unwrap();
    let b = FeatureMatrix::new((0..n).map(|_| vec![rng.normal() + 1.0]).collect()).unwrap();
    let fd = frechet_distance(&a, &b).unwrap();
    let self_fd = frechet_distance(&a, &a).unwrap();
    let secs = t0.elapsed().as_secs_f64();
    verdict(
        2,
        (fd - 1.0).abs() <= 0.05 && self_fd <= 1e-8 && secs < 5.0,
        &format!("FD(N(0,1), N(1,1)) = {fd:.4}, self {self_fd:.2e}, {secs:.2}s"),
    );
}

// ---------------------------------------------------------------- criterion 3

fn cloud_table(points: &[Vec<f64>]) -> MixedTable {
    let dim = points[0].len();
    let schema = TabularSchema::new(
        (0..dim)
            .map(|i| FeatureSpec::numeric(&format!("x{i}"), ""))
            .collect(),
    )
    .unwrap();
    MixedTable::new(
        schema,
        points
            .iter()
            .map(|p| {
                let mut r = MixedRecord::new();
                for (i, &v) in p.iter().enumerate() {
                    r = r.with_numeric(&format!("x{i}"), v);
                }
                r
            })
            .collect(),
    )
    .unwrap()
}

#[test]
fn criterion_03_sinkhorn_vs_exact_ot() {
    let t0 = Instant::now();
    let mut rng = Rng::from_seed(1003);
    let mut worst_rel = 0.0f64;
    for _ in 0..50 {
        let n = 2 + rng.index(15); // 2..=16 points
        let dim = 2 + rng.index(3);
        let real: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..dim).map(|_| rng.normal()).collect())
            .collect();
        let synth: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..dim).map(|_| rng.normal() + 0.4).collect())
            .collect();
        let rt = cloud_table(&real);
        let st = cloud_table(&synth);
        let stats = FeaturizeStats::fit(&rt);
        let fr = jointsynth_metrics::featurize(&rt, &stats);
        let fs = jointsynth_metrics::featurize(&st, &stats);
        let mut cost = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                cost[i * n + j] = fr[i]
                    .iter()
                    .zip(&fs[j])
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
            }
        }
        let mut sorted = cost.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let median = if sorted.len() % 2 == 1 {
            sorted[sorted.len() / 2]
        } else {
            0.5 * (sorted[sorted.len() / 2 - 1] + sorted[sorted.len() / 2])
        };
        let exact = exact_ot_assignment(&cost, n);
        let out = sinkhorn_divergence(
            &rt,
            &st,
            Epsilon::Absolute((0.01 * median).max(1e-9)),
            20_000,
            1e-6,
        )
        .unwrap();
        worst_rel = worst_rel.max((out.value - exact).abs() / exact.max(1e-12));
    }
    // self-divergence floor
    let points: Vec<Vec<f64>> = vec![
        vec![0.0, 1.0, 2.0],
        vec![1.0, 0.0, 2.0],
        vec![0.5, 0.5, 0.5],
        vec![2.0, 1.0, 0.1],
    ];
    let t = cloud_table(&points);
    let self_div = sinkhorn_divergence(&t, &t, Epsilon::default(), 1000, 1e-6)
        .unwrap()
        .value;
    let secs = t0.elapsed().as_secs_f64();
    verdict(
        3,
        worst_rel <= 0.05 && self_div <= 1e-6 && secs < 30.0,
        &format!("debiased Sinkhorn vs assignment oracle, worst rel {worst_rel:.4}, self {self_div:.2e}, {secs:.2}s"),
    );
}

// ---------------------------------------------------------------- criterion 4

#[test]
fn criterion_04_detection_floor_ceiling() {
    let t0 = Instant::now();
    let schema = TabularSchema::new(vec![
        FeatureSpec::numeric("u", ""),
        FeatureSpec::numeric("v", ""),
        FeatureSpec::categorical("c", &["x", "y"]),
    ])
    .unwrap();
    let mut rng = Rng::from_seed(1004);
    let rows: Vec<MixedRecord> = (0..1000)
        .map(|_| {
            MixedRecord::new()
                .with_numeric("u", rng.normal())
                .with_numeric("v", rng.normal())
                .with_categorical("c", if rng.bernoulli(0.3) { "x" } else { "y" })
        })
        .collect();
    // synth = shuffled copy of real: indistinguishable by construction
    let mut shuffled = rows.clone();
    Rng::from_seed(99).shuffle(&mut shuffled);
    let floor = detection_score(
        &MixedTable::new(schema.clone(), rows.clone()).unwrap(),
        &MixedTable::new(schema.clone(), shuffled).unwrap(),
        7,
    )
    .unwrap();
    // +10 sigma shift in one numeric feature: separable by construction
    let shifted: Vec<MixedRecord> = rows
        .iter()
        .map(|r| {
            let mut s = r.clone();
            s.numeric_values.insert("u".into(), r.numeric("u") + 10.0);
            s
        })
        .collect();
    let ceiling = detection_score(
        &MixedTable::new(schema.clone(), rows.clone()).unwrap(),
        &MixedTable::new(schema, shifted).unwrap(),
        7,
    )
    .unwrap();
    let secs = t0.elapsed().as_secs_f64();
    verdict(
        4,
        (floor - 0.5).abs() <= 0.05 && ceiling > 0.99 && secs < 30.0,
        &format!("detection floor {floor:.3}, ceiling {ceiling:.4}, {secs:.2}s"),
    );
}

// ---------------------------------------------------------------- criterion 5

#[test]
fn criterion_05_ddim_algebra() {
    let t0 = Instant::now();
    let schedule = make_linear_schedule(1000, 1e-4, 2e-2).unwrap();
    let mut rng = Rng::from_seed(1005);
    let mut worst_rel = 0.0f64;
    for _ in 0..1000 {
        let t = 1 + rng.index(1000);
        let z0: Vec<f64> = (0..8).map(|_| rng.normal()).collect();
        let eps: Vec<f64> = (0..8).map(|_| rng.normal()).collect();
        let zt = q_sample(&z0, t, &eps, &schedule).unwrap();
        let back = ddim_step(&zt, &eps, t, 0, &schedule, 0.0, None).unwrap();
        let err: f64 = back
            .iter()
            .zip(&z0)
            .map(|(b, z)| (b - z) * (b - z))
            .sum::<f64>()
            .sqrt();
        let norm: f64 = z0.iter().map(|z| z * z).sum::<f64>().sqrt();
        worst_rel = worst_rel.max(err / norm);
    }
    // eps_pred = 0 reduces to the sqrt(abar_prev/abar_t) scaling identity
    let mut worst_scale = 0.0f64;
    for &(t, tp) in &[(1000usize, 750usize), (600, 150), (40, 0)] {
        let z: Vec<f64> = (0..16).map(|_| rng.normal()).collect();
        let out = ddim_step(&z, &vec![0.0; 16], t, tp, &schedule, 0.0, None).unwrap();
        let k = (schedule.alpha_bar(tp) / schedule.alpha_bar(t)).sqrt();
        for (o, zi) in out.iter().zip(&z) {
            worst_scale = worst_scale.max((o - k * zi).abs());
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    verdict(
        5,
        worst_rel <= 1e-5 && worst_scale <= 1e-9 && secs < 5.0,
        &format!("inversion worst rel {worst_rel:.2e}, scaling identity {worst_scale:.2e}, {secs:.2}s"),
    );
}

// ---------------------------------------------------------------- criterion 6

fn tiny_gradcheck_config() -> (TabularSchema, VaeConfig) {
    let schema = TabularSchema::new(vec![
        FeatureSpec::numeric("x", ""),
        FeatureSpec::categorical("c", &["a", "b"]),
    ])
    .unwrap();
    let mut cfg = VaeConfig::for_schema(&schema, [8, 8, 8]);
    cfg.enc_channels = vec![2, 2];
    cfg.dec_channels = vec![2, 2, 2];
    cfg.dec_kernels = vec![2, 2];
    cfg.c_lat = 2;
    cfg.d_tok = 2;
    cfg.n_heads = 1;
    cfg.d_head = 2;
    cfg.n_fuse = 1;
    cfg.n_tab_layers = 1;
    cfg.ffn_mult = 1;
    cfg.gn_groups = 2;
    cfg.disc_channels = vec![2];
    cfg.init_seed = 42;
    (schema, cfg)
}

#[test]
fn criterion_06_loss_assembly_kl_gradcheck() {
    // (a) total equals the lambda-weighted sum on randomized components
    let w = LossWeights::default();
    let mut rng = Rng::from_seed(1006);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let parts: Vec<f64> = (0..6).map(|_| rng.uniform() * 5.0).collect();
        let rep = VaeLossReport::from_parts(parts[0], parts[1], parts[2], parts[3], parts[4], parts[5], &w);
        let expected =
            parts[0] + 0.3 * parts[1] + 0.1 * parts[2] + parts[3] + parts[4] + 1e-6 * parts[5];
        worst = worst.max((rep.total - expected).abs() / expected.abs().max(1e-12));
    }
    let assembly_ok = worst <= 1e-6;

    // (b) closed-form KL on random tensors
    let mut kl_worst = 0.0f64;
    for _ in 0..10 {
        let b = 2usize;
        let dims = 13usize;
        let mu: Tensor<f64> = Tensor::randn(vec![b, dims], 1.1, &mut rng);
        let lv: Tensor<f64> = Tensor::randn(vec![b, dims], 0.8, &mut rng);
        let mut g: Graph<f64> = Graph::new();
        let mu_v = g.input(mu.clone());
        let lv_v = g.input(lv.clone());
        let x = g.input(Tensor::zeros(vec![b, 1]));
        let perc = g.input(Tensor::scalar(0.0));
        let nt = g.input(Tensor::zeros(vec![b, 0]));
        let parts = vae_loss_graph(
            &mut g,
            &LossInputs {
                x,
                recon: x,
                numeric_targets: nt,
                numeric_preds: nt,
                categorical_targets: &[],
                categorical_logits: &[],
                mu: mu_v,
                logvar: lv_v,
                disc_fake_scores: None,
                perceptual: perc,
            },
            &w,
        );
        let expected: f64 = mu
            .data()
            .iter()
            .zip(lv.data())
            .map(|(m, l)| 0.5 * (m * m + l.exp() - 1.0 - l))
            .sum::<f64>()
            / b as f64;
        kl_worst = kl_worst.max((parts.report.l_kl - expected).abs() / expected.abs());
    }
    let kl_ok = kl_worst <= 1e-6;

    // (c) finite-difference gradient check on a sub-1000-parameter model
    let (_, cfg) = tiny_gradcheck_config();
    let mut store = init_vae_params::<f64>(&cfg);
    let disc = init_discriminator_params::<f64>(&cfg);
    for (name, v) in disc.iter_values() {
        store.register(name, v.clone());
    }
    assert!(store.n_scalars() <= 1000, "model has {}", store.n_scalars());
    let mut rng = Rng::from_seed(1066);
    let vox: Vec<f64> = (0..2 * 512).map(|_| 0.2 + 0.6 * rng.uniform()).collect();
    let batch = BatchInput {
        volumes: Tensor::from_vec(vec![2, 1, 8, 8, 8], vox),
        numeric_tokens: Tensor::from_vec(vec![2, 1], vec![rng.normal(), rng.normal()]),
        categorical_tokens: vec![vec![0, 1]],
    };
    let grid = cfg.latent_grid();
    let eps = Tensor::<f64>::randn(vec![2, cfg.c_lat, grid[0], grid[1], grid[2]], 1.0, &mut rng);
    let eval = |store: &jointsynth_nn::ParamStore<f64>, want_grads: bool| {
        let extractor = jointsynth_nn::RandomConvExtractor::new(cfg.extractor_seed);
        let mut g: Graph<f64> = Graph::new();
        let src = ParamSource::trainable(store);
        let (mu, logvar) = encode_joint(&mut g, &src, &cfg, &batch, false).unwrap();
        let z = reparameterize(&mut g, mu, logvar, eps.clone());
        let recon = decode_image(&mut g, &src, &cfg, z);
        let (numeric_preds, categorical_logits) = decode_tabular(&mut g, &src, &cfg, z);
        let x = g.input(batch.volumes.clone());
        let perceptual = perceptual_distance_graph(&mut g, &extractor, x, recon);
        let frozen = ParamSource::frozen(store);
        let fake = discriminator(&mut g, &frozen, &cfg, recon);
        let numeric_targets = g.input(batch.numeric_tokens.clone());
        let parts = vae_loss_graph(
            &mut g,
            &LossInputs {
                x,
                recon,
                numeric_targets,
                numeric_preds,
                categorical_targets: &batch.categorical_tokens,
                categorical_logits: &categorical_logits,
                mu,
                logvar,
                disc_fake_scores: Some(fake),
                perceptual,
            },
            &w,
        );
        let grads = want_grads.then(|| {
            let gr = g.backward(parts.total);
            g.param_grads(&gr)
        });
        (g.scalar_value(parts.total), grads)
    };
    let (_, grads) = eval(&store, true);
    let grads = grads.unwrap();
    let h = 1e-4;
    let stride = (grads.len() / 10).max(1);
    let mut grad_worst = 0.0f64;
    let mut checked = 0;
    for (name, grad) in grads.iter().step_by(stride) {
        if checked >= 10 {
            break;
        }
        let idx = checked % grad.numel();
        let analytic = grad.data()[idx];
        let base = store.get(name).clone();
        let mut plus = base.clone();
        plus.data_mut()[idx] += h;
        let mut minus = base.clone();
        minus.data_mut()[idx] -= h;
        store.set(name, plus);
        let (fp, _) = eval(&store, false);
        store.set(name, minus);
        let (fm, _) = eval(&store, false);
        store.set(name, base);
        let fd = (fp - fm) / (2.0 * h);
        grad_worst = grad_worst.max((analytic - fd).abs() / analytic.abs().max(fd.abs()).max(1e-6));
        checked += 1;
    }
    let grad_ok = grad_worst <= 1e-3 && checked == 10;

    verdict(
        6,
        assembly_ok && kl_ok && grad_ok,
        &format!(
            "assembly worst {worst:.2e}, KL worst {kl_worst:.2e}, gradcheck worst rel {grad_worst:.2e}"
        ),
    );
}

// ---------------------------------------------------------------- criterion 7

fn overfit_cohort(n: usize, shape: [usize; 3]) -> Cohort {
    let mut cohort = generate_cohort(&CohortConfig {
        n_subjects: n,
        volume_shape: shape,
        rng_seed: 4242,
        noise_sigma: 0.02,
        render_supersample: 3,
        ..Default::default()
    })
    .unwrap();
    // tag everything train: this is a capacity experiment
    for e in &mut cohort.manifest.entries {
        e.split = Split::Train;
    }
    cohort
}

#[test]
fn criterion_07_vae_overfit() {
    let t0 = Instant::now();
    let cohort = overfit_cohort(8, [32, 32, 32]);
    let cfg = VaeConfig::for_schema(&cohort.manifest.schema, [32, 32, 32]);
    let settings = VaeTrainSettings {
        steps: 2000,
        batch_size: 4,
        lr: 1e-3,
        seed: 7,
        adv_warmup: 500,
        ..Default::default()
    };
    let trained = train_vae(&cohort, &cfg, &settings, None, None).unwrap();

    // convergence contract from the training examples
    let early = trained.reports[9].total;
    let late = trained.reports.last().unwrap().total;

    // reconstruction quality through the posterior mean
    let schema = &trained.meta.schema;
    let norm = &trained.meta.normalizer;
    let mut l1_sum = 0.0f64;
    let mut cat_correct = 0usize;
    let mut cat_total = 0usize;
    let mut mse_sum = 0.0f64;
    let mut mse_count = 0usize;
    for (entry, vol) in cohort.manifest.entries.iter().zip(&cohort.volumes) {
        let toks = encode_record(&entry.record, schema, norm).unwrap();
        let batch = BatchInput {
            volumes: Tensor::from_vec(vec![1, 1, 32, 32, 32], vol.voxels.clone()),
            numeric_tokens: Tensor::from_vec(
                vec![1, toks.numeric_tokens.len()],
                toks.numeric_tokens.iter().map(|&v| v as f32).collect(),
            ),
            categorical_tokens: toks.categorical_tokens.iter().map(|&c| vec![c]).collect(),
        };
        let mut g: Graph<f32> = Graph::new();
        let src = ParamSource::frozen(&trained.store);
        let (mu, _) = encode_joint(&mut g, &src, &cfg, &batch, false).unwrap();
        let recon = decode_image(&mut g, &src, &cfg, mu);
        let (num_preds, cat_logits) = decode_tabular(&mut g, &src, &cfg, mu);
        let rec = g.value(recon).data();
        for (a, b) in rec.iter().zip(&vol.voxels) {
            l1_sum += (a - b).abs() as f64;
        }
        let preds = g.value(num_preds).data();
        for (p, t) in preds.iter().zip(&toks.numeric_tokens) {
            let d = *p as f64 - t;
            mse_sum += d * d;
            mse_count += 1;
        }
        for (logits, &target) in cat_logits.iter().zip(&toks.categorical_tokens) {
            let l = g.value(*logits).data();
            let mut best = 0;
            for i in 1..l.len() {
                if l[i] > l[best] {
                    best = i;
                }
            }
            cat_total += 1;
            if best == target {
                cat_correct += 1;
            }
        }
    }
    let l1 = l1_sum / (8.0 * 32768.0);
    let cat_acc = cat_correct as f64 / cat_total as f64;
    let mse = mse_sum / mse_count as f64;
    let secs = t0.elapsed().as_secs_f64();
    verdict(
        7,
        l1 < 0.05 && cat_acc == 1.0 && mse < 0.01 && late < 0.25 * early && secs < 7200.0,
        &format!(
            "overfit L1 {l1:.4}, categorical accuracy {cat_acc:.3}, numeric MSE {mse:.5}, step10 {early:.3} -> final {late:.3}, {secs:.0}s"
        ),
    );
}

// ---------------------------------------------------------------- criterion 8

#[test]
fn criterion_08_joint_coherence() {
    let t0 = Instant::now();
    let mut cohort = generate_cohort(&CohortConfig {
        n_subjects: 2000,
        volume_shape: [32, 32, 32],
        rng_seed: 808,
        noise_sigma: 0.02,
        render_supersample: 3,
        ..Default::default()
    })
    .unwrap();
    split_dataset(&mut cohort.manifest, 0.9, 809).unwrap();

    let cfg = VaeConfig::for_schema(&cohort.manifest.schema, [32, 32, 32]);
    let vae_settings = VaeTrainSettings {
        steps: 10_000,
        batch_size: 4,
        lr: 1e-3,
        seed: 81,
        adv_warmup: 500,
        ..Default::default()
    };
    let vae = train_vae(&cohort, &cfg, &vae_settings, None, None).unwrap();
    eprintln!(
        "criterion 8: VAE trained ({:.0}s), final loss {:.4}",
        t0.elapsed().as_secs_f64(),
        vae.reports.last().unwrap().total
    );

    let latents =
        jointsynth_vae::encode_latents(&cohort, &vae.store, &vae.meta, Split::Train, 82).unwrap();
    let mut denoiser = DenoiserConfig::for_latent(cfg.c_lat, cfg.latent_grid());
    denoiser.channels = vec![24, 48];
    let ldm_settings = LdmTrainSettings {
        steps: 20_000,
        batch_size: 8,
        lr: 1e-3,
        seed: 83,
        schedule: ScheduleSettings::default(),
        grad_clip: Some(1.0),
    };
    let ldm = train_ldm(&latents, &denoiser, &ldm_settings, None, None).unwrap();
    eprintln!(
        "criterion 8: LDM trained ({:.0}s), final loss {:.4}",
        t0.elapsed().as_secs_f64(),
        ldm.losses.last().unwrap().1
    );

    let sampler = SamplerConfig::uniform(1000, 50).unwrap();
    let pairs = synthesize_pairs(256, &vae.store, &vae.meta, &ldm.store, &ldm.meta, &sampler, 84)
        .unwrap();
    let heights: Vec<f64> = pairs.iter().map(|(_, r)| r.numeric("height_cm")).collect();
    let extents: Vec<f64> = pairs.iter().map(|(v, _)| axial_extent(v) as f64).collect();
    let fats: Vec<f64> = pairs.iter().map(|(_, r)| r.numeric("body_fat_pct")).collect();
    let fracs: Vec<f64> = pairs.iter().map(|(v, _)| fat_fraction(v)).collect();
    let r_height = pearson(&heights, &extents);
    let r_fat = pearson(&fats, &fracs);
    let secs = t0.elapsed().as_secs_f64();
    verdict(
        8,
        r_height >= 0.5 && r_fat >= 0.3,
        &format!(
            "synthesized coherence: corr(height, axial extent) = {r_height:.3} (>= 0.5), corr(body fat, fat fraction) = {r_fat:.3} (>= 0.3), {secs:.0}s"
        ),
    );
}

// ---------------------------------------------------------------- criterion 9

#[test]
fn criterion_09_metric_floor_run() {
    let mut cohort = generate_cohort(&CohortConfig {
        n_subjects: 10_000,
        volume_shape: [16, 16, 16],
        rng_seed: 909,
        noise_sigma: 0.02,
        render_supersample: 2,
        ..Default::default()
    })
    .unwrap();
    split_dataset(&mut cohort.manifest, 0.9, 910).unwrap();
    let test = cohort.filter_split(Split::Test);
    let train = cohort.filter_split(Split::Train);
    // train subsample of equal size, deterministic
    let mut idx: Vec<usize> = (0..train.len()).collect();
    Rng::from_seed(911).shuffle(&mut idx);
    idx.truncate(test.len());
    idx.sort_unstable();
    let sub = Cohort {
        manifest: jointsynth_phantom::CohortManifest {
            schema: train.manifest.schema.clone(),
            entries: idx.iter().map(|&i| train.manifest.entries[i].clone()).collect(),
        },
        volumes: idx.iter().map(|&i| train.volumes[i].clone()).collect(),
    };
    let report = evaluate_all(&test, &sub, &EvalConfig::default()).unwrap();
    let detection = report.detection.unwrap();
    let univariate = report.univariate_distance.unwrap();
    verdict(
        9,
        detection <= 0.6 && univariate <= 0.05,
        &format!(
            "floor run on {} vs {} subjects: detection {detection:.3} (<= 0.6), univariate {univariate:.4} (<= 0.05)",
            test.len(),
            sub.len()
        ),
    );
}

// --------------------------------------------------------------- criterion 10

#[test]
fn criterion_10_end_to_end_smoke() {
    let t0 = Instant::now();
    let bin = env!("CARGO_BIN_EXE_jointsynth");
    let workdir = std::env::temp_dir().join("jointsynth-acceptance-smoke");
    std::fs::remove_dir_all(&workdir).ok();
    let config = workdir.join("smoke.ini");
    std::fs::create_dir_all(&workdir).unwrap();
    std::fs::write(
        &config,
        "[cohort]\nn_subjects = 100\nvolume_shape = 16,16,16\nseed = 11\nnoise_sigma = 0.02\n\
         render_supersample = 3\nsplit_ratio = 0.9\nsplit_seed = 12\n\
         [vae]\nsteps = 200\nbatch_size = 4\nlr = 1e-3\nseed = 21\nadv_warmup = 100\n\
         enc_channels = 8,16,16\ndec_channels = 16,16,8,8\ndec_kernels = 4,4,2\nd_head = 16\n\
         [diffusion]\nsteps = 200\nbatch_size = 16\nlr = 1e-3\nseed = 31\nchannels = 32\n\
         [sampler]\nn_steps = 50\nseed = 41\nn_samples = 32\n\
         [eval]\nseed = 51\n",
    )
    .unwrap();
    let run = |args: &[&str]| {
        let out = std::process::Command::new(bin)
            .arg("--config")
            .arg(&config)
            .arg("--workdir")
            .arg(&workdir)
            .arg("--quiet")
            .args(args)
            .output()
            .expect("binary runs");
        assert!(
            out.status.success(),
            "`{}` exited {:?}: {}",
            args.join(" "),
            out.status.code(),
            String::from_utf8_lossy(&out.stderr)
        );
    };
    run(&["generate-cohort"]);
    run(&["train-vae"]);
    run(&["train-ldm"]);
    run(&["sample"]);
    run(&["evaluate"]);
    run(&["report"]);

    let metrics = std::fs::read_to_string(workdir.join("reports/metrics.json")).unwrap();
    let report = jointsynth_metrics::MetricsReport::from_json(&metrics).unwrap();
    let populated = [
        &report.fd,
        &report.wd_sinkhorn,
        &report.detection,
        &report.alpha_precision,
        &report.beta_recall,
        &report.univariate_distance,
        &report.correlation_distance,
    ]
    .iter()
    .all(|m| m.value.is_some());
    let secs = t0.elapsed().as_secs_f64();
    std::fs::remove_dir_all(&workdir).ok();
    verdict(
        10,
        populated && secs <= 600.0,
        &format!("6-command pipeline exit 0, metrics fully populated, {secs:.0}s (<= 600)"),
    );
}
