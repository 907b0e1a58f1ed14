use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use jointsynth_nn::{RandomConvExtractor, DEFAULT_EXTRACTOR_SEED};
use jointsynth_phantom::Cohort;

use crate::alphabeta::alpha_precision_beta_recall;
use crate::assoc::correlation_distance;
use crate::detection::detection_score;
use crate::embed::embed_volumes;
use crate::featurize::MixedTable;
use crate::frechet::frechet_distance;
use crate::report::{MetricValue, MetricsReport};
use crate::sinkhorn::{sinkhorn_divergence, Epsilon};
use crate::univariate::univariate_distance;
use crate::{MetricsError, Result};

/// Settings echoed into every report so runs are self-describing.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalConfig {
    pub seed: u64,
    pub sinkhorn_eps_scale: f64,
    pub sinkhorn_max_iters: usize,
    pub sinkhorn_tol: f64,
    pub alpha_grid_levels: usize,
    pub extractor_seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            seed: 0,
            sinkhorn_eps_scale: 0.05,
            sinkhorn_max_iters: 1000,
            sinkhorn_tol: 1e-6,
            alpha_grid_levels: 30,
            extractor_seed: DEFAULT_EXTRACTOR_SEED,
        }
    }
}

impl EvalConfig {
    pub fn level_grid(&self) -> Vec<f64> {
        let n = self.alpha_grid_levels.max(1);
        (1..=n).map(|i| i as f64 / (n + 1) as f64).collect()
    }
}

/// Runs the full battery: FD and alpha-precision/beta-recall on volume
/// embeddings, the remaining metrics on the tabular side. Individual metric
/// failures are recorded in the report without aborting the rest.
pub fn evaluate_all(real: &Cohort, synth: &Cohort, config: &EvalConfig) -> Result<MetricsReport> {
    if real.manifest.schema != synth.manifest.schema {
        return Err(MetricsError::SchemaMismatch(
            "cohort schemas differ".to_string(),
        ));
    }
    if real.is_empty() || synth.is_empty() {
        return Err(MetricsError::Input("empty cohort".into()));
    }

    let mut warnings = Vec::new();

    // ---- imaging metrics on embeddings ----
    let extractor = RandomConvExtractor::new(config.extractor_seed);
    let embeddings = embed_volumes(&real.volumes, &extractor).and_then(|re| {
        embed_volumes(&synth.volumes, &extractor).map(|se| (re, se))
    });

    let (fd, alpha_precision, beta_recall) = match &embeddings {
        Ok((re, se)) => {
            let fd = match frechet_distance(re, se) {
                Ok(v) => MetricValue::ok(v),
                Err(e) => MetricValue::failed(e),
            };
            let (ap, br) = match alpha_precision_beta_recall(re, se, &config.level_grid()) {
                Ok((a, b, _)) => (MetricValue::ok(a), MetricValue::ok(b)),
                Err(e) => (MetricValue::failed(&e), MetricValue::failed(&e)),
            };
            (fd, ap, br)
        }
        Err(e) => (
            MetricValue::failed(e),
            MetricValue::failed(e),
            MetricValue::failed(e),
        ),
    };

    // ---- tabular metrics ----
    let tables = MixedTable::new(real.manifest.schema.clone(), real.records())
        .and_then(|rt| {
            MixedTable::new(synth.manifest.schema.clone(), synth.records()).map(|st| (rt, st))
        });

    let (wd, detection, univariate, correlation, per_feature, pairs) = match &tables {
        Ok((rt, st)) => {
            let wd = match sinkhorn_divergence(
                rt,
                st,
                Epsilon::MedianScale(config.sinkhorn_eps_scale),
                config.sinkhorn_max_iters,
                config.sinkhorn_tol,
            ) {
                Ok(out) => {
                    if !out.converged {
                        warnings.push(format!(
                            "sinkhorn did not reach tol {} within {} iterations (eps {})",
                            config.sinkhorn_tol, config.sinkhorn_max_iters, out.epsilon
                        ));
                    }
                    MetricValue::ok(out.value)
                }
                Err(e) => MetricValue::failed(e),
            };
            let detection = match detection_score(rt, st, config.seed) {
                Ok(v) => MetricValue::ok(v),
                Err(e) => MetricValue::failed(e),
            };
            let (univariate, per_feature) = match univariate_distance(rt, st) {
                Ok((v, map)) => (MetricValue::ok(v), map),
                Err(e) => (MetricValue::failed(e), BTreeMap::new()),
            };
            let (correlation, pairs) = match correlation_distance(rt, st) {
                Ok((v, b)) => (MetricValue::ok(v), b),
                Err(e) => (MetricValue::failed(e), Vec::new()),
            };
            (wd, detection, univariate, correlation, per_feature, pairs)
        }
        Err(e) => (
            MetricValue::failed(e),
            MetricValue::failed(e),
            MetricValue::failed(e),
            MetricValue::failed(e),
            BTreeMap::new(),
            Vec::new(),
        ),
    };

    let report = MetricsReport {
        fd,
        wd_sinkhorn: wd,
        detection,
        alpha_precision,
        beta_recall,
        univariate_distance: univariate,
        correlation_distance: correlation,
        per_feature_univariate: per_feature,
        correlation_pairs: pairs,
        config: config.clone(),
        warnings,
    };
    debug_assert!(report.ranges_valid());
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use jointsynth_phantom::{generate_cohort, CohortConfig};

    #[test]
    fn self_comparison_report_is_fully_populated() {
        let cohort = generate_cohort(&CohortConfig {
            n_subjects: 40,
            volume_shape: [16, 16, 16],
            rng_seed: 11,
            noise_sigma: 0.01,
            render_supersample: 2,
            ..Default::default()
        })
        .unwrap();
        let report = evaluate_all(&cohort, &cohort, &EvalConfig::default()).unwrap();
        // all seven named scalars present
        for (name, m) in [
            ("fd", &report.fd),
            ("wd_sinkhorn", &report.wd_sinkhorn),
            ("detection", &report.detection),
            ("alpha_precision", &report.alpha_precision),
            ("beta_recall", &report.beta_recall),
            ("univariate_distance", &report.univariate_distance),
            ("correlation_distance", &report.correlation_distance),
        ] {
            assert!(m.value.is_some(), "{name} missing: {:?}", m.error);
        }
        assert!(report.ranges_valid());
        // identical cohorts: distances at their floors
        assert!(report.fd.unwrap() <= 1e-8);
        assert!(report.wd_sinkhorn.unwrap() <= 1e-6);
        assert!(report.univariate_distance.unwrap() == 0.0);
        assert!(report.correlation_distance.unwrap() == 0.0);
        // round trip through JSON
        let json = report.to_json();
        let back = MetricsReport::from_json(&json).unwrap();
        assert_eq!(back.fd.value, report.fd.value);
    }

    #[test]
    fn schema_mismatch_is_hard_error() {
        let a = generate_cohort(&CohortConfig {
            n_subjects: 2,
            volume_shape: [16, 16, 16],
            rng_seed: 1,
            render_supersample: 1,
            ..Default::default()
        })
        .unwrap();
        let mut b = a.clone();
        b.manifest.schema.features[0].name = "renamed".into();
        assert!(evaluate_all(&a, &b, &EvalConfig::default()).is_err());
    }
}
