use std::collections::BTreeMap;

use jointsynth_tabular::FeatureKind;

use crate::featurize::MixedTable;
use crate::{MetricsError, Result};

/// Two-sample Kolmogorov-Smirnov distance: sup over thresholds of
/// |ECDF_x - ECDF_y|, in [0, 1].
pub fn ks_distance(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.is_empty() || y.is_empty() {
        return Err(MetricsError::Input("ks_distance on empty sample".into()));
    }
    let mut xs = x.to_vec();
    let mut ys = y.to_vec();
    xs.sort_by(|a, b| a.partial_cmp(b).expect("non-finite sample"));
    ys.sort_by(|a, b| a.partial_cmp(b).expect("non-finite sample"));
    let (n, m) = (xs.len() as f64, ys.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut sup: f64 = 0.0;
    while i < xs.len() || j < ys.len() {
        let v = match (xs.get(i), ys.get(j)) {
            (Some(&a), Some(&b)) => a.min(b),
            (Some(&a), None) => a,
            (None, Some(&b)) => b,
            (None, None) => break,
        };
        while i < xs.len() && xs[i] <= v {
            i += 1;
        }
        while j < ys.len() && ys[j] <= v {
            j += 1;
        }
        sup = sup.max((i as f64 / n - j as f64 / m).abs());
    }
    Ok(sup)
}

/// Total variation distance between empirical label frequencies over `vocab`:
/// 0.5 * sum_k |p_k - q_k|, in [0, 1].
pub fn tv_distance(p_labels: &[String], q_labels: &[String], vocab: &[String]) -> Result<f64> {
    if p_labels.is_empty() || q_labels.is_empty() {
        return Err(MetricsError::Input("tv_distance on empty sample".into()));
    }
    let count = |labels: &[String]| -> Result<Vec<f64>> {
        let mut c = vec![0.0; vocab.len()];
        for l in labels {
            let idx = vocab
                .iter()
                .position(|v| v == l)
                .ok_or_else(|| MetricsError::UnknownLabel(l.clone()))?;
            c[idx] += 1.0;
        }
        let n = labels.len() as f64;
        Ok(c.into_iter().map(|v| v / n).collect())
    };
    let p = count(p_labels)?;
    let q = count(q_labels)?;
    Ok(0.5 * p.iter().zip(&q).map(|(a, b)| (a - b).abs()).sum::<f64>())
}

/// Mean over features of KS (numeric) or TV (categorical) distance, plus the
/// per-feature breakdown.
pub fn univariate_distance(
    real: &MixedTable,
    synth: &MixedTable,
) -> Result<(f64, BTreeMap<String, f64>)> {
    real.check_same_schema(synth)?;
    if real.is_empty() || synth.is_empty() {
        return Err(MetricsError::Input("univariate_distance on empty table".into()));
    }
    let mut per_feature = BTreeMap::new();
    for f in &real.schema.features {
        let d = match f.kind {
            FeatureKind::Numeric => ks_distance(
                &real.numeric_column(&f.name),
                &synth.numeric_column(&f.name),
            )?,
            FeatureKind::Categorical => tv_distance(
                &real.categorical_column(&f.name),
                &synth.categorical_column(&f.name),
                &f.categories,
            )?,
        };
        per_feature.insert(f.name.clone(), d);
    }
    let mean = per_feature.values().sum::<f64>() / per_feature.len() as f64;
    Ok((mean, per_feature))
}
