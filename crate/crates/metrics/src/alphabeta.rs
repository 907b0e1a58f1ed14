use crate::embed::FeatureMatrix;
use crate::{MetricsError, Result};

const KNN_K: usize = 5;

#[derive(Clone, Debug)]
pub struct PrecisionRecallCurves {
    pub levels: Vec<f64>,
    /// P(alpha): fraction of synthetic mass inside the real alpha-support.
    pub precision: Vec<f64>,
    /// R(beta): fraction of real mass inside the synthetic beta-support.
    pub recall: Vec<f64>,
}

/// 30 evenly spaced levels in the open interval (0, 1).
pub fn default_level_grid() -> Vec<f64> {
    (1..=30).map(|i| i as f64 / 31.0).collect()
}

/// alpha-precision / beta-recall with a mean-centered support estimator.
///
/// The real alpha-support is the ball around the real mean whose radius is
/// the alpha-quantile of real-to-center distances; P(alpha) is the synthetic
/// fraction inside it. The synthetic beta-support is the union of balls
/// around the ceil(beta*n) synthetic points closest to the synthetic mean,
/// each with its k-th nearest synthetic neighbor distance (k = 5) as radius;
/// R(beta) is the real fraction covered. Each curve integrates to a score
/// 1 - 2*mean|curve - level|, clamped to [0, 1].
pub fn alpha_precision_beta_recall(
    real: &FeatureMatrix,
    synth: &FeatureMatrix,
    grid: &[f64],
) -> Result<(f64, f64, PrecisionRecallCurves)> {
    if real.n() < 10 || synth.n() < 10 {
        return Err(MetricsError::TooFewRows(format!(
            "alpha_precision_beta_recall needs >= 10 rows per side, got {} and {}",
            real.n(),
            synth.n()
        )));
    }
    if real.dim() != synth.dim() {
        return Err(MetricsError::Dimension(format!(
            "embedding dims {} vs {}",
            real.dim(),
            synth.dim()
        )));
    }
    if grid.is_empty() || grid.iter().any(|&a| !(0.0..1.0).contains(&a) || a == 0.0) {
        return Err(MetricsError::Input(
            "level grid must lie strictly inside (0, 1)".into(),
        ));
    }

    // ---- alpha-precision ----
    let center = mean_row(&real.rows);
    let mut real_dist: Vec<f64> = real.rows.iter().map(|r| dist(r, &center)).collect();
    real_dist.sort_by(|a, b| a.partial_cmp(b).expect("finite distances"));
    let synth_dist: Vec<f64> = synth.rows.iter().map(|r| dist(r, &center)).collect();
    let n_real = real.n();
    let mut precision = Vec::with_capacity(grid.len());
    for &alpha in grid {
        let k = ((alpha * n_real as f64).ceil() as usize).clamp(1, n_real);
        let radius = real_dist[k - 1];
        let inside = synth_dist.iter().filter(|&&d| d <= radius).count();
        precision.push(inside as f64 / synth.n() as f64);
    }

    // ---- beta-recall ----
    let synth_center = mean_row(&synth.rows);
    // order synthetic points by distance to their own mean
    let mut synth_order: Vec<usize> = (0..synth.n()).collect();
    let synth_center_dist: Vec<f64> = synth.rows.iter().map(|r| dist(r, &synth_center)).collect();
    synth_order.sort_by(|&a, &b| {
        synth_center_dist[a]
            .partial_cmp(&synth_center_dist[b])
            .expect("finite distances")
    });
    // k-NN radius of every synthetic point among the synthetic set (self excluded)
    let radii = knn_radii(&synth.rows, KNN_K);
    // for each real point, the earliest prefix of synth_order that covers it
    let n_synth = synth.n();
    let mut cover_rank = vec![usize::MAX; real.n()];
    for (ri, r) in real.rows.iter().enumerate() {
        for (pos, &si) in synth_order.iter().enumerate() {
            if dist(r, &synth.rows[si]) <= radii[si] {
                cover_rank[ri] = pos + 1; // covered once prefix length >= pos+1
                break;
            }
        }
    }
    let mut recall = Vec::with_capacity(grid.len());
    for &beta in grid {
        let m = ((beta * n_synth as f64).ceil() as usize).clamp(1, n_synth);
        let covered = cover_rank.iter().filter(|&&rk| rk <= m).count();
        recall.push(covered as f64 / real.n() as f64);
    }

    let integrate = |curve: &[f64]| -> f64 {
        let dev = curve
            .iter()
            .zip(grid)
            .map(|(c, a)| (c - a).abs())
            .sum::<f64>()
            / grid.len() as f64;
        (1.0 - 2.0 * dev).clamp(0.0, 1.0)
    };
    let alpha_precision = integrate(&precision);
    let beta_recall = integrate(&recall);
    Ok((
        alpha_precision,
        beta_recall,
        PrecisionRecallCurves {
            levels: grid.to_vec(),
            precision,
            recall,
        },
    ))
}

fn mean_row(rows: &[Vec<f64>]) -> Vec<f64> {
    let d = rows[0].len();
    let mut m = vec![0.0; d];
    for r in rows {
        for (mi, v) in m.iter_mut().zip(r) {
            *mi += v;
        }
    }
    for mi in &mut m {
        *mi /= rows.len() as f64;
    }
    m
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

fn knn_radii(rows: &[Vec<f64>], k: usize) -> Vec<f64> {
    let n = rows.len();
    let kk = k.min(n - 1).max(1);
    let mut radii = Vec::with_capacity(n);
    let mut dists = Vec::with_capacity(n - 1);
    for i in 0..n {
        dists.clear();
        for j in 0..n {
            if i != j {
                dists.push(dist(&rows[i], &rows[j]));
            }
        }
        dists.sort_by(|a, b| a.partial_cmp(b).expect("finite distances"));
        radii.push(dists[kk - 1]);
    }
    radii
}
