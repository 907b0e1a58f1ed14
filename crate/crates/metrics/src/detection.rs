use jointsynth_nn::Rng;

use crate::featurize::{featurize, FeaturizeStats, MixedTable};
use crate::linalg::cholesky_solve;
use crate::{MetricsError, Result};

const FOLDS: usize = 5;
const RIDGE: f64 = 1.0;
const IRLS_ITERS: usize = 30;

/// Two-sample detection score: 5-fold cross-validated AUC of a ridge
/// logistic classifier separating real (label 0) from synthetic (label 1)
/// rows, folded into [0.5, 1] via max(AUC, 1 - AUC). 0.5 means
/// indistinguishable.
pub fn detection_score(real: &MixedTable, synth: &MixedTable, seed: u64) -> Result<f64> {
    real.check_same_schema(synth)?;
    if real.len() < 20 || synth.len() < 20 {
        return Err(MetricsError::TooFewRows(format!(
            "detection_score needs >= 20 rows per side, got {} and {}",
            real.len(),
            synth.len()
        )));
    }
    let stats = FeaturizeStats::fit(real);
    let xr = featurize(real, &stats);
    let xs = featurize(synth, &stats);

    // stratified fold assignment: shuffle each class, deal round-robin
    let mut real_idx: Vec<usize> = (0..xr.len()).collect();
    let mut synth_idx: Vec<usize> = (0..xs.len()).collect();
    Rng::from_stream(seed, 0).shuffle(&mut real_idx);
    Rng::from_stream(seed, 1).shuffle(&mut synth_idx);

    // rows: (features, label, fold)
    let mut rows: Vec<(&[f64], f64, usize)> = Vec::with_capacity(xr.len() + xs.len());
    for (pos, &i) in real_idx.iter().enumerate() {
        rows.push((&xr[i], 0.0, pos % FOLDS));
    }
    for (pos, &i) in synth_idx.iter().enumerate() {
        rows.push((&xs[i], 1.0, pos % FOLDS));
    }

    let dim = rows[0].0.len();
    let mut fold_aucs = Vec::with_capacity(FOLDS);
    for fold in 0..FOLDS {
        let train: Vec<&(&[f64], f64, usize)> = rows.iter().filter(|r| r.2 != fold).collect();
        let test: Vec<&(&[f64], f64, usize)> = rows.iter().filter(|r| r.2 == fold).collect();
        let beta = fit_logistic(&train, dim);
        let scored: Vec<(f64, f64)> = test
            .iter()
            .map(|(x, y, _)| (predict(&beta, x), *y))
            .collect();
        fold_aucs.push(auc(&scored));
    }
    let mean_auc = fold_aucs.iter().sum::<f64>() / fold_aucs.len() as f64;
    Ok(mean_auc.max(1.0 - mean_auc))
}

/// Ridge-penalized logistic regression by IRLS (Newton). The intercept is
/// the last coefficient and is unpenalized.
fn fit_logistic(train: &[&(&[f64], f64, usize)], dim: usize) -> Vec<f64> {
    let p = dim + 1; // + intercept
    let mut beta = vec![0.0f64; p];
    for _ in 0..IRLS_ITERS {
        // H = X^T W X + R, g = X^T (y - mu) - R beta
        let mut h = vec![0.0f64; p * p];
        let mut grad = vec![0.0f64; p];
        for (x, y, _) in train.iter() {
            let eta = predict_linear(&beta, x);
            let mu = sigmoid(eta);
            let w = (mu * (1.0 - mu)).max(1e-6);
            let resid = y - mu;
            for i in 0..p {
                let xi = if i < dim { x[i] } else { 1.0 };
                grad[i] += xi * resid;
                for j in i..p {
                    let xj = if j < dim { x[j] } else { 1.0 };
                    h[i * p + j] += w * xi * xj;
                }
            }
        }
        for i in 0..p {
            for j in 0..i {
                h[i * p + j] = h[j * p + i];
            }
        }
        for i in 0..dim {
            h[i * p + i] += RIDGE;
            grad[i] -= RIDGE * beta[i];
        }
        let delta = cholesky_solve(&h, &grad, p);
        let step: f64 = delta.iter().map(|d| d * d).sum::<f64>().sqrt();
        for (b, d) in beta.iter_mut().zip(&delta) {
            *b += d;
        }
        if step < 1e-10 {
            break;
        }
    }
    beta
}

fn predict_linear(beta: &[f64], x: &[f64]) -> f64 {
    let dim = beta.len() - 1;
    let mut eta = beta[dim];
    for i in 0..dim {
        eta += beta[i] * x[i];
    }
    eta
}

fn predict(beta: &[f64], x: &[f64]) -> f64 {
    sigmoid(predict_linear(beta, x))
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Rank-based AUC with average ranks for ties.
fn auc(scored: &[(f64, f64)]) -> f64 {
    let mut order: Vec<usize> = (0..scored.len()).collect();
    order.sort_by(|&a, &b| scored[a].0.partial_cmp(&scored[b].0).expect("finite scores"));
    let mut ranks = vec![0.0f64; scored.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scored[order[j + 1]].0 == scored[order[i]].0 {
            j += 1;
        }
        let avg_rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = avg_rank;
        }
        i = j + 1;
    }
    let n_pos = scored.iter().filter(|(_, y)| *y == 1.0).count();
    let n_neg = scored.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return 0.5;
    }
    let rank_sum: f64 = scored
        .iter()
        .zip(&ranks)
        .filter(|((_, y), _)| *y == 1.0)
        .map(|(_, r)| r)
        .sum();
    (rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0) / (n_pos as f64 * n_neg as f64)
}
