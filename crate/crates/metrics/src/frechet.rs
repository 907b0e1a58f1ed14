use crate::embed::FeatureMatrix;
use crate::linalg::{matmul_sq, sym_eigen};
use crate::{MetricsError, Result};

/// Squared Fréchet distance between Gaussian fits of two embedding sets:
/// d^2 = |mu_r - mu_s|^2 + Tr(S_r + S_s - 2 (S_r S_s)^{1/2}).
///
/// Covariances are regularized with +1e-6 I; the matrix square root goes
/// through symmetric eigendecompositions with negative eigenvalues clipped
/// at zero. Returns the squared form, floored at 0.
pub fn frechet_distance(real: &FeatureMatrix, synth: &FeatureMatrix) -> Result<f64> {
    if real.n() < 2 || synth.n() < 2 {
        return Err(MetricsError::TooFewRows(format!(
            "frechet_distance needs >= 2 rows per side, got {} and {}",
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
    let d = real.dim();
    let (mu_r, cov_r) = gaussian_fit(&real.rows, d);
    let (mu_s, cov_s) = gaussian_fit(&synth.rows, d);

    let mean_term: f64 = mu_r
        .iter()
        .zip(&mu_s)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();

    // sqrt(S_r) via eigendecomposition, eigenvalues clipped at 0
    let root_r = sym_sqrt(&cov_r, d);
    // M = sqrt(S_r) S_s sqrt(S_r) is symmetric PSD with the same spectrum
    // as S_r S_s, so Tr((S_r S_s)^{1/2}) = sum of sqrt eigenvalues of M
    let m = matmul_sq(&matmul_sq(&root_r, &cov_s, d), &root_r, d);
    let (vals, _) = sym_eigen(&m, d);
    let tr_sqrt: f64 = vals.iter().map(|&l| l.max(0.0).sqrt()).sum();

    let tr_r: f64 = (0..d).map(|i| cov_r[i * d + i]).sum();
    let tr_s: f64 = (0..d).map(|i| cov_s[i * d + i]).sum();

    let d2 = mean_term + tr_r + tr_s - 2.0 * tr_sqrt;
    Ok(d2.max(0.0))
}

fn gaussian_fit(rows: &[Vec<f64>], d: usize) -> (Vec<f64>, Vec<f64>) {
    let n = rows.len();
    let mut mu = vec![0.0; d];
    for r in rows {
        for (m, v) in mu.iter_mut().zip(r) {
            *m += v;
        }
    }
    for m in &mut mu {
        *m /= n as f64;
    }
    let mut cov = vec![0.0; d * d];
    for r in rows {
        for i in 0..d {
            let di = r[i] - mu[i];
            for j in i..d {
                cov[i * d + j] += di * (r[j] - mu[j]);
            }
        }
    }
    let denom = (n - 1) as f64;
    for i in 0..d {
        for j in i..d {
            let v = cov[i * d + j] / denom;
            cov[i * d + j] = v;
            cov[j * d + i] = v;
        }
        cov[i * d + i] += 1e-6;
    }
    (mu, cov)
}

fn sym_sqrt(a: &[f64], n: usize) -> Vec<f64> {
    let (vals, vecs) = sym_eigen(a, n);
    // V sqrt(L) V^T
    let mut out = vec![0.0; n * n];
    for k in 0..n {
        let s = vals[k].max(0.0).sqrt();
        if s == 0.0 {
            continue;
        }
        for i in 0..n {
            let vik = vecs[i * n + k] * s;
            for j in 0..n {
                out[i * n + j] += vik * vecs[j * n + k];
            }
        }
    }
    out
}
