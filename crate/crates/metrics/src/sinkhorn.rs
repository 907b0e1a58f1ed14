use crate::featurize::{featurize, FeaturizeStats, MixedTable};
use crate::{MetricsError, Result};

/// Regularization strength: absolute, or scaled from the median entry of the
/// real-vs-synth cost matrix (the default is MedianScale(0.05)).
#[derive(Clone, Copy, Debug)]
pub enum Epsilon {
    Absolute(f64),
    MedianScale(f64),
}

impl Default for Epsilon {
    fn default() -> Self {
        Epsilon::MedianScale(0.05)
    }
}

#[derive(Clone, Debug)]
pub struct SinkhornOutcome {
    /// Debiased divergence S = W(r,s) - W(r,r)/2 - W(s,s)/2, floored at 0.
    pub value: f64,
    /// Resolved epsilon actually used.
    pub epsilon: f64,
    /// False when any of the three solves hit max_iters before reaching tol;
    /// the value is still returned.
    pub converged: bool,
}

/// Debiased entropic optimal transport between the two tables. Rows are
/// featurized (numerics standardized with statistics fitted on the real
/// table, categoricals one-hot), ground cost is squared Euclidean, marginals
/// are uniform.
pub fn sinkhorn_divergence(
    real: &MixedTable,
    synth: &MixedTable,
    epsilon: Epsilon,
    max_iters: usize,
    tol: f64,
) -> Result<SinkhornOutcome> {
    real.check_same_schema(synth)?;
    if real.is_empty() || synth.is_empty() {
        return Err(MetricsError::Input("sinkhorn_divergence on empty table".into()));
    }
    let stats = FeaturizeStats::fit(real);
    let xr = featurize(real, &stats);
    let xs = featurize(synth, &stats);

    let c_rs = cost_matrix(&xr, &xs);
    let eps = match epsilon {
        Epsilon::Absolute(e) => e,
        Epsilon::MedianScale(scale) => {
            let med = median(&c_rs);
            (scale * med).max(1e-9)
        }
    };

    let (w_rs, ok1) = entropic_cost(&c_rs, xr.len(), xs.len(), eps, max_iters, tol);
    let c_rr = cost_matrix(&xr, &xr);
    let (w_rr, ok2) = entropic_cost(&c_rr, xr.len(), xr.len(), eps, max_iters, tol);
    let c_ss = cost_matrix(&xs, &xs);
    let (w_ss, ok3) = entropic_cost(&c_ss, xs.len(), xs.len(), eps, max_iters, tol);

    Ok(SinkhornOutcome {
        value: (w_rs - 0.5 * w_rr - 0.5 * w_ss).max(0.0),
        epsilon: eps,
        converged: ok1 && ok2 && ok3,
    })
}

fn cost_matrix(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<f64> {
    let mut c = vec![0.0; a.len() * b.len()];
    for (i, ra) in a.iter().enumerate() {
        for (j, rb) in b.iter().enumerate() {
            c[i * b.len() + j] = ra
                .iter()
                .zip(rb)
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>();
        }
    }
    c
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).expect("finite costs"));
    let n = v.len();
    if n == 0 {
        return 0.0;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Log-domain Sinkhorn with uniform marginals. Returns the sharp primal cost
/// <P, C> of the converged plan and whether the marginal violation dropped
/// below `tol` within `max_iters`.
///
/// Small epsilons converge slowly from a cold start, so the potentials are
/// warm-started through a short epsilon-halving ladder from 10x the target;
/// the fixed point at the target epsilon is unchanged.
fn entropic_cost(
    cost: &[f64],
    n: usize,
    m: usize,
    eps: f64,
    max_iters: usize,
    tol: f64,
) -> (f64, bool) {
    let mut f = vec![0.0f64; n];
    let mut g = vec![0.0f64; m];
    let mut ladder = Vec::new();
    let mut e = eps * 10.0;
    while e > eps * 1.5 {
        ladder.push(e);
        e *= 0.5;
    }
    ladder.push(eps);
    let warm_iters = 50usize;
    let mut converged = false;
    for (li, &e) in ladder.iter().enumerate() {
        let final_stage = li == ladder.len() - 1;
        let iters = if final_stage { max_iters } else { warm_iters };
        converged = sinkhorn_iterations(cost, n, m, e, iters, tol, &mut f, &mut g);
    }
    let mut w = 0.0;
    for i in 0..n {
        for j in 0..m {
            w += plan_entry(f[i], g[j], cost[i * m + j], eps, n, m) * cost[i * m + j];
        }
    }
    (w, converged)
}

fn sinkhorn_iterations(
    cost: &[f64],
    n: usize,
    m: usize,
    eps: f64,
    max_iters: usize,
    tol: f64,
    f: &mut [f64],
    g: &mut [f64],
) -> bool {
    let ln_a = -(n as f64).ln();
    let ln_b = -(m as f64).ln();
    let mut buf = vec![0.0f64; n.max(m)];
    let check_every = 8usize;
    for it in 0..max_iters {
        // f_i = -eps * LSE_j(ln b_j + (g_j - C_ij)/eps)
        for i in 0..n {
            let row = &cost[i * m..(i + 1) * m];
            let slot = &mut buf[..m];
            for j in 0..m {
                slot[j] = ln_b + (g[j] - row[j]) / eps;
            }
            f[i] = -eps * logsumexp(slot);
        }
        for j in 0..m {
            let slot = &mut buf[..n];
            for (i, s) in slot.iter_mut().enumerate() {
                *s = ln_a + (f[i] - cost[i * m + j]) / eps;
            }
            g[j] = -eps * logsumexp(slot);
        }
        if it % check_every != check_every - 1 && it != max_iters - 1 {
            continue;
        }
        // marginal violation of the implied plan
        let mut err = 0.0;
        for i in 0..n {
            let mut row_sum = 0.0;
            for j in 0..m {
                row_sum += plan_entry(f[i], g[j], cost[i * m + j], eps, n, m);
            }
            err += (row_sum - 1.0 / n as f64).abs();
        }
        if err < tol {
            return true;
        }
    }
    false
}

#[inline]
fn plan_entry(f: f64, g: f64, c: f64, eps: f64, n: usize, m: usize) -> f64 {
    ((f + g - c) / eps).exp() / (n as f64 * m as f64)
}

fn logsumexp(xs: &[f64]) -> f64 {
    let mx = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if mx == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    mx + xs.iter().map(|x| (x - mx).exp()).sum::<f64>().ln()
}
