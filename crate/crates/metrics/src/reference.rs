//! Brute-force reference implementations used by the test suites to validate
//! the production metrics. Each follows the defining formula as directly as
//! possible and shares no code with the implementation it checks. Not part of
//! the evaluation path.

/// KS distance by sweeping every breakpoint in the pooled sample and counting.
pub fn ks_brute(x: &[f64], y: &[f64]) -> f64 {
    let mut breakpoints: Vec<f64> = x.iter().chain(y.iter()).cloned().collect();
    breakpoints.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let ecdf = |s: &[f64], t: f64| s.iter().filter(|&&v| v <= t).count() as f64 / s.len() as f64;
    breakpoints
        .into_iter()
        .map(|t| (ecdf(x, t) - ecdf(y, t)).abs())
        .fold(0.0, f64::max)
}

/// TV distance from explicit frequency vectors.
pub fn tv_brute(p_labels: &[String], q_labels: &[String], vocab: &[String]) -> f64 {
    let freq = |labels: &[String]| -> Vec<f64> {
        vocab
            .iter()
            .map(|v| labels.iter().filter(|l| *l == v).count() as f64 / labels.len() as f64)
            .collect()
    };
    let p = freq(p_labels);
    let q = freq(q_labels);
    0.5 * p.iter().zip(&q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

/// Pearson correlation from the raw-moment identity
/// rho = (n*Sxy - Sx*Sy) / sqrt((n*Sxx - Sx^2)(n*Syy - Sy^2)).
pub fn pearson_brute(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let sx: f64 = x.iter().sum();
    let sy: f64 = y.iter().sum();
    let sxx: f64 = x.iter().map(|v| v * v).sum();
    let syy: f64 = y.iter().map(|v| v * v).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    let denom = ((n * sxx - sx * sx) * (n * syy - sy * sy)).sqrt();
    if denom == 0.0 {
        return 0.0;
    }
    ((n * sxy - sx * sy) / denom).clamp(-1.0, 1.0)
}

/// Correlation ratio from its defining group decomposition.
pub fn eta_brute(groups: &[usize], k: usize, y: &[f64]) -> f64 {
    let n = y.len() as f64;
    let grand = y.iter().sum::<f64>() / n;
    let ss_total: f64 = y.iter().map(|v| (v - grand).powi(2)).sum();
    if ss_total == 0.0 {
        return 0.0;
    }
    let mut ss_between = 0.0;
    for c in 0..k {
        let members: Vec<f64> = groups
            .iter()
            .zip(y)
            .filter(|(&g, _)| g == c)
            .map(|(_, &v)| v)
            .collect();
        if members.is_empty() {
            continue;
        }
        let gm = members.iter().sum::<f64>() / members.len() as f64;
        ss_between += members.len() as f64 * (gm - grand).powi(2);
    }
    (ss_between / ss_total).clamp(0.0, 1.0).sqrt()
}

/// Cramér's V from an explicit chi-square contingency computation.
pub fn cramers_v_brute(a: &[usize], ka: usize, b: &[usize], kb: usize) -> f64 {
    let n = a.len() as f64;
    let mut observed = vec![vec![0.0f64; kb]; ka];
    for (&i, &j) in a.iter().zip(b) {
        observed[i][j] += 1.0;
    }
    let row: Vec<f64> = observed.iter().map(|r| r.iter().sum()).collect();
    let col: Vec<f64> = (0..kb).map(|j| observed.iter().map(|r| r[j]).sum()).collect();
    let r_obs = row.iter().filter(|&&v| v > 0.0).count();
    let c_obs = col.iter().filter(|&&v| v > 0.0).count();
    if r_obs.min(c_obs) < 2 {
        return 0.0;
    }
    let mut chi2 = 0.0;
    for i in 0..ka {
        for j in 0..kb {
            if row[i] == 0.0 || col[j] == 0.0 {
                continue;
            }
            let e = row[i] * col[j] / n;
            chi2 += (observed[i][j] - e).powi(2) / e;
        }
    }
    (chi2 / (n * (r_obs.min(c_obs) - 1) as f64)).sqrt().clamp(0.0, 1.0)
}

/// Exact optimal transport between two equal-size clouds with uniform
/// marginals: with n = m and weights 1/n, an optimal plan is a permutation
/// (Birkhoff), so the OT cost is min over assignments of the mean matched
/// cost. Solved by bitmask dynamic programming, O(n^2 * 2^n), n <= ~20.
pub fn exact_ot_assignment(cost: &[f64], n: usize) -> f64 {
    assert_eq!(cost.len(), n * n);
    assert!(n <= 20, "bitmask DP sized for small clouds");
    let full = 1usize << n;
    let mut dp = vec![f64::INFINITY; full];
    dp[0] = 0.0;
    for mask in 0..full {
        if dp[mask].is_infinite() {
            continue;
        }
        let i = (mask as u32).count_ones() as usize; // next row to assign
        if i == n {
            continue;
        }
        for j in 0..n {
            if mask & (1 << j) == 0 {
                let next = mask | (1 << j);
                let cand = dp[mask] + cost[i * n + j];
                if cand < dp[next] {
                    dp[next] = cand;
                }
            }
        }
    }
    dp[full - 1] / n as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn assignment_dp_matches_hand_example() {
        // 2x2: min( C00+C11, C01+C10 ) / 2
        let cost = vec![1.0, 10.0, 10.0, 2.0];
        assert_eq!(exact_ot_assignment(&cost, 2), 1.5);
        let cost = vec![5.0, 1.0, 1.0, 5.0];
        assert_eq!(exact_ot_assignment(&cost, 2), 1.0);
    }

    #[test]
    fn ks_brute_simple() {
        assert!((ks_brute(&[1.0, 2.0, 3.0], &[1.0, 2.0, 4.0]) - 1.0 / 3.0).abs() < 1e-12);
    }
}
