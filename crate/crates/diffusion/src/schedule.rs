use crate::{DiffusionError, Result};

/// Per-timestep noise tables. Timesteps are 1-based; `alpha_bar(0)` is
/// defined as 1 for the final DDIM step to t = 0.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule {
    pub betas: Vec<f64>,
    pub alphas: Vec<f64>,
    pub alpha_bars: Vec<f64>,
}

impl NoiseSchedule {
    pub fn len(&self) -> usize {
        self.betas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.betas.is_empty()
    }

    #[inline]
    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    /// Cumulative product up to t, with alpha_bar(0) = 1.
    #[inline]
    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bars[t - 1]
        }
    }

    /// Synthetic table for tests; betas derived from the given alpha_bars.
    pub fn from_alpha_bars(alpha_bars: Vec<f64>) -> Self {
        let mut alphas = Vec::with_capacity(alpha_bars.len());
        let mut prev = 1.0;
        for &ab in &alpha_bars {
            alphas.push(ab / prev);
            prev = ab;
        }
        let betas = alphas.iter().map(|a| 1.0 - a).collect();
        NoiseSchedule {
            betas,
            alphas,
            alpha_bars,
        }
    }
}

/// Linearly spaced betas from `beta_start` to `beta_end` inclusive.
pub fn make_linear_schedule(t: usize, beta_start: f64, beta_end: f64) -> Result<NoiseSchedule> {
    if t < 1 {
        return Err(DiffusionError::Config("schedule needs T >= 1".into()));
    }
    if !(beta_start > 0.0 && beta_start < beta_end && beta_end < 1.0) {
        return Err(DiffusionError::Config(format!(
            "betas must satisfy 0 < start < end < 1, got {beta_start} and {beta_end}"
        )));
    }
    let betas: Vec<f64> = if t == 1 {
        vec![beta_start]
    } else {
        (0..t)
            .map(|i| beta_start + (beta_end - beta_start) * i as f64 / (t - 1) as f64)
            .collect()
    };
    let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
    let mut alpha_bars = Vec::with_capacity(t);
    let mut acc = 1.0;
    for &a in &alphas {
        acc *= a;
        alpha_bars.push(acc);
    }
    Ok(NoiseSchedule {
        betas,
        alphas,
        alpha_bars,
    })
}
