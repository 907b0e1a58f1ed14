use serde::{Deserialize, Serialize};

use jointsynth_nn::{Rng, Scalar};

use crate::schedule::NoiseSchedule;
use crate::{DiffusionError, Result};

/// DDIM sampling plan: a strictly decreasing timestep subsequence of
/// {T, ..., 1}; the final transition steps to t = 0. eta = 0 (the default)
/// makes every step deterministic.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub n_steps: usize,
    pub eta: f64,
    pub timesteps: Vec<usize>,
}

impl SamplerConfig {
    /// Uniformly spaced subsequence: round(k * T / n) for k = n..1.
    pub fn uniform(t_total: usize, n_steps: usize) -> Result<Self> {
        if n_steps < 1 || n_steps > t_total {
            return Err(DiffusionError::Config(format!(
                "n_steps {n_steps} must be within 1..={t_total}"
            )));
        }
        let mut timesteps: Vec<usize> = (1..=n_steps)
            .rev()
            .map(|k| ((k as f64 * t_total as f64 / n_steps as f64).round() as usize).max(1))
            .collect();
        timesteps.dedup();
        let cfg = SamplerConfig {
            n_steps: timesteps.len(),
            eta: 0.0,
            timesteps,
        };
        cfg.validate(t_total)?;
        Ok(cfg)
    }

    pub fn validate(&self, t_total: usize) -> Result<()> {
        if self.eta < 0.0 {
            return Err(DiffusionError::Config("eta must be >= 0".into()));
        }
        if self.timesteps.is_empty() {
            return Err(DiffusionError::Config("empty timestep subsequence".into()));
        }
        if self.timesteps.len() > t_total {
            return Err(DiffusionError::Config(format!(
                "{} sampling steps exceed schedule length {t_total}",
                self.timesteps.len()
            )));
        }
        for w in self.timesteps.windows(2) {
            if w[1] >= w[0] {
                return Err(DiffusionError::Config(
                    "timesteps must be strictly decreasing".into(),
                ));
            }
        }
        let first = self.timesteps[0];
        let last = *self.timesteps.last().unwrap();
        if first > t_total || last < 1 {
            return Err(DiffusionError::Config(format!(
                "timesteps must lie in 1..={t_total}"
            )));
        }
        Ok(())
    }

    /// Consecutive (t, t_prev) transitions, ending at t_prev = 0.
    pub fn transitions(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.timesteps.len());
        for w in self.timesteps.windows(2) {
            out.push((w[0], w[1]));
        }
        out.push((*self.timesteps.last().unwrap(), 0));
        out
    }
}

/// One DDIM transition z_t -> z_{t_prev}:
///   x0 = (z_t - sqrt(1-abar_t) eps) / sqrt(abar_t)
///   sigma = eta sqrt((1-abar_prev)/(1-abar_t)) sqrt(1 - abar_t/abar_prev)
///   z_prev = sqrt(abar_prev) x0 + sqrt(1-abar_prev-sigma^2) eps + sigma e_new
pub fn ddim_step<S: Scalar>(
    z_t: &[S],
    eps_pred: &[S],
    t: usize,
    t_prev: usize,
    schedule: &NoiseSchedule,
    eta: f64,
    rng: Option<&mut Rng>,
) -> Result<Vec<S>> {
    if t < 1 || t > schedule.len() {
        return Err(DiffusionError::TimestepOutOfRange(t, schedule.len()));
    }
    if t_prev >= t {
        return Err(DiffusionError::Config(format!(
            "t_prev {t_prev} must be below t {t}"
        )));
    }
    if z_t.len() != eps_pred.len() {
        return Err(DiffusionError::Shape(format!(
            "z_t has {} elements, eps_pred {}",
            z_t.len(),
            eps_pred.len()
        )));
    }
    let ab_t = schedule.alpha_bar(t);
    let ab_prev = schedule.alpha_bar(t_prev);
    let sigma = if eta == 0.0 {
        0.0
    } else {
        eta * ((1.0 - ab_prev) / (1.0 - ab_t)).sqrt() * (1.0 - ab_t / ab_prev).sqrt()
    };
    let dir_sq = 1.0 - ab_prev - sigma * sigma;
    if dir_sq < 0.0 {
        return Err(DiffusionError::NumericDomain(format!(
            "sigma^2 = {} exceeds 1 - abar_prev = {}",
            sigma * sigma,
            1.0 - ab_prev
        )));
    }
    // fused form of the same algebra, with the coefficients carried in f64:
    //   z_prev = a z_t + b eps, a = sqrt(abar_prev/abar_t),
    //   b = sqrt(1 - abar_prev - sigma^2) - a sqrt(1 - abar_t)
    // avoids the x0 cancellation that costs precision at small abar_t
    let a = (ab_prev / ab_t).sqrt();
    let b = dir_sq.sqrt() - a * (1.0 - ab_t).sqrt();
    let (a, b) = (S::from_f64(a), S::from_f64(b));

    let mut out = Vec::with_capacity(z_t.len());
    if sigma == 0.0 {
        for (&z, &e) in z_t.iter().zip(eps_pred) {
            out.push(a * z + b * e);
        }
    } else {
        let rng = rng.ok_or_else(|| {
            DiffusionError::Config("eta > 0 requires an rng for the fresh noise term".into())
        })?;
        let sig = S::from_f64(sigma);
        for (&z, &e) in z_t.iter().zip(eps_pred) {
            let noise = S::from_f64(rng.normal());
            out.push(a * z + b * e + sig * noise);
        }
    }
    Ok(out)
}
