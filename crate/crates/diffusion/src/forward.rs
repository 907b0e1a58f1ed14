use jointsynth_nn::Scalar;

use crate::schedule::NoiseSchedule;
use crate::{DiffusionError, Result};

/// Forward noising: z_t = sqrt(abar_t) z0 + sqrt(1 - abar_t) eps.
pub fn q_sample<S: Scalar>(
    z0: &[S],
    t: usize,
    eps: &[S],
    schedule: &NoiseSchedule,
) -> Result<Vec<S>> {
    if t < 1 || t > schedule.len() {
        return Err(DiffusionError::TimestepOutOfRange(t, schedule.len()));
    }
    if z0.len() != eps.len() {
        return Err(DiffusionError::Shape(format!(
            "z0 has {} elements, eps {}",
            z0.len(),
            eps.len()
        )));
    }
    let ab = schedule.alpha_bar(t);
    let a = S::from_f64(ab.sqrt());
    let b = S::from_f64((1.0 - ab).sqrt());
    Ok(z0
        .iter()
        .zip(eps)
        .map(|(&z, &e)| a * z + b * e)
        .collect())
}

/// Mean squared error between the predicted and true noise.
pub fn eps_prediction_loss<S: Scalar>(pred: &[S], eps: &[S]) -> f64 {
    assert_eq!(pred.len(), eps.len());
    let mut acc = 0.0f64;
    for (p, e) in pred.iter().zip(eps) {
        let d = p.to_f64() - e.to_f64();
        acc += d * d;
    }
    acc / pred.len() as f64
}
