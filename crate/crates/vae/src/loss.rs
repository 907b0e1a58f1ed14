use serde::{Deserialize, Serialize};

use jointsynth_nn::{Graph, RandomConvExtractor, Scalar, Var};

use crate::config::LossWeights;

/// Per-step scalar components of the composite VAE objective, reported in
/// f64 so total always equals the weighted sum of its parts.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct VaeLossReport {
    pub l1: f64,
    pub l_perc: f64,
    pub l_adv: f64,
    pub l_mse: f64,
    pub l_ce: f64,
    pub l_kl: f64,
    pub total: f64,
}

impl VaeLossReport {
    pub fn from_parts(
        l1: f64,
        l_perc: f64,
        l_adv: f64,
        l_mse: f64,
        l_ce: f64,
        l_kl: f64,
        w: &LossWeights,
    ) -> Self {
        VaeLossReport {
            l1,
            l_perc,
            l_adv,
            l_mse,
            l_ce,
            l_kl,
            total: l1
                + w.lambda_perc * l_perc
                + w.lambda_adv * l_adv
                + l_mse
                + l_ce
                + w.lambda_kl * l_kl,
        }
    }

    /// Name of the first non-finite component, if any.
    pub fn first_non_finite(&self) -> Option<&'static str> {
        [
            (self.l1, "l1"),
            (self.l_perc, "l_perc"),
            (self.l_adv, "l_adv"),
            (self.l_mse, "l_mse"),
            (self.l_ce, "l_ce"),
            (self.l_kl, "l_kl"),
            (self.total, "total"),
        ]
        .into_iter()
        .find(|(v, _)| !v.is_finite())
        .map(|(_, n)| n)
    }

    pub fn csv_header() -> &'static str {
        "step,l1,l_perc,l_adv,l_mse,l_ce,l_kl,total"
    }

    pub fn csv_row(&self, step: usize) -> String {
        format!(
            "{step},{},{},{},{},{},{},{}",
            self.l1, self.l_perc, self.l_adv, self.l_mse, self.l_ce, self.l_kl, self.total
        )
    }
}

/// Graph nodes of the assembled loss.
pub struct LossParts {
    pub total: Var,
    pub report: VaeLossReport,
}

pub struct LossInputs<'a> {
    pub x: Var,
    pub recon: Var,
    /// [B, n_num] standardized targets and predictions.
    pub numeric_targets: Var,
    pub numeric_preds: Var,
    /// Per categorical feature: target indices and logits [B, K].
    pub categorical_targets: &'a [Vec<usize>],
    pub categorical_logits: &'a [Var],
    pub mu: Var,
    pub logvar: Var,
    /// Discriminator scores of the reconstruction, when adversarial training
    /// is active; None reports l_adv as exactly 0.
    pub disc_fake_scores: Option<Var>,
    /// Precomputed perceptual distance node.
    pub perceptual: Var,
}

/// mean over layers of mean squared feature-map difference under the frozen
/// extractor; gradients flow to both inputs but never to the extractor.
pub fn perceptual_distance_graph<S: Scalar>(
    g: &mut Graph<S>,
    extractor: &RandomConvExtractor,
    x: Var,
    y: Var,
) -> Var {
    let fx = extractor.features(g, x);
    let fy = extractor.features(g, y);
    let mut acc: Option<Var> = None;
    let n_layers = fx.len();
    for (a, b) in fx.into_iter().zip(fy) {
        let d = g.mse(a, b);
        acc = Some(match acc {
            Some(s) => g.add(s, d),
            None => d,
        });
    }
    let sum = acc.expect("extractor has layers");
    g.scale(sum, 1.0 / n_layers as f64)
}

/// Assembles L = l1 + lp*l_perc + la*l_adv + l_mse + l_ce + lk*l_kl.
/// KL is mean over the batch of 0.5 * sum(mu^2 + exp(logvar) - 1 - logvar).
pub fn vae_loss_graph<S: Scalar>(
    g: &mut Graph<S>,
    inputs: &LossInputs,
    weights: &LossWeights,
) -> LossParts {
    let batch = g.shape(inputs.mu)[0];

    let l1 = g.l1_distance(inputs.recon, inputs.x);
    let l_perc = inputs.perceptual;
    let l_adv = inputs.disc_fake_scores.map(|scores| {
        let m = g.mean_all(scores);
        g.neg(m)
    });
    let l_mse = if g.shape(inputs.numeric_preds).iter().product::<usize>() == 0 {
        g.input(jointsynth_nn::Tensor::scalar(S::ZERO))
    } else {
        g.mse(inputs.numeric_preds, inputs.numeric_targets)
    };
    let l_ce = if inputs.categorical_logits.is_empty() {
        g.input(jointsynth_nn::Tensor::scalar(S::ZERO))
    } else {
        let mut acc: Option<Var> = None;
        for (logits, targets) in inputs
            .categorical_logits
            .iter()
            .zip(inputs.categorical_targets)
        {
            let ce = g.cross_entropy_logits(*logits, targets);
            acc = Some(match acc {
                Some(s) => g.add(s, ce),
                None => ce,
            });
        }
        let sum = acc.unwrap();
        g.scale(sum, 1.0 / inputs.categorical_logits.len() as f64)
    };

    let mu2 = g.mul(inputs.mu, inputs.mu);
    let ev = g.exp(inputs.logvar);
    let s = g.add(mu2, ev);
    let s = g.add_scalar(s, -1.0);
    let s = g.sub(s, inputs.logvar);
    let kl_sum = g.sum_all(s);
    let l_kl = g.scale(kl_sum, 0.5 / batch as f64);

    let mut total = l1;
    let wp = g.scale(l_perc, weights.lambda_perc);
    total = g.add(total, wp);
    if let Some(adv) = l_adv {
        let wa = g.scale(adv, weights.lambda_adv);
        total = g.add(total, wa);
    }
    total = g.add(total, l_mse);
    total = g.add(total, l_ce);
    let wk = g.scale(l_kl, weights.lambda_kl);
    total = g.add(total, wk);

    let report = VaeLossReport::from_parts(
        g.scalar_value(l1),
        g.scalar_value(l_perc),
        l_adv.map_or(0.0, |v| g.scalar_value(v)),
        g.scalar_value(l_mse),
        g.scalar_value(l_ce),
        g.scalar_value(l_kl),
        weights,
    );
    LossParts { total, report }
}

/// Hinge discriminator loss:
/// 0.5 * (mean relu(1 - D(x)) + mean relu(1 + D(x_hat))).
pub fn discriminator_loss<S: Scalar>(g: &mut Graph<S>, real_scores: Var, fake_scores: Var) -> Var {
    let neg_real = g.neg(real_scores);
    let one_minus = g.add_scalar(neg_real, 1.0);
    let r = g.relu(one_minus);
    let real_term = g.mean_all(r);

    let one_plus = g.add_scalar(fake_scores, 1.0);
    let f = g.relu(one_plus);
    let fake_term = g.mean_all(f);

    let sum = g.add(real_term, fake_term);
    g.scale(sum, 0.5)
}
