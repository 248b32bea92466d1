//! Central finite-difference checks for loss and network gradients.

use crate::error::Result;
use crate::losses::{compute_loss, LossConfig, LossKind};
use crate::nn::{backward, forward, MlpModel};

/// `‖a - n‖₂ / max(‖a‖₂, ‖n‖₂)`, or 0 when both vanish.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
    let diff = norm(&mut analytic.iter().zip(numeric).map(|(a, n)| a - n));
    let scale = norm(&mut analytic.iter().copied()).max(norm(&mut numeric.iter().copied()));
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

/// Finite-difference gradient of `f` at `x`.
pub fn numeric_gradient(
    x: &[f64],
    step: f64,
    mut f: impl FnMut(&[f64]) -> Result<f64>,
) -> Result<Vec<f64>> {
    let mut probe = x.to_vec();
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        probe[i] = x[i] + step;
        let up = f(&probe)?;
        probe[i] = x[i] - step;
        let down = f(&probe)?;
        probe[i] = x[i];
        grad.push((up - down) / (2.0 * step));
    }
    Ok(grad)
}

/// Worst relative error between the analytic logit gradient of `kind` and
/// central differences with step `step`.
pub fn loss_gradient_error(
    kind: LossKind,
    logits: &[f64],
    labels: &[usize],
    config: &LossConfig,
    step: f64,
) -> Result<f64> {
    let analytic = compute_loss(kind, logits, labels, config)?.grad_logits;
    let numeric = numeric_gradient(logits, step, |z| {
        Ok(compute_loss(kind, z, labels, config)?.value)
    })?;
    Ok(relative_error(&analytic, &numeric))
}

/// Same check through forward, loss and backward, over every parameter.
///
/// A hidden pre-activation within a step of zero puts a ReLU kink inside
/// the difference stencil; see [`crate::nn::ForwardCache::min_hidden_magnitude`].
pub fn mlp_gradient_error(
    model: &MlpModel,
    inputs: &[f64],
    labels: &[usize],
    kind: LossKind,
    config: &LossConfig,
    step: f64,
) -> Result<f64> {
    let (logits, cache) = forward(model, inputs)?;
    let loss = compute_loss(kind, &logits, labels, config)?;
    let analytic: Vec<f64> = backward(model, &cache, &loss.grad_logits)?
        .iter()
        .copied()
        .collect();
    let params: Vec<f64> = model.parameters().copied().collect();
    let mut probe = model.clone();
    let numeric = numeric_gradient(&params, step, |theta| {
        for (i, &v) in theta.iter().enumerate() {
            *probe.parameter_mut(i) = v;
        }
        Ok(compute_loss(kind, &probe.logits(inputs)?, labels, config)?.value)
    })?;
    Ok(relative_error(&analytic, &numeric))
}
