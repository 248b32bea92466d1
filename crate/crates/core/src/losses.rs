//! Classification objectives with analytic gradients with respect to logits.
//!
//! All values are batch means. Logits are row-major `B × C`; `C` is inferred
//! from the number of labels. Values and gradients are computed in nats and
//! rescaled when the configuration asks for another base.

use serde::{Deserialize, Serialize};

use crate::batch::{self, check_labels, PredictionBatch, ProbRows};
use crate::error::{ensure, Error, Result};
use crate::info::{clamped_ln, LogBase, ProbVector, PROB_FLOOR};

/// The five objectives compared in the experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// Cross entropy against one-hot labels.
    Cel,
    /// Label smoothing: `(1-ε) H(P,Q) + ε H(U,Q)`.
    CelLsr,
    /// Confidence penalty: `(1-ε) H(P,Q) - ε H(Q,Q)`.
    CelCp,
    /// Label correction: `(1-ε) H(P,Q) + ε H(Q,Q)`.
    CelLc,
    /// Mutual-information learning: `H(P,Q) + λ H(P̂_Y, Q_Y)`.
    Mil,
}

impl LossKind {
    pub const ALL: [LossKind; 5] = [
        LossKind::Cel,
        LossKind::CelLsr,
        LossKind::CelCp,
        LossKind::CelLc,
        LossKind::Mil,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LossKind::Cel => "cel",
            LossKind::CelLsr => "cel_lsr",
            LossKind::CelCp => "cel_cp",
            LossKind::CelLc => "cel_lc",
            LossKind::Mil => "mil",
        }
    }
}

impl std::fmt::Display for LossKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.to_ascii_lowercase().replace('-', "_");
        LossKind::ALL
            .into_iter()
            .find(|k| k.name() == norm)
            .ok_or_else(|| {
                Error::Validation(format!(
                    "unknown loss `{s}` (expected one of cel, cel_lsr, cel_cp, cel_lc, mil)"
                ))
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    /// Mixing weight of the LSR / CP / LC regularizers.
    pub epsilon: f64,
    /// Weight of the label-entropy term of the MI objective.
    pub lambda_ent: f64,
    pub base: LogBase,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.1,
            lambda_ent: 50.0,
            base: LogBase::Nats,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(
            (0.0..=1.0).contains(&self.epsilon),
            "epsilon {} outside [0, 1]",
            self.epsilon
        );
        ensure!(
            self.lambda_ent.is_finite() && self.lambda_ent >= 0.0,
            "lambda_ent must be finite and >= 0, got {}",
            self.lambda_ent
        );
        Ok(())
    }
}

/// Batch-mean loss and its gradient with respect to every logit.
#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    pub value: f64,
    /// Row-major `B × C`.
    pub grad_logits: Vec<f64>,
}

impl LossOutput {
    fn rescaled(mut self, base: LogBase) -> Self {
        if base != LogBase::Nats {
            let k = 1.0 / base.nats_per_unit();
            self.value *= k;
            self.grad_logits.iter_mut().for_each(|g| *g *= k);
        }
        self
    }
}

/// Row-wise softmax with max subtraction.
pub fn softmax(logits: &[f64], classes: usize) -> Result<PredictionBatch> {
    ensure!(classes >= 1, "class count must be positive");
    ensure!(
        logits.len() % classes == 0,
        "{} logits is not a whole number of rows of {classes}",
        logits.len()
    );
    ensure!(
        logits.iter().all(|z| z.is_finite()),
        "logits must be finite"
    );
    let mut out = vec![0.0; logits.len()];
    for (row, dst) in logits
        .chunks_exact(classes)
        .zip(out.chunks_exact_mut(classes))
    {
        softmax_row(row, dst);
    }
    Ok(ProbRows::from_flat_unchecked(out, classes))
}

fn softmax_row(z: &[f64], out: &mut [f64]) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (o, &v) in out.iter_mut().zip(z) {
        *o = (v - max).exp();
        total += *o;
    }
    out.iter_mut().for_each(|o| *o /= total);
}

fn shape(logits: &[f64], labels: &[usize]) -> Result<usize> {
    ensure!(!labels.is_empty(), "batch must contain at least one sample");
    ensure!(
        !logits.is_empty() && logits.len() % labels.len() == 0,
        "{} logits do not split into {} rows",
        logits.len(),
        labels.len()
    );
    let classes = logits.len() / labels.len();
    check_labels(labels, classes)?;
    Ok(classes)
}

/// `H(q) = -Σ q_c ln q_c` and its logit gradient `-q_j (ln q_j + H)`, added
/// into `grad` with weight `w`.
fn entropy_with_grad(q: &[f64], w: f64, grad: &mut [f64]) -> f64 {
    let h: f64 = q
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| -p * clamped_ln(p))
        .sum();
    for (g, &p) in grad.iter_mut().zip(q) {
        if p > 0.0 {
            *g -= w * p * (clamped_ln(p) + h);
        }
    }
    h
}

/// Mean cross entropy against one-hot labels.
pub fn cel_loss(logits: &[f64], labels: &[usize], config: &LossConfig) -> Result<LossOutput> {
    config.validate()?;
    let classes = shape(logits, labels)?;
    let preds = softmax(logits, classes)?;
    Ok(cel_from_probs(&preds, labels).rescaled(config.base))
}

fn cel_from_probs(preds: &PredictionBatch, labels: &[usize]) -> LossOutput {
    let classes = preds.classes();
    let inv_b = 1.0 / labels.len() as f64;
    let mut grad = preds.as_flat().to_vec();
    let mut value = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        value -= clamped_ln(preds.row(i)[y]);
        grad[i * classes + y] -= 1.0;
    }
    grad.iter_mut().for_each(|g| *g *= inv_b);
    LossOutput {
        value: value * inv_b,
        grad_logits: grad,
    }
}

/// The three regularized cross-entropy baselines.
pub fn variant_loss(
    kind: LossKind,
    logits: &[f64],
    labels: &[usize],
    config: &LossConfig,
) -> Result<LossOutput> {
    config.validate()?;
    let classes = shape(logits, labels)?;
    let preds = softmax(logits, classes)?;
    let eps = config.epsilon;
    let inv_b = 1.0 / labels.len() as f64;
    let out = match kind {
        LossKind::CelLsr => {
            // (1-ε)H(P,Q) + εH(U,Q) = H((1-ε)P + εU, Q).
            let targets = batch::smoothed_targets(labels, classes, eps)?;
            let mut value = 0.0;
            let mut grad = vec![0.0; logits.len()];
            for i in 0..labels.len() {
                let (q, t) = (preds.row(i), targets.row(i));
                for c in 0..classes {
                    if t[c] > 0.0 {
                        value -= t[c] * clamped_ln(q[c]);
                    }
                    grad[i * classes + c] = (q[c] - t[c]) * inv_b;
                }
            }
            LossOutput {
                value: value * inv_b,
                grad_logits: grad,
            }
        }
        LossKind::CelCp | LossKind::CelLc => {
            let sign = if kind == LossKind::CelCp { -1.0 } else { 1.0 };
            let base = cel_from_probs(&preds, labels);
            let mut grad: Vec<f64> = base.grad_logits.iter().map(|g| (1.0 - eps) * g).collect();
            let mut ent_total = 0.0;
            for (i, g) in grad.chunks_exact_mut(classes).enumerate() {
                ent_total += entropy_with_grad(preds.row(i), sign * eps * inv_b, g);
            }
            LossOutput {
                value: (1.0 - eps) * base.value + sign * eps * ent_total * inv_b,
                grad_logits: grad,
            }
        }
        other => {
            return Err(Error::Validation(format!(
                "`{other}` is not a regularized cross-entropy variant"
            )))
        }
    };
    Ok(out.rescaled(config.base))
}

/// `H(P̂_{Y|X}, Q_{Y|X}) + λ H(P̂_Y, Q_Y)` with batch-level `P̂_Y` and the
/// batch-averaged predicted marginal `Q_Y`.
///
/// The marginal term couples every sample in the batch: with
/// `r_c = P̂_Y(c) / Q_Y(c)` its gradient is `-(λ/B) q_ij (r_j - Σ_c r_c q_ic)`.
pub fn mil_loss(logits: &[f64], labels: &[usize], config: &LossConfig) -> Result<LossOutput> {
    let classes = shape(logits, labels)?;
    let p_y = batch::empirical_label_dist(labels, classes)?;
    mil_loss_with_marginal(logits, labels, &p_y, config)
}

/// [`mil_loss`] with a caller-supplied label marginal `P̂_Y` (for example the
/// label frequencies of the whole training split).
pub fn mil_loss_with_marginal(
    logits: &[f64],
    labels: &[usize],
    p_y: &ProbVector,
    config: &LossConfig,
) -> Result<LossOutput> {
    config.validate()?;
    let classes = shape(logits, labels)?;
    ensure!(
        p_y.len() == classes,
        "label marginal has {} classes, logits have {classes}",
        p_y.len()
    );
    let preds = softmax(logits, classes)?;
    let mut out = cel_from_probs(&preds, labels);
    let lambda = config.lambda_ent;
    if lambda == 0.0 {
        return Ok(out.rescaled(config.base));
    }

    let q_y = preds.column_mean();
    let mut marginal_ce = 0.0;
    let mut ratio = vec![0.0; classes];
    for c in 0..classes {
        if p_y[c] > 0.0 {
            marginal_ce -= p_y[c] * clamped_ln(q_y[c]);
            ratio[c] = p_y[c] / q_y[c].max(PROB_FLOOR);
        }
    }
    let scale = lambda / labels.len() as f64;
    for (i, g) in out.grad_logits.chunks_exact_mut(classes).enumerate() {
        let q = preds.row(i);
        let mean_ratio: f64 = q.iter().zip(&ratio).map(|(a, b)| a * b).sum();
        for c in 0..classes {
            g[c] -= scale * q[c] * (ratio[c] - mean_ratio);
        }
    }
    out.value += lambda * marginal_ce;
    Ok(out.rescaled(config.base))
}

/// Dispatch on `kind`.
pub fn compute_loss(
    kind: LossKind,
    logits: &[f64],
    labels: &[usize],
    config: &LossConfig,
) -> Result<LossOutput> {
    match kind {
        LossKind::Cel => cel_loss(logits, labels, config),
        LossKind::Mil => mil_loss(logits, labels, config),
        _ => variant_loss(kind, logits, labels, config),
    }
}
