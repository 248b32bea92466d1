//! Empirical distributions of a minibatch and the plug-in mutual information
//! estimate built from them.
//!
//! Inputs are assumed pairwise distinct, so the empirical input distribution
//! of a batch of size `B` is uniform with mass `1/B` per sample and the
//! empirical conditional label distribution of each sample is its (possibly
//! smoothed) target row.

use crate::error::{ensure, Result};
use crate::info::{self, LogBase, ProbVector};

/// A minibatch: `B` input rows of width `n` plus `B` labels in `[0, C)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledBatch {
    inputs: Vec<f64>,
    width: usize,
    labels: Vec<usize>,
    classes: usize,
}

impl LabeledBatch {
    pub fn new(inputs: Vec<f64>, width: usize, labels: Vec<usize>, classes: usize) -> Result<Self> {
        ensure!(!labels.is_empty(), "batch must contain at least one sample");
        ensure!(width >= 1, "input width must be positive");
        ensure!(
            inputs.len() == labels.len() * width,
            "expected {} input values for {} samples of width {width}, got {}",
            labels.len() * width,
            labels.len(),
            inputs.len()
        );
        ensure!(
            inputs.iter().all(|v| v.is_finite()),
            "inputs must be finite"
        );
        check_labels(&labels, classes)?;
        Ok(Self {
            inputs,
            width,
            labels,
            classes,
        })
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn classes(&self) -> usize {
        self.classes
    }

    /// Row-major `B × n` inputs.
    #[inline]
    pub fn inputs(&self) -> &[f64] {
        &self.inputs
    }

    #[inline]
    pub fn labels(&self) -> &[usize] {
        &self.labels
    }
}

pub(crate) fn check_labels(labels: &[usize], classes: usize) -> Result<()> {
    ensure!(classes >= 1, "class count must be positive");
    if let Some((i, &y)) = labels.iter().enumerate().find(|(_, &y)| y >= classes) {
        return Err(crate::Error::Validation(format!(
            "label {y} at position {i} is out of range for {classes} classes"
        )));
    }
    Ok(())
}

/// `B` rows, each a distribution over the same `C` classes, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbRows {
    data: Vec<f64>,
    classes: usize,
}

/// Encoded targets: row `i` is the empirical conditional label distribution of
/// sample `i`.
pub type TargetMatrix = ProbRows;

/// Model outputs: row `i` is the predicted conditional label distribution of
/// sample `i`.
pub type PredictionBatch = ProbRows;

impl ProbRows {
    /// Validate a flat row-major buffer; each row goes through
    /// [`ProbVector::new`] and may be renormalized.
    pub fn from_flat(data: Vec<f64>, classes: usize) -> Result<Self> {
        ensure!(classes >= 1, "class count must be positive");
        ensure!(
            data.len() % classes == 0,
            "buffer of {} values is not a whole number of rows of {classes}",
            data.len()
        );
        let mut out = Vec::with_capacity(data.len());
        for row in data.chunks_exact(classes) {
            out.extend(ProbVector::new(row.to_vec())?.into_vec());
        }
        Ok(Self { data: out, classes })
    }

    pub fn from_rows(rows: &[ProbVector]) -> Result<Self> {
        ensure!(!rows.is_empty(), "need at least one row");
        let classes = rows[0].len();
        ensure!(
            rows.iter().all(|r| r.len() == classes),
            "rows have differing class counts"
        );
        let data = rows
            .iter()
            .flat_map(|r| r.as_slice().iter().copied())
            .collect();
        Ok(Self { data, classes })
    }

    /// Wrap a buffer whose rows are already known to be distributions.
    pub(crate) fn from_flat_unchecked(data: Vec<f64>, classes: usize) -> Self {
        debug_assert_eq!(data.len() % classes, 0);
        Self { data, classes }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.data.len() / self.classes
    }

    #[inline]
    pub fn classes(&self) -> usize {
        self.classes
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.classes..(i + 1) * self.classes]
    }

    pub fn iter_rows(&self) -> std::slice::ChunksExact<'_, f64> {
        self.data.chunks_exact(self.classes)
    }

    #[inline]
    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }

    /// Column means `(1/B) Σ_i row_i`, summed left to right over rows.
    pub fn column_mean(&self) -> Vec<f64> {
        let mut acc = vec![0.0; self.classes];
        for row in self.iter_rows() {
            for (a, &v) in acc.iter_mut().zip(row) {
                *a += v;
            }
        }
        let b = self.rows() as f64;
        acc.iter_mut().for_each(|a| *a /= b);
        acc
    }
}

/// Label frequencies `count(c) / B`.
pub fn empirical_label_dist(labels: &[usize], classes: usize) -> Result<ProbVector> {
    ensure!(!labels.is_empty(), "need at least one label");
    check_labels(labels, classes)?;
    let mut counts = vec![0u64; classes];
    for &y in labels {
        counts[y] += 1;
    }
    let b = labels.len() as f64;
    Ok(
        ProbVector::new(counts.into_iter().map(|n| n as f64 / b).collect())
            .expect("frequencies form a distribution"),
    )
}

pub fn one_hot_targets(labels: &[usize], classes: usize) -> Result<TargetMatrix> {
    smoothed_targets(labels, classes, 0.0)
}

/// Rows `(1 - ε) · onehot(y_i) + ε · uniform`.
pub fn smoothed_targets(labels: &[usize], classes: usize, epsilon: f64) -> Result<TargetMatrix> {
    ensure!(!labels.is_empty(), "need at least one label");
    ensure!(
        (0.0..=1.0).contains(&epsilon),
        "epsilon {epsilon} outside [0, 1]"
    );
    check_labels(labels, classes)?;
    let off = epsilon / classes as f64;
    let on = 1.0 - epsilon + off;
    let mut data = vec![off; labels.len() * classes];
    for (i, &y) in labels.iter().enumerate() {
        data[i * classes + y] = on;
    }
    Ok(ProbRows::from_flat_unchecked(data, classes))
}

/// Predicted label marginal `Q_Y(c) = (1/B) Σ_i Q(c | x_i)`.
pub fn predicted_marginal(preds: &PredictionBatch) -> Result<ProbVector> {
    ensure!(preds.rows() >= 1, "empty prediction batch");
    ProbVector::new(preds.column_mean())
}

/// Components of the plug-in mutual information estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MiComponents {
    /// `H(P̂_Y, Q_Y)`.
    pub h_y: f64,
    /// `(1/B) Σ_i H(P̂_{Y|X}(·|x_i), Q_{Y|X}(·|x_i))`.
    pub h_y_given_x: f64,
    /// `h_y - h_y_given_x`.
    pub mi: f64,
}

/// Marginal and conditional cross-entropy terms of the plug-in estimate,
/// with `P̂_Y` taken as the row average of `targets`.
pub fn mi_components(
    preds: &PredictionBatch,
    targets: &TargetMatrix,
    base: LogBase,
) -> Result<MiComponents> {
    ensure!(
        preds.rows() == targets.rows() && preds.classes() == targets.classes(),
        "prediction batch is {}x{}, targets are {}x{}",
        preds.rows(),
        preds.classes(),
        targets.rows(),
        targets.classes()
    );
    let p_y = ProbVector::new(targets.column_mean())?;
    mi_components_with_marginal(preds, targets, &p_y, base)
}

/// As [`mi_components`] but with an externally supplied label marginal.
pub fn mi_components_with_marginal(
    preds: &PredictionBatch,
    targets: &TargetMatrix,
    p_y: &ProbVector,
    base: LogBase,
) -> Result<MiComponents> {
    ensure!(
        preds.rows() == targets.rows() && preds.classes() == targets.classes(),
        "prediction batch is {}x{}, targets are {}x{}",
        preds.rows(),
        preds.classes(),
        targets.rows(),
        targets.classes()
    );
    ensure!(preds.rows() >= 1, "empty batch");
    let q_y = predicted_marginal(preds)?;
    let h_y = info::cross_entropy(p_y, &q_y, base)?;
    let conditional_nats: f64 = targets
        .iter_rows()
        .zip(preds.iter_rows())
        .map(|(t, q)| info::cross_entropy_nats(t, q))
        .sum::<f64>()
        / preds.rows() as f64;
    let h_y_given_x = base.from_nats(conditional_nats);
    Ok(MiComponents {
        h_y,
        h_y_given_x,
        mi: h_y - h_y_given_x,
    })
}

/// Plug-in estimate `H(P̂_Y, Q_Y) - H(P̂_{Y|X}, Q_{Y|X})` at the current
/// predictions. Can be negative for a poorly fit model.
pub fn mi_estimate(preds: &PredictionBatch, targets: &TargetMatrix, base: LogBase) -> Result<f64> {
    mi_components(preds, targets, base).map(|c| c.mi)
}

/// The estimate obtained from empirical distributions alone.
///
/// With unique inputs every empirical conditional is a point mass, so the
/// conditional term vanishes and the "mutual information" collapses to the
/// label entropy of the sample, whatever the relationship between inputs and
/// labels.
pub fn naive_empirical_mi(labels: &[usize], classes: usize, base: LogBase) -> Result<f64> {
    Ok(info::entropy(&empirical_label_dist(labels, classes)?, base))
}
