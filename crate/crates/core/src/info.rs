//! Exact information-theoretic quantities over finite distributions.
//!
//! Every function takes an explicit [`LogBase`]. Probabilities that enter a
//! logarithm are clamped to `[PROB_FLOOR, 1]`, and terms whose weight is
//! exactly zero contribute nothing (`0 · log 0 = 0`).

use std::f64::consts::LN_2;

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};

/// Lower clamp applied to any probability before taking its logarithm.
pub const PROB_FLOOR: f64 = 1e-12;

/// Maximum deviation of a raw sum from 1 that [`ProbVector::new`] silently
/// renormalizes.
pub const NORMALIZE_TOLERANCE: f64 = 1e-6;

/// Unit of an entropy-like quantity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LogBase {
    Bits,
    Nats,
}

impl LogBase {
    /// Size of one unit of `self`, measured in nats.
    #[inline]
    pub fn nats_per_unit(self) -> f64 {
        match self {
            LogBase::Bits => LN_2,
            LogBase::Nats => 1.0,
        }
    }

    /// Re-express a value given in nats in this base.
    #[inline]
    pub fn from_nats(self, nats: f64) -> f64 {
        match self {
            LogBase::Bits => nats / LN_2,
            LogBase::Nats => nats,
        }
    }
}

impl std::str::FromStr for LogBase {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bits" => Ok(LogBase::Bits),
            "nats" => Ok(LogBase::Nats),
            other => Err(crate::Error::Validation(format!(
                "unknown log base `{other}` (expected `bits` or `nats`)"
            ))),
        }
    }
}

/// Convert an information quantity between units.
#[inline]
pub fn convert(value: f64, from: LogBase, to: LogBase) -> f64 {
    match (from, to) {
        (LogBase::Bits, LogBase::Nats) => value * LN_2,
        (LogBase::Nats, LogBase::Bits) => value / LN_2,
        _ => value,
    }
}

/// `ln(max(p, PROB_FLOOR))`.
#[inline]
pub(crate) fn clamped_ln(p: f64) -> f64 {
    p.clamp(PROB_FLOOR, 1.0).ln()
}

/// A probability distribution over `C >= 1` classes.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbVector {
    probs: Vec<f64>,
}

impl ProbVector {
    /// Validate `probs` as a distribution.
    ///
    /// Entries must be finite and non-negative. A total within
    /// [`NORMALIZE_TOLERANCE`] of 1 is renormalized; anything further off is
    /// rejected.
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        ensure!(!probs.is_empty(), "distribution needs at least one class");
        for (c, &p) in probs.iter().enumerate() {
            ensure!(
                p.is_finite() && p >= 0.0,
                "entry {c} is {p}, expected a finite value >= 0"
            );
        }
        let total: f64 = probs.iter().sum();
        ensure!(
            (total - 1.0).abs() <= NORMALIZE_TOLERANCE,
            "entries sum to {total}, expected 1"
        );
        let probs = if total == 1.0 {
            probs
        } else {
            probs.into_iter().map(|p| p / total).collect()
        };
        Ok(Self { probs })
    }

    pub fn uniform(classes: usize) -> Result<Self> {
        ensure!(classes >= 1, "distribution needs at least one class");
        Ok(Self {
            probs: vec![1.0 / classes as f64; classes],
        })
    }

    /// Point mass on `class`.
    pub fn point_mass(class: usize, classes: usize) -> Result<Self> {
        ensure!(
            class < classes,
            "class {class} out of range for {classes} classes"
        );
        let mut probs = vec![0.0; classes];
        probs[class] = 1.0;
        Ok(Self { probs })
    }

    /// Number of classes `C`.
    #[inline]
    pub fn len(&self) -> usize {
        self.probs.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.probs
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.probs
    }
}

impl std::ops::Index<usize> for ProbVector {
    type Output = f64;

    fn index(&self, c: usize) -> &f64 {
        &self.probs[c]
    }
}

fn same_classes(p: &ProbVector, q: &ProbVector) -> Result<()> {
    ensure!(
        p.len() == q.len(),
        "class-count mismatch: {} vs {}",
        p.len(),
        q.len()
    );
    Ok(())
}

/// Σ_c p_c ln(1/q_c) over raw slices, nats, with the clamping convention.
pub(crate) fn cross_entropy_nats(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(&pc, _)| pc > 0.0)
        .map(|(&pc, &qc)| -pc * clamped_ln(qc))
        .sum()
}

/// Shannon entropy `H(p) = -Σ p_c log p_c`.
pub fn entropy(p: &ProbVector, base: LogBase) -> f64 {
    base.from_nats(cross_entropy_nats(p.as_slice(), p.as_slice()))
}

/// Cross entropy `H(p, q) = Σ p_c log(1/q_c)`.
pub fn cross_entropy(p: &ProbVector, q: &ProbVector, base: LogBase) -> Result<f64> {
    same_classes(p, q)?;
    Ok(base.from_nats(cross_entropy_nats(p.as_slice(), q.as_slice())))
}

/// Kullback-Leibler divergence `D(p || q) = Σ p_c log(p_c / q_c)`.
///
/// Evaluated term by term with the same clamped logarithms as
/// [`cross_entropy`] and [`entropy`], so `kl = H(p, q) - H(p)` up to rounding.
pub fn kl_divergence(p: &ProbVector, q: &ProbVector, base: LogBase) -> Result<f64> {
    same_classes(p, q)?;
    let nats: f64 = p
        .as_slice()
        .iter()
        .zip(q.as_slice())
        .filter(|(&pc, _)| pc > 0.0)
        .map(|(&pc, &qc)| pc * (clamped_ln(pc) - clamped_ln(qc)))
        .sum();
    Ok(base.from_nats(nats.max(0.0)))
}

/// Bracket on the entropy gap `H(p) - H(p_hat)`.
///
/// With `r_c = p_c - p_hat_c`, returns
/// `(Σ r_c log(1/p_c), Σ r_c log(1/p_hat_c))`. Both sums are zero when the
/// distributions coincide.
pub fn entropy_gap_bounds(p: &ProbVector, p_hat: &ProbVector, base: LogBase) -> Result<(f64, f64)> {
    same_classes(p, p_hat)?;
    let (mut lower, mut upper) = (0.0, 0.0);
    for (&pc, &hc) in p.as_slice().iter().zip(p_hat.as_slice()) {
        let r = pc - hc;
        if r != 0.0 {
            lower -= r * clamped_ln(pc);
            upper -= r * clamped_ln(hc);
        }
    }
    Ok((base.from_nats(lower), base.from_nats(upper)))
}

/// Entropy of a Bernoulli(x) variable, in `base`.
pub fn binary_entropy(x: f64, base: LogBase) -> f64 {
    let term = |p: f64| if p > 0.0 { -p * p.ln() } else { 0.0 };
    base.from_nats(term(x) + term(1.0 - x))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pv(v: &[f64]) -> ProbVector {
        ProbVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn entropy_examples() {
        assert!((entropy(&ProbVector::uniform(4).unwrap(), LogBase::Bits) - 2.0).abs() < 1e-12);
        assert_eq!(entropy(&pv(&[1.0, 0.0]), LogBase::Bits), 0.0);
        assert!((entropy(&pv(&[0.25, 0.75]), LogBase::Bits) - 0.811278).abs() < 1e-6);
    }

    #[test]
    fn cross_entropy_examples() {
        let half = pv(&[0.5, 0.5]);
        let skew = pv(&[0.25, 0.75]);
        assert!((cross_entropy(&half, &half, LogBase::Bits).unwrap() - 1.0).abs() < 1e-12);
        let v = cross_entropy(&pv(&[0.0, 1.0]), &skew, LogBase::Nats).unwrap();
        assert!((v - 0.287682).abs() < 1e-6);
        let v = cross_entropy(&half, &skew, LogBase::Bits).unwrap();
        assert!((v - 1.207518).abs() < 1e-6);
    }

    #[test]
    fn cross_entropy_rejects_mismatched_classes() {
        let err = cross_entropy(&pv(&[1.0]), &pv(&[0.5, 0.5]), LogBase::Nats);
        assert!(matches!(err, Err(crate::Error::Validation(_))));
    }

    #[test]
    fn cross_entropy_clamps_zero_q() {
        let v = cross_entropy(&pv(&[1.0, 0.0]), &pv(&[0.0, 1.0]), LogBase::Nats).unwrap();
        assert!((v - (-PROB_FLOOR.ln())).abs() < 1e-9);
    }

    #[test]
    fn kl_examples() {
        let p = pv(&[0.2, 0.3, 0.5]);
        assert_eq!(kl_divergence(&p, &p, LogBase::Bits).unwrap(), 0.0);
        let v = kl_divergence(&pv(&[0.5, 0.5]), &pv(&[0.25, 0.75]), LogBase::Bits).unwrap();
        assert!((v - 0.207518).abs() < 1e-6);
        let v = kl_divergence(&pv(&[1.0, 0.0]), &pv(&[0.5, 0.5]), LogBase::Bits).unwrap();
        assert!((v - 1.0).abs() < 1e-12);
    }

    #[test]
    fn gap_bounds_examples() {
        let p = pv(&[0.5, 0.5]);
        assert_eq!(
            entropy_gap_bounds(&p, &p, LogBase::Bits).unwrap(),
            (0.0, 0.0)
        );

        let p_hat = pv(&[0.25, 0.75]);
        let (lo, hi) = entropy_gap_bounds(&p, &p_hat, LogBase::Bits).unwrap();
        let gap = entropy(&p, LogBase::Bits) - entropy(&p_hat, LogBase::Bits);
        assert!(lo.abs() < 1e-12);
        assert!((hi - 0.396241).abs() < 1e-6);
        assert!((gap - 0.188722).abs() < 1e-6);
        assert!(lo <= gap && gap <= hi);
    }

    #[test]
    fn convert_examples() {
        assert_eq!(convert(1.0, LogBase::Bits, LogBase::Bits), 1.0);
        assert!((convert(LN_2, LogBase::Nats, LogBase::Bits) - 1.0).abs() < 1e-15);
        assert!((convert(0.25, LogBase::Nats, LogBase::Bits) - 0.360674).abs() < 1e-6);
    }

    #[test]
    fn construction_normalizes_small_drift_and_rejects_large() {
        let p = ProbVector::new(vec![0.5, 0.5 + 5e-7]).unwrap();
        assert!((p.as_slice().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(ProbVector::new(vec![0.5, 0.6]).is_err());
        assert!(ProbVector::new(vec![-0.1, 1.1]).is_err());
        assert!(ProbVector::new(vec![f64::NAN, 1.0]).is_err());
        assert!(ProbVector::new(vec![]).is_err());
    }

    #[test]
    fn binary_entropy_endpoints() {
        assert_eq!(binary_entropy(0.0, LogBase::Bits), 0.0);
        assert_eq!(binary_entropy(1.0, LogBase::Bits), 0.0);
        assert!((binary_entropy(0.5, LogBase::Bits) - 1.0).abs() < 1e-15);
    }
}
