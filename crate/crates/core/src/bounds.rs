//! Closed-form lower bounds on classification error from label entropy and
//! mutual information. Everything here is in bits.

use std::io::Write;

use crate::error::{ensure, Result};
use crate::gauss::{closed_form_mi_bounds, GaussBinaryModel};
use crate::info::{binary_entropy, convert, entropy, LogBase, ProbVector};

/// Lower bound on the error probability of any classifier given `H(Y)` and
/// `I(X;Y)` in bits: `max(0, (2 + d - a) / 4)` with `d = H - I` and
/// `a = sqrt((d - 2)² + 4)`.
pub fn fano_lower_bound(h_y_bits: f64, mi_bits: f64) -> Result<f64> {
    ensure!(
        h_y_bits >= 0.0 && h_y_bits.is_finite(),
        "label entropy must be finite and non-negative, got {h_y_bits}"
    );
    ensure!(
        mi_bits >= 0.0 && mi_bits.is_finite(),
        "mutual information must be finite and non-negative, got {mi_bits}"
    );
    let d = h_y_bits - mi_bits;
    let a = ((d - 2.0).powi(2) + 4.0).sqrt();
    Ok(((2.0 + d - a) / 4.0).max(0.0))
}

/// The classical Fano bound `(H(Y) - I - 1) / log2 C`, clamped at zero.
/// Informational only.
pub fn classic_fano_bound(h_y_bits: f64, mi_bits: f64, classes: usize) -> Result<f64> {
    ensure!(classes >= 2, "need at least two classes, got {classes}");
    ensure!(
        h_y_bits >= 0.0 && mi_bits >= 0.0,
        "entropy and information must be non-negative"
    );
    Ok(((h_y_bits - mi_bits - 1.0) / (classes as f64).log2()).max(0.0))
}

/// `1 - 2 (x - 1/2)²`, an upper bound on the binary entropy of `x` in bits.
pub fn binary_entropy_quadratic_bound(x: f64) -> Result<f64> {
    ensure!((0.0..=1.0).contains(&x), "x must lie in [0, 1], got {x}");
    Ok(1.0 - 2.0 * (x - 0.5).powi(2))
}

/// Error lower bound for the binary Gaussian model: the information upper
/// bound `4q(1-q) μᵀΣ⁻¹μ` is converted from nats to bits and passed to
/// [`fano_lower_bound`] together with `H_b(q)`.
pub fn gauss_error_lower_bound(model: &GaussBinaryModel) -> Result<f64> {
    let h_bits = binary_entropy(model.q(), LogBase::Bits);
    let (_, upper_nats) = closed_form_mi_bounds(model);
    fano_lower_bound(h_bits, convert(upper_nats, LogBase::Nats, LogBase::Bits))
}

/// One row of a bound curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundPoint {
    pub mi_bits: f64,
    pub h_y_bits: f64,
    pub lower_bound: f64,
}

/// Label entropy in bits for `classes` classes, uniform or with one class
/// holding mass `p0` and the rest sharing `1 - p0` equally.
pub fn label_entropy_bits(classes: usize, skew: Option<f64>) -> Result<f64> {
    ensure!(classes >= 2, "need at least two classes, got {classes}");
    let Some(p0) = skew else {
        return Ok((classes as f64).log2());
    };
    let floor = 1.0 / classes as f64;
    ensure!(
        p0 > floor && p0 < 1.0,
        "dominant mass must lie in (1/C, 1) = ({floor}, 1), got {p0}"
    );
    let rest = (1.0 - p0) / (classes - 1) as f64;
    let mut probs = vec![rest; classes];
    probs[0] = p0;
    Ok(entropy(&ProbVector::new(probs)?, LogBase::Bits))
}

/// Evaluate the bound over `mi_grid`, returned in ascending order of
/// information. Grid values above `H(Y)` (beyond a 1e-9 slack) are rejected.
pub fn bound_curve(classes: usize, skew: Option<f64>, mi_grid: &[f64]) -> Result<Vec<BoundPoint>> {
    let h = label_entropy_bits(classes, skew)?;
    let mut grid = mi_grid.to_vec();
    for &mi in &grid {
        ensure!(
            mi >= 0.0 && mi.is_finite(),
            "grid values must be finite and non-negative, got {mi}"
        );
        ensure!(mi <= h + 1e-9, "grid value {mi} exceeds H(Y) = {h} bits");
    }
    grid.sort_by(f64::total_cmp);
    grid.into_iter()
        .map(|mi| {
            Ok(BoundPoint {
                mi_bits: mi,
                h_y_bits: h,
                lower_bound: fano_lower_bound(h, mi.min(h))?,
            })
        })
        .collect()
}

/// `count` evenly spaced points on `[0, h_y_bits]`.
pub fn even_grid(h_y_bits: f64, count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![0.0],
        _ => (0..count)
            .map(|i| h_y_bits * i as f64 / (count - 1) as f64)
            .collect(),
    }
}

pub const CURVE_HEADER: &str = "mi_bits,h_y_bits,p_error_lower_bound";

/// Write a curve as CSV with six decimals and LF endings. With
/// `classic_classes` set, a trailing `classic_fano` column is added.
pub fn write_curve_csv<W: Write>(
    points: &[BoundPoint],
    classic_classes: Option<usize>,
    mut out: W,
) -> Result<()> {
    match classic_classes {
        Some(_) => writeln!(out, "{CURVE_HEADER},classic_fano")?,
        None => writeln!(out, "{CURVE_HEADER}")?,
    }
    for p in points {
        write!(
            out,
            "{:.6},{:.6},{:.6}",
            p.mi_bits, p.h_y_bits, p.lower_bound
        )?;
        if let Some(c) = classic_classes {
            write!(out, ",{:.6}", classic_fano_bound(p.h_y_bits, p.mi_bits, c)?)?;
        }
        out.write_all(b"\n")?;
    }
    Ok(())
}
