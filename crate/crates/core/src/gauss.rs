//! Binary Gaussian data model: `P(Y = -1) = q`, `X | Y = y ~ N(y μ, Σ)`.
//!
//! Densities are evaluated in log space through the Cholesky factor of `Σ`;
//! `Σ⁻¹` is never formed. Information quantities here are in nats.

use rand::distr::{Distribution, StandardUniform};
use rand_distr::StandardNormal;

use crate::error::{ensure, Error, Result};
use crate::info::{binary_entropy, LogBase};
use crate::rng;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Samples per random stream in [`sample`]; chunk `k` draws from stream
/// `STREAM_SAMPLE + k`.
pub const SAMPLE_CHUNK: usize = 1 << 16;

/// Lower-triangular Cholesky factor `L` (row-major) with `L Lᵀ = a`.
///
/// Fails with a numeric error on a non-positive pivot.
pub fn cholesky(a: &[f64], n: usize) -> Result<Vec<f64>> {
    ensure!(
        a.len() == n * n,
        "expected a {n}x{n} matrix, got {} entries",
        a.len()
    );
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut sum = a[i * n + j];
            for k in 0..j {
                sum -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if sum.is_nan() || sum <= 0.0 || sum.is_infinite() {
                    return Err(Error::Numeric(format!(
                        "matrix is not positive definite (pivot {i} is {sum})"
                    )));
                }
                l[i * n + i] = sum.sqrt();
            } else {
                l[i * n + j] = sum / l[j * n + j];
            }
        }
    }
    Ok(l)
}

/// Solve `L y = b` for lower-triangular `L`.
fn forward_substitute(l: &[f64], n: usize, b: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; n];
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i * n + k] * y[k];
        }
        y[i] = s / l[i * n + i];
    }
    y
}

/// Solve `Lᵀ x = y`.
fn back_substitute(l: &[f64], n: usize, y: &[f64]) -> Vec<f64> {
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in i + 1..n {
            s -= l[k * n + i] * x[k];
        }
        x[i] = s / l[i * n + i];
    }
    x
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussBinaryModel {
    q: f64,
    mu: Vec<f64>,
    sigma: Vec<f64>,
    chol: Vec<f64>,
    log_det: f64,
    /// `Σ⁻¹ μ`.
    precision_mu: Vec<f64>,
}

impl GaussBinaryModel {
    /// `sigma` is row-major `n × n` with `n = mu.len()`.
    pub fn new(q: f64, mu: Vec<f64>, sigma: Vec<f64>) -> Result<Self> {
        ensure!(
            q > 0.0 && q < 1.0,
            "q must lie strictly inside (0, 1), got {q}"
        );
        let n = mu.len();
        ensure!(n >= 1, "mean vector must be non-empty");
        ensure!(mu.iter().all(|m| m.is_finite()), "mean must be finite");
        ensure!(
            sigma.len() == n * n,
            "covariance has {} entries, expected {}",
            sigma.len(),
            n * n
        );
        for i in 0..n {
            for j in 0..i {
                let (a, b) = (sigma[i * n + j], sigma[j * n + i]);
                ensure!(
                    (a - b).abs() <= 1e-9,
                    "covariance is not symmetric at ({i}, {j})"
                );
            }
        }
        let chol = cholesky(&sigma, n)?;
        let log_det = 2.0 * (0..n).map(|i| chol[i * n + i].ln()).sum::<f64>();
        let precision_mu = back_substitute(&chol, n, &forward_substitute(&chol, n, &mu));
        Ok(Self {
            q,
            mu,
            sigma,
            chol,
            log_det,
            precision_mu,
        })
    }

    /// One-dimensional model with variance `variance`.
    pub fn scalar(q: f64, mu: f64, variance: f64) -> Result<Self> {
        Self::new(q, vec![mu], vec![variance])
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    /// `P(Y = -1)`.
    pub fn q(&self) -> f64 {
        self.q
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn sigma(&self) -> &[f64] {
        &self.sigma
    }

    pub fn cholesky_factor(&self) -> &[f64] {
        &self.chol
    }

    /// `μᵀ Σ⁻¹ μ`.
    pub fn separation(&self) -> f64 {
        self.mu
            .iter()
            .zip(&self.precision_mu)
            .map(|(a, b)| a * b)
            .sum()
    }

    /// `log N(x; sign · μ, Σ)`.
    pub fn log_density(&self, x: &[f64], sign: f64) -> f64 {
        let n = self.dim();
        let centered: Vec<f64> = x
            .iter()
            .zip(&self.mu)
            .map(|(xi, m)| xi - sign * m)
            .collect();
        let white = forward_substitute(&self.chol, n, &centered);
        let maha: f64 = white.iter().map(|v| v * v).sum();
        -0.5 * (n as f64 * LN_2PI + self.log_det + maha)
    }

    /// `log p_X(x)` of the two-component mixture, via log-sum-exp.
    pub fn log_mixture_density(&self, x: &[f64]) -> f64 {
        let a = (1.0 - self.q).ln() + self.log_density(x, 1.0);
        let b = self.q.ln() + self.log_density(x, -1.0);
        log_add_exp(a, b)
    }

    /// `H(Y)` in nats.
    pub fn label_entropy(&self) -> f64 {
        binary_entropy(self.q, LogBase::Nats)
    }
}

fn log_add_exp(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + ((a - m).exp() + (b - m).exp()).ln()
}

fn logistic(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// Draws from the joint distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussSample {
    /// Row-major `count × n`.
    pub features: Vec<f64>,
    /// `-1` or `+1`.
    pub labels: Vec<i8>,
}

impl GaussSample {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

fn sample_chunk(
    model: &GaussBinaryModel,
    count: usize,
    seed: u64,
    chunk: u64,
    out: &mut GaussSample,
) {
    let n = model.dim();
    let mut rng = rng::stream(seed, rng::STREAM_SAMPLE.wrapping_add(chunk));
    let mut z = vec![0.0; n];
    for _ in 0..count {
        let u: f64 = StandardUniform.sample(&mut rng);
        let y: i8 = if u < model.q { -1 } else { 1 };
        for zi in z.iter_mut() {
            *zi = StandardNormal.sample(&mut rng);
        }
        for i in 0..n {
            let lz: f64 = (0..=i).map(|k| model.chol[i * n + k] * z[k]).sum();
            out.features.push(f64::from(y) * model.mu[i] + lz);
        }
        out.labels.push(y);
    }
}

/// Draw `count` labelled samples: `Y = -1` with probability `q`, then
/// `X = Y μ + L z` with `z` standard normal.
pub fn sample(model: &GaussBinaryModel, count: usize, seed: u64) -> Result<GaussSample> {
    ensure!(count >= 1, "need at least one sample");
    let mut out = GaussSample {
        features: Vec::with_capacity(count * model.dim()),
        labels: Vec::with_capacity(count),
    };
    let mut remaining = count;
    let mut chunk = 0u64;
    while remaining > 0 {
        let take = remaining.min(SAMPLE_CHUNK);
        sample_chunk(model, take, seed, chunk, &mut out);
        remaining -= take;
        chunk += 1;
    }
    Ok(out)
}

/// `P(Y = +1 | x)` from the difference of the class log-densities.
pub fn posterior(model: &GaussBinaryModel, x: &[f64]) -> Result<f64> {
    ensure!(
        x.len() == model.dim(),
        "point has dimension {}, model has {}",
        x.len(),
        model.dim()
    );
    let log_odds =
        ((1.0 - model.q) / model.q).ln() + model.log_density(x, 1.0) - model.log_density(x, -1.0);
    Ok(logistic(log_odds))
}

/// The closed-form bounds `(2 min(q, 1-q) μᵀΣ⁻¹μ, 4 q (1-q) μᵀΣ⁻¹μ)` in nats,
/// evaluated exactly as published.
///
/// The upper expression holds against numerical oracles. The lower one does
/// not in general: it grows without limit in `μᵀΣ⁻¹μ` while `I(X;Y) ≤ H(Y) ≤ ln 2`.
pub fn closed_form_mi_bounds(model: &GaussBinaryModel) -> (f64, f64) {
    let s = model.separation();
    let q = model.q;
    (2.0 * q.min(1.0 - q) * s, 4.0 * q * (1.0 - q) * s)
}

/// Which quadratic form [`quad_form_expectation`] evaluates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QuadShift {
    /// `E[Xᵀ A X]`.
    None,
    /// `E[(X - μ)ᵀ A (X - μ)]`.
    MinusMu,
    /// `E[(X + μ)ᵀ A (X + μ)]`.
    PlusMu,
}

/// Expectation of a quadratic form of `X ~ N(μ, Σ)`:
/// `Tr(AΣ) + μᵀAμ`, `Tr(AΣ)` and `Tr(AΣ) + 4μᵀAμ` for the three shifts.
pub fn quad_form_expectation(
    a: &[f64],
    mu: &[f64],
    sigma: &[f64],
    shift: QuadShift,
) -> Result<f64> {
    let n = mu.len();
    ensure!(n >= 1, "dimension must be positive");
    ensure!(
        a.len() == n * n && sigma.len() == n * n,
        "A and Σ must be {n}x{n}"
    );
    let trace: f64 = (0..n)
        .map(|i| (0..n).map(|k| a[i * n + k] * sigma[k * n + i]).sum::<f64>())
        .sum();
    let quad: f64 = (0..n)
        .map(|i| mu[i] * (0..n).map(|k| a[i * n + k] * mu[k]).sum::<f64>())
        .sum();
    Ok(match shift {
        QuadShift::None => trace + quad,
        QuadShift::MinusMu => trace,
        QuadShift::PlusMu => trace + 4.0 * quad,
    })
}

/// Monte-Carlo counterpart of [`quad_form_expectation`] from `count` draws
/// of `X ~ N(μ, Σ)`.
pub fn mc_quad_form_expectation(
    a: &[f64],
    mu: &[f64],
    sigma: &[f64],
    shift: QuadShift,
    count: usize,
    seed: u64,
) -> Result<McEstimate> {
    let n = mu.len();
    ensure!(count >= 2, "need at least two samples");
    ensure!(a.len() == n * n, "A must be {n}x{n}");
    let l = cholesky(sigma, n)?;
    let offset = match shift {
        QuadShift::None => 0.0,
        QuadShift::MinusMu => -1.0,
        QuadShift::PlusMu => 1.0,
    };
    let mut rng = rng::stream(seed, rng::STREAM_SAMPLE);
    let (mut z, mut v) = (vec![0.0; n], vec![0.0; n]);
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for _ in 0..count {
        for zi in z.iter_mut() {
            *zi = StandardNormal.sample(&mut rng);
        }
        for i in 0..n {
            let lz: f64 = (0..=i).map(|k| l[i * n + k] * z[k]).sum();
            v[i] = mu[i] + lz + offset * mu[i];
        }
        let t: f64 = (0..n)
            .map(|i| v[i] * (0..n).map(|k| a[i * n + k] * v[k]).sum::<f64>())
            .sum();
        sum += t;
        sum_sq += t * t;
    }
    let nf = count as f64;
    let mean = sum / nf;
    let var = ((sum_sq - nf * mean * mean) / (nf - 1.0)).max(0.0);
    Ok(McEstimate {
        estimate: mean,
        stderr: (var / nf).sqrt(),
    })
}

/// Monte-Carlo estimate of `I(X;Y)` with its standard error, nats.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub estimate: f64,
    pub stderr: f64,
}

/// `I ≈ (1/N) Σ log[p(x_i | y_i) / p_X(x_i)]` over joint samples.
pub fn mc_mi(model: &GaussBinaryModel, count: usize, seed: u64) -> Result<McEstimate> {
    ensure!(
        count >= 1000,
        "Monte-Carlo MI needs at least 1000 samples, got {count}"
    );
    let draws = sample(model, count, seed)?;
    let n = model.dim();
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for (x, &y) in draws.features.chunks_exact(n).zip(&draws.labels) {
        let t = model.log_density(x, f64::from(y)) - model.log_mixture_density(x);
        sum += t;
        sum_sq += t * t;
    }
    let nf = count as f64;
    let mean = sum / nf;
    let var = ((sum_sq - nf * mean * mean) / (nf - 1.0)).max(0.0);
    Ok(McEstimate {
        estimate: mean,
        stderr: (var / nf).sqrt(),
    })
}

/// The two quadrature routes to `I(X;Y)` for a scalar model, nats.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadratureMi {
    /// `H(Y) - H(Y|X)`.
    pub label_route: f64,
    /// `h(X) - h(X|Y)`.
    pub feature_route: f64,
}

/// Composite Simpson integration on `[-half_width, half_width]`.
///
/// `n_points` is rounded up to an odd count. The window must extend at least
/// eight standard deviations beyond `|μ|`.
pub fn quadrature_mi_1d_routes(
    model: &GaussBinaryModel,
    half_width: f64,
    n_points: usize,
) -> Result<QuadratureMi> {
    ensure!(
        model.dim() == 1,
        "quadrature oracle is one-dimensional; model has n = {}",
        model.dim()
    );
    ensure!(
        n_points >= 10_000,
        "need at least 10^4 quadrature points, got {n_points}"
    );
    let sd = model.sigma[0].sqrt();
    let reach = model.mu[0].abs() + 8.0 * sd;
    ensure!(
        half_width >= reach,
        "half-width {half_width} does not cover |μ| + 8σ = {reach}"
    );
    let intervals = if n_points % 2 == 1 {
        n_points - 1
    } else {
        n_points
    };
    let h = 2.0 * half_width / intervals as f64;
    let (mut cond_label, mut neg_mix_entropy) = (0.0, 0.0);
    for k in 0..=intervals {
        let x = [-half_width + k as f64 * h];
        let w = if k == 0 || k == intervals {
            1.0
        } else if k % 2 == 1 {
            4.0
        } else {
            2.0
        };
        let log_p = model.log_mixture_density(&x);
        let p = log_p.exp();
        let post = posterior(model, &x)?;
        cond_label += w * p * binary_entropy(post, LogBase::Nats);
        neg_mix_entropy += w * p * log_p;
    }
    let h_y_given_x = cond_label * h / 3.0;
    let h_x = -neg_mix_entropy * h / 3.0;
    let h_x_given_y = 0.5 * (LN_2PI + 1.0 + model.sigma[0].ln());
    Ok(QuadratureMi {
        label_route: model.label_entropy() - h_y_given_x,
        feature_route: h_x - h_x_given_y,
    })
}

/// `H(Y) - H(Y|X)` by quadrature; see [`quadrature_mi_1d_routes`].
pub fn quadrature_mi_1d(model: &GaussBinaryModel, half_width: f64, n_points: usize) -> Result<f64> {
    quadrature_mi_1d_routes(model, half_width, n_points).map(|r| r.label_route)
}
