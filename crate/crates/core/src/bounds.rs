//! Conditional-bound machinery under the odds-ratio confounding model: the
//! tilted score `f_theta`, root-characterized conditional bounds
//! `theta_a^±(x)`, and the derivative-linked weights `nu_a^±(x)`.
//!
//! The lower bound tilts negative residuals by `gamma`; the upper bound uses
//! `1/gamma`. With `gamma = 1` everything collapses to mean regression.

use crate::error::{invalid, Error, Result};
use crate::kernel::{local_weights, rule_of_thumb_bandwidths, Locality};
use crate::linalg::{basis_row, weighted_least_squares};
use crate::model::check_gamma;
use serde::{Deserialize, Serialize};

/// Which side of the partial-identification interval is being estimated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BoundSide {
    Lower,
    Upper,
}

impl BoundSide {
    /// The tilt applied to negative residuals: `gamma` on the lower side,
    /// `1/gamma` on the upper side.
    pub fn gamma_tilt(self, gamma: f64) -> f64 {
        match self {
            BoundSide::Lower => gamma,
            BoundSide::Upper => 1.0 / gamma,
        }
    }

    /// Valid range of the `nu` weight on this side.
    pub fn nu_range(self, gamma: f64) -> (f64, f64) {
        match self {
            BoundSide::Lower => (1.0, gamma),
            BoundSide::Upper => (1.0 / gamma, 1.0),
        }
    }

    pub const BOTH: [BoundSide; 2] = [BoundSide::Lower, BoundSide::Upper];

    pub fn index(self) -> usize {
        match self {
            BoundSide::Lower => 0,
            BoundSide::Upper => 1,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            BoundSide::Lower => "lower",
            BoundSide::Upper => "upper",
        }
    }
}

/// Outcomes with nonnegative localization weights.
#[derive(Debug, Clone)]
pub struct WeightedSample {
    values: Vec<f64>,
    weights: Vec<f64>,
}

impl WeightedSample {
    pub fn new(values: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if values.len() != weights.len() {
            return Err(invalid("values and weights must have the same length"));
        }
        if values.iter().chain(&weights).any(|v| !v.is_finite()) {
            return Err(invalid("weighted sample entries must be finite"));
        }
        if weights.iter().any(|&w| w < 0.0) {
            return Err(invalid("weights must be nonnegative"));
        }
        if !weights.iter().any(|&w| w > 0.0) {
            return Err(invalid("at least one weight must be strictly positive"));
        }
        Ok(Self { values, weights })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

/// Tilted residual (y - theta)_+ - gamma_tilt * (y - theta)_-, with
/// x_- = max(-x, 0). Strictly decreasing in theta.
pub fn f_theta(y: f64, theta: f64, gamma_tilt: f64) -> f64 {
    let r = y - theta;
    if r >= 0.0 {
        r
    } else {
        gamma_tilt * r
    }
}

/// Weighted moment of the tilted score at `theta`.
fn weighted_score(sample: &WeightedSample, theta: f64, gamma_tilt: f64) -> f64 {
    sample
        .values
        .iter()
        .zip(&sample.weights)
        .map(|(&y, &w)| w * f_theta(y, theta, gamma_tilt))
        .sum()
}

/// Root of sum_i w_i f_theta(y_i) = 0 over theta.
///
/// The score is continuous, piecewise linear, and strictly decreasing on
/// [min y, max y], so bisection is robust to the kinks at the sample values.
/// If the score is numerically flat at zero the midpoint of the remaining
/// bracket is returned.
pub fn solve_theta(sample: &WeightedSample, gamma: f64, side: BoundSide) -> Result<f64> {
    check_gamma(gamma)?;
    let tilt = side.gamma_tilt(gamma);
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for (&y, &w) in sample.values.iter().zip(&sample.weights) {
        if w > 0.0 {
            lo = lo.min(y);
            hi = hi.max(y);
        }
    }
    if lo == hi {
        return Ok(lo);
    }
    // g(lo) >= 0 >= g(hi) always holds on the positive-weight support.
    let mut g_lo = weighted_score(sample, lo, tilt);
    if g_lo == 0.0 {
        return Ok(lo);
    }
    let x_tol = 1e-15 * (hi - lo).max(1.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let g_mid = weighted_score(sample, mid, tilt);
        if g_mid == 0.0 {
            return Ok(mid);
        }
        if g_mid.signum() == g_lo.signum() {
            lo = mid;
            g_lo = g_mid;
        } else {
            hi = mid;
        }
        if hi - lo <= x_tol {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Map the conditional probability P(Y < theta | A=a, X=x) to the nu weight:
/// 1 + (tilt - 1) * cdf_below, where tilt is gamma or 1/gamma per side.
pub fn nu_from_cdf(cdf_below: f64, gamma: f64, side: BoundSide) -> Result<f64> {
    crate::model::check_probability(cdf_below, "cdf_below")?;
    check_gamma(gamma)?;
    Ok(1.0 + (side.gamma_tilt(gamma) - 1.0) * cdf_below)
}

/// How the conditional bound and its nu weight are learned.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub enum BoundMethod {
    /// Solve the tilted moment equation on kernel-weighted outcomes around
    /// each query point; estimate the conditional CDF the same way.
    LocalKernel,
    /// Minimize the empirical asymmetric squared loss over a linear basis
    /// via iteratively reweighted least squares; the CDF is a linear-basis
    /// regression of the residual-sign indicator.
    #[default]
    AsymmetricBasis,
}

const IRLS_MAX_ITERS: usize = 60;
const IRLS_TOL: f64 = 1e-12;
const IRLS_RIDGE: f64 = 1e-10;

/// Evaluator for (theta(x), nu(x)) at a fixed (arm, side, gamma).
///
/// Holds its own copies of the two training halves, so it is immutable and
/// safe to evaluate concurrently.
#[derive(Debug, Clone)]
pub struct ConditionalBoundField {
    gamma: f64,
    side: BoundSide,
    state: FieldState,
}

#[derive(Debug, Clone)]
enum FieldState {
    Local {
        locality: Locality,
        theta_x: Vec<Vec<f64>>,
        theta_y: Vec<f64>,
        theta_bw: Vec<f64>,
        nu_x: Vec<Vec<f64>>,
        nu_y: Vec<f64>,
        nu_bw: Vec<f64>,
    },
    Basis {
        theta_coef: Vec<f64>,
        cdf_coef: Vec<f64>,
    },
}

impl ConditionalBoundField {
    /// Fit theta on one half of the arm-a training data and nu on the other,
    /// nesting exactly: the nu half sees only the already-fit theta.
    pub fn fit(
        theta_half: (&[Vec<f64>], &[f64]),
        nu_half: (&[Vec<f64>], &[f64]),
        gamma: f64,
        side: BoundSide,
        method: BoundMethod,
        locality: Locality,
    ) -> Result<Self> {
        check_gamma(gamma)?;
        locality.validate()?;
        let (tx, ty) = theta_half;
        let (nx, ny) = nu_half;
        if tx.is_empty() || nx.is_empty() {
            return Err(Error::Estimation("empty training half for bound field".into()));
        }
        let state = match method {
            BoundMethod::LocalKernel => {
                let scale = match locality {
                    Locality::Kernel { scale } => scale,
                    Locality::Knn { .. } => 1.0,
                };
                let t_refs: Vec<&[f64]> = tx.iter().map(|v| v.as_slice()).collect();
                let n_refs: Vec<&[f64]> = nx.iter().map(|v| v.as_slice()).collect();
                FieldState::Local {
                    locality,
                    theta_bw: rule_of_thumb_bandwidths(&t_refs, scale),
                    theta_x: tx.to_vec(),
                    theta_y: ty.to_vec(),
                    nu_bw: rule_of_thumb_bandwidths(&n_refs, scale),
                    nu_x: nx.to_vec(),
                    nu_y: ny.to_vec(),
                }
            }
            BoundMethod::AsymmetricBasis => {
                let tilt = side.gamma_tilt(gamma);
                let rows: Vec<Vec<f64>> = tx.iter().map(|x| basis_row(x)).collect();
                let theta_coef = fit_asymmetric_basis(&rows, ty, tilt)?;
                // Linear-probability fit of 1(y < theta_hat(x)) on the nu half.
                let n_rows: Vec<Vec<f64>> = nx.iter().map(|x| basis_row(x)).collect();
                let indicator: Vec<f64> = n_rows
                    .iter()
                    .zip(ny)
                    .map(|(row, &y)| if y < dot(&theta_coef, row) { 1.0 } else { 0.0 })
                    .collect();
                let ones = vec![1.0; n_rows.len()];
                let cdf_coef = weighted_least_squares(&n_rows, &indicator, &ones, IRLS_RIDGE)?;
                FieldState::Basis { theta_coef, cdf_coef }
            }
        };
        Ok(Self { gamma, side, state })
    }

    /// (theta(x), nu(x)); nu is clipped to its side range.
    pub fn eval(&self, x: &[f64]) -> Result<(f64, f64)> {
        let (theta, cdf_below) = match &self.state {
            FieldState::Local { locality, theta_x, theta_y, theta_bw, nu_x, nu_y, nu_bw } => {
                let t_refs: Vec<&[f64]> = theta_x.iter().map(|v| v.as_slice()).collect();
                let w = local_weights(&t_refs, theta_bw, *locality, x);
                let sample = WeightedSample::new(theta_y.clone(), w)?;
                let theta = solve_theta(&sample, self.gamma, self.side)?;
                let n_refs: Vec<&[f64]> = nu_x.iter().map(|v| v.as_slice()).collect();
                let w = local_weights(&n_refs, nu_bw, *locality, x);
                let total: f64 = w.iter().sum();
                let below: f64 = w
                    .iter()
                    .zip(nu_y)
                    .filter(|(_, &y)| y < theta)
                    .map(|(w, _)| w)
                    .sum();
                (theta, below / total)
            }
            FieldState::Basis { theta_coef, cdf_coef } => {
                let row = basis_row(x);
                (dot(theta_coef, &row), dot(cdf_coef, &row).clamp(0.0, 1.0))
            }
        };
        let nu = nu_from_cdf(cdf_below, self.gamma, self.side)?;
        let (lo, hi) = self.side.nu_range(self.gamma);
        Ok((theta, nu.clamp(lo, hi)))
    }

    pub fn side(&self) -> BoundSide {
        self.side
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }
}

/// IRLS for argmin_b sum_i (y_i - x_i'b)_+^2 + tilt * (y_i - x_i'b)_-^2.
///
/// The first-order condition is exactly the tilted moment equation, so this
/// is the global-basis analogue of `solve_theta`.
fn fit_asymmetric_basis(rows: &[Vec<f64>], y: &[f64], tilt: f64) -> Result<Vec<f64>> {
    let ones = vec![1.0; rows.len()];
    let mut coef = weighted_least_squares(rows, y, &ones, IRLS_RIDGE)?;
    if tilt == 1.0 {
        return Ok(coef);
    }
    for _ in 0..IRLS_MAX_ITERS {
        let w: Vec<f64> = rows
            .iter()
            .zip(y)
            .map(|(row, &yi)| if yi - dot(&coef, row) >= 0.0 { 1.0 } else { tilt })
            .collect();
        let next = weighted_least_squares(rows, y, &w, IRLS_RIDGE)?;
        let delta = coef
            .iter()
            .zip(&next)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0_f64, f64::max);
        let scale = coef.iter().map(|c| c.abs()).fold(1.0_f64, f64::max);
        coef = next;
        if delta <= IRLS_TOL * scale {
            break;
        }
    }
    Ok(coef)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
