//! Core domain types and the incremental-tilt arithmetic shared by every
//! other module.
//!
//! The tilt multiplies the odds of treatment by `delta`, leaving degenerate
//! propensities untouched, so no positivity assumption is needed anywhere
//! downstream.

use crate::error::{invalid, Result};
use serde::{Deserialize, Serialize};

/// One observational unit: covariate vector, binary treatment, real outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitRecord {
    covariates: Vec<f64>,
    treatment: u8,
    outcome: f64,
}

impl UnitRecord {
    pub fn new(covariates: Vec<f64>, treatment: u8, outcome: f64) -> Result<Self> {
        if treatment > 1 {
            return Err(invalid(format!("treatment must be 0 or 1, got {treatment}")));
        }
        if !outcome.is_finite() {
            return Err(invalid(format!("outcome must be finite, got {outcome}")));
        }
        if covariates.iter().any(|c| !c.is_finite()) {
            return Err(invalid("covariates must be finite"));
        }
        Ok(Self { covariates, treatment, outcome })
    }

    pub fn covariates(&self) -> &[f64] {
        &self.covariates
    }

    pub fn treatment(&self) -> u8 {
        self.treatment
    }

    /// Treatment as a real number, for influence-function arithmetic.
    pub fn treatment_f64(&self) -> f64 {
        f64::from(self.treatment)
    }

    pub fn outcome(&self) -> f64 {
        self.outcome
    }
}

/// Immutable collection of units with a constant covariate dimension.
#[derive(Debug, Clone)]
pub struct Dataset {
    records: Vec<UnitRecord>,
    dim: usize,
}

impl Dataset {
    pub fn new(records: Vec<UnitRecord>) -> Result<Self> {
        if records.len() < 2 {
            return Err(invalid(format!("dataset needs n >= 2, got {}", records.len())));
        }
        let dim = records[0].covariates.len();
        if records.iter().any(|r| r.covariates.len() != dim) {
            return Err(invalid("covariate vectors must share one length"));
        }
        Ok(Self { records, dim })
    }

    pub fn n(&self) -> usize {
        self.records.len()
    }

    /// Covariate dimension, constant across all records.
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn records(&self) -> &[UnitRecord] {
        &self.records
    }

    pub fn record(&self, i: usize) -> &UnitRecord {
        &self.records[i]
    }

    /// Indices of units in the given treatment arm.
    pub fn arm_indices(&self, arm: u8) -> Vec<usize> {
        self.records
            .iter()
            .enumerate()
            .filter(|(_, r)| r.treatment == arm)
            .map(|(i, _)| i)
            .collect()
    }

    /// New dataset restricted to the given record indices (order preserved).
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        Dataset::new(indices.iter().map(|&i| self.records[i].clone()).collect())
    }
}

/// Sensitivity-analysis knobs: the intervention odds multiplier `delta` and
/// the confounding level `gamma`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensitivityParams {
    pub delta: f64,
    pub gamma: f64,
}

impl SensitivityParams {
    pub fn new(delta: f64, gamma: f64) -> Result<Self> {
        check_delta(delta)?;
        check_gamma(gamma)?;
        Ok(Self { delta, gamma })
    }
}

pub(crate) fn check_delta(delta: f64) -> Result<()> {
    if !delta.is_finite() || delta <= 0.0 {
        return Err(invalid(format!("delta must be finite and positive, got {delta}")));
    }
    Ok(())
}

pub(crate) fn check_gamma(gamma: f64) -> Result<()> {
    if !gamma.is_finite() || gamma < 1.0 {
        return Err(invalid(format!("gamma must be finite and >= 1, got {gamma}")));
    }
    Ok(())
}

/// Sorted grids of `delta` and `gamma` values for curve sweeps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamGrid {
    deltas: Vec<f64>,
    gammas: Vec<f64>,
}

impl ParamGrid {
    pub fn new(deltas: Vec<f64>, gammas: Vec<f64>) -> Result<Self> {
        if deltas.is_empty() || gammas.is_empty() {
            return Err(invalid("grids must be nonempty"));
        }
        for d in &deltas {
            check_delta(*d)?;
        }
        for g in &gammas {
            check_gamma(*g)?;
        }
        if !strictly_increasing(&deltas) || !strictly_increasing(&gammas) {
            return Err(invalid("grids must be strictly increasing"));
        }
        Ok(Self { deltas, gammas })
    }

    /// Log-spaced delta grid paired with a single gamma.
    pub fn log_deltas(delta_min: f64, delta_max: f64, count: usize, gammas: Vec<f64>) -> Result<Self> {
        if count < 2 || delta_min <= 0.0 || delta_max <= delta_min {
            return Err(invalid("log grid needs count >= 2 and 0 < delta_min < delta_max"));
        }
        let (l0, l1) = (delta_min.ln(), delta_max.ln());
        let deltas = (0..count)
            .map(|i| (l0 + (l1 - l0) * i as f64 / (count - 1) as f64).exp())
            .collect();
        Self::new(deltas, gammas)
    }

    pub fn deltas(&self) -> &[f64] {
        &self.deltas
    }

    pub fn gammas(&self) -> &[f64] {
        &self.gammas
    }
}

fn strictly_increasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[0] < w[1])
}

/// Incremental propensity: delta*pi / (delta*pi + 1 - pi).
///
/// Degenerate propensities pass through unchanged; units with pi in {0,1}
/// are not intervened upon.
pub fn tilt_propensity(pi: f64, delta: f64) -> Result<f64> {
    check_probability(pi, "pi")?;
    check_delta(delta)?;
    if pi == 0.0 || pi == 1.0 {
        return Ok(pi);
    }
    Ok(delta * pi / (delta * pi + 1.0 - pi))
}

/// The odds ratio [q/(1-q)] / [pi/(1-pi)]; inverts `tilt_propensity`.
pub fn implied_delta(q: f64, pi: f64) -> Result<f64> {
    for (v, name) in [(q, "q"), (pi, "pi")] {
        if !v.is_finite() || v <= 0.0 || v >= 1.0 {
            return Err(invalid(format!("{name} must lie strictly in (0,1), got {v}")));
        }
    }
    Ok((q / (1.0 - q)) / (pi / (1.0 - pi)))
}

/// The four identification weights (q*pi, q*(1-pi), (1-q)*(1-pi), (1-q)*pi)
/// multiplying (mu_1, theta_1, mu_0, theta_0) in the bound functional.
pub fn identification_weights(pi: f64, delta: f64) -> Result<[f64; 4]> {
    let q = tilt_propensity(pi, delta)?;
    Ok([q * pi, q * (1.0 - pi), (1.0 - q) * (1.0 - pi), (1.0 - q) * pi])
}

pub(crate) fn check_probability(p: f64, name: &str) -> Result<()> {
    if !p.is_finite() || !(0.0..=1.0).contains(&p) {
        return Err(invalid(format!("{name} must lie in [0,1], got {p}")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tilt_identity_and_doubling() {
        assert_eq!(tilt_propensity(0.5, 1.0).unwrap(), 0.5);
        assert!((tilt_propensity(0.5, 2.0).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(tilt_propensity(0.0, 7.0).unwrap(), 0.0);
        assert_eq!(tilt_propensity(1.0, 7.0).unwrap(), 1.0);
    }

    #[test]
    fn tilt_rejects_bad_inputs() {
        assert!(tilt_propensity(-0.1, 1.0).is_err());
        assert!(tilt_propensity(1.1, 1.0).is_err());
        assert!(tilt_propensity(f64::NAN, 1.0).is_err());
        assert!(tilt_propensity(0.5, 0.0).is_err());
        assert!(tilt_propensity(0.5, -1.0).is_err());
        assert!(tilt_propensity(0.5, f64::INFINITY).is_err());
    }

    #[test]
    fn implied_delta_examples() {
        assert!((implied_delta(2.0 / 3.0, 0.5).unwrap() - 2.0).abs() < 1e-12);
        assert!((implied_delta(0.5, 0.5).unwrap() - 1.0).abs() < 1e-15);
        // (0.9/0.1) / (0.75/0.25) = 9/3
        assert!((implied_delta(0.9, 0.75).unwrap() - 3.0).abs() < 1e-12);
        assert!(implied_delta(0.0, 0.5).is_err());
        assert!(implied_delta(0.5, 1.0).is_err());
    }

    #[test]
    fn weights_examples_and_sum() {
        let w = identification_weights(0.5, 1.0).unwrap();
        assert_eq!(w, [0.25, 0.25, 0.25, 0.25]);
        let w = identification_weights(1.0, 2.0).unwrap();
        assert_eq!(w, [1.0, 0.0, 0.0, 0.0]);
        let w = identification_weights(0.5, 2.0).unwrap();
        for (got, want) in w.iter().zip([1.0 / 3.0, 1.0 / 3.0, 1.0 / 6.0, 1.0 / 6.0]) {
            assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        }
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn tilt_limits() {
        for pi in [0.05, 0.3, 0.7, 0.95] {
            assert!(tilt_propensity(pi, 1e12).unwrap() > 1.0 - 1e-9);
            assert!(tilt_propensity(pi, 1e-12).unwrap() < 1e-9);
        }
    }

    #[test]
    fn dataset_invariants() {
        let r = |x: f64, a: u8, y: f64| UnitRecord::new(vec![x], a, y).unwrap();
        assert!(Dataset::new(vec![r(0.0, 0, 1.0)]).is_err());
        let ds = Dataset::new(vec![r(0.0, 0, 1.0), r(1.0, 1, 2.0)]).unwrap();
        assert_eq!(ds.n(), 2);
        assert_eq!(ds.dim(), 1);
        assert_eq!(ds.arm_indices(1), vec![1]);
        // mismatched covariate lengths rejected
        let bad = vec![r(0.0, 0, 1.0), UnitRecord::new(vec![1.0, 2.0], 1, 0.0).unwrap()];
        assert!(Dataset::new(bad).is_err());
    }

    #[test]
    fn record_validation() {
        assert!(UnitRecord::new(vec![0.0], 2, 1.0).is_err());
        assert!(UnitRecord::new(vec![0.0], 0, f64::NAN).is_err());
        assert!(UnitRecord::new(vec![f64::INFINITY], 0, 1.0).is_err());
    }

    #[test]
    fn grid_validation() {
        assert!(ParamGrid::new(vec![], vec![1.0]).is_err());
        assert!(ParamGrid::new(vec![1.0, 1.0], vec![1.0]).is_err());
        assert!(ParamGrid::new(vec![1.0], vec![0.5]).is_err());
        let g = ParamGrid::log_deltas(0.1, 10.0, 5, vec![1.0, 2.0]).unwrap();
        assert_eq!(g.deltas().len(), 5);
        assert!((g.deltas()[2] - 1.0).abs() < 1e-12);
    }
}
