//! Influence-function evaluation, plug-in and cross-fitted doubly-robust
//! bound estimators, Wald inference, curve construction, the robustness
//! search over the confounding level, the mixture envelope, and
//! heterogeneous-effect diagnostics.

use crate::bounds::{f_theta, BoundSide};
use crate::error::{invalid, Error, Result};
use crate::model::{check_delta, check_gamma, Dataset, ParamGrid, UnitRecord};
use crate::nuisance::{
    fit_bound_pairs, fit_pi_mu, make_fold_plan, FittedNuisanceSet, FoldPlan, LearnerSpec,
    Provenance,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

/// Point estimates of the effect bounds with influence-function inference.
///
/// `ci_lower_bound` and `ci_upper_bound` are the outer Wald limits:
/// psi_lower - z * sigma_lower / sqrt(n) and psi_upper + z * sigma_upper / sqrt(n).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundEstimate {
    pub psi_lower: f64,
    pub psi_upper: f64,
    pub sigma_lower: f64,
    pub sigma_upper: f64,
    pub n: usize,
    pub ci_level: f64,
    pub ci_lower_bound: f64,
    pub ci_upper_bound: f64,
}

impl BoundEstimate {
    fn from_sides(lower: (f64, f64), upper: (f64, f64), n: usize, ci_level: f64) -> Self {
        let z = wald_z(ci_level);
        let root_n = (n as f64).sqrt();
        Self {
            psi_lower: lower.0,
            psi_upper: upper.0,
            sigma_lower: lower.1,
            sigma_upper: upper.1,
            n,
            ci_level,
            ci_lower_bound: lower.0 - z * lower.1 / root_n,
            ci_upper_bound: upper.0 + z * upper.1 / root_n,
        }
    }

    /// Interval [psi_lower, psi_upper].
    pub fn interval(&self) -> (f64, f64) {
        (self.psi_lower, self.psi_upper)
    }

    /// Outer Wald interval.
    pub fn ci(&self) -> (f64, f64) {
        (self.ci_lower_bound, self.ci_upper_bound)
    }
}

pub(crate) fn wald_z(ci_level: f64) -> f64 {
    Normal::new(0.0, 1.0).expect("unit normal").inverse_cdf(1.0 - 0.5 * (1.0 - ci_level))
}

fn check_ci_level(ci_level: f64) -> Result<()> {
    if !(ci_level > 0.0 && ci_level < 1.0) {
        return Err(invalid(format!("ci level must lie in (0,1), got {ci_level}")));
    }
    Ok(())
}

/// Per-unit evaluations of the uncentered influence function for one
/// (delta, gamma, side), with the fold each unit was evaluated in.
#[derive(Debug, Clone)]
pub struct IfValues {
    values: Vec<f64>,
    fold_of: Vec<usize>,
    k: usize,
}

impl IfValues {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn fold_of(&self) -> &[usize] {
        &self.fold_of
    }

    /// Cross-fitted estimate: the average of the K fold means.
    pub fn cross_fitted_mean(&self) -> f64 {
        let mut sums = vec![0.0; self.k];
        let mut counts = vec![0usize; self.k];
        for (&v, &f) in self.values.iter().zip(&self.fold_of) {
            sums[f] += v;
            counts[f] += 1;
        }
        let mut acc = 0.0;
        for (s, c) in sums.iter().zip(&counts) {
            acc += s / *c as f64;
        }
        acc / self.k as f64
    }

    /// Pooled standard deviation of the per-unit influence values.
    pub fn pooled_sd(&self) -> f64 {
        let n = self.values.len() as f64;
        let mean = self.values.iter().sum::<f64>() / n;
        let ss: f64 = self.values.iter().map(|v| (v - mean) * (v - mean)).sum();
        (ss / (n - 1.0)).sqrt()
    }
}

/// The uncentered influence function for one record: the tilted
/// outcome/bound mixture, the two tilted-score corrections, and the
/// propensity correction with squared denominator.
pub fn evaluate_if(
    record: &UnitRecord,
    eta: &FittedNuisanceSet,
    delta: f64,
    gamma: f64,
    side: BoundSide,
) -> Result<f64> {
    check_delta(delta)?;
    check_gamma(gamma)?;
    let x = record.covariates();
    let a = record.treatment_f64();
    let y = record.outcome();
    let pi = eta.propensity(x);
    let mu1 = eta.outcome_mean(1, x);
    let mu0 = eta.outcome_mean(0, x);
    let (th1, nu1) = eta.theta_nu(1, side, x);
    let (th0, nu0) = eta.theta_nu(0, side, x);
    for (v, name) in [
        (pi, "pi"),
        (mu1, "mu1"),
        (mu0, "mu0"),
        (th1, "theta1"),
        (th0, "theta0"),
        (nu1, "nu1"),
        (nu0, "nu0"),
    ] {
        if !v.is_finite() {
            return Err(Error::Numeric(format!("nuisance {name} evaluated to {v}")));
        }
    }
    let tilt = side.gamma_tilt(gamma);
    let denom = delta * pi + 1.0 - pi;
    let mixture =
        (delta * pi * (a * y + (1.0 - a) * th1) + (1.0 - pi) * ((1.0 - a) * y + a * th0)) / denom;
    let correction1 = delta * (1.0 - pi) * a / denom * f_theta(y, th1, tilt) / nu1;
    let correction0 = pi * (1.0 - a) / denom * f_theta(y, th0, tilt) / nu0;
    let propensity_term = delta * (a - pi) / (denom * denom)
        * (pi * mu1 + (1.0 - pi) * th1 - (1.0 - pi) * mu0 - pi * th0);
    let phi = mixture + correction1 + correction0 + propensity_term;
    if !phi.is_finite() {
        return Err(Error::Numeric("influence function evaluated to a non-finite value".into()));
    }
    Ok(phi)
}

/// Evaluate the influence function for every unit, each against the
/// nuisance set trained off its own fold.
pub fn influence_values(
    data: &Dataset,
    plan: &FoldPlan,
    etas: &[FittedNuisanceSet],
    delta: f64,
    gamma: f64,
    side: BoundSide,
) -> Result<IfValues> {
    let values: Vec<f64> = (0..data.n())
        .into_par_iter()
        .map(|i| evaluate_if(data.record(i), &etas[plan.fold_of(i)], delta, gamma, side))
        .collect::<Result<_>>()?;
    let fold_of = (0..data.n()).map(|i| plan.fold_of(i)).collect();
    Ok(IfValues { values, fold_of, k: plan.k() })
}

fn estimate_from_etas(
    data: &Dataset,
    plan: &FoldPlan,
    etas: &[FittedNuisanceSet],
    delta: f64,
    gamma: f64,
    ci_level: f64,
) -> Result<BoundEstimate> {
    let mut sides = [(0.0, 0.0); 2];
    for side in BoundSide::BOTH {
        let ifs = influence_values(data, plan, etas, delta, gamma, side)?;
        sides[side.index()] = (ifs.cross_fitted_mean(), ifs.pooled_sd());
    }
    Ok(BoundEstimate::from_sides(sides[0], sides[1], data.n(), ci_level))
}

/// Cross-fitted doubly-robust estimate of the effect bounds at one
/// (delta, gamma): nuisances fit per fold on the complementary folds, the
/// influence function averaged fold by fold, Wald limits per side.
pub fn estimate_bounds(
    data: &Dataset,
    spec: &LearnerSpec,
    k: usize,
    delta: f64,
    gamma: f64,
    ci_level: f64,
    seed: u64,
) -> Result<BoundEstimate> {
    check_delta(delta)?;
    check_gamma(gamma)?;
    check_ci_level(ci_level)?;
    let plan = make_fold_plan(data.n(), k, seed)?;
    let etas: Vec<FittedNuisanceSet> = (0..k)
        .into_par_iter()
        .map(|fold| {
            crate::nuisance::fit_nuisance_set(data, &plan, fold, gamma, spec)
                .map_err(|e| Error::Estimation(format!("fold {fold}: {e}")))
        })
        .collect::<Result<_>>()?;
    estimate_from_etas(data, &plan, &etas, delta, gamma, ci_level)
}

/// Plug-in estimate: the sample average of the identification functional at
/// the supplied nuisances, with no influence-function correction. The sigma
/// fields hold the integrand's sample standard deviation.
pub fn plugin_bounds(
    data: &Dataset,
    eta: &FittedNuisanceSet,
    delta: f64,
    ci_level: f64,
) -> Result<BoundEstimate> {
    check_delta(delta)?;
    check_ci_level(ci_level)?;
    let mut sides = [(0.0, 0.0); 2];
    for side in BoundSide::BOTH {
        let vals: Vec<f64> = data
            .records()
            .iter()
            .map(|r| plugin_integrand(r, eta, delta, side))
            .collect::<Result<_>>()?;
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        let ss: f64 = vals.iter().map(|v| (v - mean) * (v - mean)).sum();
        sides[side.index()] = (mean, (ss / (n - 1.0)).sqrt());
    }
    Ok(BoundEstimate::from_sides(sides[0], sides[1], data.n(), ci_level))
}

fn plugin_integrand(
    record: &UnitRecord,
    eta: &FittedNuisanceSet,
    delta: f64,
    side: BoundSide,
) -> Result<f64> {
    let x = record.covariates();
    let pi = eta.propensity(x);
    let w = crate::model::identification_weights(pi, delta)?;
    let v = w[0] * eta.outcome_mean(1, x)
        + w[1] * eta.theta(1, side, x)
        + w[2] * eta.outcome_mean(0, x)
        + w[3] * eta.theta(0, side, x);
    if !v.is_finite() {
        return Err(Error::Numeric("plug-in integrand evaluated to a non-finite value".into()));
    }
    Ok(v)
}

/// Doubly-robust estimate at externally supplied nuisances (no
/// cross-fitting): the sample mean of the influence function. Used when the
/// nuisances do not depend on the sample, as in the synthetic bias sweeps.
pub fn dr_bounds_at(
    data: &Dataset,
    eta: &FittedNuisanceSet,
    delta: f64,
    gamma: f64,
    ci_level: f64,
) -> Result<BoundEstimate> {
    check_ci_level(ci_level)?;
    let mut sides = [(0.0, 0.0); 2];
    for side in BoundSide::BOTH {
        let vals: Vec<f64> = data
            .records()
            .iter()
            .map(|r| evaluate_if(r, eta, delta, gamma, side))
            .collect::<Result<_>>()?;
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        let ss: f64 = vals.iter().map(|v| (v - mean) * (v - mean)).sum();
        sides[side.index()] = (mean, (ss / (n - 1.0)).sqrt());
    }
    Ok(BoundEstimate::from_sides(sides[0], sides[1], data.n(), ci_level))
}

/// Bound estimates over a (delta, gamma) grid plus the collapsed point
/// curve at gamma = 1.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IncrementalCurve {
    grid: ParamGrid,
    /// estimates[gi][di] for gammas()[gi], deltas()[di]
    estimates: Vec<Vec<BoundEstimate>>,
    /// collapsed estimate at gamma = 1 per delta
    point: Vec<BoundEstimate>,
}

impl IncrementalCurve {
    pub fn grid(&self) -> &ParamGrid {
        &self.grid
    }

    pub fn estimate(&self, gamma_idx: usize, delta_idx: usize) -> &BoundEstimate {
        &self.estimates[gamma_idx][delta_idx]
    }

    pub fn gamma_row(&self, gamma_idx: usize) -> &[BoundEstimate] {
        &self.estimates[gamma_idx]
    }

    /// The gamma = 1 point estimate at each delta.
    pub fn point(&self, delta_idx: usize) -> &BoundEstimate {
        &self.point[delta_idx]
    }
}

/// One cross-fitted bound estimate per grid point. The propensity and
/// outcome fits are shared across the whole grid; the conditional-bound
/// fits are shared across deltas within each gamma, which is exact because
/// delta never enters them.
pub fn curve(
    data: &Dataset,
    spec: &LearnerSpec,
    grid: &ParamGrid,
    k: usize,
    ci_level: f64,
    seed: u64,
) -> Result<IncrementalCurve> {
    check_ci_level(ci_level)?;
    let plan = make_fold_plan(data.n(), k, seed)?;
    let shared: Vec<_> = (0..k)
        .into_par_iter()
        .map(|fold| fit_pi_mu(data, &plan, fold, spec))
        .collect::<Result<_>>()?;

    let curve_at = |gamma: f64| -> Result<Vec<BoundEstimate>> {
        let etas: Vec<FittedNuisanceSet> = (0..k)
            .into_par_iter()
            .map(|fold| {
                let (pi, mu) = shared[fold].clone();
                let fields = fit_bound_pairs(data, &plan, fold, gamma, spec)?;
                Ok(FittedNuisanceSet::from_parts(
                    pi,
                    mu,
                    fields,
                    Provenance::Learned { fold, spec: *spec },
                ))
            })
            .collect::<Result<_>>()?;
        grid.deltas()
            .iter()
            .map(|&delta| estimate_from_etas(data, &plan, &etas, delta, gamma, ci_level))
            .collect()
    };

    let estimates: Vec<Vec<BoundEstimate>> =
        grid.gammas().iter().map(|&g| curve_at(g)).collect::<Result<_>>()?;
    let point = curve_at(1.0)?;
    Ok(IncrementalCurve { grid: grid.clone(), estimates, point })
}

/// Result of the robustness search over the confounding level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum RobustnessOutcome {
    /// Smallest gamma at which one constant effect value lies inside the
    /// bounds at every delta, with that witnessing value.
    Crossing { gamma: f64, witness: f64 },
    /// No gamma in the supplied grid admits a horizontal line through the
    /// bounds: the effect is robust beyond the grid.
    RobustBeyondGrid,
}

/// Robustness threshold for the point bounds and for the outer Wald limits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobustnessReport {
    pub point: RobustnessOutcome,
    pub ci: RobustnessOutcome,
}

/// Smallest gamma on (and between) the grid values whose per-delta bounds
/// share a common value. Feasibility is monotone in gamma because the
/// bounds nest, so the grid scan is refined by bisection between the last
/// infeasible and first feasible grid points.
pub fn robustness_gamma<F>(
    gamma_grid: &[f64],
    refine_steps: usize,
    mut curve_at: F,
) -> Result<RobustnessReport>
where
    F: FnMut(f64) -> Result<Vec<BoundEstimate>>,
{
    if gamma_grid.is_empty() {
        return Err(invalid("gamma grid must be nonempty"));
    }
    for g in gamma_grid {
        check_gamma(*g)?;
    }
    if !gamma_grid.windows(2).all(|w| w[0] < w[1]) {
        return Err(invalid("gamma grid must be strictly increasing"));
    }

    fn point_hull(ests: &[BoundEstimate]) -> (f64, f64) {
        let lo = ests.iter().map(|e| e.psi_lower).fold(f64::NEG_INFINITY, f64::max);
        let hi = ests.iter().map(|e| e.psi_upper).fold(f64::INFINITY, f64::min);
        (lo, hi)
    }
    fn ci_hull(ests: &[BoundEstimate]) -> (f64, f64) {
        let lo = ests.iter().map(|e| e.ci_lower_bound).fold(f64::NEG_INFINITY, f64::max);
        let hi = ests.iter().map(|e| e.ci_upper_bound).fold(f64::INFINITY, f64::min);
        (lo, hi)
    }

    let mut point_first: Option<(usize, (f64, f64))> = None;
    let mut ci_first: Option<(usize, (f64, f64))> = None;
    for (i, &g) in gamma_grid.iter().enumerate() {
        let ests = curve_at(g)?;
        if point_first.is_none() {
            let h = point_hull(&ests);
            if h.0 <= h.1 {
                point_first = Some((i, h));
            }
        }
        if ci_first.is_none() {
            let h = ci_hull(&ests);
            if h.0 <= h.1 {
                ci_first = Some((i, h));
            }
        }
        if point_first.is_some() && ci_first.is_some() {
            break;
        }
    }

    let mut refine = |first: Option<(usize, (f64, f64))>,
                      hull: fn(&[BoundEstimate]) -> (f64, f64)|
     -> Result<RobustnessOutcome> {
        let Some((idx, mut feasible_hull)) = first else {
            return Ok(RobustnessOutcome::RobustBeyondGrid);
        };
        let mut hi = gamma_grid[idx];
        if idx > 0 && refine_steps > 0 {
            let mut lo = gamma_grid[idx - 1];
            for _ in 0..refine_steps {
                let mid = 0.5 * (lo + hi);
                let h = hull(&curve_at(mid)?);
                if h.0 <= h.1 {
                    hi = mid;
                    feasible_hull = h;
                } else {
                    lo = mid;
                }
            }
        }
        let (l, u) = feasible_hull;
        Ok(RobustnessOutcome::Crossing { gamma: hi, witness: 0.5 * (l + u) })
    };

    let point = refine(point_first, point_hull)?;
    let ci = refine(ci_first, ci_hull)?;
    Ok(RobustnessReport { point, ci })
}

/// Sample means of the pointwise envelope (min_a mu_a^-, max_a mu_a^+)
/// assembled from the supplied nuisances. The envelope does not depend on
/// delta; every plug-in bound must lie inside it.
pub fn mixture_envelope(data: &Dataset, eta: &FittedNuisanceSet) -> Result<(f64, f64)> {
    let mut lo_acc = 0.0;
    let mut hi_acc = 0.0;
    for r in data.records() {
        let x = r.covariates();
        let pi = eta.propensity(x);
        let mu1 = eta.outcome_mean(1, x);
        let mu0 = eta.outcome_mean(0, x);
        let m1_lo = pi * mu1 + (1.0 - pi) * eta.theta(1, BoundSide::Lower, x);
        let m0_lo = (1.0 - pi) * mu0 + pi * eta.theta(0, BoundSide::Lower, x);
        let m1_hi = pi * mu1 + (1.0 - pi) * eta.theta(1, BoundSide::Upper, x);
        let m0_hi = (1.0 - pi) * mu0 + pi * eta.theta(0, BoundSide::Upper, x);
        if ![m1_lo, m0_lo, m1_hi, m0_hi].iter().all(|v| v.is_finite()) {
            return Err(Error::Numeric("envelope term evaluated to a non-finite value".into()));
        }
        lo_acc += m1_lo.min(m0_lo);
        hi_acc += m1_hi.max(m0_hi);
    }
    let n = data.n() as f64;
    Ok((lo_acc / n, hi_acc / n))
}

/// Plug-in sample mean of the incremental-effect derivative
/// pi (1 - pi) (mu1 - mu0) / (delta pi + 1 - pi)^2.
pub fn derivative_at_delta(eta: &FittedNuisanceSet, data: &Dataset, delta: f64) -> Result<f64> {
    check_delta(delta)?;
    let mut acc = 0.0;
    for r in data.records() {
        let x = r.covariates();
        let pi = eta.propensity(x);
        let denom = delta * pi + 1.0 - pi;
        acc +=
            pi * (1.0 - pi) * (eta.outcome_mean(1, x) - eta.outcome_mean(0, x)) / (denom * denom);
    }
    Ok(acc / data.n() as f64)
}

/// A labeled curve for one covariate subgroup.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SubgroupCurve {
    pub label: String,
    pub n: usize,
    pub curve: IncrementalCurve,
}

/// Per-group curves plus warnings for groups skipped as degenerate.
#[derive(Debug, Clone)]
pub struct SubgroupResult {
    pub curves: Vec<SubgroupCurve>,
    pub warnings: Vec<String>,
}

/// Apply `curve` within each covariate group. `assignment[i]` names the
/// group of record `i`; `labels` indexes the groups.
#[allow(clippy::too_many_arguments)]
pub fn subgroup_curves(
    data: &Dataset,
    labels: &[String],
    assignment: &[usize],
    spec: &LearnerSpec,
    grid: &ParamGrid,
    k: usize,
    ci_level: f64,
    seed: u64,
) -> Result<SubgroupResult> {
    if assignment.len() != data.n() {
        return Err(invalid("group assignment length must match the dataset"));
    }
    if assignment.iter().any(|&g| g >= labels.len()) {
        return Err(invalid("group assignment references an unknown label"));
    }
    let mut curves = Vec::new();
    let mut warnings = Vec::new();
    for (g, label) in labels.iter().enumerate() {
        let idx: Vec<usize> = (0..data.n()).filter(|&i| assignment[i] == g).collect();
        if idx.len() < 2 * k {
            warnings.push(format!("group {label}: skipped, only {} units", idx.len()));
            continue;
        }
        let sub = data.subset(&idx)?;
        if sub.arm_indices(0).is_empty() || sub.arm_indices(1).is_empty() {
            warnings.push(format!("group {label}: skipped, single treatment arm"));
            continue;
        }
        match curve(&sub, spec, grid, k, ci_level, seed) {
            Ok(c) => curves.push(SubgroupCurve { label: label.clone(), n: idx.len(), curve: c }),
            Err(e) => warnings.push(format!("group {label}: skipped, {e}")),
        }
    }
    Ok(SubgroupResult { curves, warnings })
}

/// Pointwise confidence-interval overlap between two subgroup curves.
#[derive(Debug, Clone, Serialize)]
pub struct OverlapRow {
    pub group_a: String,
    pub group_b: String,
    pub delta: f64,
    pub gamma: f64,
    pub overlaps: bool,
}

pub fn ci_overlap_report(curves: &[SubgroupCurve]) -> Vec<OverlapRow> {
    let mut rows = Vec::new();
    for i in 0..curves.len() {
        for j in i + 1..curves.len() {
            let (a, b) = (&curves[i], &curves[j]);
            let grid = a.curve.grid();
            for (gi, &gamma) in grid.gammas().iter().enumerate() {
                for (di, &delta) in grid.deltas().iter().enumerate() {
                    let ea = a.curve.estimate(gi, di);
                    let eb = b.curve.estimate(gi, di);
                    let overlaps = ea.ci_lower_bound <= eb.ci_upper_bound
                        && eb.ci_lower_bound <= ea.ci_upper_bound;
                    rows.push(OverlapRow {
                        group_a: a.label.clone(),
                        group_b: b.label.clone(),
                        delta,
                        gamma,
                        overlaps,
                    });
                }
            }
        }
    }
    rows
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nuisance::{analytic_nuisances, BoundPairFn, FieldFn};
    use crate::oracle::{expit, AnalyticDgp, OracleTruth};
    use crate::sim::generate;
    use std::sync::Arc;

    /// Nuisance set built from constant closures, for scalar checks.
    fn constant_eta(
        pi: f64,
        mu: [f64; 2],
        theta: [[f64; 2]; 2],
        nu: [[f64; 2]; 2],
    ) -> FittedNuisanceSet {
        let field = |v: f64| -> FieldFn { Arc::new(move |_| v) };
        let pair =
            |arm: usize, side: usize, th: [[f64; 2]; 2], nu: [[f64; 2]; 2]| -> BoundPairFn {
                Arc::new(move |_| (th[arm][side], nu[arm][side]))
            };
        FittedNuisanceSet::from_parts(
            field(pi),
            [field(mu[0]), field(mu[1])],
            [
                [pair(0, 0, theta, nu), pair(0, 1, theta, nu)],
                [pair(1, 0, theta, nu), pair(1, 1, theta, nu)],
            ],
            Provenance::Analytic { gamma: 1.0 },
        )
    }

    #[test]
    fn collapse_identity_returns_outcome_exactly() {
        // theta == mu, nu == 1, delta = gamma = 1: phi == Y for any pi
        for (i, &(pi, mu0, mu1, a, y)) in [
            (0.5, 0.3, 1.7, 1u8, 2.0),
            (0.123, -4.0, 2.5, 0u8, -1.25),
            (0.999, 0.0, 0.0, 1u8, 17.0),
            (0.02, 5.0, -5.0, 0u8, 0.5),
        ]
        .iter()
        .enumerate()
        {
            let eta =
                constant_eta(pi, [mu0, mu1], [[mu0, mu0], [mu1, mu1]], [[1.0, 1.0], [1.0, 1.0]]);
            let r = UnitRecord::new(vec![0.0], a, y).unwrap();
            for side in BoundSide::BOTH {
                let phi = evaluate_if(&r, &eta, 1.0, 1.0, side).unwrap();
                assert!((phi - y).abs() <= 1e-12, "case {i}: phi {phi} != y {y}");
            }
        }
    }

    #[test]
    fn hand_evaluated_influence_value() {
        // independent scalar evaluation: mixture 43/30, correction 2/3,
        // propensity term 2/9, total 209/90
        let eta =
            constant_eta(0.5, [0.5, 1.0], [[0.3, 0.0], [0.8, 0.0]], [[1.3, 1.0], [1.2, 1.0]]);
        let r = UnitRecord::new(vec![0.0], 1, 2.0).unwrap();
        let phi = evaluate_if(&r, &eta, 2.0, 2.0, BoundSide::Lower).unwrap();
        assert!((phi - 209.0 / 90.0).abs() < 1e-14, "phi {phi}");
    }

    #[test]
    fn degenerate_propensity_drops_treated_correction() {
        let eta =
            constant_eta(1.0, [0.0, 1.0], [[0.1, 0.2], [0.9, 1.1]], [[1.2, 0.9], [1.4, 0.8]]);
        let r = UnitRecord::new(vec![0.0], 1, 3.0).unwrap();
        // with pi = 1 the treated-score correction carries a (1 - pi) factor
        let phi = evaluate_if(&r, &eta, 2.0, 2.0, BoundSide::Lower).unwrap();
        let denom = 2.0;
        let mixture = 2.0 * 3.0 / denom;
        assert!((phi - mixture).abs() < 1e-14, "phi {phi}");
    }

    #[test]
    fn estimate_bounds_collapses_at_gamma_one() {
        let dgp = AnalyticDgp::standard();
        let data = generate(&dgp, 400, 5).unwrap();
        let est = estimate_bounds(&data, &LearnerSpec::default(), 5, 1.0, 1.0, 0.95, 11).unwrap();
        assert_eq!(est.psi_lower, est.psi_upper, "bounds must collapse at gamma 1");
        assert!(est.ci_lower_bound < est.psi_lower && est.ci_upper_bound > est.psi_upper);
    }

    #[test]
    fn estimate_bounds_near_oracle() {
        let dgp = AnalyticDgp::standard();
        let data = generate(&dgp, 2000, 7).unwrap();
        let est = estimate_bounds(&data, &LearnerSpec::default(), 10, 1.0, 1.0, 0.95, 3).unwrap();
        let truth = 0.8294426505;
        let se = est.sigma_lower / (est.n as f64).sqrt();
        assert!(
            (est.psi_lower - truth).abs() < 3.0 * se,
            "psi {} truth {truth} se {se}",
            est.psi_lower
        );

        let est = estimate_bounds(&data, &LearnerSpec::default(), 10, 2.0, 2.0, 0.95, 3).unwrap();
        let t = OracleTruth::new(dgp, 2.0).unwrap();
        let (lo, hi) = t.bounds(2.0).unwrap();
        let se_lo = est.sigma_lower / (est.n as f64).sqrt();
        let se_hi = est.sigma_upper / (est.n as f64).sqrt();
        assert!((est.psi_lower - lo).abs() < 3.0 * se_lo, "{} vs {lo}", est.psi_lower);
        assert!((est.psi_upper - hi).abs() < 3.0 * se_hi, "{} vs {hi}", est.psi_upper);
        assert!(est.psi_lower <= est.psi_upper);
    }

    #[test]
    fn plugin_at_exact_truth_matches_oracle() {
        let dgp = AnalyticDgp::standard();
        let data = generate(&dgp, 4000, 9).unwrap();
        let eta = analytic_nuisances(dgp, 2.0).unwrap();
        let est = plugin_bounds(&data, &eta, 2.0, 0.95).unwrap();
        let (lo, hi) = OracleTruth::new(dgp, 2.0).unwrap().bounds(2.0).unwrap();
        // a sample mean of the true integrand: close at n = 4000
        assert!((est.psi_lower - lo).abs() < 0.02, "{} vs {lo}", est.psi_lower);
        assert!((est.psi_upper - hi).abs() < 0.02, "{} vs {hi}", est.psi_upper);
    }

    #[test]
    fn plugin_nests_exactly_in_gamma() {
        let dgp = AnalyticDgp::standard();
        let data = generate(&dgp, 500, 13).unwrap();
        let mut prev: Option<BoundEstimate> = None;
        for gamma in [1.0, 1.5, 2.0, 3.0] {
            let eta = analytic_nuisances(dgp, gamma).unwrap();
            let est = plugin_bounds(&data, &eta, 2.0, 0.95).unwrap();
            if let Some(p) = prev {
                assert!(est.psi_lower <= p.psi_lower + 1e-9);
                assert!(est.psi_upper >= p.psi_upper - 1e-9);
            }
            prev = Some(est);
        }
    }

    #[test]
    fn dr_nesting_in_gamma_on_fitted_nuisances() {
        let dgp = AnalyticDgp::standard();
        let data = generate(&dgp, 2000, 31).unwrap();
        let mut prev: Option<BoundEstimate> = None;
        for gamma in [1.5, 2.0, 3.0] {
            let est =
                estimate_bounds(&data, &LearnerSpec::default(), 5, 2.0, gamma, 0.95, 17).unwrap();
            if let Some(p) = prev {
                assert!(est.psi_lower <= p.psi_lower + 1e-9, "lower fails to nest at {gamma}");
                assert!(est.psi_upper >= p.psi_upper - 1e-9, "upper fails to nest at {gamma}");
            }
            prev = Some(est);
        }
    }

    #[test]
    fn curve_shapes_and_monotonicity() {
        let dgp = AnalyticDgp::standard();
        let data = generate(&dgp, 1200, 23).unwrap();
        let grid = ParamGrid::new(vec![0.5, 1.0, 2.0], vec![1.0, 2.0]).unwrap();
        let c = curve(&data, &LearnerSpec::default(), &grid, 4, 0.95, 2).unwrap();
        // gamma = 1 row collapses and matches the point curve
        for di in 0..3 {
            let e = c.estimate(0, di);
            assert_eq!(e.psi_lower, e.psi_upper);
            assert_eq!(c.point(di).psi_lower, e.psi_lower);
        }
        // mu1 > mu0 pointwise: the point curve increases in delta
        assert!(c.point(0).psi_lower < c.point(1).psi_lower);
        assert!(c.point(1).psi_lower < c.point(2).psi_lower);
        // nesting: the gamma 2 interval contains the gamma 1 point
        for di in 0..3 {
            assert!(c.estimate(1, di).psi_lower <= c.estimate(0, di).psi_lower + 1e-9);
            assert!(c.estimate(1, di).psi_upper >= c.estimate(0, di).psi_upper - 1e-9);
        }
    }

    fn synthetic_curves(
        gamma: f64,
        deltas: &[f64],
        cross_gamma: f64,
        witness: f64,
    ) -> Vec<BoundEstimate> {
        // bounds witness +/- a(gamma), drifted by b(delta) spanning one unit:
        // a horizontal line fits iff gamma >= cross_gamma
        let range = 1.0;
        let a = 0.5 * range * gamma / cross_gamma;
        let (dmin, dmax) = (deltas[0], *deltas.last().unwrap());
        deltas
            .iter()
            .map(|&d| {
                let b = range * ((d - dmin) / (dmax - dmin) - 0.5);
                BoundEstimate {
                    psi_lower: witness - a - b,
                    psi_upper: witness + a - b,
                    sigma_lower: 0.0,
                    sigma_upper: 0.0,
                    n: 1,
                    ci_level: 0.95,
                    ci_lower_bound: witness - a - b - 0.01,
                    ci_upper_bound: witness + a - b + 0.01,
                }
            })
            .collect()
    }

    #[test]
    fn robustness_gamma_finds_known_crossing() {
        let deltas: Vec<f64> = (0..11).map(|i| 0.5 + 0.15 * i as f64).collect();
        let report = robustness_gamma(&[1.0, 2.0, 3.0, 4.0], 30, |g| {
            Ok(synthetic_curves(g, &deltas, 3.0, 0.0554))
        })
        .unwrap();
        match report.point {
            RobustnessOutcome::Crossing { gamma, witness } => {
                assert!((gamma - 3.0).abs() < 1e-6, "gamma {gamma}");
                assert!((witness - 0.0554).abs() < 1e-4, "witness {witness}");
            }
            other => panic!("expected crossing, got {other:?}"),
        }
        // the CI variant crosses slightly earlier thanks to the CI padding
        match report.ci {
            RobustnessOutcome::Crossing { gamma, .. } => assert!(gamma < 3.0),
            other => panic!("expected CI crossing, got {other:?}"),
        }
    }

    #[test]
    fn robustness_gamma_beyond_grid() {
        let deltas: Vec<f64> = (0..5).map(|i| 0.5 + 0.5 * i as f64).collect();
        let report =
            robustness_gamma(&[1.0, 1.2], 10, |g| Ok(synthetic_curves(g, &deltas, 50.0, 0.0)))
                .unwrap();
        assert_eq!(report.point, RobustnessOutcome::RobustBeyondGrid);
        assert_eq!(report.ci, RobustnessOutcome::RobustBeyondGrid);
    }

    #[test]
    fn robustness_gamma_nonconstant_point_curve_needs_gamma_above_one() {
        // at gamma 1 the interval is a point that moves with delta
        let deltas: Vec<f64> = (0..6).map(|i| 0.4 + 0.4 * i as f64).collect();
        let report = robustness_gamma(&[1.0, 5.0], 0, |g| {
            let mut ests = synthetic_curves(g, &deltas, 4.0, 0.2);
            if g == 1.0 {
                for e in &mut ests {
                    let mid = 0.5 * (e.psi_lower + e.psi_upper);
                    e.psi_lower = mid;
                    e.psi_upper = mid;
                }
            }
            Ok(ests)
        })
        .unwrap();
        match report.point {
            RobustnessOutcome::Crossing { gamma, .. } => assert_eq!(gamma, 5.0),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn envelope_contains_plugin_for_all_deltas() {
        let dgp = AnalyticDgp::standard();
        let data = generate(&dgp, 800, 3).unwrap();
        let eta = analytic_nuisances(dgp, 2.0).unwrap();
        let (lo, hi) = mixture_envelope(&data, &eta).unwrap();
        for delta in [0.1, 0.5, 1.0, 2.0, 10.0] {
            let est = plugin_bounds(&data, &eta, delta, 0.95).unwrap();
            assert!(lo <= est.psi_lower + 1e-12 && est.psi_upper <= hi + 1e-12);
        }
    }

    #[test]
    fn envelope_at_gamma_one_is_min_max_of_mu() {
        let dgp = AnalyticDgp::standard();
        let data = generate(&dgp, 300, 4).unwrap();
        let eta = analytic_nuisances(dgp, 1.0).unwrap();
        let (lo, hi) = mixture_envelope(&data, &eta).unwrap();
        let n = data.n() as f64;
        let want_lo = data
            .records()
            .iter()
            .map(|r| {
                let x = r.covariates()[0];
                (2.0 * x).min(x)
            })
            .sum::<f64>()
            / n;
        let want_hi = data
            .records()
            .iter()
            .map(|r| {
                let x = r.covariates()[0];
                (2.0 * x).max(x)
            })
            .sum::<f64>()
            / n;
        assert!((lo - want_lo).abs() < 1e-12);
        assert!((hi - want_hi).abs() < 1e-12);
    }

    #[test]
    fn envelope_degenerates_on_constant_covariate() {
        // every unit at the same x: the envelope is the conditional min/max
        let records: Vec<UnitRecord> = (0..10)
            .map(|i| UnitRecord::new(vec![0.25], (i % 2) as u8, i as f64).unwrap())
            .collect();
        let data = Dataset::new(records).unwrap();
        let dgp = AnalyticDgp::standard();
        let eta = analytic_nuisances(dgp, 2.0).unwrap();
        let (lo, hi) = mixture_envelope(&data, &eta).unwrap();
        let x = [0.25];
        let pi = eta.propensity(&x);
        let m1_lo = pi * eta.outcome_mean(1, &x) + (1.0 - pi) * eta.theta(1, BoundSide::Lower, &x);
        let m0_lo = (1.0 - pi) * eta.outcome_mean(0, &x) + pi * eta.theta(0, BoundSide::Lower, &x);
        let m1_hi = pi * eta.outcome_mean(1, &x) + (1.0 - pi) * eta.theta(1, BoundSide::Upper, &x);
        let m0_hi = (1.0 - pi) * eta.outcome_mean(0, &x) + pi * eta.theta(0, BoundSide::Upper, &x);
        assert!((lo - m1_lo.min(m0_lo)).abs() < 1e-12);
        assert!((hi - m1_hi.max(m0_hi)).abs() < 1e-12);
    }

    #[test]
    fn derivative_examples() {
        let dgp = AnalyticDgp::standard();
        let data = generate(&dgp, 3000, 6).unwrap();
        let eta = analytic_nuisances(dgp, 1.0).unwrap();
        // identical outcome regressions: derivative is exactly zero
        let flat = constant_eta(0.4, [0.7, 0.7], [[0.7; 2]; 2], [[1.0; 2]; 2]);
        assert_eq!(derivative_at_delta(&flat, &data, 1.0).unwrap(), 0.0);
        // sample mean near the quadrature value at delta = 1
        let t = OracleTruth::new(dgp, 1.0).unwrap();
        let want = t.dpsi_ddelta(1.0).unwrap();
        let got = derivative_at_delta(&eta, &data, 1.0).unwrap();
        assert!((got - want).abs() < 0.01, "{got} vs {want}");
        // large delta kills the derivative
        assert!(derivative_at_delta(&eta, &data, 1e9).unwrap() < 1e-8);
    }

    #[test]
    fn subgroups_split_by_median_order_as_expected() {
        let dgp = AnalyticDgp::standard();
        let data = generate(&dgp, 1600, 8).unwrap();
        let assignment: Vec<usize> =
            data.records().iter().map(|r| usize::from(r.covariates()[0] > 0.5)).collect();
        let labels = vec!["low".to_string(), "high".to_string()];
        let grid = ParamGrid::new(vec![1.0, 2.0], vec![1.0]).unwrap();
        let res = subgroup_curves(
            &data,
            &labels,
            &assignment,
            &LearnerSpec::default(),
            &grid,
            4,
            0.95,
            5,
        )
        .unwrap();
        assert_eq!(res.curves.len(), 2);
        assert!(res.warnings.is_empty());
        // higher-x group has the larger effect (mu_a increasing in x)
        let low = &res.curves[0];
        let high = &res.curves[1];
        assert!(high.curve.point(0).psi_lower > low.curve.point(0).psi_lower);
        let overlap = ci_overlap_report(&res.curves);
        assert_eq!(overlap.len(), 2);
    }

    #[test]
    fn degenerate_subgroup_skipped_with_warning() {
        let dgp = AnalyticDgp::standard();
        let data = generate(&dgp, 300, 8).unwrap();
        // group 1 holds a single unit
        let mut assignment = vec![0usize; data.n()];
        assignment[0] = 1;
        let labels = vec!["main".to_string(), "tiny".to_string()];
        let grid = ParamGrid::new(vec![1.0], vec![1.0]).unwrap();
        let res = subgroup_curves(
            &data,
            &labels,
            &assignment,
            &LearnerSpec::default(),
            &grid,
            3,
            0.95,
            5,
        )
        .unwrap();
        assert_eq!(res.curves.len(), 1);
        assert_eq!(res.warnings.len(), 1);
        assert!(res.warnings[0].contains("tiny"));
    }

    #[test]
    fn single_group_matches_plain_curve() {
        let dgp = AnalyticDgp::standard();
        let data = generate(&dgp, 400, 2).unwrap();
        let labels = vec!["all".to_string()];
        let assignment = vec![0usize; data.n()];
        let grid = ParamGrid::new(vec![1.0, 3.0], vec![2.0]).unwrap();
        let res = subgroup_curves(
            &data,
            &labels,
            &assignment,
            &LearnerSpec::default(),
            &grid,
            4,
            0.95,
            9,
        )
        .unwrap();
        let direct = curve(&data, &LearnerSpec::default(), &grid, 4, 0.95, 9).unwrap();
        assert_eq!(res.curves[0].curve.estimate(0, 1).psi_lower, direct.estimate(0, 1).psi_lower);
    }

    #[test]
    fn wald_z_value() {
        assert!((wald_z(0.95) - 1.959964).abs() < 1e-5);
    }

    #[test]
    fn expit_reexport_sanity() {
        assert!((expit(0.0) - 0.5).abs() < 1e-15);
    }
}
