//! Propensity and outcome-regression learners, fold planning, and assembly
//! of the per-fold nuisance set used by the cross-fitted estimator.
//!
//! The fold plan nests a half split inside every training set: the first
//! half fits the conditional bounds, the second half fits their nu weights
//! against the already-fit bounds. Synthetic "noised truth" nuisances for
//! bias-rate sweeps live here too.

use crate::bounds::{BoundMethod, BoundSide, ConditionalBoundField};
use crate::error::{invalid, Error, Result};
use crate::kernel::{local_weights, rule_of_thumb_bandwidths, Locality};
use crate::linalg::{basis_row, weighted_least_squares};
use crate::model::{check_gamma, Dataset};
use crate::oracle::{expit, logit, AnalyticDgp, OracleTruth};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::sync::Arc;

/// Deterministic K-fold assignment with a nested half split per fold.
#[derive(Debug, Clone)]
pub struct FoldPlan {
    n: usize,
    k: usize,
    fold_of: Vec<usize>,
    inner_half_of: Vec<u8>,
}

impl FoldPlan {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn fold_of(&self, unit: usize) -> usize {
        self.fold_of[unit]
    }

    pub fn inner_half_of(&self, unit: usize) -> u8 {
        self.inner_half_of[unit]
    }

    /// Units in fold `k`.
    pub fn fold_indices(&self, k: usize) -> Vec<usize> {
        (0..self.n).filter(|&i| self.fold_of[i] == k).collect()
    }

    /// Units outside fold `k`, i.e. the training set for that fold.
    pub fn train_indices(&self, k: usize) -> Vec<usize> {
        (0..self.n).filter(|&i| self.fold_of[i] != k).collect()
    }

    /// The training half (1 or 2) of the `-k` set.
    pub fn train_half_indices(&self, k: usize, half: u8) -> Vec<usize> {
        (0..self.n)
            .filter(|&i| self.fold_of[i] != k && self.inner_half_of[i] == half)
            .collect()
    }
}

/// Random balanced fold plan: fold sizes differ by at most one, halves
/// alternate within each fold, everything reproducible from the seed.
pub fn make_fold_plan(n: usize, k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 2 || k > n {
        return Err(invalid(format!("fold count must satisfy 2 <= K <= n, got K={k}, n={n}")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    // Fisher-Yates
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        order.swap(i, j);
    }
    let mut fold_of = vec![0usize; n];
    let mut inner_half_of = vec![0u8; n];
    let mut per_fold_count = vec![0usize; k];
    for (pos, &unit) in order.iter().enumerate() {
        let fold = pos % k;
        fold_of[unit] = fold;
        // Alternate halves within the fold; stagger the starting half across
        // folds so odd-size folds cancel rather than accumulate.
        inner_half_of[unit] = 1 + ((per_fold_count[fold] + fold) % 2) as u8;
        per_fold_count[fold] += 1;
    }
    Ok(FoldPlan { n, k, fold_of, inner_half_of })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PropensityMethod {
    /// Logistic regression, linear in covariates, via IRLS with a small
    /// ridge penalty as a separation guard.
    LogisticIrls,
    /// Nadaraya-Watson regression of the treatment indicator.
    LocalKernel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeMethod {
    Linear,
    LocalKernel,
}

/// Which learners realize each nuisance, plus their hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LearnerSpec {
    pub propensity: PropensityMethod,
    pub outcome: OutcomeMethod,
    pub bound: BoundMethod,
    pub locality: Locality,
    /// Ridge penalty on the logistic fit (separation guard).
    pub ridge: f64,
    /// Propensity evaluations are clamped to [clamp, 1 - clamp].
    pub propensity_clamp: f64,
}

impl Default for LearnerSpec {
    fn default() -> Self {
        Self {
            propensity: PropensityMethod::LogisticIrls,
            outcome: OutcomeMethod::Linear,
            bound: BoundMethod::AsymmetricBasis,
            locality: Locality::default(),
            ridge: 1e-6,
            propensity_clamp: 1e-12,
        }
    }
}

impl LearnerSpec {
    pub fn validate(&self) -> Result<()> {
        self.locality.validate()?;
        if !(self.ridge.is_finite() && self.ridge > 0.0) {
            return Err(invalid(format!("ridge must be positive, got {}", self.ridge)));
        }
        if !(self.propensity_clamp > 0.0 && self.propensity_clamp < 0.5) {
            return Err(invalid(format!(
                "propensity clamp must lie in (0, 0.5), got {}",
                self.propensity_clamp
            )));
        }
        Ok(())
    }

    /// All-local-kernel variant.
    pub fn kernel() -> Self {
        Self {
            propensity: PropensityMethod::LocalKernel,
            outcome: OutcomeMethod::LocalKernel,
            bound: BoundMethod::LocalKernel,
            ..Self::default()
        }
    }
}

/// An evaluator over the covariate domain.
pub type FieldFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
/// Joint (theta, nu) evaluator for one (arm, side).
pub type BoundPairFn = Arc<dyn Fn(&[f64]) -> (f64, f64) + Send + Sync>;

/// Where a nuisance set came from.
#[derive(Debug, Clone, PartialEq)]
pub enum Provenance {
    Learned { fold: usize, spec: LearnerSpec },
    Analytic { gamma: f64 },
    Noised { alpha: f64, n: usize, gamma: f64, seed: u64 },
}

/// The full nuisance vector for one training set: propensity, per-arm
/// outcome regressions, and per-(arm, side) conditional bound fields.
#[derive(Clone)]
pub struct FittedNuisanceSet {
    propensity: FieldFn,
    outcome: [FieldFn; 2],
    bound_fields: [[BoundPairFn; 2]; 2],
    provenance: Provenance,
}

impl std::fmt::Debug for FittedNuisanceSet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FittedNuisanceSet").field("provenance", &self.provenance).finish()
    }
}

impl FittedNuisanceSet {
    pub fn from_parts(
        propensity: FieldFn,
        outcome: [FieldFn; 2],
        bound_fields: [[BoundPairFn; 2]; 2],
        provenance: Provenance,
    ) -> Self {
        Self { propensity, outcome, bound_fields, provenance }
    }

    pub fn propensity(&self, x: &[f64]) -> f64 {
        (self.propensity)(x)
    }

    pub fn outcome_mean(&self, arm: u8, x: &[f64]) -> f64 {
        (self.outcome[arm as usize])(x)
    }

    pub fn theta_nu(&self, arm: u8, side: BoundSide, x: &[f64]) -> (f64, f64) {
        (self.bound_fields[arm as usize][side.index()])(x)
    }

    pub fn theta(&self, arm: u8, side: BoundSide, x: &[f64]) -> f64 {
        self.theta_nu(arm, side, x).0
    }

    pub fn nu(&self, arm: u8, side: BoundSide, x: &[f64]) -> f64 {
        self.theta_nu(arm, side, x).1
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }
}

/// Fit the propensity evaluator on the training rows.
pub fn fit_propensity(train: &Dataset, spec: &LearnerSpec) -> Result<FieldFn> {
    spec.validate()?;
    let n1 = train.arm_indices(1).len();
    if n1 == 0 || n1 == train.n() {
        return Err(Error::Estimation("propensity fit needs both treatment arms".into()));
    }
    let clamp = spec.propensity_clamp;
    match spec.propensity {
        PropensityMethod::LogisticIrls => {
            let rows: Vec<Vec<f64>> = train.records().iter().map(|r| basis_row(r.covariates())).collect();
            let a: Vec<f64> = train.records().iter().map(|r| r.treatment_f64()).collect();
            let beta = fit_logistic_irls(&rows, &a, spec.ridge)?;
            Ok(Arc::new(move |x: &[f64]| {
                let row = basis_row(x);
                let eta: f64 = beta.iter().zip(&row).map(|(b, v)| b * v).sum();
                expit(eta).clamp(clamp, 1.0 - clamp)
            }))
        }
        PropensityMethod::LocalKernel => {
            let scale = kernel_scale(spec.locality);
            let xs: Vec<Vec<f64>> = train.records().iter().map(|r| r.covariates().to_vec()).collect();
            let a: Vec<f64> = train.records().iter().map(|r| r.treatment_f64()).collect();
            let refs: Vec<&[f64]> = xs.iter().map(|v| v.as_slice()).collect();
            let bw = rule_of_thumb_bandwidths(&refs, scale);
            let locality = spec.locality;
            Ok(Arc::new(move |x: &[f64]| {
                let refs: Vec<&[f64]> = xs.iter().map(|v| v.as_slice()).collect();
                let w = local_weights(&refs, &bw, locality, x);
                let total: f64 = w.iter().sum();
                let hit: f64 = w.iter().zip(&a).map(|(w, a)| w * a).sum();
                (hit / total).clamp(clamp, 1.0 - clamp)
            }))
        }
    }
}

/// Fit the arm-a outcome regression E[Y | A=arm, X=x].
pub fn fit_outcome_regression(train: &Dataset, arm: u8, spec: &LearnerSpec) -> Result<FieldFn> {
    spec.validate()?;
    let idx = train.arm_indices(arm);
    if idx.is_empty() {
        return Err(Error::Estimation(format!("no units in arm {arm} for outcome regression")));
    }
    let xs: Vec<Vec<f64>> = idx.iter().map(|&i| train.record(i).covariates().to_vec()).collect();
    let ys: Vec<f64> = idx.iter().map(|&i| train.record(i).outcome()).collect();
    match spec.outcome {
        OutcomeMethod::Linear => {
            let rows: Vec<Vec<f64>> = xs.iter().map(|x| basis_row(x)).collect();
            let ones = vec![1.0; rows.len()];
            let coef = weighted_least_squares(&rows, &ys, &ones, 1e-10)?;
            Ok(Arc::new(move |x: &[f64]| {
                let row = basis_row(x);
                coef.iter().zip(&row).map(|(b, v)| b * v).sum()
            }))
        }
        OutcomeMethod::LocalKernel => {
            let scale = kernel_scale(spec.locality);
            let refs: Vec<&[f64]> = xs.iter().map(|v| v.as_slice()).collect();
            let bw = rule_of_thumb_bandwidths(&refs, scale);
            let locality = spec.locality;
            Ok(Arc::new(move |x: &[f64]| {
                let refs: Vec<&[f64]> = xs.iter().map(|v| v.as_slice()).collect();
                let w = local_weights(&refs, &bw, locality, x);
                let total: f64 = w.iter().sum();
                let num: f64 = w.iter().zip(&ys).map(|(w, y)| w * y).sum();
                num / total
            }))
        }
    }
}

fn kernel_scale(locality: Locality) -> f64 {
    match locality {
        Locality::Kernel { scale } => scale,
        Locality::Knn { .. } => 1.0,
    }
}

/// Standard logistic IRLS with ridge stabilization.
fn fit_logistic_irls(rows: &[Vec<f64>], a: &[f64], ridge: f64) -> Result<Vec<f64>> {
    let p = rows[0].len();
    let mut beta = vec![0.0; p];
    for _ in 0..100 {
        let mut w = Vec::with_capacity(rows.len());
        let mut z = Vec::with_capacity(rows.len());
        for (row, &ai) in rows.iter().zip(a) {
            let eta: f64 = beta.iter().zip(row).map(|(b, v)| b * v).sum();
            let mu = expit(eta).clamp(1e-10, 1.0 - 1e-10);
            let wi = mu * (1.0 - mu);
            w.push(wi);
            z.push(eta + (ai - mu) / wi);
        }
        let next = weighted_least_squares(rows, &z, &w, ridge)?;
        let delta = beta.iter().zip(&next).map(|(a, b)| (a - b).abs()).fold(0.0_f64, f64::max);
        let scale = beta.iter().map(|b| b.abs()).fold(1.0_f64, f64::max);
        beta = next;
        if !beta.iter().all(|b| b.is_finite()) {
            return Err(Error::Numeric("logistic IRLS diverged".into()));
        }
        if delta <= 1e-10 * scale {
            break;
        }
    }
    Ok(beta)
}

/// Fit the propensity and outcome regressions on the `-k` training set.
/// These do not depend on gamma, so `curve` reuses them across the grid.
pub fn fit_pi_mu(
    data: &Dataset,
    plan: &FoldPlan,
    k: usize,
    spec: &LearnerSpec,
) -> Result<(FieldFn, [FieldFn; 2])> {
    let train = data.subset(&plan.train_indices(k))?;
    let pi = fit_propensity(&train, spec)?;
    let mu0 = fit_outcome_regression(&train, 0, spec)?;
    let mu1 = fit_outcome_regression(&train, 1, spec)?;
    Ok((pi, [mu0, mu1]))
}

/// Fit the four (arm, side) conditional bound fields for fold `k` at the
/// given gamma: theta on inner half 1, nu on inner half 2 against the fitted
/// theta. The same halves serve both sides.
pub fn fit_bound_pairs(
    data: &Dataset,
    plan: &FoldPlan,
    k: usize,
    gamma: f64,
    spec: &LearnerSpec,
) -> Result<[[BoundPairFn; 2]; 2]> {
    check_gamma(gamma)?;
    spec.validate()?;
    let half1 = plan.train_half_indices(k, 1);
    let half2 = plan.train_half_indices(k, 2);
    let mut out: Vec<[BoundPairFn; 2]> = Vec::with_capacity(2);
    for arm in 0..2u8 {
        let select = |idx: &[usize]| -> (Vec<Vec<f64>>, Vec<f64>) {
            let mut xs = Vec::new();
            let mut ys = Vec::new();
            for &i in idx {
                let r = data.record(i);
                if r.treatment() == arm {
                    xs.push(r.covariates().to_vec());
                    ys.push(r.outcome());
                }
            }
            (xs, ys)
        };
        let (tx, ty) = select(&half1);
        let (nx, ny) = select(&half2);
        if tx.is_empty() || nx.is_empty() {
            return Err(Error::Estimation(format!(
                "arm {arm} missing from a training half of fold {k}"
            )));
        }
        let mut sides: Vec<BoundPairFn> = Vec::with_capacity(2);
        for side in BoundSide::BOTH {
            let field = ConditionalBoundField::fit(
                (&tx, &ty),
                (&nx, &ny),
                gamma,
                side,
                spec.bound,
                spec.locality,
            )?;
            let field = Arc::new(field);
            sides.push(Arc::new(move |x: &[f64]| {
                field.eval(x).expect("bound field evaluation is total after fitting")
            }));
        }
        let [lower, upper]: [BoundPairFn; 2] = [sides.remove(0), sides.remove(0)];
        out.push([lower, upper]);
    }
    let arm1 = out.pop().expect("two arms");
    let arm0 = out.pop().expect("two arms");
    Ok([arm0, arm1])
}

/// Fit the complete nuisance vector for fold `k`: propensity and outcome
/// regressions on all of `-k`, bound fields on its nested halves.
pub fn fit_nuisance_set(
    data: &Dataset,
    plan: &FoldPlan,
    k: usize,
    gamma: f64,
    spec: &LearnerSpec,
) -> Result<FittedNuisanceSet> {
    if plan.n() != data.n() {
        return Err(invalid("fold plan does not match dataset size"));
    }
    if k >= plan.k() {
        return Err(invalid(format!("fold {k} out of range for K={}", plan.k())));
    }
    let (pi, mu) = fit_pi_mu(data, plan, k, spec)?;
    let bound_fields = fit_bound_pairs(data, plan, k, gamma, spec)?;
    Ok(FittedNuisanceSet::from_parts(
        pi,
        mu,
        bound_fields,
        Provenance::Learned { fold: k, spec: *spec },
    ))
}

/// Exact closed-form nuisances for the analytic design.
pub fn analytic_nuisances(dgp: AnalyticDgp, gamma: f64) -> Result<FittedNuisanceSet> {
    let truth = OracleTruth::new(dgp, gamma)?;
    let pi: FieldFn = Arc::new(move |x: &[f64]| truth.propensity(x[0]));
    let mu0: FieldFn = Arc::new(move |x: &[f64]| truth.outcome_mean(0, x[0]));
    let mu1: FieldFn = Arc::new(move |x: &[f64]| truth.outcome_mean(1, x[0]));
    let field = |arm: u8, side: BoundSide| -> BoundPairFn {
        Arc::new(move |x: &[f64]| (truth.theta(arm, side, x[0]), truth.nu(side)))
    };
    Ok(FittedNuisanceSet::from_parts(
        pi,
        [mu0, mu1],
        [
            [field(0, BoundSide::Lower), field(0, BoundSide::Upper)],
            [field(1, BoundSide::Lower), field(1, BoundSide::Upper)],
        ],
        Provenance::Analytic { gamma },
    ))
}

/// How the synthetic estimation error attaches to each nuisance function.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseAttachment {
    /// One Gaussian draw per function per replication: a smooth constant
    /// shift whose size is exactly n^(-alpha) in distribution.
    PerFunction,
    /// An independent draw at every evaluation point, derived from a hash of
    /// the point, for studying rougher error.
    PerPoint,
}

/// Closed-form truth perturbed by N(n^-alpha, n^-2alpha) error: the
/// propensity takes its shift on the logit scale (so the error never
/// saturates at the probability boundary), the nu fields are re-clipped to
/// their ranges.
pub fn noised_truth_nuisances(
    dgp: AnalyticDgp,
    alpha: f64,
    n: usize,
    gamma: f64,
    seed: u64,
) -> Result<FittedNuisanceSet> {
    noised_truth_nuisances_with_mode(dgp, alpha, n, gamma, seed, NoiseAttachment::PerFunction)
}

pub fn noised_truth_nuisances_with_mode(
    dgp: AnalyticDgp,
    alpha: f64,
    n: usize,
    gamma: f64,
    seed: u64,
    mode: NoiseAttachment,
) -> Result<FittedNuisanceSet> {
    if !(alpha > 0.0 && alpha <= 0.5) {
        return Err(invalid(format!("alpha must lie in (0, 0.5], got {alpha}")));
    }
    if n == 0 {
        return Err(invalid("n must be >= 1"));
    }
    let truth = OracleTruth::new(dgp, gamma)?;
    let scale = (n as f64).powf(-alpha);
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    // Draw order is fixed: pi, mu0, mu1, then (arm, side) bound pairs.
    let mut draw = |tag: u64| -> Shift {
        match mode {
            NoiseAttachment::PerFunction => {
                let z: f64 = StandardNormal.sample(&mut rng);
                Shift::Constant(scale * (1.0 + z))
            }
            NoiseAttachment::PerPoint => Shift::PerPoint { seed, tag, scale },
        }
    };
    let e_pi = draw(0);
    let e_mu0 = draw(1);
    let e_mu1 = draw(2);
    const CLAMP: f64 = 1e-12;
    let pi: FieldFn = Arc::new(move |x: &[f64]| {
        let p = truth.propensity(x[0]).clamp(CLAMP, 1.0 - CLAMP);
        expit(logit(p) + e_pi.at(x))
    });
    let mu0: FieldFn = Arc::new(move |x: &[f64]| truth.outcome_mean(0, x[0]) + e_mu0.at(x));
    let mu1: FieldFn = Arc::new(move |x: &[f64]| truth.outcome_mean(1, x[0]) + e_mu1.at(x));
    let mut bound_fields: Vec<[BoundPairFn; 2]> = Vec::with_capacity(2);
    for arm in 0..2u8 {
        let mut sides: Vec<BoundPairFn> = Vec::with_capacity(2);
        for side in BoundSide::BOTH {
            let e_theta = draw(3 + 4 * u64::from(arm) + 2 * side.index() as u64);
            let e_nu = draw(4 + 4 * u64::from(arm) + 2 * side.index() as u64);
            let (lo, hi) = side.nu_range(gamma);
            // nu takes its error on the logit scale of the CDF level behind
            // it, which keeps it inside its band at an exact n^-alpha rate;
            // an additive shift would clip against the band edge and stall.
            let cdf = truth.cdf_at_h().clamp(CLAMP, 1.0 - CLAMP);
            sides.push(Arc::new(move |x: &[f64]| {
                let theta = truth.theta(arm, side, x[0]) + e_theta.at(x);
                let noisy_cdf = expit(logit(cdf) + e_nu.at(x));
                let nu = truth.nu_from_cdf_level(side, noisy_cdf).clamp(lo, hi);
                (theta, nu)
            }));
        }
        let [lower, upper]: [BoundPairFn; 2] = [sides.remove(0), sides.remove(0)];
        bound_fields.push([lower, upper]);
    }
    let arm1 = bound_fields.pop().expect("two arms");
    let arm0 = bound_fields.pop().expect("two arms");
    Ok(FittedNuisanceSet::from_parts(
        pi,
        [mu0, mu1],
        [arm0, arm1],
        Provenance::Noised { alpha, n, gamma, seed },
    ))
}

#[derive(Debug, Clone, Copy)]
enum Shift {
    Constant(f64),
    PerPoint { seed: u64, tag: u64, scale: f64 },
}

impl Shift {
    fn at(&self, x: &[f64]) -> f64 {
        match *self {
            Shift::Constant(c) => c,
            Shift::PerPoint { seed, tag, scale } => {
                // deterministic point-level draw keyed by (seed, tag, x bits)
                let mut h = seed ^ tag.wrapping_mul(0x9e37_79b9_7f4a_7c15);
                for v in x {
                    h ^= v.to_bits().wrapping_mul(0xff51_afd7_ed55_8ccd);
                    h = h.rotate_left(31).wrapping_mul(0xc4ce_b9fe_1a85_ec53);
                }
                let mut rng = ChaCha12Rng::seed_from_u64(h);
                let z: f64 = StandardNormal.sample(&mut rng);
                scale * (1.0 + z)
            }
        }
    }
}
