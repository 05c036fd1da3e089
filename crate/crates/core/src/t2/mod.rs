//! Identification-level sharp bounds on incremental effects for two-period
//! discrete models under the marginal sensitivity model.
//!
//! Everything here works on fully specified observed laws: the module
//! computes population quantities by exact finite sums, optimizing over
//! candidate stage-wise density-ratio tables constrained to the sensitivity
//! boxes and the compatibility equalities. No sample-based estimation is
//! attempted.

mod lp;

use crate::error::{invalid, Error, Result};
use crate::model::check_delta;
use lp::{solve_lp, LpOutcome};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

/// Observed two-period history (X1, A1, X2) by support index.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct History2 {
    pub x1: usize,
    pub a1: u8,
    pub x2: usize,
}

/// The four treatment strategies in path-index order (a1, a2).
pub const ALL_PATHS: [[u8; 2]; 4] = [[0, 0], [0, 1], [1, 0], [1, 1]];

pub fn path_index(a_bar: [u8; 2]) -> usize {
    2 * a_bar[0] as usize + a_bar[1] as usize
}

/// Factorized observed law for two periods on finite supports.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DiscreteT2Model {
    pub x1_support: Vec<f64>,
    pub x2_support: Vec<f64>,
    pub y_support: Vec<f64>,
    /// P(X1 = x1)
    pub p_x1: Vec<f64>,
    /// P(A1 = 1 | x1)
    pub pi1: Vec<f64>,
    /// P(X2 = x2 | x1, a1), indexed `[x1][a1][x2]`
    pub p_x2: Vec<Vec<Vec<f64>>>,
    /// P(A2 = 1 | x1, a1, x2), indexed `[x1][a1][x2]`
    pub pi2: Vec<Vec<Vec<f64>>>,
    /// P(Y = y | x1, a1, x2, a2), indexed `[x1][a1][x2][a2][y]`
    pub p_y: Vec<Vec<Vec<Vec<Vec<f64>>>>>,
}

const NORM_TOL: f64 = 1e-9;

impl DiscreteT2Model {
    pub fn n1(&self) -> usize {
        self.x1_support.len()
    }

    pub fn n2(&self) -> usize {
        self.x2_support.len()
    }

    pub fn ny(&self) -> usize {
        self.y_support.len()
    }

    pub fn validate(&self) -> Result<()> {
        let (n1, n2, ny) = (self.n1(), self.n2(), self.ny());
        if n1 == 0 || n2 == 0 || ny == 0 {
            return Err(invalid("supports must be nonempty"));
        }
        if self.y_support.iter().any(|y| !y.is_finite()) {
            return Err(invalid("outcome support must be finite"));
        }
        let normalized = |v: &[f64]| -> bool {
            v.iter().all(|&p| (0.0..=1.0).contains(&p))
                && (v.iter().sum::<f64>() - 1.0).abs() <= NORM_TOL
        };
        if self.p_x1.len() != n1 || !normalized(&self.p_x1) {
            return Err(invalid("p_x1 must be a probability vector over the x1 support"));
        }
        if self.pi1.len() != n1 || self.pi1.iter().any(|&p| !(p > 0.0 && p < 1.0)) {
            return Err(invalid("pi1 entries must lie strictly in (0,1)"));
        }
        if self.p_x2.len() != n1 || self.pi2.len() != n1 || self.p_y.len() != n1 {
            return Err(invalid("per-x1 tables must match the x1 support"));
        }
        for x1 in 0..n1 {
            if self.p_x2[x1].len() != 2 || self.pi2[x1].len() != 2 || self.p_y[x1].len() != 2 {
                return Err(invalid("treatment-indexed tables must have two slices"));
            }
            for a1 in 0..2 {
                if self.p_x2[x1][a1].len() != n2 || !normalized(&self.p_x2[x1][a1]) {
                    return Err(invalid(format!("p_x2[{x1}][{a1}] must normalize over x2")));
                }
                if self.pi2[x1][a1].len() != n2
                    || self.pi2[x1][a1].iter().any(|&p| !(p > 0.0 && p < 1.0))
                {
                    return Err(invalid(format!("pi2[{x1}][{a1}] must lie strictly in (0,1)")));
                }
                if self.p_y[x1][a1].len() != n2 {
                    return Err(invalid("p_y must cover the x2 support"));
                }
                for x2 in 0..n2 {
                    if self.p_y[x1][a1][x2].len() != 2 {
                        return Err(invalid("p_y must carry both a2 slices"));
                    }
                    for a2 in 0..2 {
                        let row = &self.p_y[x1][a1][x2][a2];
                        if row.len() != ny || !normalized(row) {
                            return Err(invalid(format!(
                                "p_y[{x1}][{a1}][{x2}][{a2}] must normalize over y"
                            )));
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// P(A1 = a1 | x1).
    pub fn prob_a1(&self, a1: u8, x1: usize) -> f64 {
        if a1 == 1 {
            self.pi1[x1]
        } else {
            1.0 - self.pi1[x1]
        }
    }

    /// P(A2 = a2 | h2).
    pub fn prob_a2(&self, a2: u8, h2: &History2) -> f64 {
        let p = self.pi2[h2.x1][h2.a1 as usize][h2.x2];
        if a2 == 1 {
            p
        } else {
            1.0 - p
        }
    }

    /// E[Y | x1, a1, x2, a2].
    pub fn outcome_mean(&self, x1: usize, a1: u8, x2: usize, a2: u8) -> f64 {
        self.p_y[x1][a1 as usize][x2][a2 as usize]
            .iter()
            .zip(&self.y_support)
            .map(|(p, y)| p * y)
            .sum()
    }

    /// Mean outcome under the observed law.
    pub fn observed_mean(&self) -> f64 {
        let mut acc = 0.0;
        for x1 in 0..self.n1() {
            for a1 in 0..2u8 {
                let pa1 = self.prob_a1(a1, x1);
                for x2 in 0..self.n2() {
                    let px2 = self.p_x2[x1][a1 as usize][x2];
                    let h2 = History2 { x1, a1, x2 };
                    for a2 in 0..2u8 {
                        let pa2 = self.prob_a2(a2, &h2);
                        acc +=
                            self.p_x1[x1] * pa1 * px2 * pa2 * self.outcome_mean(x1, a1, x2, a2);
                    }
                }
            }
        }
        acc
    }

    /// The same law with all outcome values negated.
    fn negate_outcomes(&self) -> Self {
        let mut m = self.clone();
        for y in &mut m.y_support {
            *y = -*y;
        }
        m
    }
}

/// Incremental tilt of one stage-k treatment probability.
fn dq(a: u8, pi: f64, delta: f64) -> f64 {
    let num = if a == 1 { delta * pi } else { 1.0 - pi };
    num / (delta * pi + 1.0 - pi)
}

/// Probability of the treatment strategy under the incremental
/// intervention: the product of the per-stage tilted draws, with the
/// stage-2 propensity evaluated at the given history. Sums to one over the
/// four strategies for every history.
pub fn tilt_path_prob(
    a_bar: [u8; 2],
    h2: &History2,
    delta: f64,
    model: &DiscreteT2Model,
) -> Result<f64> {
    check_delta(delta)?;
    if h2.x1 >= model.n1() || h2.x2 >= model.n2() || h2.a1 > 1 || a_bar.iter().any(|&a| a > 1) {
        return Err(invalid("history or strategy outside the model support"));
    }
    let q1 = dq(a_bar[0], model.pi1[h2.x1], delta);
    let q2 = dq(a_bar[1], model.pi2[h2.x1][h2.a1 as usize][h2.x2], delta);
    Ok(q1 * q2)
}

/// Which treatment probability mixes the rho reweighting factor. The
/// stage-2 reading makes the nested compatibility constraint an exact
/// identity at the true density ratios.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RhoWeight {
    /// P(A2 = a2 | x1, a1, x2) evaluated along the strategy (default).
    #[default]
    Stage2,
    /// P(A1 = a1 | x1) evaluated along the strategy.
    Stage1,
}

fn rho_weight(
    model: &DiscreteT2Model,
    a_bar: [u8; 2],
    x1: usize,
    x2: usize,
    mode: RhoWeight,
) -> f64 {
    match mode {
        RhoWeight::Stage2 => model.prob_a2(a_bar[1], &History2 { x1, a1: a_bar[0], x2 }),
        RhoWeight::Stage1 => model.prob_a1(a_bar[0], x1),
    }
}

/// Candidate stage-2 density-ratio table for one strategy, indexed
/// `[x1][x2][y]`.
pub type Lambda2Table = Vec<Vec<Vec<f64>>>;
/// Candidate stage-1 density-ratio table for one strategy, indexed `[x1][y]`.
pub type Lambda1Table = Vec<Vec<f64>>;

/// Candidate density-ratio tables for all four strategies with their
/// sensitivity caps.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LambdaTables {
    pub cap1: f64,
    pub cap2: f64,
    /// Indexed `[path][x1][y]`.
    pub lambda1: Vec<Lambda1Table>,
    /// Indexed `[path][x1][x2][y]`.
    pub lambda2: Vec<Lambda2Table>,
}

impl LambdaTables {
    /// All-ones tables: the no-unmeasured-confounding point, feasible for
    /// every cap >= 1.
    pub fn neutral(model: &DiscreteT2Model, cap1: f64, cap2: f64) -> Result<Self> {
        check_cap(cap1)?;
        check_cap(cap2)?;
        let (n1, n2, ny) = (model.n1(), model.n2(), model.ny());
        Ok(Self {
            cap1,
            cap2,
            lambda1: vec![vec![vec![1.0; ny]; n1]; 4],
            lambda2: vec![vec![vec![vec![1.0; ny]; n2]; n1]; 4],
        })
    }

    /// Every entry inside its sensitivity box.
    pub fn validate_boxes(&self) -> Result<()> {
        check_cap(self.cap1)?;
        check_cap(self.cap2)?;
        let in_box = |v: f64, cap: f64| v >= 1.0 / cap - NORM_TOL && v <= cap + NORM_TOL;
        for path in 0..4 {
            if self.lambda1[path].iter().flatten().any(|&v| !in_box(v, self.cap1)) {
                return Err(invalid(format!("lambda1 entries escape the cap box on path {path}")));
            }
            if self.lambda2[path].iter().flatten().flatten().any(|&v| !in_box(v, self.cap2)) {
                return Err(invalid(format!("lambda2 entries escape the cap box on path {path}")));
            }
        }
        Ok(())
    }
}

fn check_cap(cap: f64) -> Result<()> {
    if !(cap.is_finite() && cap >= 1.0) {
        return Err(invalid(format!("sensitivity cap must be finite and >= 1, got {cap}")));
    }
    Ok(())
}

/// The reweighting factor rho(x_bar, y; lambda2) = w + (1 - w) lambda2,
/// mixing one against the candidate ratio with the configured treatment
/// probability.
pub fn rho(
    model: &DiscreteT2Model,
    a_bar: [u8; 2],
    x1: usize,
    x2: usize,
    y: usize,
    lambda2: &Lambda2Table,
    mode: RhoWeight,
) -> f64 {
    let w = rho_weight(model, a_bar, x1, x2, mode);
    w + (1.0 - w) * lambda2[x1][x2][y]
}

/// One compatibility residual.
#[derive(Debug, Clone, Serialize)]
pub struct CompatResidual {
    pub constraint: String,
    pub path: usize,
    pub residual: f64,
}

/// Residuals of the stage-2 and nested stage-1 compatibility equalities,
/// computed by exact finite sums per conditioning atom.
#[derive(Debug, Clone, Serialize)]
pub struct CompatReport {
    pub rows: Vec<CompatResidual>,
    pub max_residual: f64,
}

impl CompatReport {
    pub fn feasible(&self, tol: f64) -> bool {
        self.max_residual <= tol
    }
}

pub const COMPAT_TOL: f64 = 1e-9;

pub fn check_compatibility(
    lambdas: &LambdaTables,
    model: &DiscreteT2Model,
    mode: RhoWeight,
) -> Result<CompatReport> {
    model.validate()?;
    let mut rows = Vec::new();
    for (pi, &a_bar) in ALL_PATHS.iter().enumerate() {
        let (a1, a2) = (a_bar[0] as usize, a_bar[1] as usize);
        for x1 in 0..model.n1() {
            for x2 in 0..model.n2() {
                let p_y = &model.p_y[x1][a1][x2][a2];
                let mean: f64 =
                    p_y.iter().zip(&lambdas.lambda2[pi][x1][x2]).map(|(p, l)| p * l).sum();
                rows.push(CompatResidual {
                    constraint: format!("stage2[x1={x1},x2={x2}]"),
                    path: pi,
                    residual: (mean - 1.0).abs(),
                });
            }
            // nested: E{ E(lambda1 rho | A=a, X) | A1=a1, x1 } = 1
            let mut outer = 0.0;
            for x2 in 0..model.n2() {
                let p_y = &model.p_y[x1][a1][x2][a2];
                let mut inner = 0.0;
                for y in 0..model.ny() {
                    inner += lambdas.lambda1[pi][x1][y]
                        * rho(model, a_bar, x1, x2, y, &lambdas.lambda2[pi], mode)
                        * p_y[y];
                }
                outer += model.p_x2[x1][a1][x2] * inner;
            }
            rows.push(CompatResidual {
                constraint: format!("stage1[x1={x1}]"),
                path: pi,
                residual: (outer - 1.0).abs(),
            });
        }
    }
    let max_residual = rows.iter().map(|r| r.residual).fold(0.0, f64::max);
    Ok(CompatReport { rows, max_residual })
}

/// The reweighted path objective: an exact finite sum of
/// 1(A=a) (1/P(A1=a1|X1)) (1 + (1-pi2*)/pi2* lambda2(X,Y)) q(a,H2;delta) Y
/// over the observed joint law. Linear in the lambda2 table.
pub fn f_ipw(
    lambda2: &Lambda2Table,
    a_bar: [u8; 2],
    delta: f64,
    model: &DiscreteT2Model,
) -> Result<f64> {
    check_delta(delta)?;
    let (a1, a2) = (a_bar[0] as usize, a_bar[1] as usize);
    let mut acc = 0.0;
    for x1 in 0..model.n1() {
        let pa1 = model.prob_a1(a_bar[0], x1);
        for x2 in 0..model.n2() {
            let h2 = History2 { x1, a1: a_bar[0], x2 };
            let pa2 = model.prob_a2(a_bar[1], &h2);
            let q = tilt_path_prob(a_bar, &h2, delta, model)?;
            let base = model.p_x1[x1] * pa1 * model.p_x2[x1][a1][x2] * pa2;
            for (y, &yv) in model.y_support.iter().enumerate() {
                let p = base * model.p_y[x1][a1][x2][a2][y];
                let weight = (1.0 / pa1) * (1.0 + (1.0 - pa2) / pa2 * lambda2[x1][x2][y]);
                acc += p * weight * q * yv;
            }
        }
    }
    Ok(acc)
}

/// The incremental effect identified under sequential exchangeability: the
/// longitudinal g-formula with the intervention propagated through the
/// covariate process. Collapses to the observed mean at delta = 1 and to
/// the always-treat g-formula mean as delta grows.
pub fn gformula_point(model: &DiscreteT2Model, delta: f64) -> Result<f64> {
    check_delta(delta)?;
    let mut acc = 0.0;
    for x1 in 0..model.n1() {
        for a1 in 0..2u8 {
            let q1 = dq(a1, model.pi1[x1], delta);
            for x2 in 0..model.n2() {
                for a2 in 0..2u8 {
                    let q2 = dq(a2, model.pi2[x1][a1 as usize][x2], delta);
                    acc += model.p_x1[x1]
                        * q1
                        * model.p_x2[x1][a1 as usize][x2]
                        * q2
                        * model.outcome_mean(x1, a1, x2, a2);
                }
            }
        }
    }
    Ok(acc)
}

/// Which side of the sharp interval to compute.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Lower,
    Upper,
}

/// Solver knobs for the alternating optimization.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct T2Options {
    pub rho_weight: RhoWeight,
    pub restarts: usize,
    pub max_iters: usize,
    pub seed: u64,
}

impl Default for T2Options {
    fn default() -> Self {
        Self { rho_weight: RhoWeight::Stage2, restarts: 16, max_iters: 40, seed: 0 }
    }
}

/// A sharp-bound value with the density-ratio tables attaining it.
#[derive(Debug, Clone, Serialize)]
pub struct SharpBound {
    pub value: f64,
    pub tables: LambdaTables,
}

/// Sharp bound on the incremental effect by coordinate ascent: an exact
/// linear-program step in lambda2 for fixed lambda1, then a feasibility
/// step in lambda1 for fixed lambda2, with multi-start. The four strategy
/// subproblems separate and are solved independently. The lower bound
/// negates the outcomes and reuses the upper-bound machinery.
pub fn sharp_bounds(
    model: &DiscreteT2Model,
    delta: f64,
    cap1: f64,
    cap2: f64,
    direction: Direction,
    opts: &T2Options,
) -> Result<SharpBound> {
    model.validate()?;
    check_delta(delta)?;
    check_cap(cap1)?;
    check_cap(cap2)?;
    match direction {
        Direction::Upper => sharp_upper(model, delta, cap1, cap2, opts),
        Direction::Lower => {
            let negated = model.negate_outcomes();
            let res = sharp_upper(&negated, delta, cap1, cap2, opts)?;
            Ok(SharpBound { value: -res.value, tables: res.tables })
        }
    }
}

/// Both sides at once.
pub fn sharp_bounds_both(
    model: &DiscreteT2Model,
    delta: f64,
    cap1: f64,
    cap2: f64,
    opts: &T2Options,
) -> Result<(SharpBound, SharpBound)> {
    let lower = sharp_bounds(model, delta, cap1, cap2, Direction::Lower, opts)?;
    let upper = sharp_bounds(model, delta, cap1, cap2, Direction::Upper, opts)?;
    Ok((lower, upper))
}

/// Per-path static data for the optimizer: objective coefficients and
/// constraint ingredients on the flattened lambda2 index
/// (x1 * n2 + x2) * ny + y.
struct PathProblem {
    n1: usize,
    n2: usize,
    ny: usize,
    constant: f64,
    objective: Vec<f64>,
    /// p(y | xbar, abar) per (x1, x2)
    p_y: Vec<Vec<Vec<f64>>>,
    /// p(x2 | x1, a1)
    p_x2: Vec<Vec<f64>>,
    /// rho mixing weight per (x1, x2)
    w: Vec<Vec<f64>>,
    cap1: f64,
    cap2: f64,
}

impl PathProblem {
    fn build(
        model: &DiscreteT2Model,
        a_bar: [u8; 2],
        delta: f64,
        cap1: f64,
        cap2: f64,
        mode: RhoWeight,
    ) -> Result<Self> {
        let (n1, n2, ny) = (model.n1(), model.n2(), model.ny());
        let (a1, a2) = (a_bar[0] as usize, a_bar[1] as usize);
        let mut constant = 0.0;
        let mut objective = vec![0.0; n1 * n2 * ny];
        let mut p_y = vec![vec![vec![0.0; ny]; n2]; n1];
        let mut p_x2 = vec![vec![0.0; n2]; n1];
        let mut w = vec![vec![0.0; n2]; n1];
        for x1 in 0..n1 {
            for x2 in 0..n2 {
                let h2 = History2 { x1, a1: a_bar[0], x2 };
                let pa2 = model.prob_a2(a_bar[1], &h2);
                let q = tilt_path_prob(a_bar, &h2, delta, model)?;
                p_x2[x1][x2] = model.p_x2[x1][a1][x2];
                w[x1][x2] = rho_weight(model, a_bar, x1, x2, mode);
                for (y, &yv) in model.y_support.iter().enumerate() {
                    let py = model.p_y[x1][a1][x2][a2][y];
                    p_y[x1][x2][y] = py;
                    // the stage-1 propensity cancels against its inverse weight
                    let base = model.p_x1[x1] * p_x2[x1][x2] * py * q * yv;
                    constant += base * pa2;
                    objective[(x1 * n2 + x2) * ny + y] = base * (1.0 - pa2);
                }
            }
        }
        Ok(Self { n1, n2, ny, constant, objective, p_y, p_x2, w, cap1, cap2 })
    }

    fn flat(&self, x1: usize, x2: usize, y: usize) -> usize {
        (x1 * self.n2 + x2) * self.ny + y
    }

    fn lambda2_from_flat(&self, x: &[f64]) -> Lambda2Table {
        (0..self.n1)
            .map(|x1| {
                (0..self.n2)
                    .map(|x2| (0..self.ny).map(|y| x[self.flat(x1, x2, y)]).collect())
                    .collect()
            })
            .collect()
    }

    /// G(x1, y; lambda2) = sum_x2 p(x2|x1,a1) rho(xbar, y) p(y|xbar, abar):
    /// the stage-1 constraint weight on lambda1(x1, y).
    fn g_weights(&self, lambda2: &Lambda2Table) -> Vec<Vec<f64>> {
        (0..self.n1)
            .map(|x1| {
                (0..self.ny)
                    .map(|y| {
                        (0..self.n2)
                            .map(|x2| {
                                let r =
                                    self.w[x1][x2] + (1.0 - self.w[x1][x2]) * lambda2[x1][x2][y];
                                self.p_x2[x1][x2] * r * self.p_y[x1][x2][y]
                            })
                            .sum()
                    })
                    .collect()
            })
            .collect()
    }

    /// LP over lambda2 for fixed lambda1: maximize the linear objective
    /// subject to the stage-2 equalities, the nested stage-1 equalities
    /// (linear in lambda2 once lambda1 is pinned), and the cap box.
    fn lambda2_step(&self, lambda1: &Lambda1Table) -> Result<Option<(Lambda2Table, f64)>> {
        let nvars = self.n1 * self.n2 * self.ny;
        let mut rows = Vec::new();
        let mut rhs = Vec::new();
        for x1 in 0..self.n1 {
            for x2 in 0..self.n2 {
                let mut row = vec![0.0; nvars];
                for y in 0..self.ny {
                    row[self.flat(x1, x2, y)] = self.p_y[x1][x2][y];
                }
                rows.push(row);
                rhs.push(1.0);
            }
        }
        for x1 in 0..self.n1 {
            let mut row = vec![0.0; nvars];
            let mut constant = 0.0;
            for x2 in 0..self.n2 {
                for y in 0..self.ny {
                    let common = lambda1[x1][y] * self.p_x2[x1][x2] * self.p_y[x1][x2][y];
                    constant += common * self.w[x1][x2];
                    row[self.flat(x1, x2, y)] = common * (1.0 - self.w[x1][x2]);
                }
            }
            rows.push(row);
            rhs.push(1.0 - constant);
        }
        let lower = vec![1.0 / self.cap2; nvars];
        let upper = vec![self.cap2; nvars];
        match solve_lp(&self.objective, &rows, &rhs, &lower, &upper)? {
            LpOutcome::Optimal { x, value } => {
                Ok(Some((self.lambda2_from_flat(&x), value + self.constant)))
            }
            LpOutcome::Infeasible => Ok(None),
        }
    }

    /// Feasibility step in lambda1 for fixed lambda2. The per-x1 equality
    /// sum_y lambda1(x1,y) G(x1,y) = 1 admits the uniform solution
    /// 1 / sum_y G whenever any box solution exists; a randomized greedy
    /// vertex is used on diversification restarts.
    fn lambda1_step(
        &self,
        lambda2: &Lambda2Table,
        mut rng: Option<&mut ChaCha12Rng>,
    ) -> Option<Lambda1Table> {
        let g = self.g_weights(lambda2);
        let (lo, hi) = (1.0 / self.cap1, self.cap1);
        let mut out = vec![vec![1.0; self.ny]; self.n1];
        for x1 in 0..self.n1 {
            let total: f64 = g[x1].iter().sum();
            if !(lo * total <= 1.0 + NORM_TOL && hi * total >= 1.0 - NORM_TOL) {
                return None;
            }
            match rng.as_deref_mut() {
                None => {
                    let u = (1.0 / total).clamp(lo, hi);
                    out[x1] = vec![u; self.ny];
                }
                Some(rng) => {
                    // random assignment order, each entry pushed to a random
                    // point of its feasible range given the rest
                    let mut order: Vec<usize> = (0..self.ny).collect();
                    for i in (1..order.len()).rev() {
                        let j = rng.random_range(0..=i);
                        order.swap(i, j);
                    }
                    let mut remaining: f64 = g[x1].iter().sum();
                    let mut budget = 1.0;
                    for &y in &order {
                        let gy = g[x1][y];
                        remaining -= gy;
                        if gy <= 0.0 {
                            out[x1][y] = 1.0;
                            continue;
                        }
                        let min_v = ((budget - hi * remaining) / gy).max(lo);
                        let max_v = ((budget - lo * remaining) / gy).min(hi);
                        if min_v > max_v + NORM_TOL {
                            return None;
                        }
                        let t: f64 = rng.random();
                        let v = (min_v + t * (max_v - min_v)).clamp(lo, hi);
                        out[x1][y] = v;
                        budget -= v * gy;
                    }
                }
            }
        }
        Some(out)
    }
}

fn sharp_upper(
    model: &DiscreteT2Model,
    delta: f64,
    cap1: f64,
    cap2: f64,
    opts: &T2Options,
) -> Result<SharpBound> {
    let mut tables = LambdaTables::neutral(model, cap1, cap2)?;
    let mut total = 0.0;
    for (pi, &a_bar) in ALL_PATHS.iter().enumerate() {
        let problem = PathProblem::build(model, a_bar, delta, cap1, cap2, opts.rho_weight)?;
        let (value, l1, l2) = optimize_path(&problem, opts, pi as u64)?;
        total += value;
        tables.lambda1[pi] = l1;
        tables.lambda2[pi] = l2;
    }
    Ok(SharpBound { value: total, tables })
}

fn optimize_path(
    problem: &PathProblem,
    opts: &T2Options,
    path_tag: u64,
) -> Result<(f64, Lambda1Table, Lambda2Table)> {
    let neutral1 = vec![vec![1.0; problem.ny]; problem.n1];
    let neutral2 = vec![vec![vec![1.0; problem.ny]; problem.n2]; problem.n1];
    let mut best: Option<(f64, Lambda1Table, Lambda2Table)> = None;
    for restart in 0..opts.restarts.max(1) {
        let mut rng = ChaCha12Rng::seed_from_u64(opts.seed);
        rng.set_stream((path_tag << 32) | restart as u64);
        // restart 0 starts from the neutral point; later restarts draw a
        // random feasible lambda1 against the neutral lambda2
        let mut lambda1 = if restart == 0 {
            neutral1.clone()
        } else {
            problem.lambda1_step(&neutral2, Some(&mut rng)).unwrap_or_else(|| neutral1.clone())
        };
        let mut current: Option<(f64, Lambda2Table)> = None;
        for iter in 0..opts.max_iters.max(1) {
            let step = match problem.lambda2_step(&lambda1)? {
                Some(s) => s,
                None => break,
            };
            let improved = match &current {
                Some((v, _)) => step.1 > v + 1e-12,
                None => true,
            };
            current = Some((step.1, step.0));
            if !improved {
                break;
            }
            let lambda2 = &current.as_ref().expect("just set").1;
            // alternate deterministic and randomized lambda1 updates; both
            // keep the current lambda2 feasible, so the value is monotone
            let next = if iter % 2 == 0 {
                problem.lambda1_step(lambda2, None)
            } else {
                problem.lambda1_step(lambda2, Some(&mut rng))
            };
            match next {
                Some(l1) => lambda1 = l1,
                None => break,
            }
        }
        if let Some((v, l2)) = current {
            let replace = best.as_ref().is_none_or(|(bv, _, _)| v > *bv);
            if replace {
                best = Some((v, lambda1, l2));
            }
        }
    }
    best.ok_or_else(|| Error::Infeasible("no feasible tables found for a strategy".into()))
}

/// Exhaustive-grid oracle for the sharp bounds.
///
/// The per-strategy problem is enumerated per x1 block: within each
/// (x1, x2) the stage-2 equality pins one coordinate, the free coordinates
/// run over a grid anchored at 1 with the given step, and the stage-1
/// tables are eliminated exactly through their interval condition
/// sum_y G / cap1 <= 1 <= cap1 * sum_y G. Returns the envelope of feasible
/// objective values.
pub fn brute_force_bounds(
    model: &DiscreteT2Model,
    delta: f64,
    cap1: f64,
    cap2: f64,
    grid_step: f64,
    mode: RhoWeight,
) -> Result<(f64, f64)> {
    model.validate()?;
    check_delta(delta)?;
    check_cap(cap1)?;
    check_cap(cap2)?;
    if !(grid_step.is_finite() && grid_step > 0.0) {
        return Err(invalid(format!("grid step must be positive, got {grid_step}")));
    }
    let entries_per_path = model.n1() * model.ny() * (1 + model.n2());
    if entries_per_path > 12 {
        return Err(invalid(format!(
            "enumeration guard: {entries_per_path} lambda entries per strategy exceeds 12"
        )));
    }
    // grid over [1/cap2, cap2] anchored at 1 so the neutral point is exact
    let mut grid = vec![1.0];
    let mut v = 1.0 - grid_step;
    while v >= 1.0 / cap2 - 1e-12 {
        grid.push(v.max(1.0 / cap2));
        v -= grid_step;
    }
    v = 1.0 + grid_step;
    while v <= cap2 + 1e-12 {
        grid.push(v.min(cap2));
        v += grid_step;
    }

    let mut lower_total = 0.0;
    let mut upper_total = 0.0;
    for &a_bar in &ALL_PATHS {
        let problem = PathProblem::build(model, a_bar, delta, cap1, cap2, mode)?;
        lower_total += problem.constant;
        upper_total += problem.constant;
        for x1 in 0..problem.n1 {
            let (lo, hi) = enumerate_x1_block(&problem, x1, &grid)?;
            lower_total += lo;
            upper_total += hi;
        }
    }
    Ok((lower_total, upper_total))
}

/// Envelope of the objective over one x1 block: all (x2, y) lambda2
/// entries for this x1, subject to the stage-2 equality per x2, the cap
/// box, and the eliminated stage-1 interval condition.
fn enumerate_x1_block(problem: &PathProblem, x1: usize, grid: &[f64]) -> Result<(f64, f64)> {
    let (n2, ny) = (problem.n2, problem.ny);
    let (lo2, hi2) = (1.0 / problem.cap2, problem.cap2);

    // per x2: the pinned coordinate is the highest-probability y
    let pinned: Vec<usize> = (0..n2)
        .map(|x2| {
            (0..ny)
                .max_by(|&a, &b| {
                    problem.p_y[x1][x2][a]
                        .partial_cmp(&problem.p_y[x1][x2][b])
                        .unwrap_or(std::cmp::Ordering::Equal)
                })
                .expect("nonempty y support")
        })
        .collect();

    let mut free: Vec<(usize, usize)> = Vec::with_capacity(n2 * (ny - 1));
    for x2 in 0..n2 {
        for y in 0..ny {
            if y != pinned[x2] {
                free.push((x2, y));
            }
        }
    }
    let combos = (grid.len() as f64).powi(free.len() as i32);
    if combos > 2e8 {
        return Err(invalid(format!("enumeration guard: {combos:.1e} grid combinations")));
    }

    let mut best = (f64::INFINITY, f64::NEG_INFINITY);
    let mut block = vec![vec![1.0; ny]; n2];
    recurse_block(problem, x1, grid, &free, &pinned, 0, &mut block, lo2, hi2, &mut best);
    if !best.0.is_finite() {
        return Err(Error::Infeasible("no feasible grid point in an x1 block".into()));
    }
    Ok(best)
}

#[allow(clippy::too_many_arguments)]
fn recurse_block(
    problem: &PathProblem,
    x1: usize,
    grid: &[f64],
    free: &[(usize, usize)],
    pinned: &[usize],
    depth: usize,
    block: &mut Vec<Vec<f64>>,
    lo2: f64,
    hi2: f64,
    best: &mut (f64, f64),
) {
    if depth == free.len() {
        // solve every pinned coordinate from the stage-2 equality
        for x2 in 0..problem.n2 {
            let pin = pinned[x2];
            let p_pin = problem.p_y[x1][x2][pin];
            if p_pin <= 0.0 {
                block[x2][pin] = 1.0;
                continue;
            }
            let mut partial = 0.0;
            for y in 0..problem.ny {
                if y != pin {
                    partial += problem.p_y[x1][x2][y] * block[x2][y];
                }
            }
            let v = (1.0 - partial) / p_pin;
            if !(lo2 - 1e-12..=hi2 + 1e-12).contains(&v) {
                return;
            }
            block[x2][pin] = v.clamp(lo2, hi2);
        }
        // eliminated stage-1 feasibility interval
        let mut s = 0.0;
        for x2 in 0..problem.n2 {
            for y in 0..problem.ny {
                let r = problem.w[x1][x2] + (1.0 - problem.w[x1][x2]) * block[x2][y];
                s += problem.p_x2[x1][x2] * r * problem.p_y[x1][x2][y];
            }
        }
        if !(s / problem.cap1 <= 1.0 + NORM_TOL && s * problem.cap1 >= 1.0 - NORM_TOL) {
            return;
        }
        let mut obj = 0.0;
        for x2 in 0..problem.n2 {
            for y in 0..problem.ny {
                obj += problem.objective[problem.flat(x1, x2, y)] * block[x2][y];
            }
        }
        best.0 = best.0.min(obj);
        best.1 = best.1.max(obj);
        return;
    }
    let (x2, y) = free[depth];
    // zero-probability atoms are irrelevant: fix them at the neutral value
    if problem.p_y[x1][x2][y] <= 0.0 {
        block[x2][y] = 1.0;
        recurse_block(problem, x1, grid, free, pinned, depth + 1, block, lo2, hi2, best);
        return;
    }
    for &g in grid {
        block[x2][y] = g;
        recurse_block(problem, x1, grid, free, pinned, depth + 1, block, lo2, hi2, best);
    }
}

/// A small random binary-support model, handy for demos and oracle tests.
pub fn random_binary_model(seed: u64) -> DiscreteT2Model {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut prob = |lo: f64, hi: f64| lo + (hi - lo) * rng.random::<f64>();
    let p1 = prob(0.25, 0.75);
    let model = DiscreteT2Model {
        x1_support: vec![0.0, 1.0],
        x2_support: vec![0.0, 1.0],
        y_support: vec![0.0, 1.0],
        p_x1: vec![p1, 1.0 - p1],
        pi1: (0..2).map(|_| prob(0.2, 0.8)).collect(),
        p_x2: (0..2)
            .map(|_| {
                (0..2)
                    .map(|_| {
                        let p = prob(0.15, 0.85);
                        vec![p, 1.0 - p]
                    })
                    .collect()
            })
            .collect(),
        pi2: (0..2)
            .map(|_| (0..2).map(|_| (0..2).map(|_| prob(0.2, 0.8)).collect()).collect())
            .collect(),
        p_y: (0..2)
            .map(|_| {
                (0..2)
                    .map(|_| {
                        (0..2)
                            .map(|_| {
                                (0..2)
                                    .map(|_| {
                                        let p = prob(0.1, 0.9);
                                        vec![p, 1.0 - p]
                                    })
                                    .collect()
                            })
                            .collect()
                    })
                    .collect()
            })
            .collect(),
    };
    debug_assert!(model.validate().is_ok());
    model
}
