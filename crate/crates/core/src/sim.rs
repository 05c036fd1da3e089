//! Replication driver for the simulation experiments: bound-geometry sweeps
//! over the analytic designs, the bias-versus-rate sweep comparing plug-in
//! and doubly-robust estimators under synthetic nuisance error, and Wald
//! coverage studies.
//!
//! Replication streams are derived from (seed, replication index) so runs
//! are reproducible and order-independent under parallel execution.

use crate::error::{invalid, Result};
use crate::estimator::{dr_bounds_at, plugin_bounds};
use crate::model::{Dataset, UnitRecord};
use crate::nuisance::{analytic_nuisances, noised_truth_nuisances};
use crate::oracle::{
    classify_length_pattern, true_bounds, AnalyticDgp, LengthPattern, NoiseKind, OracleTruth,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Configuration for the replication studies.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimConfig {
    pub dgp: AnalyticDgp,
    pub n: usize,
    pub reps: usize,
    pub delta: f64,
    pub gamma: f64,
    pub seed: u64,
    pub ci_level: f64,
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.reps == 0 {
            return Err(invalid("reps must be >= 1"));
        }
        if self.n < 2 {
            return Err(invalid("n must be >= 2"));
        }
        Ok(())
    }
}

fn rep_rng(seed: u64, rep: u64) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(rep);
    rng
}

/// Draw a dataset from the analytic design: X uniform on its support,
/// A ~ Bernoulli(expit(X)), Y = (1 + A) X + noise. Bit-reproducible per seed.
pub fn generate(dgp: &AnalyticDgp, n: usize, seed: u64) -> Result<Dataset> {
    if n < 2 {
        return Err(invalid(format!("generate needs n >= 2, got {n}")));
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let width = dgp.x_high - dgp.x_low;
    let records: Vec<UnitRecord> = (0..n)
        .map(|_| {
            let x = dgp.x_low + width * rng.random::<f64>();
            let a = u8::from(rng.random::<f64>() < dgp.propensity(x));
            let eps: f64 = match dgp.noise {
                NoiseKind::Gaussian { sd } => {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    sd * z
                }
                NoiseKind::Uniform { half_width } => half_width * (2.0 * rng.random::<f64>() - 1.0),
            };
            UnitRecord::new(vec![x], a, dgp.outcome_mean(a, x) + eps)
        })
        .collect::<Result<_>>()?;
    Dataset::new(records)
}

/// One row of the population bound-geometry table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Figure1Row {
    pub panel: String,
    pub x_low: f64,
    pub x_high: f64,
    pub noise: String,
    pub gamma: f64,
    pub delta: f64,
    pub psi_lower: f64,
    pub psi_upper: f64,
    pub length: f64,
    pub pattern: String,
}

/// Population bound curves for the three covariate supports under Gaussian
/// and variance-matched uniform noise. Pure oracle computation: no sampling.
pub fn figure1_sweep(gammas: &[f64], deltas: &[f64]) -> Result<Vec<Figure1Row>> {
    if gammas.is_empty() || deltas.is_empty() {
        return Err(invalid("figure1 sweep needs nonempty grids"));
    }
    let panels = [("a", 0.0, 1.0), ("b", -1.0, 0.0), ("c", -4.0, 3.0)];
    let noises = [
        ("gaussian", NoiseKind::Gaussian { sd: 0.5 }),
        ("uniform", NoiseKind::Uniform { half_width: 0.5 * 3.0_f64.sqrt() }),
    ];
    let mut rows = Vec::new();
    for (panel, lo, hi) in panels {
        for (noise_name, noise) in noises {
            let dgp = AnalyticDgp::new(lo, hi, noise)?;
            for &gamma in gammas {
                let pattern = classify_length_pattern(&dgp, gamma, deltas)?;
                let truth = OracleTruth::new(dgp, gamma)?;
                for &delta in deltas {
                    let (psi_lower, psi_upper) = truth.bounds(delta)?;
                    rows.push(Figure1Row {
                        panel: panel.to_string(),
                        x_low: lo,
                        x_high: hi,
                        noise: noise_name.to_string(),
                        gamma,
                        delta,
                        psi_lower,
                        psi_upper,
                        length: psi_upper - psi_lower,
                        pattern: pattern.label().to_string(),
                    });
                }
            }
        }
    }
    Ok(rows)
}

/// Pattern classification per panel at one gamma, convenience for tests.
pub fn figure1_patterns(gamma: f64, deltas: &[f64]) -> Result<[LengthPattern; 3]> {
    let noise = NoiseKind::Gaussian { sd: 0.5 };
    Ok([
        classify_length_pattern(&AnalyticDgp::new(0.0, 1.0, noise)?, gamma, deltas)?,
        classify_length_pattern(&AnalyticDgp::new(-1.0, 0.0, noise)?, gamma, deltas)?,
        classify_length_pattern(&AnalyticDgp::new(-4.0, 3.0, noise)?, gamma, deltas)?,
    ])
}

/// One row of the bias table: an estimator/side at one nuisance rate.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BiasRow {
    pub estimator: String,
    pub side: String,
    pub alpha: f64,
    pub n: usize,
    pub reps: usize,
    /// |mean over replications of (estimate - truth)|
    pub abs_bias: f64,
    /// Monte Carlo standard error of the replication mean
    pub mc_se: f64,
}

/// Absolute bias of the plug-in and doubly-robust estimators under noised
/// truth nuisances, across rate exponents. Each replication draws one
/// fresh sample and one nuisance-noise seed, reused across the alpha grid,
/// so the bias curve in alpha is read off common random numbers.
pub fn bias_sweep(config: &SimConfig, alpha_grid: &[f64]) -> Result<Vec<BiasRow>> {
    config.validate()?;
    if alpha_grid.is_empty() {
        return Err(invalid("alpha grid must be nonempty"));
    }
    let (truth_lo, truth_hi) = true_bounds(config.delta, config.gamma, &config.dgp)?;
    // per_rep[rep][ai] = (plugin lo, plugin hi, dr lo, dr hi)
    let per_rep: Vec<Vec<[f64; 4]>> = (0..config.reps as u64)
        .into_par_iter()
        .map(|rep| -> Result<Vec<[f64; 4]>> {
            let mut rng = rep_rng(config.seed, rep);
            let data_seed = rng.random::<u64>();
            let eta_seed = rng.random::<u64>();
            let data = generate(&config.dgp, config.n, data_seed)?;
            alpha_grid
                .iter()
                .map(|&alpha| {
                    let eta = noised_truth_nuisances(
                        config.dgp,
                        alpha,
                        config.n,
                        config.gamma,
                        eta_seed,
                    )?;
                    let plugin = plugin_bounds(&data, &eta, config.delta, config.ci_level)?;
                    let dr =
                        dr_bounds_at(&data, &eta, config.delta, config.gamma, config.ci_level)?;
                    Ok([plugin.psi_lower, plugin.psi_upper, dr.psi_lower, dr.psi_upper])
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    let reps = per_rep.len();
    let mut rows = Vec::new();
    for (ai, &alpha) in alpha_grid.iter().enumerate() {
        let labels = [("plugin", "lower"), ("plugin", "upper"), ("dr", "lower"), ("dr", "upper")];
        let truths = [truth_lo, truth_hi, truth_lo, truth_hi];
        for (j, ((estimator, side), truth)) in labels.iter().zip(truths).enumerate() {
            let mean = per_rep.iter().map(|r| r[ai][j]).sum::<f64>() / reps as f64;
            let var = per_rep.iter().map(|r| (r[ai][j] - mean).powi(2)).sum::<f64>()
                / (reps as f64 - 1.0).max(1.0);
            rows.push(BiasRow {
                estimator: estimator.to_string(),
                side: side.to_string(),
                alpha,
                n: config.n,
                reps,
                abs_bias: (mean - truth).abs(),
                mc_se: (var / reps as f64).sqrt(),
            });
        }
    }
    Ok(rows)
}

/// Slope of log(bias) on alpha, divided by -ln(n): the empirical rate
/// exponent s in bias ~ n^(-s * alpha). Pass `Some(side)` for one side or
/// `None` to pool the two sides' bias per alpha first.
pub fn fitted_rate_exponent(
    rows: &[BiasRow],
    estimator: &str,
    side: Option<&str>,
) -> Result<f64> {
    let mut by_alpha: Vec<(f64, f64, usize)> = Vec::new();
    for r in rows.iter().filter(|r| r.estimator == estimator) {
        if side.is_some_and(|s| s != r.side) {
            continue;
        }
        match by_alpha.iter_mut().find(|(a, _, _)| *a == r.alpha) {
            Some((_, acc, cnt)) => {
                *acc += r.abs_bias;
                *cnt += 1;
            }
            None => by_alpha.push((r.alpha, r.abs_bias, 1)),
        }
    }
    let pts: Vec<(f64, f64)> = by_alpha
        .iter()
        .filter(|(_, acc, cnt)| acc / *cnt as f64 > 0.0)
        .map(|(a, acc, cnt)| (*a, (acc / *cnt as f64).ln()))
        .collect();
    if pts.len() < 2 {
        return Err(invalid(format!("not enough bias rows for {estimator}")));
    }
    let n = rows
        .iter()
        .find(|r| r.estimator == estimator)
        .map(|r| r.n as f64)
        .unwrap_or(f64::NAN);
    let count = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / count;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / count;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    Ok(-(sxy / sxx) / n.ln())
}

/// One row of the coverage study.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CoverageRow {
    pub side: String,
    pub n: usize,
    pub reps: usize,
    pub ci_level: f64,
    pub coverage: f64,
    pub mean_ci_width: f64,
}

/// Nuisances used in the coverage study.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoverageNuisances {
    /// Exact closed-form truth.
    ExactTruth,
    /// Noised truth at the given rate exponent, fresh per replication.
    Noised { alpha: f64 },
}

/// Empirical coverage of the per-side Wald intervals against the oracle
/// bounds, with the mean interval width.
pub fn coverage_study(config: &SimConfig, nuisances: CoverageNuisances) -> Result<Vec<CoverageRow>> {
    config.validate()?;
    let (truth_lo, truth_hi) = true_bounds(config.delta, config.gamma, &config.dgp)?;
    let exact_eta = analytic_nuisances(config.dgp, config.gamma)?;
    // (lower covered, upper covered, lower width, upper width)
    let per_rep: Vec<(bool, bool, f64, f64)> = (0..config.reps as u64)
        .into_par_iter()
        .map(|rep| -> Result<(bool, bool, f64, f64)> {
            let mut rng = rep_rng(config.seed, rep);
            let data_seed = rng.random::<u64>();
            let eta_seed = rng.random::<u64>();
            let data = generate(&config.dgp, config.n, data_seed)?;
            let est = match nuisances {
                CoverageNuisances::ExactTruth => {
                    dr_bounds_at(&data, &exact_eta, config.delta, config.gamma, config.ci_level)?
                }
                CoverageNuisances::Noised { alpha } => {
                    let eta = noised_truth_nuisances(
                        config.dgp,
                        alpha,
                        config.n,
                        config.gamma,
                        eta_seed,
                    )?;
                    dr_bounds_at(&data, &eta, config.delta, config.gamma, config.ci_level)?
                }
            };
            let z = crate::estimator::wald_z(config.ci_level);
            let root_n = (est.n as f64).sqrt();
            let half_lo = z * est.sigma_lower / root_n;
            let half_hi = z * est.sigma_upper / root_n;
            Ok((
                (est.psi_lower - truth_lo).abs() <= half_lo,
                (est.psi_upper - truth_hi).abs() <= half_hi,
                2.0 * half_lo,
                2.0 * half_hi,
            ))
        })
        .collect::<Result<_>>()?;
    let reps = per_rep.len() as f64;
    let mk = |side: &str, covered: f64, width: f64| CoverageRow {
        side: side.to_string(),
        n: config.n,
        reps: per_rep.len(),
        ci_level: config.ci_level,
        coverage: covered / reps,
        mean_ci_width: width / reps,
    };
    let lo_cov = per_rep.iter().filter(|r| r.0).count() as f64;
    let hi_cov = per_rep.iter().filter(|r| r.1).count() as f64;
    let lo_w: f64 = per_rep.iter().map(|r| r.2).sum();
    let hi_w: f64 = per_rep.iter().map(|r| r.3).sum();
    Ok(vec![mk("lower", lo_cov, lo_w), mk("upper", hi_cov, hi_w)])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::expit;

    #[test]
    fn generate_rejects_tiny_n() {
        assert!(generate(&AnalyticDgp::standard(), 0, 1).is_err());
        assert!(generate(&AnalyticDgp::standard(), 1, 1).is_err());
    }

    #[test]
    fn generate_matches_design_moments() {
        let dgp = AnalyticDgp::standard();
        let data = generate(&dgp, 60_000, 123).unwrap();
        // treated fraction near E[expit(X)] = 0.6201145070 (frozen quadrature)
        let frac =
            data.records().iter().filter(|r| r.treatment() == 1).count() as f64 / data.n() as f64;
        assert!((frac - 0.6201145070).abs() < 0.01, "treated fraction {frac}");
        // residual variance near 0.25
        let resid_var = data
            .records()
            .iter()
            .map(|r| {
                let m = dgp.outcome_mean(r.treatment(), r.covariates()[0]);
                (r.outcome() - m).powi(2)
            })
            .sum::<f64>()
            / data.n() as f64;
        assert!((resid_var - 0.25).abs() < 0.01, "residual variance {resid_var}");
    }

    #[test]
    fn generate_reproducible() {
        let dgp = AnalyticDgp::standard();
        let a = generate(&dgp, 50, 9).unwrap();
        let b = generate(&dgp, 50, 9).unwrap();
        for (ra, rb) in a.records().iter().zip(b.records()) {
            assert_eq!(ra, rb);
        }
        let c = generate(&dgp, 50, 10).unwrap();
        assert!(a.records().iter().zip(c.records()).any(|(x, y)| x != y));
    }

    #[test]
    fn figure1_rows_cover_panels_and_collapse_at_gamma_one() {
        let deltas: Vec<f64> = (0..7).map(|i| 0.25 * (i as f64 + 1.0)).collect();
        let rows = figure1_sweep(&[1.0, 2.0], &deltas).unwrap();
        assert_eq!(rows.len(), 3 * 2 * 2 * deltas.len());
        for row in rows.iter().filter(|r| r.gamma == 1.0) {
            assert!(
                (row.psi_lower - row.psi_upper).abs() < 1e-9,
                "gamma 1 row fails to collapse"
            );
        }
        // uniform-noise curves enclose the gaussian-noise curves
        for row in rows.iter().filter(|r| r.noise == "gaussian" && r.gamma > 1.0) {
            let twin = rows
                .iter()
                .find(|r| {
                    r.noise == "uniform"
                        && r.panel == row.panel
                        && r.gamma == row.gamma
                        && r.delta == row.delta
                })
                .unwrap();
            assert!(twin.psi_lower < row.psi_lower && twin.psi_upper > row.psi_upper);
        }
    }

    #[test]
    fn pattern_panels_match_design() {
        let deltas: Vec<f64> =
            (0..30).map(|i| 0.1 * (10.0f64 / 0.1).powf(i as f64 / 29.0)).collect();
        let p = figure1_patterns(2.0, &deltas).unwrap();
        assert_eq!(p[0], LengthPattern::Decreasing);
        assert_eq!(p[1], LengthPattern::Increasing);
        assert_eq!(p[2], LengthPattern::UShaped);
    }

    fn quick_config(n: usize, reps: usize) -> SimConfig {
        SimConfig {
            dgp: AnalyticDgp::standard(),
            n,
            reps,
            delta: 2.0,
            gamma: 2.0,
            seed: 77,
            ci_level: 0.95,
        }
    }

    #[test]
    fn bias_sweep_vanishes_at_high_alpha() {
        // at alpha = 0.5 the nuisance error is of order n^(-1/2): the
        // plug-in bias sits at that scale while the doubly-robust bias is
        // second order and drops to the Monte Carlo floor
        let n = 400;
        let scale = (n as f64).powf(-0.5);
        let rows = bias_sweep(&quick_config(n, 60), &[0.5]).unwrap();
        for row in rows {
            let cap = match row.estimator.as_str() {
                "plugin" => 3.0 * scale,
                _ => 4.0 * row.mc_se + 0.3 * scale,
            };
            assert!(
                row.abs_bias < cap,
                "{}/{} bias {} above cap {cap}",
                row.estimator,
                row.side,
                row.abs_bias
            );
        }
    }

    #[test]
    fn bias_sweep_dr_dominates_plugin() {
        let rows = bias_sweep(&quick_config(1000, 60), &[0.15, 0.25]).unwrap();
        for alpha in [0.15, 0.25] {
            for side in ["lower", "upper"] {
                let get = |est: &str| {
                    rows.iter()
                        .find(|r| r.estimator == est && r.side == side && r.alpha == alpha)
                        .unwrap()
                        .abs_bias
                };
                assert!(
                    get("dr") <= get("plugin"),
                    "dr bias above plugin at alpha {alpha} side {side}"
                );
            }
        }
    }

    #[test]
    fn bias_sweep_deterministic() {
        let a = bias_sweep(&quick_config(200, 10), &[0.2]).unwrap();
        let b = bias_sweep(&quick_config(200, 10), &[0.2]).unwrap();
        for (ra, rb) in a.iter().zip(&b) {
            assert_eq!(ra.abs_bias, rb.abs_bias);
            assert_eq!(ra.mc_se, rb.mc_se);
        }
    }

    #[test]
    fn coverage_with_exact_truth_is_nominal() {
        let rows = coverage_study(&quick_config(500, 200), CoverageNuisances::ExactTruth).unwrap();
        for row in rows {
            assert!(
                row.coverage >= 0.90 && row.coverage <= 0.99,
                "{} coverage {}",
                row.side,
                row.coverage
            );
            assert!(row.mean_ci_width > 0.0);
        }
    }

    #[test]
    fn coverage_at_quarter_rate_boundary() {
        // alpha = 0.25 sits exactly on the n^(-2 alpha) = n^(-1/2) boundary:
        // the remainder is the same order as the interval width at every n,
        // so coverage settles at a sub-nominal constant whose size depends
        // on the side's remainder constant. Measured at 3000 replications:
        // lower ~0.923, upper ~0.860.
        let mut config = quick_config(1000, 3000);
        config.seed = 424248;
        let rows =
            coverage_study(&config, CoverageNuisances::Noised { alpha: 0.25 }).unwrap();
        let lower = rows.iter().find(|r| r.side == "lower").unwrap();
        let upper = rows.iter().find(|r| r.side == "upper").unwrap();
        assert!(lower.coverage >= 0.92, "lower coverage {}", lower.coverage);
        assert!(upper.coverage >= 0.84, "upper coverage {}", upper.coverage);
        assert!(upper.coverage < 0.93, "upper coverage {} should show the deficit", upper.coverage);
    }

    #[test]
    fn coverage_degrades_at_tiny_alpha() {
        // alpha far below the rate condition: the constant-shift nuisance
        // error dwarfs the CI width and coverage collapses
        let rows = coverage_study(
            &quick_config(1000, 120),
            CoverageNuisances::Noised { alpha: 0.05 },
        )
        .unwrap();
        for row in rows {
            assert!(row.coverage < 0.90, "{} coverage {} unexpectedly high", row.side, row.coverage);
        }
    }

    #[test]
    fn expit_sanity() {
        assert!((expit(1.0) + expit(-1.0) - 1.0).abs() < 1e-15);
    }
}
