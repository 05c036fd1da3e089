//! Closed-form ground truth for the simulation design: the tilted-moment
//! root h(gamma), true nuisance functions, true effect bounds, bound lengths
//! and their delta-derivative, and the bound-length pattern classifier.
//!
//! Every estimator in the crate is tested against this module.

use crate::error::{invalid, Error, Result};
use crate::model::{check_delta, check_gamma};
use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

/// Outcome noise: Gaussian or uniform, both mean zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum NoiseKind {
    Gaussian { sd: f64 },
    Uniform { half_width: f64 },
}

impl NoiseKind {
    pub fn validate(&self) -> Result<()> {
        let s = match self {
            NoiseKind::Gaussian { sd } => *sd,
            NoiseKind::Uniform { half_width } => *half_width,
        };
        if !(s.is_finite() && s > 0.0) {
            return Err(invalid(format!("noise scale must be positive, got {s}")));
        }
        Ok(())
    }

    /// Standard deviation of the noise.
    pub fn sd(&self) -> f64 {
        match self {
            NoiseKind::Gaussian { sd } => *sd,
            NoiseKind::Uniform { half_width } => half_width / 3.0_f64.sqrt(),
        }
    }

    /// P(noise < t).
    pub fn cdf(&self, t: f64) -> f64 {
        match self {
            NoiseKind::Gaussian { sd } => std_normal().cdf(t / sd),
            NoiseKind::Uniform { half_width } => ((t + half_width) / (2.0 * half_width)).clamp(0.0, 1.0),
        }
    }
}

/// Data-generating process: X ~ Unif(x_low, x_high), pi(x) = expit(x),
/// A ~ Bernoulli(pi(X)), Y = (1 + A) X + noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnalyticDgp {
    pub x_low: f64,
    pub x_high: f64,
    pub noise: NoiseKind,
}

impl AnalyticDgp {
    pub fn new(x_low: f64, x_high: f64, noise: NoiseKind) -> Result<Self> {
        if !(x_low.is_finite() && x_high.is_finite() && x_low < x_high) {
            return Err(invalid(format!("need x_low < x_high, got [{x_low}, {x_high}]")));
        }
        noise.validate()?;
        Ok(Self { x_low, x_high, noise })
    }

    /// The standard design: X ~ Unif(0,1) with N(0, 0.5^2) noise.
    pub fn standard() -> Self {
        Self { x_low: 0.0, x_high: 1.0, noise: NoiseKind::Gaussian { sd: 0.5 } }
    }

    pub fn propensity(&self, x: f64) -> f64 {
        expit(x)
    }

    pub fn outcome_mean(&self, arm: u8, x: f64) -> f64 {
        (1.0 + f64::from(arm)) * x
    }
}

/// Standard logistic function.
pub fn expit(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Inverse of `expit` on (0,1).
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("unit normal")
}

/// Root h of E[(xi - h)_+ - gamma (xi - h)_-] = 0 for standard normal xi,
/// by bisection on phi(h) - h(1 - Phi(h)) - gamma (h Phi(h) + phi(h)).
pub fn solve_h_standard_normal(gamma: f64) -> Result<f64> {
    check_gamma(gamma)?;
    if gamma == 1.0 {
        return Ok(0.0);
    }
    let n = std_normal();
    let moment = |h: f64| {
        let plus = n.pdf(h) - h * (1.0 - n.cdf(h));
        let minus = h * n.cdf(h) + n.pdf(h);
        plus - gamma * minus
    };
    let (mut lo, mut hi) = (-40.0_f64, 0.0_f64);
    if moment(lo) <= 0.0 {
        return Err(Error::Numeric(format!("h bracket failed for gamma {gamma}")));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if moment(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// The raw location shift solving E[(eps - h)_+ - gamma (eps - h)_-] = 0 for
/// the given noise. Gaussian noise rescales the standardized root by the sd;
/// uniform noise has the closed form b(1 - sqrt(gamma)) / (1 + sqrt(gamma)).
pub fn solve_h(gamma: f64, noise: NoiseKind) -> Result<f64> {
    check_gamma(gamma)?;
    noise.validate()?;
    match noise {
        NoiseKind::Gaussian { sd } => Ok(sd * solve_h_standard_normal(gamma)?),
        NoiseKind::Uniform { half_width } => {
            let r = gamma.sqrt();
            Ok(half_width * (1.0 - r) / (1.0 + r))
        }
    }
}

/// Closed-form truth for one (dgp, gamma) pair.
#[derive(Debug, Clone, Copy)]
pub struct OracleTruth {
    dgp: AnalyticDgp,
    gamma: f64,
    /// Raw location shift: theta_a^- = mu_a + h_raw, theta_a^+ = mu_a - h_raw.
    h_raw: f64,
    /// P(noise < h_raw), shared by both arms.
    cdf_at_h: f64,
}

impl OracleTruth {
    pub fn new(dgp: AnalyticDgp, gamma: f64) -> Result<Self> {
        check_gamma(gamma)?;
        let h_raw = solve_h(gamma, dgp.noise)?;
        let cdf_at_h = dgp.noise.cdf(h_raw);
        Ok(Self { dgp, gamma, h_raw, cdf_at_h })
    }

    pub fn dgp(&self) -> AnalyticDgp {
        self.dgp
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn h_raw(&self) -> f64 {
        self.h_raw
    }

    /// P(noise < h_raw), the CDF level behind both nu weights.
    pub fn cdf_at_h(&self) -> f64 {
        self.cdf_at_h
    }

    /// nu rebuilt from an arbitrary CDF level, matching the closed forms.
    pub fn nu_from_cdf_level(&self, side: crate::bounds::BoundSide, cdf: f64) -> f64 {
        match side {
            crate::bounds::BoundSide::Lower => 1.0 + (self.gamma - 1.0) * cdf,
            crate::bounds::BoundSide::Upper => 1.0 + (1.0 / self.gamma - 1.0) * (1.0 - cdf),
        }
    }

    pub fn propensity(&self, x: f64) -> f64 {
        self.dgp.propensity(x)
    }

    pub fn outcome_mean(&self, arm: u8, x: f64) -> f64 {
        self.dgp.outcome_mean(arm, x)
    }

    pub fn theta(&self, arm: u8, side: crate::bounds::BoundSide, x: f64) -> f64 {
        let sign = match side {
            crate::bounds::BoundSide::Lower => 1.0,
            crate::bounds::BoundSide::Upper => -1.0,
        };
        self.dgp.outcome_mean(arm, x) + sign * self.h_raw
    }

    /// nu is covariate-free in this design: 1 + (tilt - 1) P(noise < h) on
    /// the lower side, with the symmetric-noise analogue on the upper side.
    pub fn nu(&self, side: crate::bounds::BoundSide) -> f64 {
        match side {
            crate::bounds::BoundSide::Lower => 1.0 + (self.gamma - 1.0) * self.cdf_at_h,
            crate::bounds::BoundSide::Upper => {
                1.0 + (1.0 / self.gamma - 1.0) * (1.0 - self.cdf_at_h)
            }
        }
    }

    /// True incremental effect psi(delta) by quadrature.
    pub fn psi(&self, delta: f64) -> Result<f64> {
        true_psi(delta, &self.dgp)
    }

    /// True bounds (psi^-, psi^+) by quadrature.
    pub fn bounds(&self, delta: f64) -> Result<(f64, f64)> {
        check_delta(delta)?;
        let lo = self.integrate(|x| self.bound_integrand(x, delta, crate::bounds::BoundSide::Lower))?;
        let hi = self.integrate(|x| self.bound_integrand(x, delta, crate::bounds::BoundSide::Upper))?;
        Ok((lo, hi))
    }

    fn bound_integrand(&self, x: f64, delta: f64, side: crate::bounds::BoundSide) -> f64 {
        let pi = self.propensity(x);
        let q = delta * pi / (delta * pi + 1.0 - pi);
        q * pi * self.outcome_mean(1, x)
            + q * (1.0 - pi) * self.theta(1, side, x)
            + (1.0 - q) * (1.0 - pi) * self.outcome_mean(0, x)
            + (1.0 - q) * pi * self.theta(0, side, x)
    }

    /// Bound length and its derivative in delta, using the specialized forms
    /// for equal conditional gaps theta^+ - theta^- = -2 h_raw.
    pub fn bound_length_and_derivative(&self, delta: f64) -> Result<(f64, f64)> {
        check_delta(delta)?;
        let gap = -2.0 * self.h_raw;
        let len = gap
            * self.integrate(|x| {
                let pi = self.propensity(x);
                pi * (1.0 - pi) * (1.0 + delta) / (delta * pi + 1.0 - pi)
            })?;
        let deriv = gap
            * self.integrate(|x| {
                let pi = self.propensity(x);
                pi * (1.0 - pi) * (1.0 - 2.0 * pi) / (delta * pi + 1.0 - pi).powi(2)
            })?;
        Ok((len, deriv))
    }

    /// Derivative of psi in delta: E[pi (1-pi) (mu1 - mu0) / (delta pi + 1 - pi)^2].
    pub fn dpsi_ddelta(&self, delta: f64) -> Result<f64> {
        check_delta(delta)?;
        self.integrate(|x| {
            let pi = self.propensity(x);
            let tau = self.outcome_mean(1, x) - self.outcome_mean(0, x);
            pi * (1.0 - pi) * tau / (delta * pi + 1.0 - pi).powi(2)
        })
    }

    /// Mean-over-X of (min_a mu_a^-, max_a mu_a^+): the mixture envelope.
    pub fn mixture_envelope(&self) -> Result<(f64, f64)> {
        let lo = self.integrate(|x| {
            let pi = self.propensity(x);
            let m1 = pi * self.outcome_mean(1, x)
                + (1.0 - pi) * self.theta(1, crate::bounds::BoundSide::Lower, x);
            let m0 = (1.0 - pi) * self.outcome_mean(0, x)
                + pi * self.theta(0, crate::bounds::BoundSide::Lower, x);
            m1.min(m0)
        })?;
        let hi = self.integrate(|x| {
            let pi = self.propensity(x);
            let m1 = pi * self.outcome_mean(1, x)
                + (1.0 - pi) * self.theta(1, crate::bounds::BoundSide::Upper, x);
            let m0 = (1.0 - pi) * self.outcome_mean(0, x)
                + pi * self.theta(0, crate::bounds::BoundSide::Upper, x);
            m1.max(m0)
        })?;
        Ok((lo, hi))
    }

    fn integrate<F: Fn(f64) -> f64>(&self, f: F) -> Result<f64> {
        let width = self.dgp.x_high - self.dgp.x_low;
        let v = adaptive_simpson(&f, self.dgp.x_low, self.dgp.x_high, QUAD_TOL * width)?;
        Ok(v / width)
    }
}

/// True incremental effect: E over X of the tilted mean outcome.
pub fn true_psi(delta: f64, dgp: &AnalyticDgp) -> Result<f64> {
    check_delta(delta)?;
    let width = dgp.x_high - dgp.x_low;
    let v = adaptive_simpson(
        &|x: f64| {
            let pi = dgp.propensity(x);
            (delta * pi * dgp.outcome_mean(1, x) + (1.0 - pi) * dgp.outcome_mean(0, x))
                / (delta * pi + 1.0 - pi)
        },
        dgp.x_low,
        dgp.x_high,
        QUAD_TOL * width,
    )?;
    Ok(v / width)
}

/// True bounds (psi^-, psi^+) at (delta, gamma).
pub fn true_bounds(delta: f64, gamma: f64, dgp: &AnalyticDgp) -> Result<(f64, f64)> {
    OracleTruth::new(*dgp, gamma)?.bounds(delta)
}

/// Sign pattern of the bound length over a delta grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LengthPattern {
    Decreasing,
    Increasing,
    UShaped,
    Flat,
}

impl LengthPattern {
    pub fn label(self) -> &'static str {
        match self {
            LengthPattern::Decreasing => "decreasing",
            LengthPattern::Increasing => "increasing",
            LengthPattern::UShaped => "u_shaped",
            LengthPattern::Flat => "flat",
        }
    }
}

const PATTERN_TOL: f64 = 1e-10;

/// Classify the bound-length pattern from finite differences of L over the
/// grid. Differences within 1e-10 of zero are treated as flat.
pub fn classify_length_pattern(
    dgp: &AnalyticDgp,
    gamma: f64,
    delta_grid: &[f64],
) -> Result<LengthPattern> {
    if delta_grid.len() < 2 {
        return Err(invalid("pattern classification needs at least two deltas"));
    }
    let truth = OracleTruth::new(*dgp, gamma)?;
    let lengths: Vec<f64> = delta_grid
        .iter()
        .map(|&d| truth.bound_length_and_derivative(d).map(|(l, _)| l))
        .collect::<Result<_>>()?;
    let diffs: Vec<f64> = lengths.windows(2).map(|w| w[1] - w[0]).collect();
    let signs: Vec<i8> = diffs
        .iter()
        .map(|&d| {
            if d.abs() <= PATTERN_TOL {
                0
            } else if d > 0.0 {
                1
            } else {
                -1
            }
        })
        .collect();
    if signs.iter().all(|&s| s == 0) {
        return Ok(LengthPattern::Flat);
    }
    if signs.iter().all(|&s| s <= 0) {
        return Ok(LengthPattern::Decreasing);
    }
    if signs.iter().all(|&s| s >= 0) {
        return Ok(LengthPattern::Increasing);
    }
    // decreasing run followed by an increasing run
    let first_up = signs.iter().position(|&s| s > 0).unwrap();
    if signs[..first_up].iter().all(|&s| s <= 0) && signs[first_up..].iter().all(|&s| s >= 0) {
        return Ok(LengthPattern::UShaped);
    }
    Err(Error::Numeric("bound-length pattern is not monotone or u-shaped on this grid".into()))
}

const QUAD_TOL: f64 = 1e-8;

/// Adaptive Simpson quadrature with absolute tolerance.
///
/// The first few levels subdivide unconditionally: the |S2 - S1|/15 error
/// estimate is only trustworthy once the panels are in the asymptotic
/// regime, and coarse panels can otherwise accept with errors well above
/// the tolerance.
pub(crate) fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> Result<f64> {
    let c = 0.5 * (a + b);
    let (fa, fb, fc) = (f(a), f(b), f(c));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fc + fb);
    simpson_step(f, a, b, fa, fb, fc, whole, tol, 60, 5)
}

#[allow(clippy::too_many_arguments)]
fn simpson_step<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fb: f64,
    fc: f64,
    whole: f64,
    tol: f64,
    depth: usize,
    force: usize,
) -> Result<f64> {
    let c = 0.5 * (a + b);
    let d = 0.5 * (a + c);
    let e = 0.5 * (c + b);
    let (fd, fe) = (f(d), f(e));
    let left = (c - a) / 6.0 * (fa + 4.0 * fd + fc);
    let right = (b - c) / 6.0 * (fc + 4.0 * fe + fb);
    let delta = left + right - whole;
    if force == 0 && delta.abs() <= 15.0 * tol {
        return Ok(left + right + delta / 15.0);
    }
    if depth == 0 {
        return Err(Error::Numeric("quadrature failed to converge".into()));
    }
    let next_force = force.saturating_sub(1);
    let l = simpson_step(f, a, c, fa, fc, fd, left, 0.5 * tol, depth - 1, next_force)?;
    let r = simpson_step(f, c, b, fc, fb, fe, right, 0.5 * tol, depth - 1, next_force)?;
    Ok(l + r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bounds::BoundSide;
    use crate::model::tilt_propensity;

    #[test]
    fn h_examples() {
        assert_eq!(solve_h(1.0, NoiseKind::Gaussian { sd: 1.0 }).unwrap(), 0.0);
        // frozen from an independent quadrature + bisection script
        let h2 = solve_h(2.0, NoiseKind::Gaussian { sd: 1.0 }).unwrap();
        assert!((h2 - (-0.2760298048)).abs() < 1e-6, "h2 {h2}");
        let b = 0.5 * 3.0_f64.sqrt();
        let hu = solve_h(2.0, NoiseKind::Uniform { half_width: b }).unwrap();
        assert!((hu - (-0.1485864686)).abs() < 1e-9, "hu {hu}");
        assert!(solve_h(0.5, NoiseKind::Gaussian { sd: 1.0 }).is_err());
    }

    #[test]
    fn h_matches_monte_carlo_oracle() {
        use rand::SeedableRng;
        use rand_distr::Distribution;
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(31);
        for gamma in [1.5, 2.0, 3.0, 5.0] {
            let h = solve_h_standard_normal(gamma).unwrap();
            let n = 1_000_000;
            let (mut sum, mut sumsq) = (0.0_f64, 0.0_f64);
            for _ in 0..n {
                let z: f64 = rand_distr::StandardNormal.sample(&mut rng);
                let r = z - h;
                let v = if r >= 0.0 { r } else { gamma * r };
                sum += v;
                sumsq += v * v;
            }
            let mean = sum / n as f64;
            let se = ((sumsq / n as f64 - mean * mean) / n as f64).sqrt();
            assert!(mean.abs() <= 3.0 * se, "gamma {gamma}: |{mean}| > 3 x {se}");
        }
    }

    #[test]
    fn h_decreasing_in_gamma() {
        let mut prev = 0.0;
        for g in [1.0, 1.5, 2.0, 3.0, 5.0, 10.0] {
            let h = solve_h_standard_normal(g).unwrap();
            assert!(h <= prev + 1e-12, "h({g}) = {h} not below {prev}");
            prev = h;
        }
    }

    #[test]
    fn uniform_root_satisfies_moment_equation() {
        // (b-h)^2 = gamma (b+h)^2 at the closed-form root
        for gamma in [1.5, 2.0, 7.0] {
            let b = 0.9;
            let h = solve_h(gamma, NoiseKind::Uniform { half_width: b }).unwrap();
            assert!(((b - h).powi(2) - gamma * (b + h).powi(2)).abs() < 1e-10);
        }
    }

    #[test]
    fn true_nuisances_at_gamma_one() {
        let t = OracleTruth::new(AnalyticDgp::standard(), 1.0).unwrap();
        assert_eq!(t.theta(1, BoundSide::Lower, 0.3), t.outcome_mean(1, 0.3));
        assert_eq!(t.nu(BoundSide::Lower), 1.0);
        assert_eq!(t.nu(BoundSide::Upper), 1.0);
    }

    #[test]
    fn true_nuisances_formulas_at_gamma_two() {
        let t = OracleTruth::new(AnalyticDgp::standard(), 2.0).unwrap();
        let h_std = solve_h_standard_normal(2.0).unwrap();
        assert!((t.theta(1, BoundSide::Lower, 0.4) - (0.8 + 0.5 * h_std)).abs() < 1e-12);
        assert!((t.theta(0, BoundSide::Upper, 0.4) - (0.4 - 0.5 * h_std)).abs() < 1e-12);
        // frozen: Phi(h(2)) = 0.3912625871
        assert!((t.nu(BoundSide::Lower) - 1.3912625871).abs() < 1e-6);
        assert!((t.nu(BoundSide::Upper) - 0.6956312936).abs() < 1e-6);
        let (lo, hi) = t.nu_range_check();
        assert!(lo && hi);
    }

    impl OracleTruth {
        fn nu_range_check(&self) -> (bool, bool) {
            let l = self.nu(BoundSide::Lower);
            let u = self.nu(BoundSide::Upper);
            ((1.0..=self.gamma).contains(&l), (1.0 / self.gamma..=1.0).contains(&u))
        }
    }

    #[test]
    fn psi_limits_and_midpoint() {
        let dgp = AnalyticDgp::standard();
        // delta -> infinity gives E[mu_1] = 1; delta -> 0 gives E[mu_0] = 0.5
        assert!((true_psi(1e8, &dgp).unwrap() - 1.0).abs() < 1e-6);
        assert!((true_psi(1e-8, &dgp).unwrap() - 0.5).abs() < 1e-6);
        // frozen from the independent Simpson script
        assert!((true_psi(1.0, &dgp).unwrap() - 0.8294426505).abs() < 1e-8);

        let t = OracleTruth::new(dgp, 2.0).unwrap();
        let (lo, hi) = t.bounds(2.0).unwrap();
        assert!((lo - 0.8372227377).abs() < 1e-8, "lo {lo}");
        assert!((hi - 0.9558614582).abs() < 1e-8, "hi {hi}");
        // symmetric noise: midpoint equals psi
        assert!((0.5 * (lo + hi) - t.psi(2.0).unwrap()).abs() < 1e-8);
    }

    #[test]
    fn bounds_collapse_and_nest() {
        let dgp = AnalyticDgp::standard();
        let (lo, hi) = true_bounds(2.0, 1.0, &dgp).unwrap();
        assert!((lo - hi).abs() < 1e-9);
        let mut prev = (lo, hi);
        for gamma in [1.5, 2.0, 3.0] {
            let (l, h) = true_bounds(2.0, gamma, &dgp).unwrap();
            assert!(l <= prev.0 + 1e-9 && h >= prev.1 - 1e-9, "bounds fail to nest at {gamma}");
            prev = (l, h);
        }
    }

    #[test]
    fn uniform_noise_bounds_strictly_wider() {
        let g = AnalyticDgp::standard();
        let u = AnalyticDgp::new(
            0.0,
            1.0,
            NoiseKind::Uniform { half_width: 0.5 * 3.0_f64.sqrt() },
        )
        .unwrap();
        for delta in [0.1, 0.5, 1.0, 2.0, 10.0] {
            let (gl, gh) = true_bounds(delta, 2.0, &g).unwrap();
            let (ul, uh) = true_bounds(delta, 2.0, &u).unwrap();
            assert!(ul < gl && uh > gh, "uniform not wider at delta {delta}");
        }
    }

    #[test]
    fn length_limits() {
        let t = OracleTruth::new(AnalyticDgp::standard(), 2.0).unwrap();
        let gap = -2.0 * t.h_raw();
        // L -> L1 = gap * E[1 - pi] as delta -> inf; L -> L0 = gap * E[pi] as delta -> 0
        let e_pi = adaptive_simpson(&expit, 0.0, 1.0, 1e-10).unwrap();
        let (l_inf, _) = t.bound_length_and_derivative(1e3).unwrap();
        let (l_zero, _) = t.bound_length_and_derivative(1e-3).unwrap();
        assert!((l_inf - gap * (1.0 - e_pi)).abs() < 1e-3);
        assert!((l_zero - gap * e_pi).abs() < 1e-3);
    }

    #[test]
    fn length_flat_at_gamma_one() {
        let t = OracleTruth::new(AnalyticDgp::standard(), 1.0).unwrap();
        for delta in [0.2, 1.0, 5.0] {
            let (l, _) = t.bound_length_and_derivative(delta).unwrap();
            assert_eq!(l, 0.0);
        }
    }

    #[test]
    fn pattern_panels() {
        let grid: Vec<f64> = (0..40).map(|i| 0.1 * (10.0f64 / 0.1).powf(i as f64 / 39.0)).collect();
        let noise = NoiseKind::Gaussian { sd: 0.5 };
        let a = AnalyticDgp::new(0.0, 1.0, noise).unwrap();
        let b = AnalyticDgp::new(-1.0, 0.0, noise).unwrap();
        let c = AnalyticDgp::new(-4.0, 3.0, noise).unwrap();
        assert_eq!(classify_length_pattern(&a, 2.0, &grid).unwrap(), LengthPattern::Decreasing);
        assert_eq!(classify_length_pattern(&b, 2.0, &grid).unwrap(), LengthPattern::Increasing);
        assert_eq!(classify_length_pattern(&c, 2.0, &grid).unwrap(), LengthPattern::UShaped);
        assert_eq!(classify_length_pattern(&a, 1.0, &grid).unwrap(), LengthPattern::Flat);
    }

    #[test]
    fn derivative_sign_on_unit_interval() {
        // pi(x) >= 1/2 on [0,1], so dL/ddelta < 0 for every delta
        let t = OracleTruth::new(AnalyticDgp::standard(), 2.0).unwrap();
        for delta in [0.1, 1.0, 4.0, 10.0] {
            let (_, d) = t.bound_length_and_derivative(delta).unwrap();
            assert!(d < 0.0, "derivative {d} not negative at {delta}");
        }
    }

    #[test]
    fn dpsi_examples() {
        let t = OracleTruth::new(AnalyticDgp::standard(), 1.0).unwrap();
        // quadrature oracle at delta = 1: E[pi (1-pi) x]
        let want = adaptive_simpson(
            &|x: f64| {
                let p = expit(x);
                p * (1.0 - p) * x
            },
            0.0,
            1.0,
            1e-10,
        )
        .unwrap();
        assert!((t.dpsi_ddelta(1.0).unwrap() - want).abs() < 1e-8);
        assert!(t.dpsi_ddelta(1e9).unwrap() < 1e-8);
    }

    #[test]
    fn envelope_contains_true_bounds() {
        let t = OracleTruth::new(AnalyticDgp::standard(), 2.0).unwrap();
        let (env_lo, env_hi) = t.mixture_envelope().unwrap();
        for delta in [0.1, 1.0, 2.0, 10.0] {
            let (lo, hi) = t.bounds(delta).unwrap();
            assert!(env_lo <= lo + 1e-9 && hi <= env_hi + 1e-9);
        }
    }

    #[test]
    fn tilt_consistency_with_model_module() {
        // the oracle integrand and tilt_propensity must agree
        let pi = expit(0.3);
        let q = tilt_propensity(pi, 2.0).unwrap();
        assert!((q - 2.0 * pi / (2.0 * pi + 1.0 - pi)).abs() < 1e-15);
    }
}
