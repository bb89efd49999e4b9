//! Privacy accounting: budgets, composition, amplification by subsampling,
//! Gaussian-mechanism calibration and the noise planners used by the
//! private samplers. All logarithms are natural.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// An (ε, δ) differential-privacy guarantee.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrivacyBudget {
    epsilon: f64,
    delta: f64,
}

impl PrivacyBudget {
    pub fn new(epsilon: f64, delta: f64) -> Result<Self> {
        if !(epsilon >= 0.0) || epsilon.is_nan() {
            return Err(Error::argument(format!("epsilon must be nonnegative, got {epsilon}")));
        }
        if !(0.0..1.0).contains(&delta) {
            return Err(Error::argument(format!("delta must lie in [0, 1), got {delta}")));
        }
        Ok(PrivacyBudget { epsilon, delta })
    }

    /// Pure ε-DP.
    pub fn pure(epsilon: f64) -> Result<Self> {
        PrivacyBudget::new(epsilon, 0.0)
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    // sums may reach δ ≥ 1, which is a vacuous but well-defined guarantee
    fn sum_unchecked(a: PrivacyBudget, b: PrivacyBudget) -> PrivacyBudget {
        PrivacyBudget { epsilon: a.epsilon + b.epsilon, delta: a.delta + b.delta }
    }
}

/// Append-only record of the privacy events of a run.
#[derive(Debug, Clone, Default)]
pub struct PrivacyLedger {
    events: Vec<(String, PrivacyBudget)>,
}

impl PrivacyLedger {
    pub fn new() -> Self {
        PrivacyLedger::default()
    }

    pub fn record(&mut self, label: impl Into<String>, budget: PrivacyBudget) {
        self.events.push((label.into(), budget));
    }

    pub fn events(&self) -> &[(String, PrivacyBudget)] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Total under basic composition; (0, 0) for an empty ledger.
    pub fn total(&self) -> PrivacyBudget {
        self.events
            .iter()
            .fold(PrivacyBudget { epsilon: 0.0, delta: 0.0 }, |acc, (_, b)| PrivacyBudget::sum_unchecked(acc, *b))
    }

    /// Writes the ledger with running totals.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["event_label", "epsilon", "delta", "cumulative_epsilon", "cumulative_delta"])?;
        let (mut ce, mut cd) = (0.0, 0.0);
        for (label, b) in &self.events {
            ce += b.epsilon;
            cd += b.delta;
            w.write_record([
                label.clone(),
                b.epsilon.to_string(),
                b.delta.to_string(),
                ce.to_string(),
                cd.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Per-coordinate Gaussian noise planned for a private sampler, together
/// with the budget each iteration consumes and the number of iterations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoisePlan {
    pub sigma2: f64,
    pub per_iter_budget: PrivacyBudget,
    pub iterations: usize,
}

impl NoisePlan {
    /// Plan for one DP-SGLD step at step size `eta`.
    ///
    /// The per-iteration budget is the Gaussian-mechanism guarantee before
    /// amplification: ε₀ = ε·sqrt(N/(32·τ·T·ln(2/δ))), δ₀ = τδ/(2NT).
    pub fn sgld(n: usize, t: f64, tau: usize, l: f64, epsilon: f64, delta: f64, eta: f64) -> Result<Self> {
        let sigma2 = sgld_noise_variance(n, t, tau, l, epsilon, delta, eta)?;
        let (nf, tauf) = (n as f64, tau as f64);
        let eps0 = epsilon * (nf / (32.0 * tauf * t * (2.0 / delta).ln())).sqrt();
        let delta0 = tauf * delta / (2.0 * nf * t);
        Ok(NoisePlan {
            sigma2,
            per_iter_budget: PrivacyBudget::new(eps0, delta0)?,
            iterations: sgld_iterations(n, t, tau),
        })
    }
}

/// Number of minibatch iterations floor(N·T/τ) in T passes over N points.
pub fn sgld_iterations(n: usize, t: f64, tau: usize) -> usize {
    (n as f64 * t / tau as f64).floor() as usize
}

pub fn compose_basic(budgets: &[PrivacyBudget]) -> Result<PrivacyBudget> {
    if budgets.is_empty() {
        return Err(Error::argument("cannot compose an empty list of budgets"));
    }
    Ok(budgets.iter().copied().reduce(PrivacyBudget::sum_unchecked).unwrap())
}

/// k-fold adaptive composition of an (ε, δ) mechanism with slack δ'.
pub fn compose_advanced(epsilon: f64, delta: f64, k: usize, delta_prime: f64) -> Result<PrivacyBudget> {
    if !(epsilon >= 0.0 && delta >= 0.0) {
        return Err(Error::argument("epsilon and delta must be nonnegative"));
    }
    if k == 0 {
        return Err(Error::argument("composition needs k >= 1"));
    }
    if !(delta_prime > 0.0 && delta_prime < 1.0) {
        return Err(Error::argument(format!("delta' must lie in (0, 1), got {delta_prime}")));
    }
    let kf = k as f64;
    let eps = (2.0 * kf * (1.0 / delta_prime).ln()).sqrt() * epsilon + kf * epsilon * epsilon.exp_m1();
    Ok(PrivacyBudget { epsilon: eps, delta: kf * delta + delta_prime })
}

/// Amplification by running a mechanism on a uniformly random γ-fraction.
pub fn amplify_subsample(budget: PrivacyBudget, gamma: f64) -> Result<PrivacyBudget> {
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(Error::argument(format!("sampling fraction must lie in (0, 1], got {gamma}")));
    }
    if budget.epsilon >= 1.0 {
        return Err(Error::precondition(format!(
            "subsampling amplification requires epsilon < 1, got {}",
            budget.epsilon
        )));
    }
    Ok(PrivacyBudget { epsilon: 2.0 * gamma * budget.epsilon, delta: budget.delta })
}

/// Minimal noise scale of the Gaussian mechanism.
pub fn gaussian_sigma(sensitivity: f64, epsilon: f64, delta: f64) -> Result<f64> {
    if !(sensitivity > 0.0) {
        return Err(Error::argument(format!("sensitivity must be positive, got {sensitivity}")));
    }
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::precondition(format!("Gaussian mechanism needs epsilon in (0, 1), got {epsilon}")));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::precondition(format!("Gaussian mechanism needs delta in (0, 1), got {delta}")));
    }
    Ok(sensitivity * (2.0 * (1.25 / delta).ln()).sqrt() / epsilon)
}

/// Guarantee of a sampler whose output law is within `l1_gap` (total
/// variation) of an exact ε-DP sampler.
pub fn degrade_approx_sampling(epsilon: f64, l1_gap: f64) -> Result<PrivacyBudget> {
    if !(0.0..=1.0).contains(&l1_gap) {
        return Err(Error::argument(format!("l1 gap must lie in [0, 1], got {l1_gap}")));
    }
    Ok(PrivacyBudget { epsilon, delta: (1.0 + epsilon.exp()) * l1_gap })
}

/// ln(2.5NT/(τδ))·ln(2/δ), the logarithmic factor shared by the private
/// stochastic-gradient samplers.
pub fn sgmcmc_log_factor(n: usize, t: f64, tau: usize, delta: f64) -> f64 {
    (2.5 * n as f64 * t / (tau as f64 * delta)).ln() * (2.0 / delta).ln()
}

/// 128·N·T·L²/(τε²)·ln(2.5NT/(τδ))·ln(2/δ): the factor multiplying η² in
/// the private noise variance.
pub fn sgld_noise_coefficient(n: usize, t: f64, tau: usize, l: f64, epsilon: f64, delta: f64) -> f64 {
    128.0 * n as f64 * t * l * l / (tau as f64 * epsilon * epsilon) * sgmcmc_log_factor(n, t, tau, delta)
}

/// Per-coordinate noise variance of a DP-SGLD step at step size `eta`.
pub fn sgld_noise_variance(n: usize, t: f64, tau: usize, l: f64, epsilon: f64, delta: f64, eta: f64) -> Result<f64> {
    if n == 0 || tau == 0 {
        return Err(Error::argument("N and tau must be positive"));
    }
    if !(t > 0.0 && l > 0.0 && epsilon > 0.0 && eta > 0.0) || !l.is_finite() {
        return Err(Error::argument("T, L, epsilon and eta must be positive and finite"));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::argument(format!("delta must lie in (0, 1), got {delta}")));
    }
    let privacy = sgld_noise_coefficient(n, t, tau, l, epsilon, delta) * eta * eta;
    Ok(privacy.max(eta))
}

/// Smallest admissible number of passes for the DP-SGLD guarantee.
pub fn t_threshold(n: usize, tau: usize, epsilon: f64, delta: f64) -> f64 {
    epsilon * epsilon * n as f64 / (32.0 * tau as f64 * (2.0 / delta).ln())
}

pub fn check_t_condition(n: usize, t: f64, tau: usize, epsilon: f64, delta: f64) -> bool {
    t >= t_threshold(n, tau, epsilon, delta)
}

/// Noise scale s of the non-spherical Gaussian mechanism.
pub fn nonspherical_scale(epsilon: f64, delta: f64) -> Result<f64> {
    if !(epsilon > 0.0 && epsilon < 1.0) || !(delta > 0.0 && delta < 1.0) {
        return Err(Error::precondition(format!(
            "non-spherical mechanism needs epsilon, delta in (0, 1), got ({epsilon}, {delta})"
        )));
    }
    Ok((1.0 + (2.0 * (1.0 / delta).ln()).sqrt()) / epsilon)
}

/// Draws F·w with w ~ N(0, s²·I).
pub fn nonspherical_gaussian_noise<R: Rng + ?Sized>(
    f: &DMatrix<f64>,
    epsilon: f64,
    delta: f64,
    rng: &mut R,
) -> Result<DVector<f64>> {
    let s = nonspherical_scale(epsilon, delta)?;
    if f.ncols() == 0 || f.nrows() < f.ncols() {
        return Err(Error::argument("noise shaping matrix must have full column rank"));
    }
    let sv = f.singular_values();
    let (smax, smin) = (sv.max(), sv.min());
    if !(smin > 1e-12 * smax) || !smax.is_finite() {
        return Err(Error::argument("noise shaping matrix is degenerate"));
    }
    let w = DVector::from_fn(f.ncols(), |_, _| s * rng.sample::<f64, _>(StandardNormal));
    Ok(f * w)
}

/// Worst-case Frobenius change of the sample covariance of n points in a
/// ball of radius L when one point is replaced.
pub fn cov_sensitivity_bound(l: f64, n: usize) -> Result<f64> {
    if !(l > 0.0) {
        return Err(Error::argument(format!("L must be positive, got {l}")));
    }
    if n <= 4 {
        return Err(Error::precondition(format!("covariance sensitivity bound needs n > 4, got {n}")));
    }
    Ok(7.0 * l * l / (n as f64 - 1.0))
}

/// Unbiased sample covariance (1/(n−1))·Σ(xᵢ − x̄)(xᵢ − x̄)ᵀ of at least two
/// points (rows).
pub fn sample_covariance(points: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    if points.len() < 2 {
        return Err(Error::argument("sample covariance needs at least two points"));
    }
    let d = points[0].len();
    let n = points.len() as f64;
    let mut mean = DVector::<f64>::zeros(d);
    for p in points {
        if p.len() != d {
            return Err(Error::argument("points have differing dimensions"));
        }
        mean += DVector::from_column_slice(p);
    }
    mean /= n;
    let mut cov = DMatrix::<f64>::zeros(d, d);
    for p in points {
        let c = DVector::from_column_slice(p) - &mean;
        cov += &c * c.transpose();
    }
    Ok(cov / (n - 1.0))
}
