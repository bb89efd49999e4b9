use rand::Rng;
use statrs::function::beta::{beta_reg, ln_beta};

use super::{DataPoint, Dataset, Model, ParamDomain};
use crate::error::{Error, Result};

/// Bernoulli likelihood with a Beta(a, b) prior truncated to
/// θ ∈ [p_min, 1 − p_min]. Truncation bounds the log-likelihood by
/// B = −ln p_min.
#[derive(Debug, Clone)]
pub struct BetaBernoulliModel {
    a: f64,
    b: f64,
    p_min: f64,
}

impl BetaBernoulliModel {
    pub fn new(a: f64, b: f64, p_min: f64) -> Result<Self> {
        if !(a > 0.0) || !(b > 0.0) {
            return Err(Error::config(format!("Beta parameters must be positive (a = {a}, b = {b})")));
        }
        if !(p_min > 0.0 && p_min < 0.5) {
            return Err(Error::config(format!("p_min must lie in (0, 0.5), got {p_min}")));
        }
        Ok(BetaBernoulliModel { a, b, p_min })
    }

    pub fn p_min(&self) -> f64 {
        self.p_min
    }

    pub fn lower(&self) -> f64 {
        self.p_min
    }

    pub fn upper(&self) -> f64 {
        1.0 - self.p_min
    }

    /// Closed form of the tempered posterior
    /// ∝ θ^{ρ(s+a−1)}·(1−θ)^{ρ(n−s+b−1)} on the truncated domain, where
    /// `s` is the number of ones among `n` observations.
    pub fn tempered_posterior(&self, n: usize, ones: usize, rho: f64) -> Result<TruncatedBeta> {
        if ones > n {
            return Err(Error::argument(format!("{ones} successes out of {n} trials")));
        }
        let s = ones as f64;
        let f = (n - ones) as f64;
        TruncatedBeta::new(
            rho * (s + self.a - 1.0) + 1.0,
            rho * (f + self.b - 1.0) + 1.0,
            self.lower(),
            self.upper(),
        )
    }

    /// Per-observation Fisher information at θ.
    pub fn fisher_information(&self, theta: f64) -> f64 {
        1.0 / (theta * (1.0 - theta))
    }

    /// Number of ones in a {0,1} dataset.
    pub fn count_ones(data: &Dataset) -> usize {
        data.iter().filter(|p| p.features[0] > 0.5).count()
    }
}

impl Model for BetaBernoulliModel {
    fn dim(&self) -> usize {
        1
    }

    fn log_lik(&self, theta: &[f64], x: &DataPoint) -> f64 {
        let x = x.features[0];
        x * theta[0].ln() + (1.0 - x) * (1.0 - theta[0]).ln()
    }

    fn add_grad_log_lik(&self, theta: &[f64], x: &DataPoint, weight: f64, out: &mut [f64]) {
        let x = x.features[0];
        out[0] += weight * (x / theta[0] - (1.0 - x) / (1.0 - theta[0]));
    }

    fn log_prior(&self, theta: &[f64]) -> f64 {
        (self.a - 1.0) * theta[0].ln() + (self.b - 1.0) * (1.0 - theta[0]).ln()
    }

    fn add_grad_log_prior(&self, theta: &[f64], weight: f64, out: &mut [f64]) {
        out[0] += weight * ((self.a - 1.0) / theta[0] - (self.b - 1.0) / (1.0 - theta[0]));
    }

    fn bound_b(&self) -> f64 {
        -self.p_min.ln()
    }

    fn lipschitz(&self) -> f64 {
        1.0 / self.p_min
    }

    fn domain(&self) -> ParamDomain {
        ParamDomain::Ball { center: vec![0.5], radius: 0.5 - self.p_min }
    }

    fn check_data(&self, data: &Dataset) -> Result<()> {
        if data.dim() != 1 {
            return Err(Error::Schema("Bernoulli model expects scalar data".into()));
        }
        match data.iter().position(|p| p.features[0] != 0.0 && p.features[0] != 1.0) {
            Some(i) => Err(Error::Schema(format!("observation {i} is not in {{0, 1}}"))),
            None => Ok(()),
        }
    }
}

/// A Beta(α, β) distribution restricted to [lo, hi].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruncatedBeta {
    pub alpha: f64,
    pub beta: f64,
    pub lo: f64,
    pub hi: f64,
}

impl TruncatedBeta {
    pub fn new(alpha: f64, beta: f64, lo: f64, hi: f64) -> Result<Self> {
        if !(alpha > 0.0 && beta > 0.0) {
            return Err(Error::argument(format!("invalid Beta shape ({alpha}, {beta})")));
        }
        if !(0.0 <= lo && lo < hi && hi <= 1.0) {
            return Err(Error::argument(format!("invalid truncation interval [{lo}, {hi}]")));
        }
        Ok(TruncatedBeta { alpha, beta, lo, hi })
    }

    /// Mean of the untruncated Beta.
    pub fn untruncated_mean(&self) -> f64 {
        self.alpha / (self.alpha + self.beta)
    }

    /// log of the unnormalised kernel θ^{α−1}(1−θ)^{β−1}.
    pub fn log_kernel(&self, theta: f64) -> f64 {
        (self.alpha - 1.0) * theta.ln() + (self.beta - 1.0) * (1.0 - theta).ln()
    }

    fn mass(&self, a: f64, b: f64) -> f64 {
        beta_reg(a, b, self.hi) - beta_reg(a, b, self.lo)
    }

    /// Mean of the truncated distribution.
    pub fn mean(&self) -> f64 {
        let (a, b) = (self.alpha, self.beta);
        a / (a + b) * self.mass(a + 1.0, b) / self.mass(a, b)
    }

    /// Variance of the truncated distribution.
    pub fn variance(&self) -> f64 {
        let (a, b) = (self.alpha, self.beta);
        let m2 = a * (a + 1.0) / ((a + b) * (a + b + 1.0)) * self.mass(a + 2.0, b) / self.mass(a, b);
        let m = self.mean();
        m2 - m * m
    }

    /// Normalised density.
    pub fn pdf(&self, theta: f64) -> f64 {
        if theta < self.lo || theta > self.hi {
            return 0.0;
        }
        (self.log_kernel(theta) - ln_beta(self.alpha, self.beta)).exp() / self.mass(self.alpha, self.beta)
    }

    /// Exact draw by inverse-CDF sampling on the truncated interval.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let (a, b) = (self.alpha, self.beta);
        let f_lo = beta_reg(a, b, self.lo);
        let f_hi = beta_reg(a, b, self.hi);
        let u: f64 = rng.random();
        let target = f_lo + u * (f_hi - f_lo);
        let (mut lo, mut hi) = (self.lo, self.hi);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if beta_reg(a, b, mid) < target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }
}
