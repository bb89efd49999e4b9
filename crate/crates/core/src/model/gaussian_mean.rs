use std::f64::consts::PI;

use super::{DataPoint, Dataset, Model, ParamDomain};
use crate::error::{Error, Result};

/// Conjugate one-dimensional Gaussian mean model:
/// x ~ N(θ, noise_var), θ ~ N(0, prior_var).
///
/// Unbounded by default (B = L = ∞). [`GaussianMeanModel::with_bounds`]
/// restricts θ to |θ| ≤ C and declares |x| ≤ R, which yields finite
/// constants usable by the private samplers.
#[derive(Debug, Clone)]
pub struct GaussianMeanModel {
    prior_var: Option<f64>,
    noise_var: f64,
    bounds: Option<(f64, f64)>,
}

impl GaussianMeanModel {
    pub fn new(prior_var: f64, noise_var: f64) -> Result<Self> {
        if !(prior_var > 0.0) || !(noise_var > 0.0) {
            return Err(Error::config(format!(
                "variances must be positive (prior_var = {prior_var}, noise_var = {noise_var})"
            )));
        }
        Ok(GaussianMeanModel { prior_var: Some(prior_var), noise_var, bounds: None })
    }

    /// The flat-prior limit prior_var → ∞.
    pub fn flat_prior(noise_var: f64) -> Result<Self> {
        if !(noise_var > 0.0) {
            return Err(Error::config(format!("noise_var must be positive, got {noise_var}")));
        }
        Ok(GaussianMeanModel { prior_var: None, noise_var, bounds: None })
    }

    pub fn with_bounds(mut self, theta_radius: f64, data_radius: f64) -> Result<Self> {
        if !(theta_radius > 0.0) || !(data_radius > 0.0) {
            return Err(Error::config("bounds must be positive"));
        }
        self.bounds = Some((theta_radius, data_radius));
        Ok(self)
    }

    pub fn noise_var(&self) -> f64 {
        self.noise_var
    }

    pub fn prior_var(&self) -> Option<f64> {
        self.prior_var
    }

    /// Closed-form posterior (mean, variance), ignoring any domain truncation.
    pub fn posterior(&self, data: &Dataset) -> Result<(f64, f64)> {
        self.tempered_posterior(data, 1.0)
    }

    /// Closed-form posterior of the tempered density
    /// ∝ exp(ρ·Σ log p(xᵢ|θ))·π(θ)^ρ, ignoring domain truncation.
    pub fn tempered_posterior(&self, data: &Dataset, rho: f64) -> Result<(f64, f64)> {
        let n = data.len() as f64;
        let sum: f64 = data.iter().map(|p| p.features[0]).sum();
        let prior_prec = self.prior_var.map_or(0.0, |v| 1.0 / v);
        let prec = n / self.noise_var + prior_prec;
        if prec <= 0.0 {
            return Err(Error::argument("flat prior with no data has no proper posterior"));
        }
        let mean = (sum / self.noise_var) / prec;
        Ok((mean, 1.0 / (rho * prec)))
    }
}

impl Model for GaussianMeanModel {
    fn dim(&self) -> usize {
        1
    }

    fn log_lik(&self, theta: &[f64], x: &DataPoint) -> f64 {
        let r = x.features[0] - theta[0];
        -0.5 * (2.0 * PI * self.noise_var).ln() - r * r / (2.0 * self.noise_var)
    }

    fn add_grad_log_lik(&self, theta: &[f64], x: &DataPoint, weight: f64, out: &mut [f64]) {
        out[0] += weight * (x.features[0] - theta[0]) / self.noise_var;
    }

    fn log_prior(&self, theta: &[f64]) -> f64 {
        match self.prior_var {
            Some(v) => -theta[0] * theta[0] / (2.0 * v),
            None => 0.0,
        }
    }

    fn add_grad_log_prior(&self, theta: &[f64], weight: f64, out: &mut [f64]) {
        if let Some(v) = self.prior_var {
            out[0] -= weight * theta[0] / v;
        }
    }

    fn bound_b(&self) -> f64 {
        match self.bounds {
            Some((c, r)) => {
                let top = -0.5 * (2.0 * PI * self.noise_var).ln();
                let bottom = top - (c + r) * (c + r) / (2.0 * self.noise_var);
                top.abs().max(bottom.abs())
            }
            None => f64::INFINITY,
        }
    }

    fn lipschitz(&self) -> f64 {
        match self.bounds {
            Some((c, r)) => (c + r) / self.noise_var,
            None => f64::INFINITY,
        }
    }

    fn domain(&self) -> ParamDomain {
        match self.bounds {
            Some((c, _)) => ParamDomain::ball(1, c),
            None => ParamDomain::Unconstrained,
        }
    }

    fn check_data(&self, data: &Dataset) -> Result<()> {
        if data.dim() != 1 {
            return Err(Error::Schema(format!(
                "Gaussian mean model expects scalar data, got {} features",
                data.dim()
            )));
        }
        if let Some((_, r)) = self.bounds {
            if data.norm_bound() > r * (1.0 + 1e-12) {
                return Err(Error::Domain(format!(
                    "data norm bound {} exceeds declared R = {r}",
                    data.norm_bound()
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalars(xs: &[f64]) -> Dataset {
        Dataset::from_points(xs.iter().map(|&x| DataPoint::scalar(x)).collect()).unwrap()
    }

    #[test]
    fn single_zero_observation() {
        let m = GaussianMeanModel::new(1.0, 1.0).unwrap();
        let (mean, var) = m.posterior(&scalars(&[0.0])).unwrap();
        assert_eq!(mean, 0.0);
        assert!((var - 0.5).abs() < 1e-15);
    }

    #[test]
    fn hundred_observations_with_mean_one() {
        let m = GaussianMeanModel::new(1.0, 1.0).unwrap();
        let xs: Vec<f64> = (0..100).map(|i| if i % 2 == 0 { 0.5 } else { 1.5 }).collect();
        let (mean, var) = m.posterior(&scalars(&xs)).unwrap();
        assert!((mean - 100.0 / 101.0).abs() < 1e-14);
        assert!((var - 1.0 / 101.0).abs() < 1e-15);
        assert!((mean - 0.9901).abs() < 1e-4 && (var - 0.009901).abs() < 1e-6);
    }

    #[test]
    fn flat_prior_limit_is_sample_mean() {
        let m = GaussianMeanModel::flat_prior(3.0).unwrap();
        let (mean, var) = m.posterior(&scalars(&[1.0, 2.0, 2.0, 3.0])).unwrap();
        assert!((mean - 2.0).abs() < 1e-15);
        assert!((var - 3.0 / 4.0).abs() < 1e-15);
    }

    #[test]
    fn nonpositive_variances_are_rejected() {
        assert!(matches!(GaussianMeanModel::new(0.0, 1.0), Err(Error::Config(_))));
        assert!(matches!(GaussianMeanModel::new(1.0, -1.0), Err(Error::Config(_))));
        assert!(matches!(GaussianMeanModel::flat_prior(0.0), Err(Error::Config(_))));
    }

    #[test]
    fn bounded_variant_declares_finite_constants() {
        let m = GaussianMeanModel::new(1.0, 1.0).unwrap().with_bounds(2.0, 2.0).unwrap();
        assert!(m.bound_b().is_finite());
        assert_eq!(m.lipschitz(), 4.0);
        let unbounded = GaussianMeanModel::new(1.0, 1.0).unwrap();
        assert!(unbounded.bound_b().is_infinite());
    }

    #[test]
    fn tempering_inflates_variance_only() {
        let m = GaussianMeanModel::new(1.0, 1.0).unwrap();
        let d = scalars(&[1.0, 2.0]);
        let (m1, v1) = m.posterior(&d).unwrap();
        let (m2, v2) = m.tempered_posterior(&d, 0.25).unwrap();
        assert_eq!(m1, m2);
        assert!((v2 - 4.0 * v1).abs() < 1e-15);
    }
}
