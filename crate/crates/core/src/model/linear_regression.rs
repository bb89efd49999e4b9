use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use super::{dot, DataPoint, Dataset, Model, ParamDomain};
use crate::error::{Error, Result};

/// Bayesian linear regression: y | x, θ ~ N(θᵀx, noise_var),
/// θ ~ N(0, prior_var·I). The posterior is Gaussian in closed form.
#[derive(Debug, Clone)]
pub struct LinearRegressionModel {
    dim: usize,
    noise_var: f64,
    prior_var: f64,
    /// (‖θ‖ bound C, ‖x‖ bound R, |y| bound Y)
    bounds: Option<(f64, f64, f64)>,
}

/// Gaussian posterior in closed form.
#[derive(Debug, Clone)]
pub struct GaussianPosterior {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
}

impl LinearRegressionModel {
    pub fn new(dim: usize, noise_var: f64, prior_var: f64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::config("linear regression needs dimension >= 1"));
        }
        if !(noise_var > 0.0) || !(prior_var > 0.0) {
            return Err(Error::config(format!(
                "variances must be positive (noise_var = {noise_var}, prior_var = {prior_var})"
            )));
        }
        Ok(LinearRegressionModel { dim, noise_var, prior_var, bounds: None })
    }

    /// Restricts ‖θ‖ ≤ C and declares ‖x‖ ≤ R, |y| ≤ Y so that B and L are
    /// finite.
    pub fn with_bounds(mut self, theta_radius: f64, x_radius: f64, y_bound: f64) -> Result<Self> {
        if !(theta_radius > 0.0 && x_radius > 0.0 && y_bound >= 0.0) {
            return Err(Error::config("bounds must be positive"));
        }
        self.bounds = Some((theta_radius, x_radius, y_bound));
        Ok(self)
    }

    pub fn noise_var(&self) -> f64 {
        self.noise_var
    }

    pub fn prior_var(&self) -> f64 {
        self.prior_var
    }

    /// Posterior precision matrix XᵀX/σ² + I/τ².
    pub fn posterior_precision(&self, data: &Dataset) -> DMatrix<f64> {
        let mut prec = DMatrix::<f64>::identity(self.dim, self.dim) / self.prior_var;
        for p in data {
            let x = DVector::from_column_slice(&p.features);
            prec += &x * x.transpose() / self.noise_var;
        }
        prec
    }

    pub fn posterior(&self, data: &Dataset) -> Result<GaussianPosterior> {
        self.check_data(data)?;
        let prec = self.posterior_precision(data);
        let covariance = prec
            .try_inverse()
            .ok_or_else(|| Error::argument("posterior precision is singular"))?;
        let mut xty = DVector::<f64>::zeros(self.dim);
        for p in data {
            let y = p.label.unwrap_or(0.0);
            xty += DVector::from_column_slice(&p.features) * (y / self.noise_var);
        }
        let mean = &covariance * xty;
        Ok(GaussianPosterior { mean, covariance })
    }
}

impl Model for LinearRegressionModel {
    fn dim(&self) -> usize {
        self.dim
    }

    fn log_lik(&self, theta: &[f64], x: &DataPoint) -> f64 {
        let r = x.label.unwrap_or(0.0) - dot(theta, &x.features);
        -0.5 * (2.0 * PI * self.noise_var).ln() - r * r / (2.0 * self.noise_var)
    }

    fn add_grad_log_lik(&self, theta: &[f64], x: &DataPoint, weight: f64, out: &mut [f64]) {
        let r = x.label.unwrap_or(0.0) - dot(theta, &x.features);
        let c = weight * r / self.noise_var;
        for (o, xi) in out.iter_mut().zip(&x.features) {
            *o += c * xi;
        }
    }

    fn log_prior(&self, theta: &[f64]) -> f64 {
        -dot(theta, theta) / (2.0 * self.prior_var)
    }

    fn add_grad_log_prior(&self, theta: &[f64], weight: f64, out: &mut [f64]) {
        for (o, t) in out.iter_mut().zip(theta) {
            *o -= weight * t / self.prior_var;
        }
    }

    fn bound_b(&self) -> f64 {
        match self.bounds {
            Some((c, r, y)) => {
                let top = -0.5 * (2.0 * PI * self.noise_var).ln();
                let worst = y + c * r;
                let bottom = top - worst * worst / (2.0 * self.noise_var);
                top.abs().max(bottom.abs())
            }
            None => f64::INFINITY,
        }
    }

    fn lipschitz(&self) -> f64 {
        match self.bounds {
            Some((c, r, y)) => (y + c * r) * r / self.noise_var,
            None => f64::INFINITY,
        }
    }

    fn domain(&self) -> ParamDomain {
        match self.bounds {
            Some((c, _, _)) => ParamDomain::ball(self.dim, c),
            None => ParamDomain::Unconstrained,
        }
    }

    fn check_data(&self, data: &Dataset) -> Result<()> {
        if !data.is_empty() && data.dim() != self.dim {
            return Err(Error::Schema(format!(
                "model has dimension {}, data has {} features",
                self.dim,
                data.dim()
            )));
        }
        if !data.is_labeled() {
            return Err(Error::argument("linear regression needs labelled data"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn no_data_gives_the_prior() {
        let m = LinearRegressionModel::new(3, 0.5, 2.0).unwrap();
        let post = m.posterior(&Dataset::empty(3, 1.0)).unwrap();
        assert!(post.mean.iter().all(|&v| v == 0.0));
        let expected = DMatrix::<f64>::identity(3, 3) * 2.0;
        assert!((post.covariance - expected).norm() < 1e-14);
    }

    #[test]
    fn one_dimensional_single_observation() {
        let m = LinearRegressionModel::new(1, 1.0, 1.0).unwrap();
        let d = Dataset::from_points(vec![DataPoint::labeled(vec![1.0], 2.0)]).unwrap();
        let post = m.posterior(&d).unwrap();
        assert!((post.mean[0] - 1.0).abs() < 1e-15);
        assert!((post.covariance[(0, 0)] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn random_design_covariance_matches_direct_inversion() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (n, noise_var, prior_var) = (50, 0.7, 1.3);
        let rows: Vec<[f64; 2]> = (0..n).map(|_| [rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5]).collect();
        let pts = rows.iter().map(|r| DataPoint::labeled(r.to_vec(), r[0] - 2.0 * r[1])).collect();
        let data = Dataset::from_points(pts).unwrap();
        let m = LinearRegressionModel::new(2, noise_var, prior_var).unwrap();
        let post = m.posterior(&data).unwrap();

        // independent route: explicit 2x2 algebra
        let (mut a, mut b, mut c) = (1.0 / prior_var, 0.0, 1.0 / prior_var);
        for r in &rows {
            a += r[0] * r[0] / noise_var;
            b += r[0] * r[1] / noise_var;
            c += r[1] * r[1] / noise_var;
        }
        let det = a * c - b * b;
        let inv = [[c / det, -b / det], [-b / det, a / det]];
        for i in 0..2 {
            for j in 0..2 {
                assert!((post.covariance[(i, j)] - inv[i][j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn nonpositive_variance() {
        assert!(LinearRegressionModel::new(2, 0.0, 1.0).is_err());
        assert!(LinearRegressionModel::new(2, 1.0, -2.0).is_err());
        assert!(LinearRegressionModel::new(0, 1.0, 1.0).is_err());
    }
}
