use super::{dot, log1p_exp, norm2, sigmoid, DataPoint, Dataset, Model, ParamDomain};
use crate::error::{Error, Result};

/// Logistic regression with labels in {−1, +1}.
///
/// The prior is N(0, C²·I) truncated to the ball ‖θ‖₂ ≤ C, which makes the
/// log-likelihood uniformly bounded: |log p| ≤ ln(1 + exp(C·R)) where R is
/// the feature-norm bound of the data.
#[derive(Debug, Clone)]
pub struct LogisticModel {
    dim: usize,
    radius: f64,
    data_radius: f64,
}

impl LogisticModel {
    pub fn new(dim: usize, radius: f64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::config("logistic model needs dimension >= 1"));
        }
        if !(radius > 0.0) || !radius.is_finite() {
            return Err(Error::config(format!("parameter radius C must be positive, got {radius}")));
        }
        Ok(LogisticModel { dim, radius, data_radius: 1.0 })
    }

    /// Sets the feature-norm bound R the declared constants are computed for.
    pub fn with_data_radius(mut self, data_radius: f64) -> Result<Self> {
        if !(data_radius > 0.0) {
            return Err(Error::config(format!("data radius R must be positive, got {data_radius}")));
        }
        self.data_radius = data_radius;
        Ok(self)
    }

    /// Model sized for `data`, with R taken from the dataset's norm bound.
    pub fn for_dataset(data: &Dataset, radius: f64) -> Result<Self> {
        LogisticModel::new(data.dim(), radius)?.with_data_radius(data.norm_bound())
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn data_radius(&self) -> f64 {
        self.data_radius
    }
}

fn label(x: &DataPoint) -> f64 {
    x.label.unwrap_or(1.0)
}

impl Model for LogisticModel {
    fn dim(&self) -> usize {
        self.dim
    }

    fn log_lik(&self, theta: &[f64], x: &DataPoint) -> f64 {
        -log1p_exp(-label(x) * dot(theta, &x.features))
    }

    fn add_grad_log_lik(&self, theta: &[f64], x: &DataPoint, weight: f64, out: &mut [f64]) {
        let y = label(x);
        let c = weight * y * sigmoid(-y * dot(theta, &x.features));
        for (o, xi) in out.iter_mut().zip(&x.features) {
            *o += c * xi;
        }
    }

    fn log_prior(&self, theta: &[f64]) -> f64 {
        let n = norm2(theta);
        -n * n / (2.0 * self.radius * self.radius)
    }

    fn add_grad_log_prior(&self, theta: &[f64], weight: f64, out: &mut [f64]) {
        let c = weight / (self.radius * self.radius);
        for (o, t) in out.iter_mut().zip(theta) {
            *o -= c * t;
        }
    }

    fn bound_b(&self) -> f64 {
        log1p_exp(self.radius * self.data_radius)
    }

    fn lipschitz(&self) -> f64 {
        self.data_radius
    }

    fn domain(&self) -> ParamDomain {
        ParamDomain::ball(self.dim, self.radius)
    }

    fn check_data(&self, data: &Dataset) -> Result<()> {
        if data.dim() != self.dim {
            return Err(Error::Schema(format!(
                "logistic model has dimension {}, data has {} features",
                self.dim,
                data.dim()
            )));
        }
        if !data.is_labeled() {
            return Err(Error::argument("logistic model needs labelled data"));
        }
        if data.norm_bound() > self.data_radius * (1.0 + 1e-12) {
            return Err(Error::Domain(format!(
                "data norm bound {} exceeds the model's declared R = {}",
                data.norm_bound(),
                self.data_radius
            )));
        }
        Ok(())
    }
}
