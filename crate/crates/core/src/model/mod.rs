//! Probabilistic model contract and the built-in models.
//!
//! A [`Model`] exposes per-point log-likelihoods, their gradients in the
//! parameter, a prior, and the two uniform bounds the privacy calculus
//! relies on: `B` (sup of |log p(x|θ)|) and `L` (sup of ‖∇θ log p(x|θ)‖₂).
//! All densities are log-densities in the ascent direction; samplers that
//! work on the negative log-posterior negate on their side.

mod beta_bernoulli;
mod gaussian_mean;
mod linear_regression;
mod logistic;

pub use beta_bernoulli::{BetaBernoulliModel, TruncatedBeta};
pub use gaussian_mean::GaussianMeanModel;
pub use linear_regression::{GaussianPosterior, LinearRegressionModel};
pub use logistic::LogisticModel;

use std::ops::{Deref, DerefMut};

use crate::error::{Error, Result};

/// A point in parameter space.
///
/// Coordinates are finite and the dimension is at least one.
#[derive(Debug, Clone, PartialEq)]
pub struct Theta(Vec<f64>);

impl Theta {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::argument("parameter vector must have dimension >= 1"));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::argument(format!(
                "parameter coordinate {i} is not finite ({})",
                values[i]
            )));
        }
        Ok(Theta(values))
    }

    pub fn zeros(dim: usize) -> Self {
        Theta(vec![0.0; dim.max(1)])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        norm2(&self.0)
    }
}

impl Deref for Theta {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for Theta {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

impl From<Theta> for Vec<f64> {
    fn from(t: Theta) -> Self {
        t.0
    }
}

/// One observation: a feature vector and an optional real label.
#[derive(Debug, Clone, PartialEq)]
pub struct DataPoint {
    pub features: Vec<f64>,
    pub label: Option<f64>,
}

impl DataPoint {
    pub fn new(features: Vec<f64>, label: Option<f64>) -> Self {
        DataPoint { features, label }
    }

    pub fn unlabeled(features: Vec<f64>) -> Self {
        DataPoint { features, label: None }
    }

    pub fn labeled(features: Vec<f64>, label: f64) -> Self {
        DataPoint { features, label: Some(label) }
    }

    /// A scalar observation, as used by the one-dimensional models.
    pub fn scalar(x: f64) -> Self {
        DataPoint::unlabeled(vec![x])
    }

    pub fn norm(&self) -> f64 {
        norm2(&self.features)
    }
}

/// An ordered collection of data points with a declared feature-norm bound.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    points: Vec<DataPoint>,
    dim: usize,
    norm_bound: f64,
}

impl Dataset {
    /// Builds a dataset, checking that feature dimensions agree and that every
    /// point lies inside the declared norm ball.
    pub fn new(points: Vec<DataPoint>, norm_bound: f64) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::argument("dataset must contain at least one point"));
        }
        if !(norm_bound > 0.0) {
            return Err(Error::config(format!("norm bound must be positive, got {norm_bound}")));
        }
        let dim = points[0].features.len();
        for (i, p) in points.iter().enumerate() {
            if p.features.len() != dim {
                return Err(Error::Schema(format!(
                    "point {i} has {} features, expected {dim}",
                    p.features.len()
                )));
            }
            let n = p.norm();
            if n > norm_bound * (1.0 + 1e-12) {
                return Err(Error::Domain(format!(
                    "point {i} has norm {n} exceeding declared bound {norm_bound}"
                )));
            }
        }
        Ok(Dataset { points, dim, norm_bound })
    }

    /// Builds a dataset whose norm bound is the largest observed norm
    /// (or 1 when every point is zero).
    pub fn from_points(points: Vec<DataPoint>) -> Result<Self> {
        let bound = points.iter().map(DataPoint::norm).fold(0.0, f64::max);
        Dataset::new(points, if bound > 0.0 { bound } else { 1.0 })
    }

    /// A dataset with no observations. Used for prior-only runs.
    pub fn empty(dim: usize, norm_bound: f64) -> Self {
        Dataset { points: Vec::new(), dim, norm_bound }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Feature dimension.
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn norm_bound(&self) -> f64 {
        self.norm_bound
    }

    pub fn points(&self) -> &[DataPoint] {
        &self.points
    }

    pub fn point(&self, i: usize) -> &DataPoint {
        &self.points[i]
    }

    pub fn iter(&self) -> std::slice::Iter<'_, DataPoint> {
        self.points.iter()
    }

    pub fn is_labeled(&self) -> bool {
        self.points.iter().all(|p| p.label.is_some())
    }

    /// A copy of the dataset with point `i` replaced. Used to build
    /// neighbouring datasets.
    pub fn replace(&self, i: usize, point: DataPoint) -> Result<Self> {
        let mut points = self.points.clone();
        points[i] = point;
        let bound = points.iter().map(DataPoint::norm).fold(self.norm_bound, f64::max);
        Dataset::new(points, bound)
    }

    /// Selects rows by index, keeping the norm bound.
    pub fn subset(&self, indices: &[usize]) -> Self {
        Dataset {
            points: indices.iter().map(|&i| self.points[i].clone()).collect(),
            dim: self.dim,
            norm_bound: self.norm_bound,
        }
    }

    pub(crate) fn from_parts_unchecked(points: Vec<DataPoint>, dim: usize, norm_bound: f64) -> Self {
        Dataset { points, dim, norm_bound }
    }
}

impl<'a> IntoIterator for &'a Dataset {
    type Item = &'a DataPoint;
    type IntoIter = std::slice::Iter<'a, DataPoint>;
    fn into_iter(self) -> Self::IntoIter {
        self.points.iter()
    }
}

/// Where parameters may live. Samplers project onto it after every step.
#[derive(Debug, Clone, PartialEq)]
pub enum ParamDomain {
    Unconstrained,
    /// Closed Euclidean ball.
    Ball { center: Vec<f64>, radius: f64 },
}

impl ParamDomain {
    pub fn ball(dim: usize, radius: f64) -> Self {
        ParamDomain::Ball { center: vec![0.0; dim], radius }
    }

    pub fn contains(&self, theta: &[f64]) -> bool {
        match self {
            ParamDomain::Unconstrained => true,
            ParamDomain::Ball { center, radius } => {
                dist2(theta, center) <= radius * (1.0 + 1e-12) + 1e-15
            }
        }
    }

    /// Euclidean projection onto the domain, in place.
    pub fn project(&self, theta: &mut [f64]) {
        if let ParamDomain::Ball { center, radius } = self {
            let d = dist2(theta, center);
            if d > *radius {
                let s = radius / d;
                for (t, c) in theta.iter_mut().zip(center) {
                    *t = c + (*t - c) * s;
                }
            }
        }
    }

    /// A data-independent starting point: the ball centre or the origin.
    pub fn center(&self, dim: usize) -> Vec<f64> {
        match self {
            ParamDomain::Unconstrained => vec![0.0; dim],
            ParamDomain::Ball { center, .. } => center.clone(),
        }
    }
}

/// The model contract consumed by every sampler and oracle.
///
/// Implementations are immutable once built and are shared freely across
/// threads.
pub trait Model: Send + Sync {
    /// Parameter dimension.
    fn dim(&self) -> usize;

    /// log p(x | θ).
    fn log_lik(&self, theta: &[f64], x: &DataPoint) -> f64;

    /// Adds `weight * ∇θ log p(x | θ)` into `out`.
    fn add_grad_log_lik(&self, theta: &[f64], x: &DataPoint, weight: f64, out: &mut [f64]);

    /// log π(θ), up to an additive constant.
    fn log_prior(&self, theta: &[f64]) -> f64;

    /// Adds `weight * ∇θ log π(θ)` into `out`.
    fn add_grad_log_prior(&self, theta: &[f64], weight: f64, out: &mut [f64]);

    /// Declared bound on |log p(x|θ)| over the data and parameter domains.
    /// Infinite when the model has no such bound.
    fn bound_b(&self) -> f64;

    /// Declared bound on ‖∇θ log p(x|θ)‖₂. Infinite when unbounded.
    fn lipschitz(&self) -> f64;

    fn domain(&self) -> ParamDomain {
        ParamDomain::Unconstrained
    }

    fn grad_log_lik(&self, theta: &[f64], x: &DataPoint) -> Vec<f64> {
        let mut g = vec![0.0; self.dim()];
        self.add_grad_log_lik(theta, x, 1.0, &mut g);
        g
    }

    fn grad_log_prior(&self, theta: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.dim()];
        self.add_grad_log_prior(theta, 1.0, &mut g);
        g
    }

    /// Data-independent initial parameter.
    fn initial_point(&self) -> Vec<f64> {
        self.domain().center(self.dim())
    }

    /// Checks that `data` has the shape this model consumes.
    fn check_data(&self, _data: &Dataset) -> Result<()> {
        Ok(())
    }
}

impl<M: Model + ?Sized> Model for &M {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn log_lik(&self, theta: &[f64], x: &DataPoint) -> f64 {
        (**self).log_lik(theta, x)
    }
    fn add_grad_log_lik(&self, theta: &[f64], x: &DataPoint, weight: f64, out: &mut [f64]) {
        (**self).add_grad_log_lik(theta, x, weight, out)
    }
    fn log_prior(&self, theta: &[f64]) -> f64 {
        (**self).log_prior(theta)
    }
    fn add_grad_log_prior(&self, theta: &[f64], weight: f64, out: &mut [f64]) {
        (**self).add_grad_log_prior(theta, weight, out)
    }
    fn bound_b(&self) -> f64 {
        (**self).bound_b()
    }
    fn lipschitz(&self) -> f64 {
        (**self).lipschitz()
    }
    fn domain(&self) -> ParamDomain {
        (**self).domain()
    }
    fn initial_point(&self) -> Vec<f64> {
        (**self).initial_point()
    }
    fn check_data(&self, data: &Dataset) -> Result<()> {
        (**self).check_data(data)
    }
}

fn check_theta<M: Model + ?Sized>(model: &M, theta: &[f64]) -> Result<()> {
    if theta.len() != model.dim() {
        return Err(Error::argument(format!(
            "parameter has dimension {}, model expects {}",
            theta.len(),
            model.dim()
        )));
    }
    if !model.domain().contains(theta) {
        return Err(Error::Domain(format!("{theta:?} is outside {:?}", model.domain())));
    }
    Ok(())
}

/// Tempered unnormalised log-posterior `ρ·Σ log p(xᵢ|θ) + ρ·log π(θ)`.
pub fn log_posterior_unnorm<M: Model + ?Sized>(
    model: &M,
    data: &Dataset,
    theta: &[f64],
    rho: f64,
) -> Result<f64> {
    check_theta(model, theta)?;
    Ok(tempered_log_posterior(model, data, theta, rho))
}

/// Same as [`log_posterior_unnorm`] without the domain check. Callers
/// guarantee `theta` is in the domain.
pub(crate) fn tempered_log_posterior<M: Model + ?Sized>(
    model: &M,
    data: &Dataset,
    theta: &[f64],
    rho: f64,
) -> f64 {
    let ll: f64 = data.iter().map(|x| model.log_lik(theta, x)).sum();
    rho * (ll + model.log_prior(theta))
}

/// Minibatch estimate of the tempered log-posterior gradient,
/// `ρ·[∇log π(θ) + (N/|S|)·Σ_{i∈S} ∇log p(xᵢ|θ)]`.
pub fn grad_log_posterior_minibatch<M: Model + ?Sized>(
    model: &M,
    data: &Dataset,
    indices: &[usize],
    theta: &[f64],
    rho: f64,
) -> Result<Vec<f64>> {
    if indices.is_empty() {
        return Err(Error::argument("minibatch index set is empty"));
    }
    if let Some(&bad) = indices.iter().find(|&&i| i >= data.len()) {
        return Err(Error::argument(format!(
            "minibatch index {bad} out of range for N = {}",
            data.len()
        )));
    }
    check_theta(model, theta)?;
    let mut g = vec![0.0; model.dim()];
    minibatch_gradient_into(model, data, indices, theta, rho, &mut g);
    Ok(g)
}

pub(crate) fn minibatch_gradient_into<M: Model + ?Sized>(
    model: &M,
    data: &Dataset,
    indices: &[usize],
    theta: &[f64],
    rho: f64,
    out: &mut [f64],
) {
    out.iter_mut().for_each(|v| *v = 0.0);
    let scale = rho * data.len() as f64 / indices.len() as f64;
    for &i in indices {
        model.add_grad_log_lik(theta, data.point(i), scale, out);
    }
    model.add_grad_log_prior(theta, rho, out);
}

/// Rescales every feature vector with norm above `radius` onto the sphere of
/// that radius. Labels are untouched and the result declares `radius` as its
/// norm bound.
pub fn clip_dataset(data: &Dataset, radius: f64) -> Result<Dataset> {
    if !(radius > 0.0) {
        return Err(Error::config(format!("clip radius must be positive, got {radius}")));
    }
    let points = data
        .iter()
        .map(|p| {
            let n = p.norm();
            let features = if n > radius {
                p.features.iter().map(|v| v * radius / n).collect()
            } else {
                p.features.clone()
            };
            DataPoint { features, label: p.label }
        })
        .collect();
    Ok(Dataset::from_parts_unchecked(points, data.dim(), radius))
}

pub(crate) fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Numerically stable `ln(1 + e^x)`.
pub(crate) fn log1p_exp(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Logistic sigmoid.
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
