//! Private ERM baselines: objective perturbation and Gaussian output
//! perturbation for L2-regularised logistic regression.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::model::{log1p_exp, sigmoid, DataPoint, Dataset, Theta};
use crate::privacy::{gaussian_sigma, PrivacyBudget, PrivacyLedger};

/// Convex per-example losses supported by the trainers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Loss {
    /// log(1 + exp(−y·θᵀx)).
    Logistic,
}

/// Regularised empirical risk Σᵢ loss(θ, xᵢ) + (λ_reg/2)‖θ‖².
#[derive(Debug, Clone, PartialEq)]
pub struct ErmProblem {
    dim: usize,
    loss: Loss,
    lipschitz: f64,
    smoothness: f64,
    lambda_reg: f64,
}

impl ErmProblem {
    /// Logistic loss on inputs of norm at most `data_radius`:
    /// L = R, λ_H = R²/4.
    pub fn logistic(dim: usize, data_radius: f64, lambda_reg: f64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::config("dimension must be positive"));
        }
        if !(data_radius > 0.0) || !data_radius.is_finite() {
            return Err(Error::config(format!("data radius must be positive, got {data_radius}")));
        }
        if !(lambda_reg >= 0.0) || !lambda_reg.is_finite() {
            return Err(Error::config(format!("lambda_reg must be non-negative, got {lambda_reg}")));
        }
        Ok(Self {
            dim,
            loss: Loss::Logistic,
            lipschitz: data_radius,
            smoothness: data_radius * data_radius / 4.0,
            lambda_reg,
        })
    }

    pub fn for_dataset(data: &Dataset, lambda_reg: f64) -> Result<Self> {
        Self::logistic(data.dim(), data.norm_bound(), lambda_reg)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn loss_kind(&self) -> Loss {
        self.loss
    }

    /// Per-example gradient bound L.
    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    /// Per-example Hessian bound λ_H.
    pub fn smoothness(&self) -> f64 {
        self.smoothness
    }

    pub fn lambda_reg(&self) -> f64 {
        self.lambda_reg
    }

    pub fn loss(&self, theta: &[f64], x: &DataPoint) -> f64 {
        let y = x.label.unwrap_or(1.0);
        match self.loss {
            Loss::Logistic => log1p_exp(-y * crate::model::dot(theta, &x.features)),
        }
    }

    /// Adds `weight`·∇loss(θ, x) to `out`.
    pub fn add_grad_loss(&self, theta: &[f64], x: &DataPoint, weight: f64, out: &mut [f64]) {
        let y = x.label.unwrap_or(1.0);
        match self.loss {
            Loss::Logistic => {
                let s = -y * sigmoid(-y * crate::model::dot(theta, &x.features)) * weight;
                for (o, xi) in out.iter_mut().zip(&x.features) {
                    *o += s * xi;
                }
            }
        }
    }

    fn check_data(&self, data: &Dataset) -> Result<()> {
        if data.is_empty() {
            return Err(Error::precondition("training set is empty"));
        }
        if data.dim() != self.dim {
            return Err(Error::argument(format!("data dimension {} does not match problem dimension {}", data.dim(), self.dim)));
        }
        if !data.is_labeled() {
            return Err(Error::argument("ERM requires labelled data"));
        }
        Ok(())
    }
}

/// The data-independent part of the perturbed objective:
/// extra ridge Δ and linear term bᵀθ.
#[derive(Debug, Clone, PartialEq)]
pub struct Perturbation {
    pub delta_reg: f64,
    pub linear: Vec<f64>,
}

impl Perturbation {
    /// Test mode: Δ = 0, b = 0.
    pub fn none(dim: usize) -> Self {
        Self { delta_reg: 0.0, linear: vec![0.0; dim] }
    }

    /// Draws b ~ N(0, β²I) and sets Δ = 2λ_H/ε. Nothing here reads data.
    pub fn draw<R: Rng + ?Sized>(problem: &ErmProblem, epsilon: f64, delta: f64, rng: &mut R) -> Result<Self> {
        let beta = objpert_beta(problem.lipschitz(), epsilon, delta)?;
        let linear = (0..problem.dim()).map(|_| beta * rng.sample::<f64, _>(StandardNormal)).collect();
        Ok(Self { delta_reg: objpert_delta_reg(problem.smoothness(), epsilon)?, linear })
    }
}

fn check_eps_delta(epsilon: f64, delta: f64) -> Result<()> {
    if !(epsilon > 0.0) || !epsilon.is_finite() {
        return Err(Error::precondition(format!("epsilon must be positive and finite, got {epsilon}")));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::precondition(format!("delta must lie in (0, 1), got {delta}")));
    }
    Ok(())
}

/// β = L·sqrt(8 ln(2/δ) + 4ε)/ε.
pub fn objpert_beta(lipschitz: f64, epsilon: f64, delta: f64) -> Result<f64> {
    check_eps_delta(epsilon, delta)?;
    Ok(lipschitz * (8.0 * (2.0 / delta).ln() + 4.0 * epsilon).sqrt() / epsilon)
}

/// Δ = 2λ_H/ε.
pub fn objpert_delta_reg(smoothness: f64, epsilon: f64) -> Result<f64> {
    if !(epsilon > 0.0) || !epsilon.is_finite() {
        return Err(Error::precondition(format!("epsilon must be positive and finite, got {epsilon}")));
    }
    Ok(2.0 * smoothness / epsilon)
}

/// Stopping rule for [`bfgs`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BfgsOptions {
    pub grad_tol: f64,
    pub max_iter: usize,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        Self { grad_tol: 1e-8, max_iter: 10_000 }
    }
}

/// Minimiser returned by [`bfgs`].
#[derive(Debug, Clone, PartialEq)]
pub struct BfgsResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub grad_norm: f64,
    pub iterations: usize,
}

/// BFGS with a backtracking Armijo line search. `f` returns the objective
/// and writes the gradient into its second argument.
pub fn bfgs<F>(mut f: F, x0: &[f64], opts: BfgsOptions) -> Result<BfgsResult>
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let d = x0.len();
    let mut x = DVector::from_column_slice(x0);
    let mut g = DVector::zeros(d);
    let mut fx = f(x.as_slice(), g.as_mut_slice());
    let mut h = DMatrix::<f64>::identity(d, d);
    let mut fresh = true;
    let mut x_new = DVector::zeros(d);
    let mut g_new = DVector::zeros(d);

    for k in 0..opts.max_iter {
        let gn = g.norm();
        if !fx.is_finite() || !gn.is_finite() {
            return Err(Error::Optimizer { iterations: k, grad_norm: gn });
        }
        if gn <= opts.grad_tol {
            return Ok(BfgsResult { x: x.as_slice().to_vec(), value: fx, grad_norm: gn, iterations: k });
        }
        let mut p = -(&h * &g);
        let mut slope = g.dot(&p);
        if !(slope < 0.0) {
            h.fill_with_identity();
            fresh = true;
            p = -g.clone();
            slope = -gn * gn;
        }

        let mut alpha = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            x_new.copy_from(&x);
            x_new.axpy(alpha, &p, 1.0);
            let f_new = f(x_new.as_slice(), g_new.as_mut_slice());
            let armijo = f_new <= fx + 1e-4 * alpha * slope;
            // objective flat to rounding: fall back on the gradient
            let flat = f_new <= fx + 1e-13 * fx.abs().max(1.0) && g_new.norm() < gn;
            if f_new.is_finite() && (armijo || flat) {
                fx = f_new;
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if !accepted {
            if fresh {
                return Err(Error::Optimizer { iterations: k, grad_norm: gn });
            }
            h.fill_with_identity();
            fresh = true;
            continue;
        }

        let s = &x_new - &x;
        let y = &g_new - &g;
        let sy = s.dot(&y);
        if sy > 1e-12 * s.norm() * y.norm() {
            if fresh {
                // scale the initial inverse Hessian
                h *= sy / y.dot(&y);
            }
            let rho = 1.0 / sy;
            let hy = &h * &y;
            let yhy = y.dot(&hy);
            // H ← H − ρ(s·(Hy)ᵀ + (Hy)·sᵀ) + (ρ²·yᵀHy + ρ)·s·sᵀ
            h.ger(-rho, &s, &hy, 1.0);
            h.ger(-rho, &hy, &s, 1.0);
            h.ger(rho * rho * yhy + rho, &s, &s, 1.0);
            fresh = false;
        }
        std::mem::swap(&mut x, &mut x_new);
        std::mem::swap(&mut g, &mut g_new);
    }
    Err(Error::Optimizer { iterations: opts.max_iter, grad_norm: g.norm() })
}

/// Minimises Σloss + ((Δ + λ_reg)/2)‖θ‖² + bᵀθ from θ = 0.
pub fn solve_perturbed(problem: &ErmProblem, data: &Dataset, pert: &Perturbation) -> Result<Theta> {
    problem.check_data(data)?;
    if pert.linear.len() != problem.dim() {
        return Err(Error::argument("perturbation dimension does not match problem"));
    }
    let ridge = pert.delta_reg + problem.lambda_reg();
    let objective = |theta: &[f64], grad: &mut [f64]| {
        let mut f = 0.0;
        for (gj, (tj, bj)) in grad.iter_mut().zip(theta.iter().zip(&pert.linear)) {
            *gj = ridge * tj + bj;
            f += 0.5 * ridge * tj * tj + bj * tj;
        }
        for x in data.iter() {
            f += problem.loss(theta, x);
            problem.add_grad_loss(theta, x, 1.0, grad);
        }
        f
    };
    let res = bfgs(objective, &vec![0.0; problem.dim()], BfgsOptions::default())?;
    log::debug!("bfgs converged in {} iterations, |g| = {:e}", res.iterations, res.grad_norm);
    Theta::new(res.x)
}

/// Non-private regularised ERM.
pub fn erm_train(problem: &ErmProblem, data: &Dataset) -> Result<Theta> {
    solve_perturbed(problem, data, &Perturbation::none(problem.dim()))
}

/// A released parameter and what it cost.
#[derive(Debug, Clone)]
pub struct Release {
    pub theta: Theta,
    pub ledger: PrivacyLedger,
}

/// Objective perturbation at (ε, δ).
pub fn objpert_train<R: Rng + ?Sized>(
    problem: &ErmProblem,
    data: &Dataset,
    epsilon: f64,
    delta: f64,
    rng: &mut R,
) -> Result<Release> {
    let budget = PrivacyBudget::new(epsilon, delta)?;
    let pert = Perturbation::draw(problem, epsilon, delta, rng)?;
    let theta = solve_perturbed(problem, data, &pert)?;
    let mut ledger = PrivacyLedger::new();
    ledger.record("objpert", budget);
    Ok(Release { theta, ledger })
}

/// σ = gaussian_sigma(2L/λ_reg, ε, δ).
pub fn outpert_sigma(problem: &ErmProblem, epsilon: f64, delta: f64) -> Result<f64> {
    if !(problem.lambda_reg() > 0.0) {
        return Err(Error::config("output perturbation needs lambda_reg > 0"));
    }
    gaussian_sigma(2.0 * problem.lipschitz() / problem.lambda_reg(), epsilon, delta)
}

/// Gaussian output perturbation of the regularised ERM minimiser.
pub fn outpert_train<R: Rng + ?Sized>(
    problem: &ErmProblem,
    data: &Dataset,
    epsilon: f64,
    delta: f64,
    rng: &mut R,
) -> Result<Release> {
    let budget = PrivacyBudget::new(epsilon, delta)?;
    let sigma = outpert_sigma(problem, epsilon, delta)?;
    let mut theta = erm_train(problem, data)?.into_inner();
    for t in theta.iter_mut() {
        *t += sigma * rng.sample::<f64, _>(StandardNormal);
    }
    let mut ledger = PrivacyLedger::new();
    ledger.record("outpert", budget);
    Ok(Release { theta: Theta::new(theta)?, ledger })
}
