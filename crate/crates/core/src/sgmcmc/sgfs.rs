use log::warn;
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;

use super::{check_theta, diverged, NoiseRule, PrivateSamplerConfig, Runner, SampleTrace, SamplerConfig};
use crate::error::{Error, Result};
use crate::model::{Dataset, Model, Theta};
use crate::privacy::{sample_covariance, sgmcmc_log_factor, PrivacyBudget};

#[derive(Debug, Clone, PartialEq)]
pub struct SgfsConfig {
    /// Smoothness matrix F; defaults to L·I (or I when L is unbounded).
    pub f: Option<DMatrix<f64>>,
    /// Use this per-datum Fisher information instead of the online estimate.
    pub fisher: Option<DMatrix<f64>>,
    /// Constant averaging weight κ; defaults to κ_t = 1/t.
    pub kappa: Option<f64>,
}

impl SgfsConfig {
    pub fn new() -> Self {
        SgfsConfig { f: None, fisher: None, kappa: None }
    }
}

impl Default for SgfsConfig {
    fn default() -> Self {
        SgfsConfig::new()
    }
}

/// Eigenvalue clipping onto the positive semidefinite cone.
pub fn project_psd(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let clipped = eig.eigenvalues.map(|l| l.max(0.0));
    &eig.eigenvectors * DMatrix::from_diagonal(&clipped) * eig.eigenvectors.transpose()
}

/// Sample covariance of the gradients plus a symmetric Gaussian
/// perturbation with entry variance 49‖F‖⁴σ², projected onto the PSD cone.
pub fn private_covariance<R: Rng + ?Sized>(
    grads: &[Vec<f64>],
    f_norm: f64,
    sigma2: f64,
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    let mut c = sample_covariance(grads)?;
    if sigma2 > 0.0 {
        let sd = 7.0 * f_norm * f_norm * sigma2.sqrt();
        let d = c.nrows();
        for i in 0..d {
            for j in i..d {
                let w = sd * rng.sample::<f64, _>(StandardNormal);
                c[(i, j)] += w;
                if i != j {
                    c[(j, i)] += w;
                }
            }
        }
    }
    Ok(project_psd(&c))
}

fn solve_spd(m: &DMatrix<f64>, rhs: &DVector<f64>, t: usize, theta: &[f64]) -> Result<DVector<f64>> {
    if let Some(ch) = m.clone().cholesky() {
        return Ok(ch.solve(rhs));
    }
    warn!("SGFS preconditioner singular at iteration {t}; adding 1e-10 I");
    let reg = m + DMatrix::<f64>::identity(m.nrows(), m.ncols()) * 1e-10;
    match reg.cholesky() {
        Some(ch) => Ok(ch.solve(rhs)),
        None => Err(diverged(t, "SGFS preconditioner is not positive definite", theta)),
    }
}

#[allow(clippy::too_many_arguments)]
fn run_sgfs<M: Model + ?Sized, R: Rng + ?Sized>(
    run: Runner<'_, M>,
    theta0: &[f64],
    f: &DMatrix<f64>,
    sgfs: &SgfsConfig,
    sigma2: f64,
    private: bool,
    tamper: f64,
    rng: &mut R,
) -> Result<SampleTrace> {
    let d = theta0.len();
    let n = run.data.len();
    let (nf, tauf) = (n as f64, run.tau as f64);
    let f_norm = f.singular_values().max();
    let ffinv_term = f * f.transpose() * 4.0;
    let rule = NoiseRule::Sgfs { n, sigma2 };
    let mut trace = SampleTrace::new(rule, theta0);
    let mut theta = theta0.to_vec();
    let mut fisher = sgfs.fisher.clone().unwrap_or_else(|| DMatrix::zeros(d, d));
    let mut prior_grad = vec![0.0; d];
    let mut grads: Vec<Vec<f64>> = vec![vec![0.0; d]; run.tau];
    for t in 1..=run.iterations {
        let eta = run.schedule.eta(t);
        let idx = rand::seq::index::sample(rng, n, run.tau).into_vec();
        let mut gbar = DVector::<f64>::zeros(d);
        for (g, &i) in grads.iter_mut().zip(&idx) {
            g.iter_mut().for_each(|v| *v = 0.0);
            run.model.add_grad_log_lik(&theta, run.data.point(i), 1.0, g);
            gbar += DVector::from_column_slice(g);
        }
        gbar /= tauf;
        if gbar.iter().any(|v| !v.is_finite()) {
            return Err(diverged(t, "non-finite gradient", &theta));
        }
        let noise_var = rule.expected(eta);
        let sd = (noise_var * tamper).sqrt();
        let z = DVector::from_fn(d, |_, _| sd * rng.sample::<f64, _>(StandardNormal));
        let gtilde = gbar + f * z;
        if sgfs.fisher.is_none() {
            let w_sigma2 = if private { sigma2 * tamper } else { 0.0 };
            let v = private_covariance(&grads, f_norm, w_sigma2, rng)?;
            let kappa = sgfs.kappa.unwrap_or(1.0 / t as f64);
            fisher = fisher * (1.0 - kappa) + v * kappa;
        }
        let precond = &fisher * ((tauf + nf) * nf / tauf) + &ffinv_term / eta;
        prior_grad.iter_mut().for_each(|v| *v = 0.0);
        run.model.add_grad_log_prior(&theta, 1.0, &mut prior_grad);
        let rhs = DVector::from_column_slice(&prior_grad) + gtilde * nf;
        let step = solve_spd(&precond, &rhs, t, &theta)?;
        for (th, s) in theta.iter_mut().zip(step.iter()) {
            *th += 2.0 * s;
        }
        run.project(&mut theta);
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(diverged(t, "non-finite iterate", &theta));
        }
        run.record(&mut trace, t, eta, noise_var * tamper, &theta);
    }
    trace.final_theta = theta;
    Ok(trace)
}

fn smoothness_matrix<M: Model + ?Sized>(model: &M, sgfs: &SgfsConfig) -> Result<DMatrix<f64>> {
    let d = model.dim();
    let f = match &sgfs.f {
        Some(f) => f.clone(),
        None => {
            let l = model.lipschitz();
            DMatrix::<f64>::identity(d, d) * if l.is_finite() && l > 0.0 { l } else { 1.0 }
        }
    };
    if f.nrows() != d || f.ncols() != d {
        return Err(Error::config(format!("F must be {d}x{d}")));
    }
    if let Some(i) = &sgfs.fisher {
        if i.nrows() != d || i.ncols() != d {
            return Err(Error::config(format!("Fisher matrix must be {d}x{d}")));
        }
    }
    if let Some(k) = sgfs.kappa {
        if !(k > 0.0 && k <= 1.0) {
            return Err(Error::config(format!("kappa must lie in (0, 1], got {k}")));
        }
    }
    Ok(f)
}

/// Non-private stochastic gradient Fisher scoring.
pub fn sgfs_run<M: Model + ?Sized, R: Rng + ?Sized>(
    model: &M,
    data: &Dataset,
    cfg: &SamplerConfig,
    sgfs: &SgfsConfig,
    theta0: &Theta,
    rng: &mut R,
) -> Result<SampleTrace> {
    check_theta(model, theta0)?;
    let f = smoothness_matrix(model, sgfs)?;
    let run = Runner::new(model, data, cfg, 1.0)?;
    if run.tau < 2 && sgfs.fisher.is_none() {
        return Err(Error::config("SGFS needs minibatches of at least 2 points"));
    }
    run_sgfs(run, theta0, &f, sgfs, 0.0, false, 1.0, rng)
}

/// σ² = 32·T·ln(2.5NT/(τδ))·ln(2/δ)/(N·τ·ε²)
pub fn dp_sgfs_sigma2(n: usize, passes: f64, tau: usize, epsilon: f64, delta: f64) -> f64 {
    32.0 * passes * sgmcmc_log_factor(n, passes, tau, delta) / (n as f64 * tau as f64 * epsilon * epsilon)
}

/// Private SGFS, charged (2ε, 2δ).
pub fn dp_sgfs_run<M: Model + ?Sized, R: Rng + ?Sized>(
    model: &M,
    data: &Dataset,
    cfg: &PrivateSamplerConfig,
    sgfs: &SgfsConfig,
    theta0: &Theta,
    rng: &mut R,
) -> Result<SampleTrace> {
    check_theta(model, theta0)?;
    let n = data.len();
    cfg.gate(model, n)?;
    if cfg.base.tau <= 4 {
        return Err(Error::PrivacyGate(format!(
            "private covariance needs minibatches of more than 4 points, got {}",
            cfg.base.tau
        )));
    }
    let charged = PrivacyBudget::new(2.0 * cfg.epsilon, 2.0 * cfg.delta)
        .map_err(|_| Error::config("2*delta must be below 1"))?;
    let f = smoothness_matrix(model, sgfs)?;
    let sigma2 = dp_sgfs_sigma2(n, cfg.base.passes as f64, cfg.base.tau, cfg.epsilon, cfg.delta);
    let run = Runner::new(model, data, &cfg.base, 1.0)?;
    let mut trace = run_sgfs(run, theta0, &f, sgfs, sigma2, true, cfg.noise_tamper, rng)?;
    trace.ledger.record("dp-sgfs", charged);
    Ok(trace)
}
