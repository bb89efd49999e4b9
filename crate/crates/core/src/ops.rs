//! One-posterior-sample (OPS) mechanism.
//!
//! The likelihood and prior are tempered by ρ = min(1, ε/(4B)) and a single
//! draw from the tempered posterior is released. Under exact sampling the
//! release is ε-DP. This module also provides an exact enumeration oracle
//! over finite supports used to check the privacy ratio directly.

use std::io::Write;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::model::{minibatch_gradient_into, tempered_log_posterior, Dataset, DataPoint, Model, ParamDomain, Theta};
use crate::privacy::{degrade_approx_sampling, PrivacyBudget};
use crate::sgmcmc::{Schedule, SamplerConfig};

/// ρ = min(1, ε/(4B))
pub fn ops_scale(b: f64, epsilon: f64) -> f64 {
    (epsilon / (4.0 * b)).min(1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpsBackend {
    RandomWalkMh,
    Mala,
    Sgnht,
}

impl OpsBackend {
    /// Random-walk MH up to dimension 10, SGNHT above.
    pub fn default_for_dim(d: usize) -> Self {
        if d <= 10 {
            OpsBackend::RandomWalkMh
        } else {
            OpsBackend::Sgnht
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OpsConfig {
    pub epsilon: f64,
    /// None picks by dimension.
    pub backend: Option<OpsBackend>,
    pub chain_length: usize,
    /// Defaults to half the chain.
    pub burn_in: Option<usize>,
    /// Proposal standard deviation (MH, MALA) or sqrt of the stepsize
    /// (SGNHT). None tunes it from a pilot run.
    pub proposal_scale: Option<f64>,
    pub seed: u64,
    pub keep_chain: bool,
}

impl OpsConfig {
    pub fn new(epsilon: f64) -> Self {
        OpsConfig {
            epsilon,
            backend: None,
            chain_length: 2000,
            burn_in: None,
            proposal_scale: None,
            seed: 0,
            keep_chain: false,
        }
    }

    pub fn burn_in(&self) -> usize {
        self.burn_in.unwrap_or(self.chain_length / 2)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) {
            return Err(Error::config(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        if self.chain_length == 0 || self.burn_in() >= self.chain_length {
            return Err(Error::config(format!(
                "burn-in ({}) must be shorter than the chain ({})",
                self.burn_in(),
                self.chain_length
            )));
        }
        if let Some(s) = self.proposal_scale {
            if !(s > 0.0) || !s.is_finite() {
                return Err(Error::config(format!("proposal scale must be positive, got {s}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainRow {
    pub iter: usize,
    pub theta: Vec<f64>,
    pub log_post: f64,
}

#[derive(Debug, Clone)]
pub struct OpsOutput {
    pub theta: Theta,
    pub rho: f64,
    /// Charge under the exact-sampling idealisation, (ε, 0).
    pub budget: PrivacyBudget,
    pub backend: OpsBackend,
    /// None for the SGNHT backend.
    pub acceptance_rate: Option<f64>,
    /// Post-burn-in states when `keep_chain` is set.
    pub chain: Option<Vec<ChainRow>>,
}

impl OpsOutput {
    /// The guarantee when the sampler is only known to be within `l1_gap`
    /// of the tempered posterior.
    pub fn approximate_budget(&self, l1_gap: f64) -> Result<PrivacyBudget> {
        degrade_approx_sampling(self.budget.epsilon(), l1_gap)
    }

    /// CSV with columns iter, theta_0..theta_{d−1}, log_post.
    pub fn write_trace_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["iter".to_string()];
        header.extend((0..self.theta.dim()).map(|j| format!("theta_{j}")));
        header.push("log_post".into());
        w.write_record(&header)?;
        for row in self.chain.iter().flatten() {
            let mut rec = vec![row.iter.to_string()];
            rec.extend(row.theta.iter().map(|v| v.to_string()));
            rec.push(row.log_post.to_string());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

struct Target<'a, M: Model + ?Sized> {
    model: &'a M,
    data: &'a Dataset,
    rho: f64,
    domain: ParamDomain,
    all: Vec<usize>,
}

impl<'a, M: Model + ?Sized> Target<'a, M> {
    fn log_density(&self, theta: &[f64], iter: usize) -> Result<f64> {
        if !self.domain.contains(theta) {
            return Ok(f64::NEG_INFINITY);
        }
        let lp = tempered_log_posterior(self.model, self.data, theta, self.rho);
        if lp.is_nan() || lp == f64::INFINITY {
            return Err(Error::Sampler {
                iteration: iter,
                message: format!("log-posterior is {lp}"),
                state: theta.to_vec(),
            });
        }
        Ok(lp)
    }

    fn gradient(&self, theta: &[f64], out: &mut [f64]) {
        if self.all.is_empty() {
            out.iter_mut().for_each(|v| *v = 0.0);
            self.model.add_grad_log_prior(theta, self.rho, out);
        } else {
            minibatch_gradient_into(self.model, self.data, &self.all, theta, self.rho, out);
        }
    }
}

struct Chain {
    theta: Vec<f64>,
    lp: f64,
    grad: Vec<f64>,
    accepted: usize,
    proposed: usize,
}

fn mh_step<M: Model + ?Sized, R: Rng + ?Sized>(
    target: &Target<'_, M>,
    chain: &mut Chain,
    scales: &[f64],
    mala: bool,
    iter: usize,
    rng: &mut R,
) -> Result<()> {
    let d = chain.theta.len();
    let mut prop = vec![0.0; d];
    for j in 0..d {
        let z: f64 = rng.sample(StandardNormal);
        let drift = if mala { 0.5 * scales[j] * scales[j] * chain.grad[j] } else { 0.0 };
        prop[j] = chain.theta[j] + drift + scales[j] * z;
    }
    let lp = target.log_density(&prop, iter)?;
    chain.proposed += 1;
    if lp == f64::NEG_INFINITY {
        return Ok(());
    }
    let mut log_ratio = lp - chain.lp;
    let mut prop_grad = Vec::new();
    if mala {
        prop_grad = vec![0.0; d];
        target.gradient(&prop, &mut prop_grad);
        // log q(θ | θ') − log q(θ' | θ)
        let mut fwd = 0.0;
        let mut bwd = 0.0;
        for j in 0..d {
            let s2 = scales[j] * scales[j];
            let f = prop[j] - chain.theta[j] - 0.5 * s2 * chain.grad[j];
            let b = chain.theta[j] - prop[j] - 0.5 * s2 * prop_grad[j];
            fwd += f * f / (2.0 * s2);
            bwd += b * b / (2.0 * s2);
        }
        log_ratio += fwd - bwd;
    }
    if log_ratio >= 0.0 || rng.random::<f64>().ln() < log_ratio {
        chain.theta = prop;
        chain.lp = lp;
        if mala {
            chain.grad = prop_grad;
        }
        chain.accepted += 1;
    }
    Ok(())
}

/// Tunes per-coordinate proposal scales: coarse rescaling rounds until the
/// acceptance rate is moderate, then 2.38/sqrt(d) (MH) or 1.65/d^(1/6)
/// (MALA) times pilot standard deviations.
fn pilot<M: Model + ?Sized, R: Rng + ?Sized>(
    target: &Target<'_, M>,
    chain: &mut Chain,
    mala: bool,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let d = chain.theta.len();
    let mut s = match &target.domain {
        ParamDomain::Ball { radius, .. } => 0.5 * radius,
        ParamDomain::Unconstrained => 1.0,
    };
    let (lo, hi) = if mala { (0.35, 0.8) } else { (0.15, 0.5) };
    for _ in 0..40 {
        let (a0, p0) = (chain.accepted, chain.proposed);
        for i in 0..100 {
            mh_step(target, chain, &vec![s; d], mala, i, rng)?;
        }
        let acc = (chain.accepted - a0) as f64 / (chain.proposed - p0) as f64;
        if acc < lo {
            s *= if acc < 0.05 { 0.2 } else { 0.6 };
        } else if acc > hi {
            s *= if acc > 0.9 { 4.0 } else { 1.6 };
        } else {
            break;
        }
    }
    let k = 500;
    let mut sum = vec![0.0; d];
    let mut sum2 = vec![0.0; d];
    for i in 0..k {
        mh_step(target, chain, &vec![s; d], mala, i, rng)?;
        for j in 0..d {
            sum[j] += chain.theta[j];
            sum2[j] += chain.theta[j] * chain.theta[j];
        }
    }
    let factor = if mala { 1.65 / (d as f64).powf(1.0 / 6.0) } else { 2.38 / (d as f64).sqrt() };
    Ok((0..d)
        .map(|j| {
            let m = sum[j] / k as f64;
            let sd = (sum2[j] / k as f64 - m * m).max(0.0).sqrt();
            if sd > 0.0 {
                factor * sd
            } else {
                s
            }
        })
        .collect())
}

/// Releases one draw from the tempered posterior.
pub fn ops_sample<M: Model + ?Sized, R: Rng + ?Sized>(
    model: &M,
    data: &Dataset,
    cfg: &OpsConfig,
    rng: &mut R,
) -> Result<OpsOutput> {
    cfg.validate()?;
    let b = model.bound_b();
    if !b.is_finite() || !(b > 0.0) {
        return Err(Error::PrivacyGate(format!("OPS needs a finite positive log-likelihood bound B, got {b}")));
    }
    if !data.is_empty() {
        model.check_data(data)?;
    }
    let rho = ops_scale(b, cfg.epsilon);
    let budget = PrivacyBudget::pure(cfg.epsilon)?;
    let d = model.dim();
    let mut backend = cfg.backend.unwrap_or(OpsBackend::default_for_dim(d));
    if backend == OpsBackend::Sgnht && data.is_empty() {
        backend = OpsBackend::RandomWalkMh;
    }
    let theta0 = model.initial_point();
    if backend == OpsBackend::Sgnht {
        return ops_sgnht(model, data, cfg, rho, budget, &theta0, rng);
    }

    let mala = backend == OpsBackend::Mala;
    let target = Target {
        model,
        data,
        rho,
        domain: model.domain(),
        all: (0..data.len()).collect(),
    };
    let lp0 = target.log_density(&theta0, 0)?;
    if !lp0.is_finite() {
        return Err(Error::Sampler { iteration: 0, message: "initial point has zero density".into(), state: theta0 });
    }
    let mut chain = Chain { grad: vec![0.0; d], theta: theta0, lp: lp0, accepted: 0, proposed: 0 };
    if mala {
        target.gradient(&chain.theta.clone(), &mut chain.grad);
    }
    let scales = match cfg.proposal_scale {
        Some(s) => vec![s; d],
        None => pilot(&target, &mut chain, mala, rng)?,
    };
    chain.accepted = 0;
    chain.proposed = 0;
    let burn = cfg.burn_in();
    let mut rows = cfg.keep_chain.then(Vec::new);
    for iter in 1..=cfg.chain_length {
        mh_step(&target, &mut chain, &scales, mala, iter, rng)?;
        if let Some(rows) = rows.as_mut() {
            if iter > burn {
                rows.push(ChainRow { iter, theta: chain.theta.clone(), log_post: chain.lp });
            }
        }
    }
    Ok(OpsOutput {
        theta: Theta::new(chain.theta)?,
        rho,
        budget,
        backend,
        acceptance_rate: Some(chain.accepted as f64 / chain.proposed.max(1) as f64),
        chain: rows,
    })
}

fn ops_sgnht<M: Model + ?Sized, R: Rng + ?Sized>(
    model: &M,
    data: &Dataset,
    cfg: &OpsConfig,
    rho: f64,
    budget: PrivacyBudget,
    theta0: &[f64],
    rng: &mut R,
) -> Result<OpsOutput> {
    let n = data.len();
    let l = model.lipschitz();
    let eta = match cfg.proposal_scale {
        Some(s) => s * s,
        None if l.is_finite() => 1e-2 / (rho * (n as f64 * l * l + 1.0)),
        None => 1e-2 / (rho * (n as f64 + 1.0)),
    };
    let tau = ((n as f64).sqrt().ceil() as usize).clamp(1, n);
    let passes = (cfg.chain_length * tau).div_ceil(n);
    let sg = SamplerConfig::new(tau, passes, Schedule::Constant { eta0: eta })
        .with_burn_in(cfg.burn_in() as f64 / cfg.chain_length as f64);
    let trace = crate::sgmcmc::sgnht_run_tempered(model, data, &sg, theta0, 0.05, rho, rng)?;
    let chain = cfg.keep_chain.then(|| {
        trace
            .sampling_rows()
            .map(|r| ChainRow { iter: r.t, theta: r.theta.clone(), log_post: tempered_log_posterior(model, data, &r.theta, rho) })
            .collect()
    });
    Ok(OpsOutput {
        theta: Theta::new(trace.final_theta)?,
        rho,
        budget,
        backend: OpsBackend::Sgnht,
        acceptance_rate: None,
        chain,
    })
}

/// Exact posterior over a finite support.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscretePosterior {
    pub support: Vec<Theta>,
    pub probs: Vec<f64>,
    pub log_probs: Vec<f64>,
}

impl DiscretePosterior {
    /// Index of the most probable support point; the lowest index wins ties.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (j, &lp) in self.log_probs.iter().enumerate() {
            if lp > self.log_probs[best] {
                best = j;
            }
        }
        best
    }
}

/// probs[j] ∝ exp(ρ·Σᵢ log p(xᵢ|θⱼ) + ρ·log π(θⱼ)), normalised in log space.
pub fn posterior_enumerate<M: Model + ?Sized>(
    support: &[Theta],
    model: &M,
    data: &Dataset,
    rho: f64,
) -> Result<DiscretePosterior> {
    if support.is_empty() {
        return Err(Error::argument("support must be nonempty"));
    }
    let logm: Vec<f64> = support
        .iter()
        .map(|th| {
            if th.dim() != model.dim() {
                return Err(Error::argument("support point has the wrong dimension"));
            }
            let lp = tempered_log_posterior(model, data, th, rho);
            if lp.is_nan() {
                return Err(Error::argument("log-posterior is NaN on the support"));
            }
            Ok(lp)
        })
        .collect::<Result<_>>()?;
    let max = logm.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(Error::argument("posterior has zero mass on every support point"));
    }
    let lse = max + logm.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    let log_probs: Vec<f64> = logm.iter().map(|v| v - lse).collect();
    Ok(DiscretePosterior { support: support.to_vec(), probs: log_probs.iter().map(|v| v.exp()).collect(), log_probs })
}

/// max over the support of |log p(θ|X) − log p(θ|X′)|.
pub fn max_log_ratio<M: Model + ?Sized>(
    support: &[Theta],
    model: &M,
    x: &Dataset,
    x_prime: &Dataset,
    rho: f64,
) -> Result<f64> {
    let p = posterior_enumerate(support, model, x, rho)?;
    let q = posterior_enumerate(support, model, x_prime, rho)?;
    Ok(p.log_probs.iter().zip(&q.log_probs).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
}

#[derive(Debug, Clone, PartialEq)]
pub struct DpRatioReport {
    pub trials: usize,
    pub max_log_ratio: f64,
    pub epsilon_claim: f64,
    pub violations: usize,
}

impl DpRatioReport {
    pub fn passed(&self) -> bool {
        self.violations == 0
    }
}

/// Replaces a uniformly chosen point of `data` with a fresh draw of
/// `point_gen`, `trials` times, and records the largest log-ratio.
#[allow(clippy::too_many_arguments)]
pub fn verify_dp_ratio<M, R, G>(
    support: &[Theta],
    model: &M,
    data: &Dataset,
    rho: f64,
    epsilon_claim: f64,
    trials: usize,
    mut point_gen: G,
    rng: &mut R,
) -> Result<DpRatioReport>
where
    M: Model + ?Sized,
    R: Rng + ?Sized,
    G: FnMut(&mut R) -> DataPoint,
{
    if data.is_empty() {
        return Err(Error::argument("neighbouring datasets need at least one point"));
    }
    let mut report = DpRatioReport { trials, max_log_ratio: 0.0, epsilon_claim, violations: 0 };
    for _ in 0..trials {
        let i = rng.random_range(0..data.len());
        let p = point_gen(rng);
        let neighbour = data.replace(i, p)?;
        let r = max_log_ratio(support, model, data, &neighbour, rho)?;
        report.max_log_ratio = report.max_log_ratio.max(r);
        if r > epsilon_claim {
            report.violations += 1;
        }
    }
    Ok(report)
}

/// Metropolis chain over a finite support with uniform proposals among
/// the other points. Returns visit counts.
pub fn discrete_metropolis<M: Model + ?Sized, R: Rng + ?Sized>(
    support: &[Theta],
    model: &M,
    data: &Dataset,
    rho: f64,
    steps: usize,
    rng: &mut R,
) -> Result<Vec<usize>> {
    let post = posterior_enumerate(support, model, data, rho)?;
    let k = support.len();
    let mut counts = vec![0usize; k];
    let mut cur = 0usize;
    for _ in 0..steps {
        if k > 1 {
            let mut j = rng.random_range(0..k - 1);
            if j >= cur {
                j += 1;
            }
            let lr = post.log_probs[j] - post.log_probs[cur];
            if lr >= 0.0 || rng.random::<f64>().ln() < lr {
                cur = j;
            }
        }
        counts[cur] += 1;
    }
    Ok(counts)
}
