//! Stochastic-gradient MCMC samplers and their private variants.
//!
//! Every sampler works on the (optionally tempered) log-posterior in the
//! ascent direction. Minibatches are drawn uniformly without replacement,
//! afresh at every iteration. Iterations are numbered from 1.

mod hmc;
mod hybrid;
mod sgfs;
mod sgld;

pub use hmc::{
    dp_sghmc_check, dp_sghmc_run, dp_sgnht_check, dp_sgnht_run, friction_gate, sghmc_run, sghmc_step, sgnht_run, sgnht_step,
    HmcState,
};
pub use hybrid::hybrid_run;
pub(crate) use hmc::sgnht_run_tempered;
pub use sgfs::{dp_sgfs_run, dp_sgfs_sigma2, private_covariance, project_psd, sgfs_run, SgfsConfig};
pub use sgld::{dp_sgld_run, sgld_run, sgld_step};

use std::io::Write;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

use crate::error::{Error, Result};
use crate::model::{minibatch_gradient_into, Dataset, Model, ParamDomain};
use crate::privacy::{
    check_t_condition, sgld_iterations, sgld_noise_coefficient, sgld_noise_variance, sgmcmc_log_factor,
    t_threshold, PrivacyBudget, PrivacyLedger,
};

/// Threshold on ‖v‖ and ‖θ‖ beyond which a chain is declared divergent.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

/// Stepsize schedule η_t.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Schedule {
    /// a·(b + t)^(−γ)
    Decay { a: f64, b: f64, gamma: f64 },
    Constant { eta0: f64 },
    /// max(a·(b + t)^(−γ), η₀)
    DecayFloor { a: f64, b: f64, gamma: f64, eta0: f64 },
}

impl Schedule {
    pub fn eta(&self, t: usize) -> f64 {
        let t = t as f64;
        match *self {
            Schedule::Decay { a, b, gamma } => a * (b + t).powf(-gamma),
            Schedule::Constant { eta0 } => eta0,
            Schedule::DecayFloor { a, b, gamma, eta0 } => (a * (b + t).powf(-gamma)).max(eta0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let decay_ok = |a: f64, b: f64, gamma: f64| {
            if !(a > 0.0) || !(b >= 0.0) {
                return Err(Error::config("decay schedule needs a > 0 and b >= 0"));
            }
            if !(gamma > 0.5 && gamma <= 1.0) {
                return Err(Error::config(format!("decay exponent gamma must lie in (0.5, 1], got {gamma}")));
            }
            Ok(())
        };
        match *self {
            Schedule::Decay { a, b, gamma } => decay_ok(a, b, gamma),
            Schedule::Constant { eta0 } if eta0 > 0.0 && eta0.is_finite() => Ok(()),
            Schedule::Constant { eta0 } => Err(Error::config(format!("stepsize must be positive, got {eta0}"))),
            Schedule::DecayFloor { a, b, gamma, eta0 } => {
                decay_ok(a, b, gamma)?;
                if !(eta0 > 0.0) {
                    return Err(Error::config("stepsize floor must be positive"));
                }
                Ok(())
            }
        }
    }
}

/// η_t = αε²/(128·L²·ln(2.5NT/(τδ))·ln(2/δ)·t). The privacy branch of the
/// DP-SGLD noise equals η_t at t = αNT/τ and falls below it afterwards.
pub fn alpha_phase_schedule(
    alpha: f64,
    n: usize,
    passes: f64,
    tau: usize,
    l: f64,
    epsilon: f64,
    delta: f64,
) -> Result<Schedule> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::config(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    let a = alpha * epsilon * epsilon / (128.0 * l * l * sgmcmc_log_factor(n, passes, tau, delta));
    Ok(Schedule::Decay { a, b: 0.0, gamma: 1.0 })
}

/// Iteration at which the α-phase schedule crosses the noise floor.
pub fn alpha_phase_crossover(alpha: f64, n: usize, passes: f64, tau: usize) -> f64 {
    alpha * n as f64 * passes / tau as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplerConfig {
    pub tau: usize,
    /// Number of data passes T.
    pub passes: usize,
    pub schedule: Schedule,
    /// Fraction of iterations tagged as burn-in.
    pub burn_in: f64,
    pub seed: u64,
    /// Keep every k-th iterate in the trace.
    pub collect_every: usize,
}

impl SamplerConfig {
    pub fn new(tau: usize, passes: usize, schedule: Schedule) -> Self {
        SamplerConfig { tau, passes, schedule, burn_in: 0.5, seed: 0, collect_every: 1 }
    }

    pub fn with_burn_in(mut self, fraction: f64) -> Self {
        self.burn_in = fraction;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_collect_every(mut self, k: usize) -> Self {
        self.collect_every = k;
        self
    }

    /// floor(N·T/τ)
    pub fn iterations(&self, n: usize) -> usize {
        sgld_iterations(n, self.passes as f64, self.tau)
    }

    pub fn burn_in_iterations(&self, n: usize) -> usize {
        (self.burn_in * self.iterations(n) as f64).floor() as usize
    }

    /// Fresh generator seeded from `seed`.
    pub fn rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.seed)
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if n == 0 {
            return Err(Error::argument("stochastic-gradient samplers need a nonempty dataset"));
        }
        if self.tau == 0 || self.tau > n {
            return Err(Error::config(format!("minibatch size must lie in [1, N = {n}], got {}", self.tau)));
        }
        if !(0.0..1.0).contains(&self.burn_in) {
            return Err(Error::config(format!("burn-in fraction must lie in [0, 1), got {}", self.burn_in)));
        }
        if self.collect_every == 0 {
            return Err(Error::config("collect_every must be at least 1"));
        }
        self.schedule.validate()
    }
}

/// Configuration of a private run.
#[derive(Debug, Clone, PartialEq)]
pub struct PrivateSamplerConfig {
    pub base: SamplerConfig,
    pub epsilon: f64,
    pub delta: f64,
    /// Multiplies the injected noise variance. The trace records what was
    /// injected, so the noise audit flags any value other than 1.
    #[doc(hidden)]
    pub noise_tamper: f64,
}

impl PrivateSamplerConfig {
    pub fn new(base: SamplerConfig, epsilon: f64, delta: f64) -> Self {
        PrivateSamplerConfig { base, epsilon, delta, noise_tamper: 1.0 }
    }

    fn budget(&self) -> Result<PrivacyBudget> {
        if !(self.epsilon > 0.0) || !self.epsilon.is_finite() {
            return Err(Error::config(format!("epsilon must be positive and finite, got {}", self.epsilon)));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::config(format!("delta must lie in (0, 1), got {}", self.delta)));
        }
        PrivacyBudget::new(self.epsilon, self.delta)
    }

    /// Common gate of every private sampler: valid budget, finite L and the
    /// T-condition. Returns the declared L. Needs only N, not the data.
    pub fn gate<M: Model + ?Sized>(&self, model: &M, n: usize) -> Result<f64> {
        self.budget()?;
        self.base.validate(n)?;
        let l = model.lipschitz();
        if !l.is_finite() || !(l > 0.0) {
            return Err(Error::PrivacyGate(
                "model declares no finite gradient bound L; private sampling is impossible".into(),
            ));
        }
        let t = self.base.passes as f64;
        if !check_t_condition(n, t, self.base.tau, self.epsilon, self.delta) {
            return Err(Error::PrivacyGate(format!(
                "T-condition fails: T = {} < {:.6} = eps^2 N / (32 tau ln(2/delta))",
                self.base.passes,
                t_threshold(n, self.base.tau, self.epsilon, self.delta)
            )));
        }
        if self.base.iterations(n) == 0 {
            return Err(Error::config("configuration yields zero iterations"));
        }
        Ok(l)
    }
}

/// The rule that determines the injected per-coordinate noise variance
/// from η_t. Stored with every trace so the noise can be audited.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseRule {
    /// η_t
    Langevin,
    /// DP-SGLD planner: max(coef·η_t², η_t).
    DpSgld { n: usize, passes: f64, tau: usize, l: f64, epsilon: f64, delta: f64 },
    /// 2·c·η_t, with c = a − b̂ (SGHMC) or c = a (SGNHT).
    Friction { c: f64 },
    /// max(σ², 1/(N²η_t))
    Sgfs { n: usize, sigma2: f64 },
    /// No injected noise (e.g. the OPS point of a hybrid run).
    None,
}

impl NoiseRule {
    pub fn expected(&self, eta: f64) -> f64 {
        match *self {
            NoiseRule::Langevin => eta,
            NoiseRule::DpSgld { n, passes, tau, l, epsilon, delta } => {
                sgld_noise_variance(n, passes, tau, l, epsilon, delta, eta).unwrap_or(f64::NAN)
            }
            NoiseRule::Friction { c } => 2.0 * c * eta,
            NoiseRule::Sgfs { n, sigma2 } => sigma2.max(1.0 / ((n * n) as f64 * eta)),
            NoiseRule::None => 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    BurnIn,
    Sampling,
}

impl Phase {
    pub fn as_str(&self) -> &'static str {
        match self {
            Phase::BurnIn => "burnin",
            Phase::Sampling => "sampling",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub t: usize,
    pub phase: Phase,
    pub eta: f64,
    pub noise_var: f64,
    pub theta: Vec<f64>,
}

/// Iterates released by a sampler, with their stepsizes, injected noise
/// and the privacy events of the run.
#[derive(Debug, Clone)]
pub struct SampleTrace {
    pub rows: Vec<TraceRow>,
    pub ledger: PrivacyLedger,
    pub noise_rule: NoiseRule,
    /// Last iterate, whether or not it was collected.
    pub final_theta: Vec<f64>,
}

impl SampleTrace {
    pub(crate) fn new(noise_rule: NoiseRule, theta0: &[f64]) -> Self {
        SampleTrace { rows: Vec::new(), ledger: PrivacyLedger::new(), noise_rule, final_theta: theta0.to_vec() }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Total privacy cost of the run, (0, 0) when nothing was charged.
    pub fn ledger_event(&self) -> PrivacyBudget {
        self.ledger.total()
    }

    pub fn sampling_rows(&self) -> impl Iterator<Item = &TraceRow> {
        self.rows.iter().filter(|r| r.phase == Phase::Sampling)
    }

    /// Coordinates of the sampling-phase iterates.
    pub fn samples(&self) -> Vec<Vec<f64>> {
        self.sampling_rows().map(|r| r.theta.clone()).collect()
    }

    /// Post-burn-in mean.
    pub fn mean(&self) -> Option<Vec<f64>> {
        let rows: Vec<&TraceRow> = self.sampling_rows().collect();
        let d = rows.first()?.theta.len();
        let mut m = vec![0.0; d];
        for r in &rows {
            for (mi, v) in m.iter_mut().zip(&r.theta) {
                *mi += v;
            }
        }
        m.iter_mut().for_each(|v| *v /= rows.len() as f64);
        Some(m)
    }

    /// Rows whose recorded noise variance deviates from the noise rule.
    pub fn noise_audit(&self) -> Vec<usize> {
        self.rows
            .iter()
            .filter(|r| r.noise_var != self.noise_rule.expected(r.eta))
            .map(|r| r.t)
            .collect()
    }

    /// CSV with columns t, phase, eta, noise_var, theta_0..theta_{d−1}.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let d = self.final_theta.len();
        let mut header = vec!["t".to_string(), "phase".into(), "eta".into(), "noise_var".into()];
        header.extend((0..d).map(|j| format!("theta_{j}")));
        w.write_record(&header)?;
        for r in &self.rows {
            let mut rec = vec![r.t.to_string(), r.phase.as_str().to_string(), r.eta.to_string(), r.noise_var.to_string()];
            rec.extend(r.theta.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Shared per-run state: minibatch indices, gradient buffer and the trace
/// bookkeeping.
pub(crate) struct Runner<'a, M: Model + ?Sized> {
    pub model: &'a M,
    pub data: &'a Dataset,
    pub rho: f64,
    pub tau: usize,
    pub iterations: usize,
    pub burn_in: usize,
    pub collect_every: usize,
    pub schedule: Schedule,
    pub domain: ParamDomain,
    pub grad: Vec<f64>,
}

impl<'a, M: Model + ?Sized> Runner<'a, M> {
    pub fn new(model: &'a M, data: &'a Dataset, cfg: &SamplerConfig, rho: f64) -> Result<Self> {
        cfg.validate(data.len())?;
        model.check_data(data)?;
        Ok(Runner {
            model,
            data,
            rho,
            tau: cfg.tau,
            iterations: cfg.iterations(data.len()),
            burn_in: cfg.burn_in_iterations(data.len()),
            collect_every: cfg.collect_every,
            schedule: cfg.schedule,
            domain: model.domain(),
            grad: vec![0.0; model.dim()],
        })
    }

    /// Stochastic estimate of ∇ log π_ρ at θ from a fresh minibatch.
    pub fn gradient<R: Rng + ?Sized>(&mut self, theta: &[f64], t: usize, rng: &mut R) -> Result<()> {
        let idx = rand::seq::index::sample(rng, self.data.len(), self.tau).into_vec();
        minibatch_gradient_into(self.model, self.data, &idx, theta, self.rho, &mut self.grad);
        if self.grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Sampler {
                iteration: t,
                message: "non-finite gradient".into(),
                state: theta.to_vec(),
            });
        }
        Ok(())
    }

    /// Projects θ back onto the model's parameter domain.
    pub fn project(&self, theta: &mut [f64]) {
        self.domain.project(theta);
    }

    pub fn phase(&self, t: usize) -> Phase {
        if t <= self.burn_in {
            Phase::BurnIn
        } else {
            Phase::Sampling
        }
    }

    pub fn record(&self, trace: &mut SampleTrace, t: usize, eta: f64, noise_var: f64, theta: &[f64]) {
        if t % self.collect_every == 0 || t == self.iterations {
            trace.rows.push(TraceRow { t, phase: self.phase(t), eta, noise_var, theta: theta.to_vec() });
        }
    }
}

pub(crate) fn check_theta<M: Model + ?Sized>(model: &M, theta: &[f64]) -> Result<()> {
    if theta.len() != model.dim() {
        return Err(Error::argument(format!(
            "initial point has dimension {}, model has {}",
            theta.len(),
            model.dim()
        )));
    }
    if theta.iter().any(|v| !v.is_finite()) {
        return Err(Error::argument("initial point is not finite"));
    }
    Ok(())
}

pub(crate) fn diverged(iteration: usize, message: &str, theta: &[f64]) -> Error {
    Error::Sampler { iteration, message: message.into(), state: theta.to_vec() }
}

/// Factor multiplying η_t² in the private noise of a run.
pub(crate) fn privacy_coefficient(cfg: &PrivateSamplerConfig, n: usize, l: f64) -> f64 {
    sgld_noise_coefficient(n, cfg.base.passes as f64, cfg.base.tau, l, cfg.epsilon, cfg.delta)
}
