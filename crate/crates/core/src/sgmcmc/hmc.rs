use rand::Rng;
use rand_distr::StandardNormal;

use super::{
    check_theta, diverged, privacy_coefficient, NoiseRule, PrivateSamplerConfig, Runner, SampleTrace, SamplerConfig,
    DIVERGENCE_LIMIT,
};
use crate::error::{Error, Result};
use crate::model::{norm2, Dataset, Model, Theta};
use crate::privacy::{sgld_noise_coefficient, PrivacyBudget};

/// Position, momentum and (for SGNHT) thermostat of a momentum sampler.
#[derive(Debug, Clone, PartialEq)]
pub struct HmcState {
    pub theta: Vec<f64>,
    pub v: Vec<f64>,
    pub alpha: f64,
}

impl HmcState {
    /// Zero momentum, thermostat at `alpha`.
    pub fn at_rest(theta: &[f64], alpha: f64) -> Self {
        HmcState { theta: theta.to_vec(), v: vec![0.0; theta.len()], alpha }
    }
}

#[derive(Debug, Clone, Copy)]
enum Dynamics {
    /// friction a, noise-model correction b̂
    Sghmc { a: f64, b_hat: f64 },
    /// injected-noise level a; the friction is the thermostat α
    Sgnht { a: f64 },
}

impl Dynamics {
    fn validate(&self) -> Result<()> {
        match *self {
            Dynamics::Sghmc { a, b_hat } => {
                if !(b_hat >= 0.0) || !(a > b_hat) || !a.is_finite() {
                    return Err(Error::config(format!("SGHMC needs a > b_hat >= 0, got a = {a}, b_hat = {b_hat}")));
                }
            }
            Dynamics::Sgnht { a } => {
                if !(a > 0.0) || !a.is_finite() {
                    return Err(Error::config(format!("SGNHT needs a > 0, got {a}")));
                }
            }
        }
        Ok(())
    }

    fn noise_coefficient(&self) -> f64 {
        match *self {
            Dynamics::Sghmc { a, b_hat } => a - b_hat,
            Dynamics::Sgnht { a } => a,
        }
    }
}

/// One momentum update. The new momentum is applied to θ in the same
/// iteration, so the scheme is symplectic Euler.
fn update<R: Rng + ?Sized>(
    state: &mut HmcState,
    grad: &[f64],
    eta: f64,
    noise_var: f64,
    dynamics: Dynamics,
    rng: &mut R,
) {
    let sd = noise_var.sqrt();
    let friction = match dynamics {
        Dynamics::Sghmc { a, .. } => a,
        Dynamics::Sgnht { .. } => state.alpha,
    };
    for ((v, th), g) in state.v.iter_mut().zip(state.theta.iter_mut()).zip(grad) {
        let z: f64 = rng.sample(StandardNormal);
        *v += eta * g - friction * *v + sd * z;
        *th += *v;
    }
    if let Dynamics::Sgnht { .. } = dynamics {
        let d = state.v.len() as f64;
        let kinetic: f64 = state.v.iter().map(|v| v * v).sum::<f64>() / d;
        state.alpha += kinetic - eta;
    }
}

fn guard(state: &HmcState, t: usize) -> Result<()> {
    let (nv, nt) = (norm2(&state.v), norm2(&state.theta));
    if !(nv <= DIVERGENCE_LIMIT) || !(nt <= DIVERGENCE_LIMIT) || !state.alpha.is_finite() {
        return Err(diverged(t, &format!("chain diverged (|v| = {nv:e}, |theta| = {nt:e})"), &state.theta));
    }
    Ok(())
}

fn run_momentum<M: Model + ?Sized, R: Rng + ?Sized>(
    mut run: Runner<'_, M>,
    theta0: &[f64],
    dynamics: Dynamics,
    tamper: f64,
    rng: &mut R,
) -> Result<SampleTrace> {
    let rule = NoiseRule::Friction { c: dynamics.noise_coefficient() };
    let alpha0 = match dynamics {
        Dynamics::Sgnht { a } => a,
        Dynamics::Sghmc { .. } => 0.0,
    };
    let mut state = HmcState::at_rest(theta0, alpha0);
    let mut trace = SampleTrace::new(rule, theta0);
    trace.rows.reserve(run.iterations / run.collect_every + 1);
    for t in 1..=run.iterations {
        let eta = run.schedule.eta(t);
        let noise_var = rule.expected(eta);
        run.gradient(&state.theta, t, rng)?;
        update(&mut state, &run.grad, eta, noise_var * tamper, dynamics, rng);
        run.project(&mut state.theta);
        guard(&state, t)?;
        run.record(&mut trace, t, eta, noise_var * tamper, &state.theta);
    }
    trace.final_theta = state.theta;
    Ok(trace)
}

fn single_step<M: Model + ?Sized, R: Rng + ?Sized>(
    model: &M,
    data: &Dataset,
    state: &HmcState,
    t: usize,
    cfg: &SamplerConfig,
    dynamics: Dynamics,
    rng: &mut R,
) -> Result<HmcState> {
    dynamics.validate()?;
    check_theta(model, &state.theta)?;
    if state.v.len() != state.theta.len() {
        return Err(Error::argument("momentum and position dimensions differ"));
    }
    let mut run = Runner::new(model, data, cfg, 1.0)?;
    let eta = cfg.schedule.eta(t);
    let mut next = state.clone();
    run.gradient(&next.theta, t, rng)?;
    update(&mut next, &run.grad, eta, 2.0 * dynamics.noise_coefficient() * eta, dynamics, rng);
    run.project(&mut next.theta);
    guard(&next, t)?;
    Ok(next)
}

/// One SGHMC iterate: v ← v + η_t·g − a·v + N(0, 2(a − b̂)η_t·I), θ ← θ + v.
#[allow(clippy::too_many_arguments)]
pub fn sghmc_step<M: Model + ?Sized, R: Rng + ?Sized>(
    model: &M,
    data: &Dataset,
    state: &HmcState,
    t: usize,
    cfg: &SamplerConfig,
    a: f64,
    b_hat: f64,
    rng: &mut R,
) -> Result<HmcState> {
    single_step(model, data, state, t, cfg, Dynamics::Sghmc { a, b_hat }, rng)
}

/// One SGNHT iterate: v ← v − α·v + η_t·g + N(0, 2aη_t·I), θ ← θ + v,
/// α ← α + vᵀv/d − η_t.
pub fn sgnht_step<M: Model + ?Sized, R: Rng + ?Sized>(
    model: &M,
    data: &Dataset,
    state: &HmcState,
    t: usize,
    cfg: &SamplerConfig,
    a: f64,
    rng: &mut R,
) -> Result<HmcState> {
    single_step(model, data, state, t, cfg, Dynamics::Sgnht { a }, rng)
}

pub fn sghmc_run<M: Model + ?Sized, R: Rng + ?Sized>(
    model: &M,
    data: &Dataset,
    cfg: &SamplerConfig,
    theta0: &Theta,
    a: f64,
    b_hat: f64,
    rng: &mut R,
) -> Result<SampleTrace> {
    let dynamics = Dynamics::Sghmc { a, b_hat };
    dynamics.validate()?;
    check_theta(model, theta0)?;
    run_momentum(Runner::new(model, data, cfg, 1.0)?, theta0, dynamics, 1.0, rng)
}

pub fn sgnht_run<M: Model + ?Sized, R: Rng + ?Sized>(
    model: &M,
    data: &Dataset,
    cfg: &SamplerConfig,
    theta0: &Theta,
    a: f64,
    rng: &mut R,
) -> Result<SampleTrace> {
    sgnht_run_tempered(model, data, cfg, theta0, a, 1.0, rng)
}

/// SGNHT on the tempered posterior π_ρ.
pub(crate) fn sgnht_run_tempered<M: Model + ?Sized, R: Rng + ?Sized>(
    model: &M,
    data: &Dataset,
    cfg: &SamplerConfig,
    theta0: &[f64],
    a: f64,
    rho: f64,
    rng: &mut R,
) -> Result<SampleTrace> {
    let dynamics = Dynamics::Sgnht { a };
    dynamics.validate()?;
    check_theta(model, theta0)?;
    run_momentum(Runner::new(model, data, cfg, rho)?, theta0, dynamics, 1.0, rng)
}

/// True iff 2(a − b̂)/η_t ≥ 128·N·T·L²/(τε²)·ln(2.5NT/(τδ))·ln(2/δ).
#[allow(clippy::too_many_arguments)]
pub fn dp_sghmc_check(
    a: f64,
    b_hat: f64,
    eta: f64,
    n: usize,
    passes: f64,
    tau: usize,
    l: f64,
    epsilon: f64,
    delta: f64,
) -> bool {
    2.0 * (a - b_hat) / eta >= sgld_noise_coefficient(n, passes, tau, l, epsilon, delta)
}

/// True iff 2a/η_t ≥ the DP-SGLD privacy coefficient.
#[allow(clippy::too_many_arguments)]
pub fn dp_sgnht_check(a: f64, eta: f64, n: usize, passes: f64, tau: usize, l: f64, epsilon: f64, delta: f64) -> bool {
    dp_sghmc_check(a, 0.0, eta, n, passes, tau, l, epsilon, delta)
}

/// Refuses unless 2c/η_t ≥ coef for every planned iteration, where c is
/// a − b̂ (SGHMC) or a (SGNHT).
pub fn friction_gate(cfg: &PrivateSamplerConfig, n: usize, l: f64, c: f64, label: &str) -> Result<()> {
    let coef = privacy_coefficient(cfg, n, l);
    let iters = cfg.base.iterations(n);
    if let Some(t) = (1..=iters).find(|&t| 2.0 * c / cfg.base.schedule.eta(t) < coef) {
        let eta = cfg.base.schedule.eta(t);
        return Err(Error::PrivacyGate(format!(
            "{label} friction condition fails at iteration {t}: 2c/eta = {:.6e} < {coef:.6e} (c = {c}, eta = {eta:e})",
            2.0 * c / eta
        )));
    }
    Ok(())
}

fn private_momentum_run<M: Model + ?Sized, R: Rng + ?Sized>(
    model: &M,
    data: &Dataset,
    cfg: &PrivateSamplerConfig,
    theta0: &Theta,
    dynamics: Dynamics,
    label: &str,
    rng: &mut R,
) -> Result<SampleTrace> {
    dynamics.validate()?;
    check_theta(model, theta0)?;
    let n = data.len();
    let l = cfg.gate(model, n)?;
    friction_gate(cfg, n, l, dynamics.noise_coefficient(), label)?;
    let run = Runner::new(model, data, &cfg.base, 1.0)?;
    let mut trace = run_momentum(run, theta0, dynamics, cfg.noise_tamper, rng)?;
    trace.ledger.record(label, PrivacyBudget::new(cfg.epsilon, cfg.delta)?);
    Ok(trace)
}

/// Private SGHMC. The friction condition is checked for every planned
/// iteration before the first one runs.
pub fn dp_sghmc_run<M: Model + ?Sized, R: Rng + ?Sized>(
    model: &M,
    data: &Dataset,
    cfg: &PrivateSamplerConfig,
    theta0: &Theta,
    a: f64,
    b_hat: f64,
    rng: &mut R,
) -> Result<SampleTrace> {
    private_momentum_run(model, data, cfg, theta0, Dynamics::Sghmc { a, b_hat }, "dp-sghmc", rng)
}

pub fn dp_sgnht_run<M: Model + ?Sized, R: Rng + ?Sized>(
    model: &M,
    data: &Dataset,
    cfg: &PrivateSamplerConfig,
    theta0: &Theta,
    a: f64,
    rng: &mut R,
) -> Result<SampleTrace> {
    private_momentum_run(model, data, cfg, theta0, Dynamics::Sgnht { a }, "dp-sgnht", rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{DataPoint, LinearRegressionModel, LogisticModel};
    use crate::sgmcmc::Schedule;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    // zero features: the likelihood gradient vanishes; a huge prior
    // variance makes the prior gradient negligible
    fn zero_field() -> (LinearRegressionModel, Dataset) {
        let data = Dataset::from_points((0..4).map(|_| DataPoint::labeled(vec![0.0], 1.0)).collect()).unwrap();
        (LinearRegressionModel::new(1, 1.0, f64::MAX).unwrap(), data)
    }

    #[test]
    fn check_examples() {
        let coef = sgld_noise_coefficient(1000, 50.0, 10, 1.0, 1.0, 1e-4);
        assert!((coef - 1.182e8).abs() / 1.182e8 < 1e-3);
        let eta = 1e-6;
        let a_min = coef * eta / 2.0;
        assert!((a_min - 59.1).abs() < 0.1);
        // power-of-two stepsize makes the boundary case exact
        let eta2 = 2f64.powi(-20);
        assert!(dp_sghmc_check(coef * eta2 / 2.0, 0.0, eta2, 1000, 50.0, 10, 1.0, 1.0, 1e-4));
        assert!(dp_sghmc_check(1.0001 * a_min, 0.0, eta, 1000, 50.0, 10, 1.0, 1.0, 1e-4));
        assert!(!dp_sghmc_check(0.99 * a_min, 0.0, eta, 1000, 50.0, 10, 1.0, 1.0, 1e-4));
        assert!(dp_sghmc_check(0.99 * a_min, 0.0, eta / 2.0, 1000, 50.0, 10, 1.0, 1.0, 1e-4));
        assert_eq!(
            dp_sgnht_check(a_min, eta, 1000, 50.0, 10, 1.0, 1.0, 1e-4),
            dp_sghmc_check(a_min, 0.0, eta, 1000, 50.0, 10, 1.0, 1.0, 1e-4)
        );
        assert_eq!(
            dp_sgnht_check(1.0001 * a_min, eta, 1000, 50.0, 10, 1.0, 1.0, 1e-4),
            dp_sghmc_check(1.0001 * a_min, 0.0, eta, 1000, 50.0, 10, 1.0, 1.0, 1e-4)
        );
        assert!(dp_sgnht_check(2.0 * a_min, eta, 1000, 50.0, 10, 1.0, 1.0, 1e-4));
    }

    #[test]
    fn full_friction_momentum_is_pure_noise() {
        let (model, data) = zero_field();
        let cfg = SamplerConfig::new(2, 1, Schedule::Constant { eta0: 0.01 });
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut s = HmcState::at_rest(&[0.0], 0.0);
        s.v = vec![100.0];
        let mut vs = Vec::new();
        for t in 1..=20_000 {
            s = sghmc_step(&model, &data, &s, t, &cfg, 1.0, 0.0, &mut rng).unwrap();
            vs.push(s.v[0]);
        }
        assert!(vs[0].abs() < 1.0);
        let var = vs.iter().map(|v| v * v).sum::<f64>() / vs.len() as f64;
        assert!((var / 0.02 - 1.0).abs() < 0.05);
        let lag1 = vs.windows(2).map(|w| w[0] * w[1]).sum::<f64>() / (vs.len() - 1) as f64;
        assert!(lag1.abs() / var < 0.03);
    }

    #[test]
    fn momentum_is_ar1_with_coefficient_one_minus_a() {
        let (model, data) = zero_field();
        let cfg = SamplerConfig::new(2, 1, Schedule::Constant { eta0: 0.01 });
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = 0.3;
        let mut s = HmcState::at_rest(&[0.0], 0.0);
        let mut vs = Vec::new();
        for t in 1..=40_000 {
            s = sghmc_step(&model, &data, &s, t, &cfg, a, 0.0, &mut rng).unwrap();
            vs.push(s.v[0]);
        }
        let var = vs.iter().map(|v| v * v).sum::<f64>() / vs.len() as f64;
        let lag1 = vs.windows(2).map(|w| w[0] * w[1]).sum::<f64>() / (vs.len() - 1) as f64;
        assert!((lag1 / var - (1.0 - a)).abs() < 0.02);
        // stationary variance of the AR(1): 2aη/(1 − (1−a)²)
        let expected = 2.0 * a * 0.01 / (1.0 - (1.0 - a) * (1.0 - a));
        assert!((var / expected - 1.0).abs() < 0.05);
    }

    #[test]
    fn friction_must_exceed_b_hat() {
        let (model, data) = zero_field();
        let cfg = SamplerConfig::new(2, 1, Schedule::Constant { eta0: 0.01 });
        let s = HmcState::at_rest(&[0.0], 0.0);
        let r = sghmc_step(&model, &data, &s, 1, &cfg, 0.1, 0.1, &mut ChaCha8Rng::seed_from_u64(0));
        assert!(matches!(r, Err(Error::Config(_))));
    }

    #[test]
    fn frictionless_free_motion() {
        // kinetic energy equal to η keeps the thermostat at zero
        let (model, data) = zero_field();
        let cfg = SamplerConfig::new(2, 1, Schedule::Constant { eta0: 0.01 });
        let mut s = HmcState { theta: vec![0.0], v: vec![0.1], alpha: 0.0 };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for t in 1..=10 {
            s = sgnht_step(&model, &data, &s, t, &cfg, 1e-300, &mut rng).unwrap();
        }
        assert!((s.v[0] - 0.1).abs() < 1e-12);
        assert!((s.theta[0] - 1.0).abs() < 1e-10);
    }

    #[test]
    fn thermostat_holds_kinetic_energy_at_eta() {
        let (model, data) = zero_field();
        let eta = 1e-3;
        let cfg = SamplerConfig::new(2, 1, Schedule::Constant { eta0: eta });
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut s = HmcState::at_rest(&[0.0], 0.05);
        let mut ke = 0.0;
        let k = 50_000;
        for t in 1..=k {
            s = sgnht_step(&model, &data, &s, t, &cfg, 0.05, &mut rng).unwrap();
            ke += s.v[0] * s.v[0];
        }
        assert!((ke / k as f64 / eta - 1.0).abs() < 0.05);
    }

    #[test]
    fn runaway_chain_is_stopped() {
        let (model, data) = zero_field();
        let cfg = SamplerConfig::new(2, 1, Schedule::Constant { eta0: 1.0 });
        let mut s = HmcState::at_rest(&[0.0], -5.0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut failed = false;
        for t in 1..=200 {
            match sgnht_step(&model, &data, &s, t, &cfg, 1.0, &mut rng) {
                Ok(next) => s = next,
                Err(Error::Sampler { .. }) => {
                    failed = true;
                    break;
                }
                Err(e) => panic!("{e}"),
            }
        }
        assert!(failed);
    }

    #[test]
    fn private_runs_refuse_weak_friction() {
        let data = Dataset::from_points(
            (0..1000).map(|i| DataPoint::labeled(vec![((i % 5) as f64 - 2.0) / 2.0], 1.0)).collect(),
        )
        .unwrap();
        let model = LogisticModel::for_dataset(&data, 1.0).unwrap();
        let base = SamplerConfig::new(10, 50, Schedule::Constant { eta0: 1e-6 });
        let cfg = PrivateSamplerConfig::new(base, 1.0, 1e-4);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let r = dp_sghmc_run(&model, &data, &cfg, &Theta::zeros(1), 50.0, 0.0, &mut rng);
        assert!(matches!(r, Err(Error::PrivacyGate(_))));
        let r = dp_sgnht_run(&model, &data, &cfg, &Theta::zeros(1), 50.0, &mut rng);
        assert!(matches!(r, Err(Error::PrivacyGate(_))));

        let short = PrivateSamplerConfig::new(SamplerConfig::new(10, 1, Schedule::Constant { eta0: 1e-9 }), 1.0, 1e-4);
        let coef = privacy_coefficient(&short, 1000, 1.0);
        let a = coef * 1e-9;
        let tr = dp_sghmc_run(&model, &data, &short, &Theta::zeros(1), a, 0.0, &mut rng).unwrap();
        assert_eq!(tr.ledger.len(), 1);
        assert!(tr.noise_audit().is_empty());
    }
}
