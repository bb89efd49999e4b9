use rand::Rng;
use rand_distr::StandardNormal;

use super::{check_theta, privacy_coefficient, NoiseRule, PrivateSamplerConfig, Runner, SampleTrace, SamplerConfig};
use crate::error::Result;
use crate::model::{Dataset, Model, Theta};
use crate::privacy::{sgld_noise_variance, PrivacyBudget};

/// θ ← θ + (η/2)·g + N(0, noise_var·I)
fn langevin_update<R: Rng + ?Sized>(theta: &mut [f64], grad: &[f64], eta: f64, noise_var: f64, rng: &mut R) {
    let sd = noise_var.sqrt();
    for (th, g) in theta.iter_mut().zip(grad) {
        let z: f64 = rng.sample(StandardNormal);
        *th += 0.5 * eta * g + sd * z;
    }
}

/// One non-private SGLD iterate at iteration `t`.
pub fn sgld_step<M: Model + ?Sized, R: Rng + ?Sized>(
    model: &M,
    data: &Dataset,
    theta: &Theta,
    t: usize,
    cfg: &SamplerConfig,
    rng: &mut R,
) -> Result<Theta> {
    check_theta(model, theta)?;
    let mut run = Runner::new(model, data, cfg, 1.0)?;
    let mut next = theta.to_vec();
    let eta = cfg.schedule.eta(t);
    run.gradient(&next, t, rng)?;
    langevin_update(&mut next, &run.grad, eta, eta, rng);
    run.project(&mut next);
    Theta::new(next)
}

fn run_langevin<M: Model + ?Sized, R: Rng + ?Sized>(
    mut run: Runner<'_, M>,
    theta0: &Theta,
    rule: NoiseRule,
    tamper: f64,
    rng: &mut R,
) -> Result<SampleTrace> {
    let mut theta = theta0.to_vec();
    let mut trace = SampleTrace::new(rule, &theta);
    trace.rows.reserve(run.iterations / run.collect_every + 1);
    for t in 1..=run.iterations {
        let eta = run.schedule.eta(t);
        let noise_var = rule.expected(eta);
        run.gradient(&theta, t, rng)?;
        langevin_update(&mut theta, &run.grad, eta, noise_var * tamper, rng);
        run.project(&mut theta);
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(super::diverged(t, "non-finite iterate", &theta));
        }
        run.record(&mut trace, t, eta, noise_var * tamper, &theta);
    }
    trace.final_theta = theta;
    Ok(trace)
}

/// Non-private SGLD for floor(N·T/τ) iterations.
pub fn sgld_run<M: Model + ?Sized, R: Rng + ?Sized>(
    model: &M,
    data: &Dataset,
    cfg: &SamplerConfig,
    theta0: &Theta,
    rng: &mut R,
) -> Result<SampleTrace> {
    check_theta(model, theta0)?;
    let run = Runner::new(model, data, cfg, 1.0)?;
    run_langevin(run, theta0, NoiseRule::Langevin, 1.0, rng)
}

/// DP-SGLD. Refuses to run unless the T-condition holds. Every iterate is
/// released and the whole run is charged (ε, δ).
pub fn dp_sgld_run<M: Model + ?Sized, R: Rng + ?Sized>(
    model: &M,
    data: &Dataset,
    cfg: &PrivateSamplerConfig,
    theta0: &Theta,
    rng: &mut R,
) -> Result<SampleTrace> {
    check_theta(model, theta0)?;
    let n = data.len();
    let l = cfg.gate(model, n)?;
    let rule = NoiseRule::DpSgld {
        n,
        passes: cfg.base.passes as f64,
        tau: cfg.base.tau,
        l,
        epsilon: cfg.epsilon,
        delta: cfg.delta,
    };
    debug_assert!({
        let eta = cfg.base.schedule.eta(1);
        let coef = privacy_coefficient(cfg, n, l);
        rule.expected(eta) == (coef * eta * eta).max(eta)
    });
    // evaluate once so an invalid argument surfaces before any iteration
    sgld_noise_variance(n, cfg.base.passes as f64, cfg.base.tau, l, cfg.epsilon, cfg.delta, cfg.base.schedule.eta(1))?;
    let run = Runner::new(model, data, &cfg.base, 1.0)?;
    let mut trace = run_langevin(run, theta0, rule, cfg.noise_tamper, rng)?;
    trace.ledger.record("dp-sgld", PrivacyBudget::new(cfg.epsilon, cfg.delta)?);
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use crate::model::{DataPoint, GaussianMeanModel, LogisticModel};
    use crate::sgmcmc::Schedule;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn flat_data(n: usize) -> Dataset {
        Dataset::from_points((0..n).map(|i| DataPoint::labeled(vec![if i % 2 == 0 { 0.5 } else { -0.5 }], 1.0)).collect())
            .unwrap()
    }

    #[test]
    fn accepted_private_run_has_one_ledger_event() {
        let data: Dataset = Dataset::from_points(
            (0..1000).map(|i| DataPoint::labeled(vec![((i % 7) as f64 - 3.0) / 3.0], if i % 3 == 0 { -1.0 } else { 1.0 })).collect(),
        )
        .unwrap();
        let model = LogisticModel::for_dataset(&data, 1.0).unwrap();
        let base = SamplerConfig::new(10, 1, Schedule::Constant { eta0: 1e-6 });
        let cfg = PrivateSamplerConfig::new(base, 1.0, 1e-4);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let trace = dp_sgld_run(&model, &data, &cfg, &Theta::zeros(1), &mut rng).unwrap();
        assert_eq!(trace.ledger.len(), 1);
        assert_eq!(trace.ledger_event(), PrivacyBudget::new(1.0, 1e-4).unwrap());
        assert_eq!(trace.len(), 100);
        assert!(trace.noise_audit().is_empty());
        assert!(trace.rows.iter().all(|r| r.noise_var >= r.eta));
    }

    #[test]
    fn t_condition_violation_is_refused() {
        let data = flat_data(1000);
        let model = LogisticModel::for_dataset(&data, 1.0).unwrap();
        let base = SamplerConfig::new(1, 1, Schedule::Constant { eta0: 1e-6 });
        let cfg = PrivateSamplerConfig::new(base, 10.0, 1e-4);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let r = dp_sgld_run(&model, &data, &cfg, &Theta::zeros(1), &mut rng);
        assert!(matches!(r, Err(Error::PrivacyGate(_))));
    }

    #[test]
    fn unbounded_model_is_refused() {
        let data = Dataset::from_points((0..10).map(|i| DataPoint::scalar(i as f64 / 10.0)).collect()).unwrap();
        let model = GaussianMeanModel::new(1.0, 1.0).unwrap();
        let cfg = PrivateSamplerConfig::new(SamplerConfig::new(5, 10, Schedule::Constant { eta0: 1e-3 }), 1.0, 1e-4);
        let r = dp_sgld_run(&model, &data, &cfg, &Theta::zeros(1), &mut ChaCha8Rng::seed_from_u64(0));
        assert!(matches!(r, Err(Error::PrivacyGate(_))));
    }

    #[test]
    fn deterministic_given_seed() {
        let data = Dataset::from_points((0..20).map(|i| DataPoint::scalar(i as f64 / 20.0)).collect()).unwrap();
        let model = GaussianMeanModel::new(1.0, 1.0).unwrap();
        let cfg = SamplerConfig::new(5, 5, Schedule::Constant { eta0: 1e-2 });
        let a = sgld_run(&model, &data, &cfg, &Theta::zeros(1), &mut cfg.rng()).unwrap();
        let b = sgld_run(&model, &data, &cfg, &Theta::zeros(1), &mut cfg.rng()).unwrap();
        assert_eq!(a.rows, b.rows);
    }

    #[test]
    fn pure_diffusion_increments_have_variance_eta() {
        // labels 1 with zero features: zero likelihood gradient
        let data = Dataset::from_points((0..4).map(|_| DataPoint::labeled(vec![0.0], 1.0)).collect()).unwrap();
        let model = crate::model::LinearRegressionModel::new(1, 1.0, f64::MAX).unwrap();
        let eta = 0.01;
        let cfg = SamplerConfig::new(2, 10_000, Schedule::Constant { eta0: eta }).with_burn_in(0.0);
        let tr = sgld_run(&model, &data, &cfg, &Theta::zeros(1), &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let mut prev = 0.0;
        let mut ss = 0.0;
        for r in &tr.rows {
            let d = r.theta[0] - prev;
            ss += d * d;
            prev = r.theta[0];
        }
        let v = ss / tr.rows.len() as f64;
        assert!((v / eta - 1.0).abs() < 0.05, "increment variance {v}");
    }
}
