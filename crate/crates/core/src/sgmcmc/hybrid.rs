use rand::Rng;

use super::{dp_sgld_run, NoiseRule, Phase, PrivateSamplerConfig, SampleTrace, SamplerConfig, TraceRow};
use crate::error::{Error, Result};
use crate::model::{Dataset, Model, Theta};
use crate::ops::{ops_sample, OpsConfig};
use crate::privacy::PrivacyBudget;

/// Hybrid posterior sampling: an OPS draw at ε/2 initialises DP-SGLD run
/// at (ε/2, δ). The burn-in fraction of `sg_cfg` is ignored and every
/// DP-SGLD iterate is tagged as a sample. With zero passes only the OPS
/// draw is returned.
pub fn hybrid_run<M: Model + ?Sized, R: Rng + ?Sized>(
    model: &M,
    data: &Dataset,
    epsilon: f64,
    delta: f64,
    ops_cfg: &OpsConfig,
    sg_cfg: &SamplerConfig,
    rng: &mut R,
) -> Result<SampleTrace> {
    if !(epsilon > 0.0) || !epsilon.is_finite() {
        return Err(Error::config(format!("epsilon must be positive and finite, got {epsilon}")));
    }
    let half = epsilon / 2.0;
    let mut sg = sg_cfg.clone();
    sg.burn_in = 0.0;
    let private = PrivateSamplerConfig::new(sg, half, delta);
    // refuse before spending anything
    if sg_cfg.passes > 0 {
        private.gate(model, data.len())?;
    }

    let ops = ops_sample(model, data, &OpsConfig { epsilon: half, ..ops_cfg.clone() }, rng)?;
    let ops_budget = PrivacyBudget::pure(half)?;
    if sg_cfg.passes == 0 {
        let mut trace = SampleTrace::new(NoiseRule::None, &ops.theta);
        trace.rows.push(TraceRow { t: 0, phase: Phase::Sampling, eta: 0.0, noise_var: 0.0, theta: ops.theta.to_vec() });
        trace.ledger.record("ops", ops_budget);
        return Ok(trace);
    }
    let sgld = dp_sgld_run(model, data, &private, &Theta::new(ops.theta.to_vec())?, rng)?;
    let mut trace = SampleTrace::new(sgld.noise_rule, &ops.theta);
    trace.ledger.record("ops", ops_budget);
    for (label, b) in sgld.ledger.events() {
        trace.ledger.record(label.clone(), *b);
    }
    trace.rows = sgld.rows;
    trace.final_theta = sgld.final_theta;
    Ok(trace)
}
