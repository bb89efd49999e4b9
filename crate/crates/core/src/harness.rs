//! Benchmark orchestration, metrics and Monte-Carlo checks.

use std::fmt;
use std::io::Write;
use std::path::PathBuf;
use std::str::FromStr;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::baselines::{erm_train, objpert_train, outpert_train, ErmProblem};
use crate::data::{load_abalone, load_csv, load_libsvm, make_two_normals, train_test_split, Standardizer};
use crate::error::{Error, Result};
use crate::model::{dot, log1p_exp, BetaBernoulliModel, Dataset, LogisticModel, Model};
use crate::ops::{ops_sample, ops_scale, OpsConfig};
use crate::privacy::{sgld_noise_coefficient, t_threshold, PrivacyBudget, PrivacyLedger};
use crate::sgmcmc::{hybrid_run, SampleTrace, SamplerConfig, Schedule};

/// Fraction of correctly signed predictions; θᵀx = 0 counts one half.
pub fn accuracy(theta: &[f64], test: &Dataset) -> Result<f64> {
    let (n, mut score) = (test.len(), 0.0);
    if n == 0 {
        return Err(Error::argument("test set is empty"));
    }
    for p in test.iter() {
        let y = p.label.ok_or_else(|| Error::argument("accuracy needs labelled data"))?;
        let m = y * dot(theta, &p.features);
        score += if m > 0.0 {
            1.0
        } else if m == 0.0 {
            0.5
        } else {
            0.0
        };
    }
    Ok(score / n as f64)
}

/// Mean logistic loss log(1 + exp(−y·θᵀx)).
pub fn nll(theta: &[f64], test: &Dataset) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::argument("test set is empty"));
    }
    let mut total = 0.0;
    for p in test.iter() {
        let y = p.label.ok_or_else(|| Error::argument("nll needs labelled data"))?;
        total += log1p_exp(-y * dot(theta, &p.features));
    }
    Ok(total / test.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    Ops,
    Hybrid,
    ObjPert,
    OutPert,
    NonPrivate,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::Ops, Method::Hybrid, Method::ObjPert, Method::OutPert, Method::NonPrivate];

    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Ops => "ops",
            Method::Hybrid => "hybrid",
            Method::ObjPert => "objpert",
            Method::OutPert => "outpert",
            Method::NonPrivate => "nonprivate",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('_', "-").as_str() {
            "ops" => Ok(Method::Ops),
            "hybrid" => Ok(Method::Hybrid),
            "objpert" => Ok(Method::ObjPert),
            "outpert" => Ok(Method::OutPert),
            "nonprivate" | "non-private" | "erm" | "non-private-erm" => Ok(Method::NonPrivate),
            other => Err(Error::argument(format!("unknown method {other:?}"))),
        }
    }
}

/// Where benchmark data comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    TwoNormals { n: usize, d: usize, separation: f64, seed: u64 },
    Csv { path: PathBuf, label_column: Option<usize>, has_header: bool },
    Libsvm { path: PathBuf },
    Abalone { path: PathBuf },
}

impl DataSource {
    pub fn load(&self) -> Result<Dataset> {
        match self {
            DataSource::TwoNormals { n, d, separation, seed } => make_two_normals(*n, *d, *separation, *seed),
            DataSource::Csv { path, label_column, has_header } => load_csv(path, *label_column, *has_header),
            DataSource::Libsvm { path } => load_libsvm(path),
            DataSource::Abalone { path } => load_abalone(path),
        }
    }

    /// Files are z-scored on the training split; synthetic data is
    /// generated inside the unit ball already.
    pub fn standardize(&self) -> bool {
        !matches!(self, DataSource::TwoNormals { .. })
    }

    /// `synthetic:two-normals[:n[:d[:separation]]]`, `csv:PATH`,
    /// `libsvm:PATH`, `abalone:PATH`, or a bare path (CSV, label last).
    pub fn parse(text: &str, seed: u64) -> Result<Self> {
        let parts: Vec<&str> = text.split(':').collect();
        match parts.as_slice() {
            ["synthetic", "two-normals", rest @ ..] => {
                let num = |i: usize, default: f64| -> Result<f64> {
                    rest.get(i).map_or(Ok(default), |s| s.parse().map_err(|_| Error::argument(format!("bad number {s:?} in {text:?}"))))
                };
                Ok(DataSource::TwoNormals { n: num(0, 2000.0)? as usize, d: num(1, 2.0)? as usize, separation: num(2, 4.0)?, seed })
            }
            ["synthetic", ..] => Err(Error::argument(format!("unknown synthetic generator in {text:?}"))),
            ["csv", path @ ..] => Ok(DataSource::Csv { path: path.join(":").into(), label_column: None, has_header: false }),
            ["libsvm", path @ ..] => Ok(DataSource::Libsvm { path: path.join(":").into() }),
            ["abalone", path @ ..] => Ok(DataSource::Abalone { path: path.join(":").into() }),
            _ => Ok(DataSource::Csv { path: text.into(), label_column: None, has_header: false }),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    /// Parameter-ball radius C of the logistic model.
    pub radius: f64,
    /// Feature clipping radius R.
    pub data_radius: f64,
    pub lambda_reg: f64,
    pub train_fraction: f64,
    pub ops_chain_length: usize,
    /// Minibatch size for the hybrid sampler; None uses ⌈√N⌉.
    pub hybrid_tau: Option<usize>,
    /// Data passes for the hybrid sampler; None uses the smallest value
    /// meeting the T-condition.
    pub hybrid_passes: Option<usize>,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            radius: 1.0,
            data_radius: 1.0,
            lambda_reg: 1.0,
            train_fraction: 0.8,
            ops_chain_length: 2000,
            hybrid_tau: None,
            hybrid_passes: None,
        }
    }
}

/// One (method, ε, seed) cell. Failed cells carry the error text and NaN
/// metrics.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub method: Method,
    pub epsilon: f64,
    pub delta: f64,
    pub seed: u64,
    pub test_accuracy: f64,
    pub test_nll: f64,
    pub runtime_ms: f64,
    pub ledger_epsilon: f64,
    pub ledger_delta: f64,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub method: Method,
    pub epsilon: f64,
    pub cells: usize,
    pub failures: usize,
    pub mean_accuracy: f64,
    pub se_accuracy: f64,
    pub mean_nll: f64,
    pub se_nll: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct BenchmarkResult {
    pub rows: Vec<BenchRow>,
}

fn mean_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let m = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (m, f64::NAN);
    }
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

impl BenchmarkResult {
    /// Mean and standard error per (method, ε), in first-seen order.
    pub fn summary(&self) -> Vec<SummaryRow> {
        let mut keys: Vec<(Method, f64)> = Vec::new();
        for r in &self.rows {
            if !keys.iter().any(|k| k.0 == r.method && k.1 == r.epsilon) {
                keys.push((r.method, r.epsilon));
            }
        }
        keys.into_iter()
            .map(|(method, epsilon)| {
                let cell: Vec<&BenchRow> = self.rows.iter().filter(|r| r.method == method && r.epsilon == epsilon).collect();
                let ok: Vec<&&BenchRow> = cell.iter().filter(|r| r.error.is_none()).collect();
                let (mean_accuracy, se_accuracy) = mean_se(&ok.iter().map(|r| r.test_accuracy).collect::<Vec<_>>());
                let (mean_nll, se_nll) = mean_se(&ok.iter().map(|r| r.test_nll).collect::<Vec<_>>());
                SummaryRow {
                    method,
                    epsilon,
                    cells: cell.len(),
                    failures: cell.len() - ok.len(),
                    mean_accuracy,
                    se_accuracy,
                    mean_nll,
                    se_nll,
                }
            })
            .collect()
    }

    pub fn mean_accuracy(&self, method: Method, epsilon: f64) -> Option<f64> {
        self.summary().into_iter().find(|s| s.method == method && s.epsilon == epsilon).map(|s| s.mean_accuracy)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "method", "epsilon", "delta", "seed", "test_accuracy", "test_nll", "runtime_ms", "ledger_epsilon", "ledger_delta", "error",
        ])?;
        for r in &self.rows {
            w.write_record(&[
                r.method.to_string(),
                r.epsilon.to_string(),
                r.delta.to_string(),
                r.seed.to_string(),
                r.test_accuracy.to_string(),
                r.test_nll.to_string(),
                format!("{:.3}", r.runtime_ms),
                r.ledger_epsilon.to_string(),
                r.ledger_delta.to_string(),
                r.error.clone().unwrap_or_default(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_summary_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "method", "epsilon", "cells", "failures", "mean_accuracy", "se_accuracy", "mean_nll", "se_nll",
        ])?;
        for s in self.summary() {
            w.write_record(&[
                s.method.to_string(),
                s.epsilon.to_string(),
                s.cells.to_string(),
                s.failures.to_string(),
                s.mean_accuracy.to_string(),
                s.se_accuracy.to_string(),
                s.mean_nll.to_string(),
                s.se_nll.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Sampler settings used for the hybrid method on `n` training points at
/// DP-SGLD budget (ε, δ): τ = ⌈√N⌉ unless given, the fewest passes that
/// meet the T-condition, and the constant stepsize 1/coef at which the
/// privacy noise equals the Langevin noise.
pub fn hybrid_sampler_config(
    n: usize,
    l: f64,
    epsilon: f64,
    delta: f64,
    tau: Option<usize>,
    passes: Option<usize>,
) -> SamplerConfig {
    let tau = tau.unwrap_or(((n as f64).sqrt().ceil() as usize).clamp(1, n.max(1)));
    let passes = passes.unwrap_or_else(|| (t_threshold(n, tau, epsilon, delta).ceil() as usize).max(1));
    let coef = sgld_noise_coefficient(n, passes as f64, tau, l, epsilon, delta);
    SamplerConfig::new(tau, passes, Schedule::Constant { eta0: 1.0 / coef }).with_burn_in(0.0)
}

struct Cell {
    method: Method,
    epsilon: f64,
    seed: u64,
    index: u64,
}

fn ledger_row(ledger: &PrivacyLedger) -> (f64, f64) {
    let t = ledger.total();
    (t.epsilon(), t.delta())
}

fn train_cell<R: Rng>(
    method: Method,
    epsilon: f64,
    delta: f64,
    train: &Dataset,
    cfg: &BenchConfig,
    rng: &mut R,
) -> Result<(Vec<f64>, PrivacyLedger)> {
    match method {
        Method::Ops => {
            let model = LogisticModel::for_dataset(train, cfg.radius)?;
            let ops_cfg = OpsConfig { chain_length: cfg.ops_chain_length, ..OpsConfig::new(epsilon) };
            let out = ops_sample(&model, train, &ops_cfg, rng)?;
            let mut ledger = PrivacyLedger::new();
            ledger.record("ops", out.budget);
            Ok((out.theta.into_inner(), ledger))
        }
        Method::Hybrid => {
            let model = LogisticModel::for_dataset(train, cfg.radius)?;
            let ops_cfg = OpsConfig { chain_length: cfg.ops_chain_length, ..OpsConfig::new(epsilon / 2.0) };
            let sg = hybrid_sampler_config(train.len(), model.lipschitz(), epsilon / 2.0, delta, cfg.hybrid_tau, cfg.hybrid_passes);
            let trace = hybrid_run(&model, train, epsilon, delta, &ops_cfg, &sg, rng)?;
            let theta = trace.mean().unwrap_or(trace.final_theta.clone());
            Ok((theta, trace.ledger))
        }
        Method::ObjPert => {
            let problem = ErmProblem::for_dataset(train, cfg.lambda_reg)?;
            let r = objpert_train(&problem, train, epsilon, delta, rng)?;
            Ok((r.theta.into_inner(), r.ledger))
        }
        Method::OutPert => {
            let problem = ErmProblem::for_dataset(train, cfg.lambda_reg)?;
            let r = outpert_train(&problem, train, epsilon, delta, rng)?;
            Ok((r.theta.into_inner(), r.ledger))
        }
        Method::NonPrivate => {
            let problem = ErmProblem::for_dataset(train, cfg.lambda_reg)?;
            Ok((erm_train(&problem, train)?.into_inner(), PrivacyLedger::new()))
        }
    }
}

fn split_for_seed(data: &Dataset, source: &DataSource, cfg: &BenchConfig, seed: u64) -> Result<(Dataset, Dataset)> {
    let (train, test) = train_test_split(data, cfg.train_fraction, seed)?;
    if source.standardize() {
        let s = Standardizer::fit(&train, cfg.data_radius)?;
        Ok((s.apply(&train)?, s.apply(&test)?))
    } else {
        Ok((crate::model::clip_dataset(&train, cfg.data_radius)?, crate::model::clip_dataset(&test, cfg.data_radius)?))
    }
}

/// Runs every (method, ε, seed) cell. Seed `s` fixes the train/test split
/// and, together with the cell index, the training randomness. Cells that
/// fail are recorded with their error and do not abort the run.
pub fn run_benchmark(
    methods: &[Method],
    source: &DataSource,
    eps_grid: &[f64],
    delta: f64,
    seeds: &[u64],
    cfg: &BenchConfig,
) -> Result<BenchmarkResult> {
    if methods.is_empty() || eps_grid.is_empty() || seeds.is_empty() {
        return Err(Error::config("methods, epsilon grid and seeds must be non-empty"));
    }
    if let Some(e) = eps_grid.iter().find(|e| !(**e > 0.0) || !e.is_finite()) {
        return Err(Error::config(format!("epsilon must be positive and finite, got {e}")));
    }
    PrivacyBudget::new(1.0, delta)?;
    let data = source.load()?;
    let splits: Vec<(Dataset, Dataset)> = seeds.iter().map(|&s| split_for_seed(&data, source, cfg, s)).collect::<Result<_>>()?;

    let mut cells = Vec::new();
    for &method in methods {
        for &epsilon in eps_grid {
            for &seed in seeds {
                cells.push(Cell { method, epsilon, seed, index: cells.len() as u64 });
            }
        }
    }
    let rows = cells
        .par_iter()
        .map(|c| {
            let si = seeds.iter().position(|s| *s == c.seed).unwrap();
            let (train, test) = &splits[si];
            let mut rng = ChaCha8Rng::seed_from_u64(c.seed);
            rng.set_stream(c.index + 1);
            let start = Instant::now();
            let result = train_cell(c.method, c.epsilon, delta, train, cfg, &mut rng)
                .and_then(|(theta, ledger)| Ok((accuracy(&theta, test)?, nll(&theta, test)?, ledger)));
            let runtime_ms = start.elapsed().as_secs_f64() * 1e3;
            match result {
                Ok((acc, loss, ledger)) => {
                    let (le, ld) = ledger_row(&ledger);
                    BenchRow {
                        method: c.method,
                        epsilon: c.epsilon,
                        delta,
                        seed: c.seed,
                        test_accuracy: acc,
                        test_nll: loss,
                        runtime_ms,
                        ledger_epsilon: le,
                        ledger_delta: ld,
                        error: None,
                    }
                }
                Err(e) => {
                    log::warn!("{} at eps={} seed={} failed: {e}", c.method, c.epsilon, c.seed);
                    BenchRow {
                        method: c.method,
                        epsilon: c.epsilon,
                        delta,
                        seed: c.seed,
                        test_accuracy: f64::NAN,
                        test_nll: f64::NAN,
                        runtime_ms,
                        ledger_epsilon: 0.0,
                        ledger_delta: 0.0,
                        error: Some(e.to_string()),
                    }
                }
            }
        })
        .collect();
    Ok(BenchmarkResult { rows })
}

/// Empirical ARE of the OPS estimator: simulates `replicates` Bernoulli(θ₀)
/// datasets of size n, takes one exact tempered-posterior draw from each,
/// and returns n·I(θ₀)·Var(draws).
pub fn are_estimate<R: Rng + ?Sized>(
    model: &BetaBernoulliModel,
    theta0: f64,
    n: usize,
    epsilon: f64,
    replicates: usize,
    rng: &mut R,
) -> Result<f64> {
    if !(theta0 > model.lower() && theta0 < model.upper()) {
        return Err(Error::argument(format!("theta0 {theta0} outside ({}, {})", model.lower(), model.upper())));
    }
    if n == 0 || replicates < 2 {
        return Err(Error::argument("need n ≥ 1 and at least two replicates"));
    }
    if !(epsilon > 0.0) {
        return Err(Error::argument(format!("epsilon must be positive, got {epsilon}")));
    }
    let rho = ops_scale(model.bound_b(), epsilon);
    let binom = rand_distr::Binomial::new(n as u64, theta0).map_err(|e| Error::argument(e.to_string()))?;
    let draws: Vec<f64> = (0..replicates)
        .map(|_| {
            let ones = rng.sample(binom) as usize;
            model.tempered_posterior(n, ones, rho).map(|post| post.sample(rng))
        })
        .collect::<Result<_>>()?;
    let m = draws.iter().sum::<f64>() / replicates as f64;
    let var = draws.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (replicates - 1) as f64;
    Ok(n as f64 * model.fisher_information(theta0) * var)
}

pub const BATCHES: usize = 30;

/// Batch-means comparison of one coordinate against oracle moments.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentCheck {
    pub mean: f64,
    pub var: f64,
    pub mean_se: f64,
    pub var_se: f64,
    /// (mean − oracle_mean)/mean_se.
    pub mean_z: f64,
    /// (var − oracle_var)/var_se.
    pub var_z: f64,
    /// (mean − oracle_mean)/sqrt(oracle_var).
    pub mean_err_sd: f64,
    /// var/oracle_var − 1.
    pub var_rel_err: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MomentReport {
    pub coords: Vec<MomentCheck>,
    pub tol: f64,
    pub iterates: usize,
}

impl MomentReport {
    /// Every coordinate within `tol` batch-means standard errors.
    pub fn passed(&self) -> bool {
        self.coords.iter().all(|c| c.mean_z.abs() <= self.tol && c.var_z.abs() <= self.tol)
    }
}

fn batch_se(values: &[f64]) -> f64 {
    let size = values.len() / BATCHES;
    let used = &values[..size * BATCHES];
    let means: Vec<f64> = used.chunks(size).map(|c| c.iter().sum::<f64>() / size as f64).collect();
    mean_se(&means).1
}

/// Compares the sampling-phase iterates of `trace` with the oracle mean and
/// variance per coordinate, using batch means over 30 batches for the
/// standard errors.
pub fn posterior_moment_check(trace: &SampleTrace, oracle_mean: &[f64], oracle_var: &[f64], tol: f64) -> Result<MomentReport> {
    let samples = trace.samples();
    moment_check_samples(&samples, oracle_mean, oracle_var, tol)
}

/// [`posterior_moment_check`] on raw samples.
pub fn moment_check_samples(samples: &[Vec<f64>], oracle_mean: &[f64], oracle_var: &[f64], tol: f64) -> Result<MomentReport> {
    if samples.len() < 1000 {
        return Err(Error::argument(format!("need at least 1000 post-burn-in iterates, got {}", samples.len())));
    }
    let d = oracle_mean.len();
    if oracle_var.len() != d || samples.iter().any(|s| s.len() != d) {
        return Err(Error::argument("oracle and sample dimensions disagree"));
    }
    let n = samples.len() as f64;
    let coords = (0..d)
        .map(|j| {
            let xs: Vec<f64> = samples.iter().map(|s| s[j]).collect();
            let mean = xs.iter().sum::<f64>() / n;
            let sq: Vec<f64> = xs.iter().map(|x| (x - mean) * (x - mean)).collect();
            let var = sq.iter().sum::<f64>() / (n - 1.0);
            let mean_se = batch_se(&xs);
            let var_se = batch_se(&sq);
            MomentCheck {
                mean,
                var,
                mean_se,
                var_se,
                mean_z: (mean - oracle_mean[j]) / mean_se,
                var_z: (var - oracle_var[j]) / var_se,
                mean_err_sd: (mean - oracle_mean[j]) / oracle_var[j].sqrt(),
                var_rel_err: var / oracle_var[j] - 1.0,
            }
        })
        .collect();
    Ok(MomentReport { coords, tol, iterates: samples.len() })
}

/// Property suites run by `verify`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    DpRatio,
    CovSensitivity,
    Are,
    NoiseAudit,
}

impl Suite {
    pub const ALL: [Suite; 4] = [Suite::DpRatio, Suite::CovSensitivity, Suite::Are, Suite::NoiseAudit];

    pub fn as_str(&self) -> &'static str {
        match self {
            Suite::DpRatio => "dp-ratio",
            Suite::CovSensitivity => "cov-sensitivity",
            Suite::Are => "are",
            Suite::NoiseAudit => "noise-audit",
        }
    }
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Suite::ALL
            .into_iter()
            .find(|x| x.as_str() == s.trim())
            .ok_or_else(|| Error::argument(format!("unknown suite {s:?}")))
    }
}

/// One line of the `verify` table.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub suite: Suite,
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

/// Fresh random {0,1} datasets of size 1..=max_n, each paired with one
/// neighbour, checked against `claim` on the posterior over `support`.
#[allow(clippy::too_many_arguments)]
pub fn random_pairs_dp_ratio<M: Model + ?Sized, R: Rng + ?Sized>(
    support: &[crate::model::Theta],
    model: &M,
    rho: f64,
    claim: f64,
    pairs: usize,
    max_n: usize,
    rng: &mut R,
) -> Result<crate::ops::DpRatioReport> {
    use crate::model::DataPoint;
    let mut total = crate::ops::DpRatioReport { trials: 0, max_log_ratio: 0.0, epsilon_claim: claim, violations: 0 };
    let bit = |rng: &mut R| DataPoint::scalar(if rng.random::<bool>() { 1.0 } else { 0.0 });
    for _ in 0..pairs {
        let n = rng.random_range(1..=max_n);
        let data = Dataset::new((0..n).map(|_| bit(rng)).collect(), 1.0)?;
        let r = crate::ops::verify_dp_ratio(support, model, &data, rho, claim, 1, bit, rng)?;
        total.trials += 1;
        total.violations += r.violations;
        total.max_log_ratio = total.max_log_ratio.max(r.max_log_ratio);
    }
    Ok(total)
}

fn unit_ball_point<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Vec<f64> {
    use rand_distr::StandardNormal;
    let g: Vec<f64> = (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let norm = crate::model::norm2(&g);
    // half the points on the sphere, where the bound is tightest
    let r = if rng.random::<bool>() { 1.0 } else { rng.random::<f64>().powf(1.0 / d as f64) };
    g.into_iter().map(|v| v * r / norm).collect()
}

/// Largest observed ‖Cov(X) − Cov(X′)‖_F/(7L²/(n−1)) over random
/// neighbouring sets of n ∈ [5, 50] unit-ball points (L = 1), and the
/// number of pairs exceeding the bound.
pub fn cov_sensitivity_trials<R: Rng + ?Sized>(pairs: usize, rng: &mut R) -> Result<(f64, usize)> {
    use crate::privacy::{cov_sensitivity_bound, sample_covariance};
    let (mut worst, mut violations) = (0.0f64, 0);
    for _ in 0..pairs {
        let n = rng.random_range(5..=50);
        let d = rng.random_range(1..=5);
        let mut pts: Vec<Vec<f64>> = (0..n).map(|_| unit_ball_point(d, rng)).collect();
        let a = sample_covariance(&pts)?;
        let i = rng.random_range(0..n);
        pts[i] = if rng.random::<bool>() { pts[i].iter().map(|v| -v).collect() } else { unit_ball_point(d, rng) };
        let b = sample_covariance(&pts)?;
        let ratio = (a - b).norm() / cov_sensitivity_bound(1.0, n)?;
        worst = worst.max(ratio);
        if ratio > 1.0 {
            violations += 1;
        }
    }
    Ok((worst, violations))
}

/// Runs every private sampler briefly on a small logistic problem with the
/// injected noise variance multiplied by `tamper`, and returns
/// (label, rows failing the audit, rows).
pub fn noise_audit_runs(tamper: f64, seed: u64) -> Result<Vec<(&'static str, usize, usize)>> {
    use crate::sgmcmc::{dp_sgfs_run, dp_sghmc_run, dp_sgld_run, dp_sgnht_run, PrivateSamplerConfig, SgfsConfig};
    let data = make_two_normals(500, 2, 4.0, seed)?;
    let model = LogisticModel::for_dataset(&data, 1.0)?;
    let (eps, delta) = (1.0, 1e-4);
    let base = hybrid_sampler_config(data.len(), model.lipschitz(), eps, delta, Some(10), None);
    let mut cfg = PrivateSamplerConfig::new(base, eps, delta);
    cfg.noise_tamper = tamper;
    let theta0 = crate::model::Theta::zeros(2);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let traces = [
        ("dp-sgld", dp_sgld_run(&model, &data, &cfg, &theta0, &mut rng)?),
        ("dp-sghmc", dp_sghmc_run(&model, &data, &cfg, &theta0, 0.6, 0.0, &mut rng)?),
        ("dp-sgnht", dp_sgnht_run(&model, &data, &cfg, &theta0, 0.6, &mut rng)?),
        ("dp-sgfs", dp_sgfs_run(&model, &data, &cfg, &SgfsConfig::default(), &theta0, &mut rng)?),
    ];
    Ok(traces.into_iter().map(|(l, t)| (l, t.noise_audit().len(), t.len())).collect())
}

/// Runs one `verify` suite at desk scale.
pub fn run_suite(suite: Suite, tamper: f64, seed: u64) -> Result<Vec<CheckResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let mut push = |name: String, passed: bool, detail: String| out.push(CheckResult { suite, name, passed, detail });
    match suite {
        Suite::DpRatio => {
            let model = BetaBernoulliModel::new(1.0, 1.0, 0.3)?;
            let support = [crate::model::Theta::new(vec![0.3])?, crate::model::Theta::new(vec![0.7])?];
            let b = model.bound_b();
            for eps in [0.1, 1.0, 4.0 * b] {
                for rho in [1.0, ops_scale(b, eps)] {
                    let r = random_pairs_dp_ratio(&support, &model, rho, 4.0 * b * rho, 10_000, 20, &mut rng)?;
                    push(
                        format!("eps={eps:.4} rho={rho:.4}"),
                        r.passed(),
                        format!("max log-ratio {:.6} <= {:.6}, {} violations / {}", r.max_log_ratio, r.epsilon_claim, r.violations, r.trials),
                    );
                }
            }
        }
        Suite::CovSensitivity => {
            let (worst, violations) = cov_sensitivity_trials(10_000, &mut rng)?;
            push("7L^2/(n-1)".into(), violations == 0, format!("worst ratio {worst:.4}, {violations} violations / 10000"));
        }
        Suite::Are => {
            let model = BetaBernoulliModel::new(1.0, 1.0, 0.1)?;
            let b = model.bound_b();
            for (label, eps) in [("rho=1", f64::INFINITY), ("eps=B", b), ("eps=2B", 2.0 * b), ("eps=4B", 4.0 * b)] {
                let want = if eps.is_finite() { 1.0 + 4.0 * b / eps } else { 2.0 };
                let got = are_estimate(&model, 0.6, 2000, eps, 500, &mut rng)?;
                push(label.into(), (got / want - 1.0).abs() <= 0.15, format!("ARE {got:.3} vs {want:.3}"));
            }
        }
        Suite::NoiseAudit => {
            for (label, bad, rows) in noise_audit_runs(tamper, seed)? {
                push(label.into(), bad == 0, format!("{bad} of {rows} rows off plan"));
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::DataPoint;
    use rand_distr::StandardNormal;

    #[test]
    fn degenerate_classifier_metrics() {
        let d = Dataset::from_points(vec![DataPoint::labeled(vec![1.0], 1.0), DataPoint::labeled(vec![-0.5], 1.0)]).unwrap();
        assert_eq!(accuracy(&[0.0], &d).unwrap(), 0.5);
        assert!((nll(&[0.0], &d).unwrap() - 2f64.ln()).abs() < 1e-15);
        assert_eq!(accuracy(&[1.0], &Dataset::from_points(vec![DataPoint::labeled(vec![1.0], 1.0), DataPoint::labeled(vec![-1.0], -1.0)]).unwrap()).unwrap(), 1.0);
        let u = Dataset::from_points(vec![DataPoint::unlabeled(vec![1.0])]).unwrap();
        assert!(matches!(accuracy(&[0.0], &u), Err(Error::Argument(_))));
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.as_str().parse::<Method>().unwrap(), m);
        }
        assert!("nope".parse::<Method>().is_err());
    }

    #[test]
    fn source_parsing() {
        assert_eq!(
            DataSource::parse("synthetic:two-normals", 3).unwrap(),
            DataSource::TwoNormals { n: 2000, d: 2, separation: 4.0, seed: 3 }
        );
        assert_eq!(
            DataSource::parse("synthetic:two-normals:100:5", 0).unwrap(),
            DataSource::TwoNormals { n: 100, d: 5, separation: 4.0, seed: 0 }
        );
        assert!(matches!(DataSource::parse("libsvm:/a/b", 0).unwrap(), DataSource::Libsvm { .. }));
        assert!(DataSource::parse("synthetic:spiral", 0).is_err());
    }

    #[test]
    fn iid_oracle_draws_pass_and_shift_fails() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let s: Vec<Vec<f64>> = (0..30_000).map(|_| vec![1.0 + 2.0 * rng.sample::<f64, _>(StandardNormal)]).collect();
        let r = moment_check_samples(&s, &[1.0], &[4.0], 3.5).unwrap();
        assert!(r.passed(), "{r:?}");
        let shifted: Vec<Vec<f64>> = s.iter().map(|v| vec![v[0] + 20.0]).collect();
        assert!(!moment_check_samples(&shifted, &[1.0], &[4.0], 3.0).unwrap().passed());
        assert!(moment_check_samples(&s[..999], &[1.0], &[4.0], 3.0).is_err());
    }

    #[test]
    fn are_at_full_temperature_is_about_two() {
        let model = BetaBernoulliModel::new(1.0, 1.0, 0.1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let r = are_estimate(&model, 0.6, 2000, f64::INFINITY, 500, &mut rng).unwrap();
        assert!((r / 2.0 - 1.0).abs() < 0.2, "{r}");
    }

    #[test]
    fn nonprivate_constant_across_epsilon_and_reproducible() {
        let src = DataSource::TwoNormals { n: 200, d: 2, separation: 4.0, seed: 1 };
        let cfg = BenchConfig::default();
        let methods = [Method::NonPrivate, Method::ObjPert];
        let a = run_benchmark(&methods, &src, &[0.5, 5.0], 1e-4, &[1, 2], &cfg).unwrap();
        let b = run_benchmark(&methods, &src, &[0.5, 5.0], 1e-4, &[1, 2], &cfg).unwrap();
        assert_eq!(a.rows.len(), 8);
        for (x, y) in a.rows.iter().zip(&b.rows) {
            assert_eq!((x.test_accuracy, x.ledger_epsilon), (y.test_accuracy, y.ledger_epsilon));
        }
        let np: Vec<&BenchRow> = a.rows.iter().filter(|r| r.method == Method::NonPrivate).collect();
        assert_eq!(np[0].test_accuracy, np[2].test_accuracy);
        assert_eq!(np[1].test_accuracy, np[3].test_accuracy);
        for r in &a.rows {
            assert!(r.error.is_none());
            assert!(r.ledger_epsilon <= r.epsilon + 1e-12);
        }
    }

    #[test]
    fn suite_names_parse() {
        for s in Suite::ALL {
            assert_eq!(s.as_str().parse::<Suite>().unwrap(), s);
        }
    }

    #[test]
    fn audit_catches_tampering() {
        assert!(noise_audit_runs(1.0, 0).unwrap().iter().all(|r| r.1 == 0));
        assert!(noise_audit_runs(0.25, 0).unwrap().iter().all(|r| r.1 == r.2 && r.2 > 0));
    }

    #[test]
    fn failing_cells_are_recorded() {
        let src = DataSource::TwoNormals { n: 100, d: 2, separation: 4.0, seed: 1 };
        // Gaussian calibration needs ε < 1
        let r = run_benchmark(&[Method::OutPert], &src, &[0.5, 2.0], 1e-4, &[0], &BenchConfig::default()).unwrap();
        assert!(r.rows[0].error.is_none());
        assert!(r.rows[1].error.is_some());
        let s = r.summary();
        assert_eq!((s[1].cells, s[1].failures), (1, 1));
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 3);
    }
}
