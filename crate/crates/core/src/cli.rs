//! Command-line front end.
//!
//! Exit codes: 0 success, 2 configuration or usage error, 3 privacy-gate
//! refusal, 1 any other failure.

use std::ffi::OsString;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::baselines::{objpert_train, outpert_train, ErmProblem};
use crate::error::{Error, Result};
use crate::harness::{
    accuracy, hybrid_sampler_config, nll, run_benchmark, run_suite, BenchConfig, DataSource, Method, Suite,
};
use crate::model::{Dataset, LogisticModel, Model, Theta};
use crate::ops::{ops_sample, OpsBackend, OpsConfig};
use crate::privacy::{sgld_noise_coefficient, PrivacyLedger};
use crate::sgmcmc::{
    alpha_phase_schedule, dp_sgfs_run, dp_sghmc_run, dp_sgld_run, dp_sgnht_run, friction_gate, hybrid_run, sgfs_run,
    sghmc_run, sgld_run, sgnht_run, PrivateSamplerConfig, SampleTrace, SamplerConfig, Schedule, SgfsConfig,
};

#[derive(Parser, Debug)]
#[command(name = "privbayes", version, about = "Differentially private posterior sampling")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct DataArgs {
    /// synthetic:two-normals[:n[:d[:sep]]], csv:PATH, libsvm:PATH or abalone:PATH
    #[arg(long, default_value = "synthetic:two-normals")]
    data: String,
    /// CSV label column (0-based); defaults to the last column
    #[arg(long)]
    label_column: Option<usize>,
    /// CSV file has a header row
    #[arg(long)]
    header: bool,
    /// Parameter-ball radius C
    #[arg(short = 'C', long = "radius", default_value_t = 1.0)]
    radius: f64,
    /// Feature clipping radius R
    #[arg(short = 'R', long = "data-radius", default_value_t = 1.0)]
    data_radius: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug, Clone)]
struct SamplerArgs {
    /// Minibatch size; defaults to ceil(sqrt(N))
    #[arg(long)]
    tau: Option<usize>,
    /// Data passes T; private runs default to the smallest T meeting the T-condition
    #[arg(long)]
    passes: Option<usize>,
    /// Initial stepsize; constant unless --gamma is given
    #[arg(long)]
    eta0: Option<f64>,
    /// Decay exponent for eta_t = eta0 * t^(-gamma)
    #[arg(long)]
    gamma: Option<f64>,
    /// Private runs: decaying schedule whose noise crosses the floor at alpha*N*T/tau
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long, default_value_t = 0.5)]
    burn_in: f64,
    #[arg(long, default_value_t = 1)]
    collect_every: usize,
}

#[derive(Args, Debug, Clone)]
struct OutArgs {
    /// Released parameter as CSV
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    trace_out: Option<PathBuf>,
    #[arg(long)]
    ledger_out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
struct PrivacyArgs {
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum BackendArg {
    Mh,
    Mala,
    Sgnht,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// One posterior sample at pure epsilon
    Ops {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        epsilon: f64,
        #[arg(long, hide = true)]
        delta: Option<f64>,
        #[arg(long, value_enum)]
        backend: Option<BackendArg>,
        #[arg(long, default_value_t = 2000)]
        chain_length: usize,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Stochastic gradient Langevin dynamics (private with --epsilon/--delta)
    Sgld {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        privacy: PrivacyArgs,
        #[command(flatten)]
        sampler: SamplerArgs,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Stochastic gradient HMC with friction a and noise estimate b-hat
    Sghmc {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        privacy: PrivacyArgs,
        #[command(flatten)]
        sampler: SamplerArgs,
        #[arg(long, default_value_t = 0.6)]
        friction: f64,
        #[arg(long, default_value_t = 0.0)]
        b_hat: f64,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Stochastic gradient Nose-Hoover thermostat
    Sgnht {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        privacy: PrivacyArgs,
        #[command(flatten)]
        sampler: SamplerArgs,
        #[arg(long, default_value_t = 0.6)]
        friction: f64,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Stochastic gradient Fisher scoring
    Sgfs {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        privacy: PrivacyArgs,
        #[command(flatten)]
        sampler: SamplerArgs,
        #[command(flatten)]
        out: OutArgs,
    },
    /// OPS at epsilon/2 followed by DP-SGLD at (epsilon/2, delta)
    Hybrid {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        epsilon: f64,
        #[arg(long)]
        delta: f64,
        #[command(flatten)]
        sampler: SamplerArgs,
        #[arg(long, default_value_t = 2000)]
        chain_length: usize,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Objective perturbation
    Objpert {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        epsilon: f64,
        #[arg(long)]
        delta: f64,
        #[arg(long, default_value_t = 1.0)]
        lambda_reg: f64,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Gaussian output perturbation
    Outpert {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        epsilon: f64,
        #[arg(long)]
        delta: f64,
        #[arg(long, default_value_t = 1.0)]
        lambda_reg: f64,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Accuracy benchmark over methods x epsilon x seeds
    Bench {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long = "eps", alias = "epsilon", value_delimiter = ',', required = true)]
        eps: Vec<f64>,
        #[arg(long)]
        delta: f64,
        /// Number of seeds (0..k)
        #[arg(long, default_value_t = 20)]
        seeds: u64,
        #[arg(long, value_delimiter = ',', default_value = "ops,hybrid,objpert,nonprivate")]
        methods: Vec<String>,
        #[arg(long, default_value_t = 1.0)]
        lambda_reg: f64,
        #[arg(long, default_value_t = 2000)]
        chain_length: usize,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        summary_out: Option<PathBuf>,
    },
    /// Property suites with a pass/fail table
    Verify {
        /// Suites to run; all by default
        #[arg(long, value_delimiter = ',')]
        suite: Vec<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Halve the injected noise standard deviation
        #[arg(long, hide = true)]
        halve_noise: bool,
    },
}

/// Parses `argv` (including the program name), runs the subcommand and
/// returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let stdout = io::stdout();
    let mut out = stdout.lock();
    match dispatch(cli.command, &mut out) {
        Ok(code) => code,
        Err(e) => {
            let _ = out.flush();
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn source(d: &DataArgs) -> Result<DataSource> {
    let mut s = DataSource::parse(&d.data, d.seed)?;
    if let DataSource::Csv { label_column, has_header, .. } = &mut s {
        *label_column = d.label_column;
        *has_header = d.header;
    }
    Ok(s)
}

fn check_data_args(d: &DataArgs) -> Result<()> {
    if !(d.radius > 0.0) || !d.radius.is_finite() {
        return Err(Error::config(format!("--radius must be positive, got {}", d.radius)));
    }
    if !(d.data_radius > 0.0) || !d.data_radius.is_finite() {
        return Err(Error::config(format!("--data-radius must be positive, got {}", d.data_radius)));
    }
    Ok(())
}

/// Loads the data, clipped (files: standardised first) to R.
fn load(src: &DataSource, d: &DataArgs) -> Result<Dataset> {
    let raw = src.load()?;
    if src.standardize() {
        Ok(crate::data::standardize_and_clip(&raw, d.data_radius)?.0)
    } else {
        crate::model::clip_dataset(&raw, d.data_radius)
    }
}

fn logistic(dim: usize, d: &DataArgs) -> Result<LogisticModel> {
    LogisticModel::new(dim, d.radius)?.with_data_radius(d.data_radius)
}

/// Size and dimension of a synthetic source, known without generating it.
fn synthetic_shape(src: &DataSource) -> Option<(usize, usize)> {
    match src {
        DataSource::TwoNormals { n, d, .. } => Some((*n, *d)),
        _ => None,
    }
}

fn require_budget(p: &PrivacyArgs) -> Result<Option<(f64, f64)>> {
    match (p.epsilon, p.delta) {
        (Some(e), Some(d)) => Ok(Some((e, d))),
        (None, None) => Ok(None),
        (Some(_), None) => Err(Error::config("--delta is required with --epsilon for this method")),
        (None, Some(_)) => Err(Error::config("--delta given without --epsilon")),
    }
}

fn check_sampler_args(s: &SamplerArgs) -> Result<()> {
    if let Some(e) = s.eta0 {
        if !(e > 0.0) || !e.is_finite() {
            return Err(Error::config(format!("--eta0 must be positive, got {e}")));
        }
    }
    if s.gamma.is_some() && s.eta0.is_none() {
        return Err(Error::config("--gamma needs --eta0"));
    }
    if s.alpha.is_some() && s.eta0.is_some() {
        return Err(Error::config("--alpha and --eta0 are exclusive"));
    }
    if !(0.0..1.0).contains(&s.burn_in) {
        return Err(Error::config(format!("--burn-in must lie in [0, 1), got {}", s.burn_in)));
    }
    if s.collect_every == 0 {
        return Err(Error::config("--collect-every must be at least 1"));
    }
    Ok(())
}

/// Resolves τ, T and the schedule for a run on `n` points.
fn sampler_config(s: &SamplerArgs, n: usize, l: f64, budget: Option<(f64, f64)>, seed: u64) -> Result<SamplerConfig> {
    let mut cfg = match budget {
        Some((eps, delta)) => hybrid_sampler_config(n, l, eps, delta, s.tau, s.passes),
        None => {
            let tau = s.tau.unwrap_or(((n as f64).sqrt().ceil() as usize).max(1));
            SamplerConfig::new(tau, s.passes.unwrap_or(10), Schedule::Constant { eta0: 1e-4 })
        }
    };
    if let Some(eta0) = s.eta0 {
        cfg.schedule = match s.gamma {
            Some(gamma) => Schedule::Decay { a: eta0, b: 0.0, gamma },
            None => Schedule::Constant { eta0 },
        };
    } else if let Some(alpha) = s.alpha {
        let (eps, delta) = budget.ok_or_else(|| Error::config("--alpha applies to private runs only"))?;
        cfg.schedule = alpha_phase_schedule(alpha, n, cfg.passes as f64, cfg.tau, l, eps, delta)?;
    }
    cfg.schedule.validate()?;
    Ok(cfg.with_burn_in(s.burn_in).with_seed(seed).with_collect_every(s.collect_every))
}

fn open(path: &PathBuf) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn write_theta(path: &PathBuf, theta: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_writer(open(path)?);
    w.write_record((0..theta.len()).map(|j| format!("theta_{j}")))?;
    w.write_record(theta.iter().map(|v| v.to_string()))?;
    w.flush()?;
    Ok(())
}

fn print_ledger<W: Write>(out: &mut W, ledger: &PrivacyLedger) -> Result<()> {
    writeln!(out, "ledger:")?;
    for (label, b) in ledger.events() {
        writeln!(out, "  {label:<10} epsilon={} delta={}", b.epsilon(), b.delta())?;
    }
    let t = ledger.total();
    writeln!(out, "  {:<10} epsilon={} delta={}", "total", t.epsilon(), t.delta())?;
    Ok(())
}

fn finish<W: Write>(out: &mut W, o: &OutArgs, theta: &[f64], ledger: &PrivacyLedger, data: &Dataset) -> Result<()> {
    if let Some(p) = &o.out {
        write_theta(p, theta)?;
    }
    if let Some(p) = &o.ledger_out {
        ledger.write_csv(open(p)?)?;
    }
    let theta_s: Vec<String> = theta.iter().map(|v| format!("{v:.6}")).collect();
    writeln!(out, "theta: [{}]", theta_s.join(", "))?;
    if data.is_labeled() {
        writeln!(out, "train accuracy: {:.4}  train nll: {:.4}", accuracy(theta, data)?, nll(theta, data)?)?;
    }
    print_ledger(out, ledger)
}

#[derive(Clone, Copy)]
enum Sg {
    Sgld,
    Sghmc { a: f64, b_hat: f64 },
    Sgnht { a: f64 },
    Sgfs,
}

fn run_sg<W: Write>(out: &mut W, kind: Sg, d: &DataArgs, p: &PrivacyArgs, s: &SamplerArgs, o: &OutArgs) -> Result<i32> {
    check_data_args(d)?;
    check_sampler_args(s)?;
    let budget = require_budget(p)?;
    let src = source(d)?;

    let gate = |n: usize, dim: usize| -> Result<(LogisticModel, SamplerConfig)> {
        let model = logistic(dim, d)?;
        let cfg = sampler_config(s, n, model.lipschitz(), budget, d.seed)?;
        if let Some((eps, delta)) = budget {
            let pc = PrivateSamplerConfig::new(cfg.clone(), eps, delta);
            let l = pc.gate(&model, n)?;
            match kind {
                Sg::Sghmc { a, b_hat } => friction_gate(&pc, n, l, a - b_hat, "dp-sghmc")?,
                Sg::Sgnht { a } => friction_gate(&pc, n, l, a, "dp-sgnht")?,
                _ => {}
            }
        }
        Ok((model, cfg))
    };
    // synthetic sources are gated before any data exists
    if let Some((n, dim)) = synthetic_shape(&src) {
        gate(n, dim)?;
    }
    let data = load(&src, d)?;
    let (model, cfg) = gate(data.len(), data.dim())?;
    let theta0 = Theta::new(model.initial_point())?;
    let mut rng = cfg.rng();
    let trace: SampleTrace = match (kind, budget) {
        (Sg::Sgld, None) => sgld_run(&model, &data, &cfg, &theta0, &mut rng)?,
        (Sg::Sghmc { a, b_hat }, None) => sghmc_run(&model, &data, &cfg, &theta0, a, b_hat, &mut rng)?,
        (Sg::Sgnht { a }, None) => sgnht_run(&model, &data, &cfg, &theta0, a, &mut rng)?,
        (Sg::Sgfs, None) => sgfs_run(&model, &data, &cfg, &SgfsConfig::default(), &theta0, &mut rng)?,
        (kind, Some((eps, delta))) => {
            let pc = PrivateSamplerConfig::new(cfg.clone(), eps, delta);
            match kind {
                Sg::Sgld => dp_sgld_run(&model, &data, &pc, &theta0, &mut rng)?,
                Sg::Sghmc { a, b_hat } => dp_sghmc_run(&model, &data, &pc, &theta0, a, b_hat, &mut rng)?,
                Sg::Sgnht { a } => dp_sgnht_run(&model, &data, &pc, &theta0, a, &mut rng)?,
                Sg::Sgfs => dp_sgfs_run(&model, &data, &pc, &SgfsConfig::default(), &theta0, &mut rng)?,
            }
        }
    };
    if let Some(p) = &o.trace_out {
        trace.write_csv(open(p)?)?;
    }
    writeln!(out, "iterations: {}  tau: {}  passes: {}  eta_1: {:e}", cfg.iterations(data.len()), cfg.tau, cfg.passes, cfg.schedule.eta(1))?;
    let theta = trace.mean().unwrap_or_else(|| trace.final_theta.clone());
    finish(out, o, &theta, &trace.ledger, &data)?;
    Ok(0)
}

fn dispatch<W: Write>(cmd: Command, out: &mut W) -> Result<i32> {
    match cmd {
        Command::Ops { data: d, epsilon, delta, backend, chain_length, out: o } => {
            if delta.is_some() {
                return Err(Error::config("ops is pure epsilon-DP; --delta is not accepted"));
            }
            check_data_args(&d)?;
            let cfg = OpsConfig {
                backend: backend.map(|b| match b {
                    BackendArg::Mh => OpsBackend::RandomWalkMh,
                    BackendArg::Mala => OpsBackend::Mala,
                    BackendArg::Sgnht => OpsBackend::Sgnht,
                }),
                chain_length,
                seed: d.seed,
                keep_chain: o.trace_out.is_some(),
                ..OpsConfig::new(epsilon)
            };
            cfg.validate()?;
            let data = load(&source(&d)?, &d)?;
            let model = logistic(data.dim(), &d)?;
            let mut rng = SamplerConfig::new(1, 1, Schedule::Constant { eta0: 1.0 }).with_seed(d.seed).rng();
            let r = ops_sample(&model, &data, &cfg, &mut rng)?;
            if let Some(p) = &o.trace_out {
                r.write_trace_csv(open(p)?)?;
            }
            writeln!(out, "rho: {}  backend: {:?}", r.rho, r.backend)?;
            let mut ledger = PrivacyLedger::new();
            ledger.record("ops", r.budget);
            finish(out, &o, &r.theta, &ledger, &data)?;
            Ok(0)
        }
        Command::Sgld { data, privacy, sampler, out: o } => run_sg(out, Sg::Sgld, &data, &privacy, &sampler, &o),
        Command::Sghmc { data, privacy, sampler, friction, b_hat, out: o } => {
            run_sg(out, Sg::Sghmc { a: friction, b_hat }, &data, &privacy, &sampler, &o)
        }
        Command::Sgnht { data, privacy, sampler, friction, out: o } => {
            run_sg(out, Sg::Sgnht { a: friction }, &data, &privacy, &sampler, &o)
        }
        Command::Sgfs { data, privacy, sampler, out: o } => run_sg(out, Sg::Sgfs, &data, &privacy, &sampler, &o),
        Command::Hybrid { data: d, epsilon, delta, sampler: s, chain_length, out: o } => {
            check_data_args(&d)?;
            check_sampler_args(&s)?;
            let src = source(&d)?;
            let budget = Some((epsilon / 2.0, delta));
            let gate = |n: usize, dim: usize| -> Result<(LogisticModel, SamplerConfig)> {
                let model = logistic(dim, &d)?;
                let cfg = sampler_config(&s, n, model.lipschitz(), budget, d.seed)?.with_burn_in(0.0);
                if cfg.passes > 0 {
                    PrivateSamplerConfig::new(cfg.clone(), epsilon / 2.0, delta).gate(&model, n)?;
                }
                Ok((model, cfg))
            };
            if let Some((n, dim)) = synthetic_shape(&src) {
                gate(n, dim)?;
            }
            let data = load(&src, &d)?;
            let (model, cfg) = gate(data.len(), data.dim())?;
            let ops_cfg = OpsConfig { chain_length, seed: d.seed, ..OpsConfig::new(epsilon / 2.0) };
            let mut rng = cfg.rng();
            let trace = hybrid_run(&model, &data, epsilon, delta, &ops_cfg, &cfg, &mut rng)?;
            if let Some(p) = &o.trace_out {
                trace.write_csv(open(p)?)?;
            }
            let coef = sgld_noise_coefficient(data.len(), cfg.passes as f64, cfg.tau, model.lipschitz(), epsilon / 2.0, delta);
            writeln!(out, "iterations: {}  tau: {}  passes: {}  eta_1: {:e}  coef: {coef:e}", cfg.iterations(data.len()), cfg.tau, cfg.passes, cfg.schedule.eta(1))?;
            let theta = trace.mean().unwrap_or_else(|| trace.final_theta.clone());
            finish(out, &o, &theta, &trace.ledger, &data)?;
            Ok(0)
        }
        Command::Objpert { data: d, epsilon, delta, lambda_reg, out: o } => erm(out, true, &d, epsilon, delta, lambda_reg, &o),
        Command::Outpert { data: d, epsilon, delta, lambda_reg, out: o } => erm(out, false, &d, epsilon, delta, lambda_reg, &o),
        Command::Bench { data: d, eps, delta, seeds, methods, lambda_reg, chain_length, out: o, summary_out } => {
            check_data_args(&d)?;
            let methods: Vec<Method> = methods.iter().map(|m| m.parse()).collect::<Result<_>>()?;
            let src = source(&d)?;
            let cfg = BenchConfig {
                radius: d.radius,
                data_radius: d.data_radius,
                lambda_reg,
                ops_chain_length: chain_length,
                ..BenchConfig::default()
            };
            let seed_list: Vec<u64> = (0..seeds).collect();
            let result = run_benchmark(&methods, &src, &eps, delta, &seed_list, &cfg)?;
            if let Some(p) = &o {
                result.write_csv(open(p)?)?;
            }
            if let Some(p) = &summary_out {
                result.write_summary_csv(open(p)?)?;
            }
            writeln!(out, "# split {}/{} train/test, {} seeds", cfg.train_fraction, 1.0 - cfg.train_fraction, seeds)?;
            writeln!(out, "{:<11} {:>8} {:>10} {:>8} {:>6}", "method", "epsilon", "accuracy", "se", "fail")?;
            for s in result.summary() {
                writeln!(out, "{:<11} {:>8} {:>10.4} {:>8.4} {:>6}", s.method.as_str(), s.epsilon, s.mean_accuracy, s.se_accuracy, s.failures)?;
            }
            Ok(0)
        }
        Command::Verify { suite, seed, halve_noise } => {
            let suites: Vec<Suite> = if suite.is_empty() {
                Suite::ALL.to_vec()
            } else {
                suite.iter().map(|s| s.parse()).collect::<Result<_>>()?
            };
            let tamper = if halve_noise { 0.25 } else { 1.0 };
            let mut all = true;
            writeln!(out, "{:<16} {:<22} {:<5} detail", "suite", "check", "")?;
            for s in suites {
                for r in run_suite(s, tamper, seed)? {
                    all &= r.passed;
                    writeln!(out, "{:<16} {:<22} {:<5} {}", s.as_str(), r.name, if r.passed { "PASS" } else { "FAIL" }, r.detail)?;
                }
            }
            Ok(if all { 0 } else { 1 })
        }
    }
}

fn erm<W: Write>(out: &mut W, objective: bool, d: &DataArgs, epsilon: f64, delta: f64, lambda_reg: f64, o: &OutArgs) -> Result<i32> {
    check_data_args(d)?;
    if !objective && !(lambda_reg > 0.0) {
        return Err(Error::config("outpert needs --lambda-reg > 0"));
    }
    let data = load(&source(d)?, d)?;
    let problem = ErmProblem::for_dataset(&data, lambda_reg)?;
    let mut rng = SamplerConfig::new(1, 1, Schedule::Constant { eta0: 1.0 }).with_seed(d.seed).rng();
    let r = if objective {
        objpert_train(&problem, &data, epsilon, delta, &mut rng)?
    } else {
        outpert_train(&problem, &data, epsilon, delta, &mut rng)?
    };
    finish(out, o, &r.theta, &r.ledger, &data)?;
    Ok(0)
}
