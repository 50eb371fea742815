//! `kurth`: verification suites, simulations and convergence studies for the
//! Kurth family.

mod convergence;
mod report;
mod simulate;
mod verify;

use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use kurth_core::ensemble::{self, PushScheme};
use kurth_core::family::Family;
use kurth_core::kurth;
use kurth_core::moments::Deposition;
use kurth_core::phi;

use crate::convergence::{Axis, ConvergenceOptions};
use crate::report::{Check, Relation, Run};
use crate::simulate::SimulateOptions;
use crate::verify::{Suite, VerifyOptions};

#[derive(Debug, Parser)]
#[command(name = "kurth", version, about = "Exact breathing solutions of the Vlasov-Poisson system and a particle solver checked against them")]
struct Cli {
    /// Worker threads for the parallel kernels (0 = all cores).
    #[arg(long, global = true, env = "KURTH_THREADS", default_value_t = 0)]
    threads: usize,
    /// Directory receiving CSV files and manifest.json.
    #[arg(long, global = true, env = "KURTH_OUT", default_value = "kurth-out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run an identity or residual suite.
    Verify(VerifyArgs),
    /// Evolve a sample of the family self-consistently.
    Simulate(SimulateArgs),
    /// Measure an error against a refinement parameter.
    Convergence(ConvergenceArgs),
    /// Tabulate the scale factor.
    Phi(PhiArgs),
    /// Draw an exact sample of the family at one time.
    Sample(SampleArgs),
}

#[derive(Debug, Args)]
struct VerifyArgs {
    #[arg(value_enum)]
    suite: Suite,
    /// Restrict the suite to one amplitude.
    #[arg(long, env = "KURTH_EPS", allow_hyphen_values = true)]
    eps: Option<f64>,
    #[arg(long, env = "KURTH_ALPHA")]
    alpha: Option<f64>,
    /// Threshold applied to every residual check.
    #[arg(long, env = "KURTH_TOL")]
    tol: Option<f64>,
    /// Amplitude of a deformed transformation fed to the theorem suite.
    #[arg(long)]
    perturb: Option<f64>,
    /// Sample points per check.
    #[arg(long, env = "KURTH_N", default_value_t = 200)]
    n: usize,
    #[arg(long, env = "KURTH_SEED", default_value_t = 2026)]
    seed: u64,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SchemeArg {
    Leapfrog,
    CentrifugalDrift,
}

impl From<SchemeArg> for PushScheme {
    fn from(s: SchemeArg) -> Self {
        match s {
            SchemeArg::Leapfrog => PushScheme::Leapfrog,
            SchemeArg::CentrifugalDrift => PushScheme::CentrifugalDrift,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum DepositionArg {
    Linear,
    Counting,
}

impl From<DepositionArg> for Deposition {
    fn from(d: DepositionArg) -> Self {
        match d {
            DepositionArg::Linear => Deposition::Linear,
            DepositionArg::Counting => Deposition::Counting,
        }
    }
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[arg(long, env = "KURTH_EPS", default_value_t = 0.0, allow_hyphen_values = true)]
    eps: f64,
    #[arg(long, env = "KURTH_N", default_value_t = 100_000)]
    n: usize,
    /// Step size (default: period / 2000).
    #[arg(long, env = "KURTH_DT")]
    dt: Option<f64>,
    /// Number of steps (default: one period).
    #[arg(long, env = "KURTH_STEPS")]
    steps: Option<usize>,
    #[arg(long, env = "KURTH_SEED", default_value_t = 2026)]
    seed: u64,
    #[arg(long, value_enum, default_value = "centrifugal-drift")]
    scheme: SchemeArg,
    #[arg(long, value_enum, default_value = "linear")]
    deposition: DepositionArg,
    /// Radial grid nodes.
    #[arg(long, default_value_t = 256)]
    nodes: usize,
    /// Shells in the final density table.
    #[arg(long, default_value_t = 20)]
    shells: usize,
    /// Record diagnostics every this many steps.
    #[arg(long, default_value_t = 10)]
    record_every: usize,
    /// Also write the final particles to ensemble.csv.
    #[arg(long)]
    particles: bool,
}

#[derive(Debug, Args)]
struct ConvergenceArgs {
    #[arg(value_enum)]
    axis: Axis,
    /// Comma-separated refinement levels (at least three).
    #[arg(long, value_delimiter = ',', required = true)]
    levels: Vec<f64>,
    #[arg(long, env = "KURTH_EPS", default_value_t = 0.3, allow_hyphen_values = true)]
    eps: f64,
    #[arg(long, env = "KURTH_SEED", default_value_t = 2026)]
    seed: u64,
    /// Steps to half a period for the particle-count axis.
    #[arg(long, env = "KURTH_STEPS", default_value_t = 500)]
    steps: usize,
    #[arg(long, value_enum, default_value = "centrifugal-drift")]
    scheme: SchemeArg,
    /// Accepted slope band, or error floor for the quadrature axis.
    #[arg(long, env = "KURTH_TOL")]
    tol: Option<f64>,
}

#[derive(Debug, Args)]
struct PhiArgs {
    #[arg(long, env = "KURTH_EPS", default_value_t = 0.3, allow_hyphen_values = true)]
    eps: f64,
    #[arg(long, env = "KURTH_ALPHA", default_value_t = 1.0)]
    alpha: f64,
    /// Integrator tolerance.
    #[arg(long, env = "KURTH_TOL", default_value_t = phi::DEFAULT_TOL)]
    tol: f64,
    /// End time (default: one period when bound, else 20).
    #[arg(long)]
    t_end: Option<f64>,
    /// Output spacing.
    #[arg(long, env = "KURTH_DT", default_value_t = 0.01)]
    dt: f64,
}

#[derive(Debug, Args)]
struct SampleArgs {
    #[arg(long, env = "KURTH_N", default_value_t = 10_000)]
    n: usize,
    #[arg(long, env = "KURTH_SEED", default_value_t = 2026)]
    seed: u64,
    #[arg(long, env = "KURTH_EPS", default_value_t = 0.0, allow_hyphen_values = true)]
    eps: f64,
    /// Time at which the family is sampled.
    #[arg(long, default_value_t = 0.0)]
    t: f64,
    /// Write Cartesian positions and velocities instead of (r, p_r, beta).
    #[arg(long)]
    cartesian: bool,
}

/// Invalid arguments detected after parsing; exits with status 2.
#[derive(Debug)]
struct UsageError(String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn require(cond: bool, msg: impl FnOnce() -> String) -> Result<()> {
    if cond { Ok(()) } else { Err(usage(msg())) }
}

fn check_eps(eps: f64) -> Result<()> {
    require(eps.abs() < 1.0, || format!("--eps must satisfy |eps| < 1, got {eps}"))
}

fn dispatch(command: &Command, run: &mut Run) -> Result<()> {
    match command {
        Command::Verify(a) => {
            require(a.n > 0, || "--n must be positive".into())?;
            if let Some(eps) = a.eps {
                check_eps(eps)?;
            }
            require(a.alpha.is_none_or(|x| x > 0.0), || "--alpha must be positive".into())?;
            require(a.tol.is_none_or(|x| x > 0.0), || "--tol must be positive".into())?;
            let opts = VerifyOptions {
                suite: a.suite,
                eps: a.eps,
                alpha: a.alpha,
                tol: a.tol,
                perturb: a.perturb,
                points: a.n,
                seed: a.seed,
            };
            verify::run(&opts, run)
        }
        Command::Simulate(a) => {
            require(a.n > 0, || "--n must be positive".into())?;
            check_eps(a.eps)?;
            require(a.dt.is_none_or(|x| x > 0.0 && x.is_finite()), || "--dt must be positive".into())?;
            require(a.steps != Some(0), || "--steps must be positive".into())?;
            require(a.nodes >= 2 && a.shells > 0 && a.record_every > 0, || {
                "--nodes >= 2, --shells > 0 and --record-every > 0 required".into()
            })?;
            let opts = SimulateOptions {
                eps: a.eps,
                n: a.n,
                dt: a.dt,
                steps: a.steps,
                seed: a.seed,
                scheme: a.scheme.into(),
                deposition: a.deposition.into(),
                nodes: a.nodes,
                shells: a.shells,
                record_every: a.record_every,
                particles: a.particles,
            };
            simulate::run(&opts, run)
        }
        Command::Convergence(a) => {
            require(a.levels.len() >= 3, || format!("at least three levels required, got {}", a.levels.len()))?;
            require(a.levels.iter().all(|&l| l > 0.0 && l.is_finite()), || "levels must be positive".into())?;
            if a.axis != Axis::Dt {
                require(a.levels.iter().all(|&l| l.fract() == 0.0), || "levels must be integers on this axis".into())?;
            }
            check_eps(a.eps)?;
            require(a.steps > 0, || "--steps must be positive".into())?;
            let opts = ConvergenceOptions {
                axis: a.axis,
                levels: a.levels.clone(),
                eps: a.eps,
                seed: a.seed,
                steps: a.steps,
                scheme: a.scheme.into(),
                tol: a.tol,
            };
            convergence::run(&opts, run)
        }
        Command::Phi(a) => phi_table(a, run),
        Command::Sample(a) => sample(a, run),
    }
}

fn phi_table(a: &PhiArgs, run: &mut Run) -> Result<()> {
    require(a.alpha > 0.0, || "--alpha must be positive".into())?;
    require(a.tol > 0.0 && a.dt > 0.0, || "--tol and --dt must be positive".into())?;
    require(a.t_end.is_none_or(|t| t > 0.0), || "--t-end must be positive".into())?;
    let bound = a.eps * a.eps < a.alpha;
    let t_end = match a.t_end {
        Some(t) => t,
        None if bound => phi::period(a.eps / a.alpha.sqrt())? / a.alpha.sqrt(),
        None => 20.0,
    };
    run.param("eps", a.eps);
    run.param("alpha", a.alpha);
    run.param("t_end", t_end);
    run.param("dt", a.dt);
    run.tolerance("ode", a.tol);
    let traj = phi::integrate_phi(a.alpha, a.eps, t_end, a.tol)?;
    let mut csv = run.csv("phi.csv", &["t", "phi", "phidot", "phiddot", "energy"])?;
    let rows = (t_end / a.dt).floor() as usize;
    for k in 0..=rows {
        let t = (k as f64 * a.dt).min(t_end);
        let s = traj.at(t)?;
        csv.row(&[t, s.phi, s.phidot, s.phiddot, phi::phi_energy(s.phi, s.phidot, a.alpha)])?;
    }
    csv.finish()?;
    run.data("bound", bound);
    run.check(Check::below("energy drift", traj.max_energy_drift(), 100.0 * a.tol));
    Ok(())
}

fn sample(a: &SampleArgs, run: &mut Run) -> Result<()> {
    require(a.n > 0, || "--n must be positive".into())?;
    check_eps(a.eps)?;
    require(a.t >= 0.0 && a.t.is_finite(), || "--t must be non-negative".into())?;
    run.param("n", a.n);
    run.param("eps", a.eps);
    run.param("t", a.t);
    run.manifest.seed = Some(a.seed);
    let family = Family::kurth(a.eps, a.t + 1.0, phi::DEFAULT_TOL)?;
    let ens = ensemble::sample_family(&family, a.t, a.n, a.seed)?;
    let scale = family.scale(a.t)?;
    let mut outside = 0usize;
    for p in &ens.particles {
        let (big_r, big_p) = scale.lambda_radial(p.r, p.p_r);
        let s = kurth::RadialState::new(big_r, big_p, p.beta)?;
        if kurth::support(&s)?.value < -1e-12 {
            outside += 1;
        }
    }
    if a.cartesian {
        let mut csv = run.csv("sample.csv", &["x", "y", "z", "vx", "vy", "vz", "weight"])?;
        for (q, p) in ens.to_cartesian(a.seed).iter().zip(&ens.particles) {
            csv.row(&[q.x[0], q.x[1], q.x[2], q.v[0], q.v[1], q.v[2], p.weight])?;
        }
        csv.finish()?;
    } else {
        let mut csv = run.csv("sample.csv", &["r", "p_r", "beta", "weight"])?;
        for p in &ens.particles {
            csv.row(&[p.r, p.p_r, p.beta, p.weight])?;
        }
        csv.finish()?;
    }
    run.param("source", &ens.source);
    run.check(Check::new("total mass error", (ens.total_mass - 1.0).abs(), Relation::AtMost, 1e-12));
    run.check(Check::new("particles outside the support", outside as f64, Relation::AtMost, 0.0));
    Ok(())
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Verify(_) => "verify",
        Command::Simulate(_) => "simulate",
        Command::Convergence(_) => "convergence",
        Command::Phi(_) => "phi",
        Command::Sample(_) => "sample",
    }
}

fn prepare(out: &Path, threads: usize) -> Result<()> {
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .context("configuring the thread pool")
}

/// Output directory for runs whose arguments failed to parse.
fn fallback_out() -> PathBuf {
    let args: Vec<String> = std::env::args().collect();
    for (k, a) in args.iter().enumerate() {
        if let Some(v) = a.strip_prefix("--out=") {
            return PathBuf::from(v);
        }
        if a == "--out" {
            if let Some(v) = args.get(k + 1) {
                return PathBuf::from(v);
            }
        }
    }
    std::env::var_os("KURTH_OUT").map_or_else(|| PathBuf::from("kurth-out"), PathBuf::from)
}

fn parse_failure(err: clap::Error) -> ExitCode {
    if !err.use_stderr() {
        // help and version requests
        let _ = err.print();
        return ExitCode::SUCCESS;
    }
    let _ = err.print();
    let out = fallback_out();
    if std::fs::create_dir_all(&out).is_ok() {
        let message = err.render().to_string();
        let run = Run::new("unknown", &out);
        if let Err(e) = run.finish(Some(message.trim().to_string())) {
            eprintln!("error: {e:#}");
        }
    }
    ExitCode::from(2)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => return parse_failure(e),
    };
    if let Err(e) = prepare(&cli.out, cli.threads) {
        eprintln!("error: {e:#}");
        return ExitCode::FAILURE;
    }
    let mut run = Run::new(command_name(&cli.command), &cli.out);
    run.param("threads", cli.threads);
    let outcome = dispatch(&cli.command, &mut run);
    let usage_error = outcome.as_ref().err().is_some_and(|e| e.is::<UsageError>());
    let error = outcome.err().map(|e| format!("{e:#}"));
    for c in &run.manifest.checks {
        let tag = match (c.pass, c.expected_nonzero) {
            (true, false) => "PASS",
            (true, true) => "PASS (expected nonzero)",
            (false, _) => "FAIL",
        };
        println!("{tag:<8} {}: {:.3e} (threshold {:.3e})", c.name, c.value, c.threshold);
    }
    if let Some(e) = &error {
        eprintln!("error: {e}");
    }
    match run.finish(error) {
        Ok(_) if usage_error => ExitCode::from(2),
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
