//! `kurth convergence`: error-versus-level tables with fitted orders.

use anyhow::Result;
use clap::ValueEnum;
use kurth_core::ensemble::{self, PicConfig, PushScheme};
use kurth_core::family::Family;
use kurth_core::kurth::{self, KURTH_DENSITY};
use kurth_core::moments::{self, BetaRule, KurthSteady};
use kurth_core::phi;
use kurth_core::quadrature::GaussLegendre;
use kurth_core::stats::{self, ShellHistogram};
use serde::Serialize;

use crate::report::{Check, Run};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    /// Particle count of the evolved `f_ε` ensemble.
    N,
    /// Push step on the frozen steady field.
    Dt,
    /// Gauss–Legendre node count of the velocity-space quadrature.
    Quad,
}

#[derive(Debug, Clone)]
pub struct ConvergenceOptions {
    pub axis: Axis,
    pub levels: Vec<f64>,
    pub eps: f64,
    pub seed: u64,
    pub steps: usize,
    pub scheme: PushScheme,
    pub tol: Option<f64>,
}

pub fn run(opts: &ConvergenceOptions, run: &mut Run) -> Result<()> {
    run.param("axis", opts.axis);
    run.param("levels", &opts.levels);
    run.manifest.seed = Some(opts.seed);
    let errors = match opts.axis {
        Axis::N => particle_count(opts, run)?,
        Axis::Dt => time_step(opts, run)?,
        Axis::Quad => quadrature(opts, run)?,
    };
    let mut csv = run.csv("convergence.csv", &["level", "error"])?;
    for (&l, &e) in opts.levels.iter().zip(&errors) {
        csv.row(&[l, e])?;
    }
    csv.finish()?;
    match opts.axis {
        Axis::Quad => {
            let floor = opts.tol.unwrap_or(1e-8);
            run.tolerance("floor", floor);
            let last = *errors.last().unwrap_or(&f64::NAN);
            run.check(Check::below("error at finest level", last, floor));
        }
        axis => {
            let fit = stats::loglog_fit(&opts.levels, &errors)?;
            run.data("intercept", fit.intercept);
            let (name, target) = if axis == Axis::N { ("Monte-Carlo slope", -0.5) } else { ("time-step order", 2.0) };
            let band = opts.tol.unwrap_or(if axis == Axis::N { 0.15 } else { 0.2 });
            run.tolerance("slope_band", band);
            run.data("slope", fit.slope);
            run.check(Check::below(format!("{name} (distance from {target})"), (fit.slope - target).abs(), band));
        }
    }
    Ok(())
}

/// RMS shell-density error of the `f_ε` ensemble evolved to half a period.
fn particle_count(opts: &ConvergenceOptions, run: &mut Run) -> Result<Vec<f64>> {
    let t_end = 0.5 * phi::period(opts.eps)?;
    let f = Family::kurth(opts.eps, 1.01 * t_end, phi::DEFAULT_TOL)?;
    let n_max = opts.levels.iter().cloned().fold(0.0, f64::max);
    run.param("eps", opts.eps);
    run.param("steps", opts.steps);
    run.param("t_end", t_end);
    let mut errors = Vec::new();
    for &level in &opts.levels {
        let n = level as usize;
        // average small ensembles over more seeds
        let seeds = ((n_max / level).sqrt().round() as u64).clamp(1, 16);
        let mut sq = 0.0;
        for s in 0..seeds {
            let mut cfg = PicConfig::new(t_end / opts.steps as f64, opts.steps);
            cfg.scheme = opts.scheme;
            cfg.record_every = opts.steps;
            let ens = ensemble::sample_family(&f, 0.0, n, opts.seed.wrapping_add(s))?;
            let evo = ensemble::evolve_selfconsistent(ens, &cfg)?;
            let phi_end = f.scale(evo.final_state.t)?.phi;
            let edges: Vec<f64> = (0..=20).map(|k| 0.95 * phi_end * (k as f64 / 20.0).cbrt()).collect();
            let e = &evo.final_state.ensemble;
            let hist = ShellHistogram::new(&e.radii(), &e.weights(), &edges)?;
            sq += hist.rms_error(|_, _| KURTH_DENSITY / phi_end.powi(3)).powi(2);
        }
        errors.push((sq / seeds as f64).sqrt());
    }
    Ok(errors)
}

/// Maximum phase error after `t = 2` on the frozen steady field, against a
/// run with a step 100 times finer than the smallest level.
fn time_step(opts: &ConvergenceOptions, run: &mut Run) -> Result<Vec<f64>> {
    let horizon = 2.0;
    let field = |r: f64| kurth::potential_derivative(r);
    let sample = ensemble::sample_kurth(200, opts.seed)?;
    let finest = opts.levels.iter().cloned().fold(f64::INFINITY, f64::min);
    let push = |dt: f64| {
        let steps = (horizon / dt).round() as usize;
        let mut ps = sample.particles.clone();
        for p in &mut ps {
            for _ in 0..steps {
                ensemble::push_one(p, &field, dt, opts.scheme);
            }
        }
        ps
    };
    let reference = push(finest / 100.0);
    run.param("scheme", opts.scheme);
    run.param("horizon", horizon);
    run.param("beta_min", 1e-2);
    Ok(opts
        .levels
        .iter()
        .map(|&dt| {
            push(dt)
                .iter()
                .zip(&reference)
                .filter(|(_, q)| q.beta > 1e-2)
                .map(|(a, b)| (a.r - b.r).abs().max((a.p_r - b.p_r).abs()))
                .fold(0.0, f64::max)
        })
        .collect())
}

/// Maximum steady-density error with the fully numeric `(p_r, β)` rule.
fn quadrature(opts: &ConvergenceOptions, run: &mut Run) -> Result<Vec<f64>> {
    let radii: Vec<f64> = (1..=9).map(|k| 0.1 * k as f64).collect();
    run.param("radii", &radii);
    opts.levels
        .iter()
        .map(|&nodes| {
            let quad = GaussLegendre::new(nodes as usize)?;
            let rho = moments::density_profile(&KurthSteady, &radii, &quad, BetaRule::Numeric)?;
            Ok(rho.iter().map(|d| (d - KURTH_DENSITY).abs()).fold(0.0, f64::max))
        })
        .collect()
}
