//! `kurth simulate`: self-consistent evolution of an `f_ε(0)` sample.

use anyhow::Result;
use kurth_core::ensemble::{self, ParticleEnsemble, PicConfig, PushScheme};
use kurth_core::family::Family;
use kurth_core::kurth::KURTH_DENSITY;
use kurth_core::moments::Deposition;
use kurth_core::phi;
use kurth_core::stats::{self, ShellHistogram};

use crate::report::{Check, Run};

#[derive(Debug, Clone)]
pub struct SimulateOptions {
    pub eps: f64,
    pub n: usize,
    pub dt: Option<f64>,
    pub steps: Option<usize>,
    pub seed: u64,
    pub scheme: PushScheme,
    pub deposition: Deposition,
    pub nodes: usize,
    pub shells: usize,
    pub record_every: usize,
    pub particles: bool,
}

/// Radius containing 95% of the mass of the uniform ball of radius `phi`.
fn r95(phi: f64) -> f64 {
    phi * 0.95f64.cbrt()
}

fn shell_masses(ens: &ParticleEnsemble, edges: &[f64]) -> Result<Vec<f64>> {
    Ok(ShellHistogram::new(&ens.radii(), &ens.weights(), edges)?.mass)
}

pub fn run(opts: &SimulateOptions, run: &mut Run) -> Result<()> {
    let period = phi::period(opts.eps)?;
    let dt = opts.dt.unwrap_or(period / 2000.0);
    let steps = opts.steps.unwrap_or_else(|| (period / dt).round().max(1.0) as usize);
    let mut cfg = PicConfig::new(dt, steps);
    cfg.scheme = opts.scheme;
    cfg.deposition = opts.deposition;
    cfg.grid.nodes = opts.nodes;
    cfg.record_every = opts.record_every;
    cfg.validate()?;
    run.param("eps", opts.eps);
    run.param("n", opts.n);
    run.param("dt", dt);
    run.param("steps", steps);
    run.param("period", period);
    run.param("config", &cfg);
    run.manifest.seed = Some(opts.seed);

    let family = Family::kurth(opts.eps, 1.01 * (steps as f64 * dt).max(period), phi::DEFAULT_TOL)?;
    let initial = ensemble::sample_family(&family, 0.0, opts.n, opts.seed)?;
    let evo = ensemble::evolve_selfconsistent(initial.clone(), &cfg)?;

    let mut csv = run.csv(
        "diagnostics.csv",
        &["step", "t", "r95", "r95_expected", "r_max", "kinetic", "potential", "energy", "mass"],
    )?;
    let (mut tracking, mut drift) = (0.0f64, 0.0f64);
    let e0 = evo.diagnostics[0].energy;
    for d in &evo.diagnostics {
        let expected = r95(family.scale(d.t)?.phi);
        tracking = tracking.max((d.r95 / expected - 1.0).abs());
        drift = drift.max(((d.energy - e0) / e0).abs());
        csv.row_indexed(d.step, &[d.t, d.r95, expected, d.r_max, d.kinetic, d.potential, d.energy, d.mass])?;
    }
    csv.finish()?;
    run.data("diagnostics", &evo.diagnostics);

    let last = &evo.final_state;
    let phi_end = family.scale(last.t)?.phi;
    let rho_end = KURTH_DENSITY / phi_end.powi(3);
    let edges: Vec<f64> = (0..=opts.shells).map(|k| phi_end * k as f64 / opts.shells as f64).collect();
    let hist = ShellHistogram::new(&last.ensemble.radii(), &last.ensemble.weights(), &edges)?;
    let mut csv = run.csv("density.csv", &["r_lo", "r_hi", "rho", "sigma", "rho_expected"])?;
    for k in 0..opts.shells {
        csv.row(&[edges[k], edges[k + 1], hist.density[k], hist.sigma[k], rho_end])?;
    }
    csv.finish()?;
    let z = hist.max_z(|_, _| rho_end, 0.0);

    let mut csv = run.csv("field.csv", &["r", "rho", "mass", "d_u"])?;
    for row in last.field.rows() {
        csv.row(&[row.r, row.rho, row.mass, row.d_u])?;
    }
    csv.finish()?;

    if opts.particles {
        let mut csv = run.csv("ensemble.csv", &["r", "p_r", "beta", "weight"])?;
        for p in &last.ensemble.particles {
            csv.row(&[p.r, p.p_r, p.beta, p.weight])?;
        }
        csv.finish()?;
    }

    run.check(Check::below("r95 tracking (relative)", tracking, 0.02));
    run.check(Check::below("energy drift (relative)", drift, 0.01));
    run.check(Check::below("final shell density |z|", z, 4.0));

    if opts.eps == 0.0 {
        // radial histogram distance against the noise of independent samples
        let shells: Vec<f64> = (0..=50).map(|k| 1.1 * k as f64 / 50.0).collect();
        let evolved = stats::wasserstein1_shells(&shells, &shell_masses(&initial, &shells)?, &shell_masses(&last.ensemble, &shells)?)?;
        let mut floor = 0.0;
        for k in 0..4u64 {
            let a = ensemble::sample_kurth(opts.n, opts.seed.wrapping_add(1000 + 2 * k))?;
            let b = ensemble::sample_kurth(opts.n, opts.seed.wrapping_add(1001 + 2 * k))?;
            floor += stats::wasserstein1_shells(&shells, &shell_masses(&a, &shells)?, &shell_masses(&b, &shells)?)? / 4.0;
        }
        run.data("steady_noise_floor", floor);
        run.check(Check::new(
            "steady W1 distance",
            evolved,
            crate::report::Relation::AtMost,
            3.0 * floor,
        ));
    }
    Ok(())
}
