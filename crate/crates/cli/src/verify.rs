//! Identity and residual suites behind `kurth verify`.

use std::f64::consts::PI;

use anyhow::Result;
use clap::ValueEnum;
use kurth_core::ensemble;
use kurth_core::family::{self, Family, ForceModel, KurthFields, PerturbedFields, TransformFields};
use kurth_core::kurth::{self, PhaseVec, KURTH_DENSITY, KURTH_NORM};
use kurth_core::moments::{self, BetaRule, FamilySnapshot, KurthSteady, RadialField};
use kurth_core::phi;
use kurth_core::quadrature::GaussLegendre;
use kurth_core::vec3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::report::{Check, Run};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Suite {
    Core,
    Phi,
    Family,
    Moments,
    Theorem,
}

#[derive(Debug, Clone)]
pub struct VerifyOptions {
    pub suite: Suite,
    pub eps: Option<f64>,
    pub alpha: Option<f64>,
    pub tol: Option<f64>,
    pub perturb: Option<f64>,
    pub points: usize,
    pub seed: u64,
}

impl VerifyOptions {
    /// Threshold for a residual check: `--tol` when given, else the default.
    fn threshold(&self, default: f64) -> f64 {
        self.tol.unwrap_or(default)
    }

    fn epsilons(&self, standard: &[f64]) -> Vec<f64> {
        self.eps.map_or_else(|| standard.to_vec(), |e| vec![e])
    }
}

const ODE_TOL: f64 = phi::DEFAULT_TOL;

pub fn run(opts: &VerifyOptions, run: &mut Run) -> Result<()> {
    run.param("suite", opts.suite);
    run.param("eps", opts.eps);
    run.param("alpha", opts.alpha);
    run.param("perturb", opts.perturb);
    run.param("points", opts.points);
    run.manifest.seed = Some(opts.seed);
    run.tolerance("ode", ODE_TOL);
    if let Some(t) = opts.tol {
        run.tolerance("residual", t);
    }
    match opts.suite {
        Suite::Core => core(opts, run),
        Suite::Phi => phi_suite(opts, run),
        Suite::Family => family_suite(opts, run),
        Suite::Moments => moments_suite(opts, run),
        Suite::Theorem => theorem(opts, run),
    }
}

fn random_phase(rng: &mut ChaCha8Rng, scale: f64) -> PhaseVec {
    PhaseVec::new(
        std::array::from_fn(|_| rng.random_range(-scale..scale)),
        std::array::from_fn(|_| rng.random_range(-scale..scale)),
    )
}

fn core(opts: &VerifyOptions, run: &mut Run) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let centre = kurth::eval_q(&PhaseVec::new([0.0; 3], [0.0; 3]));
    run.check(Check::below(
        "centre value 3/(4 pi^3)",
        (centre - 3.0 / (4.0 * PI.powi(3))).abs(),
        opts.threshold(1e-15),
    ));

    let (mut support_gap, mut form_gap, mut rotation_gap, mut grad_gap) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for _ in 0..opts.points {
        let p = random_phase(&mut rng, 1.2);
        let Ok(s) = kurth::to_radial(&p) else { continue };
        let cart = 1.0 - vec3::norm2(&p.x) - vec3::norm2(&p.v) + p.angular_momentum_sq();
        support_gap = support_gap.max((kurth::support(&s)?.value - cart).abs());
        form_gap = form_gap.max((kurth::eval_q_radial(&s)? - kurth::eval_q(&p)).abs() / kurth::eval_q(&p).max(1.0));
        if s.r <= 1.0 {
            let via_energy = kurth::eval_q_tilde(kurth::energy(&s)?, s.beta);
            form_gap = form_gap.max((via_energy - kurth::eval_q(&p)).abs() / via_energy.max(1.0));
        }
        // rotation about the z axis by a random angle
        let a: f64 = rng.random_range(0.0..2.0 * PI);
        let rot = |v: &[f64; 3]| [a.cos() * v[0] - a.sin() * v[1], a.sin() * v[0] + a.cos() * v[1], v[2]];
        let q = PhaseVec::new(rot(&p.x), rot(&p.v));
        rotation_gap = rotation_gap.max((kurth::eval_q(&q) - kurth::eval_q(&p)).abs() / kurth::eval_q(&p).max(1.0));
        if let Ok((gx, gv)) = kurth::grad_q(&p) {
            if cart < 1e-2 {
                continue;
            }
            let h = 1e-6;
            for k in 0..3 {
                let (mut hi, mut lo) = (p, p);
                hi.x[k] += h;
                lo.x[k] -= h;
                let fd = (kurth::eval_q(&hi) - kurth::eval_q(&lo)) / (2.0 * h);
                grad_gap = grad_gap.max((fd - gx[k]).abs() / gx[k].abs().max(1.0));
                let (mut hi, mut lo) = (p, p);
                hi.v[k] += h;
                lo.v[k] -= h;
                let fd = (kurth::eval_q(&hi) - kurth::eval_q(&lo)) / (2.0 * h);
                grad_gap = grad_gap.max((fd - gv[k]).abs() / gv[k].abs().max(1.0));
            }
        }
    }
    run.check(Check::below("radial vs Cartesian support", support_gap, opts.threshold(1e-12)));
    run.check(Check::below("radial, Cartesian and energy forms of Q", form_gap, opts.threshold(1e-10)));
    run.check(Check::below("rotation invariance of Q", rotation_gap, opts.threshold(1e-12)));
    run.check(Check::below("gradient vs central differences", grad_gap, 1e-5));
    run.check(Check::below(
        "norm constant",
        (KURTH_NORM - 3.0 / (4.0 * PI.powi(3))).abs(),
        1e-18,
    ));
    Ok(())
}

fn phi_suite(opts: &VerifyOptions, run: &mut Run) -> Result<()> {
    let alpha = opts.alpha.unwrap_or(1.0);
    let mut csv = run.csv("phi_checks.csv", &["eps", "alpha", "period_expected", "period_detected", "energy_drift", "closure"])?;
    for eps in opts.epsilons(&[0.1, 0.3, 0.6, 0.9]) {
        // the closed form holds for alpha = 1; other couplings follow by rescaling
        let expected = phi::period(eps / alpha.sqrt())? / alpha.sqrt();
        let traj = phi::integrate_phi(alpha, eps, 1.6 * expected, ODE_TOL)?;
        let detected = if eps == 0.0 {
            // the equilibrium does not oscillate; its linearisation has frequency sqrt(alpha)
            2.0 * PI / alpha.sqrt()
        } else {
            phi::detect_period(&traj)?
        };
        let end = traj.at(expected)?;
        let closure = (end.phi - 1.0).abs().max((end.phidot - eps).abs());
        let drift = traj.max_energy_drift();
        run.check(Check::below(
            format!("period, eps = {eps}"),
            ((detected - expected) / expected).abs(),
            opts.threshold(1e-6),
        ));
        run.check(Check::below(format!("energy drift, eps = {eps}"), drift, 10.0 * ODE_TOL));
        // the step tolerance is local; global error accumulates over long periods
        run.check(Check::below(format!("orbit closure, eps = {eps}"), closure, 1e-6));
        csv.row(&[eps, alpha, expected, detected, drift, closure])?;
    }
    csv.finish()
}

/// Points distributed like `f_ε(t)` at random times.
fn family_points(f: &Family, n: usize, seed: u64) -> Result<Vec<(f64, PhaseVec)>> {
    let base = ensemble::sample_kurth(n, seed)?.to_cartesian(seed.wrapping_add(1));
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(2));
    base.iter()
        .map(|q| {
            let t = rng.random::<f64>() * f.t_end();
            Ok((t, f.scale(t)?.lambda_cartesian_inverse(q)))
        })
        .collect()
}

fn family_suite(opts: &VerifyOptions, run: &mut Run) -> Result<()> {
    let mut csv = run.csv(
        "family_residuals.csv",
        &[
            "eps", "t", "r", "p_r", "beta", "vlasov_raw", "vlasov_relative", "flow_r", "flow_p", "ansatz_beta0",
            "ansatz_beta1", "ansatz_beta2", "jacobian_minus_one", "p_reconstruction",
        ],
    )?;
    for eps in opts.epsilons(&[0.3, 0.6]) {
        let f = Family::kurth_one_period(eps, ODE_TOL)?;
        let fields = KurthFields { family: &f };
        let (mut vlasov, mut flow, mut jac, mut ansatz, mut recon) = (0.0f64, 0.0f64, 0.0f64, 0.0f64, 0.0f64);
        for (t, p) in family_points(&f, opts.points, opts.seed)? {
            let s = kurth::to_radial(&p)?;
            let v = f.vlasov_residual(t, &p)?;
            let fl = f.hamiltonian_flow_residual(t, s.r, s.p_r)?;
            let a = family::ansatz_residual(&fields, ForceModel::Family(&f), t, s.r, s.p_r, s.beta)?;
            let (dr, dp) = (fields.r_partials(t, s.r, s.p_r)?, fields.p_partials(t, s.r, s.p_r)?);
            let det = dr.dr * dp.dp - dr.dp * dp.dr - 1.0;
            let rec = family::reconstruct_p(&fields, t, s.r, s.p_r)? - fields.p_field(t, s.r, s.p_r)?;
            vlasov = vlasov.max(v.relative);
            flow = flow.max(fl[0].abs()).max(fl[1].abs());
            jac = jac.max(det.abs());
            ansatz = ansatz.max(a.max_abs());
            recon = recon.max(rec.abs());
            csv.row(&[eps, t, s.r, s.p_r, s.beta, v.raw, v.relative, fl[0], fl[1], a.beta0, a.beta1, a.beta2, det, rec])?;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        let mut umd = 0.0f64;
        for _ in 0..opts.points {
            let t = rng.random::<f64>() * f.t_end();
            let phi = f.scale(t)?.phi;
            umd = umd.max(f.umd_check(t, rng.random_range(0.001..1.0) * phi)?);
            umd = umd.max(f.umd_check(t, rng.random_range(1.0..10.0) * phi)?);
        }
        run.check(Check::below(format!("Vlasov residual (relative), eps = {eps}"), vlasov, opts.threshold(1e-9)));
        run.check(Check::below(format!("Hamiltonian flow, eps = {eps}"), flow, opts.threshold(1e-10)));
        run.check(Check::below(format!("Jacobian determinant, eps = {eps}"), jac, opts.threshold(1e-12)));
        run.check(Check::below(format!("field identity, eps = {eps}"), umd, opts.threshold(1e-12)));
        run.check(Check::below(format!("ansatz coefficients, eps = {eps}"), ansatz, opts.threshold(1e-9)));
        run.check(Check::below(format!("P reconstruction, eps = {eps}"), recon, opts.threshold(1e-10)));
    }
    csv.finish()
}

fn moments_suite(opts: &VerifyOptions, run: &mut Run) -> Result<()> {
    let quad = GaussLegendre::new(moments::DEFAULT_NODES)?;
    let radii: Vec<f64> = (1..=9).map(|k| 0.1 * k as f64).collect();
    let rho = moments::density_profile(&KurthSteady, &radii, &quad, BetaRule::ClosedForm)?;
    let mut csv = run.csv("density.csv", &["r", "rho", "rho_expected"])?;
    let mut worst = 0.0f64;
    for (&r, &d) in radii.iter().zip(&rho) {
        worst = worst.max((d - KURTH_DENSITY).abs());
        csv.row(&[r, d, KURTH_DENSITY])?;
    }
    for r in [1.0, 1.5] {
        let d = moments::density_from_distribution(&KurthSteady, r, &quad, BetaRule::ClosedForm)?;
        worst = worst.max(d.abs());
        csv.row(&[r, d, 0.0])?;
    }
    csv.finish()?;
    run.check(Check::below("steady density", worst, opts.threshold(1e-8)));

    let mass = 4.0
        * PI
        * quad.integrate(0.0, 1.0, |r| {
            r * r * moments::density_from_distribution(&KurthSteady, r, &quad, BetaRule::ClosedForm).unwrap_or(f64::NAN)
        });
    run.check(Check::below("total mass", (mass - 1.0).abs(), opts.threshold(1e-8)));

    let grid = moments::uniform_grid(50, 2.0)?;
    let cells: Vec<f64> = grid.iter().map(|&r| if r <= 1.0 { KURTH_DENSITY } else { 0.0 }).collect();
    let field = RadialField::from_cell_density(grid.clone(), &cells)?;
    let mut field_csv = run.csv("field.csv", &["r", "rho", "mass", "d_u"])?;
    for row in field.rows() {
        field_csv.row(&[row.r, row.rho, row.mass, row.d_u])?;
    }
    field_csv.finish()?;
    let field_gap = grid
        .iter()
        .map(|&r| (field.force(r) - kurth::potential_derivative(r)).abs())
        .fold(0.0, f64::max);
    run.check(Check::below("uniform-ball field", field_gap, opts.threshold(1e-12)));

    for eps in opts.epsilons(&[0.6]) {
        let f = Family::kurth_one_period(eps, ODE_TOL)?;
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        let (mut dens, mut cov) = (0.0f64, 0.0f64);
        for _ in 0..8 {
            let t = rng.random::<f64>() * f.t_end();
            let snap = FamilySnapshot::at(&f, t)?;
            let r = rng.random_range(0.02..0.98) * snap.scale.phi;
            let d = moments::density_from_distribution(&snap, r, &quad, BetaRule::ClosedForm)?;
            dens = dens.max((d - f.rho(t, r)?).abs());
            let r_tilde = rng.random_range(0.1..1.5) * snap.scale.phi;
            cov = cov.max(moments::change_of_variables_check(&f, t, r_tilde, &quad)?.residual.abs());
        }
        run.check(Check::below(format!("family density, eps = {eps}"), dens, opts.threshold(1e-8)));
        run.check(Check::below(format!("change of variables, eps = {eps}"), cov, opts.threshold(1e-6)));
    }
    Ok(())
}

fn theorem(opts: &VerifyOptions, run: &mut Run) -> Result<()> {
    let alphas = opts.alpha.map_or_else(|| vec![0.5, 1.0, 2.0], |a| vec![a]);
    for alpha in alphas {
        let traj = phi::integrate_phi(alpha, opts.eps.unwrap_or(0.3), 30.0, ODE_TOL)?;
        let mut worst = 0.0f64;
        for k in 1..300 {
            let t = 0.1 * k as f64;
            if (traj.at(t)?.phi - 1.0).abs() < 0.05 {
                continue;
            }
            worst = worst.max(((family::separation_constant_at(&traj, t)? - alpha) / alpha).abs());
        }
        run.check(Check::below(format!("separation constant, alpha = {alpha}"), worst, opts.threshold(1e-8)));
    }

    let eps = opts.eps.unwrap_or(0.6);
    let f = Family::kurth_one_period(eps, ODE_TOL)?;
    let exact = KurthFields { family: &f };
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut samples = Vec::with_capacity(opts.points);
    for _ in 0..opts.points {
        let t = rng.random_range(0.01..f.t_end() - 0.01);
        let r = rng.random_range(0.05..0.95) * f.scale(t)?.phi;
        samples.push((t, r, rng.random_range(-0.8..0.8), rng.random_range(0.0..0.5)));
    }
    let mut worst = [0.0f64; 2];
    for &(t, r, p, beta) in &samples {
        for (k, model) in [ForceModel::Family(&f), ForceModel::Transformed].into_iter().enumerate() {
            worst[k] = worst[k].max(family::ansatz_residual(&exact, model, t, r, p, beta)?.max_abs());
        }
    }
    run.check(Check::below("ansatz residual, exact field", worst[0], opts.threshold(1e-9)));
    run.check(Check::below("ansatz residual, transformed field", worst[1], opts.threshold(1e-9)));

    if let Some(amplitude) = opts.perturb {
        let perturbed = PerturbedFields { family: &f, amplitude };
        let mut csv = run.csv("theorem_probe.csv", &["t", "r", "p_r", "beta", "beta0", "beta1", "beta2", "combined"])?;
        let mut probe = 0.0f64;
        for &(t, r, p, beta) in &samples {
            let a = family::ansatz_residual(&perturbed, ForceModel::Family(&f), t, r, p, beta)?;
            probe = probe.max(a.max_abs());
            csv.row(&[t, r, p, beta, a.beta0, a.beta1, a.beta2, a.combined])?;
        }
        csv.finish()?;
        run.check(Check::above(format!("perturbed ansatz residual, amplitude = {amplitude}"), probe, 1e-4));
    }
    Ok(())
}

