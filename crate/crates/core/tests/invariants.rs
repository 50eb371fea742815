use std::f64::consts::PI;

use kurth_core::ensemble::{self, PicConfig, PushScheme};
use kurth_core::family::Family;
use kurth_core::kurth::{self, PhaseVec};
use kurth_core::moments::{self, BetaRule, FamilySnapshot};
use kurth_core::phi;
use kurth_core::quadrature::GaussLegendre;
use kurth_core::vec3;
use proptest::prelude::*;

fn phase_point() -> impl Strategy<Value = PhaseVec> {
    (prop::array::uniform3(-1.2f64..1.2), prop::array::uniform3(-1.2f64..1.2)).prop_map(|(x, v)| PhaseVec::new(x, v))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn lambda_preserves_angular_momentum(eps in -0.8f64..0.8, frac in 0.0f64..1.0, p in phase_point()) {
        let f = Family::kurth_one_period(eps, 1e-10).unwrap();
        let t = frac * f.t_end();
        let q = f.lambda_map(t, &p).unwrap();
        let (a, b) = (vec3::cross(&p.x, &p.v), vec3::cross(&q.x, &q.v));
        for k in 0..3 {
            prop_assert!((a[k] - b[k]).abs() < 1e-12 * (1.0 + a[k].abs()));
        }
    }

    #[test]
    fn family_density_is_scaled_ball(eps in -0.8f64..0.8, frac in 0.0f64..1.0, rfrac in 0.02f64..0.98) {
        let f = Family::kurth_one_period(eps, 1e-10).unwrap();
        let t = frac * f.t_end();
        let snap = FamilySnapshot::at(&f, t).unwrap();
        let r = rfrac * snap.scale.phi;
        let quad = GaussLegendre::new(32).unwrap();
        let rho = moments::density_from_distribution(&snap, r, &quad, BetaRule::ClosedForm).unwrap();
        prop_assert!((rho - f.rho(t, r).unwrap()).abs() < 1e-10);
    }

    #[test]
    fn beta_is_never_modified(seed in 0u64..1000, dt in 1e-3f64..5e-2) {
        let mut ens = ensemble::sample_kurth(64, seed).unwrap();
        let betas: Vec<f64> = ens.particles.iter().map(|p| p.beta).collect();
        let grid = moments::uniform_grid(32, 1.5).unwrap();
        let field = moments::RadialField::from_particles(grid, &ens.radii(), &ens.weights(), moments::Deposition::Linear).unwrap();
        for scheme in [PushScheme::Leapfrog, PushScheme::CentrifugalDrift] {
            for _ in 0..20 {
                ensemble::push_particles(&mut ens, &field, dt, scheme);
            }
        }
        for (p, b) in ens.particles.iter().zip(&betas) {
            prop_assert_eq!(p.beta, *b);
            prop_assert!(p.r >= 0.0);
        }
    }
}

#[test]
fn periodicity_improves_with_tolerance() {
    let eps = 0.6;
    let period = phi::period(eps).unwrap();
    let points: Vec<PhaseVec> = ensemble::sample_kurth(200, 3).unwrap().to_cartesian(4);
    let gap = |tol: f64| {
        let f = Family::kurth(eps, 1.01 * period, tol).unwrap();
        points
            .iter()
            .map(|q| {
                let p = f.scale(0.0).unwrap().lambda_cartesian_inverse(q);
                let a = f.lambda_map(0.0, &p).unwrap();
                let b = f.lambda_map(period, &p).unwrap();
                vec3::max_abs(&vec3::lincomb(&a.x, 1.0, &b.x, -1.0)).max(vec3::max_abs(&vec3::lincomb(&a.v, 1.0, &b.v, -1.0)))
            })
            .fold(0.0f64, f64::max)
    };
    let (coarse, fine) = (gap(1e-6), gap(1e-11));
    assert!(fine < coarse, "{fine} vs {coarse}");
    assert!(fine < 1e-8);
}

#[test]
fn cartesian_and_radial_family_agree_on_samples() {
    let f = Family::kurth_one_period(0.3, 1e-10).unwrap();
    let t = 0.37 * f.t_end();
    let ens = ensemble::sample_family(&f, t, 500, 8).unwrap();
    for (p, c) in ens.particles.iter().zip(ens.to_cartesian(9)) {
        let radial = f.eval_f_radial(t, &kurth::RadialState::new(p.r, p.p_r, p.beta).unwrap()).unwrap();
        let cart = f.eval_f(t, &c).unwrap();
        assert!((radial - cart).abs() <= 1e-8 * radial.max(1.0), "{radial} vs {cart}");
        assert!(radial > 0.0);
    }
}

#[test]
fn evolution_is_deterministic_across_thread_counts() {
    let ens = ensemble::sample_kurth(20_000, 77).unwrap();
    let mut cfg = PicConfig::new(0.01, 20);
    cfg.record_every = 5;
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| ensemble::evolve_selfconsistent(ens.clone(), &cfg).unwrap())
    };
    let (a, b) = (run(1), run(3));
    assert_eq!(a.diagnostics, b.diagnostics);
    assert_eq!(a.final_state.ensemble, b.final_state.ensemble);
}

#[test]
fn evolution_conserves_mass_and_records_snapshots() {
    let ens = ensemble::sample_kurth(5_000, 5).unwrap();
    let mut cfg = PicConfig::new(2.0 * PI / 200.0, 40);
    cfg.record_every = 10;
    cfg.snapshot_every = Some(20);
    let evo = ensemble::evolve_selfconsistent(ens, &cfg).unwrap();
    assert_eq!(evo.snapshots.len(), 3);
    for d in &evo.diagnostics {
        assert!((d.mass - 1.0).abs() < 1e-14);
    }
    assert!(matches!(evo.final_state.ensemble.source, ensemble::Source::Evolved { .. }));
}
