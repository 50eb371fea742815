//! Exact particle sampling of the Kurth state and of `f_ε`, and a
//! self-consistent particle solver along the radial characteristics
//! `ṙ = p_r`, `ṗ_r = β/r³ - ∂_r U`.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{KurthError, Result};
use crate::family::Family;
use crate::kurth::PhaseVec;
use crate::moments::{self, Deposition, RadialField};
use crate::phi::ScaleState;
use crate::stats;
use crate::vec3;

/// Particles per deposition chunk. Chunk results are merged in index order,
/// so the deposited field does not depend on the thread count.
const CHUNK: usize = 4096;

/// Fraction of the initial maximum radius that counts as total collapse.
const COLLAPSE_FRACTION: f64 = 1e-8;

/// A shell of phase space moving along a radial characteristic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Particle {
    pub r: f64,
    pub p_r: f64,
    pub beta: f64,
    pub weight: f64,
}

impl Particle {
    /// Acceleration `β/r³ - force(r)`.
    pub fn acceleration<F: Fn(f64) -> f64>(&self, force: &F) -> f64 {
        self.beta / (self.r * self.r * self.r) - force(self.r)
    }
}

/// Where an ensemble came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Source {
    Kurth,
    Family { epsilon: f64, t: f64 },
    Evolved { from: Box<Source>, t: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticleEnsemble {
    pub particles: Vec<Particle>,
    pub total_mass: f64,
    pub seed: u64,
    pub source: Source,
}

impl ParticleEnsemble {
    /// Validates `r > 0`, `β >= 0` and positive weights.
    pub fn new(particles: Vec<Particle>, seed: u64, source: Source) -> Result<Self> {
        if particles.is_empty() {
            return Err(KurthError::EmptyEnsemble);
        }
        for p in &particles {
            if !(p.r > 0.0 && p.r.is_finite()) {
                return Err(KurthError::InvalidParameter(format!("particle radius {}", p.r)));
            }
            if !(p.beta >= 0.0) {
                return Err(KurthError::InvalidParameter(format!("particle beta {}", p.beta)));
            }
            if !(p.weight > 0.0) {
                return Err(KurthError::InvalidParameter(format!("particle weight {}", p.weight)));
            }
        }
        let total_mass = particles.iter().map(|p| p.weight).sum();
        Ok(Self { particles, total_mass, seed, source })
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    pub fn radii(&self) -> Vec<f64> {
        self.particles.iter().map(|p| p.r).collect()
    }

    pub fn weights(&self) -> Vec<f64> {
        self.particles.iter().map(|p| p.weight).collect()
    }

    pub fn max_radius(&self) -> f64 {
        self.particles.iter().fold(0.0, |m, p| m.max(p.r))
    }

    /// Weighted radius quantile.
    pub fn radius_quantile(&self, q: f64) -> Result<f64> {
        stats::weighted_quantile(&self.radii(), &self.weights(), q)
    }

    /// Cartesian phase-space points: `x = r x̂` with `x̂` uniform on the
    /// sphere and `v = p_r x̂ + (√β/r) t̂` with `t̂` uniform on the circle
    /// orthogonal to `x̂`.
    pub fn to_cartesian(&self, seed: u64) -> Vec<PhaseVec> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.particles
            .iter()
            .map(|p| {
                let n = unit_vector(&mut rng);
                let (e1, e2) = orthonormal_pair(&n);
                let angle = rng.random_range(0.0..2.0 * PI);
                let t = vec3::lincomb(&e1, angle.cos(), &e2, angle.sin());
                let vt = p.beta.sqrt() / p.r;
                PhaseVec::new(vec3::scale(&n, p.r), vec3::lincomb(&n, p.p_r, &t, vt))
            })
            .collect()
    }
}

fn unit_vector<R: Rng>(rng: &mut R) -> [f64; 3] {
    let z: f64 = rng.random_range(-1.0..1.0);
    let angle: f64 = rng.random_range(0.0..2.0 * PI);
    let s = (1.0 - z * z).sqrt();
    [s * angle.cos(), s * angle.sin(), z]
}

fn orthonormal_pair(n: &[f64; 3]) -> ([f64; 3], [f64; 3]) {
    let helper = if n[0].abs() < 0.9 { [1.0, 0.0, 0.0] } else { [0.0, 1.0, 0.0] };
    let e1 = vec3::cross(n, &helper);
    let e1 = vec3::scale(&e1, 1.0 / vec3::norm(&e1));
    (e1, vec3::cross(n, &e1))
}

/// Semicircle-distributed `w ∈ [-1, 1]` by rejection from the square.
fn sample_semicircle<R: Rng>(rng: &mut R) -> f64 {
    loop {
        let w: f64 = rng.random_range(-1.0..1.0);
        let z: f64 = rng.random_range(-1.0..1.0);
        if w * w + z * z <= 1.0 {
            return w;
        }
    }
}

/// Largest `β` on the Kurth support at `(r, p_r)`, `r² (1 - r² - p_r²)/(1 - r²)`.
pub fn kurth_beta_max(r: f64, p_r: f64) -> f64 {
    let one_minus = 1.0 - r * r;
    if one_minus <= 0.0 {
        return 0.0;
    }
    (r * r * (one_minus - p_r * p_r) / one_minus).max(0.0)
}

/// Conditional CDF of `β` given `(r, p_r)` under `Q_K`:
/// `1 - √(1 - β/β_max)`.
pub fn kurth_beta_cdf(r: f64, p_r: f64, beta: f64) -> f64 {
    let bmax = kurth_beta_max(r, p_r);
    if !(bmax > 0.0) || beta >= bmax {
        return 1.0;
    }
    if beta <= 0.0 {
        return 0.0;
    }
    1.0 - (1.0 - beta / bmax).sqrt()
}

/// Draws `β` given `(r, p_r)` by inverting [`kurth_beta_cdf`].
pub fn sample_beta_given<R: Rng>(r: f64, p_r: f64, rng: &mut R) -> f64 {
    let u: f64 = rng.random();
    kurth_beta_max(r, p_r) * (1.0 - (1.0 - u) * (1.0 - u))
}

fn sample_kurth_radial<R: Rng>(rng: &mut R) -> (f64, f64, f64) {
    // r ∈ (0, 1]
    let r = (1.0 - rng.random::<f64>()).cbrt();
    let w = sample_semicircle(rng);
    let half = (1.0 - r * r).sqrt();
    let u: f64 = rng.random();
    // β_max = r² (1 - w²) without the 0/0 at r = 1
    let beta = r * r * (1.0 - w * w) * (1.0 - (1.0 - u) * (1.0 - u));
    (r, half * w, beta)
}

/// Exact equal-weight sample of `Q_K` with unit total mass.
pub fn sample_kurth(n: usize, seed: u64) -> Result<ParticleEnsemble> {
    sample_scaled(n, seed, &ScaleState::IDENTITY, Source::Kurth)
}

/// Exact sample of `f_ε(t)`: a Kurth sample mapped through `Λ_ε(t)⁻¹`.
pub fn sample_family(family: &Family, t: f64, n: usize, seed: u64) -> Result<ParticleEnsemble> {
    let scale = family.scale(t)?;
    sample_scaled(n, seed, &scale, Source::Family { epsilon: family.epsilon(), t })
}

fn sample_scaled(n: usize, seed: u64, scale: &ScaleState, source: Source) -> Result<ParticleEnsemble> {
    if n == 0 {
        return Err(KurthError::EmptyEnsemble);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let weight = 1.0 / n as f64;
    let particles = (0..n)
        .map(|_| {
            let (big_r, big_p, beta) = sample_kurth_radial(&mut rng);
            let (r, p_r) = scale.lambda_radial_inverse(big_r, big_p);
            Particle { r, p_r, beta, weight }
        })
        .collect();
    let mut ens = ParticleEnsemble::new(particles, seed, source)?;
    // equal weights summing to exactly one
    ens.total_mass = 1.0;
    Ok(ens)
}

/// Time integrator for the radial characteristics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum PushScheme {
    /// Kick-drift-kick with the full acceleration `β/r³ - ∂_r U` in the
    /// kicks and a straight drift. A crossing of the centre reflects
    /// `(r, p_r) → (-r, -p_r)`.
    Leapfrog,
    /// Kick-drift-kick with only `-∂_r U` in the kicks; the drift follows
    /// the exact force-free motion `H = p_r²/2 + β/(2r²)`, a straight line
    /// in Cartesian space. Unconditionally stable at small pericentres.
    #[default]
    CentrifugalDrift,
}

/// Exact force-free radial motion over `dt`; returns whether a radial
/// (`β = 0`) orbit passed through the centre.
fn free_drift(p: &mut Particle, dt: f64) -> bool {
    let along = p.r + p.p_r * dt;
    if p.beta == 0.0 {
        p.r = along.abs();
        if along < 0.0 {
            p.p_r = -p.p_r;
            return true;
        }
        return false;
    }
    let v2 = p.p_r * p.p_r + p.beta / (p.r * p.r);
    let radial = p.r * p.p_r + v2 * dt;
    // |x + v t|² split into the radial and tangential parts
    let tangential = p.beta.sqrt() / p.r * dt;
    p.r = along.hypot(tangential);
    p.p_r = radial / p.r;
    false
}

/// One step of `scheme` in a frozen force field `force(r) = ∂_r U`.
/// Returns whether a radial orbit crossed the centre.
pub fn push_one<F: Fn(f64) -> f64>(p: &mut Particle, force: &F, dt: f64, scheme: PushScheme) -> bool {
    match scheme {
        PushScheme::Leapfrog => {
            p.p_r += 0.5 * dt * p.acceleration(force);
            p.r += dt * p.p_r;
            let reflected = p.r < 0.0;
            if reflected {
                p.r = -p.r;
                p.p_r = -p.p_r;
            }
            p.p_r += 0.5 * dt * p.acceleration(force);
            reflected
        }
        PushScheme::CentrifugalDrift => {
            p.p_r -= 0.5 * dt * force(p.r);
            let reflected = free_drift(p, dt);
            p.p_r -= 0.5 * dt * force(p.r);
            reflected
        }
    }
}

/// [`push_one`] for every particle in `field`.
pub fn push_particles(ens: &mut ParticleEnsemble, field: &RadialField, dt: f64, scheme: PushScheme) {
    let force = |r: f64| field.force(r);
    ens.particles.par_iter_mut().for_each(|p| {
        push_one(p, &force, dt, scheme);
    });
}

/// Radial grid used by the particle solver: `nodes` evenly spaced nodes up to
/// `(1 + margin)` times the largest particle radius, rebuilt every step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub nodes: usize,
    pub margin: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self { nodes: 256, margin: 0.05 }
    }
}

impl GridSpec {
    pub fn covering(&self, r_max: f64) -> Result<Vec<f64>> {
        moments::uniform_grid(self.nodes, r_max * (1.0 + self.margin))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PicConfig {
    pub dt: f64,
    pub steps: usize,
    pub grid: GridSpec,
    pub deposition: Deposition,
    pub scheme: PushScheme,
    /// Diagnostics are recorded every this many steps (and at the end).
    pub record_every: usize,
    /// Full snapshots are kept every this many steps when set.
    pub snapshot_every: Option<usize>,
}

impl PicConfig {
    pub fn new(dt: f64, steps: usize) -> Self {
        Self {
            dt,
            steps,
            grid: GridSpec::default(),
            deposition: Deposition::Linear,
            scheme: PushScheme::default(),
            record_every: 1,
            snapshot_every: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(KurthError::InvalidParameter(format!("dt must be positive, got {}", self.dt)));
        }
        if self.grid.nodes < 2 {
            return Err(KurthError::InvalidGrid("at least two nodes required".into()));
        }
        if !(self.grid.margin >= 0.0) {
            return Err(KurthError::InvalidGrid(format!("negative margin {}", self.grid.margin)));
        }
        if self.record_every == 0 || self.snapshot_every == Some(0) {
            return Err(KurthError::InvalidParameter("recording intervals must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub step: usize,
    pub t: f64,
    /// 95th-percentile particle radius.
    pub r95: f64,
    pub r_max: f64,
    pub kinetic: f64,
    pub potential: f64,
    pub energy: f64,
    pub mass: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub t: f64,
    pub ensemble: ParticleEnsemble,
    pub field: RadialField,
}

/// Self-consistent particle evolution: deposit, solve, push.
#[derive(Debug, Clone)]
pub struct Simulation {
    ensemble: ParticleEnsemble,
    field: RadialField,
    cfg: PicConfig,
    t: f64,
    step: usize,
    /// Radius below which the whole ensemble is considered collapsed.
    collapse_radius: f64,
}

impl Simulation {
    pub fn new(ensemble: ParticleEnsemble, cfg: PicConfig) -> Result<Self> {
        cfg.validate()?;
        if ensemble.is_empty() {
            return Err(KurthError::EmptyEnsemble);
        }
        let collapse_radius = COLLAPSE_FRACTION * ensemble.max_radius();
        let field = solve_field(&ensemble, &cfg, 0.0, collapse_radius)?;
        Ok(Self { ensemble, field, cfg, t: 0.0, step: 0, collapse_radius })
    }

    pub fn ensemble(&self) -> &ParticleEnsemble {
        &self.ensemble
    }

    pub fn field(&self) -> &RadialField {
        &self.field
    }

    pub fn time(&self) -> f64 {
        self.t
    }

    pub fn steps_taken(&self) -> usize {
        self.step
    }

    /// Half kick in the current field, drift, field solve, half kick.
    pub fn step(&mut self) -> Result<()> {
        let dt = self.cfg.dt;
        let scheme = self.cfg.scheme;
        let field = &self.field;
        let force = |r: f64| field.force(r);
        self.ensemble.particles.par_iter_mut().for_each(|p| match scheme {
            PushScheme::Leapfrog => {
                p.p_r += 0.5 * dt * p.acceleration(&force);
                p.r += dt * p.p_r;
                if p.r < 0.0 {
                    p.r = -p.r;
                    p.p_r = -p.p_r;
                }
            }
            PushScheme::CentrifugalDrift => {
                p.p_r -= 0.5 * dt * force(p.r);
                free_drift(p, dt);
            }
        });
        self.t += dt;
        self.step += 1;
        self.field = solve_field(&self.ensemble, &self.cfg, self.t, self.collapse_radius)?;
        let field = &self.field;
        let force = |r: f64| field.force(r);
        self.ensemble.particles.par_iter_mut().for_each(|p| match scheme {
            PushScheme::Leapfrog => p.p_r += 0.5 * dt * p.acceleration(&force),
            PushScheme::CentrifugalDrift => p.p_r -= 0.5 * dt * force(p.r),
        });
        Ok(())
    }

    pub fn diagnostics(&self) -> Result<Diagnostics> {
        let field = &self.field;
        let (kinetic, potential) = self
            .ensemble
            .particles
            .par_chunks(CHUNK)
            .map(|chunk| {
                chunk.iter().fold((0.0, 0.0), |(k, u), p| {
                    (
                        k + 0.5 * p.weight * (p.p_r * p.p_r + p.beta / (p.r * p.r)),
                        u + 0.5 * p.weight * field.potential(p.r),
                    )
                })
            })
            .collect::<Vec<_>>()
            .into_iter()
            .fold((0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1));
        Ok(Diagnostics {
            step: self.step,
            t: self.t,
            r95: self.ensemble.radius_quantile(0.95)?,
            r_max: self.ensemble.max_radius(),
            kinetic,
            potential,
            energy: kinetic + potential,
            mass: field.total_mass(),
        })
    }

    fn snapshot(&self) -> Snapshot {
        let mut ensemble = self.ensemble.clone();
        ensemble.source = Source::Evolved { from: Box::new(self.ensemble.source.clone()), t: self.t };
        Snapshot { t: self.t, ensemble, field: self.field.clone() }
    }
}

/// Deposits the ensemble on a grid covering it and solves for the field.
/// All mass inside `collapse_radius` (or a non-finite radius) is reported as
/// a collapse.
fn solve_field(ens: &ParticleEnsemble, cfg: &PicConfig, t: f64, collapse_radius: f64) -> Result<RadialField> {
    let r_max = ens.max_radius();
    if r_max <= collapse_radius || ens.particles.iter().any(|p| !p.r.is_finite()) {
        return Err(KurthError::MassCollapse { t });
    }
    let grid = cfg.grid.covering(r_max)?;
    let index = moments::NodeIndex::new(&grid);
    let bins = ens
        .particles
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut bins = vec![0.0; grid.len()];
            for p in chunk {
                moments::deposit_into(&grid, &index, &mut bins, p.r, p.weight, cfg.deposition);
            }
            bins
        })
        .collect::<Vec<_>>()
        .into_iter()
        .fold(vec![0.0; grid.len()], |mut acc, b| {
            acc.iter_mut().zip(&b).for_each(|(a, x)| *a += x);
            acc
        });
    RadialField::from_bins(grid, &bins, cfg.deposition)
}

/// Result of [`evolve_selfconsistent`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evolution {
    pub diagnostics: Vec<Diagnostics>,
    pub snapshots: Vec<Snapshot>,
    pub final_state: Snapshot,
}

/// Runs `cfg.steps` self-consistent steps from `ens`.
pub fn evolve_selfconsistent(ens: ParticleEnsemble, cfg: &PicConfig) -> Result<Evolution> {
    let mut sim = Simulation::new(ens, cfg.clone())?;
    let mut diagnostics = vec![sim.diagnostics()?];
    let mut snapshots = Vec::new();
    if cfg.snapshot_every.is_some() {
        snapshots.push(sim.snapshot());
    }
    for k in 1..=cfg.steps {
        sim.step()?;
        if k % cfg.record_every == 0 || k == cfg.steps {
            diagnostics.push(sim.diagnostics()?);
        }
        if cfg.snapshot_every.is_some_and(|s| k % s == 0) {
            snapshots.push(sim.snapshot());
        }
    }
    Ok(Evolution { diagnostics, snapshots, final_state: sim.snapshot() })
}
