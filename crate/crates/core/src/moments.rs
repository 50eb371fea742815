//! Velocity-space moments of spherically symmetric distributions and radial
//! field solves.
//!
//! In spherical symmetry the velocity measure is `dv = (π/r²) dp_r dβ`.
//! Densities are computed by integrating `β` first (in closed form when the
//! distribution provides one) and then `p_r` with Gauss–Legendre after the
//! substitution `p_r = mid + half·sin θ`, which turns the semicircle edge of
//! the momentum support into a smooth integrand.

use std::f64::consts::{FRAC_PI_2, PI};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{KurthError, Result};
use crate::family::Family;
use crate::kurth::{self, KURTH_NORM};
use crate::phi::ScaleState;
use crate::quadrature::GaussLegendre;

/// Default number of Gauss–Legendre nodes for each quadrature direction.
pub const DEFAULT_NODES: usize = 64;

/// A spherically symmetric distribution seen as a function of `(r, p_r, β)`
/// at a fixed time.
pub trait RadialDistribution: Sync {
    /// Distribution value; zero off the support.
    fn value(&self, r: f64, p_r: f64, beta: f64) -> f64;

    /// Interval of `p_r` on which the support at radius `r` is non-empty.
    fn momentum_interval(&self, r: f64) -> Option<(f64, f64)>;

    /// Largest `β` on the support at `(r, p_r)`.
    fn beta_max(&self, r: f64, p_r: f64) -> f64;

    /// `∫ value dβ` over `[0, beta_max]` in closed form, if available.
    fn beta_integral(&self, _r: f64, _p_r: f64) -> Option<f64> {
        None
    }

    /// Radius beyond which the distribution vanishes, if known.
    fn radial_support(&self) -> Option<f64> {
        None
    }
}

/// How the inner `β` integral is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BetaRule {
    /// Use [`RadialDistribution::beta_integral`], falling back to
    /// quadrature when the distribution has no closed form.
    ClosedForm,
    /// Gauss–Legendre in `s` with `β = β_max (1 - s²)`, which removes an
    /// inverse square-root edge singularity.
    Numeric,
}

/// `K √A · 2/c`, the closed-form `β` integral of `K (A - cβ)^{-1/2}`.
fn kurth_beta_integral(a: f64, c: f64) -> f64 {
    2.0 * KURTH_NORM * a.sqrt() / c
}

/// `(A, c)` for the Kurth support `A - cβ` at `(R, P)`.
fn kurth_coefficients(big_r: f64, big_p: f64) -> (f64, f64) {
    let one_minus = 1.0 - big_r * big_r;
    (one_minus - big_p * big_p, one_minus / (big_r * big_r))
}

/// The Kurth steady state `Q̃(e, β)` in its self-consistent potential.
#[derive(Debug, Clone, Copy, Default)]
pub struct KurthSteady;

impl RadialDistribution for KurthSteady {
    fn value(&self, r: f64, p_r: f64, beta: f64) -> f64 {
        if r >= 1.0 || r <= 0.0 {
            return 0.0;
        }
        let e = 0.5 * p_r * p_r + kurth::potential(r) + beta / (2.0 * r * r);
        kurth::eval_q_tilde(e, beta)
    }

    fn momentum_interval(&self, r: f64) -> Option<(f64, f64)> {
        (r < 1.0).then(|| {
            let half = (1.0 - r * r).sqrt();
            (-half, half)
        })
    }

    fn beta_max(&self, r: f64, p_r: f64) -> f64 {
        let (a, c) = kurth_coefficients(r, p_r);
        (a / c).max(0.0)
    }

    fn beta_integral(&self, r: f64, p_r: f64) -> Option<f64> {
        let (a, c) = kurth_coefficients(r, p_r);
        Some(if a > 0.0 && c > 0.0 { kurth_beta_integral(a, c) } else { 0.0 })
    }

    fn radial_support(&self) -> Option<f64> {
        Some(1.0)
    }
}

/// `f_ε(t)` at a fixed scale state, `Q_K(r/φ, φ p_r - φ' r, β)`.
#[derive(Debug, Clone, Copy)]
pub struct FamilySnapshot {
    pub scale: ScaleState,
}

impl FamilySnapshot {
    pub fn at(family: &Family, t: f64) -> Result<Self> {
        Ok(Self { scale: family.scale(t)? })
    }
}

impl RadialDistribution for FamilySnapshot {
    fn value(&self, r: f64, p_r: f64, beta: f64) -> f64 {
        let (big_r, big_p) = self.scale.lambda_radial(r, p_r);
        if big_r <= 0.0 || big_r >= 1.0 {
            return 0.0;
        }
        let (a, c) = kurth_coefficients(big_r, big_p);
        let f = a - c * beta;
        if f > 0.0 && beta < 1.0 {
            KURTH_NORM / f.sqrt()
        } else {
            0.0
        }
    }

    fn momentum_interval(&self, r: f64) -> Option<(f64, f64)> {
        let s = &self.scale;
        let big_r = r / s.phi;
        (big_r < 1.0).then(|| {
            let half = (1.0 - big_r * big_r).sqrt();
            ((s.phidot * r - half) / s.phi, (s.phidot * r + half) / s.phi)
        })
    }

    fn beta_max(&self, r: f64, p_r: f64) -> f64 {
        let (big_r, big_p) = self.scale.lambda_radial(r, p_r);
        let (a, c) = kurth_coefficients(big_r, big_p);
        (a / c).max(0.0)
    }

    fn beta_integral(&self, r: f64, p_r: f64) -> Option<f64> {
        let (big_r, big_p) = self.scale.lambda_radial(r, p_r);
        let (a, c) = kurth_coefficients(big_r, big_p);
        Some(if a > 0.0 && c > 0.0 { kurth_beta_integral(a, c) } else { 0.0 })
    }

    fn radial_support(&self) -> Option<f64> {
        Some(self.scale.phi)
    }
}

/// A distribution given as `Q̃(e, β)` in a potential `U(r)`, with caller
/// supplied support bounds.
pub struct EnergyDistribution<Q, U, M, B> {
    pub q_tilde: Q,
    pub potential: U,
    pub momentum_interval: M,
    pub beta_max: B,
}

impl<Q, U, M, B> RadialDistribution for EnergyDistribution<Q, U, M, B>
where
    Q: Fn(f64, f64) -> f64 + Sync,
    U: Fn(f64) -> f64 + Sync,
    M: Fn(f64) -> Option<(f64, f64)> + Sync,
    B: Fn(f64, f64) -> f64 + Sync,
{
    fn value(&self, r: f64, p_r: f64, beta: f64) -> f64 {
        let e = 0.5 * p_r * p_r + (self.potential)(r) + beta / (2.0 * r * r);
        (self.q_tilde)(e, beta)
    }

    fn momentum_interval(&self, r: f64) -> Option<(f64, f64)> {
        (self.momentum_interval)(r)
    }

    fn beta_max(&self, r: f64, p_r: f64) -> f64 {
        (self.beta_max)(r, p_r)
    }
}

/// Spatial density `ρ(r) = (π/r²) ∫∫ f dp_r dβ`.
pub fn density_from_distribution<D: RadialDistribution + ?Sized>(
    dist: &D,
    r: f64,
    quad: &GaussLegendre,
    rule: BetaRule,
) -> Result<f64> {
    if !(r > 0.0) {
        return Err(KurthError::ZeroRadius);
    }
    let Some((lo, hi)) = dist.momentum_interval(r) else {
        return Ok(0.0);
    };
    if !(hi > lo) {
        return Ok(0.0);
    }
    let mid = 0.5 * (lo + hi);
    let half = 0.5 * (hi - lo);
    let inner = |p: f64| -> f64 {
        if rule == BetaRule::ClosedForm {
            if let Some(v) = dist.beta_integral(r, p) {
                return v;
            }
        }
        let bmax = dist.beta_max(r, p);
        if !(bmax > 0.0) {
            return 0.0;
        }
        quad.integrate(0.0, 1.0, |s| 2.0 * bmax * s * dist.value(r, p, bmax * (1.0 - s * s)))
    };
    let outer = quad.integrate(-FRAC_PI_2, FRAC_PI_2, |theta| {
        half * theta.cos() * inner(mid + half * theta.sin())
    });
    Ok(PI / (r * r) * outer)
}

/// [`density_from_distribution`] over many radii in parallel.
pub fn density_profile<D: RadialDistribution + ?Sized>(
    dist: &D,
    radii: &[f64],
    quad: &GaussLegendre,
    rule: BetaRule,
) -> Result<Vec<f64>> {
    radii
        .par_iter()
        .map(|&r| density_from_distribution(dist, r, quad, rule))
        .collect()
}

/// Particle-to-grid deposition scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum Deposition {
    /// Mass shared between the two bracketing nodes linearly in `r³`.
    #[default]
    Linear,
    /// Exact enclosed particle mass at every node.
    Counting,
}

/// Enclosed mass and radial force on a grid, `∂_r U = M(r)/r²`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadialField {
    grid: Vec<f64>,
    cubes: Vec<f64>,
    index: NodeIndex,
    enclosed_mass: Vec<f64>,
    d_u: Vec<f64>,
    /// Potential at the nodes, normalised to `-M/r` at infinity.
    potential: Vec<f64>,
}

/// One CSV row of a field: node radius, mean density of the cell ending at
/// the node, enclosed mass and force.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldRow {
    pub r: f64,
    pub rho: f64,
    pub mass: f64,
    pub d_u: f64,
}

/// Node lookup on a radial grid with a constant-time path for evenly spaced
/// nodes `grid[i] = (i + 1) h`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NodeIndex {
    spacing: Option<f64>,
}

impl NodeIndex {
    pub fn new(grid: &[f64]) -> Self {
        let h = grid.first().copied().unwrap_or(0.0);
        let uniform = h > 0.0
            && grid
                .iter()
                .enumerate()
                .all(|(i, &g)| (g - (i + 1) as f64 * h).abs() <= 1e-9 * g);
        Self { spacing: uniform.then_some(h) }
    }

    /// Number of nodes `<= r`.
    pub fn count_le(&self, grid: &[f64], r: f64) -> usize {
        let Some(h) = self.spacing else {
            return grid.partition_point(|&g| g <= r);
        };
        let mut k = ((r / h).max(0.0) as usize).min(grid.len());
        while k < grid.len() && grid[k] <= r {
            k += 1;
        }
        while k > 0 && grid[k - 1] > r {
            k -= 1;
        }
        k
    }

    /// Number of nodes `< r`.
    pub fn count_lt(&self, grid: &[f64], r: f64) -> usize {
        let mut k = self.count_le(grid, r);
        while k > 0 && grid[k - 1] >= r {
            k -= 1;
        }
        k
    }
}

fn validate_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(KurthError::InvalidGrid("grid is empty".into()));
    }
    if !(grid[0] > 0.0) {
        return Err(KurthError::InvalidGrid(format!(
            "first node must be positive, got {}",
            grid[0]
        )));
    }
    if let Some(w) = grid.windows(2).find(|w| !(w[1] > w[0]) || !w[1].is_finite()) {
        return Err(KurthError::InvalidGrid(format!(
            "nodes must be strictly increasing, got {} then {}",
            w[0], w[1]
        )));
    }
    Ok(())
}

/// `n` nodes spaced evenly on `(0, r_max]`.
pub fn uniform_grid(n: usize, r_max: f64) -> Result<Vec<f64>> {
    if n == 0 || !(r_max > 0.0) || !r_max.is_finite() {
        return Err(KurthError::InvalidGrid(format!("n = {n}, r_max = {r_max}")));
    }
    Ok((1..=n).map(|i| r_max * i as f64 / n as f64).collect())
}

fn shell_volume(a: f64, b: f64) -> f64 {
    4.0 * PI / 3.0 * (b * b * b - a * a * a)
}

impl RadialField {
    /// Builds the field from cumulative masses at the nodes.
    pub fn from_enclosed_mass(grid: Vec<f64>, enclosed_mass: Vec<f64>) -> Result<Self> {
        validate_grid(&grid)?;
        if grid.len() != enclosed_mass.len() {
            return Err(KurthError::InvalidGrid(format!(
                "{} nodes but {} mass values",
                grid.len(),
                enclosed_mass.len()
            )));
        }
        let mut prev = 0.0;
        for (i, &m) in enclosed_mass.iter().enumerate() {
            if !(m >= prev) {
                return Err(KurthError::NegativeDensity { index: i, value: m - prev });
            }
            prev = m;
        }
        let d_u = grid.iter().zip(&enclosed_mass).map(|(r, m)| m / (r * r)).collect();
        let n = grid.len();
        let mut potential = vec![0.0; n];
        potential[n - 1] = -enclosed_mass[n - 1] / grid[n - 1];
        for i in (0..n - 1).rev() {
            let (a, b) = cell_mass_coefficients(grid[i], grid[i + 1], enclosed_mass[i], enclosed_mass[i + 1]);
            // ∫_{g_i}^{g_{i+1}} (a + b s³)/s² ds
            let integral = a * (1.0 / grid[i] - 1.0 / grid[i + 1])
                + 0.5 * b * (grid[i + 1] * grid[i + 1] - grid[i] * grid[i]);
            potential[i] = potential[i + 1] - integral;
        }
        let cubes = grid.iter().map(|g| g * g * g).collect();
        let index = NodeIndex::new(&grid);
        Ok(Self { grid, cubes, index, enclosed_mass, d_u, potential })
    }

    /// Field of a piecewise-constant density; `cell_density[i]` is the value
    /// on `(grid[i-1], grid[i]]` with `grid[-1] = 0`. Exact for such densities.
    pub fn from_cell_density(grid: Vec<f64>, cell_density: &[f64]) -> Result<Self> {
        validate_grid(&grid)?;
        if grid.len() != cell_density.len() {
            return Err(KurthError::InvalidGrid(format!(
                "{} nodes but {} density bins",
                grid.len(),
                cell_density.len()
            )));
        }
        let mut mass = Vec::with_capacity(grid.len());
        let mut total = 0.0;
        let mut inner = 0.0;
        for (i, (&r, &rho)) in grid.iter().zip(cell_density).enumerate() {
            if !(rho >= 0.0) {
                return Err(KurthError::NegativeDensity { index: i, value: rho });
            }
            total += rho * shell_volume(inner, r);
            mass.push(total);
            inner = r;
        }
        Self::from_enclosed_mass(grid, mass)
    }

    /// Field of a density function, integrating `4π r² ρ` cell by cell.
    /// Discontinuities of `rho` should be listed in `breakpoints` so that
    /// every quadrature panel sees a smooth integrand.
    pub fn from_density_fn<F>(grid: Vec<f64>, rho: F, breakpoints: &[f64], quad: &GaussLegendre) -> Result<Self>
    where
        F: Fn(f64) -> f64,
    {
        validate_grid(&grid)?;
        let mut mass = Vec::with_capacity(grid.len());
        let mut total = 0.0;
        let mut inner = 0.0;
        for &outer in &grid {
            let mut cuts = vec![inner];
            cuts.extend(breakpoints.iter().copied().filter(|&b| b > inner && b < outer));
            cuts.push(outer);
            for w in cuts.windows(2) {
                let mut negative = None;
                total += quad.integrate(w[0], w[1], |r| {
                    let v = rho(r);
                    if v < 0.0 {
                        negative = Some(v);
                    }
                    4.0 * PI * r * r * v
                });
                if let Some(v) = negative {
                    return Err(KurthError::NegativeDensity { index: mass.len(), value: v });
                }
            }
            mass.push(total);
            inner = outer;
        }
        Self::from_enclosed_mass(grid, mass)
    }

    /// Field of a set of point masses at radii `radii` with weights `weights`.
    pub fn from_particles(grid: Vec<f64>, radii: &[f64], weights: &[f64], deposition: Deposition) -> Result<Self> {
        let bins = deposit(&grid, radii, weights, deposition)?;
        Self::from_bins(grid, &bins, deposition)
    }

    /// Field from bins accumulated with [`deposit_into`].
    pub fn from_bins(grid: Vec<f64>, bins: &[f64], deposition: Deposition) -> Result<Self> {
        validate_grid(&grid)?;
        if bins.len() != grid.len() {
            return Err(KurthError::InvalidGrid(format!(
                "{} nodes but {} bins",
                grid.len(),
                bins.len()
            )));
        }
        if let Some((i, &v)) = bins.iter().enumerate().find(|(_, v)| !(**v >= 0.0)) {
            return Err(KurthError::NegativeDensity { index: i, value: v });
        }
        let mass = bins_to_mass(&grid, bins, deposition);
        Self::from_enclosed_mass(grid, mass)
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn enclosed_mass(&self) -> &[f64] {
        &self.enclosed_mass
    }

    pub fn d_u(&self) -> &[f64] {
        &self.d_u
    }

    pub fn total_mass(&self) -> f64 {
        *self.enclosed_mass.last().expect("grid is non-empty")
    }

    pub fn r_max(&self) -> f64 {
        *self.grid.last().expect("grid is non-empty")
    }

    /// Index `i` with `grid[i] <= r < grid[i + 1]`, or `None` below the first node.
    fn cell(&self, r: f64) -> Option<usize> {
        match self.index.count_le(&self.grid, r) {
            0 => None,
            k => Some(k - 1),
        }
    }

    /// Enclosed mass, interpolated linearly in `r³` between nodes.
    pub fn mass(&self, r: f64) -> f64 {
        if r <= 0.0 {
            return 0.0;
        }
        match self.cell(r) {
            None => self.enclosed_mass[0] * r * r * r / self.cubes[0],
            Some(i) if i + 1 == self.grid.len() => self.total_mass(),
            Some(i) => {
                let (v0, v1) = (self.cubes[i], self.cubes[i + 1]);
                let (m0, m1) = (self.enclosed_mass[i], self.enclosed_mass[i + 1]);
                m0 + (m1 - m0) * (r * r * r - v0) / (v1 - v0)
            }
        }
    }

    /// `∂_r U(r) = M(r)/r²`; zero at the centre.
    pub fn force(&self, r: f64) -> f64 {
        if r <= 0.0 {
            return 0.0;
        }
        let r = r.abs();
        self.mass(r) / (r * r)
    }

    /// Potential consistent with [`RadialField::force`], `-M/r` beyond the grid.
    pub fn potential(&self, r: f64) -> f64 {
        let r = r.abs();
        match self.cell(r) {
            None => {
                let g0 = self.grid[0];
                let k = self.enclosed_mass[0] / (g0 * g0 * g0);
                self.potential[0] - 0.5 * k * (g0 * g0 - r * r)
            }
            Some(i) if i + 1 == self.grid.len() => -self.total_mass() / r,
            Some(i) => {
                let (a, b) = cell_mass_coefficients(
                    self.grid[i],
                    self.grid[i + 1],
                    self.enclosed_mass[i],
                    self.enclosed_mass[i + 1],
                );
                let hi = self.grid[i + 1];
                let integral = a * (1.0 / r - 1.0 / hi) + 0.5 * b * (hi * hi - r * r);
                self.potential[i + 1] - integral
            }
        }
    }

    /// Mean density of each cell `(grid[i-1], grid[i]]`.
    pub fn cell_density(&self) -> Vec<f64> {
        let mut inner = (0.0, 0.0);
        self.grid
            .iter()
            .zip(&self.enclosed_mass)
            .map(|(&r, &m)| {
                let rho = (m - inner.1) / shell_volume(inner.0, r);
                inner = (r, m);
                rho
            })
            .collect()
    }

    pub fn rows(&self) -> Vec<FieldRow> {
        self.cell_density()
            .into_iter()
            .enumerate()
            .map(|(i, rho)| FieldRow {
                r: self.grid[i],
                rho,
                mass: self.enclosed_mass[i],
                d_u: self.d_u[i],
            })
            .collect()
    }
}

/// `M(s) = a + b s³` on a cell with end masses `m0`, `m1`.
fn cell_mass_coefficients(r0: f64, r1: f64, m0: f64, m1: f64) -> (f64, f64) {
    let (v0, v1) = (r0 * r0 * r0, r1 * r1 * r1);
    let b = (m1 - m0) / (v1 - v0);
    (m0 - b * v0, b)
}

/// Adds one particle of mass `w` at radius `r` to additive deposition bins
/// (cell masses for [`Deposition::Counting`], node masses for
/// [`Deposition::Linear`]). Mass beyond the grid goes to the outermost bin.
pub fn deposit_into(grid: &[f64], index: &NodeIndex, bins: &mut [f64], r: f64, w: f64, deposition: Deposition) {
    let n = grid.len();
    let r = r.abs();
    match deposition {
        Deposition::Counting => {
            let k = index.count_lt(grid, r).min(n - 1);
            bins[k] += w;
        }
        Deposition::Linear => {
            let k = index.count_le(grid, r);
            if k == 0 {
                bins[0] += w;
            } else if k == n {
                bins[n - 1] += w;
            } else {
                let (a, b) = (grid[k - 1], grid[k]);
                let (v0, v1) = (a * a * a, b * b * b);
                let frac = (v1 - r * r * r) / (v1 - v0);
                bins[k - 1] += w * frac;
                bins[k] += w * (1.0 - frac);
            }
        }
    }
}

/// Deposition bins of a weighted radial sample.
pub fn deposit(grid: &[f64], radii: &[f64], weights: &[f64], deposition: Deposition) -> Result<Vec<f64>> {
    validate_grid(grid)?;
    if radii.len() != weights.len() {
        return Err(KurthError::InvalidParameter(format!(
            "{} radii but {} weights",
            radii.len(),
            weights.len()
        )));
    }
    let index = NodeIndex::new(grid);
    let mut bins = vec![0.0; grid.len()];
    for (i, (&r, &w)) in radii.iter().zip(weights).enumerate() {
        if !(w >= 0.0) || !w.is_finite() {
            return Err(KurthError::NegativeDensity { index: i, value: w });
        }
        deposit_into(grid, &index, &mut bins, r, w, deposition);
    }
    Ok(bins)
}

/// Enclosed mass at the nodes from deposition bins.
fn bins_to_mass(grid: &[f64], bins: &[f64], deposition: Deposition) -> Vec<f64> {
    match deposition {
        Deposition::Counting => prefix_sum(bins),
        Deposition::Linear => {
            // split each node's mass over its two half-cells by volume
            let n = grid.len();
            let cells: Vec<f64> = (0..n)
                .map(|i| {
                    let inner = if i == 0 { 0.0 } else { grid[i - 1] };
                    grid[i].powi(3) - inner.powi(3)
                })
                .collect();
            let mut cell_mass = vec![0.0; n];
            for i in 0..n {
                let left = if i == 0 { cells[0] } else { 0.5 * cells[i] };
                let right = if i + 1 < n { 0.5 * cells[i + 1] } else { 0.0 };
                let share = left / (left + right);
                cell_mass[i] += bins[i] * share;
                if i + 1 < n {
                    cell_mass[i + 1] += bins[i] * (1.0 - share);
                }
            }
            prefix_sum(&cell_mass)
        }
    }
}

fn prefix_sum(v: &[f64]) -> Vec<f64> {
    v.iter()
        .scan(0.0, |acc, x| {
            *acc += x;
            Some(*acc)
        })
        .collect()
}

/// The two evaluations of `∂_r U_f(t, r̃)` compared by
/// [`change_of_variables_check`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChangeOfVariables {
    pub direct: f64,
    pub transformed: f64,
    pub residual: f64,
}

/// Computes `∂_r U_f(t, r̃)` by radial quadrature of the density of `f_ε(t)`
/// (each density from a numeric `(p_r, β)` quadrature), and again by the
/// radial integral of the steady density up to `R(t, r̃)`.
pub fn change_of_variables_check(family: &Family, t: f64, r_tilde: f64, quad: &GaussLegendre) -> Result<ChangeOfVariables> {
    if !(r_tilde > 0.0) {
        return Err(KurthError::ZeroRadius);
    }
    let snapshot = FamilySnapshot::at(family, t)?;
    let steady = KurthSteady;
    let radial_integral = |dist: &dyn RadialDistribution, upper: f64, rule: BetaRule| -> Result<f64> {
        let upper = dist.radial_support().map_or(upper, |s| upper.min(s));
        let mut acc = 0.0;
        for (r, w) in quad.mapped(0.0, upper) {
            acc += w * r * r * density_from_distribution(dist, r, quad, rule)?;
        }
        Ok(4.0 * PI * acc / (r_tilde * r_tilde))
    };
    let direct = radial_integral(&snapshot, r_tilde, BetaRule::Numeric)?;
    let big_r = snapshot.scale.lambda_radial(r_tilde, 0.0).0;
    let transformed = radial_integral(&steady, big_r, BetaRule::ClosedForm)?;
    Ok(ChangeOfVariables { direct, transformed, residual: direct - transformed })
}
