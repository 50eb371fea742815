//! The scale-factor ODE `φ'' = α(-1/φ² + 1/φ³)`, its first integral and
//! period detection.
//!
//! Trajectories are produced by an adaptive Dormand–Prince 5(4) pair (or a
//! fixed-step leapfrog) and stored as accepted steps. Dense output between
//! steps is quintic Hermite interpolation through `(φ, φ', φ'')` at both step
//! ends, with `φ''` taken from the right-hand side.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{KurthError, Result};

/// Default tolerance of the adaptive integrator.
pub const DEFAULT_TOL: f64 = 1e-10;

const MAX_STEPS: usize = 10_000_000;

/// Scale factor and its first two time derivatives at one instant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaleState {
    pub phi: f64,
    pub phidot: f64,
    pub phiddot: f64,
}

impl ScaleState {
    /// The static configuration `φ ≡ 1`.
    pub const IDENTITY: ScaleState = ScaleState {
        phi: 1.0,
        phidot: 0.0,
        phiddot: 0.0,
    };
}

/// Right-hand side `α(-1/φ² + 1/φ³)`.
#[inline]
pub fn phi_acceleration(alpha: f64, phi: f64) -> f64 {
    let inv = 1.0 / phi;
    alpha * inv * inv * (inv - 1.0)
}

/// First integral `E = φ'²/2 + α(-1/φ + 1/(2φ²))`.
pub fn phi_energy(phi: f64, phidot: f64, alpha: f64) -> f64 {
    let inv = 1.0 / phi;
    0.5 * phidot * phidot + alpha * inv * (0.5 * inv - 1.0)
}

/// Turning points `φ_min <= φ_max` of a bound orbit with energy `energy < 0`.
pub fn turning_points(alpha: f64, energy: f64) -> Option<(f64, f64)> {
    // E φ² + α φ - α/2 = 0
    if !(energy < 0.0) || !(alpha > 0.0) {
        return None;
    }
    let disc = alpha * alpha + 2.0 * alpha * energy;
    if disc < 0.0 {
        return None;
    }
    let sq = disc.sqrt();
    // product of roots is -α/(2E) > 0, so use the stable pair
    let big = (alpha + sq) / (-2.0 * energy);
    let small = (-alpha / (2.0 * energy)) / big;
    Some((small, big))
}

/// Closed-form period `2π/(1 - ε²)^{3/2}` of the `α = 1` orbit.
pub fn period(epsilon: f64) -> Result<f64> {
    if !(epsilon.abs() < 1.0) {
        return Err(KurthError::Aperiodic { epsilon });
    }
    Ok(2.0 * PI / (1.0 - epsilon * epsilon).powf(1.5))
}

/// Dense solution of the scale-factor ODE on `[0, t_end]`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PhiTrajectory {
    pub alpha: f64,
    /// Initial velocity `φ'(0)`.
    pub epsilon: f64,
    /// Initial value `φ(0)`; 1 for the breathing family.
    pub phi0: f64,
    pub tol: f64,
    pub energy0: f64,
    pub period: Option<f64>,
    times: Vec<f64>,
    phi: Vec<f64>,
    phidot: Vec<f64>,
}

impl PhiTrajectory {
    pub fn t_end(&self) -> f64 {
        *self.times.last().expect("trajectory has at least one node")
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Bound orbits have negative energy; only these are periodic.
    pub fn is_bound(&self) -> bool {
        self.energy0 < 0.0
    }

    /// Stored steps as `(t, φ, φ')`.
    pub fn nodes(&self) -> impl Iterator<Item = (f64, f64, f64)> + '_ {
        self.times
            .iter()
            .zip(&self.phi)
            .zip(&self.phidot)
            .map(|((&t, &p), &d)| (t, p, d))
    }

    /// Dense evaluation of `(φ, φ', φ'')` at `t`.
    pub fn at(&self, t: f64) -> Result<ScaleState> {
        let t_end = self.t_end();
        let slack = 1e-12 * t_end.abs().max(1.0);
        if !(t >= -slack && t <= t_end + slack) {
            return Err(KurthError::OutOfRange {
                t,
                t_start: 0.0,
                t_end,
            });
        }
        if self.times.len() == 1 {
            return Ok(self.node_state(0));
        }
        let t = t.clamp(0.0, t_end);
        let i = self
            .times
            .partition_point(|&ti| ti <= t)
            .clamp(1, self.times.len() - 1)
            - 1;
        Ok(self.hermite(i, t))
    }

    fn node_state(&self, i: usize) -> ScaleState {
        ScaleState {
            phi: self.phi[i],
            phidot: self.phidot[i],
            phiddot: phi_acceleration(self.alpha, self.phi[i]),
        }
    }

    fn hermite(&self, i: usize, t: f64) -> ScaleState {
        let h = self.times[i + 1] - self.times[i];
        let a = self.node_state(i);
        let b = self.node_state(i + 1);
        let (phi, phidot) = quintic_hermite(
            h,
            (t - self.times[i]) / h,
            [a.phi, a.phidot, a.phiddot],
            [b.phi, b.phidot, b.phiddot],
        );
        ScaleState {
            phi,
            phidot,
            phiddot: phi_acceleration(self.alpha, phi),
        }
    }

    /// Energy of the interpolated state at `t`.
    pub fn energy_at(&self, t: f64) -> Result<f64> {
        let s = self.at(t)?;
        Ok(phi_energy(s.phi, s.phidot, self.alpha))
    }

    /// Largest `|E - E(0)|` over the stored steps.
    pub fn max_energy_drift(&self) -> f64 {
        self.nodes()
            .map(|(_, p, d)| (phi_energy(p, d, self.alpha) - self.energy0).abs())
            .fold(0.0, f64::max)
    }
}

/// Quintic Hermite interpolant on a step of length `h` at fraction `s`,
/// from `[value, first, second]` derivatives at both ends. Returns the value
/// and the first derivative.
fn quintic_hermite(h: f64, s: f64, a: [f64; 3], b: [f64; 3]) -> (f64, f64) {
    let s2 = s * s;
    let s3 = s2 * s;
    let s4 = s3 * s;
    let s5 = s4 * s;
    let basis = [
        1.0 - 10.0 * s3 + 15.0 * s4 - 6.0 * s5,
        s - 6.0 * s3 + 8.0 * s4 - 3.0 * s5,
        0.5 * (s2 - 3.0 * s3 + 3.0 * s4 - s5),
        10.0 * s3 - 15.0 * s4 + 6.0 * s5,
        -4.0 * s3 + 7.0 * s4 - 3.0 * s5,
        0.5 * (s3 - 2.0 * s4 + s5),
    ];
    let dbasis = [
        -30.0 * s2 + 60.0 * s3 - 30.0 * s4,
        1.0 - 18.0 * s2 + 32.0 * s3 - 15.0 * s4,
        0.5 * (2.0 * s - 9.0 * s2 + 12.0 * s3 - 5.0 * s4),
        30.0 * s2 - 60.0 * s3 + 30.0 * s4,
        -12.0 * s2 + 28.0 * s3 - 15.0 * s4,
        0.5 * (3.0 * s2 - 8.0 * s3 + 5.0 * s4),
    ];
    let coef = [a[0], h * a[1], h * h * a[2], b[0], h * b[1], h * h * b[2]];
    let value = basis.iter().zip(&coef).map(|(w, c)| w * c).sum();
    let deriv = dbasis.iter().zip(&coef).map(|(w, c)| w * c).sum::<f64>() / h;
    (value, deriv)
}

fn validate(alpha: f64, phi0: f64, t_end: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(KurthError::InvalidParameter(format!("alpha must be > 0, got {alpha}")));
    }
    if !(phi0 > 0.0 && phi0.is_finite()) {
        return Err(KurthError::InvalidParameter(format!("phi(0) must be > 0, got {phi0}")));
    }
    if !(t_end > 0.0 && t_end.is_finite()) {
        return Err(KurthError::InvalidParameter(format!("t_end must be > 0, got {t_end}")));
    }
    Ok(())
}

/// Integrates `φ(0) = 1`, `φ'(0) = ε` up to `t_end` with the adaptive pair.
pub fn integrate_phi(alpha: f64, epsilon: f64, t_end: f64, tol: f64) -> Result<PhiTrajectory> {
    integrate_phi_from(alpha, 1.0, epsilon, t_end, tol)
}

// Dormand–Prince 5(4) tableau.
const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
// Difference between the fifth- and fourth-order weights.
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

/// Adaptive integration from an arbitrary initial state `(φ0, φ'0)`.
pub fn integrate_phi_from(
    alpha: f64,
    phi0: f64,
    phidot0: f64,
    t_end: f64,
    tol: f64,
) -> Result<PhiTrajectory> {
    validate(alpha, phi0, t_end)?;
    if !(tol > 0.0) {
        return Err(KurthError::InvalidParameter(format!("tol must be > 0, got {tol}")));
    }
    let rhs = |y: [f64; 2]| [y[1], phi_acceleration(alpha, y[0])];

    let mut times = vec![0.0];
    let mut phis = vec![phi0];
    let mut phidots = vec![phidot0];

    let mut t = 0.0;
    let mut y = [phi0, phidot0];
    let mut k1 = rhs(y);
    let mut h = (0.01f64).min(t_end);
    let mut steps = 0usize;

    while t < t_end {
        if t_end - t <= 1e-13 * t_end.max(1.0) {
            *times.last_mut().expect("non-empty") = t_end;
            break;
        }
        steps += 1;
        if steps > MAX_STEPS || h < 1e-14 * t.abs().max(1.0) {
            return Err(KurthError::Collapse { t_last: t });
        }
        let last = t + h >= t_end;
        if last {
            h = t_end - t;
        }

        let mut k = [[0.0; 2]; 7];
        k[0] = k1;
        let mut valid = true;
        for s in 1..7 {
            let mut ys = y;
            for (j, kj) in k.iter().enumerate().take(s) {
                ys[0] += h * A[s][j] * kj[0];
                ys[1] += h * A[s][j] * kj[1];
            }
            if !(ys[0] > 0.0 && ys[0].is_finite() && ys[1].is_finite()) {
                valid = false;
                break;
            }
            k[s] = rhs(ys);
        }
        if !valid {
            h *= 0.25;
            continue;
        }
        const { assert!(C[6] == 1.0) };

        let mut y_new = y;
        for j in 0..6 {
            y_new[0] += h * A[6][j] * k[j][0];
            y_new[1] += h * A[6][j] * k[j][1];
        }
        let mut err = [0.0f64; 2];
        for (j, kj) in k.iter().enumerate() {
            err[0] += h * E[j] * kj[0];
            err[1] += h * E[j] * kj[1];
        }
        let norm = (0..2)
            .map(|i| err[i].abs() / (tol * (1.0 + y[i].abs().max(y_new[i].abs()))))
            .fold(0.0, f64::max);

        if norm <= 1.0 {
            t = if last { t_end } else { t + h };
            y = y_new;
            k1 = k[6];
            times.push(t);
            phis.push(y[0]);
            phidots.push(y[1]);
        }
        let factor = if norm == 0.0 {
            5.0
        } else {
            (0.9 * norm.powf(-0.2)).clamp(0.2, 5.0)
        };
        h *= if norm <= 1.0 { factor } else { factor.min(1.0) };
    }

    Ok(finish(alpha, phi0, phidot0, tol, times, phis, phidots))
}

/// Fixed-step kick-drift-kick integration, `ceil(t_end / dt)` steps.
///
/// `tol` is reported as `dt²`, the scale of the method's global error.
pub fn integrate_phi_leapfrog(alpha: f64, epsilon: f64, t_end: f64, dt: f64) -> Result<PhiTrajectory> {
    validate(alpha, 1.0, t_end)?;
    if !(dt > 0.0) {
        return Err(KurthError::InvalidParameter(format!("dt must be > 0, got {dt}")));
    }
    let n = (t_end / dt).ceil() as usize;
    let dt = t_end / n as f64;
    let mut times = Vec::with_capacity(n + 1);
    let mut phis = Vec::with_capacity(n + 1);
    let mut phidots = Vec::with_capacity(n + 1);
    let (mut phi, mut phidot) = (1.0, epsilon);
    times.push(0.0);
    phis.push(phi);
    phidots.push(phidot);
    for i in 1..=n {
        phidot += 0.5 * dt * phi_acceleration(alpha, phi);
        phi += dt * phidot;
        if !(phi > 0.0 && phi.is_finite()) {
            return Err(KurthError::Collapse {
                t_last: times[i - 1],
            });
        }
        phidot += 0.5 * dt * phi_acceleration(alpha, phi);
        times.push(i as f64 * dt);
        phis.push(phi);
        phidots.push(phidot);
    }
    Ok(finish(alpha, 1.0, epsilon, dt * dt, times, phis, phidots))
}

fn finish(
    alpha: f64,
    phi0: f64,
    phidot0: f64,
    tol: f64,
    times: Vec<f64>,
    phi: Vec<f64>,
    phidot: Vec<f64>,
) -> PhiTrajectory {
    let mut traj = PhiTrajectory {
        alpha,
        epsilon: phidot0,
        phi0,
        tol,
        energy0: phi_energy(phi0, phidot0, alpha),
        period: None,
        times,
        phi,
        phidot,
    };
    if traj.is_bound() {
        traj.period = detect_period(&traj).ok();
    }
    traj
}

/// Direction of a zero crossing of `φ'`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Crossing {
    Rising,
    Falling,
}

/// Zero crossings of `φ'`, each refined from a quadratic-interpolation guess
/// by safeguarded Newton iteration on the dense output.
fn velocity_crossings(traj: &PhiTrajectory) -> Vec<(f64, Crossing)> {
    let d = &traj.phidot;
    let t = &traj.times;
    let mut out = Vec::new();
    for i in 0..d.len().saturating_sub(1) {
        let dir = if d[i] > 0.0 && d[i + 1] <= 0.0 {
            Crossing::Falling
        } else if d[i] < 0.0 && d[i + 1] >= 0.0 {
            Crossing::Rising
        } else {
            continue;
        };
        let (lo, hi) = (t[i], t[i + 1]);
        let mut root = quadratic_guess(t, d, i).unwrap_or_else(|| {
            lo + (hi - lo) * d[i] / (d[i] - d[i + 1])
        });
        let (mut a, mut b) = (lo, hi);
        let sign_a = d[i].signum();
        for _ in 0..50 {
            let s = match traj.hermite_at(i, root) {
                Some(s) => s,
                None => break,
            };
            if s.phidot == 0.0 {
                break;
            }
            if s.phidot.signum() == sign_a {
                a = root;
            } else {
                b = root;
            }
            let mut next = root - s.phidot / s.phiddot;
            if !(next > a && next < b) {
                next = 0.5 * (a + b);
            }
            let done = (next - root).abs() <= 1e-15 * root.abs().max(1.0);
            root = next;
            if done {
                break;
            }
        }
        out.push((root, dir));
    }
    out
}

impl PhiTrajectory {
    fn hermite_at(&self, i: usize, t: f64) -> Option<ScaleState> {
        (i + 1 < self.times.len()).then(|| self.hermite(i, t))
    }
}

/// Root in `[t_i, t_{i+1}]` of the parabola through three neighbouring nodes.
fn quadratic_guess(t: &[f64], d: &[f64], i: usize) -> Option<f64> {
    let j = if i + 2 < t.len() {
        i
    } else if i >= 1 {
        i - 1
    } else {
        return None;
    };
    let (t0, t1, t2) = (t[j], t[j + 1], t[j + 2]);
    let (y0, y1, y2) = (d[j], d[j + 1], d[j + 2]);
    // Newton form y0 + c1 (x - t0) + c2 (x - t0)(x - t1)
    let c1 = (y1 - y0) / (t1 - t0);
    let c2 = ((y2 - y1) / (t2 - t1) - c1) / (t2 - t0);
    // in terms of u = x - t0: c2 u² + (c1 - c2 (t1 - t0)) u + y0 = 0
    let qa = c2;
    let qb = c1 - c2 * (t1 - t0);
    let qc = y0;
    let (lo, hi) = (t[i], t[i + 1]);
    let in_bracket = |u: f64| {
        let x = t0 + u;
        (x >= lo && x <= hi).then_some(x)
    };
    if qa.abs() < 1e-300 {
        return in_bracket(-qc / qb);
    }
    let disc = qb * qb - 4.0 * qa * qc;
    if disc < 0.0 {
        return None;
    }
    let q = -0.5 * (qb + qb.signum() * disc.sqrt());
    let roots = [q / qa, if q != 0.0 { qc / q } else { f64::NAN }];
    roots.into_iter().filter(|u| u.is_finite()).find_map(in_bracket)
}

/// Numerical period: the gap between successive same-direction zero
/// crossings of `φ'`, or twice the gap between opposite crossings when only
/// two are available.
pub fn detect_period(traj: &PhiTrajectory) -> Result<f64> {
    let crossings = velocity_crossings(traj);
    let no_period = KurthError::NoPeriodDetected { t_end: traj.t_end() };
    let (t0, dir0) = *crossings.first().ok_or(no_period.clone())?;
    if let Some((t1, _)) = crossings.iter().skip(1).find(|(_, d)| *d == dir0) {
        return Ok(t1 - t0);
    }
    match crossings.get(1) {
        Some((t1, _)) => Ok(2.0 * (t1 - t0)),
        None => Err(no_period),
    }
}
