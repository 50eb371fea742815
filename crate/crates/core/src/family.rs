//! The breathing family `f_ε(t) = Q_K ∘ Λ_ε(t)` with
//! `Λ_ε(t)(x, v) = (x/φ, φ v - φ' x)`, and residual checks of the identities
//! it satisfies.
//!
//! Every check is assembled from analytic pieces. Time derivatives of the
//! transformation use `φ''` from the ODE right-hand side, so the residuals
//! are limited by roundoff and by the accuracy of the stored trajectory.

use serde::{Deserialize, Serialize};

use crate::error::{KurthError, Result};
use crate::kurth::{self, PhaseVec, RadialState, KURTH_DENSITY};
use crate::phi::{self, PhiTrajectory, ScaleState};
use crate::vec3::{self, Vec3};

/// Pure algebra of the family at a fixed scale state.
impl ScaleState {
    /// `(r, p_r) ↦ (r/φ, φ p_r - φ' r)`.
    pub fn lambda_radial(&self, r: f64, p_r: f64) -> (f64, f64) {
        (r / self.phi, self.phi * p_r - self.phidot * r)
    }

    /// Inverse of [`ScaleState::lambda_radial`].
    pub fn lambda_radial_inverse(&self, big_r: f64, big_p: f64) -> (f64, f64) {
        let r = self.phi * big_r;
        (r, (big_p + self.phidot * r) / self.phi)
    }

    /// `(x, v) ↦ (x/φ, φ v - φ' x)`.
    pub fn lambda_cartesian(&self, p: &PhaseVec) -> PhaseVec {
        PhaseVec::new(
            vec3::scale(&p.x, 1.0 / self.phi),
            vec3::lincomb(&p.v, self.phi, &p.x, -self.phidot),
        )
    }

    /// Inverse of [`ScaleState::lambda_cartesian`].
    pub fn lambda_cartesian_inverse(&self, q: &PhaseVec) -> PhaseVec {
        let x = vec3::scale(&q.x, self.phi);
        let v = vec3::lincomb(&q.v, 1.0 / self.phi, &x, self.phidot / self.phi);
        PhaseVec::new(x, v)
    }

    /// Analytic `d/dt (R, P)` at fixed `(r, p_r)`.
    pub fn lambda_time_derivative(&self, r: f64, p_r: f64) -> (f64, f64) {
        (
            -r * self.phidot / (self.phi * self.phi),
            self.phidot * p_r - self.phiddot * r,
        )
    }

    /// `det ∂(R, P)/∂(r, p_r) = ∂_r R ∂_p P - ∂_p R ∂_r P`.
    pub fn jacobian_det(&self) -> f64 {
        let (dr_r, dp_r) = (1.0 / self.phi, 0.0);
        let (dr_p, dp_p) = (-self.phidot, self.phi);
        dr_r * dp_p - dp_r * dr_p
    }

    /// Density `(3/4π) φ⁻³` inside `r < φ`.
    pub fn rho(&self, r: f64) -> f64 {
        if r < self.phi {
            KURTH_DENSITY / self.phi.powi(3)
        } else {
            0.0
        }
    }

    /// `φ⁻¹ U_K(r/φ)`.
    pub fn potential(&self, r: f64) -> f64 {
        kurth::potential(r / self.phi) / self.phi
    }

    /// `∂_r U_ε`: `r/φ³` inside the support and `1/r²` outside.
    pub fn force(&self, r: f64) -> f64 {
        if r <= self.phi {
            r / self.phi.powi(3)
        } else {
            1.0 / (r * r)
        }
    }

    /// Hamiltonian `-(φ'/φ) r p - ½(φ'² - φ φ'') r²` and its gradient.
    pub fn hamiltonian(&self, r: f64, p_r: f64) -> Hamiltonian {
        let rate = self.phidot / self.phi;
        let stiff = self.phidot * self.phidot - self.phi * self.phiddot;
        Hamiltonian {
            value: -rate * r * p_r - 0.5 * stiff * r * r,
            d_r: -rate * p_r - stiff * r,
            d_p: -rate * r,
        }
    }
}

/// Value and gradient of the time-dependent Hamiltonian.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hamiltonian {
    pub value: f64,
    pub d_r: f64,
    pub d_p: f64,
}

/// Vlasov residual `∂_t f + v·∇ₓf - ∇ₓU·∇ᵥf` with its three terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VlasovResidual {
    pub terms: [f64; 3],
    pub raw: f64,
    /// `|raw|` divided by the largest term magnitude (0 when all vanish).
    pub relative: f64,
}

impl VlasovResidual {
    fn from_terms(terms: [f64; 3]) -> Self {
        let raw = terms.iter().sum::<f64>();
        let scale = terms.iter().fold(0.0f64, |m, t| m.max(t.abs()));
        Self {
            terms,
            raw,
            relative: if scale > 0.0 { raw.abs() / scale } else { 0.0 },
        }
    }
}

/// The family `f_ε` driven by a stored scale-factor trajectory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Family {
    traj: PhiTrajectory,
}

impl Family {
    pub fn new(traj: PhiTrajectory) -> Self {
        Self { traj }
    }

    /// The `α = 1` family for `ε`, integrated on `[0, t_end]`.
    pub fn kurth(epsilon: f64, t_end: f64, tol: f64) -> Result<Self> {
        Ok(Self::new(phi::integrate_phi(1.0, epsilon, t_end, tol)?))
    }

    /// The `α = 1` family over one full period (plus a small margin).
    pub fn kurth_one_period(epsilon: f64, tol: f64) -> Result<Self> {
        let t = phi::period(epsilon)?;
        Self::kurth(epsilon, 1.01 * t, tol)
    }

    pub fn trajectory(&self) -> &PhiTrajectory {
        &self.traj
    }

    pub fn epsilon(&self) -> f64 {
        self.traj.epsilon
    }

    pub fn alpha(&self) -> f64 {
        self.traj.alpha
    }

    pub fn t_end(&self) -> f64 {
        self.traj.t_end()
    }

    pub fn scale(&self, t: f64) -> Result<ScaleState> {
        self.traj.at(t)
    }

    pub fn lambda_radial(&self, t: f64, s: &RadialState) -> Result<RadialState> {
        let (r, p_r) = self.scale(t)?.lambda_radial(s.r, s.p_r);
        Ok(RadialState { r, p_r, beta: s.beta })
    }

    pub fn lambda_map(&self, t: f64, p: &PhaseVec) -> Result<PhaseVec> {
        Ok(self.scale(t)?.lambda_cartesian(p))
    }

    /// `f_ε(t, x, v) = Q_K(Λ_ε(t)(x, v))`.
    pub fn eval_f(&self, t: f64, p: &PhaseVec) -> Result<f64> {
        Ok(kurth::eval_q(&self.lambda_map(t, p)?))
    }

    /// `f_ε` through the support function `F(r/φ, φ p_r - φ' r, beta)`.
    pub fn eval_f_radial(&self, t: f64, s: &RadialState) -> Result<f64> {
        kurth::eval_q_radial(&self.lambda_radial(t, s)?)
    }

    pub fn rho(&self, t: f64, r: f64) -> Result<f64> {
        Ok(self.scale(t)?.rho(r))
    }

    pub fn potential(&self, t: f64, r: f64) -> Result<f64> {
        Ok(self.scale(t)?.potential(r))
    }

    pub fn force(&self, t: f64, r: f64) -> Result<f64> {
        Ok(self.scale(t)?.force(r))
    }

    pub fn hamiltonian(&self, t: f64, r: f64, p_r: f64) -> Result<Hamiltonian> {
        Ok(self.scale(t)?.hamiltonian(r, p_r))
    }

    pub fn jacobian_det(&self, t: f64) -> Result<f64> {
        Ok(self.scale(t)?.jacobian_det())
    }

    /// `d/dt (R, P) - J ∇H(t, R, P)` for `J = [[0, 1], [-1, 0]]`.
    pub fn hamiltonian_flow_residual(&self, t: f64, r: f64, p_r: f64) -> Result<[f64; 2]> {
        let s = self.scale(t)?;
        let (big_r, big_p) = s.lambda_radial(r, p_r);
        let (dr, dp) = s.lambda_time_derivative(r, p_r);
        let h = s.hamiltonian(big_r, big_p);
        Ok([dr - h.d_p, dp + h.d_r])
    }

    /// Analytic Vlasov residual of `f_ε` at a point whose image under
    /// `Λ_ε(t)` lies strictly inside the support of `Q_K`.
    pub fn vlasov_residual(&self, t: f64, p: &PhaseVec) -> Result<VlasovResidual> {
        let s = self.scale(t)?;
        let image = s.lambda_cartesian(p);
        let (gx, gv) = kurth::grad_q(&image)?;
        let (phi, dphi, ddphi) = (s.phi, s.phidot, s.phiddot);

        let dt_f = -dphi / (phi * phi) * vec3::dot(&p.x, &gx) - ddphi * vec3::dot(&p.x, &gv)
            + dphi * vec3::dot(&p.v, &gv);
        let grad_x_f = vec3::lincomb(&gx, 1.0 / phi, &gv, -dphi);
        let grad_v_f = vec3::scale(&gv, phi);
        let force = self.force_vector(&s, &p.x);

        Ok(VlasovResidual::from_terms([
            dt_f,
            vec3::dot(&p.v, &grad_x_f),
            -vec3::dot(&force, &grad_v_f),
        ]))
    }

    /// The same residual with every derivative replaced by a central
    /// difference of [`Family::eval_f`] with step `h`.
    pub fn vlasov_residual_fd(&self, t: f64, p: &PhaseVec, h: f64) -> Result<VlasovResidual> {
        let dt_f = (self.eval_f(t + h, p)? - self.eval_f(t - h, p)?) / (2.0 * h);
        let mut grad_x = [0.0; 3];
        let mut grad_v = [0.0; 3];
        for k in 0..3 {
            let (mut hi, mut lo) = (*p, *p);
            hi.x[k] += h;
            lo.x[k] -= h;
            grad_x[k] = (self.eval_f(t, &hi)? - self.eval_f(t, &lo)?) / (2.0 * h);
            let (mut hi, mut lo) = (*p, *p);
            hi.v[k] += h;
            lo.v[k] -= h;
            grad_v[k] = (self.eval_f(t, &hi)? - self.eval_f(t, &lo)?) / (2.0 * h);
        }
        let force = self.force_vector(&self.scale(t)?, &p.x);
        Ok(VlasovResidual::from_terms([
            dt_f,
            vec3::dot(&p.v, &grad_x),
            -vec3::dot(&force, &grad_v),
        ]))
    }

    fn force_vector(&self, s: &ScaleState, x: &Vec3) -> Vec3 {
        let r = vec3::norm(x);
        if r == 0.0 {
            return [0.0; 3];
        }
        vec3::scale(x, s.force(r) / r)
    }

    /// `|∂_r U_ε(t, r) - (R²/r²) U_K'(R)|` with `R = r/φ(t)`.
    pub fn umd_check(&self, t: f64, r: f64) -> Result<f64> {
        let s = self.scale(t)?;
        Ok(umd_residual(s.force(r), s.phi, r))
    }

    /// [`Family::umd_check`] with `R` computed from a perturbed scale factor
    /// `phi_scale * φ(t)`; used to confirm the check is sensitive.
    pub fn umd_check_with_scale(&self, t: f64, r: f64, phi_scale: f64) -> Result<f64> {
        let s = self.scale(t)?;
        Ok(umd_residual(s.force(r), phi_scale * s.phi, r))
    }
}

fn umd_residual(force: f64, phi: f64, r: f64) -> f64 {
    let big_r = r / phi;
    (force - big_r * big_r / (r * r) * kurth::potential_derivative(big_r)).abs()
}

/// First partial derivatives of a scalar field of `(t, r, p_r)`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Partials {
    pub dt: f64,
    pub dr: f64,
    pub dp: f64,
}

/// Candidate transformation `(R(t, r, p_r), P(t, r, p_r))` with `B = beta`.
///
/// Derivatives default to central differences with step
/// `1e-6 * max(1, |arg|)`; implementations with closed forms override them.
pub trait TransformFields {
    fn r_field(&self, t: f64, r: f64, p_r: f64) -> Result<f64>;
    fn p_field(&self, t: f64, r: f64, p_r: f64) -> Result<f64>;

    fn r_partials(&self, t: f64, r: f64, p_r: f64) -> Result<Partials> {
        central_partials(|t, r, p| self.r_field(t, r, p), t, r, p_r)
    }

    fn p_partials(&self, t: f64, r: f64, p_r: f64) -> Result<Partials> {
        central_partials(|t, r, p| self.p_field(t, r, p), t, r, p_r)
    }
}

fn fd_step(x: f64) -> f64 {
    1e-6 * x.abs().max(1.0)
}

fn central_partials<F>(f: F, t: f64, r: f64, p: f64) -> Result<Partials>
where
    F: Fn(f64, f64, f64) -> Result<f64>,
{
    let ht = fd_step(t);
    // one-sided second-order stencil at the start of the time range
    let dt = if t - ht < 0.0 {
        (-3.0 * f(t, r, p)? + 4.0 * f(t + ht, r, p)? - f(t + 2.0 * ht, r, p)?) / (2.0 * ht)
    } else {
        (f(t + ht, r, p)? - f(t - ht, r, p)?) / (2.0 * ht)
    };
    let hr = fd_step(r);
    let hp = fd_step(p);
    Ok(Partials {
        dt,
        dr: (f(t, r + hr, p)? - f(t, r - hr, p)?) / (2.0 * hr),
        dp: (f(t, r, p + hp)? - f(t, r, p - hp)?) / (2.0 * hp),
    })
}

/// The exact transformation `R = r/φ`, `P = φ p_r - φ' r` with analytic
/// derivatives.
#[derive(Debug, Clone, Copy)]
pub struct KurthFields<'a> {
    pub family: &'a Family,
}

impl TransformFields for KurthFields<'_> {
    fn r_field(&self, t: f64, r: f64, p_r: f64) -> Result<f64> {
        Ok(self.family.scale(t)?.lambda_radial(r, p_r).0)
    }

    fn p_field(&self, t: f64, r: f64, p_r: f64) -> Result<f64> {
        Ok(self.family.scale(t)?.lambda_radial(r, p_r).1)
    }

    fn r_partials(&self, t: f64, r: f64, _p_r: f64) -> Result<Partials> {
        let s = self.family.scale(t)?;
        Ok(Partials {
            dt: -r * s.phidot / (s.phi * s.phi),
            dr: 1.0 / s.phi,
            dp: 0.0,
        })
    }

    fn p_partials(&self, t: f64, r: f64, p_r: f64) -> Result<Partials> {
        let s = self.family.scale(t)?;
        Ok(Partials {
            dt: s.phidot * p_r - s.phiddot * r,
            dr: -s.phidot,
            dp: s.phi,
        })
    }
}

/// `R̃ = r/φ + amplitude·r²` with the exact `P`; derivatives by finite
/// differences. Used to show that the reduced system rejects deformations.
#[derive(Debug, Clone, Copy)]
pub struct PerturbedFields<'a> {
    pub family: &'a Family,
    pub amplitude: f64,
}

impl TransformFields for PerturbedFields<'_> {
    fn r_field(&self, t: f64, r: f64, p_r: f64) -> Result<f64> {
        Ok(self.family.scale(t)?.lambda_radial(r, p_r).0 + self.amplitude * r * r)
    }

    fn p_field(&self, t: f64, r: f64, p_r: f64) -> Result<f64> {
        Ok(self.family.scale(t)?.lambda_radial(r, p_r).1)
    }
}

/// Source of `∂_r U_f(t, r)` in the reduced system.
#[derive(Debug, Clone, Copy)]
pub enum ForceModel<'a> {
    /// The exact field of `f_ε`.
    Family(&'a Family),
    /// `(R²/r²) U_K'(R)` built from the candidate `R`.
    Transformed,
}

/// Coefficients of `beta⁰`, `beta¹`, `beta²` in the reduced Vlasov equation,
/// and their combination at the supplied `beta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnsatzResidual {
    pub beta0: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub combined: f64,
}

impl AnsatzResidual {
    pub fn max_abs(&self) -> f64 {
        self.beta0.abs().max(self.beta1.abs()).max(self.beta2.abs())
    }
}

/// Evaluates the coefficient equations of the reduced Vlasov equation for a
/// candidate transformation, with the Kurth potential as the steady state.
/// Meaningful on the support, `R(t, r) <= 1`.
pub fn ansatz_residual<T: TransformFields + ?Sized>(
    fields: &T,
    force: ForceModel<'_>,
    t: f64,
    r: f64,
    p_r: f64,
    beta: f64,
) -> Result<AnsatzResidual> {
    if !(r > 0.0) {
        return Err(KurthError::ZeroRadius);
    }
    let big_r = fields.r_field(t, r, p_r)?;
    let big_p = fields.p_field(t, r, p_r)?;
    let dr = fields.r_partials(t, r, p_r)?;
    let dp = fields.p_partials(t, r, p_r)?;
    let u_prime = kurth::potential_derivative(big_r);
    let field_force = match force {
        ForceModel::Family(family) => family.force(t, r)?,
        ForceModel::Transformed => big_r * big_r / (r * r) * u_prime,
    };
    let r3 = r * r * r;
    let big_r3 = big_r * big_r * big_r;

    let transport_r = dr.dt + p_r * dr.dr - field_force * dr.dp;
    let transport_p = dp.dt + p_r * dp.dr - field_force * dp.dp;

    let beta0 = big_p * transport_p + u_prime * transport_r;
    let beta1 = big_p * dp.dp / r3 + u_prime * dr.dp / r3 - transport_r / big_r3;
    let beta2 = dr.dp / (r3 * big_r3);
    Ok(AnsatzResidual {
        beta0,
        beta1,
        beta2,
        combined: beta0 + beta * beta1 - beta * beta * beta2,
    })
}

/// `P` rebuilt from `R` alone:
/// `p/(2 ∂_r R) + ∂_r R (r³/R³)(∂_t R + ½ p ∂_r R)`.
pub fn reconstruct_p<T: TransformFields + ?Sized>(fields: &T, t: f64, r: f64, p_r: f64) -> Result<f64> {
    let big_r = fields.r_field(t, r, p_r)?;
    let d = fields.r_partials(t, r, p_r)?;
    let ratio = (r / big_r).powi(3);
    Ok(p_r / (2.0 * d.dr) + d.dr * ratio * (d.dt + 0.5 * p_r * d.dr))
}

/// Separation constant `(2ȧ² - a ä) / (a⁵ (a - 1))`.
pub fn separation_constant(a: f64, adot: f64, addot: f64) -> Result<f64> {
    if a == 0.0 || a == 1.0 {
        return Err(KurthError::Singular(format!(
            "separation constant undefined at a = {a}"
        )));
    }
    Ok((2.0 * adot * adot - a * addot) / (a.powi(5) * (a - 1.0)))
}

/// [`separation_constant`] for `a = 1/φ` taken from a trajectory at `t`.
pub fn separation_constant_at(traj: &PhiTrajectory, t: f64) -> Result<f64> {
    let s = traj.at(t)?;
    let a = 1.0 / s.phi;
    let adot = -s.phidot * a * a;
    let addot = -s.phiddot * a * a + 2.0 * s.phidot * s.phidot * a * a * a;
    separation_constant(a, adot, addot)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const TOL: f64 = 1e-10;

    fn family(eps: f64) -> Family {
        Family::kurth_one_period(eps, TOL).unwrap()
    }

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(7)
    }

    /// A point whose image under Λ lies inside the support with margin.
    fn interior_point(f: &Family, rng: &mut ChaCha8Rng) -> (f64, PhaseVec) {
        loop {
            let t = rng.random::<f64>() * f.t_end();
            let y: Vec3 = std::array::from_fn(|_| rng.random_range(-0.9..0.9));
            let w: Vec3 = std::array::from_fn(|_| rng.random_range(-0.9..0.9));
            let image = PhaseVec::new(y, w);
            let supp = 1.0 - vec3::norm2(&y) - vec3::norm2(&w) + image.angular_momentum_sq();
            if supp > 0.02 && image.angular_momentum_sq() < 0.98 {
                let s = f.scale(t).unwrap();
                return (t, s.lambda_cartesian_inverse(&image));
            }
        }
    }

    #[test]
    fn lambda_at_t0_and_identity() {
        let f = family(0.6);
        let s = f.lambda_radial(0.0, &RadialState::new(0.5, 0.2, 0.1).unwrap()).unwrap();
        assert_relative_eq!(s.r, 0.5, epsilon = 1e-15);
        assert_relative_eq!(s.p_r, 0.2 - 0.6 * 0.5, epsilon = 1e-15);
        assert_eq!(s.beta, 0.1);
        let steady = family(0.0);
        let p = PhaseVec::new([0.1, 0.2, 0.3], [-0.2, 0.1, 0.4]);
        assert_eq!(steady.lambda_map(3.0, &p).unwrap(), p);
    }

    #[test]
    fn lambda_inverse_roundtrip() {
        let f = family(0.3);
        let s = f.scale(2.0).unwrap();
        let p = PhaseVec::new([0.1, -0.4, 0.2], [0.3, 0.1, -0.5]);
        let back = s.lambda_cartesian_inverse(&s.lambda_cartesian(&p));
        for k in 0..3 {
            assert_relative_eq!(back.x[k], p.x[k], epsilon = 1e-14);
            assert_relative_eq!(back.v[k], p.v[k], epsilon = 1e-14);
        }
        let (r, pr) = s.lambda_radial_inverse(0.4, -0.1);
        let (rr, pp) = s.lambda_radial(r, pr);
        assert_relative_eq!(rr, 0.4, epsilon = 1e-15);
        assert_relative_eq!(pp, -0.1, epsilon = 1e-15);
    }

    #[test]
    fn jacobian_is_one() {
        let f = family(0.6);
        let mut rng = rng();
        for _ in 0..200 {
            let t = rng.random::<f64>() * f.t_end();
            assert!((f.jacobian_det(t).unwrap() - 1.0).abs() < 1e-12);
            // finite-difference Jacobian of the radial map
            let (r, p) = (rng.random_range(0.1..1.0), rng.random_range(-1.0..1.0));
            let s = f.scale(t).unwrap();
            let h = 1e-6;
            let (a, b) = (s.lambda_radial(r + h, p), s.lambda_radial(r - h, p));
            let (c, d) = (s.lambda_radial(r, p + h), s.lambda_radial(r, p - h));
            let det = (a.0 - b.0) / (2.0 * h) * (c.1 - d.1) / (2.0 * h)
                - (c.0 - d.0) / (2.0 * h) * (a.1 - b.1) / (2.0 * h);
            assert!((det - 1.0).abs() < 1e-8);
        }
    }

    #[test]
    fn f_matches_radial_form_and_support() {
        let f = family(0.6);
        let mut rng = rng();
        for _ in 0..500 {
            let t = rng.random::<f64>() * f.t_end();
            let p = PhaseVec::new(
                std::array::from_fn(|_| rng.random_range(-1.5..1.5)),
                std::array::from_fn(|_| rng.random_range(-1.5..1.5)),
            );
            let cart = f.eval_f(t, &p).unwrap();
            let radial = f.eval_f_radial(t, &kurth::to_radial(&p).unwrap()).unwrap();
            assert!((cart - radial).abs() <= 1e-9 * cart.max(1.0));
            if vec3::norm(&p.x) >= f.scale(t).unwrap().phi {
                assert_eq!(cart, 0.0);
            }
        }
        // ε = 0 reduces to Q_K
        let steady = family(0.0);
        let p = PhaseVec::new([0.2, 0.1, 0.0], [0.1, -0.3, 0.2]);
        assert_eq!(steady.eval_f(0.0, &p).unwrap(), kurth::eval_q(&p));
    }

    #[test]
    fn f_is_periodic() {
        let eps = 0.6;
        let f = family(eps);
        let t = phi::period(eps).unwrap();
        let mut rng = rng();
        for _ in 0..100 {
            let (_, p) = interior_point(&f, &mut rng);
            let a = f.lambda_map(0.0, &p).unwrap();
            let b = f.lambda_map(t, &p).unwrap();
            for k in 0..3 {
                assert!((a.x[k] - b.x[k]).abs() < 1e-8 && (a.v[k] - b.v[k]).abs() < 1e-8);
            }
            let (qa, qb) = (kurth::eval_q(&a), kurth::eval_q(&b));
            assert!((qa - qb).abs() <= 1e-6 * qa, "{qa} vs {qb}");
        }
    }

    #[test]
    fn f_is_rotation_invariant() {
        let f = family(0.3);
        let mut rng = rng();
        for _ in 0..100 {
            let (t, p) = interior_point(&f, &mut rng);
            // rotation about a random axis by Rodrigues' formula
            let axis: Vec3 = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
            let axis = vec3::scale(&axis, 1.0 / vec3::norm(&axis));
            let angle: f64 = rng.random_range(0.0..6.0);
            let rot = |a: &Vec3| {
                let c = angle.cos();
                let k = vec3::cross(&axis, a);
                let d = vec3::dot(&axis, a) * (1.0 - c);
                std::array::from_fn(|i| a[i] * c + k[i] * angle.sin() + axis[i] * d)
            };
            let q = PhaseVec::new(rot(&p.x), rot(&p.v));
            let a = f.eval_f(t, &p).unwrap();
            let b = f.eval_f(t, &q).unwrap();
            assert!((a - b).abs() <= 1e-12 * a.max(1.0));
        }
    }

    #[test]
    fn field_quantities() {
        let steady = family(0.0);
        for r in [0.0, 0.3, 0.99, 1.0, 1.5] {
            assert_eq!(steady.rho(1.0, r).unwrap(), if r < 1.0 { KURTH_DENSITY } else { 0.0 });
            assert_eq!(steady.potential(1.0, r).unwrap(), kurth::potential(r));
            assert_eq!(steady.force(1.0, r).unwrap(), kurth::potential_derivative(r));
        }
        let f = family(0.6);
        let s = f.scale(3.0).unwrap();
        assert_relative_eq!(s.force(s.phi), 1.0 / (s.phi * s.phi), epsilon = 1e-14);
        assert_relative_eq!(s.force(s.phi * (1.0 + 1e-12)), 1.0 / (s.phi * s.phi), epsilon = 1e-10);
        // potential derivative matches the force by finite differences
        for r in [0.2, 0.9 * s.phi, 1.3 * s.phi] {
            let h = 1e-6;
            let fd = (s.potential(r + h) - s.potential(r - h)) / (2.0 * h);
            assert_relative_eq!(fd, s.force(r), epsilon = 1e-8);
        }
    }

    #[test]
    fn hamiltonian_examples() {
        let steady = family(0.0);
        let h = steady.hamiltonian(2.0, 0.4, 0.3).unwrap();
        assert_eq!((h.value, h.d_r, h.d_p), (0.0, 0.0, 0.0));
        let eps = 0.6;
        let f = family(eps);
        let (r, p) = (0.7, -0.2);
        let h0 = f.hamiltonian(0.0, r, p).unwrap();
        assert_relative_eq!(h0.value, -eps * r * p - 0.5 * eps * eps * r * r, epsilon = 1e-15);
        let s = f.scale(4.0).unwrap();
        let step = 1e-6;
        let h = s.hamiltonian(r, p);
        let fd_r = (s.hamiltonian(r + step, p).value - s.hamiltonian(r - step, p).value) / (2.0 * step);
        let fd_p = (s.hamiltonian(r, p + step).value - s.hamiltonian(r, p - step).value) / (2.0 * step);
        assert_relative_eq!(h.d_r, fd_r, max_relative = 1e-6);
        assert_relative_eq!(h.d_p, fd_p, max_relative = 1e-6);
    }

    #[test]
    fn hamiltonian_flow() {
        let f = family(0.6);
        let mut rng = rng();
        for _ in 0..100 {
            let t = rng.random_range(0.01..f.t_end() - 0.01);
            let (r, p) = (rng.random_range(0.0..1.5), rng.random_range(-1.5..1.5));
            let res = f.hamiltonian_flow_residual(t, r, p).unwrap();
            assert!(res[0].abs().max(res[1].abs()) < 1e-10);
            // analytic time derivative against central differences of the map
            let h = 1e-5;
            let (a, b) = (f.scale(t + h).unwrap(), f.scale(t - h).unwrap());
            let (ra, pa) = a.lambda_radial(r, p);
            let (rb, pb) = b.lambda_radial(r, p);
            let (dr, dp) = f.scale(t).unwrap().lambda_time_derivative(r, p);
            assert!(((ra - rb) / (2.0 * h) - dr).abs() < 1e-6 * dr.abs().max(1.0));
            assert!(((pa - pb) / (2.0 * h) - dp).abs() < 1e-6 * dp.abs().max(1.0));
        }
        let steady = family(0.0);
        assert_eq!(steady.hamiltonian_flow_residual(1.0, 0.5, 0.3).unwrap(), [0.0, 0.0]);
    }

    #[test]
    fn vlasov_residual_vanishes() {
        for eps in [0.3, 0.6] {
            let f = family(eps);
            let mut rng = rng();
            for _ in 0..1000 {
                let (t, p) = interior_point(&f, &mut rng);
                let res = f.vlasov_residual(t, &p).unwrap();
                assert!(res.relative < 1e-9, "eps={eps} t={t}: {res:?}");
            }
        }
        let steady = family(0.0);
        let mut rng = rng();
        for _ in 0..100 {
            let (t, p) = interior_point(&steady, &mut rng);
            assert!(steady.vlasov_residual(t, &p).unwrap().relative < 1e-12);
        }
    }

    #[test]
    fn vlasov_residual_rejects_outside_points() {
        let f = family(0.3);
        let far = PhaseVec::new([3.0, 0.0, 0.0], [0.0; 3]);
        assert!(matches!(f.vlasov_residual(1.0, &far), Err(KurthError::OutsideSupport { .. })));
    }

    #[test]
    fn vlasov_residual_matches_finite_differences() {
        let f = family(0.6);
        let mut rng = rng();
        for _ in 0..50 {
            let (t, p) = interior_point(&f, &mut rng);
            if t < 1e-3 || t > f.t_end() - 1e-3 {
                continue;
            }
            let analytic = f.vlasov_residual(t, &p).unwrap();
            let fd = f.vlasov_residual_fd(t, &p, 1e-5).unwrap();
            let scale = analytic.terms.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            for k in 0..3 {
                assert!((analytic.terms[k] - fd.terms[k]).abs() < 1e-5 * scale);
            }
            assert!((analytic.raw - fd.raw).abs() < 1e-5 * scale);
        }
    }

    #[test]
    fn vlasov_residual_detects_wrong_coupling() {
        // α = 2 changes φ'' but not the unit-mass force: no longer a solution
        let traj = phi::integrate_phi(2.0, 0.3, 5.0, TOL).unwrap();
        let f = Family::new(traj);
        let mut rng = rng();
        let worst = (0..50)
            .map(|_| f.vlasov_residual(rng.random_range(0.5..4.5), &PhaseVec::new([0.3, 0.1, 0.0], [0.1, 0.2, -0.1])))
            .filter_map(|r| r.ok())
            .fold(0.0f64, |m, r| m.max(r.relative));
        assert!(worst > 1e-3);
    }

    #[test]
    fn ansatz_residuals() {
        let f = family(0.6);
        let exact = KurthFields { family: &f };
        let perturbed = PerturbedFields { family: &f, amplitude: 0.01 };
        let mut rng = rng();
        let mut max_perturbed = 0.0f64;
        for _ in 0..200 {
            let t = rng.random_range(0.01..f.t_end() - 0.01);
            let phi = f.scale(t).unwrap().phi;
            let r = rng.random_range(0.05..0.95) * phi;
            let p = rng.random_range(-1.0..1.0);
            let beta = rng.random_range(0.0..0.5);
            for model in [ForceModel::Family(&f), ForceModel::Transformed] {
                let res = ansatz_residual(&exact, model, t, r, p, beta).unwrap();
                assert!(res.max_abs() < 1e-9, "{res:?}");
                assert!(res.combined.abs() < 1e-9);
            }
            let res = ansatz_residual(&perturbed, ForceModel::Family(&f), t, r, p, beta).unwrap();
            max_perturbed = max_perturbed.max(res.max_abs());
        }
        assert!(max_perturbed > 1e-4, "{max_perturbed}");

        let steady = family(0.0);
        let res = ansatz_residual(&KurthFields { family: &steady }, ForceModel::Family(&steady), 1.0, 0.5, 0.2, 0.1)
            .unwrap();
        assert_eq!(res.beta1, 0.0);
        assert_eq!(res.beta2, 0.0);
        assert!(res.beta0.abs() < 1e-15);
    }

    #[test]
    fn default_partials_match_analytic() {
        struct Numeric<'a>(KurthFields<'a>);
        impl TransformFields for Numeric<'_> {
            fn r_field(&self, t: f64, r: f64, p: f64) -> Result<f64> {
                self.0.r_field(t, r, p)
            }
            fn p_field(&self, t: f64, r: f64, p: f64) -> Result<f64> {
                self.0.p_field(t, r, p)
            }
        }
        let f = family(0.3);
        let exact = KurthFields { family: &f };
        let numeric = Numeric(exact);
        for t in [0.0, 1.0, 5.0] {
            let a = exact.p_partials(t, 0.4, 0.2).unwrap();
            let b = numeric.p_partials(t, 0.4, 0.2).unwrap();
            assert!((a.dt - b.dt).abs() < 1e-6 && (a.dr - b.dr).abs() < 1e-6 && (a.dp - b.dp).abs() < 1e-6);
        }
    }

    #[test]
    fn p_reconstructed_from_r() {
        let f = family(0.6);
        let fields = KurthFields { family: &f };
        let mut rng = rng();
        for _ in 0..100 {
            let t = rng.random::<f64>() * f.t_end();
            let (r, p) = (rng.random_range(0.05..1.5), rng.random_range(-1.5..1.5));
            let rebuilt = reconstruct_p(&fields, t, r, p).unwrap();
            let direct = fields.p_field(t, r, p).unwrap();
            assert!((rebuilt - direct).abs() < 1e-10);
        }
    }

    #[test]
    fn separation_constant_recovers_alpha() {
        for alpha in [0.5, 1.0, 2.0] {
            let traj = phi::integrate_phi(alpha, 0.3, 20.0, TOL).unwrap();
            let mut checked = 0;
            for k in 1..200 {
                let t = 20.0 * k as f64 / 200.0;
                if (traj.at(t).unwrap().phi - 1.0).abs() < 0.05 {
                    continue;
                }
                let got = separation_constant_at(&traj, t).unwrap();
                assert_relative_eq!(got, alpha, max_relative = 1e-8);
                checked += 1;
            }
            assert!(checked > 50);
        }
        assert!(separation_constant(1.0, 0.2, 0.1).is_err());
        assert!(separation_constant(0.0, 0.2, 0.1).is_err());
    }

    #[test]
    fn separation_constant_with_differenced_acceleration() {
        // ä from central differences of the dense ȧ instead of the ODE
        let traj = phi::integrate_phi(1.0, 0.6, 10.0, TOL).unwrap();
        let adot_at = |t: f64| {
            let s = traj.at(t).unwrap();
            -s.phidot / (s.phi * s.phi)
        };
        for t in [1.0, 2.5, 4.0, 7.0] {
            let s = traj.at(t).unwrap();
            let h = 1e-4;
            let addot = (adot_at(t + h) - adot_at(t - h)) / (2.0 * h);
            let got = separation_constant(1.0 / s.phi, adot_at(t), addot).unwrap();
            assert_relative_eq!(got, 1.0, max_relative = 1e-5);
        }
    }

    #[test]
    fn umd_identity() {
        let f = family(0.6);
        let mut rng = rng();
        for _ in 0..200 {
            let t = rng.random::<f64>() * f.t_end();
            let phi = f.scale(t).unwrap().phi;
            let inside = rng.random_range(0.01..1.0) * phi;
            let outside = rng.random_range(1.0..4.0) * phi;
            assert!(f.umd_check(t, inside).unwrap() < 1e-12);
            assert!(f.umd_check(t, outside).unwrap() < 1e-12);
            let shifted = f.umd_check_with_scale(t, 0.5 * phi, 1.01).unwrap();
            assert!(shifted > 1e-4, "{shifted}");
        }
    }
}
