//! Exact breathing solutions of the gravitational Vlasov–Poisson system built
//! on the Kurth steady state, identity checks for them, and a spherically
//! symmetric particle solver validated against them.
//!
//! # Modules
//!
//! - [`kurth`]: the steady distribution `Q_K`, its potential and gradients.
//! - [`phi`]: the scale-factor ODE, dense trajectories and periods.
//! - [`family`]: the time-periodic family `f_ε`, its Hamiltonian and residual checks.
//! - [`moments`]: velocity-space quadrature and radial field solves.
//! - [`ensemble`]: exact particle sampling and self-consistent evolution.
//! - [`stats`]: goodness-of-fit and convergence-order helpers.

// negated comparisons reject NaN along with out-of-range values
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod ensemble;
pub mod error;
pub mod family;
pub mod kurth;
pub mod moments;
pub mod phi;
pub mod quadrature;
pub mod stats;
pub mod vec3;

pub use error::{KurthError, Result};
pub use kurth::{PhaseVec, RadialState, SupportInfo};
pub use phi::{PhiTrajectory, ScaleState};
