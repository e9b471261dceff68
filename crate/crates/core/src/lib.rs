//! Numerical toolkit for second-order ODE initial- and boundary-value problems
//! with a time singularity in the drift coefficient.
//!
//! The crate covers the Lane-Emden polytropic family and a family of equations
//! of the form `x'' = s * a(t,x)/(t_s - t) * x' + g(t,x)` whose drift blows up
//! at a right endpoint `t_s`. It provides:
//!
//! - explicit one-step integrators (forward Euler, semi-implicit Euler, RK4)
//!   over uniform or singularity-adapted geometric grids ([`steppers`]),
//! - shooting reductions of two-point boundary value problems: linear chasing
//!   by superposition and nonlinear secant shooting ([`shooting`]),
//! - a registry of concrete benchmark problems with closed-form solution
//!   oracles where they exist ([`problems`]),
//! - error measurement, empirical convergence order, and executable discrete
//!   Gronwall-style error envelopes ([`analysis`]).
//!
//! All arithmetic is in `f64`; every operation is deterministic, so repeated
//! runs with identical inputs produce bit-identical results.

pub mod analysis;
pub mod ode;
pub mod problems;
pub mod shooting;
pub mod steppers;

pub use ode::{DriftProblem, DriftSign, LaneEmdenProblem, OdeError, SecondOrderOde, State, Trajectory};
pub use steppers::{IntegrationOutcome, StepMethod, StepSchedule, Truncation};
