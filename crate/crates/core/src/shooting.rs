//! Shooting reductions of two-point boundary value problems.
//!
//! Linear problems `x'' = p(t) x' + q(t) x + r(t)` are solved by chasing:
//! two auxiliary IVPs are integrated and superposed in closed form.
//! Nonlinear problems iterate on the missing initial slope with the secant
//! method applied to the boundary mismatch.

use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use crate::ode::{SecondOrderOde, State, Trajectory};
use crate::steppers::{integrate, StepMethod, StepSchedule, Truncation};

/// Time-dependent coefficient.
pub type CoefficientField = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Linear second-order ODE `x'' = p(t) x' + q(t) x + r(t)`.
pub struct LinearOde {
    p: CoefficientField,
    q: CoefficientField,
    r: CoefficientField,
    label: String,
}

impl LinearOde {
    pub fn new(
        label: impl Into<String>,
        p: CoefficientField,
        q: CoefficientField,
        r: CoefficientField,
    ) -> Self {
        LinearOde {
            p,
            q,
            r,
            label: label.into(),
        }
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn p(&self, t: f64) -> f64 {
        (self.p)(t)
    }

    pub fn q(&self, t: f64) -> f64 {
        (self.q)(t)
    }

    pub fn r(&self, t: f64) -> f64 {
        (self.r)(t)
    }
}

impl fmt::Debug for LinearOde {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LinearOde")
            .field("label", &self.label)
            .finish_non_exhaustive()
    }
}

impl SecondOrderOde for LinearOde {
    fn accel(&self, t: f64, x: f64, v: f64) -> Result<f64, crate::ode::OdeError> {
        Ok((self.p)(t) * v + (self.q)(t) * x + (self.r)(t))
    }
}

/// The same linear ODE with the inhomogeneous term dropped.
struct HomogeneousPart<'a>(&'a LinearOde);

impl SecondOrderOde for HomogeneousPart<'_> {
    fn accel(&self, t: f64, x: f64, v: f64) -> Result<f64, crate::ode::OdeError> {
        Ok((self.0.p)(t) * v + (self.0.q)(t) * x)
    }
}

/// Boundary condition at one end of the interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Boundary {
    /// Dirichlet: `x = value`.
    Value(f64),
    /// Neumann: `x' = value`.
    Derivative(f64),
}

/// Two-point boundary data for the shooting reduction.
pub struct BvpSpec<'a> {
    pub ode: &'a dyn SecondOrderOde,
    pub t_left: f64,
    pub t_right: f64,
    pub left: Boundary,
    pub right: Boundary,
}

impl<'a> BvpSpec<'a> {
    pub fn new(
        ode: &'a dyn SecondOrderOde,
        t_left: f64,
        t_right: f64,
        left: Boundary,
        right: Boundary,
    ) -> Result<Self, ShootError> {
        if !(t_left < t_right) {
            return Err(ShootError::BadInterval { t_left, t_right });
        }
        if let Some(ts) = ode.singular_point() {
            if t_right >= ts {
                return Err(ShootError::RightBoundaryPastSingularity {
                    t_right,
                    singular_point: ts,
                });
            }
        }
        Ok(BvpSpec {
            ode,
            t_left,
            t_right,
            left,
            right,
        })
    }

    /// Initial state for the IVP parameterized by the shooting unknown `s`.
    ///
    /// With a Dirichlet left condition `s` is the initial slope; with a
    /// Neumann left condition `s` is the initial position.
    fn initial_state(&self, s: f64) -> State {
        match self.left {
            Boundary::Value(alpha) => State::new(self.t_left, alpha, s),
            Boundary::Derivative(d) => State::new(self.t_left, s, d),
        }
    }

    fn mismatch(&self, end: State) -> f64 {
        match self.right {
            Boundary::Value(beta) => end.x - beta,
            Boundary::Derivative(beta) => end.v - beta,
        }
    }
}

/// Outcome of a shooting run.
#[derive(Debug)]
pub struct ShootResult {
    /// The shooting unknown that was accepted (initial slope for Dirichlet
    /// left data).
    pub slope: f64,
    pub trajectory: Trajectory,
    /// Boundary mismatch at the right endpoint on the returned trajectory.
    pub residual: f64,
    /// Number of boundary-residual evaluations performed.
    pub iterations: usize,
}

#[derive(Debug, Error)]
pub enum ShootError {
    #[error("boundary interval is empty: [{t_left}, {t_right}]")]
    BadInterval { t_left: f64, t_right: f64 },
    #[error("right boundary {t_right} is not left of the singular point {singular_point}")]
    RightBoundaryPastSingularity { t_right: f64, singular_point: f64 },
    #[error("trajectory escaped before reaching the right boundary: {0}")]
    Escaped(String),
    #[error("degenerate fundamental solution: |x2(b)| = {x2_at_b} below 1e-12")]
    DegenerateFundamentalSolution { x2_at_b: f64 },
    #[error("stalled secant: residual difference {denominator} below 1e-14 at iterate {slope}")]
    StalledSecant { denominator: f64, slope: f64 },
    #[error("no convergence after {max_iter} iterations; best |residual| = {residual}")]
    NoConvergence {
        max_iter: usize,
        residual: f64,
        best: Box<ShootResult>,
    },
    #[error("secant brackets must differ, got s0 = s1 = {0}")]
    EqualBrackets(f64),
    #[error("tolerance must be positive, got {0}")]
    NonPositiveTolerance(f64),
    #[error(transparent)]
    Run(#[from] crate::steppers::RunError),
}

fn integrate_to_end(
    ode: &dyn SecondOrderOde,
    s0: State,
    grid: &[f64],
    method: StepMethod,
) -> Result<Trajectory, ShootError> {
    let out = integrate(ode, s0, grid, method).map_err(crate::steppers::RunError::from)?;
    match out.truncation {
        None => Ok(out.trajectory),
        Some(Truncation::BlowUp { t }) => {
            Err(ShootError::Escaped(format!("blow-up at t = {t}")))
        }
        Some(t) => Err(ShootError::Escaped(t.message())),
    }
}

/// Boundary mismatch `x(b; s) - beta` of the IVP launched with shooting
/// unknown `s`, integrated numerically on the given schedule.
pub fn boundary_residual(
    bvp: &BvpSpec<'_>,
    s: f64,
    schedule: &StepSchedule,
    method: StepMethod,
) -> Result<f64, ShootError> {
    let grid = schedule
        .build_grid(bvp.t_left, bvp.ode.singular_point())
        .map_err(crate::steppers::RunError::from)?;
    let traj = integrate_to_end(bvp.ode, bvp.initial_state(s), &grid, method)?;
    Ok(bvp.mismatch(traj.last()))
}

/// Linear chasing: superposes the two auxiliary IVP solutions
/// `x1` (with `x1(a) = alpha`, `x1'(a) = 0`, full `r`) and
/// `x2` (with `x2(a) = 0`, `x2'(a) = 1`, `r` dropped) into
/// `x = x1 + c x2` with `c = (beta - x1(b)) / x2(b)`.
pub fn shoot_linear(
    ode: &LinearOde,
    t_left: f64,
    t_right: f64,
    alpha: f64,
    beta: f64,
    schedule: &StepSchedule,
    method: StepMethod,
) -> Result<ShootResult, ShootError> {
    if !(t_left < t_right) {
        return Err(ShootError::BadInterval { t_left, t_right });
    }
    let grid = schedule
        .build_grid(t_left, None)
        .map_err(crate::steppers::RunError::from)?;
    let x1 = integrate_to_end(ode, State::new(t_left, alpha, 0.0), &grid, method)?;
    let homogeneous = HomogeneousPart(ode);
    let x2 = integrate_to_end(&homogeneous, State::new(t_left, 0.0, 1.0), &grid, method)?;
    let x2_at_b = x2.last().x;
    if x2_at_b.abs() < 1e-12 {
        return Err(ShootError::DegenerateFundamentalSolution { x2_at_b });
    }
    let c = (beta - x1.last().x) / x2_at_b;
    let states: Vec<State> = x1
        .iter()
        .zip(x2.iter())
        .map(|(a, b)| State::new(a.t, a.x + c * b.x, a.v + c * b.v))
        .collect();
    let trajectory = Trajectory::new(states).expect("superposition preserves the grid");
    let residual = trajectory.last().x - beta;
    Ok(ShootResult {
        slope: c,
        trajectory,
        residual,
        iterations: 2,
    })
}

/// Nonlinear shooting: secant iteration on `s -> boundary_residual(s)`.
///
/// Stops when `|residual| <= tol`. Hitting `max_iter` or a near-zero secant
/// denominator is an error carrying the best iterate found so far.
pub fn shoot_secant(
    bvp: &BvpSpec<'_>,
    s0: f64,
    s1: f64,
    tol: f64,
    max_iter: usize,
    schedule: &StepSchedule,
    method: StepMethod,
) -> Result<ShootResult, ShootError> {
    if s0 == s1 {
        return Err(ShootError::EqualBrackets(s0));
    }
    if !(tol > 0.0) {
        return Err(ShootError::NonPositiveTolerance(tol));
    }
    let grid = schedule
        .build_grid(bvp.t_left, bvp.ode.singular_point())
        .map_err(crate::steppers::RunError::from)?;

    let eval = |s: f64| -> Result<(f64, Trajectory), ShootError> {
        let traj = integrate_to_end(bvp.ode, bvp.initial_state(s), &grid, method)?;
        let f = bvp.mismatch(traj.last());
        Ok((f, traj))
    };
    let mut evaluations = 0usize;

    let (f0, traj_prev) = eval(s0)?;
    evaluations += 1;
    let mut f_prev = f0;
    if f_prev.abs() <= tol {
        return Ok(ShootResult {
            slope: s0,
            trajectory: traj_prev,
            residual: f_prev,
            iterations: evaluations,
        });
    }
    let mut s_prev = s0;
    let (mut f_curr, mut traj_curr) = eval(s1)?;
    evaluations += 1;
    let mut s_curr = s1;

    let mut best = (s_curr, f_curr, traj_curr.clone());
    if f_prev.abs() < f_curr.abs() {
        best = (s_prev, f_prev, traj_prev);
    }

    while evaluations < max_iter {
        if f_curr.abs() <= tol {
            return Ok(ShootResult {
                slope: s_curr,
                trajectory: traj_curr,
                residual: f_curr,
                iterations: evaluations,
            });
        }
        let denominator = f_curr - f_prev;
        if denominator.abs() < 1e-14 {
            return Err(ShootError::StalledSecant {
                denominator,
                slope: s_curr,
            });
        }
        let s_next = s_curr - f_curr * (s_curr - s_prev) / denominator;
        s_prev = s_curr;
        f_prev = f_curr;
        let (f, traj) = eval(s_next)?;
        evaluations += 1;
        s_curr = s_next;
        f_curr = f;
        traj_curr = traj;
        if f_curr.abs() < best.1.abs() {
            best = (s_curr, f_curr, traj_curr.clone());
        }
    }
    if f_curr.abs() <= tol {
        return Ok(ShootResult {
            slope: s_curr,
            trajectory: traj_curr,
            residual: f_curr,
            iterations: evaluations,
        });
    }
    Err(ShootError::NoConvergence {
        max_iter,
        residual: best.1,
        best: Box::new(ShootResult {
            slope: best.0,
            trajectory: best.2,
            residual: best.1,
            iterations: evaluations,
        }),
    })
}
