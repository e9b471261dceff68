//! Single-step integrators and step-size schedules.
//!
//! Two grid families are supported: an arithmetic grid `t_n = t_0 + n h` and
//! a singularity-adapted geometric grid obeying
//! `t_{n+1} = t_n + h_hat (t_s - t_{n+1})`, which keeps the relative step
//! `h_{n+1} / (t_s - t_{n+1})` fixed at `h_hat` and shrinks steps in
//! proportion to the distance from the singular point `t_s`.

use thiserror::Error;

use crate::ode::{OdeError, SecondOrderOde, State, Trajectory};

/// Step-size schedule for a run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepSchedule {
    /// Fixed step `h` from the start up to `end`.
    Uniform { h: f64, end: f64 },
    /// Geometric grid with relative step `h_hat`, stopping at the first node
    /// within `delta * (t_s - t_0)` of the singular point.
    Geometric { h_hat: f64, delta: f64 },
}

#[derive(Debug, Error)]
pub enum ScheduleError {
    #[error("uniform schedule requires h > 0 and end > start (h = {h}, start = {start}, end = {end})")]
    BadUniform { h: f64, start: f64, end: f64 },
    #[error("geometric schedule requires h_hat > 0 and 0 < delta < 1 (h_hat = {h_hat}, delta = {delta})")]
    BadGeometric { h_hat: f64, delta: f64 },
    #[error("geometric schedule needs a problem with a singular point")]
    NoSingularPoint,
    #[error("start {start} is not left of the singular point {singular_point}")]
    StartPastSingularity { start: f64, singular_point: f64 },
    #[error("schedule produced no steps")]
    EmptyGrid,
}

impl StepSchedule {
    /// Expands the schedule into an explicit strictly increasing node grid.
    ///
    /// The geometric recursion `t_{n+1} = t_n + h_hat (t_s - t_{n+1})` is
    /// implicit in `t_{n+1}`; it is solved exactly as
    /// `t_{n+1} = (t_n + h_hat t_s) / (1 + h_hat)`.
    pub fn build_grid(
        &self,
        start: f64,
        singular_point: Option<f64>,
    ) -> Result<Vec<f64>, ScheduleError> {
        match *self {
            StepSchedule::Uniform { h, end } => {
                if !(h > 0.0) || !(end > start) {
                    return Err(ScheduleError::BadUniform { h, start, end });
                }
                // Tolerate roundoff in (end - start) / h when it is nearly
                // an integer, so end itself becomes the final node.
                let span = end - start;
                let steps = (span / h + 1e-9).floor() as usize;
                if steps == 0 {
                    return Err(ScheduleError::EmptyGrid);
                }
                let nodes = (0..=steps).map(|n| start + n as f64 * h).collect();
                Ok(nodes)
            }
            StepSchedule::Geometric { h_hat, delta } => {
                if !(h_hat > 0.0) || !(delta > 0.0) || !(delta < 1.0) {
                    return Err(ScheduleError::BadGeometric { h_hat, delta });
                }
                let ts = singular_point.ok_or(ScheduleError::NoSingularPoint)?;
                if start >= ts {
                    return Err(ScheduleError::StartPastSingularity {
                        start,
                        singular_point: ts,
                    });
                }
                let cutoff = delta * (ts - start);
                let mut nodes = vec![start];
                let mut t = start;
                while ts - t > cutoff {
                    t = (t + h_hat * ts) / (1.0 + h_hat);
                    nodes.push(t);
                }
                if nodes.len() < 2 {
                    return Err(ScheduleError::EmptyGrid);
                }
                Ok(nodes)
            }
        }
    }
}

/// One-step method selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepMethod {
    ForwardEuler,
    SemiImplicitEuler,
    RungeKutta4,
}

impl StepMethod {
    pub fn name(&self) -> &'static str {
        match self {
            StepMethod::ForwardEuler => "forward-euler",
            StepMethod::SemiImplicitEuler => "semi-implicit-euler",
            StepMethod::RungeKutta4 => "rk4",
        }
    }
}

impl std::str::FromStr for StepMethod {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "forward-euler" | "euler" => Ok(StepMethod::ForwardEuler),
            "semi-implicit-euler" | "semi-implicit" => Ok(StepMethod::SemiImplicitEuler),
            "rk4" | "runge-kutta-4" => Ok(StepMethod::RungeKutta4),
            other => Err(format!("unknown step method `{other}`")),
        }
    }
}

#[derive(Debug, Error)]
pub enum StepError {
    #[error(transparent)]
    Ode(#[from] OdeError),
    #[error("step from t = {t} produced a non-finite state (blow-up)")]
    NonFinite { t: f64 },
    #[error("step size must be positive, got {h}")]
    NonPositiveStep { h: f64 },
}

fn check_finite(s: State) -> Result<State, StepError> {
    if s.is_finite() {
        Ok(s)
    } else {
        Err(StepError::NonFinite { t: s.t })
    }
}

/// Forward Euler: position advances with the OLD velocity.
///
/// `t+ = t + h`, `x+ = x + h v`, `v+ = v + h f(t, x, v)`.
pub fn forward_euler_step(
    ode: &dyn SecondOrderOde,
    s: State,
    h: f64,
) -> Result<State, StepError> {
    if !(h > 0.0) {
        return Err(StepError::NonPositiveStep { h });
    }
    let a = ode.accel(s.t, s.x, s.v)?;
    check_finite(State::new(s.t + h, s.x + h * s.v, s.v + h * a))
}

/// Semi-implicit (velocity-first) Euler: position advances with the NEW
/// velocity.
///
/// `v+ = v + h f(t, x, v)`, `x+ = x + h v+`, `t+ = t + h`.
pub fn semi_implicit_euler_step(
    ode: &dyn SecondOrderOde,
    s: State,
    h: f64,
) -> Result<State, StepError> {
    if !(h > 0.0) {
        return Err(StepError::NonPositiveStep { h });
    }
    let a = ode.accel(s.t, s.x, s.v)?;
    let v_next = s.v + h * a;
    check_finite(State::new(s.t + h, s.x + h * v_next, v_next))
}

/// Classical 4-stage Runge-Kutta on the first-order system
/// `(x, v)' = (v, f(t, x, v))`. Local error `O(h^5)`.
pub fn rk4_step(ode: &dyn SecondOrderOde, s: State, h: f64) -> Result<State, StepError> {
    if !(h > 0.0) {
        return Err(StepError::NonPositiveStep { h });
    }
    let (t, x, v) = (s.t, s.x, s.v);
    let k1x = v;
    let k1v = ode.accel(t, x, v)?;
    let k2x = v + 0.5 * h * k1v;
    let k2v = ode.accel(t + 0.5 * h, x + 0.5 * h * k1x, v + 0.5 * h * k1v)?;
    let k3x = v + 0.5 * h * k2v;
    let k3v = ode.accel(t + 0.5 * h, x + 0.5 * h * k2x, v + 0.5 * h * k2v)?;
    let k4x = v + h * k3v;
    let k4v = ode.accel(t + h, x + h * k3x, v + h * k3v)?;
    check_finite(State::new(
        t + h,
        x + h / 6.0 * (k1x + 2.0 * k2x + 2.0 * k3x + k4x),
        v + h / 6.0 * (k1v + 2.0 * k2v + 2.0 * k3v + k4v),
    ))
}

/// Applies one step of the chosen method.
pub fn step(
    ode: &dyn SecondOrderOde,
    s: State,
    h: f64,
    method: StepMethod,
) -> Result<State, StepError> {
    match method {
        StepMethod::ForwardEuler => forward_euler_step(ode, s, h),
        StepMethod::SemiImplicitEuler => semi_implicit_euler_step(ode, s, h),
        StepMethod::RungeKutta4 => rk4_step(ode, s, h),
    }
}

/// Why an integration stopped before the end of its grid.
#[derive(Debug, Clone)]
pub enum Truncation {
    /// The state left the problem domain (typically the singular point).
    DomainViolation { t: f64, message: String },
    /// A step produced a non-finite state.
    BlowUp { t: f64 },
}

impl Truncation {
    pub fn message(&self) -> String {
        match self {
            Truncation::DomainViolation { message, .. } => message.clone(),
            Truncation::BlowUp { t } => format!("blow-up at t = {t}"),
        }
    }
}

/// Result of [`integrate`]: the trajectory plus an optional truncation flag.
///
/// A truncated run still carries every node computed before the failure, so
/// reports can be emitted for partial trajectories.
#[derive(Debug)]
pub struct IntegrationOutcome {
    pub trajectory: Trajectory,
    pub truncation: Option<Truncation>,
}

impl IntegrationOutcome {
    pub fn is_complete(&self) -> bool {
        self.truncation.is_none()
    }
}

#[derive(Debug, Error)]
pub enum IntegrateError {
    #[error("grid must contain at least one node")]
    EmptyGrid,
    #[error("initial state time {t0} does not match the first grid node {node}")]
    StartMismatch { t0: f64, node: f64 },
}

/// Integrates over a precomputed node grid with one [`State`] per node.
///
/// Deterministic: identical inputs yield bit-identical trajectories. On
/// blow-up or a domain violation the partial trajectory up to the last valid
/// node is returned together with a truncation flag.
pub fn integrate(
    ode: &dyn SecondOrderOde,
    s0: State,
    grid: &[f64],
    method: StepMethod,
) -> Result<IntegrationOutcome, IntegrateError> {
    let first = *grid.first().ok_or(IntegrateError::EmptyGrid)?;
    if (s0.t - first).abs() > 1e-12 {
        return Err(IntegrateError::StartMismatch { t0: s0.t, node: first });
    }
    let mut states = Vec::with_capacity(grid.len());
    states.push(s0);
    let mut current = s0;
    let mut truncation = None;
    for pair in grid.windows(2) {
        let h = pair[1] - pair[0];
        match step(ode, current, h, method) {
            Ok(mut next) => {
                // Land exactly on the grid node instead of accumulating
                // roundoff in t.
                next.t = pair[1];
                states.push(next);
                current = next;
            }
            Err(StepError::NonFinite { t }) => {
                truncation = Some(Truncation::BlowUp { t });
                break;
            }
            Err(e) => {
                truncation = Some(Truncation::DomainViolation {
                    t: pair[0],
                    message: e.to_string(),
                });
                break;
            }
        }
    }
    let trajectory = Trajectory::new(states).expect("grid nodes are strictly increasing");
    Ok(IntegrationOutcome {
        trajectory,
        truncation,
    })
}

/// Convenience wrapper: builds the grid from a schedule, then integrates.
pub fn integrate_schedule(
    ode: &dyn SecondOrderOde,
    s0: State,
    schedule: &StepSchedule,
    method: StepMethod,
) -> Result<IntegrationOutcome, RunError> {
    let grid = schedule.build_grid(s0.t, ode.singular_point())?;
    Ok(integrate(ode, s0, &grid, method)?)
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error(transparent)]
    Integrate(#[from] IntegrateError),
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ode::{ClosureOde, DriftProblem, DriftSign};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    fn example1() -> DriftProblem {
        DriftProblem::new(
            "example1",
            Arc::new(|_t: f64, x: f64| x.sin()),
            Arc::new(|_t: f64, x: f64| x.powi(5)),
            DriftSign::Positive,
            0.0,
            1.0,
        )
        .unwrap()
    }

    fn example4() -> DriftProblem {
        DriftProblem::new(
            "example4",
            Arc::new(|t: f64, _x: f64| 2.0 * t),
            Arc::new(|t: f64, x: f64| t * x * x),
            DriftSign::Positive,
            0.0,
            1.0,
        )
        .unwrap()
    }

    #[test]
    fn forward_euler_first_step_of_example1() {
        // accel(0, 0, 2) = 0, so v is unchanged and x = 0 + 0.05 * 2.
        let p = example1();
        let s = forward_euler_step(&p, State::new(0.0, 0.0, 2.0), 0.05).unwrap();
        assert_eq!(s.t, 0.05);
        assert!((s.x - 0.1).abs() < 1e-15);
        assert!((s.v - 2.0).abs() < 1e-15);
    }

    #[test]
    fn forward_euler_fixed_point() {
        let zero = ClosureOde::new(|_, _, _| 0.0);
        let s = forward_euler_step(&zero, State::new(0.2, 1.5, 0.0), 0.1).unwrap();
        assert_eq!((s.t, s.x, s.v), (0.30000000000000004, 1.5, 0.0));
    }

    #[test]
    fn forward_euler_first_step_of_example4() {
        let p = example4();
        let s = forward_euler_step(&p, State::new(0.0, 0.0, 1.0), 0.01).unwrap();
        assert!((s.x - 0.01).abs() < 1e-15);
        assert!((s.v - 1.0).abs() < 1e-15);
    }

    #[test]
    fn semi_implicit_step_matches_hand_iteration() {
        let p = example1();
        let s = semi_implicit_euler_step(&p, State::new(0.05, 0.1, 2.0), 0.05).unwrap();
        assert!((s.x - 0.20053).abs() < 1e-4, "x = {}", s.x);
        assert!((s.v - 2.01051).abs() < 1e-4, "v = {}", s.v);
        // Two further steps land on the Table-1 row at t = 0.2.
        let s = semi_implicit_euler_step(&p, s, 0.05).unwrap();
        let s = semi_implicit_euler_step(&p, s, 0.05).unwrap();
        assert!((s.t - 0.2).abs() < 1e-12);
        assert!((s.x - 0.4055).abs() < 5e-3, "x = {}", s.x);
        assert!((s.v - 2.0682).abs() < 5e-3, "v = {}", s.v);
    }

    #[test]
    fn semi_implicit_reduces_to_forward_euler_when_accel_vanishes() {
        let zero = ClosureOde::new(|_, _, _| 0.0);
        let s0 = State::new(0.0, 1.0, 0.7);
        let a = semi_implicit_euler_step(&zero, s0, 0.1).unwrap();
        let b = forward_euler_step(&zero, s0, 0.1).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn euler_variants_differ_by_h_squared_accel_in_position() {
        let p = example4();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..500 {
            let s = State::new(
                rng.gen_range(0.0..0.9),
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
            );
            let h: f64 = rng.gen_range(1e-4..0.1);
            let fwd = forward_euler_step(&p, s, h).unwrap();
            let semi = semi_implicit_euler_step(&p, s, h).unwrap();
            let accel = p.eval_drift(s.t, s.x, s.v).unwrap();
            let diff = semi.x - fwd.x;
            let expect = h * h * accel;
            let scale = expect.abs().max(1e-30);
            assert!(
                (diff - expect).abs() <= 1e-15 * scale.max(fwd.x.abs()),
                "diff {diff} vs h^2 a {expect}"
            );
            assert_eq!(fwd.v, semi.v);
        }
    }

    #[test]
    fn rk4_harmonic_oscillator() {
        let harmonic = ClosureOde::new(|_, x, _| -x);
        let s = rk4_step(&harmonic, State::new(0.0, 0.0, 1.0), 0.1).unwrap();
        assert!((s.x - 0.1f64.sin()).abs() < 1e-7);
    }

    #[test]
    fn rk4_free_motion_is_exact() {
        let free = ClosureOde::new(|_, _, _| 0.0);
        let s = rk4_step(&free, State::new(0.0, 2.0, 3.0), 0.25).unwrap();
        assert_eq!((s.x, s.v), (2.75, 3.0));
    }

    #[test]
    fn rk4_lane_emden_n0_first_step() {
        let p = crate::ode::LaneEmdenProblem::new(0.0).unwrap();
        let s = rk4_step(&p, State::new(0.0, 1.0, 0.0), 0.1).unwrap();
        assert!((s.x - (1.0 - 0.01 / 6.0)).abs() < 1e-8, "x = {}", s.x);
    }

    #[test]
    fn uniform_grid_arithmetic() {
        let grid = StepSchedule::Uniform { h: 0.1, end: 1.0 }
            .build_grid(0.0, None)
            .unwrap();
        assert_eq!(grid.len(), 11);
        assert_eq!(grid[0], 0.0);
        assert!((grid[10] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn geometric_grid_closed_form() {
        let grid = StepSchedule::Geometric {
            h_hat: 0.1,
            delta: 1e-3,
        }
        .build_grid(0.0, Some(1.0))
        .unwrap();
        assert!((grid[1] - 0.1 / 1.1).abs() < 1e-15);
        for (n, t) in grid.iter().enumerate() {
            let expect = 1.0 - 1.1f64.powi(-(n as i32));
            assert!((t - expect).abs() < 1e-12, "node {n}: {t} vs {expect}");
        }
    }

    #[test]
    fn geometric_grid_identity() {
        let grid = StepSchedule::Geometric {
            h_hat: 0.05,
            delta: 0.01,
        }
        .build_grid(0.2, Some(1.0))
        .unwrap();
        for pair in grid.windows(2) {
            let lhs = (1.0 - pair[1]) * 1.05;
            let rhs = 1.0 - pair[0];
            // A few ulps of 1 from the rounded division defining pair[1].
            assert!((lhs - rhs).abs() <= 1e-14);
        }
    }

    #[test]
    fn geometric_grid_immediate_cutoff() {
        // delta at (or past) the first node's remaining distance: one step.
        let h_hat = 0.1f64;
        let delta = 1.0 / (1.0 + h_hat) + 1e-12;
        let grid = StepSchedule::Geometric { h_hat, delta }
            .build_grid(0.0, Some(1.0))
            .unwrap();
        assert_eq!(grid.len(), 2);
    }

    #[test]
    fn schedule_validation() {
        assert!(matches!(
            StepSchedule::Uniform { h: 0.0, end: 1.0 }.build_grid(0.0, None),
            Err(ScheduleError::BadUniform { .. })
        ));
        assert!(matches!(
            StepSchedule::Uniform { h: 0.1, end: -1.0 }.build_grid(0.0, None),
            Err(ScheduleError::BadUniform { .. })
        ));
        assert!(matches!(
            StepSchedule::Geometric {
                h_hat: 0.1,
                delta: 1.5
            }
            .build_grid(0.0, Some(1.0)),
            Err(ScheduleError::BadGeometric { .. })
        ));
        assert!(matches!(
            StepSchedule::Geometric {
                h_hat: 0.1,
                delta: 0.5
            }
            .build_grid(0.0, None),
            Err(ScheduleError::NoSingularPoint)
        ));
    }

    #[test]
    fn integrate_single_node_grid() {
        let p = example1();
        let s0 = State::new(0.0, 0.0, 2.0);
        let out = integrate(&p, s0, &[0.0], StepMethod::ForwardEuler).unwrap();
        assert_eq!(out.trajectory.len(), 1);
        assert!(out.is_complete());
    }

    #[test]
    fn integrate_is_deterministic() {
        let p = example4();
        let s0 = State::new(0.0, 0.0, 1.0);
        let sched = StepSchedule::Uniform { h: 0.01, end: 0.9 };
        let a = integrate_schedule(&p, s0, &sched, StepMethod::SemiImplicitEuler).unwrap();
        let b = integrate_schedule(&p, s0, &sched, StepMethod::SemiImplicitEuler).unwrap();
        assert_eq!(a.trajectory.states(), b.trajectory.states());
    }

    #[test]
    fn integrate_truncates_past_singularity() {
        let p = example4();
        let s0 = State::new(0.0, 0.0, 1.0);
        // Grid crosses t = 1; the step from t = 1.0 evaluates the drift at
        // the singular node and must truncate, keeping the partial result.
        let grid: Vec<f64> = (0..=15).map(|n| n as f64 * 0.1).collect();
        let out = integrate(&p, s0, &grid, StepMethod::ForwardEuler).unwrap();
        assert!(!out.is_complete());
        assert!(out.trajectory.last().t <= 1.0);
        assert!(matches!(
            out.truncation,
            Some(Truncation::DomainViolation { .. })
        ));
    }

    #[test]
    fn integrate_flags_blow_up() {
        let explosive = ClosureOde::new(|_, x: f64, _| x * x * 1e150 + 1e150);
        let grid: Vec<f64> = (0..=20).map(|n| n as f64 * 0.1).collect();
        let out = integrate(&explosive, State::new(0.0, 1.0, 0.0), &grid, StepMethod::ForwardEuler)
            .unwrap();
        assert!(matches!(out.truncation, Some(Truncation::BlowUp { .. })));
        assert!(out.trajectory.len() < grid.len());
    }

    #[test]
    fn integrate_rejects_start_mismatch() {
        let p = example1();
        assert!(matches!(
            integrate(&p, State::new(0.1, 0.0, 2.0), &[0.0, 0.1], StepMethod::ForwardEuler),
            Err(IntegrateError::StartMismatch { .. })
        ));
    }

    #[test]
    fn step_halving_orders() {
        // Smooth non-singular problem with known solution x = sin t.
        let harmonic = ClosureOde::new(|_, x, _| -x);
        let err = |method: StepMethod, h: f64| {
            let sched = StepSchedule::Uniform { h, end: 1.0 };
            let out =
                integrate_schedule(&harmonic, State::new(0.0, 0.0, 1.0), &sched, method).unwrap();
            out.trajectory
                .iter()
                .map(|s| (s.x - s.t.sin()).abs())
                .fold(0.0f64, f64::max)
        };
        let fe = err(StepMethod::ForwardEuler, 0.01) / err(StepMethod::ForwardEuler, 0.005);
        assert!((1.8..=2.2).contains(&fe), "forward Euler ratio {fe}");
        let rk = err(StepMethod::RungeKutta4, 0.1) / err(StepMethod::RungeKutta4, 0.05);
        assert!((14.0..=18.0).contains(&rk), "RK4 ratio {rk}");
    }
}
