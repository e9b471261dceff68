//! Error measurement, empirical convergence order, and executable versions of
//! the discrete Gronwall error analysis.
//!
//! The error envelope mirrors the bound obtained by applying the discrete
//! Gronwall lemma to the squared combined error norm
//! `||e_n||^2 = e_n^2 + (e'_n)^2` of the Euler recursion on the geometric
//! grid: `||e_n||^2 <= (exp(N M1) - 1) M2 / M1` with `M1 = m1 h_hat`,
//! `M2 = m2 h_hat^3`. The coefficients `m1`, `m2` are assembled explicitly
//! from the per-step inequality (every cross term bounded via
//! `2uv <= u^2 + v^2`, cubic error terms absorbed under the a-priori bound
//! `||e_n|| <= 1`) so the envelope is auditable; see
//! [`ErrorEnvelope::assembly`].

use std::fmt;

use thiserror::Error;

use crate::ode::{DriftProblem, SecondOrderOde, State, Trajectory};
use crate::problems::Oracle;
use crate::steppers::{self, StepMethod, StepSchedule};

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("gronwall coefficient M1 = {0} must be >= -1")]
    BadGronwallCoefficient(f64),
    #[error("x = {0} must be >= -1")]
    BadLemmaArgument(f64),
    #[error("m = {0} must be > 0")]
    BadLemmaExponent(f64),
    #[error("need at least 3 distinct positive step sizes spanning a factor >= 4, got {0:?}")]
    BadStepList(Vec<f64>),
    #[error("fewer than 3 runs finished without truncation ({valid} of {total})")]
    TooFewValidRuns { valid: usize, total: usize },
    #[error("field {field} is non-finite at (t = {t}, x = {x}) during constant estimation")]
    NonFiniteSample { field: &'static str, t: f64, x: f64 },
    #[error("degenerate envelope parameters: h_hat = {h_hat}, delta = {delta}")]
    DegenerateEnvelope { h_hat: f64, delta: f64 },
    #[error("reference RK4 run truncated: {0}")]
    ReferenceTruncated(String),
    #[error(transparent)]
    Run(#[from] steppers::RunError),
}

/// Per-node error of a trajectory against a reference.
#[derive(Debug, Clone)]
pub struct ErrorReport {
    /// Position errors `x_n - y_n`, one per node.
    pub eps: Vec<f64>,
    /// Velocity errors `x'_n - y'_n`, one per node.
    pub eps_prime: Vec<f64>,
    /// `max_n sqrt(eps_n^2 + eps'_n^2)`.
    pub max_norm: f64,
    /// Relative step of the run that produced the trajectory, when known.
    pub h_hat: Option<f64>,
}

impl ErrorReport {
    fn from_pairs(pairs: impl Iterator<Item = (f64, f64)>) -> Self {
        let mut eps = Vec::new();
        let mut eps_prime = Vec::new();
        let mut max_norm = 0.0f64;
        for (e, ep) in pairs {
            max_norm = max_norm.max(e.hypot(ep));
            eps.push(e);
            eps_prime.push(ep);
        }
        ErrorReport {
            eps,
            eps_prime,
            max_norm,
            h_hat: None,
        }
    }

    /// Whether the run stayed inside the a-priori error bound assumed by the
    /// envelope assembly.
    pub fn within_apriori_bound(&self) -> bool {
        self.max_norm <= 1.0
    }
}

/// Errors of a trajectory against a closed-form oracle, node by node.
pub fn error_against(trajectory: &Trajectory, oracle: &Oracle) -> ErrorReport {
    ErrorReport::from_pairs(
        trajectory
            .iter()
            .map(|s| (s.x - oracle.x(s.t), s.v - oracle.v(s.t))),
    )
}

/// Errors of a trajectory against a reference trajectory on the same grid.
pub fn error_between(trajectory: &Trajectory, reference: &Trajectory) -> ErrorReport {
    ErrorReport::from_pairs(
        trajectory
            .iter()
            .zip(reference.iter())
            .map(|(s, r)| (s.x - r.x, s.v - r.v)),
    )
}

/// Schedule family used for a convergence study: one run per step size.
#[derive(Debug, Clone, Copy)]
pub enum ScheduleFamily {
    Uniform { end: f64 },
    Geometric { delta: f64 },
}

impl ScheduleFamily {
    pub fn with_step(&self, h: f64) -> StepSchedule {
        match *self {
            ScheduleFamily::Uniform { end } => StepSchedule::Uniform { h, end },
            ScheduleFamily::Geometric { delta } => StepSchedule::Geometric { h_hat: h, delta },
        }
    }
}

/// Reference solution for error measurement.
pub enum Reference<'a> {
    /// Closed-form oracle.
    Oracle(&'a Oracle),
    /// RK4 on the same node grid with each interval subdivided.
    FineRk4 { substeps: usize },
}

/// One run of a convergence study.
#[derive(Debug, Clone)]
pub struct OrderRun {
    pub h: f64,
    pub max_norm: f64,
}

/// Result of [`empirical_order`].
#[derive(Debug, Clone)]
pub struct OrderEstimate {
    pub runs: Vec<OrderRun>,
    /// Runs excluded because they truncated (blow-up or domain violation).
    pub excluded: Vec<(f64, String)>,
    /// Least-squares slope of `log(max_norm)` against `log(h)`.
    pub slope: f64,
    /// Root-mean-square residual of the fit.
    pub fit_residual: f64,
}

/// Integrates RK4 along `grid` with each interval cut into `substeps`
/// pieces, reporting states at the grid nodes only.
pub fn fine_rk4_reference(
    ode: &dyn SecondOrderOde,
    s0: State,
    grid: &[f64],
    substeps: usize,
) -> Result<Trajectory, AnalysisError> {
    let substeps = substeps.max(1);
    let mut refined = Vec::with_capacity((grid.len() - 1) * substeps + 1);
    for pair in grid.windows(2) {
        for k in 0..substeps {
            refined.push(pair[0] + (pair[1] - pair[0]) * k as f64 / substeps as f64);
        }
    }
    refined.push(*grid.last().expect("nonempty grid"));
    let out = steppers::integrate(ode, s0, &refined, StepMethod::RungeKutta4)
        .map_err(steppers::RunError::from)?;
    if let Some(trunc) = out.truncation {
        return Err(AnalysisError::ReferenceTruncated(trunc.message()));
    }
    let states: Vec<State> = out
        .trajectory
        .states()
        .iter()
        .step_by(substeps)
        .copied()
        .collect();
    Ok(Trajectory::new(states).expect("subsampled grid stays increasing"))
}

/// Empirical convergence order: least-squares slope of `log(max error norm)`
/// versus `log(h)` across the supplied step sizes.
pub fn empirical_order(
    ode: &dyn SecondOrderOde,
    initial: State,
    family: ScheduleFamily,
    method: StepMethod,
    steps: &[f64],
    reference: Reference<'_>,
) -> Result<OrderEstimate, AnalysisError> {
    let mut sorted = steps.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).expect("finite steps"));
    sorted.dedup();
    let distinct_positive = sorted.len() >= 3 && sorted.iter().all(|&h| h > 0.0);
    let span_ok = distinct_positive && sorted[0] / sorted[sorted.len() - 1] >= 4.0 - 1e-9;
    if !span_ok {
        return Err(AnalysisError::BadStepList(steps.to_vec()));
    }

    let mut runs = Vec::new();
    let mut excluded = Vec::new();
    for &h in &sorted {
        let schedule = family.with_step(h);
        let grid = schedule.build_grid(initial.t, ode.singular_point())
            .map_err(steppers::RunError::from)?;
        let out = steppers::integrate(ode, initial, &grid, method)
            .map_err(steppers::RunError::from)?;
        if let Some(trunc) = out.truncation {
            excluded.push((h, trunc.message()));
            continue;
        }
        let report = match &reference {
            Reference::Oracle(oracle) => error_against(&out.trajectory, oracle),
            Reference::FineRk4 { substeps } => {
                let fine = fine_rk4_reference(ode, initial, &grid, *substeps)?;
                error_between(&out.trajectory, &fine)
            }
        };
        runs.push(OrderRun {
            h,
            max_norm: report.max_norm,
        });
    }
    if runs.len() < 3 {
        return Err(AnalysisError::TooFewValidRuns {
            valid: runs.len(),
            total: sorted.len(),
        });
    }

    let points: Vec<(f64, f64)> = runs
        .iter()
        .map(|r| (r.h.ln(), r.max_norm.ln()))
        .collect();
    let n = points.len() as f64;
    let mean_x = points.iter().map(|p| p.0).sum::<f64>() / n;
    let mean_y = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mean_x).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mean_x) * (p.1 - mean_y)).sum();
    let slope = sxy / sxx;
    let intercept = mean_y - slope * mean_x;
    let fit_residual = (points
        .iter()
        .map(|p| (p.1 - slope * p.0 - intercept).powi(2))
        .sum::<f64>()
        / n)
        .sqrt();
    Ok(OrderEstimate {
        runs,
        excluded,
        slope,
        fit_residual,
    })
}

/// Discrete Gronwall bound for `a_{k+1} <= (1 + M1) a_k + M2`:
/// `a_{n+1} <= exp((N+1) M1) (M2/M1 + a0) - M2/M1`, with the `M1 -> 0`
/// limit `a0 + (N+1) M2` handled analytically.
pub fn gronwall_bound(m1: f64, m2: f64, a0: f64, n: usize) -> Result<f64, AnalysisError> {
    if m1 < -1.0 {
        return Err(AnalysisError::BadGronwallCoefficient(m1));
    }
    let steps = (n + 1) as f64;
    if m1 == 0.0 {
        Ok(a0 + steps * m2)
    } else {
        Ok((steps * m1).exp() * (m2 / m1 + a0) - m2 / m1)
    }
}

/// Numerically checks `0 <= (1+x)^m <= exp(m x)` for `x >= -1`, `m > 0`,
/// with relative roundoff slack `1e-12`.
pub fn check_exponential_lemma(x: f64, m: f64) -> Result<bool, AnalysisError> {
    if x < -1.0 {
        return Err(AnalysisError::BadLemmaArgument(x));
    }
    if !(m > 0.0) {
        return Err(AnalysisError::BadLemmaExponent(m));
    }
    let lhs = (1.0 + x).powf(m);
    let rhs = (m * x).exp();
    let slack = 1e-12 * rhs.abs().max(1.0);
    Ok(lhs >= -slack && lhs <= rhs + slack)
}

/// Bounds on the drift coefficient fields and their partials over a box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LipschitzConstants {
    /// Bound on `|a|`.
    pub c0: f64,
    /// Bound on `|da/dt|`.
    pub c1: f64,
    /// Bound on `|da/dx|`.
    pub c2: f64,
    /// Bound on `|g|`.
    pub c3: f64,
    /// Bound on `|dg/dt|`.
    pub c4: f64,
    /// Bound on `|dg/dx|`.
    pub c5: f64,
    /// Bound on `|x'|` along the trajectory.
    pub a1: f64,
    /// Lipschitz constant of `a` in `x` (taken as `c2`).
    pub t1: f64,
    /// Lipschitz constant of `g` in `x` (taken as `c5`).
    pub t2: f64,
}

/// Grid resolution per axis for constant estimation.
const CONSTANT_SAMPLES: usize = 201;

/// Estimates [`LipschitzConstants`] by sampling `a`, `g` and centered
/// finite-difference partials over the box
/// `[t0, t_max] x [x_min - pad, x_max + pad]` swept out by the trajectory.
pub fn estimate_constants(
    problem: &DriftProblem,
    trajectory: &Trajectory,
    box_padding: f64,
) -> Result<LipschitzConstants, AnalysisError> {
    let t_lo = trajectory.first().t;
    let t_hi = trajectory.last().t;
    let (mut x_lo, mut x_hi) = (f64::INFINITY, f64::NEG_INFINITY);
    let mut a1 = 0.0f64;
    for s in trajectory.iter() {
        x_lo = x_lo.min(s.x);
        x_hi = x_hi.max(s.x);
        a1 = a1.max(s.v.abs());
    }
    let pad = box_padding * (x_hi - x_lo).max(1.0);
    x_lo -= pad;
    x_hi += pad;

    // Finite-difference step relative to the box size.
    let dt = 1e-6 * (t_hi - t_lo).max(1e-9);
    let dx = 1e-6 * (x_hi - x_lo).max(1e-9);

    let mut c = [0.0f64; 6];
    for i in 0..CONSTANT_SAMPLES {
        let t = t_lo + (t_hi - t_lo) * i as f64 / (CONSTANT_SAMPLES - 1) as f64;
        for j in 0..CONSTANT_SAMPLES {
            let x = x_lo + (x_hi - x_lo) * j as f64 / (CONSTANT_SAMPLES - 1) as f64;
            let samples = [
                ("a", problem.a(t, x)),
                ("a_t", (problem.a(t + dt, x) - problem.a(t - dt, x)) / (2.0 * dt)),
                ("a_x", (problem.a(t, x + dx) - problem.a(t, x - dx)) / (2.0 * dx)),
                ("g", problem.g(t, x)),
                ("g_t", (problem.g(t + dt, x) - problem.g(t - dt, x)) / (2.0 * dt)),
                ("g_x", (problem.g(t, x + dx) - problem.g(t, x - dx)) / (2.0 * dx)),
            ];
            for (k, (field, value)) in samples.iter().enumerate() {
                if !value.is_finite() {
                    return Err(AnalysisError::NonFiniteSample { field, t, x });
                }
                c[k] = c[k].max(value.abs());
            }
        }
    }
    Ok(LipschitzConstants {
        c0: c[0],
        c1: c[1],
        c2: c[2],
        c3: c[3],
        c4: c[4],
        c5: c[5],
        a1,
        t1: c[2],
        t2: c[5],
    })
}

/// The assembled error envelope with every coefficient exposed.
#[derive(Debug, Clone, Copy)]
pub struct ErrorEnvelope {
    /// Truncation constant for the double integral of the expanded drift
    /// derivative terms.
    pub d1: f64,
    /// Truncation constant for the double integral of the drift itself.
    pub d2: f64,
    /// Per-step multiplier coefficient: `a_{n+1} <= (1 + m1 h_hat) a_n + ...`
    pub m1: f64,
    /// Per-step additive coefficient: `... + m2 h_hat^3`.
    pub m2: f64,
    pub h_hat: f64,
    pub delta: f64,
    /// Step count used in the bound.
    pub n_steps: usize,
    /// The envelope on the squared combined error norm.
    pub value: f64,
}

impl ErrorEnvelope {
    /// Human-readable account of how each coefficient was assembled.
    pub fn assembly(&self) -> String {
        format!(
            "D1 = 1.5 (3 C1^2 A1^2 + 2 C2^2 A1^4 + 2 C0^2 C3^2 + 3 C0^2 A1^2 + 2 C0^4 A1^2 + 3 C4^2 + 2 C5^2 A1^2) = {d1:.6e}\n\
             D2 = 2 C0^2 + C3^2 / 2 = {d2:.6e}\n\
             m1 = (2 + 8 C0^2 + 8 A1^2 T1^2 + 8 T1^2 + 8 T2^2) + 3 + 2 C0 + A1 T1 + 2 T1 + T2 = {m1:.6e}\n\
             m2 = 3 (D1 + D2) = {m2:.6e}\n\
             M1 = m1 h_hat, M2 = m2 h_hat^3, N = ceil(ln(1/delta)/ln(1+h_hat)) = {n}\n\
             envelope on ||eps||^2 = (exp(N M1) - 1) M2 / M1 = {value:.6e}",
            d1 = self.d1,
            d2 = self.d2,
            m1 = self.m1,
            m2 = self.m2,
            n = self.n_steps,
            value = self.value,
        )
    }
}

impl fmt::Display for ErrorEnvelope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.assembly())
    }
}

/// Step count of the geometric schedule:
/// `(1 + h_hat)^{-N} <= delta` first holds at `N = ceil(ln(1/delta) / ln(1 + h_hat))`.
pub fn geometric_step_count(h_hat: f64, delta: f64) -> usize {
    ((1.0 / delta).ln() / (1.0 + h_hat).ln()).ceil() as usize
}

/// Evaluates the global error envelope for the forward Euler recursion on
/// the geometric grid with relative step `h_hat` and cutoff `delta`.
pub fn error_envelope(
    constants: &LipschitzConstants,
    h_hat: f64,
    delta: f64,
    n_steps: usize,
) -> Result<ErrorEnvelope, AnalysisError> {
    if !(h_hat > 0.0) || !(delta > 0.0) || !(delta < 1.0) {
        return Err(AnalysisError::DegenerateEnvelope { h_hat, delta });
    }
    let LipschitzConstants {
        c0,
        c1,
        c2,
        c3,
        c4,
        c5,
        a1,
        t1,
        t2,
    } = *constants;
    let d1 = 1.5
        * (3.0 * c1 * c1 * a1 * a1
            + 2.0 * c2 * c2 * a1.powi(4)
            + 2.0 * c0 * c0 * c3 * c3
            + 3.0 * c0 * c0 * a1 * a1
            + 2.0 * c0.powi(4) * a1 * a1
            + 3.0 * c4 * c4
            + 2.0 * c5 * c5 * a1 * a1);
    let d2 = 2.0 * c0 * c0 + c3 * c3 / 2.0;
    // Multiplier terms on ||eps_n||^2, each bounded to a single power of
    // h_hat (h_{n+1} <= h_hat and h_hat <= 1 absorb the higher powers):
    //   2 h^2 + 8 C0^2 + 8 A1^2 T1^2 + 8 T1^2 + 8 T2^2   (quadratic terms)
    //   + 1 (eps eps' h) + 1 + 1 (cross terms with sqrt(D1), sqrt(D2))
    //   + 2 C0 + A1 T1 + 2 T1 + T2                       (linear terms)
    let m1 = (2.0 + 8.0 * c0 * c0 + 8.0 * a1 * a1 * t1 * t1 + 8.0 * t1 * t1 + 8.0 * t2 * t2)
        + 3.0
        + 2.0 * c0
        + a1 * t1
        + 2.0 * t1
        + t2;
    let m2 = 3.0 * (d1 + d2);
    let big_m1 = m1 * h_hat;
    let big_m2 = m2 * h_hat * h_hat * h_hat;
    let value = if big_m1 == 0.0 {
        n_steps as f64 * big_m2
    } else {
        ((n_steps as f64 * big_m1).exp() - 1.0) * big_m2 / big_m1
    };
    Ok(ErrorEnvelope {
        d1,
        d2,
        m1,
        m2,
        h_hat,
        delta,
        n_steps,
        value,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ode::DriftSign;
    use crate::problems;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    #[test]
    fn gronwall_direct_evaluation() {
        // M2 = 0: bound reduces to exp((N+1) M1) a0.
        let b = gronwall_bound(0.2, 0.0, 0.5, 4).unwrap();
        assert!((b - (1.0f64).exp() * 0.5).abs() < 1e-14);
        // Worked value.
        let b = gronwall_bound(0.1, 0.01, 0.1, 5).unwrap();
        assert!((b - 0.26442).abs() < 5e-6, "bound {b}");
        // Iterating the recurrence stays below the bound.
        let mut a = 0.1f64;
        for _ in 0..6 {
            a = 1.1 * a + 0.01;
        }
        assert!(a <= b + 1e-12);
        // M1 = 0 limit.
        let b = gronwall_bound(0.0, 0.01, 0.0, 9).unwrap();
        assert!((b - 0.1).abs() < 1e-15);
    }

    #[test]
    fn gronwall_rejects_small_m1() {
        assert!(matches!(
            gronwall_bound(-1.5, 0.0, 0.0, 1),
            Err(AnalysisError::BadGronwallCoefficient(_))
        ));
    }

    #[test]
    fn gronwall_dominates_recurrence() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..1000 {
            let m1: f64 = rng.gen_range(0.0..2.0);
            let m2: f64 = rng.gen_range(0.0..1.0);
            let a0: f64 = rng.gen_range(0.0..1.0);
            let n: usize = rng.gen_range(0..=50);
            let bound = gronwall_bound(m1, m2, a0, n).unwrap();
            let mut a = a0;
            for _ in 0..=n {
                a = (1.0 + m1) * a + m2;
                assert!(
                    a <= bound * (1.0 + 1e-12),
                    "m1={m1} m2={m2} a0={a0} n={n}: {a} > {bound}"
                );
            }
        }
    }

    #[test]
    fn exponential_lemma_worked_values() {
        assert!(check_exponential_lemma(0.0, 3.0).unwrap());
        assert!(check_exponential_lemma(-1.0, 2.0).unwrap());
        assert!(check_exponential_lemma(0.5, 3.0).unwrap());
        assert!((1.5f64.powf(3.0) - 3.375).abs() < 1e-12);
        assert!(matches!(
            check_exponential_lemma(-1.1, 2.0),
            Err(AnalysisError::BadLemmaArgument(_))
        ));
        assert!(matches!(
            check_exponential_lemma(0.0, 0.0),
            Err(AnalysisError::BadLemmaExponent(_))
        ));
    }

    #[test]
    fn exponential_lemma_random_sweep() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        for _ in 0..10_000 {
            let x: f64 = rng.gen_range(-1.0..10.0);
            let m: f64 = rng.gen_range(1e-6..20.0);
            assert!(check_exponential_lemma(x, m).unwrap(), "x={x} m={m}");
        }
    }

    #[test]
    fn error_against_self_is_zero() {
        let entry = problems::lane_emden(1.0).unwrap();
        let oracle = entry.oracle.as_ref().unwrap();
        let states: Vec<State> = (0..=10)
            .map(|i| {
                let t = 0.1 + i as f64 * 0.1;
                State::new(t, oracle.x(t), oracle.v(t))
            })
            .collect();
        let traj = Trajectory::new(states).unwrap();
        let report = error_against(&traj, oracle);
        assert_eq!(report.max_norm, 0.0);
        assert!(report.eps.iter().all(|&e| e == 0.0));
    }

    #[test]
    fn lane_emden_euler_error_magnitude_and_halving() {
        let entry = problems::lane_emden(1.0).unwrap();
        let oracle = entry.oracle.as_ref().unwrap();
        let run = |h: f64| {
            let out = steppers::integrate_schedule(
                entry.kind.as_ode(),
                entry.initial,
                &StepSchedule::Uniform { h, end: 1.0 },
                StepMethod::ForwardEuler,
            )
            .unwrap();
            error_against(&out.trajectory, oracle).max_norm
        };
        let coarse = run(0.01);
        assert!(coarse > 0.0 && coarse < 0.05, "max norm {coarse}");
        let fine = run(0.005);
        let ratio = coarse / fine;
        assert!((1.8..=2.2).contains(&ratio), "halving ratio {ratio}");
    }

    #[test]
    fn empirical_order_forward_euler_is_first_order() {
        let entry = problems::lane_emden(1.0).unwrap();
        let est = empirical_order(
            entry.kind.as_ode(),
            entry.initial,
            ScheduleFamily::Uniform { end: 1.0 },
            StepMethod::ForwardEuler,
            &[0.02, 0.01, 0.005, 0.0025],
            Reference::Oracle(entry.oracle.as_ref().unwrap()),
        )
        .unwrap();
        assert!((0.8..=1.2).contains(&est.slope), "slope {}", est.slope);
    }

    #[test]
    fn empirical_order_rk4_is_fourth_order() {
        // A smooth linear problem: the 1/t factor in the polytrope RHS is
        // not Lipschitz at t = 0 and costs RK4 one observed order there.
        let entry = problems::get_example(5).unwrap();
        let est = empirical_order(
            entry.kind.as_ode(),
            entry.initial,
            ScheduleFamily::Uniform { end: 1.0 },
            StepMethod::RungeKutta4,
            &[0.02, 0.01, 0.005, 0.0025],
            Reference::Oracle(entry.oracle.as_ref().unwrap()),
        )
        .unwrap();
        assert!((3.5..=4.5).contains(&est.slope), "slope {}", est.slope);
    }

    #[test]
    fn empirical_order_self_reference_agrees_with_oracle() {
        let entry = problems::lane_emden(1.0).unwrap();
        let steps = [0.02, 0.01, 0.005, 0.0025];
        let vs_oracle = empirical_order(
            entry.kind.as_ode(),
            entry.initial,
            ScheduleFamily::Uniform { end: 1.0 },
            StepMethod::ForwardEuler,
            &steps,
            Reference::Oracle(entry.oracle.as_ref().unwrap()),
        )
        .unwrap();
        let vs_rk4 = empirical_order(
            entry.kind.as_ode(),
            entry.initial,
            ScheduleFamily::Uniform { end: 1.0 },
            StepMethod::ForwardEuler,
            &steps,
            Reference::FineRk4 { substeps: 8 },
        )
        .unwrap();
        assert!(
            (vs_oracle.slope - vs_rk4.slope).abs() < 0.1,
            "{} vs {}",
            vs_oracle.slope,
            vs_rk4.slope
        );
    }

    #[test]
    fn empirical_order_rejects_thin_step_lists() {
        let entry = problems::lane_emden(1.0).unwrap();
        let err = empirical_order(
            entry.kind.as_ode(),
            entry.initial,
            ScheduleFamily::Uniform { end: 1.0 },
            StepMethod::ForwardEuler,
            &[0.01],
            Reference::FineRk4 { substeps: 8 },
        )
        .unwrap_err();
        assert!(matches!(err, AnalysisError::BadStepList(_)));
        // Narrow span is rejected too.
        let err = empirical_order(
            entry.kind.as_ode(),
            entry.initial,
            ScheduleFamily::Uniform { end: 1.0 },
            StepMethod::ForwardEuler,
            &[0.01, 0.009, 0.008],
            Reference::FineRk4 { substeps: 8 },
        )
        .unwrap_err();
        assert!(matches!(err, AnalysisError::BadStepList(_)));
    }

    fn constant_drift(a: f64) -> DriftProblem {
        DriftProblem::new(
            "const",
            Arc::new(move |_t: f64, _x: f64| a),
            Arc::new(|_, _| 0.0),
            DriftSign::Positive,
            0.0,
            1.0,
        )
        .unwrap()
    }

    fn line_trajectory(x_hi: f64) -> Trajectory {
        Trajectory::new(
            (0..=9)
                .map(|i| State::new(i as f64 * 0.1, -x_hi + 2.0 * x_hi * i as f64 / 9.0, 0.5))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn constants_of_constant_field() {
        let p = constant_drift(3.0);
        let c = estimate_constants(&p, &line_trajectory(1.0), 0.0).unwrap();
        assert_eq!(c.c0, 3.0);
        assert!(c.c1.abs() < 1e-9 && c.c2.abs() < 1e-9);
        assert!(c.c3 == 0.0 && c.c4 == 0.0 && c.c5 == 0.0);
        assert_eq!(c.a1, 0.5);
    }

    #[test]
    fn constants_of_sine_field() {
        let p = DriftProblem::new(
            "sin",
            Arc::new(|_t: f64, x: f64| x.sin()),
            Arc::new(|_, _| 0.0),
            DriftSign::Positive,
            0.0,
            1.0,
        )
        .unwrap();
        let c = estimate_constants(&p, &line_trajectory(2.0), 0.0).unwrap();
        assert!(c.c0 <= 1.0 + 1e-9);
        assert!(c.c2 <= 1.0 + 1e-6);
        assert!(c.c2 > 0.9);
    }

    #[test]
    fn constants_of_quintic_forcing() {
        let p = DriftProblem::new(
            "quintic",
            Arc::new(|_, _| 0.0),
            Arc::new(|_t: f64, x: f64| x.powi(5)),
            DriftSign::Positive,
            0.0,
            1.0,
        )
        .unwrap();
        let c = estimate_constants(&p, &line_trajectory(2.0), 0.0).unwrap();
        assert!((c.c3 - 32.0).abs() < 1e-4 * 32.0, "c3 = {}", c.c3);
        assert!((c.c5 - 80.0).abs() < 1e-4 * 80.0, "c5 = {}", c.c5);
    }

    #[test]
    fn finite_difference_partials_match_analytic() {
        let p = DriftProblem::new(
            "mixed",
            Arc::new(|_t: f64, x: f64| x.sin()),
            Arc::new(|_t: f64, x: f64| x.powi(5)),
            DriftSign::Positive,
            0.0,
            1.0,
        )
        .unwrap();
        let c = estimate_constants(&p, &line_trajectory(2.0), 0.0).unwrap();
        // max |cos x| on [-2, 2] is 1 at x = 0; max |5 x^4| is 80.
        assert!((c.c2 - 1.0).abs() < 1e-6);
        assert!((c.c5 - 80.0).abs() < 1e-2);
    }

    #[test]
    fn constant_estimation_reports_non_finite_samples() {
        let p = DriftProblem::new(
            "bad",
            Arc::new(|_t: f64, x: f64| 1.0 / x),
            Arc::new(|_, _| 0.0),
            DriftSign::Positive,
            0.0,
            1.0,
        )
        .unwrap();
        let err = estimate_constants(&p, &line_trajectory(1.0), 0.0).unwrap_err();
        assert!(matches!(err, AnalysisError::NonFiniteSample { .. }));
    }

    #[test]
    fn envelope_of_error_free_dynamics_is_zero() {
        let zero = LipschitzConstants {
            c0: 0.0,
            c1: 0.0,
            c2: 0.0,
            c3: 0.0,
            c4: 0.0,
            c5: 0.0,
            a1: 0.0,
            t1: 0.0,
            t2: 0.0,
        };
        for h in [0.1, 0.01, 0.001] {
            let e = error_envelope(&zero, h, 0.1, geometric_step_count(h, 0.1)).unwrap();
            assert_eq!(e.m2, 0.0);
            assert_eq!(e.value, 0.0);
        }
    }

    #[test]
    fn envelope_scales_as_h_hat_squared() {
        let c = LipschitzConstants {
            c0: 1.0,
            c1: 0.5,
            c2: 0.5,
            c3: 1.0,
            c4: 0.5,
            c5: 0.5,
            a1: 1.0,
            t1: 0.5,
            t2: 0.5,
        };
        let delta = 0.1;
        let env = |h: f64| {
            error_envelope(&c, h, delta, geometric_step_count(h, delta))
                .unwrap()
                .value
        };
        let mut h = 0.02;
        let mut prev_ratio = f64::INFINITY;
        for _ in 0..4 {
            let ratio = env(h) / env(h / 2.0);
            assert!(ratio >= 4.0, "ratio {ratio} at h_hat {h}");
            assert!(ratio <= prev_ratio + 1e-9, "not monotone: {ratio} after {prev_ratio}");
            prev_ratio = ratio;
            h /= 2.0;
        }
        assert!(prev_ratio < 4.5, "ratio should approach 4, got {prev_ratio}");
    }

    #[test]
    fn envelope_rejects_degenerate_parameters() {
        let c = LipschitzConstants {
            c0: 1.0,
            c1: 0.0,
            c2: 0.0,
            c3: 0.0,
            c4: 0.0,
            c5: 0.0,
            a1: 0.0,
            t1: 0.0,
            t2: 0.0,
        };
        assert!(matches!(
            error_envelope(&c, 0.0, 0.1, 10),
            Err(AnalysisError::DegenerateEnvelope { .. })
        ));
        assert!(matches!(
            error_envelope(&c, 0.01, 1.0, 10),
            Err(AnalysisError::DegenerateEnvelope { .. })
        ));
    }

    #[test]
    fn envelope_dominates_measured_error_on_example4() {
        let entry = problems::get_example(4).unwrap();
        let drift = entry.kind.as_drift().unwrap();
        let delta = 0.1;
        for h_hat in [0.02, 0.01, 0.005] {
            let schedule = StepSchedule::Geometric { h_hat, delta };
            let grid = schedule.build_grid(0.0, Some(1.0)).unwrap();
            let out = steppers::integrate(
                entry.kind.as_ode(),
                entry.initial,
                &grid,
                StepMethod::ForwardEuler,
            )
            .unwrap();
            assert!(out.is_complete());
            let reference =
                fine_rk4_reference(entry.kind.as_ode(), entry.initial, &grid, 16).unwrap();
            let report = error_between(&out.trajectory, &reference);
            let constants = estimate_constants(drift, &reference, 0.1).unwrap();
            let envelope =
                error_envelope(&constants, h_hat, delta, grid.len() - 1).unwrap();
            let measured_sq = report.max_norm * report.max_norm;
            assert!(
                measured_sq <= envelope.value,
                "h_hat {h_hat}: {measured_sq} > {}",
                envelope.value
            );
        }
    }
}
