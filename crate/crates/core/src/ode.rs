//! Problem and solution data model for singular second-order ODEs.

use std::fmt;
use std::sync::Arc;

use thiserror::Error;

/// Scalar field of time and position.
pub type ScalarField = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

/// Below this time the Lane-Emden right-hand side switches to its
/// regularized limit `-x^n / 3`.
pub const LANE_EMDEN_REGULARIZATION_THRESHOLD: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum OdeError {
    #[error("drift evaluated at or past the singular point: t = {t}, singular point = {singular_point}")]
    SingularEvaluation { t: f64, singular_point: f64 },
    #[error("time {t} is outside the problem domain starting at {domain_start}")]
    OutsideDomain { t: f64, domain_start: f64 },
    #[error("{field} returned a non-finite value at (t = {t}, x = {x})")]
    NonFiniteField {
        field: &'static str,
        t: f64,
        x: f64,
    },
    #[error("x = {x} < 0 with non-integer polytropic index n = {n}: x^n is undefined over the reals")]
    NegativePositionFractionalIndex { x: f64, n: f64 },
    #[error("negative polytropic index n = {n}")]
    NegativeIndex { n: f64 },
    #[error("drift sign must be +1 or -1, got {0}")]
    InvalidSign(f64),
    #[error("domain start {domain_start} must lie strictly left of the singular point {singular_point}")]
    EmptyDomain {
        domain_start: f64,
        singular_point: f64,
    },
}

/// Sign applied to the `a(t,x)/(t_s - t) * x'` term of the drift.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DriftSign {
    Positive,
    Negative,
}

impl DriftSign {
    pub fn as_f64(self) -> f64 {
        match self {
            DriftSign::Positive => 1.0,
            DriftSign::Negative => -1.0,
        }
    }
}

/// A `(t, x, x')` sample along a solution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct State {
    pub t: f64,
    pub x: f64,
    pub v: f64,
}

impl State {
    pub fn new(t: f64, x: f64, v: f64) -> Self {
        State { t, x, v }
    }

    pub fn is_finite(&self) -> bool {
        self.t.is_finite() && self.x.is_finite() && self.v.is_finite()
    }
}

/// Ordered, strictly time-increasing, nonempty sequence of [`State`]s.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    states: Vec<State>,
}

impl Trajectory {
    /// Builds a trajectory, checking the node ordering invariant.
    pub fn new(states: Vec<State>) -> Result<Self, TrajectoryError> {
        if states.is_empty() {
            return Err(TrajectoryError::Empty);
        }
        for pair in states.windows(2) {
            if pair[1].t <= pair[0].t {
                return Err(TrajectoryError::NonIncreasingTime {
                    t_prev: pair[0].t,
                    t_next: pair[1].t,
                });
            }
        }
        Ok(Trajectory { states })
    }

    pub fn states(&self) -> &[State] {
        &self.states
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn first(&self) -> State {
        self.states[0]
    }

    pub fn last(&self) -> State {
        *self.states.last().expect("trajectory is nonempty")
    }

    pub fn iter(&self) -> std::slice::Iter<'_, State> {
        self.states.iter()
    }
}

#[derive(Debug, Error)]
pub enum TrajectoryError {
    #[error("trajectory must contain at least one state")]
    Empty,
    #[error("trajectory times must be strictly increasing: {t_prev} then {t_next}")]
    NonIncreasingTime { t_prev: f64, t_next: f64 },
}

/// Right-hand side of a second-order ODE `x'' = f(t, x, x')`.
pub trait SecondOrderOde: Send + Sync {
    /// Evaluates the acceleration at `(t, x, v)`.
    fn accel(&self, t: f64, x: f64, v: f64) -> Result<f64, OdeError>;

    /// Time where the right-hand side stops being defined, if any.
    fn singular_point(&self) -> Option<f64> {
        None
    }
}

/// The singular drift family `x'' = s * a(t,x)/(t_s - t) * x' + g(t,x)`.
///
/// `a` and `g` are user-supplied scalar fields; `s` is [`DriftSign`]; the
/// denominator vanishes at `t_s = singular_point`.
pub struct DriftProblem {
    a: ScalarField,
    g: ScalarField,
    drift_sign: DriftSign,
    singular_point: f64,
    domain_start: f64,
    label: String,
}

impl DriftProblem {
    pub fn new(
        label: impl Into<String>,
        a: ScalarField,
        g: ScalarField,
        drift_sign: DriftSign,
        domain_start: f64,
        singular_point: f64,
    ) -> Result<Self, OdeError> {
        if !(domain_start < singular_point) {
            return Err(OdeError::EmptyDomain {
                domain_start,
                singular_point,
            });
        }
        Ok(DriftProblem {
            a,
            g,
            drift_sign,
            singular_point,
            domain_start,
            label: label.into(),
        })
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn drift_sign(&self) -> DriftSign {
        self.drift_sign
    }

    pub fn domain_start(&self) -> f64 {
        self.domain_start
    }

    pub fn singularity(&self) -> f64 {
        self.singular_point
    }

    /// The coefficient field `a(t, x)`.
    pub fn a(&self, t: f64, x: f64) -> f64 {
        (self.a)(t, x)
    }

    /// The forcing field `g(t, x)`.
    pub fn g(&self, t: f64, x: f64) -> f64 {
        (self.g)(t, x)
    }

    /// Evaluates the full drift `s * a(t,x)/(t_s - t) * v + g(t,x)`.
    pub fn eval_drift(&self, t: f64, x: f64, v: f64) -> Result<f64, OdeError> {
        if t < self.domain_start {
            return Err(OdeError::OutsideDomain {
                t,
                domain_start: self.domain_start,
            });
        }
        if t >= self.singular_point {
            return Err(OdeError::SingularEvaluation {
                t,
                singular_point: self.singular_point,
            });
        }
        let a = (self.a)(t, x);
        if !a.is_finite() {
            return Err(OdeError::NonFiniteField { field: "a", t, x });
        }
        let g = (self.g)(t, x);
        if !g.is_finite() {
            return Err(OdeError::NonFiniteField { field: "g", t, x });
        }
        Ok(self.drift_sign.as_f64() * a / (self.singular_point - t) * v + g)
    }
}

impl fmt::Debug for DriftProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DriftProblem")
            .field("label", &self.label)
            .field("drift_sign", &self.drift_sign)
            .field("domain_start", &self.domain_start)
            .field("singular_point", &self.singular_point)
            .finish_non_exhaustive()
    }
}

impl SecondOrderOde for DriftProblem {
    fn accel(&self, t: f64, x: f64, v: f64) -> Result<f64, OdeError> {
        self.eval_drift(t, x, v)
    }

    fn singular_point(&self) -> Option<f64> {
        Some(self.singular_point)
    }
}

/// The Lane-Emden polytropic equation `x'' + (2/t) x' + x^n = 0`.
#[derive(Debug, Clone, Copy)]
pub struct LaneEmdenProblem {
    index: f64,
}

impl LaneEmdenProblem {
    pub fn new(index: f64) -> Result<Self, OdeError> {
        if !(index >= 0.0) {
            return Err(OdeError::NegativeIndex { n: index });
        }
        Ok(LaneEmdenProblem { index })
    }

    pub fn index(&self) -> f64 {
        self.index
    }

    /// `x^n`, rejecting negative bases with a fractional index so callers can
    /// truncate the run at the first zero of `x`.
    fn power(&self, x: f64) -> Result<f64, OdeError> {
        let n = self.index;
        if n.fract() == 0.0 && n.abs() < 2_147_483_647.0 {
            Ok(x.powi(n as i32))
        } else if x < 0.0 {
            Err(OdeError::NegativePositionFractionalIndex { x, n })
        } else {
            Ok(x.powf(n))
        }
    }

    /// Right-hand side `-(2/t) v - x^n`, with the analytic limit `-x^n / 3`
    /// below [`LANE_EMDEN_REGULARIZATION_THRESHOLD`] (from `x'(0) = 0` and
    /// L'Hopital at the `t = 0` singularity).
    pub fn eval_rhs(&self, t: f64, x: f64, v: f64) -> Result<f64, OdeError> {
        if t < 0.0 {
            return Err(OdeError::OutsideDomain {
                t,
                domain_start: 0.0,
            });
        }
        let xn = self.power(x)?;
        if t <= LANE_EMDEN_REGULARIZATION_THRESHOLD {
            Ok(-xn / 3.0)
        } else {
            Ok(-2.0 / t * v - xn)
        }
    }
}

impl SecondOrderOde for LaneEmdenProblem {
    fn accel(&self, t: f64, x: f64, v: f64) -> Result<f64, OdeError> {
        self.eval_rhs(t, x, v)
    }
}

/// A right-hand side given directly as a closure. Used for reference problems
/// without a singular drift structure (harmonic oscillators and the like).
pub struct ClosureOde<F>
where
    F: Fn(f64, f64, f64) -> f64 + Send + Sync,
{
    f: F,
}

impl<F> ClosureOde<F>
where
    F: Fn(f64, f64, f64) -> f64 + Send + Sync,
{
    pub fn new(f: F) -> Self {
        ClosureOde { f }
    }
}

impl<F> SecondOrderOde for ClosureOde<F>
where
    F: Fn(f64, f64, f64) -> f64 + Send + Sync,
{
    fn accel(&self, t: f64, x: f64, v: f64) -> Result<f64, OdeError> {
        Ok((self.f)(t, x, v))
    }
}
