use thiserror::Error;

use crate::expr::{EvalError, ParseError};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("invalid system: {0}")]
    InvalidSystem(String),
    #[error("unknown builtin system `{0}`")]
    UnknownSystem(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("initial state {state:?} is outside Y^delta (distance {dist:.3e} > {delta})")]
    InitialOutside {
        state: Vec<f64>,
        dist: f64,
        delta: f64,
    },
    #[error("state constraint violated at t = {t}: distance {dist:.3e} exceeds margin {delta}")]
    ConstraintViolation { t: f64, dist: f64, delta: f64 },
    #[error("integration step {step} is larger than the control breakpoint spacing {spacing}")]
    StepTooLarge { step: f64, spacing: f64 },
    #[error("cannot project {state:?}: distance {dist:.3e} exceeds {limit}")]
    ProjectionFailed {
        state: Vec<f64>,
        dist: f64,
        limit: f64,
    },
    #[error("no admissible control at grid node {node:?}")]
    NotViable { node: Vec<f64> },
    #[error("value iteration did not converge in {iterations} sweeps (last change {change:.3e})")]
    NoConvergence { iterations: usize, change: f64 },
    #[error("{count} control sequences exceed the enumeration budget {budget}")]
    BudgetExceeded { count: u128, budget: u128 },
    #[error("periodic orbit does not close: |y(T) - y(0)| = {gap:.3e}")]
    OrbitNotClosed { gap: f64 },
    #[error("orbit start is not reachable from y0: {0}")]
    Unreachable(String),
    #[error("singular basis matrix (condition estimate {condition:.3e})")]
    SingularBasis { condition: f64 },
    #[error("simplex iteration limit {0} reached")]
    IterationLimit(usize),
    #[error("LP is {status}: {hint}")]
    LpNotOptimal { status: String, hint: String },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
