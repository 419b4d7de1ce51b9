use thiserror::Error;

#[derive(Debug, Error)]
pub enum MagswimError {
    #[error("failed to parse drag matrix: {0}")]
    DragParse(String),

    #[error("drag matrix is singular (cannot invert)")]
    SingularDrag,

    #[error("symmetrized mobility is not positive definite (min eigenvalue {min_eig})")]
    MobilityNotPositiveDefinite { min_eig: f64 },

    #[error("degenerate swimmer: sigma2 = {sigma2} is below {tol} * sigma1; the singular structure of P is rank deficient")]
    DegenerateSpectrum { sigma2: f64, tol: f64 },

    #[error("magnetic moment has zero norm")]
    ZeroMoment,

    #[error("zero quaternion cannot represent a rotation")]
    ZeroQuaternion,

    #[error("integrator step size underflow at t = {t}")]
    StepUnderflow { t: f64 },

    #[error("integrator exceeded {max_steps} steps at t = {t}")]
    MaxStepsExceeded { max_steps: usize, t: f64 },

    #[error("invalid integrator configuration: {0}")]
    InvalidConfig(String),

    #[error("no recurrence found within trajectory (horizon {horizon}); behaviour may be quasi-periodic")]
    NoRecurrence { horizon: f64 },

    #[error("trajectory converged to a steady state; no periodic orbit to refine")]
    SteadyState,

    #[error("Newton iteration for the periodic orbit stagnated after {iterations} iterations (residual {residual})")]
    NewtonStagnation { iterations: usize, residual: f64 },

    #[error("singular bordered Jacobian in shooting system")]
    SingularShootingJacobian,

    #[error("continuation corrector failed below minimum step {min_step} at parameter {param}")]
    CorrectorFailure { min_step: f64, param: f64 },

    #[error("prediction not applicable: {0}")]
    RegimeViolation(String),

    #[error("period comparison impossible: analytic prediction is in the equilibrium regime")]
    Incomparable,

    #[error("infinite-period boundary: |psi - pi/2| = iota within tolerance")]
    InfinitePeriodBoundary,

    #[error("configuration error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, MagswimError>;
