use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("non-finite entry in {0}")]
    NonFinite(String),

    #[error("matrix is not Hurwitz (spectral abscissa {abscissa:.6e})")]
    NotHurwitz { abscissa: f64 },

    #[error("vectorized Lyapunov system is numerically singular")]
    SingularSystem,

    #[error("{0} is not positive definite")]
    NotPositiveDefinite(String),

    #[error("invalid structure pattern: {0}")]
    InvalidPattern(String),

    #[error("invalid robustness parameters: {0}")]
    InvalidRobustness(String),

    #[error("problem failed validation: {0}")]
    InvalidProblem(String),

    #[error("gain is not stabilizing at iteration {iteration} (shifted spectral abscissa {abscissa:.6e})")]
    NotStabilizing { iteration: usize, abscissa: f64 },

    #[error("no stabilizing initial gain could be constructed: {0}")]
    NoInitialGain(String),

    #[error("no convergence after {iterations} iterations (last step {last_step:.3e}, residual {residual:.3e})")]
    NoConvergence {
        iterations: usize,
        last_step: f64,
        residual: f64,
    },

    #[error("eigenvalue iteration did not converge for a {0}x{0} matrix")]
    EigenvalueFailure(usize),

    #[error("operator V is singular")]
    OperatorSingular,

    #[error("simulation diverged at t = {t}: |x| = {norm:.3e}")]
    Diverged { t: f64, norm: f64 },

    #[error("exogenous input violates its bound at t = {t}: |zeta| / |x| = {ratio:.6} > alpha = {alpha}")]
    ExoBoundViolated { t: f64, ratio: f64, alpha: f64 },

    #[error("trajectory has not settled: |x(t_end)| = {terminal:.3e} > {required:.3e}")]
    NotSettled { terminal: f64, required: f64 },

    #[error("data window [{start}, {end}] is not covered by the trajectory nodes")]
    WindowOutOfRange { start: f64, end: f64 },

    #[error("data window [{start}, {end}] intersects an interval without exogenous-input measurements")]
    AvailabilityViolated { start: f64, end: f64 },

    #[error("regression is rank deficient: rank {rank} < {required}")]
    RankDeficient { rank: usize, required: usize },

    #[error("learned value matrix is not positive definite at iteration {iteration} (min eigenvalue {min_eigenvalue:.3e}); the current gain is likely not stabilizing")]
    LearnedValueIndefinite { iteration: usize, min_eigenvalue: f64 },

    #[error("learned value matrix is asymmetric (relative asymmetry {asymmetry:.3e})")]
    AsymmetricP { asymmetry: f64 },

    #[error("invalid edge: {0}")]
    InvalidEdge(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("trajectory file: {0}")]
    TrajectoryFormat(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
