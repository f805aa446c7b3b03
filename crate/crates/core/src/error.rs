use thiserror::Error;

use crate::expr::ExprError;

/// Every failure the pipeline can report.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    // --- orbits -----------------------------------------------------------
    #[error("no level point h0(x,0) = {energy} on (0, r]")]
    NoLevelPoint { energy: f64 },
    #[error("orbit at E = {energy} did not return to the section within the time cap")]
    NoReturn { energy: f64 },
    #[error("orbit at E = {energy} violates tolerance: {what} = {value:e}")]
    ToleranceFailure { energy: f64, what: String, value: f64 },
    #[error("E = {energy} exceeds the separatrix guard 0.9*e0 = {limit}")]
    SeparatrixGuard { energy: f64, limit: f64 },
    #[error("energy {energy} lies outside the orbit family (0, {limit}]")]
    OutOfFamily { energy: f64, limit: f64 },

    // --- systems ----------------------------------------------------------
    #[error("{what} does not vanish at the origin (value {value:e} at t = {t})")]
    OriginViolation { what: String, value: f64, t: f64 },
    #[error("finite-difference Lipschitz estimate diverges ({estimate:e}) for {what}")]
    LipschitzViolation { what: String, estimate: f64 },
    #[error("no noise bound: tr(B^T B) t^sigma / |z|^2 is unbounded for every candidate sigma")]
    NoBound,
    #[error("unknown registry system '{0}'")]
    UnknownName(String),
    #[error("registry system '{system}' requires parameter '{param}'")]
    MissingParam { system: String, param: String },
    #[error("expression error in {context}: {source}")]
    Expr { context: String, source: ExprError },
    #[error("system definition: {0}")]
    SystemFile(String),

    // --- averaging --------------------------------------------------------
    #[error("averaging order {requested} exceeds the series truncation k_max = {k_max}")]
    OrderTooHigh { requested: usize, k_max: usize },
    #[error("mean-normalization residual {residual:e} exceeds tolerance at order {order}")]
    GridTooCoarse { order: usize, residual: f64 },
    #[error("angle table does not match the requested grid: {0}")]
    GridMismatch(String),
    #[error("a required second derivative is unavailable: {0}")]
    DerivativeUnavailable(String),
    #[error("log-log slope {slope:.4} of Lambda_{order} is not within 0.1 of an integer")]
    FitAmbiguous { order: usize, slope: f64 },
    #[error("Lambda_{order} has no sign change on the energy grid")]
    NoRoot { order: usize },
    #[error("|Lambda'({c})| = {derivative:e} is below 1e-8")]
    DerivativeZero { c: f64, derivative: f64 },
    #[error("finite-difference stencil at ({x}, {y}) leaves the orbit family")]
    StencilOutOfDomain { x: f64, y: f64 },

    // --- classification ---------------------------------------------------
    #[error("kappa = {0} is outside (0, 1)")]
    BadKappa(f64),
    #[error("inconsistent classifier inputs: {0}")]
    InconsistentInputs(String),
    #[error("the instability branch needs a noise bound (mu, sigma)")]
    MissingNoiseBound,
    #[error("hypothesis violated: {0}")]
    HypothesisViolated(String),
    #[error("practical horizon requires n <= q (got n = {n}, q = {q})")]
    BadOrder { n: usize, q: usize },

    // --- simulation and statistics ---------------------------------------
    #[error("fit window [{lo}, {hi}] spans less than one decade")]
    WindowTooShort { lo: f64, hi: f64 },
    #[error("horizon needs {required} steps, budget is {budget}")]
    HorizonTooLong { required: f64, budget: f64 },

    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("i/o: {0}")]
    Io(String),
}

impl Error {
    /// Whether the failure stems from user configuration rather than from
    /// numerics (drives the CLI exit code).
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::SeparatrixGuard { .. }
                | Error::UnknownName(_)
                | Error::MissingParam { .. }
                | Error::Expr { .. }
                | Error::SystemFile(_)
                | Error::OrderTooHigh { .. }
                | Error::BadKappa(_)
                | Error::BadOrder { .. }
                | Error::WindowTooShort { .. }
                | Error::InvalidInput(_)
                | Error::Io(_)
        )
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
