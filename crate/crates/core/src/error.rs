use thiserror::Error;

/// Errors raised by the numerical machinery.
///
/// Variants are split between *validation* failures (misdeclared maps,
/// schedules outside caps, missing inputs) and *numerical* failures
/// (solvers that did not reach their targets). The CLI maps the former to
/// exit code 2 and the latter to exit code 3.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: point {x} left the declared domain [{lo}, {hi}]")]
    PointOutsideDomain { op: &'static str, x: f64, lo: f64, hi: f64 },

    #[error("{op}: bracket failed to converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence { op: &'static str, iterations: usize, residual: f64 },

    #[error("{op}: requested depth {requested} exceeds cap {cap}")]
    DepthCapExceeded { op: &'static str, requested: usize, cap: usize },

    #[error("backward_orbit: node budget {budget} exceeded at depth {depth} (no pruning policy active)")]
    NodeBudgetExceeded { budget: usize, depth: usize },

    #[error("log_partition_preimage: empty tree")]
    EmptyTree,

    #[error("log_partition_periodic: no periodic points found at n = {n}")]
    EmptyPeriodicSet { n: usize },

    #[error("conformal_residual: cell [{lo}, {hi}] straddles a branch joint")]
    CellStraddlesBranch { lo: f64, hi: f64 },

    #[error("legendre_rate: curve is not convex (second difference {value:e} at t = {t})")]
    NonConvexCurve { t: f64, value: f64 },

    #[error("{op}: map '{map}' has no declared Markov partition")]
    NotMarkov { op: &'static str, map: String },

    #[error("project_level2: Birkhoff source requested without spectral data")]
    MissingEquilibrium,

    #[error("scgf: hyperbolicity screen failed at t = {t} (margin {margin})")]
    HyperbolicityScreenFailed { t: f64, margin: f64 },

    #[error("deviation_decay: no sample reaches threshold s0 = {s0}")]
    EmptyDeviationSet { s0: f64 },

    #[error("complex_preimage_pressure: tree node hit the critical value at depth {depth}; choose another z0")]
    CriticalValueHit { depth: usize },

    #[error("complex_periodic_pressure: found {found} roots at n = {n}, below the deficit threshold {threshold}")]
    RootCountDeficit { n: usize, found: usize, threshold: usize },

    #[error("leading_eigen: matrix is reducible; the declared map is not topologically exact on its domain")]
    ReducibleMatrix,

    #[error("config: {0}")]
    Config(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Exit code the CLI should report for this error: 2 for validation
    /// problems, 3 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::PointOutsideDomain { .. }
            | Error::DepthCapExceeded { .. }
            | Error::CellStraddlesBranch { .. }
            | Error::NotMarkov { .. }
            | Error::MissingEquilibrium
            | Error::EmptyDeviationSet { .. }
            | Error::Config(_)
            | Error::Io(_) => 2,
            _ => 3,
        }
    }
}
