use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("origin is not representable on axis {axis}: {reason}")]
    OriginNotRepresentable { axis: usize, reason: String },

    #[error("duplicate grid point at index {0}")]
    DuplicatePoint(usize),

    #[error("degenerate simplex {simplex}: |det| = {det:e} below tolerance {tol:e}")]
    DegenerateSimplex { simplex: usize, det: f64, tol: f64 },

    #[error("triangulation failed: {0}")]
    Triangulation(String),

    #[error("point {point:?} lies outside the analysis box")]
    OutsideDomain { point: Vec<f64> },

    #[error("point lies outside simplex {simplex} (min barycentric weight {min_weight:e})")]
    OutsideSimplex { simplex: usize, min_weight: f64 },

    #[error("singular matrix in {0}")]
    Singular(&'static str),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("negative argument {0} to the harmonic bound")]
    NegativeValue(f64),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid policy: {0}")]
    InvalidPolicy(String),

    #[error("problem has no goal simplices")]
    EmptyGoalSet,

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("solver failure: {0}")]
    Solver(String),

    #[error("simulation error: {0}")]
    Simulation(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("certificate does not match triangulation (hash {found} vs {expected})")]
    GridMismatch { expected: String, found: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
