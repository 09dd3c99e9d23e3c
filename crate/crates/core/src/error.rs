use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid topology: {0}")]
    Topology(String),
    #[error("invalid configuration: {0}")]
    Configuration(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("singular matrix in {0}")]
    Singular(String),
    #[error("{0} is not positive definite")]
    NotPositiveDefinite(String),
    #[error("configuration violates constraints (residual {0:.3e})")]
    InconsistentConstraints(f64),
    #[error("constraint matrix is degenerate: {0}")]
    DegenerateConstraints(String),
    #[error("system is not asymptotically stable (spectral abscissa {0:.3e})")]
    Unstable(f64),
    #[error("invalid problem: {0}")]
    Problem(String),
    #[error("initial convexified problem is infeasible: {0}")]
    InitialInfeasible(String),
    #[error("solver failure: {0}")]
    Solver(String),
    #[error("input error: {0}")]
    Input(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Short snake-case name for tables and logs.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Topology(_) => "topology",
            Error::Configuration(_) => "configuration",
            Error::Dimension(_) => "dimension",
            Error::Singular(_) => "singular",
            Error::NotPositiveDefinite(_) => "not_positive_definite",
            Error::InconsistentConstraints(_) => "inconsistent_constraints",
            Error::DegenerateConstraints(_) => "degenerate_constraints",
            Error::Unstable(_) => "unstable",
            Error::Problem(_) => "problem",
            Error::InitialInfeasible(_) => "infeasible",
            Error::Solver(_) => "solver",
            Error::Input(_) => "input",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }

    /// Process exit code: 2 infeasible, 4 bad input, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InitialInfeasible(_) | Error::Unstable(_) => 2,
            Error::Topology(_)
            | Error::Configuration(_)
            | Error::Dimension(_)
            | Error::InconsistentConstraints(_)
            | Error::DegenerateConstraints(_)
            | Error::Problem(_)
            | Error::Input(_)
            | Error::Io(_)
            | Error::Json(_) => 4,
            Error::Singular(_) | Error::NotPositiveDefinite(_) | Error::Solver(_) => 1,
        }
    }
}
