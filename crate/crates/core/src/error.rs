use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("argument {value} outside the domain {domain}")]
    Domain { value: f64, domain: &'static str },

    #[error("{series} did not converge within {terms} terms (last term {last_term:e})")]
    SeriesNonConvergence {
        series: &'static str,
        terms: usize,
        last_term: f64,
    },

    #[error("quadrature on [{a}, {b}] exceeded the refinement depth cap {depth}")]
    QuadratureDepth { a: f64, b: f64, depth: usize },

    #[error("walk exceeded the hard step cap of {cap} steps")]
    BudgetExceeded { cap: u64 },

    #[error("state space of {states} states exceeds the guard of {limit}")]
    SizeGuard { states: u128, limit: u128 },

    #[error("linear solve did not converge: residual {residual:e} after {iterations} iterations")]
    SolverNonConvergence { residual: f64, iterations: usize },

    #[error("survival iteration stalled: contraction estimate {ratio} at step {step}")]
    SurvivalStall { ratio: f64, step: usize },

    #[error("config: {0}")]
    Config(String),

    #[error("i/o: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
