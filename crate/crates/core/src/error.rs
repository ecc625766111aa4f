use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid specification: {0}")]
    InvalidSpec(String),

    #[error("design variable is non-positive for unit {unit} after {attempts} draw(s)")]
    NonPositiveDesign { unit: usize, attempts: usize },

    #[error("unit {unit} has inclusion probability {pi} >= 1; certainty units are not supported")]
    CertaintyUnit { unit: usize, pi: f64 },

    #[error("degenerate design: S_pi = {s_pi} does not exceed max(pi_i, pi_j) = {max_pi}")]
    DegenerateDesign { s_pi: f64, max_pi: f64 },

    #[error("singular system: numerical rank {rank} < {dim}")]
    Singular { rank: usize, dim: usize },

    #[error("score covariance is singular at gamma = {gamma:?}")]
    SingularCovariance { gamma: Vec<f64> },

    #[error("log posterior is not finite at the initial point {gamma:?}")]
    NonFiniteInit { gamma: Vec<f64> },

    #[error("sampler failed to mix: acceptance rate {rate:.4} after adaptation")]
    MixingFailure { rate: f64 },

    #[error("optimizer did not converge in {iterations} iterations (gradient norm {grad_norm:e})")]
    Optimization {
        iterations: usize,
        grad_norm: f64,
        trace: Vec<f64>,
    },

    #[error("monte carlo standard error of log rho is {se:.4}, above {limit}; raise the importance sample size")]
    Precision { se: f64, limit: f64 },

    #[error("likelihood-ratio statistic {0:e} is negative beyond tolerance")]
    InconsistentOptimum(f64),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("malformed data: {0}")]
    Data(String),

    #[error("{failed} of {total} replicates failed")]
    Suite {
        failed: usize,
        total: usize,
        reasons: Vec<String>,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short machine-readable tag used in CLI error records.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidSpec(_) => "invalid_spec",
            Error::NonPositiveDesign { .. } => "non_positive_design",
            Error::CertaintyUnit { .. } => "certainty_unit",
            Error::DegenerateDesign { .. } => "degenerate_design",
            Error::Singular { .. } => "singular_system",
            Error::SingularCovariance { .. } => "singular_covariance",
            Error::NonFiniteInit { .. } => "non_finite_init",
            Error::MixingFailure { .. } => "mixing_failure",
            Error::Optimization { .. } => "optimization",
            Error::Precision { .. } => "precision",
            Error::InconsistentOptimum(_) => "inconsistent_optimum",
            Error::Dimension(_) => "dimension",
            Error::Data(_) => "malformed_data",
            Error::Suite { .. } => "suite",
            Error::Csv(_) => "csv",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }
}
