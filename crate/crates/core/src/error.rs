use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("matrix is not Schur stable (spectral radius {spectral_radius:.6})")]
    Unstable { spectral_radius: f64 },

    #[error("solver failure after {iterations} iterations: {detail}")]
    SolverFailure { iterations: usize, detail: String },

    #[error("data matrix is rank deficient (rank {rank}, required {required}); predictor undefined")]
    PredictorUndefined { rank: usize, required: usize },

    #[error("state is outside the feasible set of the constrained problem")]
    InfeasibleState,

    #[error("ill-conditioned active-set system: {0}")]
    Conditioning(String),

    #[error("invalid law: {0}")]
    InvalidLaw(String),

    #[error("SNR undefined: noise channel {channel} is identically zero")]
    UndefinedSnr { channel: usize },

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("unsupported schema version {found} (expected {expected})")]
    SchemaVersion { found: u32, expected: u32 },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Stable machine-readable identifier, printed by the CLI on failure.
    pub fn code(&self) -> &'static str {
        match self {
            Error::InvalidInput(_) => "E_INVALID_INPUT",
            Error::Unstable { .. } => "E_UNSTABLE",
            Error::SolverFailure { .. } => "E_SOLVER",
            Error::PredictorUndefined { .. } => "E_PREDICTOR_UNDEFINED",
            Error::InfeasibleState => "E_INFEASIBLE_STATE",
            Error::Conditioning(_) => "E_CONDITIONING",
            Error::InvalidLaw(_) => "E_INVALID_LAW",
            Error::UndefinedSnr { .. } => "E_UNDEFINED_SNR",
            Error::Parse { .. } => "E_PARSE",
            Error::Schema(_) => "E_SCHEMA",
            Error::SchemaVersion { .. } => "E_SCHEMA_VERSION",
            Error::Io(_) => "E_IO",
        }
    }
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}
