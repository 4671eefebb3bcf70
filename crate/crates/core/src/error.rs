use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("case syntax error at line {line}: {message}")]
    CaseSyntax { line: usize, message: String },

    #[error("invalid network: {0}")]
    InvalidNetwork(String),

    #[error("branch {branch} has zero series impedance")]
    SingularBranch { branch: usize },

    #[error("bus {bus} has nonzero shunt conductance; injections would not equal the sum of branch flows")]
    ShuntConductance { bus: u32 },

    #[error("power flow did not converge after {iterations} iterations (max mismatch {mismatch:.3e} pu)")]
    NotConverged { iterations: usize, mismatch: f64 },

    #[error("power flow Jacobian is singular at iteration {iteration}")]
    SingularJacobian { iteration: usize },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    Dimension { expected: usize, actual: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("zero-magnitude reference phasor at index {index}")]
    ZeroPhasor { index: usize },

    #[error("channel {channel} references out-of-service branch {branch}")]
    OutOfServiceChannel { channel: usize, branch: usize },

    #[error("placement does not make the system observable")]
    Unobservable,

    #[error("only {converged} of {required} scenarios converged")]
    InsufficientScenarios { converged: usize, required: usize },

    #[error("training diverged: non-finite loss at epoch {epoch}")]
    Diverged { epoch: usize },

    #[error("degenerate regression problem: {0}")]
    Degenerate(String),

    #[error("{0}: not implemented (out of scope)")]
    Unsupported(String),

    #[error("no candidate buses left to place")]
    NoCandidates,

    #[error("estimator was trained for a different network (conversion checksum mismatch)")]
    ConversionMismatch,

    #[error("missing artifacts: {}", .0.join(", "))]
    MissingArtifacts(Vec<String>),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl ToString) -> Self {
        Error::Format {
            path: path.into(),
            message: message.to_string(),
        }
    }
}
