use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("unknown grammar `{0}`")]
    UnknownGrammar(String),
    #[error("invalid grammar: {0}")]
    InvalidGrammar(String),
    #[error("sampling budget exhausted after {attempts} attempts ({accepted} of {wanted} strings accepted)")]
    SamplingBudget {
        attempts: usize,
        accepted: usize,
        wanted: usize,
    },
    #[error("cannot corrupt item: {0}")]
    Corrupt(String),
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("split ratio {0} outside (0, 1)")]
    InvalidRatio(f64),
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),
    #[error("autodiff: {0}")]
    Autodiff(String),
    #[error("token {token} outside vocabulary of size {vocab}")]
    UnknownToken { token: usize, vocab: usize },
    #[error("embedding width {got} does not match model width {expected}")]
    EmbeddingWidth { got: usize, expected: usize },
    #[error(
        "training did not converge after {attempts} attempt(s): best train accuracy {train:.4}, test accuracy {test:.4}"
    )]
    NonConvergence {
        attempts: usize,
        train: f64,
        test: f64,
    },
    #[error("checkpoint is not converged (train {train:.4}, test {test:.4}); refusing to attribute")]
    NotConverged { train: f64, test: f64 },
    #[error("integrity check failed for {path}: {msg}")]
    Integrity { path: PathBuf, msg: String },
    #[error("unsupported combination: {0}")]
    Unsupported(String),
    #[error("baseline: {0}")]
    Baseline(String),
    #[error("no language string matches the present features")]
    EmptyMatchSet,
    #[error("exact coalition enumeration needs n <= {cap}, got n = {n}")]
    ExactCap { n: usize, cap: usize },
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error("gold pair set is empty")]
    EmptyGold,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn parse(path: impl Into<String>, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            msg: msg.into(),
        }
    }
}
