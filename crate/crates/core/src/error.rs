use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{}:{line}: {message}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("empty corpus: {0}")]
    EmptyCorpus(String),

    #[error("out of range: {0}")]
    Range(String),

    #[error("training failed: {0}")]
    Training(String),

    #[error("backend `{name}` is unavailable ({reason}); select the stub backend `{stub}` or pass --stub")]
    Capability {
        name: String,
        reason: String,
        stub: String,
    },

    #[error("unknown {family} backend `{name}` (registered: {available})")]
    UnknownBackend {
        family: &'static str,
        name: String,
        available: String,
    },

    #[error("undefined cosine similarity: {0}")]
    UndefinedSimilarity(String),

    #[error("missing upstream artifact `{artifact}`; run `prepi {command}` first")]
    MissingArtifact { artifact: String, command: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("temporal leakage: {0}")]
    Leakage(String),

    #[error("degenerate generation for feature `{0}`")]
    DegenerateGeneration(String),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("run directory {} is locked by another command", .0.display())]
    Locked(PathBuf),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn parse(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            message: message.into(),
        }
    }

    /// Process exit code used by the CLI.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::MissingArtifact { .. } => 2,
            Error::Capability { .. } => 3,
            _ => 1,
        }
    }
}
