use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("non-finite entry in {0}")]
    NonFinite(String),

    #[error("matrix is not Hurwitz (spectral abscissa {abscissa:.3e})")]
    NotHurwitz { abscissa: f64 },

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("eigenvalue iteration did not converge")]
    EigenNoConvergence,

    #[error("state norm {norm:.3e} exceeded blow-up bound at t = {time:.4} s")]
    BlowUp { time: f64, norm: f64 },

    #[error("observer weight norm {norm:.3e} exceeded bound at t = {time:.4} s")]
    WeightBlowUp { time: f64, norm: f64 },

    #[error("sampling alignment: {0}")]
    Alignment(String),

    #[error("learning diverged at iteration {iteration} (|P| = {norm:.3e})")]
    Diverged { iteration: usize, norm: f64 },

    #[error("rank condition failed: rank {achieved} < required {required}")]
    RankDeficient { achieved: usize, required: usize },

    #[error("no stabilizing initial gain could be constructed")]
    NoStabilizingGain,

    #[error("invalid config: {0}")]
    Config(String),

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }

    /// Innermost error, skipping context wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Context { source, .. } => source.root(),
            other => other,
        }
    }
}

pub(crate) trait ResultExt<T> {
    fn context(self, context: impl FnOnce() -> String) -> Result<T>;
}

impl<T> ResultExt<T> for Result<T> {
    fn context(self, context: impl FnOnce() -> String) -> Result<T> {
        self.map_err(|e| e.context(context()))
    }
}
