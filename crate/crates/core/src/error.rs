use thiserror::Error;

pub type Result<T, E = PoaError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum PoaError {
    #[error("identity {0} is already registered")]
    DuplicateIdentity(String),

    #[error("identity {0} is not registered")]
    UnknownIdentity(String),

    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    ShapeMismatch { expected: Vec<usize>, got: Vec<usize> },

    #[error("alpha values must lie in (0, 1) with alpha_prev >= alpha_t (got alpha_t = {alpha_t}, alpha_prev = {alpha_prev})")]
    InvalidAlpha { alpha_t: f64, alpha_prev: f64 },

    #[error("affine transform is singular")]
    SingularTransform,

    #[error("perturbation target latent is identically zero")]
    ZeroLatent,

    #[error("argument out of domain: {0}")]
    DomainError(String),

    #[error("invalid generalized normal parameters: {0}")]
    InvalidParams(String),

    #[error("sample is degenerate (all values equal)")]
    DegenerateSample,

    #[error("likelihood maximisation did not converge after {evaluations} evaluations")]
    NonConvergence { evaluations: usize },

    #[error("fit failed on {samples} scores (mean {mean:.6e}, sd {sd:.6e}): {source}")]
    FitError {
        samples: usize,
        mean: f64,
        sd: f64,
        #[source]
        source: Box<PoaError>,
    },

    #[error("transport error: {0}")]
    Transport(String),

    #[error("protocol mismatch: {0}")]
    ProtocolVersionMismatch(String),

    #[error("backend error: {0}")]
    BackendError(String),

    #[error("inconsistent report: {0}")]
    InconsistentReport(String),

    #[error("distinguisher queried the challenge input")]
    IllegalQuery,

    #[error("malformed data: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl PoaError {
    pub(crate) fn shape(expected: &[usize], got: &[usize]) -> Self {
        PoaError::ShapeMismatch {
            expected: expected.to_vec(),
            got: got.to_vec(),
        }
    }
}
