use std::fmt;

/// Errors raised across the crate.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("model evaluation error: {what} is not finite at {location:?}")]
    ModelEvaluation { what: &'static str, location: Vec<f64> },

    #[error("quadrature failure: {context} (estimated error {estimate:e}, tolerance {tolerance:e})")]
    Quadrature {
        context: String,
        estimate: f64,
        tolerance: f64,
    },

    #[error("not a Levy profile: {0}")]
    NotLevy(String),

    #[error("first-moment divergence: the pure-jump form needs an integrable first moment near the origin")]
    FirstMomentDivergence,

    #[error("value {value} out of range; achievable interval is [{low:e}, {high:e}]")]
    OutOfRange { value: f64, low: f64, high: f64 },

    #[error("unclassifiable model: {0}")]
    Unclassifiable(ClauseFailures),

    #[error("resolution exceeded: t = {t} needs a larger frequency box; minimal feasible t is {min_t:e}")]
    ResolutionExceeded { t: f64, min_t: f64 },

    #[error("Picard divergence: increment sequence grew for three consecutive iterations ({deltas:?})")]
    PicardDivergence { deltas: Vec<f64> },

    #[error("hypothesis not satisfied: {0}")]
    Hypothesis(String),

    #[error("scheme parameters rejected: {0}")]
    SchemeRejected(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

/// Per-case list of failed clauses, carried by [`Error::Unclassifiable`].
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ClauseFailures(pub Vec<(String, String)>);

impl fmt::Display for ClauseFailures {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, (case, why)) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, "; ")?;
            }
            write!(f, "{case}: {why}")?;
        }
        Ok(())
    }
}
