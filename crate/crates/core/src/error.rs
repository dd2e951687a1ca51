use thiserror::Error;

/// Errors raised anywhere in the estimation pipeline.
///
/// Variants are split between configuration problems (bad spec, unknown
/// codes, misuse of an API) and data/runtime problems; the CLI maps the
/// former to exit code 2 and the latter to exit code 1.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("malformed header: {0}")]
    Header(String),
    #[error("input error: {0}")]
    Input(String),
    #[error("unknown event code `{0}` in exclusion rules")]
    UnknownCode(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("stratum `{0}` is empty")]
    EmptyStratum(String),
    #[error("design has no event rows")]
    NoEvents,
    #[error(
        "monotone likelihood: coefficient for column `{column}` diverged (|beta| = {value:.3})"
    )]
    MonotoneLikelihood { column: String, value: f64 },
    #[error("singular information matrix; dependent columns: {}", .columns.join(", "))]
    SingularInformation { columns: Vec<String> },
    #[error("Newton-Raphson did not converge after {iterations} iterations; log-likelihood trace: {trace:?}")]
    NoConvergence { iterations: usize, trace: Vec<f64> },
    #[error("empty risk set at event age {0}")]
    EmptyRiskSet(f64),
    #[error("level `{level}` of `{term}` was not present in the training data")]
    UnseenLevel { term: String, level: String },
    #[error("unknown term `{0}`")]
    UnknownTerm(String),
    #[error("survival is zero at age {0}; conditional expectation undefined")]
    ZeroSurvival(f64),
    #[error("age {age} is not below the horizon {t_max}")]
    BeyondHorizon { age: f64, t_max: f64 },
    #[error("no comparable pairs in the evaluation set")]
    NoComparablePairs,
    #[error("missing age-pyramid cell: sex {sex}, birth year {birth_year}")]
    MissingPyramidCell { sex: char, birth_year: i32 },
    #[error("exposure set already contains synthetic records; adjustment applies once")]
    AlreadyAdjusted,
    #[error("whole-population adjusted exposures cannot enter the Cox pipeline")]
    AdjustedInCox,
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for errors caused by configuration or API misuse rather than data.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::Config(_)
                | Error::UnknownCode(_)
                | Error::InvalidArgument(_)
                | Error::UnknownTerm(_)
                | Error::AdjustedInCox
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
