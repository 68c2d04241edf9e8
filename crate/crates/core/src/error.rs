use thiserror::Error;

pub type Result<T> = std::result::Result<T, SemError>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SemError {
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("empty model: no statements found")]
    EmptyModel,
    #[error("duplicate {kind} `{lhs} {op} {rhs}` at line {line}")]
    Duplicate {
        kind: &'static str,
        lhs: String,
        op: &'static str,
        rhs: String,
        line: usize,
    },
    #[error("`{0}` is used both as a latent variable and as an observed indicator")]
    LatentObservedClash(String),
    #[error("malformed score table header: {0}")]
    MalformedHeader(String),
    #[error("non-numeric cell `{value}` at row {row}, column `{column}`")]
    NonNumeric {
        row: usize,
        column: String,
        value: String,
    },
    #[error("duplicate row id `{0}`")]
    DuplicateRow(String),
    #[error("score table has no column `{0}` required by the model")]
    MissingColumn(String),
    #[error("insufficient data: {n} complete rows after listwise deletion (need at least 3)")]
    InsufficientData { n: usize },
    #[error("I/O error on {path}: {message}")]
    Io { path: String, message: String },
    #[error("parameter vector has length {got}, model has {expected} free parameters")]
    ThetaLength { expected: usize, got: usize },
    #[error("(I - A) is singular at the current parameter values")]
    SingularPaths,
    #[error("model-implied covariance is not positive definite")]
    ImpliedNotPd,
    #[error("sample covariance is not positive definite")]
    SampleNotPd,
    #[error("matrix is not positive definite")]
    NotPositiveDefinite,
    #[error("starting values give a non-positive-definite implied covariance")]
    BadStart,
    #[error("degrees of freedom must be at least 1 (got {0})")]
    InvalidDf(i64),
    #[error("model is under-identified: {0}")]
    UnderIdentified(String),
    #[error("invalid argument: {0}")]
    Invalid(String),
}
