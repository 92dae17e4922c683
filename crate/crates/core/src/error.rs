use alloc::string::String;
use core::fmt;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    EmptyBag,
    EmptyInput,
    NonFiniteFeature {
        instance: usize,
        index: usize,
    },
    TargetOutOfRange(f64),
    DimensionMismatch {
        expected: usize,
        found: usize,
    },
    LengthMismatch {
        left: usize,
        right: usize,
    },
    MissingAttention,
    InvalidK {
        k: usize,
        n: usize,
    },
    MarkerNotFound,
    EmptyTissue,
    OutOfBounds,
    UnachievableFraction {
        requested: f64,
        achieved: f64,
    },
    TooFewCases {
        cases: usize,
        k: usize,
    },
    Diverged {
        epoch: usize,
    },
    /// Correlation is undefined because one input has zero variance.
    ConstantInput,
    /// AUC needs at least one positive and one negative label.
    SingleClass,
    InvalidParameter(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::EmptyBag => write!(f, "empty bag"),
            Error::EmptyInput => write!(f, "empty input"),
            Error::NonFiniteFeature { instance, index } => {
                write!(
                    f,
                    "non-finite feature at instance {instance}, index {index}"
                )
            }
            Error::TargetOutOfRange(v) => write!(f, "target {v} outside [0, 1]"),
            Error::DimensionMismatch { expected, found } => {
                write!(
                    f,
                    "feature dimension mismatch: expected {expected}, found {found}"
                )
            }
            Error::LengthMismatch { left, right } => {
                write!(f, "length mismatch: {left} vs {right}")
            }
            Error::MissingAttention => write!(f, "model has no attention parameters"),
            Error::InvalidK { k, n } => write!(f, "k = {k} invalid for {n} instances"),
            Error::MarkerNotFound => write!(f, "no pen marker pixels found"),
            Error::EmptyTissue => write!(f, "tissue mask is empty"),
            Error::OutOfBounds => write!(f, "patch grid exceeds mask bounds"),
            Error::UnachievableFraction {
                requested,
                achieved,
            } => write!(
                f,
                "tumor fraction {requested} not achievable for this geometry (achieved {achieved})"
            ),
            Error::TooFewCases { cases, k } => write!(f, "{cases} cases cannot fill {k} folds"),
            Error::Diverged { epoch } => write!(f, "non-finite loss at epoch {epoch}"),
            Error::ConstantInput => write!(f, "constant input, correlation undefined"),
            Error::SingleClass => write!(f, "labels contain a single class"),
            Error::InvalidParameter(msg) => write!(f, "invalid parameter: {msg}"),
        }
    }
}

impl core::error::Error for Error {}
