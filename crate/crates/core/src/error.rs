use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Broad category of a failure, used by front ends to pick an exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    /// Input data is malformed or violates a structural invariant.
    Data,
    /// Input is well formed but the requested quantity is numerically undefined.
    Numeric,
    /// Caller passed an invalid argument combination.
    Usage,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("record {individual} has {found} detection indicators, partition of class {class} has {expected} intervals")]
    MisalignedDeltas {
        individual: String,
        class: String,
        expected: usize,
        found: usize,
    },
    #[error("unknown class {0}")]
    UnknownClass(String),
    #[error("partition endpoints must be finite and strictly increasing with at least one interval")]
    NonmonotoneEndpoints,
    #[error("class {0} has no records")]
    EmptyClass(String),
    #[error("record {0} has no detections but the dataset is declared detected-only")]
    UndetectedRecord(String),
    #[error("individual {individual} appears twice in class {class}")]
    DuplicateIndividual { class: String, individual: String },
    #[error("record {individual} transitions into {to} but belongs to class {class}")]
    TransitionMismatch {
        individual: String,
        class: String,
        to: String,
    },
    #[error("invalid covariate path: {0}")]
    InvalidCovariatePath(String),
    #[error("covariate dimension mismatch: expected {expected}, found {found}")]
    CovariateDimension { expected: usize, found: usize },

    #[error("never-observed probability requires undetected individuals in the dataset")]
    RequiresRoster,
    #[error("record {0} is detected on more than one interval")]
    MultipleDetections(String),
    #[error("estimated probability mass {0} exceeds one")]
    ProbMassExceedsOne(f64),

    #[error("records carry no covariate paths")]
    NoCovariates,
    #[error("plug-in ratio has a zero denominator")]
    ZeroDenominator,
    #[error("level weights do not match the stratified levels: {0}")]
    WeightMismatch(String),
    #[error("invalid level weights: {0}")]
    InvalidWeights(String),
    #[error("zero kernel mass at the query point")]
    EmptyNeighborhood,
    #[error("invalid kernel configuration: {0}")]
    InvalidKernel(String),
    #[error("hazard increments must be strictly positive")]
    NonpositiveDelta,
    #[error("coefficient shape mismatch: {0}")]
    CoefficientShape(String),

    #[error("detection probability of class {0} is zero")]
    ZeroDetectionProb(String),
    #[error("invalid detection probability {0}")]
    InvalidProbability(f64),
    #[error("window half-width {window} needs more than {needed} intervals, found {found}")]
    WindowTooWide {
        window: usize,
        needed: usize,
        found: usize,
    },
    #[error("moving-average window centred at interval {0} has zero probability mass")]
    ZeroWindowMass(usize),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("at least two intervals are required, found {0}")]
    KTooSmall(usize),
    #[error("at least two origin classes are required, found {0}")]
    TooFewOrigins(usize),
    #[error("no transition labels in the dataset")]
    NoTransitionLabels,
    #[error("every cell of the statistic is degenerate")]
    NoNondegenerateCells,

    #[error("infeasible simulation parameters: {0}")]
    InfeasibleParams(String),
    #[error("at least {needed} replicates are required, got {found}")]
    TooFewReplicates { needed: usize, found: usize },

    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: u64,
        column: usize,
        message: String,
    },
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("individual {individual} has interval {interval} twice")]
    DuplicateCell { individual: String, interval: usize },
    #[error("io error: {0}")]
    Io(String),
}

impl Error {
    /// Stable upper-case identifier for the failure.
    pub fn code(&self) -> &'static str {
        match self {
            Error::MisalignedDeltas { .. } => "MISALIGNED_DELTAS",
            Error::UnknownClass(_) => "UNKNOWN_CLASS",
            Error::NonmonotoneEndpoints => "NONMONOTONE_ENDPOINTS",
            Error::EmptyClass(_) => "EMPTY_CLASS",
            Error::UndetectedRecord(_) => "UNDETECTED_RECORD",
            Error::DuplicateIndividual { .. } => "DUPLICATE_INDIVIDUAL",
            Error::TransitionMismatch { .. } => "TRANSITION_MISMATCH",
            Error::InvalidCovariatePath(_) => "INVALID_COVARIATE_PATH",
            Error::CovariateDimension { .. } => "COVARIATE_DIMENSION",
            Error::RequiresRoster => "REQUIRES_ROSTER",
            Error::MultipleDetections(_) => "MULTIPLE_DETECTIONS",
            Error::ProbMassExceedsOne(_) => "PROB_MASS_EXCEEDS_ONE",
            Error::NoCovariates => "NO_COVARIATES",
            Error::ZeroDenominator => "ZERO_DENOMINATOR",
            Error::WeightMismatch(_) => "WEIGHT_MISMATCH",
            Error::InvalidWeights(_) => "INVALID_WEIGHTS",
            Error::EmptyNeighborhood => "EMPTY_NEIGHBORHOOD",
            Error::InvalidKernel(_) => "INVALID_KERNEL",
            Error::NonpositiveDelta => "NONPOSITIVE_DELTA",
            Error::CoefficientShape(_) => "COEFFICIENT_SHAPE",
            Error::ZeroDetectionProb(_) => "ZERO_DETECTION_PROB",
            Error::InvalidProbability(_) => "INVALID_PROBABILITY",
            Error::WindowTooWide { .. } => "WINDOW_TOO_WIDE",
            Error::ZeroWindowMass(_) => "ZERO_WINDOW_MASS",
            Error::InvalidArgument(_) => "INVALID_ARGUMENT",
            Error::KTooSmall(_) => "K_TOO_SMALL",
            Error::TooFewOrigins(_) => "TOO_FEW_ORIGINS",
            Error::NoTransitionLabels => "NO_TRANSITION_LABELS",
            Error::NoNondegenerateCells => "NO_NONDEGENERATE_CELLS",
            Error::InfeasibleParams(_) => "INFEASIBLE_PARAMS",
            Error::TooFewReplicates { .. } => "TOO_FEW_REPLICATES",
            Error::Parse { .. } => "PARSE_ERROR",
            Error::SchemaMismatch(_) => "SCHEMA_MISMATCH",
            Error::DuplicateCell { .. } => "DUPLICATE_CELL",
            Error::Io(_) => "IO_ERROR",
        }
    }

    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::InvalidArgument(_) | Error::InvalidKernel(_) | Error::TooFewReplicates { .. } => {
                ErrorKind::Usage
            }
            Error::ProbMassExceedsOne(_)
            | Error::ZeroDenominator
            | Error::EmptyNeighborhood
            | Error::NonpositiveDelta
            | Error::ZeroDetectionProb(_)
            | Error::InvalidProbability(_)
            | Error::WindowTooWide { .. }
            | Error::ZeroWindowMass(_)
            | Error::NoNondegenerateCells
            | Error::InfeasibleParams(_)
            | Error::InvalidWeights(_)
            | Error::WeightMismatch(_) => ErrorKind::Numeric,
            _ => ErrorKind::Data,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
