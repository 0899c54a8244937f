use thiserror::Error;

/// Errors raised by the estimation, inference and I/O layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("pair ({0}, {0}) is a self-pair; the design has no diagonal rows")]
    IdentityPair(usize),
    #[error("node {node} out of range for {n} nodes")]
    NodeOutOfRange { node: usize, n: usize },
    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("dimension mismatch: expected {expected}, got {got} ({what})")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("network needs at least {min} nodes, got {got}")]
    TooFewNodes { min: usize, got: usize },

    #[error("no pair shares the discrete cell and kernel window of the query point")]
    EmptyCell,
    #[error("every candidate bandwidth left some evaluation point without kernel support")]
    AllCellsEmpty,
    #[error("bandwidth must be positive and finite, got {0}")]
    InvalidBandwidth(f64),

    #[error("special regressor shows no monotone edge-count trend (|tau| = {tau:.3} < {tau_min})")]
    AmbiguousSpecialRegressor { tau: f64, tau_min: f64 },
    #[error("density estimate {value} at pair {row} is not positive")]
    NonPositiveDensity { row: usize, value: f64 },
    #[error("projected covariate Gram matrix is singular (smallest eigenvalue {lambda_min:e})")]
    SingularDesign { lambda_min: f64 },
    #[error("{count} node(s) have zero in- or out-degree: {nodes:?}")]
    IsolatedNodes { count: usize, nodes: Vec<String> },

    #[error("group needs at least two members, got {0}")]
    GroupTooSmall(usize),
    #[error("reference support set is empty")]
    EmptyReference,

    #[error("edge value {value} at pair ({i}, {j}) matches no declared level")]
    UnknownLevelValue { i: String, j: String, value: f64 },
    #[error("level {level} (value {value}) has no observed pair")]
    LevelCollapse { level: usize, value: f64 },

    #[error("parse error at {file}:{line}: {msg}")]
    Parse {
        file: String,
        line: usize,
        msg: String,
    },
    #[error("duplicate pair ({i}, {j}) in {file}")]
    DuplicatePair { file: String, i: String, j: String },
    #[error("self-loop ({i}, {i}) in {file}")]
    SelfLoop { file: String, i: String },
    #[error("pair ({i}, {j}) has no covariate row")]
    MissingPair { i: String, j: String },
    #[error("unknown column `{0}`")]
    UnknownColumn(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Coarse classification used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Usage,
    Data,
    Numerical,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        use Error::*;
        match self {
            InvalidConfig(_) | InvalidBandwidth(_) => ErrorClass::Usage,
            EmptyCell
            | AllCellsEmpty
            | NonPositiveDensity { .. }
            | SingularDesign { .. }
            | AmbiguousSpecialRegressor { .. } => ErrorClass::Numerical,
            _ => ErrorClass::Data,
        }
    }

    /// Stable machine-readable name of the variant.
    pub fn kind(&self) -> &'static str {
        use Error::*;
        match self {
            IdentityPair(_) => "IdentityPair",
            NodeOutOfRange { .. } => "NodeOutOfRange",
            IndexOutOfRange { .. } => "IndexOutOfRange",
            DimensionMismatch { .. } => "DimensionMismatch",
            TooFewNodes { .. } => "TooFewNodes",
            EmptyCell => "EmptyCell",
            AllCellsEmpty => "AllCellsEmpty",
            InvalidBandwidth(_) => "InvalidBandwidth",
            AmbiguousSpecialRegressor { .. } => "AmbiguousSpecialRegressor",
            NonPositiveDensity { .. } => "NonPositiveDensity",
            SingularDesign { .. } => "SingularDesign",
            IsolatedNodes { .. } => "IsolatedNodes",
            GroupTooSmall(_) => "GroupTooSmall",
            EmptyReference => "EmptyReference",
            UnknownLevelValue { .. } => "UnknownLevelValue",
            LevelCollapse { .. } => "LevelCollapse",
            Parse { .. } => "ParseError",
            DuplicatePair { .. } => "DuplicatePair",
            SelfLoop { .. } => "SelfLoop",
            MissingPair { .. } => "MissingPair",
            UnknownColumn(_) => "UnknownColumn",
            InvalidConfig(_) => "InvalidConfig",
            Io(_) => "Io",
            Csv(_) => "Csv",
            Json(_) => "Json",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_len(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            what,
            expected,
            got,
        })
    }
}
