use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Where a data error was found.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Location {
    pub file: PathBuf,
    /// 1-based data row (header excluded); 0 when the error concerns the header.
    pub row: usize,
    pub column: String,
}

impl std::fmt::Display for Location {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}:{} column `{}`", self.file.display(), self.row, self.column)
    }
}

/// Coarse classification used by the CLI to pick an exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    /// Bad options, missing parameters, precondition violations.
    Usage,
    /// Malformed or inconsistent input data.
    Data,
    /// A solver failed to converge or a system was singular.
    Numerical,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("missing column at {0}")]
    MissingColumn(Location),
    #[error("unknown reference `{value}` at {at}")]
    UnknownZoneRef { at: Location, value: String },
    #[error("negative value {value} at {at}")]
    NegativeValue { at: Location, value: f64 },
    #[error("duplicate key `{key}` at {at}")]
    DuplicateKey { at: Location, key: String },
    #[error("invalid value `{value}` at {at}: {reason}")]
    InvalidValue {
        at: Location,
        value: String,
        reason: String,
    },
    #[error("inconsistent data: {0}")]
    Inconsistent(String),
    #[error("csv error in {file}: {source}")]
    Csv {
        file: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("io error on {file}: {source}")]
    Io {
        file: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("missing parameter `{0}`")]
    MissingParameter(String),
    #[error("missing attributes for market {market} alternative {alternative}")]
    MissingAttributes { market: String, alternative: String },
    #[error("invalid nesting parameters {rho:?}: need each rho in [0, 1) and sum < 1")]
    InvalidRho { rho: Vec<f64> },
    #[error("share solver did not converge after {iterations} iterations (residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },
    #[error("zero share for {0}")]
    ZeroShare(String),

    #[error("rank-deficient design; collinear columns: {columns:?}")]
    RankDeficient { columns: Vec<String> },
    #[error("under-identified: {instruments} instruments for {endogenous} endogenous regressors")]
    UnderIdentified {
        instruments: usize,
        endogenous: usize,
    },
    #[error("segment {0} has no usable observations")]
    EmptySegment(String),

    #[error("region group `{0}` selects no pre-period volume")]
    EmptyRegionGroup(String),
    #[error("calibration did not converge: objective {objective:e}, gradient norm {gradient_norm:e}")]
    CalibrationNonConvergence {
        objective: f64,
        gradient_norm: f64,
        best: Vec<f64>,
    },

    #[error("cost parameter is zero; welfare conversion undefined")]
    ZeroCostParameter,
    #[error("no toll rate for {0}")]
    MissingRate(String),

    #[error("lever cap {cap} reached without offsetting the loss (plateau CV {plateau_cv:.4} $/day)")]
    Unbracketable { cap: f64, plateau_cv: f64 },
    #[error("group {group} stays at {plateau_cv:.4} $/day even with the full fare removed")]
    InfeasibleDiscount { group: String, plateau_cv: f64 },

    #[error("{0}")]
    Usage(String),
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        use Error::*;
        match self {
            MissingColumn(_)
            | UnknownZoneRef { .. }
            | NegativeValue { .. }
            | DuplicateKey { .. }
            | InvalidValue { .. }
            | Inconsistent(_)
            | Csv { .. }
            | Io { .. }
            | MissingAttributes { .. }
            | ZeroShare(_)
            | EmptySegment(_)
            | EmptyRegionGroup(_) => ErrorKind::Data,
            NonConvergence { .. }
            | RankDeficient { .. }
            | CalibrationNonConvergence { .. }
            | Unbracketable { .. }
            | InfeasibleDiscount { .. } => ErrorKind::Numerical,
            MissingParameter(_)
            | InvalidRho { .. }
            | UnderIdentified { .. }
            | ZeroCostParameter
            | MissingRate(_)
            | Usage(_) => ErrorKind::Usage,
        }
    }

    /// Stable machine-readable tag.
    pub fn code(&self) -> &'static str {
        use Error::*;
        match self {
            MissingColumn(_) => "MissingColumn",
            UnknownZoneRef { .. } => "UnknownZoneRef",
            NegativeValue { .. } => "NegativeValue",
            DuplicateKey { .. } => "DuplicateKey",
            InvalidValue { .. } => "InvalidValue",
            Inconsistent(_) => "Inconsistent",
            Csv { .. } => "Csv",
            Io { .. } => "Io",
            MissingParameter(_) => "MissingParameter",
            MissingAttributes { .. } => "MissingAttributes",
            InvalidRho { .. } => "InvalidRho",
            NonConvergence { .. } => "NonConvergence",
            ZeroShare(_) => "ZeroShare",
            RankDeficient { .. } => "RankDeficient",
            UnderIdentified { .. } => "UnderIdentified",
            EmptySegment(_) => "EmptySegment",
            EmptyRegionGroup(_) => "EmptyRegionGroup",
            CalibrationNonConvergence { .. } => "NonConvergence",
            ZeroCostParameter => "ZeroCostParameter",
            MissingRate(_) => "MissingRate",
            Unbracketable { .. } => "Unbracketable",
            InfeasibleDiscount { .. } => "InfeasibleDiscount",
            Usage(_) => "Usage",
        }
    }
}
