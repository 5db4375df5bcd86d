use alloc::string::String;
use core::fmt;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    ShapeMismatch {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },
    WindowTooShort {
        len: usize,
    },
    DimensionTooSmall {
        op: &'static str,
        dim: usize,
        min: usize,
    },
    NonFinite {
        op: &'static str,
    },
    NonDeterministic {
        param: String,
    },
    NotNormalized {
        row: usize,
        norm: f64,
    },
    InvalidConfig(String),
    MissingTimestep {
        t: usize,
        len: usize,
    },
    DegenerateRow {
        row: usize,
    },
    InvalidAnswer {
        index: usize,
    },
    PrivilegedAtInference,
    TeamSize {
        n: usize,
        max: usize,
    },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::ShapeMismatch { op, lhs, rhs } => write!(
                f,
                "{op}: shape mismatch between {}x{} and {}x{}",
                lhs.0, lhs.1, rhs.0, rhs.1
            ),
            Self::WindowTooShort { len } => {
                write!(f, "spectral window of length {len} is too short (need at least 2)")
            }
            Self::DimensionTooSmall { op, dim, min } => {
                write!(f, "{op}: dimension {dim} is below the minimum of {min}")
            }
            Self::NonFinite { op } => write!(f, "{op}: non-finite value"),
            Self::NonDeterministic { param } => write!(
                f,
                "objective is not deterministic (repeated evaluation differs near {param})"
            ),
            Self::NotNormalized { row, norm } => {
                write!(f, "row {row} has l2 norm {norm}, expected unit norm")
            }
            Self::InvalidConfig(msg) => write!(f, "invalid configuration: {msg}"),
            Self::MissingTimestep { t, len } => {
                write!(f, "timestep {t} is not covered by a log of {len} rows")
            }
            Self::DegenerateRow { row } => write!(f, "prompt row {row} has zero norm"),
            Self::InvalidAnswer { index } => {
                write!(f, "answer index {index} is outside the four choices")
            }
            Self::PrivilegedAtInference => {
                write!(f, "privileged teacher inputs requested on an inference path")
            }
            Self::TeamSize { n, max } => write!(f, "team size {n} outside [1, {max}]"),
        }
    }
}

impl core::error::Error for Error {}
