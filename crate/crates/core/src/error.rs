use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

pub type Result<T, E = Error> = core::result::Result<T, E>;

/// Every failure the engine can report.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Operand shapes are incompatible for the named operation.
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    /// A scalar argument is outside the domain of the operation.
    Domain(String),
    /// Invalid hyperparameters or dimensions.
    Config(String),
    /// A caller broke an operation's precondition.
    Contract(String),
    /// The object is in the wrong state for the call (e.g. unfinalized tape).
    State(String),
    /// Exhaustive enumeration would exceed the configured term budget.
    Size { terms: u128, limit: u128 },
    /// NaN or infinity detected.
    NonFinite(String),
    /// Training loss blew up.
    Diverged { epoch: usize, loss: f64 },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Shape { op, left, right } => {
                write!(f, "{op}: incompatible shapes {left:?} and {right:?}")
            }
            Error::Domain(msg) => write!(f, "domain error: {msg}"),
            Error::Config(msg) => write!(f, "config error: {msg}"),
            Error::Contract(msg) => write!(f, "contract violation: {msg}"),
            Error::State(msg) => write!(f, "invalid state: {msg}"),
            Error::Size { terms, limit } => write!(
                f,
                "exact enumeration needs {terms} terms (limit {limit}); use a Monte Carlo estimate instead"
            ),
            Error::NonFinite(what) => write!(f, "non-finite value in {what}"),
            Error::Diverged { epoch, loss } => {
                write!(f, "training diverged at epoch {epoch} (loss_total = {loss})")
            }
        }
    }
}

impl core::error::Error for Error {}

pub(crate) fn shape_err(op: &'static str, left: &[usize], right: &[usize]) -> Error {
    Error::Shape {
        op,
        left: left.to_vec(),
        right: right.to_vec(),
    }
}
