use std::io;
use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] dualcon_core::Error),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    /// Bad config file, override or command line value.
    #[error("{0}")]
    Config(String),
    /// A data or checkpoint file that exists but does not parse.
    #[error("{file}: {msg}")]
    Format { file: String, msg: String },
    /// A check the command was asked to run did not pass.
    #[error("verification failed: {0}")]
    Verification(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code: 1 verification or training failure, 2 usage or
    /// config error, 3 I/O or file-format error.
    pub fn exit_code(&self) -> i32 {
        use dualcon_core::Error as C;
        match self {
            Error::Verification(_) => 1,
            Error::Core(C::Diverged { .. } | C::NonFinite(_)) => 1,
            Error::Core(_) | Error::Config(_) => 2,
            Error::Io { .. } | Error::Format { .. } => 3,
        }
    }
}
