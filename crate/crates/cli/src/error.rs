use thiserror::Error;

/// Exit code 2. Raised before any computation starts.
pub const EXIT_CONFIG: u8 = 2;
/// Exit code 3. A solver, quadrature, or artifact write failed mid-run.
pub const EXIT_NUMERIC: u8 = 3;
/// Exit code 4. The verify scenario completed but a criterion failed.
pub const EXIT_VERIFY: u8 = 4;

#[derive(Debug, Error)]
pub enum Error {
    #[error("config: {0}")]
    Config(String),

    #[error("{0}")]
    Run(String),
}

impl Error {
    pub fn exit_code(&self) -> u8 {
        match self {
            Error::Config(_) => EXIT_CONFIG,
            Error::Run(_) => EXIT_NUMERIC,
        }
    }
}

impl From<hamcg_core::Error> for Error {
    fn from(e: hamcg_core::Error) -> Self {
        Error::Run(e.to_string())
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Run(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Run(format!("json: {e}"))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
