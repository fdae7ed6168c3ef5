use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("config file {path}: {message}")]
    ConfigFile { path: PathBuf, message: String },
    #[error("{context}: {source}")]
    Core {
        context: String,
        #[source]
        source: fedransom::Error,
    },
}

impl CliError {
    pub fn core(context: impl Into<String>) -> impl FnOnce(fedransom::Error) -> Self {
        let context = context.into();
        move |source| Self::Core { context, source }
    }

    /// 2 for anything the user can fix by changing arguments, 1 otherwise.
    pub fn exit_code(&self) -> u8 {
        use fedransom::Error as E;
        match self {
            Self::Usage(_) => 2,
            Self::ConfigFile { .. } => 2,
            Self::Core { source, .. } => match source {
                E::InvalidSide(_)
                | E::InvalidWindow(_)
                | E::InvalidRate(_)
                | E::InvalidConfig(_)
                | E::InvalidSpec(_)
                | E::SizeTooSmall(_)
                | E::InvalidLabel(_) => 2,
                _ => 1,
            },
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
