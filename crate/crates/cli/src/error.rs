use std::path::PathBuf;

use crate::config::ConfigError;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),

    #[error("cannot read config {}: {source}", path.display())]
    ConfigFile {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("missing artifact {}", path.display())]
    MissingArtifact { path: PathBuf },

    #[error("{0}")]
    Validation(String),

    #[error("unknown subcommand `{0}`")]
    UnknownSubcommand(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) | Self::ConfigFile { .. } => 2,
            Self::MissingArtifact { .. } => 3,
            Self::Validation(_) => 4,
            Self::UnknownSubcommand(_) | Self::Io { .. } => 1,
        }
    }

    /// Short machine-readable category.
    pub fn kind(&self) -> &'static str {
        match self {
            Self::Config(_) | Self::ConfigFile { .. } => "config",
            Self::MissingArtifact { .. } => "missing-artifact",
            Self::Validation(_) => "validation",
            Self::UnknownSubcommand(_) => "unknown-subcommand",
            Self::Io { .. } => "io",
        }
    }

    /// The one-line diagnostic printed on stderr.
    pub fn diagnostic(&self) -> String {
        let msg = self.to_string().replace('\n', " ");
        format!("error[{}]: {msg}", self.kind())
    }
}

impl From<bapg::Error> for CliError {
    fn from(e: bapg::Error) -> Self {
        match e {
            bapg::Error::Io { path, source } if source.kind() == std::io::ErrorKind::NotFound => {
                Self::MissingArtifact { path }
            }
            bapg::Error::Io { path, source } => Self::Io { path, source },
            other => Self::Validation(other.to_string()),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
