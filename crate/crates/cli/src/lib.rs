//! Command implementations behind the `flexrb` binary.

pub mod bench;
pub mod commands;
pub mod config;

pub use config::RunConfig;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("usage error: {0}")]
    Usage(String),
    #[error("not converged: {0}")]
    NotConverged(String),
    #[error("{0}")]
    DegenerateGeometry(String),
    #[error("missing offline artifacts: {0}")]
    MissingArtifacts(String),
    #[error(transparent)]
    Core(flexrb::Error),
}

impl CliError {
    /// Process exit status: 2 configuration or usage error, 3 non-convergence,
    /// 4 degenerate geometry, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Usage(_) => 2,
            CliError::NotConverged(_) => 3,
            CliError::DegenerateGeometry(_) => 4,
            CliError::MissingArtifacts(_) | CliError::Core(_) => 1,
        }
    }
}

impl From<flexrb::Error> for CliError {
    fn from(e: flexrb::Error) -> Self {
        match e {
            flexrb::Error::DegenerateGeometry { .. } => CliError::DegenerateGeometry(e.to_string()),
            flexrb::Error::EimNotConverged { .. } => CliError::NotConverged(e.to_string()),
            other => CliError::Core(other),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(e.into())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        assert_eq!(CliError::Config("x".into()).exit_code(), 2);
        assert_eq!(CliError::NotConverged("x".into()).exit_code(), 3);
        let degenerate = flexrb::Error::DegenerateGeometry {
            point: [0.0, 0.0],
            mu: vec![],
            det: -1.0,
        };
        assert_eq!(CliError::from(degenerate).exit_code(), 4);
        assert_eq!(CliError::from(flexrb::Error::Solver("x".into())).exit_code(), 1);
    }
}
