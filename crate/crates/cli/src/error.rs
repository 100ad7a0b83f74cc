use pcap_core::Error;

pub type CliResult<T> = Result<T, CliError>;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Core(#[from] Error),
}

impl CliError {
    /// 2 for unusable input, 3 for solver failure.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Core(e) if e.is_non_convergence() => 3,
            CliError::Core(Error::NegativeMeasure { .. }) => 3,
            CliError::Core(_) => 2,
        }
    }
}
