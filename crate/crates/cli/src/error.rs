use std::fmt;

#[derive(Debug)]
pub enum CliError {
    /// Unparseable or inconsistent configuration.
    Config(String),
    /// The optimizer stopped on MaxIters or StepUnderflow.
    NotConverged(String),
    /// Analytic and finite-difference gradients disagree.
    GradcheckFailed(f64),
    Io(std::io::Error),
    Run(opengrape::GrapeError),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::NotConverged(_) => 3,
            CliError::GradcheckFailed(_) => 4,
            CliError::Io(_) | CliError::Run(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "invalid config: {m}"),
            CliError::NotConverged(m) => write!(f, "optimizer did not converge: {m}"),
            CliError::GradcheckFailed(e) => write!(f, "gradient check failed: max relative error {e:.3e} exceeds 1e-5"),
            CliError::Io(e) => write!(f, "i/o error: {e}"),
            CliError::Run(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e)
    }
}

impl From<opengrape::GrapeError> for CliError {
    fn from(e: opengrape::GrapeError) -> Self {
        CliError::Run(e)
    }
}
