use serde_json::json;

/// Failure classes and their exit codes.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Numerical(String),
}

impl CliError {
    pub fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numerical(_) => 4,
        }
    }

    pub fn to_json_line(&self) -> String {
        let (kind, message) = match self {
            CliError::Usage(m) => ("usage", m),
            CliError::Data(m) => ("data", m),
            CliError::Numerical(m) => ("numerical", m),
        };
        json!({ "error": kind, "code": self.code(), "message": message }).to_string()
    }
}

impl From<kendall_reg::Error> for CliError {
    fn from(e: kendall_reg::Error) -> Self {
        use kendall_reg::Error as E;
        let msg = e.to_string();
        match e {
            E::Argument(_) => CliError::Usage(msg),
            E::DimensionMismatch { .. } | E::Degenerate(_) | E::EmptyNeighborhood { .. } => CliError::Data(msg),
            E::NonDifferentiable { .. }
            | E::Saturated { .. }
            | E::EstimationImpossible(_)
            | E::RankDeficient { .. } => CliError::Numerical(msg),
        }
    }
}
