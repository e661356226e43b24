use thiserror::Error;

/// Errors raised by the simulators and the experiment runner.
#[derive(Debug, Error)]
pub enum Error {
    /// A parameter or input violates a documented precondition.
    #[error("invalid input: {0}")]
    Invalid(String),

    /// The requested computation exceeds a memory or work budget.
    #[error("resource limit: {0}")]
    Resource(String),

    /// Critical-value bracketing did not find a sign change of `p - theta`.
    #[error("bracketing failed after {} probes: {}", .grid.len(), format_grid(.grid))]
    Bracket { grid: Vec<(f64, f64)> },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

fn format_grid(grid: &[(f64, f64)]) -> String {
    grid.iter()
        .map(|(l, p)| format!("lambda={l:.5} p={p:.4}"))
        .collect::<Vec<_>>()
        .join(", ")
}

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Invalid(msg.into()))
}
