use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Bad caller-supplied data: mismatched lengths, empty windows, out of range indices.
    #[error("invalid input: {0}")]
    Input(String),

    /// A scenario, schedule or parameter record that violates its invariants.
    #[error("configuration error: {0}")]
    Config(String),

    #[error("rank-deficient regressor matrix for {equation} (condition number {condition:.3e})")]
    RankDeficient {
        equation: &'static str,
        condition: f64,
    },

    #[error("degenerate fixed point: 1 - gamma4 - gamma5 = {0:e}")]
    Degenerate(f64),

    #[error("brute-force search refused: control horizon {0} exceeds 2")]
    BruteForceRefused(usize),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
