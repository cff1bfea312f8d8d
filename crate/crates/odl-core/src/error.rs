use thiserror::Error;

/// Errors surfaced by the estimation and inference primitives.
#[derive(Debug, Clone, Error)]
pub enum OdlError {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("linear predictor {value} outside overflow guard |t| <= {limit} for {family}")]
    LinkDomain {
        family: &'static str,
        value: f64,
        limit: f64,
    },

    #[error("response value {value} at row {row} outside the {family} domain")]
    ResponseDomain {
        family: &'static str,
        row: usize,
        value: f64,
    },

    #[error("non-finite gradient at iteration {iteration}")]
    NonFiniteGradient { iteration: usize },

    #[error("proximal iteration diverging: step norm grew {streak} consecutive iterations (at iteration {iteration})")]
    Diverged { iteration: usize, streak: usize },

    #[error("degenerate projection for coordinate {coord}: tau {tau:e} at or below floor {floor:e}")]
    DegenerateProjection { coord: usize, tau: f64, floor: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("snapshot error: {0}")]
    Snapshot(String),
}

pub type Result<T> = std::result::Result<T, OdlError>;
