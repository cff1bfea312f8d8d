//! Streaming estimation and inference for high-dimensional generalized
//! linear models.
//!
//! The engine consumes data in batches and keeps only summary statistics:
//! the running lasso estimate, the aggregated information matrix, and
//! per-coordinate projection/accumulator state. After every batch it emits,
//! for each tracked coordinate, the lasso estimate, a debiased estimate with
//! an online error-correction term, a standard error, a Wald confidence
//! interval, and a p-value. An offline reference stack (full-data lasso,
//! offline debiased records, IRLS maximum likelihood) and a Monte-Carlo
//! harness reproduce the accompanying simulation tables.

pub mod debias;
pub mod engine;
pub mod error;
pub mod glm;
pub mod lasso;
pub mod linalg;
pub mod normal;
pub mod offline;
pub mod projection;
pub mod prox;
pub mod sim;
pub mod snapshot;

pub use debias::{
    confidence_interval, debiased_estimate, standard_error, wald_pvalue, CoordAccumulator,
    InferenceRecord, VarianceMode,
};
pub use engine::{
    Batch, CoordOutcome, Engine, EngineConfig, KktStats, TrackedCoords, DEFAULT_LAMBDA_GRID,
    KKT_CERTIFICATE_TOL,
};
pub use error::{OdlError, Result};
pub use glm::{Family, FamilyKind};
pub use lasso::LassoState;
pub use offline::{cv_select_lambda, irls_mle, offline_debiased, offline_lasso, FullDataset, MleFit};
pub use projection::ProjectionState;
pub use prox::{prox_solve, soft_threshold, ProxConfig, ProxOutcome};
pub use sim::{
    build_beta0, generate_stream, run_replications, CoefGroup, MetricsTable, SigmaKind, SimConfig,
    SimOutput,
};
pub use snapshot::{restore, snapshot};
