//! Batch-arrival orchestration: adaptive penalty selection, the committed
//! lasso update, per-coordinate projections and accumulators, and the
//! per-batch inference records.
//!
//! Processing order on arrival of batch `b`:
//! 1. pick `lambda_b` — offline cross-validation on the first batch, then by
//!    scoring the stored one-step-ahead candidates on the incoming batch;
//! 2. solve the surrogate problem at every grid penalty from the canonical
//!    state and commit the selected one (estimate, aggregated information,
//!    counters, candidate store);
//! 3. for every tracked coordinate: projection at `lambda_b` from the updated
//!    information, residual column, scale, accumulator update, and the
//!    debiased estimate / standard error / CI / p-value.
//!
//! A single canonical chain is maintained; the per-penalty candidates are
//! one-step-ahead solves from it, kept only for the next tuning step.

use std::fmt;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rayon::prelude::*;
use serde::Serialize;

use crate::debias::{
    confidence_interval, debiased_estimate, standard_error, wald_pvalue, CoordAccumulator,
    InferenceRecord, VarianceMode,
};
use crate::error::{OdlError, Result};
use crate::glm::{mean_response, Family};
use crate::lasso::LassoState;
use crate::projection::{solve_projection, tau, ProjectionState};
use crate::prox::{kkt_residual, ProxConfig};

/// Grid used throughout the simulation studies.
pub const DEFAULT_LAMBDA_GRID: [f64; 4] = [1e-4, 1e-3, 0.01, 0.05];

/// Tolerance of the machine-checkable first-order certificates.
pub const KKT_CERTIFICATE_TOL: f64 = 1e-4;

/// Largest dimension for which "track everything" is the default.
pub const TRACK_ALL_LIMIT: usize = 600;

/// Which coordinates get projections, accumulators, and inference records.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TrackedCoords {
    /// All `p` coordinates (requires `p <= TRACK_ALL_LIMIT`).
    All,
    /// An explicit ascending set of zero-based coordinates.
    Set(Vec<usize>),
}

#[derive(Debug, Clone)]
pub struct EngineConfig {
    pub family: Family,
    /// Ascending nonnegative penalty grid.
    pub lambda_grid: Vec<f64>,
    pub prox: ProxConfig,
    pub tracked: TrackedCoords,
    pub ci_level: f64,
    pub variance_mode: VarianceMode,
    /// Treat coordinate 0 as an unpenalized intercept column.
    pub intercept: bool,
    /// Evaluate a KKT certificate after every solve (cheap; one extra
    /// gradient evaluation).
    pub check_kkt: bool,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            family: Family::bernoulli_logit(),
            lambda_grid: DEFAULT_LAMBDA_GRID.to_vec(),
            prox: ProxConfig::default(),
            tracked: TrackedCoords::All,
            ci_level: 0.95,
            variance_mode: VarianceMode::AsWritten,
            intercept: false,
            check_kkt: false,
        }
    }
}

/// One arriving data block.
#[derive(Debug, Clone)]
pub struct Batch {
    pub x: Array2<f64>,
    pub y: Array1<f64>,
}

impl Batch {
    pub fn new(x: Array2<f64>, y: Array1<f64>) -> Result<Self> {
        if x.nrows() != y.len() {
            return Err(OdlError::DimensionMismatch {
                context: "batch rows vs responses",
                expected: x.nrows(),
                actual: y.len(),
            });
        }
        Ok(Batch { x, y })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }
}

/// Outcome for one tracked coordinate in one batch.
#[derive(Debug, Clone)]
pub enum CoordOutcome {
    Record(InferenceRecord),
    Failed {
        coord: usize,
        batch_index: usize,
        reason: String,
    },
}

impl CoordOutcome {
    pub fn record(&self) -> Option<&InferenceRecord> {
        match self {
            CoordOutcome::Record(r) => Some(r),
            CoordOutcome::Failed { .. } => None,
        }
    }

    pub fn coord(&self) -> usize {
        match self {
            CoordOutcome::Record(r) => r.coord,
            CoordOutcome::Failed { coord, .. } => *coord,
        }
    }
}

/// Certificate and solver bookkeeping across all internal solves.
#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct KktStats {
    pub solves: u64,
    pub converged: u64,
    pub unconverged: u64,
    pub checked: u64,
    pub violations: u64,
    pub max_residual: f64,
    pub solver_failures: u64,
}

impl KktStats {
    fn absorb_check(&mut self, residual: f64) {
        self.checked += 1;
        if residual > KKT_CERTIFICATE_TOL {
            self.violations += 1;
        }
        if residual > self.max_residual {
            self.max_residual = residual;
        }
    }

    fn merge(&mut self, other: &KktStats) {
        self.solves += other.solves;
        self.converged += other.converged;
        self.unconverged += other.unconverged;
        self.checked += other.checked;
        self.violations += other.violations;
        self.max_residual = self.max_residual.max(other.max_residual);
        self.solver_failures += other.solver_failures;
    }
}

struct CoordState {
    projection: ProjectionState,
    accumulator: CoordAccumulator,
}

/// The streaming model: one instance per fitted stream, single writer.
pub struct Engine {
    config: EngineConfig,
    p: usize,
    tracked: Vec<usize>,
    lasso: LassoState,
    coords: Vec<CoordState>,
    lambda_history: Vec<f64>,
    kkt: KktStats,
    warnings: Vec<String>,
    lasso_prox: ProxConfig,
    projection_prox: ProxConfig,
}

impl fmt::Debug for Engine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Engine")
            .field("p", &self.p)
            .field("batch_index", &self.lasso.batch_index())
            .field("n_total", &self.lasso.n_total())
            .field("tracked", &self.tracked.len())
            .finish()
    }
}

impl Engine {
    pub fn new(config: EngineConfig, p: usize) -> Result<Self> {
        if p == 0 {
            return Err(OdlError::Config("p must be positive".into()));
        }
        if config.lambda_grid.is_empty() {
            return Err(OdlError::Config("lambda grid must be nonempty".into()));
        }
        if config
            .lambda_grid
            .windows(2)
            .any(|w| !(w[0] < w[1]))
        {
            return Err(OdlError::Config(
                "lambda grid must be strictly ascending".into(),
            ));
        }
        if config.lambda_grid[0] < 0.0 {
            return Err(OdlError::Config("lambda grid must be nonnegative".into()));
        }
        if !(config.ci_level > 0.0 && config.ci_level < 1.0) {
            return Err(OdlError::Config(format!(
                "ci level must be in (0, 1), got {}",
                config.ci_level
            )));
        }
        let tracked = match &config.tracked {
            TrackedCoords::All => {
                if p > TRACK_ALL_LIMIT {
                    return Err(OdlError::Config(format!(
                        "p = {p} exceeds {TRACK_ALL_LIMIT}; tracked coordinates must be given explicitly"
                    )));
                }
                (0..p).collect::<Vec<_>>()
            }
            TrackedCoords::Set(set) => {
                let mut set = set.clone();
                set.sort_unstable();
                set.dedup();
                if let Some(&max) = set.last() {
                    if max >= p {
                        return Err(OdlError::Config(format!(
                            "tracked coordinate {max} out of range for p = {p}"
                        )));
                    }
                }
                set
            }
        };

        let mut lasso_prox = config.prox.clone();
        if config.intercept {
            let mut mask = lasso_prox
                .penalty_mask
                .clone()
                .unwrap_or_else(|| vec![true; p]);
            if mask.len() != p {
                return Err(OdlError::DimensionMismatch {
                    context: "penalty_mask",
                    expected: p,
                    actual: mask.len(),
                });
            }
            mask[0] = false;
            lasso_prox.penalty_mask = Some(mask);
        }
        lasso_prox.validate(p)?;
        let projection_prox = ProxConfig {
            penalty_mask: None,
            ..config.prox.clone()
        };

        let coords = tracked
            .iter()
            .map(|&r| CoordState {
                projection: ProjectionState::new(r, p),
                accumulator: CoordAccumulator::new(r, p),
            })
            .collect();

        Ok(Engine {
            config,
            p,
            tracked,
            lasso: LassoState::new(p),
            coords,
            lambda_history: Vec::new(),
            kkt: KktStats::default(),
            warnings: Vec::new(),
            lasso_prox,
            projection_prox,
        })
    }

    pub fn dim(&self) -> usize {
        self.p
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn batch_index(&self) -> usize {
        self.lasso.batch_index()
    }

    pub fn n_total(&self) -> usize {
        self.lasso.n_total()
    }

    pub fn lasso(&self) -> &LassoState {
        &self.lasso
    }

    pub fn tracked(&self) -> &[usize] {
        &self.tracked
    }

    pub fn lambda_history(&self) -> &[f64] {
        &self.lambda_history
    }

    pub fn kkt_stats(&self) -> &KktStats {
        &self.kkt
    }

    pub fn take_warnings(&mut self) -> Vec<String> {
        std::mem::take(&mut self.warnings)
    }

    pub(crate) fn parts(
        &self,
    ) -> (
        &EngineConfig,
        &LassoState,
        Vec<(usize, &ProjectionState, &CoordAccumulator)>,
        &[f64],
    ) {
        let coords = self
            .tracked
            .iter()
            .zip(self.coords.iter())
            .map(|(&r, c)| (r, &c.projection, &c.accumulator))
            .collect();
        (&self.config, &self.lasso, coords, &self.lambda_history)
    }

    pub(crate) fn from_parts(
        config: EngineConfig,
        p: usize,
        lasso: LassoState,
        coords: Vec<(ProjectionState, CoordAccumulator)>,
        lambda_history: Vec<f64>,
    ) -> Result<Self> {
        let mut engine = Engine::new(config, p)?;
        if coords.len() != engine.coords.len() {
            return Err(OdlError::Snapshot(format!(
                "tracked coordinate count mismatch: {} vs {}",
                coords.len(),
                engine.coords.len()
            )));
        }
        engine.lasso = lasso;
        engine.coords = coords
            .into_iter()
            .map(|(projection, accumulator)| CoordState {
                projection,
                accumulator,
            })
            .collect();
        engine.lambda_history = lambda_history;
        Ok(engine)
    }

    /// Prediction error of a candidate estimate on the incoming batch,
    /// `PE = ||y - g(X beta_candidate)||_2^2 / n`.
    fn prediction_error(
        &self,
        x: ArrayView2<f64>,
        y: ArrayView1<f64>,
        candidate: ArrayView1<f64>,
    ) -> Result<f64> {
        let mu = mean_response(self.config.family, x, candidate)?;
        let n = y.len() as f64;
        Ok(y.iter()
            .zip(mu.iter())
            .map(|(&yi, &mi)| (yi - mi) * (yi - mi))
            .sum::<f64>()
            / n)
    }

    /// Index into the grid minimizing prediction error of the stored
    /// candidates on the incoming batch; ties break toward the larger
    /// penalty.
    fn select_lambda(&self, x: ArrayView2<f64>, y: ArrayView1<f64>) -> Result<usize> {
        debug_assert!(!self.lasso.candidates().is_empty());
        let mut best = f64::INFINITY;
        let mut best_idx = 0;
        for (idx, (_, candidate)) in self.lasso.candidates().iter().enumerate() {
            let pe = self.prediction_error(x, y, candidate.view())?;
            if pe <= best {
                best = pe;
                best_idx = idx;
            }
        }
        Ok(best_idx)
    }

    /// K-fold (K = 5, index-stride folds) cross-validated deviance over the
    /// grid on the first batch; falls back to leave-one-out when the batch
    /// is smaller than K. Ties break toward the larger penalty.
    fn initial_lambda(&mut self, x: ArrayView2<f64>, y: ArrayView1<f64>) -> Result<usize> {
        let n = x.nrows();
        let mut k = 5usize.min(n);
        if n < 5 {
            self.warnings
                .push(format!("first batch has {n} rows; using leave-one-out"));
            k = n;
        }
        let family = self.config.family;

        let mut best = f64::INFINITY;
        let mut best_idx = 0;
        for (idx, &lambda) in self.config.lambda_grid.iter().enumerate() {
            let mut total = 0.0;
            for fold in 0..k {
                let train_rows: Vec<usize> = (0..n).filter(|i| i % k != fold).collect();
                let test_rows: Vec<usize> = (0..n).filter(|i| i % k == fold).collect();
                if test_rows.is_empty() {
                    continue;
                }
                let beta = if train_rows.is_empty() {
                    Array1::zeros(self.p)
                } else {
                    let xt = select_rows(x, &train_rows);
                    let yt = select_elems(y, &train_rows);
                    let state = LassoState::new(self.p);
                    state
                        .solve_surrogate(family, xt.view(), yt.view(), lambda, &self.lasso_prox)?
                        .solution
                };
                for &i in &test_rows {
                    let t = x.row(i).dot(&beta);
                    let mu = family.link_mean(t)?;
                    total += family.unit_deviance(y[i], mu);
                }
            }
            if total <= best {
                best = total;
                best_idx = idx;
            }
        }
        Ok(best_idx)
    }

    /// Processes one arriving batch and returns one outcome per tracked
    /// coordinate, in ascending coordinate order. The batch is consumed; no
    /// reference to its raw data survives the call.
    pub fn process_batch(&mut self, batch: Batch) -> Result<Vec<CoordOutcome>> {
        let Batch { x, y } = batch;
        if x.ncols() != self.p {
            return Err(OdlError::DimensionMismatch {
                context: "batch width",
                expected: self.p,
                actual: x.ncols(),
            });
        }
        if x.nrows() != y.len() {
            return Err(OdlError::DimensionMismatch {
                context: "batch rows vs responses",
                expected: x.nrows(),
                actual: y.len(),
            });
        }
        if x.nrows() == 0 {
            self.warnings.push(format!(
                "batch after index {} is empty; skipped as a no-op",
                self.lasso.batch_index()
            ));
            return Ok(Vec::new());
        }
        self.config.family.check_response(y.view())?;

        let lambda_idx = if self.lasso.batch_index() == 0 {
            let n1 = x.nrows() as f64;
            if n1 < (self.p as f64).ln() {
                self.warnings.push(format!(
                    "first batch size {} is below log p = {:.2}; estimates may be unstable",
                    x.nrows(),
                    (self.p as f64).ln()
                ));
            }
            self.initial_lambda(x.view(), y.view())?
        } else {
            self.select_lambda(x.view(), y.view())?
        };
        let lambda_b = self.config.lambda_grid[lambda_idx];

        // One-step candidates for every grid penalty from the canonical
        // state; the selected one is committed below.
        let family = self.config.family;
        let outcomes = self.lasso.solve_grid(
            family,
            x.view(),
            y.view(),
            &self.config.lambda_grid,
            &self.lasso_prox,
        )?;

        let n_new = self.lasso.n_total() + x.nrows();
        for (lambda, outcome) in &outcomes {
            self.kkt.solves += 1;
            if outcome.converged {
                self.kkt.converged += 1;
            } else {
                self.kkt.unconverged += 1;
            }
            if self.config.check_kkt && outcome.converged {
                let u = self.lasso.aggregated_gradient(
                    family,
                    x.view(),
                    y.view(),
                    outcome.solution.view(),
                )?;
                let grad = u.mapv(|v| -v / (2.0 * n_new as f64));
                let residual = kkt_residual(
                    grad.view(),
                    outcome.solution.view(),
                    *lambda,
                    self.lasso_prox.penalty_mask.as_deref(),
                );
                self.kkt.absorb_check(residual);
            }
        }

        let committed = outcomes[lambda_idx].1.solution.clone();
        let candidates: Vec<(f64, Array1<f64>)> = outcomes
            .into_iter()
            .map(|(lambda, outcome)| (lambda, outcome.solution))
            .collect();
        self.lasso
            .commit(family, x.view(), y.view(), committed, candidates)?;
        self.lambda_history.push(lambda_b);

        let batch_index = self.lasso.batch_index();
        let info = &self.lasso.info_agg;
        let beta = &self.lasso.beta_hat;
        let n_total = self.lasso.n_total();
        let proj_config = &self.projection_prox;
        let check_kkt = self.config.check_kkt;
        let ci_level = self.config.ci_level;
        let variance_mode = self.config.variance_mode;
        let x_view = x.view();
        let y_view = y.view();

        let results: Vec<(CoordOutcome, KktStats)> = self
            .coords
            .par_iter_mut()
            .map(|state| {
                let r = state.accumulator.coord;
                let mut stats = KktStats::default();

                stats.solves += 1;
                let solve = solve_projection(
                    info,
                    n_total,
                    lambda_b,
                    r,
                    state.projection.gamma.view(),
                    proj_config,
                );
                let solve_error = match solve {
                    Ok(outcome) => {
                        if outcome.converged {
                            stats.converged += 1;
                        } else {
                            stats.unconverged += 1;
                        }
                        if check_kkt && outcome.converged {
                            let ext = crate::projection::embed_gamma(
                                outcome.solution.view(),
                                r,
                            );
                            let jg = info.dot(&ext);
                            let mut grad = Array1::<f64>::zeros(outcome.solution.len());
                            for (k, gk) in grad.iter_mut().enumerate() {
                                let idx = if k < r { k } else { k + 1 };
                                *gk = jg[idx] / n_total as f64;
                            }
                            stats.absorb_check(kkt_residual(
                                grad.view(),
                                outcome.solution.view(),
                                lambda_b,
                                None,
                            ));
                        }
                        state.projection.gamma = outcome.solution;
                        None
                    }
                    Err(err) => {
                        stats.solver_failures += 1;
                        Some(err.to_string())
                    }
                };

                // accumulate with the adopted (or, on solver failure, the
                // previous) projection so later batches stay coherent
                if let Err(err) = state.accumulator.accumulate(
                    family,
                    x_view,
                    y_view,
                    beta.view(),
                    state.projection.gamma.view(),
                ) {
                    return (
                        CoordOutcome::Failed {
                            coord: r,
                            batch_index,
                            reason: err.to_string(),
                        },
                        stats,
                    );
                }

                if let Some(reason) = solve_error {
                    return (
                        CoordOutcome::Failed {
                            coord: r,
                            batch_index,
                            reason,
                        },
                        stats,
                    );
                }

                let tau_r = match tau(info, state.projection.gamma.view(), r, n_total) {
                    Ok(t) => t,
                    Err(err) => {
                        return (
                            CoordOutcome::Failed {
                                coord: r,
                                batch_index,
                                reason: err.to_string(),
                            },
                            stats,
                        )
                    }
                };

                let est = debiased_estimate(&state.accumulator, beta.view(), tau_r);
                let se = standard_error(&state.accumulator, tau_r, variance_mode);
                let (ci_low, ci_high) = confidence_interval(est, se, ci_level);
                let p_value = wald_pvalue(est, se);
                (
                    CoordOutcome::Record(InferenceRecord {
                        batch_index,
                        coord: r,
                        beta_lasso: beta[r],
                        beta_debiased: est,
                        se,
                        ci_low,
                        ci_high,
                        p_value,
                        lambda_used: lambda_b,
                    }),
                    stats,
                )
            })
            .collect();

        let mut outcomes = Vec::with_capacity(results.len());
        for (outcome, stats) in results {
            self.kkt.merge(&stats);
            outcomes.push(outcome);
        }
        Ok(outcomes)
    }
}

fn select_rows(x: ArrayView2<f64>, rows: &[usize]) -> Array2<f64> {
    let mut out = Array2::zeros((rows.len(), x.ncols()));
    for (k, &i) in rows.iter().enumerate() {
        out.row_mut(k).assign(&x.row(i));
    }
    out
}

fn select_elems(y: ArrayView1<f64>, rows: &[usize]) -> Array1<f64> {
    rows.iter().map(|&i| y[i]).collect()
}
