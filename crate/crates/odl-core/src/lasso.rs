//! Streaming lasso state: the cumulative estimate, the aggregated information
//! matrix, and the per-penalty candidate estimates used for adaptive tuning.
//!
//! On arrival of batch `b` the surrogate objective replaces the historical
//! deviance with its quadratic expansion around the previous estimate, so the
//! gradient is `-(J_agg (beta_prev - beta) + U_batch(beta)) / (2 N_b)` and
//! only `{beta_prev, J_agg}` survive from the past.

use ndarray::linalg::general_mat_vec_mul;
use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::error::{OdlError, Result};
use crate::glm::{batch_information, batch_score, Family};
use crate::prox::{prox_solve, ProxConfig, ProxOutcome};

/// Summary statistics of the stream after `batch_index` batches.
#[derive(Debug, Clone)]
pub struct LassoState {
    pub(crate) batch_index: usize,
    pub(crate) n_total: usize,
    pub(crate) beta_hat: Array1<f64>,
    pub(crate) info_agg: Array2<f64>,
    /// One-step-ahead estimates per grid penalty, ascending in lambda;
    /// scored against the next arriving batch for adaptive tuning.
    pub(crate) candidates: Vec<(f64, Array1<f64>)>,
}

impl LassoState {
    pub fn new(p: usize) -> Self {
        LassoState {
            batch_index: 0,
            n_total: 0,
            beta_hat: Array1::zeros(p),
            info_agg: Array2::zeros((p, p)),
            candidates: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.beta_hat.len()
    }

    pub fn batch_index(&self) -> usize {
        self.batch_index
    }

    pub fn n_total(&self) -> usize {
        self.n_total
    }

    pub fn beta_hat(&self) -> ArrayView1<'_, f64> {
        self.beta_hat.view()
    }

    pub fn info_agg(&self) -> &Array2<f64> {
        &self.info_agg
    }

    pub fn candidates(&self) -> &[(f64, Array1<f64>)] {
        &self.candidates
    }

    fn check_batch(&self, x: ArrayView2<f64>, y: ArrayView1<f64>) -> Result<()> {
        if x.ncols() != self.dim() {
            return Err(OdlError::DimensionMismatch {
                context: "batch width",
                expected: self.dim(),
                actual: x.ncols(),
            });
        }
        if y.len() != x.nrows() {
            return Err(OdlError::DimensionMismatch {
                context: "batch responses",
                expected: x.nrows(),
                actual: y.len(),
            });
        }
        Ok(())
    }

    /// Aggregated ascent gradient
    /// `U_tilde(beta) = J_agg (beta_hat - beta) + U_batch(beta)`.
    /// With an empty history this is exactly the batch score.
    pub fn aggregated_gradient(
        &self,
        family: Family,
        x: ArrayView2<f64>,
        y: ArrayView1<f64>,
        beta: ArrayView1<f64>,
    ) -> Result<Array1<f64>> {
        self.check_batch(x, y)?;
        let mut u = batch_score(family, x, y, beta)?;
        let diff = &self.beta_hat - &beta;
        general_mat_vec_mul(1.0, &self.info_agg, &diff, 1.0, &mut u);
        Ok(u)
    }

    /// Solves the batch-`b` surrogate problem at penalty `lambda`, warm
    /// started at the current estimate. Does not mutate the state.
    pub fn solve_surrogate(
        &self,
        family: Family,
        x: ArrayView2<f64>,
        y: ArrayView1<f64>,
        lambda: f64,
        config: &ProxConfig,
    ) -> Result<ProxOutcome> {
        self.check_batch(x, y)?;
        family.check_response(y)?;
        let n = x.nrows();
        let p = self.dim();
        let n_new = self.n_total + n;
        let scale = 1.0 / (2.0 * n_new as f64);

        let mut lin = Array1::<f64>::zeros(n);
        let mut resid = Array1::<f64>::zeros(n);
        let mut diff = Array1::<f64>::zeros(p);
        let mut domain_error: Option<OdlError> = None;

        let xt = x.t();
        let grad = |beta: ArrayView1<f64>, g: &mut Array1<f64>| {
            diff.assign(&beta);
            diff -= &self.beta_hat;
            general_mat_vec_mul(1.0, &self.info_agg, &diff, 0.0, g);
            general_mat_vec_mul(1.0, &x, &beta, 0.0, &mut lin);
            for ((r, &t), &yi) in resid.iter_mut().zip(lin.iter()).zip(y.iter()) {
                match family.link_mean(t) {
                    Ok(mu) => *r = yi - mu,
                    Err(e) => {
                        domain_error.get_or_insert(e);
                        *r = f64::NAN;
                    }
                }
            }
            general_mat_vec_mul(-1.0, &xt, &resid, 1.0, g);
            g.mapv_inplace(|v| v * scale);
        };

        match prox_solve(grad, self.beta_hat.view(), lambda, config) {
            Ok(outcome) => Ok(outcome),
            Err(err) => Err(domain_error.unwrap_or(err)),
        }
    }

    /// One-step-ahead solves for every penalty in `grid`, each from the same
    /// canonical state, returned in grid order.
    pub fn solve_grid(
        &self,
        family: Family,
        x: ArrayView2<f64>,
        y: ArrayView1<f64>,
        grid: &[f64],
        config: &ProxConfig,
    ) -> Result<Vec<(f64, ProxOutcome)>> {
        if grid.is_empty() {
            return Err(OdlError::Config("empty penalty grid".into()));
        }
        grid.iter()
            .map(|&lambda| Ok((lambda, self.solve_surrogate(family, x, y, lambda, config)?)))
            .collect()
    }

    /// Commits batch `b`: adopts `solution` as the new estimate, folds the
    /// batch information evaluated at it into the aggregate, and stores the
    /// candidate estimates for the next tuning step.
    pub fn commit(
        &mut self,
        family: Family,
        x: ArrayView2<f64>,
        y: ArrayView1<f64>,
        solution: Array1<f64>,
        candidates: Vec<(f64, Array1<f64>)>,
    ) -> Result<()> {
        self.check_batch(x, y)?;
        if solution.len() != self.dim() {
            return Err(OdlError::DimensionMismatch {
                context: "committed solution",
                expected: self.dim(),
                actual: solution.len(),
            });
        }
        let info = batch_information(family, x, solution.view())?;
        self.info_agg += &info;
        self.beta_hat = solution;
        self.n_total += x.nrows();
        self.batch_index += 1;
        self.candidates = candidates;
        Ok(())
    }

    /// Solve-and-commit at a single penalty (the non-tuned update path).
    pub fn update(
        &mut self,
        family: Family,
        x: ArrayView2<f64>,
        y: ArrayView1<f64>,
        lambda: f64,
        config: &ProxConfig,
    ) -> Result<ProxOutcome> {
        let outcome = self.solve_surrogate(family, x, y, lambda, config)?;
        let candidates = vec![(lambda, outcome.solution.clone())];
        self.commit(family, x, y, outcome.solution.clone(), candidates)?;
        Ok(outcome)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use ndarray::array;

    fn tight_config(eta: f64) -> ProxConfig {
        ProxConfig {
            learning_rate: eta,
            stop_tol: 1e-13,
            step_tol: 1e-13,
            max_iter: 2_000_000,
            penalty_mask: None,
        }
    }

    #[test]
    fn first_batch_gradient_is_batch_score() {
        let state = LassoState::new(2);
        let x = array![[1.0, 0.5], [0.3, -2.0], [0.0, 1.0]];
        let y = array![1.0, 0.0, 1.0];
        let beta = array![0.2, -0.1];
        let family = Family::bernoulli_logit();
        let agg = state
            .aggregated_gradient(family, x.view(), y.view(), beta.view())
            .unwrap();
        let score = batch_score(family, x.view(), y.view(), beta.view()).unwrap();
        for (a, s) in agg.iter().zip(score.iter()) {
            assert_relative_eq!(a, s);
        }
    }

    #[test]
    fn gradient_vanishes_at_previous_estimate_with_exact_fit() {
        let mut state = LassoState::new(2);
        let family = Family::gaussian_identity();
        let beta0 = array![1.0, -0.5];
        let x1 = array![[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]];
        let y1 = x1.dot(&beta0);
        state
            .update(family, x1.view(), y1.view(), 0.0, &tight_config(0.3))
            .unwrap();
        let x2 = array![[2.0, 1.0], [0.5, -1.0]];
        let y2 = x2.dot(&state.beta_hat().to_owned());
        let agg = state
            .aggregated_gradient(family, x2.view(), y2.view(), state.beta_hat())
            .unwrap();
        for v in agg.iter() {
            assert!(v.abs() < 1e-8, "gradient component {v}");
        }
    }

    #[test]
    fn huge_penalty_keeps_zero_solution() {
        let mut state = LassoState::new(3);
        let family = Family::bernoulli_logit();
        let x = array![[1.0, 0.2, -0.3], [-0.5, 1.0, 0.8], [0.1, -1.2, 0.4]];
        let y = array![1.0, 0.0, 1.0];
        state
            .update(family, x.view(), y.view(), 0.5, &ProxConfig::default())
            .unwrap();
        assert!(state.beta_hat().iter().all(|&v| v == 0.0));
        assert_eq!(state.batch_index(), 1);
        assert_eq!(state.n_total(), 3);
    }

    #[test]
    fn counters_accumulate_exactly() {
        let mut state = LassoState::new(2);
        let family = Family::gaussian_identity();
        let x = array![[1.0, 0.0], [0.0, 1.0]];
        let y = array![0.3, -0.2];
        for b in 1..=4 {
            state
                .update(family, x.view(), y.view(), 0.01, &ProxConfig::default())
                .unwrap();
            assert_eq!(state.batch_index(), b);
            assert_eq!(state.n_total(), 2 * b);
        }
    }

    #[test]
    fn batch_width_mismatch_rejected() {
        let mut state = LassoState::new(3);
        let x = array![[1.0, 2.0]];
        let y = array![1.0];
        assert!(matches!(
            state.update(
                Family::gaussian_identity(),
                x.view(),
                y.view(),
                0.0,
                &ProxConfig::default()
            ),
            Err(OdlError::DimensionMismatch { .. })
        ));
    }
}
