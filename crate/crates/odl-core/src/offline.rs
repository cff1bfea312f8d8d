//! Offline references: full-data lasso, the offline debiased record (the
//! single-batch specialization of the streaming path, where the error
//! correction term vanishes identically), cross-validated penalty selection,
//! and IRLS maximum likelihood. These back the comparison columns of the
//! simulation tables and the oracle equivalence tests.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::debias::{
    confidence_interval, debiased_estimate, standard_error, wald_pvalue, CoordAccumulator,
    InferenceRecord, VarianceMode,
};
use crate::engine::CoordOutcome;
use crate::error::{OdlError, Result};
use crate::glm::{batch_deviance, batch_information, batch_score, mean_response, Family};
use crate::lasso::LassoState;
use crate::linalg::{cholesky, cholesky_inverse_diagonal, cholesky_solve};
use crate::projection::{solve_projection, tau};
use crate::prox::{ProxConfig, ProxOutcome};

/// Concatenation of every batch seen so far.
#[derive(Debug, Clone)]
pub struct FullDataset {
    pub x: Array2<f64>,
    pub y: Array1<f64>,
}

impl FullDataset {
    pub fn new(x: Array2<f64>, y: Array1<f64>) -> Result<Self> {
        if x.nrows() != y.len() {
            return Err(OdlError::DimensionMismatch {
                context: "dataset rows vs responses",
                expected: x.nrows(),
                actual: y.len(),
            });
        }
        Ok(FullDataset { x, y })
    }

    pub fn from_batches<'a, I>(batches: I) -> Result<Self>
    where
        I: IntoIterator<Item = (ArrayView2<'a, f64>, ArrayView1<'a, f64>)>,
    {
        let mut xs: Vec<Array2<f64>> = Vec::new();
        let mut ys: Vec<f64> = Vec::new();
        for (x, y) in batches {
            xs.push(x.to_owned());
            ys.extend(y.iter().copied());
        }
        let p = xs.first().map_or(0, |x| x.ncols());
        let n = ys.len();
        let mut x_all = Array2::zeros((n, p));
        let mut row = 0;
        for x in &xs {
            for i in 0..x.nrows() {
                x_all.row_mut(row).assign(&x.row(i));
                row += 1;
            }
        }
        FullDataset::new(x_all, Array1::from_vec(ys))
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }
}

/// Full-data lasso through the same proximal machinery as the online path
/// (identical to the online update with an empty history).
pub fn offline_lasso(
    data: &FullDataset,
    lambda: f64,
    family: Family,
    config: &ProxConfig,
) -> Result<ProxOutcome> {
    let state = LassoState::new(data.p());
    state.solve_surrogate(family, data.x.view(), data.y.view(), lambda, config)
}

/// Offline debiased record per tracked coordinate: the whole dataset is
/// treated as a single batch, so the error-correction term is exactly zero.
pub fn offline_debiased(
    data: &FullDataset,
    lambda: f64,
    family: Family,
    config: &ProxConfig,
    tracked: &[usize],
    ci_level: f64,
    variance_mode: VarianceMode,
) -> Result<Vec<CoordOutcome>> {
    let p = data.p();
    let n = data.n();
    let beta = offline_lasso(data, lambda, family, config)?.solution;
    let info = batch_information(family, data.x.view(), beta.view())?;
    let proj_config = ProxConfig {
        penalty_mask: None,
        ..config.clone()
    };

    let mut out = Vec::with_capacity(tracked.len());
    for &r in tracked {
        let solve = solve_projection(
            &info,
            n,
            lambda,
            r,
            Array1::zeros(p - 1).view(),
            &proj_config,
        );
        let gamma = match solve {
            Ok(o) => o.solution,
            Err(err) => {
                out.push(CoordOutcome::Failed {
                    coord: r,
                    batch_index: 1,
                    reason: err.to_string(),
                });
                continue;
            }
        };
        let mut acc = CoordAccumulator::new(r, p);
        acc.accumulate(
            family,
            data.x.view(),
            data.y.view(),
            beta.view(),
            gamma.view(),
        )?;
        let tau_r = match tau(&info, gamma.view(), r, n) {
            Ok(t) => t,
            Err(err) => {
                out.push(CoordOutcome::Failed {
                    coord: r,
                    batch_index: 1,
                    reason: err.to_string(),
                });
                continue;
            }
        };
        let est = debiased_estimate(&acc, beta.view(), tau_r);
        let se = standard_error(&acc, tau_r, variance_mode);
        let (ci_low, ci_high) = confidence_interval(est, se, ci_level);
        out.push(CoordOutcome::Record(InferenceRecord {
            batch_index: 1,
            coord: r,
            beta_lasso: beta[r],
            beta_debiased: est,
            se,
            ci_low,
            ci_high,
            p_value: wald_pvalue(est, se),
            lambda_used: lambda,
        }));
    }
    Ok(out)
}

/// K-fold cross-validated deviance over a penalty grid (index-stride folds,
/// ties toward the larger penalty). Used for the first-batch selection and
/// for the offline comparison column.
pub fn cv_select_lambda(
    x: ArrayView2<f64>,
    y: ArrayView1<f64>,
    grid: &[f64],
    family: Family,
    config: &ProxConfig,
    folds: usize,
) -> Result<usize> {
    if grid.is_empty() {
        return Err(OdlError::Config("empty penalty grid".into()));
    }
    let n = x.nrows();
    let k = folds.max(1).min(n.max(1));
    let p = x.ncols();
    let mut best = f64::INFINITY;
    let mut best_idx = 0;
    for (idx, &lambda) in grid.iter().enumerate() {
        let mut total = 0.0;
        for fold in 0..k {
            let train: Vec<usize> = (0..n).filter(|i| i % k != fold).collect();
            let test: Vec<usize> = (0..n).filter(|i| i % k == fold).collect();
            if test.is_empty() {
                continue;
            }
            let beta = if train.is_empty() {
                Array1::zeros(p)
            } else {
                let mut xt = Array2::zeros((train.len(), p));
                let mut yt = Array1::zeros(train.len());
                for (kk, &i) in train.iter().enumerate() {
                    xt.row_mut(kk).assign(&x.row(i));
                    yt[kk] = y[i];
                }
                LassoState::new(p)
                    .solve_surrogate(family, xt.view(), yt.view(), lambda, config)?
                    .solution
            };
            for &i in &test {
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

/// IRLS maximum-likelihood fit.
#[derive(Debug, Clone)]
pub struct MleFit {
    pub beta: Array1<f64>,
    /// Wald standard errors from the inverse observed information diagonal;
    /// NaN when the information never factorized.
    pub se: Array1<f64>,
    pub converged: bool,
    pub iterations: usize,
    /// Magnitude of the estimate, reported so separation shows up in tables.
    pub max_abs_beta: f64,
    pub singular_information: bool,
}

const IRLS_MAX_ITER: usize = 100;
const IRLS_MAX_HALVINGS: usize = 20;
const IRLS_TOL: f64 = 1e-10;

/// Newton-Raphson / IRLS with step halving. Non-convergence and separation
/// are reported through the flags, never as an error.
pub fn irls_mle(data: &FullDataset, family: Family) -> Result<MleFit> {
    let p = data.p();
    family.check_response(data.y.view())?;
    let mut beta = Array1::<f64>::zeros(p);
    let mut deviance = batch_deviance(family, data.x.view(), data.y.view(), beta.view())?;
    let mut converged = false;
    let mut iterations = 0;
    let mut singular = false;
    let mut last_factor: Option<Array2<f64>> = None;

    for iter in 0..IRLS_MAX_ITER {
        iterations = iter + 1;
        let score = batch_score(family, data.x.view(), data.y.view(), beta.view())?;
        let info = batch_information(family, data.x.view(), beta.view())?;
        let factor = match cholesky(info.view()) {
            Some(l) => l,
            None => {
                singular = true;
                break;
            }
        };
        let delta = cholesky_solve(factor.view(), score.view());
        last_factor = Some(factor);

        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..=IRLS_MAX_HALVINGS {
            let candidate = &beta + &delta.mapv(|d| d * scale);
            match batch_deviance(family, data.x.view(), data.y.view(), candidate.view()) {
                Ok(dev) if dev.is_finite() && dev <= deviance + 1e-12 => {
                    beta = candidate;
                    deviance = dev;
                    accepted = true;
                    break;
                }
                _ => scale *= 0.5,
            }
        }
        if !accepted {
            break;
        }

        let step = delta.iter().map(|d| (d * scale).abs()).fold(0.0, f64::max);
        if step <= IRLS_TOL * (1.0 + beta.iter().fold(0.0f64, |a, &b| a.max(b.abs()))) {
            converged = true;
            break;
        }
    }

    // standard errors from the information at the final estimate when it
    // factorizes, else from the last successful factorization
    let se = match batch_information(family, data.x.view(), beta.view())
        .ok()
        .and_then(|info| cholesky(info.view()))
        .or(last_factor)
    {
        Some(l) => cholesky_inverse_diagonal(l.view()).mapv(f64::sqrt),
        None => {
            singular = true;
            Array1::from_elem(p, f64::NAN)
        }
    };

    let max_abs_beta = beta.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
    Ok(MleFit {
        beta,
        se,
        converged,
        iterations,
        max_abs_beta,
        singular_information: singular,
    })
}

/// Mean response helper reused by the tables.
pub fn fitted_means(data: &FullDataset, family: Family, beta: ArrayView1<f64>) -> Result<Array1<f64>> {
    mean_response(family, data.x.view(), beta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use ndarray::array;

    fn tight(eta: f64) -> ProxConfig {
        ProxConfig {
            learning_rate: eta,
            stop_tol: 1e-13,
            step_tol: 1e-13,
            max_iter: 2_000_000,
            penalty_mask: None,
        }
    }

    #[test]
    fn zero_penalty_gaussian_matches_ols() {
        let x = array![
            [1.0, 0.2],
            [0.4, -1.0],
            [-0.7, 0.5],
            [1.2, 0.9],
            [0.3, -0.4],
            [-1.1, 0.6]
        ];
        let beta0 = array![0.8, -0.5];
        let y = x.dot(&beta0) + array![0.01, -0.02, 0.005, 0.0, -0.01, 0.02];
        let data = FullDataset::new(x.clone(), y.clone()).unwrap();
        let fit = offline_lasso(&data, 0.0, Family::gaussian_identity(), &tight(0.3)).unwrap();
        // normal equations oracle
        let gram = x.t().dot(&x);
        let l = cholesky(gram.view()).unwrap();
        let ols = cholesky_solve(l.view(), x.t().dot(&y).view());
        for (a, b) in fit.solution.iter().zip(ols.iter()) {
            assert_relative_eq!(a, b, epsilon = 1e-8);
        }
    }

    #[test]
    fn huge_penalty_gives_zero_vector() {
        let x = array![[1.0, 0.2], [0.4, -1.0], [-0.7, 0.5]];
        let y = array![1.0, 0.0, 1.0];
        let data = FullDataset::new(x, y).unwrap();
        let fit = offline_lasso(&data, 10.0, Family::bernoulli_logit(), &ProxConfig::default())
            .unwrap();
        assert!(fit.solution.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn irls_gaussian_is_ols_in_one_step() {
        let x = array![
            [1.0, 0.2],
            [0.4, -1.0],
            [-0.7, 0.5],
            [1.2, 0.9],
            [0.3, -0.4]
        ];
        let y = array![0.7, -0.6, 0.2, 1.4, 0.1];
        let data = FullDataset::new(x.clone(), y.clone()).unwrap();
        let fit = irls_mle(&data, Family::gaussian_identity()).unwrap();
        assert!(fit.converged);
        let gram = x.t().dot(&x);
        let l = cholesky(gram.view()).unwrap();
        let ols = cholesky_solve(l.view(), x.t().dot(&y).view());
        for (a, b) in fit.beta.iter().zip(ols.iter()) {
            assert_relative_eq!(a, b, epsilon = 1e-10);
        }
    }

    #[test]
    fn irls_flags_separated_logistic_data() {
        // two points, perfectly separated by the sign of x
        let x = array![[1.0], [-1.0]];
        let y = array![1.0, 0.0];
        let data = FullDataset::new(x, y).unwrap();
        let fit = irls_mle(&data, Family::bernoulli_logit()).unwrap();
        assert!(!fit.converged);
        assert!(fit.max_abs_beta > 5.0);
    }

    #[test]
    fn cv_singleton_grid_returns_it() {
        let x = array![[1.0, 0.2], [0.4, -1.0], [-0.7, 0.5], [1.2, 0.9], [0.3, -0.4]];
        let y = array![1.0, 0.0, 1.0, 1.0, 0.0];
        let idx = cv_select_lambda(
            x.view(),
            y.view(),
            &[0.05],
            Family::bernoulli_logit(),
            &ProxConfig::default(),
            5,
        )
        .unwrap();
        assert_eq!(idx, 0);
    }
}
