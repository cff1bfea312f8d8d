//! Per-coordinate summary-statistic accumulators and the debiased estimate,
//! standard error, confidence interval, and Wald p-value built from them.
//!
//! For coordinate `r`, with `z` the residualized column and `gamma_ext` the
//! extended projection vector (-1 in slot `r`), each batch `j` contributes
//!
//! * `s1  += z' (y - g(X beta_j))`
//! * `S   += gamma_ext' J_j(beta_j)`          (row vector, length p)
//! * `s2  += gamma_ext' J_j(beta_j) beta_j`
//! * `v   += (z' (y - g(X beta_j)))^2`
//!
//! so the debiased estimate at batch `b` is
//! `beta_r + (s1 + S . beta_b - s2) / tau`, where `S . beta_b - s2`
//! telescopes the correction `sum_j gamma_ext' J_j (beta_b - beta_j)`.
//!
//! `v` above is the published batch-level rank-one form. The per-observation
//! variant `sum_j sum_i z_i^2 (y_i - g_i)^2` is accumulated alongside and
//! selected by [`VarianceMode`].

use ndarray::{Array1, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{OdlError, Result};
use crate::glm::{mean_response, Family};
use crate::normal::{standard_normal_quantile, standard_normal_sf};

/// Which accumulated variance feeds the standard error.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum VarianceMode {
    /// Batch-level rank-one quadratic, exactly as displayed in the source
    /// derivation.
    #[default]
    AsWritten,
    /// Individual-level sum of squared weighted residuals.
    PerObservation,
}

impl VarianceMode {
    pub fn name(&self) -> &'static str {
        match self {
            VarianceMode::AsWritten => "as-written",
            VarianceMode::PerObservation => "per-observation",
        }
    }
}

/// Running summary statistics for one tracked coordinate.
#[derive(Debug, Clone)]
pub struct CoordAccumulator {
    pub coord: usize,
    pub s1: f64,
    pub s2: f64,
    pub s_row: Array1<f64>,
    /// Batch-level variance accumulator.
    pub v: f64,
    /// Per-observation variance accumulator.
    pub v_obs: f64,
}

impl CoordAccumulator {
    pub fn new(coord: usize, p: usize) -> Self {
        CoordAccumulator {
            coord,
            s1: 0.0,
            s2: 0.0,
            s_row: Array1::zeros(p),
            v: 0.0,
            v_obs: 0.0,
        }
    }

    pub fn variance(&self, mode: VarianceMode) -> f64 {
        match mode {
            VarianceMode::AsWritten => self.v,
            VarianceMode::PerObservation => self.v_obs,
        }
    }

    /// Folds one batch into the accumulator. `beta_hat` and `gamma_hat` must
    /// be the lasso estimate and projection of the same batch step.
    pub fn accumulate(
        &mut self,
        family: Family,
        x: ArrayView2<f64>,
        y: ArrayView1<f64>,
        beta_hat: ArrayView1<f64>,
        gamma_hat: ArrayView1<f64>,
    ) -> Result<()> {
        let p = self.s_row.len();
        if x.ncols() != p {
            return Err(OdlError::DimensionMismatch {
                context: "accumulate batch width",
                expected: p,
                actual: x.ncols(),
            });
        }
        if beta_hat.len() != p {
            return Err(OdlError::DimensionMismatch {
                context: "accumulate beta",
                expected: p,
                actual: beta_hat.len(),
            });
        }
        if gamma_hat.len() != p - 1 {
            return Err(OdlError::DimensionMismatch {
                context: "accumulate gamma",
                expected: p - 1,
                actual: gamma_hat.len(),
            });
        }
        if y.len() != x.nrows() {
            return Err(OdlError::DimensionMismatch {
                context: "accumulate responses",
                expected: x.nrows(),
                actual: y.len(),
            });
        }

        let r = self.coord;
        let lin = x.dot(&beta_hat);
        let mu = mean_response(family, x, beta_hat)?;

        // z = x_r - X_{-r} gamma, computed rowwise together with the dot
        // products to avoid a second pass.
        let mut z_dot_resid = 0.0;
        let mut v_obs_inc = 0.0;
        // gamma_ext' J = -(X' (w .* z))' with w = g'(X beta)
        let mut s_row_inc = Array1::<f64>::zeros(p);
        let mut s2_inc = 0.0;
        for i in 0..x.nrows() {
            let row = x.row(i);
            let mut z = row[r];
            let mut k = 0;
            for (j, &xij) in row.iter().enumerate() {
                if j != r {
                    z -= xij * gamma_hat[k];
                    k += 1;
                }
            }
            let resid = y[i] - mu[i];
            let zr = z * resid;
            z_dot_resid += zr;
            v_obs_inc += zr * zr;

            let w = family.link_derivative(lin[i])?;
            let wz = w * z;
            for (s, &xij) in s_row_inc.iter_mut().zip(row.iter()) {
                *s -= wz * xij;
            }
            s2_inc -= wz * lin[i];
        }

        let s1_inc = z_dot_resid;
        let v_inc = z_dot_resid * z_dot_resid;
        if !(s1_inc.is_finite() && s2_inc.is_finite() && v_obs_inc.is_finite()) {
            return Err(OdlError::Config(format!(
                "non-finite accumulator update for coordinate {r}"
            )));
        }

        self.s1 += s1_inc;
        self.s2 += s2_inc;
        self.s_row += &s_row_inc;
        self.v += v_inc;
        self.v_obs += v_obs_inc;
        Ok(())
    }
}

/// Debiased estimate `beta_r + (s1 + S . beta - s2) / tau`.
pub fn debiased_estimate(
    acc: &CoordAccumulator,
    beta_hat: ArrayView1<f64>,
    tau: f64,
) -> f64 {
    let correction = acc.s1 + acc.s_row.dot(&beta_hat) - acc.s2;
    beta_hat[acc.coord] + correction / tau
}

/// Standard error `sqrt(v) / tau` under the selected variance mode.
pub fn standard_error(acc: &CoordAccumulator, tau: f64, mode: VarianceMode) -> f64 {
    acc.variance(mode).max(0.0).sqrt() / tau
}

/// Two-sided Wald interval `est +/- z_{1-(1-level)/2} * se`.
pub fn confidence_interval(est: f64, se: f64, level: f64) -> (f64, f64) {
    let z = standard_normal_quantile(0.5 * (1.0 + level));
    (est - z * se, est + z * se)
}

/// Two-sided Wald p-value `2 (1 - Phi(|est| / se))`.
pub fn wald_pvalue(est: f64, se: f64) -> f64 {
    if est == 0.0 {
        return 1.0;
    }
    if se == 0.0 {
        return 0.0;
    }
    2.0 * standard_normal_sf((est / se).abs())
}

/// One inference result for (batch, coordinate).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InferenceRecord {
    pub batch_index: usize,
    pub coord: usize,
    pub beta_lasso: f64,
    pub beta_debiased: f64,
    pub se: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub p_value: f64,
    pub lambda_used: f64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::glm::batch_information;
    use crate::projection::embed_gamma;
    use approx::assert_relative_eq;
    use ndarray::array;

    #[test]
    fn exact_fit_gaussian_gives_zero_s1_and_v() {
        let x = array![[1.0, 2.0], [0.4, -0.3], [2.0, 0.1]];
        let beta = array![0.7, -0.2];
        let y = x.dot(&beta);
        let mut acc = CoordAccumulator::new(0, 2);
        acc.accumulate(
            Family::gaussian_identity(),
            x.view(),
            y.view(),
            beta.view(),
            array![0.0].view(),
        )
        .unwrap();
        assert_relative_eq!(acc.s1, 0.0, epsilon = 1e-12);
        assert_relative_eq!(acc.v, 0.0, epsilon = 1e-12);
        assert_relative_eq!(acc.v_obs, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn zero_gamma_s_row_is_negative_information_row() {
        let x = array![[1.0, 2.0, -0.5], [0.4, -0.3, 1.2], [2.0, 0.1, 0.3]];
        let y = array![1.0, 0.0, 1.0];
        let beta = array![0.2, -0.1, 0.4];
        let family = Family::bernoulli_logit();
        let r = 1;
        let mut acc = CoordAccumulator::new(r, 3);
        acc.accumulate(family, x.view(), y.view(), beta.view(), array![0.0, 0.0].view())
            .unwrap();
        let info = batch_information(family, x.view(), beta.view()).unwrap();
        for j in 0..3 {
            assert_relative_eq!(acc.s_row[j], -info[[r, j]], epsilon = 1e-10);
        }
    }

    #[test]
    fn increments_match_direct_matrix_formulas() {
        let x = array![
            [0.3, -1.2, 0.7],
            [1.1, 0.4, -0.6],
            [-0.5, 0.9, 1.4],
            [0.8, 0.1, -1.1]
        ];
        let y = array![1.0, 0.0, 1.0, 1.0];
        let beta = array![0.25, -0.4, 0.1];
        let gamma = array![0.3, -0.2];
        let family = Family::bernoulli_logit();
        let r = 2;

        let mut acc = CoordAccumulator::new(r, 3);
        acc.accumulate(family, x.view(), y.view(), beta.view(), gamma.view())
            .unwrap();

        // direct evaluation from the displayed formulas
        let mu = mean_response(family, x.view(), beta.view()).unwrap();
        let resid = &y - &mu;
        let ext = embed_gamma(gamma.view(), r);
        let z = {
            let mut z = Array1::<f64>::zeros(4);
            for i in 0..4 {
                z[i] = -x.row(i).dot(&ext);
            }
            z
        };
        let info = batch_information(family, x.view(), beta.view()).unwrap();
        let ext_j = ext.dot(&info);
        let s1 = z.dot(&resid);

        assert_relative_eq!(acc.s1, s1, epsilon = 1e-10);
        assert_relative_eq!(acc.v, s1 * s1, epsilon = 1e-10);
        assert_relative_eq!(acc.s2, ext_j.dot(&beta), epsilon = 1e-10);
        for j in 0..3 {
            assert_relative_eq!(acc.s_row[j], ext_j[j], epsilon = 1e-10);
        }
        let v_obs: f64 = z
            .iter()
            .zip(resid.iter())
            .map(|(&zi, &ri)| zi * zi * ri * ri)
            .sum();
        assert_relative_eq!(acc.v_obs, v_obs, epsilon = 1e-10);
    }

    #[test]
    fn standard_error_arithmetic() {
        let mut acc = CoordAccumulator::new(0, 2);
        acc.v = 4.0;
        acc.v_obs = 16.0;
        assert_relative_eq!(standard_error(&acc, 8.0, VarianceMode::AsWritten), 0.25);
        assert_relative_eq!(
            standard_error(&acc, 8.0, VarianceMode::PerObservation),
            0.5
        );
        acc.v = 0.0;
        assert_relative_eq!(standard_error(&acc, 8.0, VarianceMode::AsWritten), 0.0);
    }

    #[test]
    fn confidence_interval_reference_values() {
        let (lo, hi) = confidence_interval(0.0, 1.0, 0.95);
        assert_relative_eq!(lo, -1.959963984540054, epsilon = 1e-9);
        assert_relative_eq!(hi, 1.959963984540054, epsilon = 1e-9);
        let (lo, hi) = confidence_interval(2.0, 0.0, 0.95);
        assert_relative_eq!(lo, 2.0);
        assert_relative_eq!(hi, 2.0);
    }

    #[test]
    fn wald_pvalue_reference_values() {
        assert_relative_eq!(wald_pvalue(0.0, 1.0), 1.0);
        assert_relative_eq!(wald_pvalue(3.0, 0.0), 0.0);
        assert_relative_eq!(
            wald_pvalue(1.959963984540054, 1.0),
            0.05,
            epsilon = 1e-12
        );
        assert_relative_eq!(
            wald_pvalue(3.0, 1.0),
            0.002_699_796_063_260_189,
            max_relative = 1e-12
        );
    }
}
