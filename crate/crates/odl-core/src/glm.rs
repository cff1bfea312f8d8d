//! GLM families with canonical links: mean function, its derivative, unit
//! deviance, and the batch score / information kernels shared by every solver.
//!
//! Conventions: the score of a batch is `sum_i x_i (y_i - g(x_i' beta))` and
//! the information is `sum_i g'(x_i' beta) x_i x_i'`, i.e. derivatives of the
//! log-likelihood kernel rather than of the (factor-2) unit deviance. With
//! canonical links this makes the information equal the response variance
//! weights, which is what the downstream variance formulas assume. The unit
//! deviance keeps its conventional scale and is used for fit reporting and
//! cross-validation only.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{OdlError, Result};

/// Linear predictors beyond this magnitude are rejected for exp-based links.
pub const LINPRED_GUARD: f64 = 700.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FamilyKind {
    BernoulliLogit,
    GaussianIdentity,
    PoissonLog,
}

impl FamilyKind {
    pub fn name(&self) -> &'static str {
        match self {
            FamilyKind::BernoulliLogit => "bernoulli-logit",
            FamilyKind::GaussianIdentity => "gaussian-identity",
            FamilyKind::PoissonLog => "poisson-log",
        }
    }
}

/// An exponential-dispersion family with its canonical link.
///
/// The dispersion is fixed at 1 for all implemented kinds; it is carried so
/// reports can echo it, not estimated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Family {
    kind: FamilyKind,
    dispersion: f64,
}

impl Family {
    pub fn new(kind: FamilyKind) -> Self {
        Family {
            kind,
            dispersion: 1.0,
        }
    }

    pub fn bernoulli_logit() -> Self {
        Self::new(FamilyKind::BernoulliLogit)
    }

    pub fn gaussian_identity() -> Self {
        Self::new(FamilyKind::GaussianIdentity)
    }

    pub fn poisson_log() -> Self {
        Self::new(FamilyKind::PoissonLog)
    }

    pub fn kind(&self) -> FamilyKind {
        self.kind
    }

    pub fn dispersion(&self) -> f64 {
        self.dispersion
    }

    /// Mean function `mu = g(t)` of the linear predictor.
    pub fn link_mean(&self, t: f64) -> Result<f64> {
        if !t.is_finite() {
            return Err(OdlError::LinkDomain {
                family: self.kind.name(),
                value: t,
                limit: f64::INFINITY,
            });
        }
        match self.kind {
            FamilyKind::BernoulliLogit => Ok(sigmoid(t)),
            FamilyKind::GaussianIdentity => Ok(t),
            FamilyKind::PoissonLog => {
                if t.abs() > LINPRED_GUARD {
                    Err(OdlError::LinkDomain {
                        family: self.kind.name(),
                        value: t,
                        limit: LINPRED_GUARD,
                    })
                } else {
                    Ok(t.exp())
                }
            }
        }
    }

    /// Derivative `g'(t)` of the mean function; strictly positive.
    pub fn link_derivative(&self, t: f64) -> Result<f64> {
        match self.kind {
            FamilyKind::BernoulliLogit => {
                let mu = self.link_mean(t)?;
                Ok(mu * (1.0 - mu))
            }
            FamilyKind::GaussianIdentity => {
                self.link_mean(t)?;
                Ok(1.0)
            }
            FamilyKind::PoissonLog => self.link_mean(t),
        }
    }

    /// Unit deviance `d(y; mu)`, nonnegative with `d(y; y) = 0`.
    pub fn unit_deviance(&self, y: f64, mu: f64) -> f64 {
        match self.kind {
            FamilyKind::BernoulliLogit => {
                let mu = mu.clamp(1e-12, 1.0 - 1e-12);
                2.0 * (xlogy(y, y / mu) + xlogy(1.0 - y, (1.0 - y) / (1.0 - mu)))
            }
            FamilyKind::GaussianIdentity => (y - mu) * (y - mu),
            FamilyKind::PoissonLog => {
                let mu = mu.max(1e-300);
                2.0 * (xlogy(y, y / mu) - (y - mu))
            }
        }
    }

    /// Negative log-likelihood kernel in the linear predictor `t`, dropping
    /// terms free of `t`. Its gradient in `beta` is minus the score.
    pub fn nll_kernel(&self, y: f64, t: f64) -> f64 {
        match self.kind {
            FamilyKind::BernoulliLogit => {
                // -[y t - log(1 + e^t)] evaluated stably
                let log1pexp = if t > 0.0 {
                    t + (-t).exp().ln_1p()
                } else {
                    t.exp().ln_1p()
                };
                log1pexp - y * t
            }
            FamilyKind::GaussianIdentity => 0.5 * (y - t) * (y - t),
            FamilyKind::PoissonLog => t.exp() - y * t,
        }
    }

    /// Validates that every response lies in the family's domain.
    pub fn check_response(&self, y: ArrayView1<f64>) -> Result<()> {
        for (row, &value) in y.iter().enumerate() {
            let ok = match self.kind {
                FamilyKind::BernoulliLogit => (0.0..=1.0).contains(&value),
                FamilyKind::GaussianIdentity => value.is_finite(),
                FamilyKind::PoissonLog => value.is_finite() && value >= 0.0,
            };
            if !ok {
                return Err(OdlError::ResponseDomain {
                    family: self.kind.name(),
                    row,
                    value,
                });
            }
        }
        Ok(())
    }
}

fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

fn xlogy(x: f64, y: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x * y.ln()
    }
}

fn check_dims(context: &'static str, x: ArrayView2<f64>, rows: usize, cols: usize) -> Result<()> {
    if x.nrows() != rows {
        return Err(OdlError::DimensionMismatch {
            context,
            expected: rows,
            actual: x.nrows(),
        });
    }
    if x.ncols() != cols {
        return Err(OdlError::DimensionMismatch {
            context,
            expected: cols,
            actual: x.ncols(),
        });
    }
    Ok(())
}

/// Mean responses `g(X beta)` for a whole batch.
pub fn mean_response(
    family: Family,
    x: ArrayView2<f64>,
    beta: ArrayView1<f64>,
) -> Result<Array1<f64>> {
    check_dims("mean_response", x, x.nrows(), beta.len())?;
    let lin = x.dot(&beta);
    let mut mu = Array1::zeros(lin.len());
    for (m, &t) in mu.iter_mut().zip(lin.iter()) {
        *m = family.link_mean(t)?;
    }
    Ok(mu)
}

/// Batch score `U = X' (y - g(X beta))`.
pub fn batch_score(
    family: Family,
    x: ArrayView2<f64>,
    y: ArrayView1<f64>,
    beta: ArrayView1<f64>,
) -> Result<Array1<f64>> {
    if y.len() != x.nrows() {
        return Err(OdlError::DimensionMismatch {
            context: "batch_score responses",
            expected: x.nrows(),
            actual: y.len(),
        });
    }
    check_dims("batch_score", x, x.nrows(), beta.len())?;
    family.check_response(y)?;
    let mu = mean_response(family, x, beta)?;
    let resid = &y - &mu;
    Ok(x.t().dot(&resid))
}

/// Batch information `J = X' diag(g'(X beta)) X`, symmetrized exactly.
pub fn batch_information(
    family: Family,
    x: ArrayView2<f64>,
    beta: ArrayView1<f64>,
) -> Result<Array2<f64>> {
    check_dims("batch_information", x, x.nrows(), beta.len())?;
    let lin = x.dot(&beta);
    let mut w = Array1::zeros(lin.len());
    for (wi, &t) in w.iter_mut().zip(lin.iter()) {
        *wi = family.link_derivative(t)?;
    }
    let xw = &x * &w.view().insert_axis(Axis(1));
    let mut info = x.t().dot(&xw);
    // enforce exact symmetry so downstream block identities hold bitwise
    let p = info.nrows();
    for i in 0..p {
        for j in (i + 1)..p {
            let m = 0.5 * (info[[i, j]] + info[[j, i]]);
            info[[i, j]] = m;
            info[[j, i]] = m;
        }
    }
    Ok(info)
}

/// Total unit deviance of a batch at `beta`; reporting / cross-validation use.
pub fn batch_deviance(
    family: Family,
    x: ArrayView2<f64>,
    y: ArrayView1<f64>,
    beta: ArrayView1<f64>,
) -> Result<f64> {
    let mu = mean_response(family, x, beta)?;
    Ok(y.iter()
        .zip(mu.iter())
        .map(|(&yi, &mi)| family.unit_deviance(yi, mi))
        .sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use ndarray::array;

    #[test]
    fn link_mean_known_values() {
        let b = Family::bernoulli_logit();
        assert_relative_eq!(b.link_mean(0.0).unwrap(), 0.5);
        // ln 3 maps to 3/(1+3)
        assert_relative_eq!(
            b.link_mean(1.09861228866810969).unwrap(),
            0.75,
            epsilon = 1e-15
        );
        let g = Family::gaussian_identity();
        assert_relative_eq!(g.link_mean(1.7).unwrap(), 1.7);
        let p = Family::poisson_log();
        assert_relative_eq!(p.link_mean(1.0).unwrap(), std::f64::consts::E);
        assert!(p.link_mean(701.0).is_err());
        assert!(b.link_mean(f64::NAN).is_err());
    }

    #[test]
    fn link_derivative_known_values() {
        let b = Family::bernoulli_logit();
        assert_relative_eq!(b.link_derivative(0.0).unwrap(), 0.25);
        let g = Family::gaussian_identity();
        assert_relative_eq!(g.link_derivative(-3.4).unwrap(), 1.0);
    }

    #[test]
    fn link_derivative_matches_central_difference() {
        let h = 1e-6;
        // The logistic derivative is even, and its mean saturates toward 1
        // for t > 0, where the finite difference loses all precision to
        // cancellation. Differencing on the small tail covers |t| <= 20 via
        // g'(t) = g'(-t), which is asserted alongside.
        let b = Family::bernoulli_logit();
        for k in -200..=0 {
            let t = k as f64 * 0.1;
            let fd = (b.link_mean(t + h).unwrap() - b.link_mean(t - h).unwrap()) / (2.0 * h);
            let gd = b.link_derivative(t).unwrap();
            assert!(gd > 0.0);
            assert_relative_eq!(fd, gd, max_relative = 1e-6);
            assert_relative_eq!(gd, b.link_derivative(-t).unwrap(), max_relative = 1e-12);
        }
        let p = Family::poisson_log();
        for k in -200..=200 {
            let t = k as f64 * 0.1;
            let fd = (p.link_mean(t + h).unwrap() - p.link_mean(t - h).unwrap()) / (2.0 * h);
            let gd = p.link_derivative(t).unwrap();
            assert!(gd > 0.0);
            assert_relative_eq!(fd, gd, max_relative = 1e-6);
        }
    }

    #[test]
    fn unit_deviance_zero_at_fit() {
        let b = Family::bernoulli_logit();
        assert_relative_eq!(b.unit_deviance(1.0, 1.0 - 1e-12), 0.0, epsilon = 1e-9);
        assert!(b.unit_deviance(1.0, 0.3) > 0.0);
        let g = Family::gaussian_identity();
        assert_relative_eq!(g.unit_deviance(2.0, 2.0), 0.0);
        let p = Family::poisson_log();
        assert_relative_eq!(p.unit_deviance(3.0, 3.0), 0.0, epsilon = 1e-12);
        assert!(p.unit_deviance(0.0, 1.0) > 0.0);
    }

    #[test]
    fn score_gaussian_exact_residual_form() {
        let x = array![[1.0, 2.0], [0.5, -1.0], [3.0, 0.0]];
        let beta = array![0.3, -0.7];
        let y = x.dot(&beta);
        let score = batch_score(Family::gaussian_identity(), x.view(), y.view(), beta.view())
            .unwrap();
        assert!(score.iter().all(|v| v.abs() < 1e-14));
    }

    #[test]
    fn score_single_bernoulli_observation() {
        let x = array![[1.0, 2.0]];
        let y = array![1.0];
        let beta = array![0.0, 0.0];
        let score = batch_score(Family::bernoulli_logit(), x.view(), y.view(), beta.view())
            .unwrap();
        assert_relative_eq!(score[0], 0.5);
        assert_relative_eq!(score[1], 1.0);
    }

    #[test]
    fn information_gaussian_is_gram_matrix() {
        let x = array![[1.0, 2.0], [0.5, -1.0], [3.0, 0.0]];
        let beta = array![0.3, -0.7];
        let info = batch_information(Family::gaussian_identity(), x.view(), beta.view()).unwrap();
        let gram = x.t().dot(&x);
        for (a, b) in info.iter().zip(gram.iter()) {
            assert_relative_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn information_bernoulli_at_zero_is_quarter_gram() {
        let x = array![[1.0, 2.0], [0.5, -1.0], [3.0, 0.0]];
        let beta = array![0.0, 0.0];
        let info = batch_information(Family::bernoulli_logit(), x.view(), beta.view()).unwrap();
        let gram = x.t().dot(&x);
        for (a, b) in info.iter().zip(gram.iter()) {
            assert_relative_eq!(*a, 0.25 * b, epsilon = 1e-12);
        }
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let x = array![[1.0, 2.0]];
        let y = array![1.0, 0.0];
        let beta = array![0.0, 0.0];
        assert!(matches!(
            batch_score(Family::bernoulli_logit(), x.view(), y.view(), beta.view()),
            Err(OdlError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn response_domain_enforced() {
        let x = array![[1.0]];
        let y = array![2.0];
        let beta = array![0.0];
        assert!(matches!(
            batch_score(Family::bernoulli_logit(), x.view(), y.view(), beta.view()),
            Err(OdlError::ResponseDomain { .. })
        ));
    }
}
