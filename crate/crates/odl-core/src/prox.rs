//! Proximal-gradient (iterative soft-thresholding) minimizer for composite
//! objectives `f(beta) + lambda * ||beta||_1`, driven by a gradient callback.

use ndarray::{Array1, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{OdlError, Result};

/// Configuration for [`prox_solve`].
///
/// Two stopping rules run side by side. The gradient rule stops when
/// `||eta * grad||_2 <= stop_tol`, matching the published criterion; it can
/// only fire when the solution has a near-zero smooth gradient (e.g. lambda
/// near 0). The fixed-point rule stops when the applied proximal step has
/// `||delta||_2 <= step_tol`; a step that small certifies the KKT residual is
/// within about `step_tol / learning_rate` of zero, so the default pairing
/// (2.5e-7, eta 5e-3) keeps every converged solve inside the 1e-4 certificate
/// used by the test suites.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProxConfig {
    /// Gradient-descent step size (eta).
    pub learning_rate: f64,
    /// Threshold on `||eta * grad||_2`.
    pub stop_tol: f64,
    /// Threshold on the applied proximal step `||delta beta||_2`.
    pub step_tol: f64,
    /// Iteration cap; hitting it returns `converged = false`, not an error.
    pub max_iter: usize,
    /// Per-coordinate penalty flags; `None` penalizes every coordinate.
    pub penalty_mask: Option<Vec<bool>>,
}

impl Default for ProxConfig {
    fn default() -> Self {
        ProxConfig {
            learning_rate: 0.005,
            stop_tol: 1e-6,
            step_tol: 2.5e-7,
            max_iter: 100_000,
            penalty_mask: None,
        }
    }
}

impl ProxConfig {
    pub fn validate(&self, dim: usize) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(OdlError::Config(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(self.stop_tol > 0.0) || !(self.step_tol > 0.0) {
            return Err(OdlError::Config("tolerances must be positive".into()));
        }
        if self.max_iter == 0 {
            return Err(OdlError::Config("max_iter must be at least 1".into()));
        }
        if let Some(mask) = &self.penalty_mask {
            if mask.len() != dim {
                return Err(OdlError::DimensionMismatch {
                    context: "penalty_mask",
                    expected: dim,
                    actual: mask.len(),
                });
            }
        }
        Ok(())
    }
}

/// Result of a proximal solve.
#[derive(Debug, Clone)]
pub struct ProxOutcome {
    pub solution: Array1<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Soft-thresholding operator `S(z; t)`.
#[inline]
pub fn soft_threshold(z: f64, t: f64) -> f64 {
    if z > t {
        z - t
    } else if z < -t {
        z + t
    } else {
        0.0
    }
}

const DIVERGENCE_STREAK: usize = 10;

/// Minimizes `f + lambda * ||.||_1` by iterating
/// `beta <- S(beta - eta * grad(beta); eta * lambda)` on penalized
/// coordinates (plain gradient steps on unpenalized ones).
///
/// `grad` must write the descent-direction gradient of `f` at the first
/// argument into the second. Growth of the applied step norm over
/// `DIVERGENCE_STREAK` consecutive iterations aborts with an error; the step
/// size is fixed, so a too-large `learning_rate` fails loudly instead of
/// oscillating forever.
pub fn prox_solve<G>(
    mut grad: G,
    init: ArrayView1<f64>,
    lambda: f64,
    config: &ProxConfig,
) -> Result<ProxOutcome>
where
    G: FnMut(ArrayView1<f64>, &mut Array1<f64>),
{
    if !(lambda >= 0.0) {
        return Err(OdlError::Config(format!(
            "penalty must be nonnegative, got {lambda}"
        )));
    }
    config.validate(init.len())?;

    let eta = config.learning_rate;
    let threshold = eta * lambda;
    let mut beta = init.to_owned();
    let mut g = Array1::zeros(init.len());
    let grad_stop_sq = (config.stop_tol / eta) * (config.stop_tol / eta);
    let step_stop_sq = config.step_tol * config.step_tol;

    let mut prev_step_sq = f64::INFINITY;
    let mut growth_streak = 0usize;

    for iteration in 0..config.max_iter {
        grad(beta.view(), &mut g);

        let mut grad_sq = 0.0;
        for &gk in g.iter() {
            grad_sq += gk * gk;
        }
        if !grad_sq.is_finite() {
            return Err(OdlError::NonFiniteGradient { iteration });
        }
        if grad_sq <= grad_stop_sq {
            return Ok(ProxOutcome {
                solution: beta,
                iterations: iteration,
                converged: true,
            });
        }

        let mut step_sq = 0.0;
        match &config.penalty_mask {
            None => {
                for (bk, &gk) in beta.iter_mut().zip(g.iter()) {
                    let new = soft_threshold(*bk - eta * gk, threshold);
                    let d = new - *bk;
                    step_sq += d * d;
                    *bk = new;
                }
            }
            Some(mask) => {
                for ((bk, &gk), &penalized) in beta.iter_mut().zip(g.iter()).zip(mask.iter()) {
                    let cand = *bk - eta * gk;
                    let new = if penalized {
                        soft_threshold(cand, threshold)
                    } else {
                        cand
                    };
                    let d = new - *bk;
                    step_sq += d * d;
                    *bk = new;
                }
            }
        }

        if step_sq <= step_stop_sq {
            return Ok(ProxOutcome {
                solution: beta,
                iterations: iteration + 1,
                converged: true,
            });
        }

        if step_sq > prev_step_sq {
            growth_streak += 1;
            if growth_streak >= DIVERGENCE_STREAK {
                return Err(OdlError::Diverged {
                    iteration,
                    streak: growth_streak,
                });
            }
        } else {
            growth_streak = 0;
        }
        prev_step_sq = step_sq;
    }

    Ok(ProxOutcome {
        solution: beta,
        iterations: config.max_iter,
        converged: false,
    })
}

/// Maximal KKT violation of `solution` for `f + lambda * ||.||_1` given the
/// descent gradient of `f` at the solution. Zero coordinates contribute
/// `max(0, |g| - lambda)`, active ones `|g + lambda * sign|`, unpenalized
/// ones `|g|`.
pub fn kkt_residual(
    grad_at_solution: ArrayView1<f64>,
    solution: ArrayView1<f64>,
    lambda: f64,
    penalty_mask: Option<&[bool]>,
) -> f64 {
    let mut worst = 0.0f64;
    for (k, (&g, &b)) in grad_at_solution.iter().zip(solution.iter()).enumerate() {
        let penalized = penalty_mask.map_or(true, |m| m[k]);
        let viol = if !penalized {
            g.abs()
        } else if b == 0.0 {
            (g.abs() - lambda).max(0.0)
        } else {
            (g + lambda * b.signum()).abs()
        };
        worst = worst.max(viol);
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use ndarray::array;
    use proptest::prelude::*;

    #[test]
    fn soft_threshold_piecewise() {
        assert_relative_eq!(soft_threshold(0.3, 0.1), 0.2);
        assert_relative_eq!(soft_threshold(-0.05, 0.1), 0.0);
        assert_relative_eq!(soft_threshold(-0.3, 0.1), -0.2);
        assert_relative_eq!(soft_threshold(0.1, 0.1), 0.0);
    }

    #[test]
    fn scalar_lasso_closed_form() {
        // f(b) = (b - 1)^2 / 2, lambda = 0.5 -> S(1; 0.5) = 0.5
        let config = ProxConfig {
            learning_rate: 0.5,
            stop_tol: 1e-14,
            step_tol: 1e-14,
            max_iter: 100_000,
            penalty_mask: None,
        };
        let out = prox_solve(
            |b, g| g[0] = b[0] - 1.0,
            array![0.0].view(),
            0.5,
            &config,
        )
        .unwrap();
        assert!(out.converged);
        assert_relative_eq!(out.solution[0], 0.5, epsilon = 1e-9);
    }

    #[test]
    fn zero_is_fixed_point_for_large_penalty() {
        // f(b) = b' Q b / 2 with gradient Q b; at 0 the gradient vanishes,
        // and lambda above the stationarity threshold keeps it there.
        let q = array![[2.0, 0.3], [0.3, 1.0]];
        let out = prox_solve(
            |b, g| g.assign(&q.dot(&b)),
            array![0.0, 0.0].view(),
            0.5,
            &ProxConfig::default(),
        )
        .unwrap();
        assert!(out.converged);
        assert_eq!(out.iterations, 0);
        assert!(out.solution.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn unpenalized_coordinates_take_plain_steps() {
        // f = ((b0 - 2)^2 + (b1 - 2)^2) / 2 with only b1 penalized hard:
        // b0 converges to 2, b1 is forced to 0.
        let config = ProxConfig {
            learning_rate: 0.2,
            stop_tol: 1e-12,
            step_tol: 1e-12,
            max_iter: 100_000,
            penalty_mask: Some(vec![false, true]),
        };
        let out = prox_solve(
            |b, g| {
                g[0] = b[0] - 2.0;
                g[1] = b[1] - 2.0;
            },
            array![0.0, 0.0].view(),
            3.0,
            &config,
        )
        .unwrap();
        assert!(out.converged);
        assert_relative_eq!(out.solution[0], 2.0, epsilon = 1e-8);
        assert_relative_eq!(out.solution[1], 0.0);
    }

    #[test]
    fn divergence_detected_for_unstable_step() {
        // curvature 300 with eta 0.01 -> |1 - eta * L| = 2, geometric blowup
        let out = prox_solve(
            |b, g| g[0] = 300.0 * (b[0] - 1.0),
            array![0.0].view(),
            0.0,
            &ProxConfig {
                learning_rate: 0.01,
                ..ProxConfig::default()
            },
        );
        assert!(matches!(out, Err(OdlError::Diverged { .. })));
    }

    #[test]
    fn non_finite_gradient_is_an_error() {
        let out = prox_solve(
            |_b, g| g[0] = f64::NAN,
            array![0.5].view(),
            0.1,
            &ProxConfig::default(),
        );
        assert!(matches!(out, Err(OdlError::NonFiniteGradient { .. })));
    }

    #[test]
    fn negative_lambda_rejected() {
        let out = prox_solve(
            |_b, g| g[0] = 0.0,
            array![0.0].view(),
            -0.1,
            &ProxConfig::default(),
        );
        assert!(matches!(out, Err(OdlError::Config(_))));
    }

    #[test]
    fn kkt_certificate_at_converged_solution() {
        // random-ish strongly convex quadratic, moderate penalty
        let q = array![[1.5, 0.2, 0.0], [0.2, 1.0, -0.1], [0.0, -0.1, 0.8]];
        let c = array![1.0, -0.3, 0.4];
        let lambda = 0.2;
        let config = ProxConfig {
            learning_rate: 0.1,
            ..ProxConfig::default()
        };
        let grad = |b: ArrayView1<f64>, g: &mut Array1<f64>| {
            g.assign(&(q.dot(&b) - &c));
        };
        let out = prox_solve(grad, array![0.0, 0.0, 0.0].view(), lambda, &config).unwrap();
        assert!(out.converged);
        let mut g = Array1::zeros(3);
        (|b: ArrayView1<f64>, g: &mut Array1<f64>| g.assign(&(q.dot(&b) - &c)))(
            out.solution.view(),
            &mut g,
        );
        let res = kkt_residual(g.view(), out.solution.view(), lambda, None);
        assert!(
            res <= lambda + 10.0 * config.stop_tol + 1e-4,
            "kkt residual {res}"
        );
        assert!(res <= 1e-4, "kkt residual {res}");
    }

    proptest! {
        #[test]
        fn soft_threshold_is_odd_and_lipschitz(
            z in -50.0f64..50.0,
            z2 in -50.0f64..50.0,
            t in 0.0f64..10.0,
        ) {
            let s = soft_threshold(z, t);
            let s2 = soft_threshold(z2, t);
            prop_assert!((s - s2).abs() <= (z - z2).abs() + 1e-12);
            prop_assert!((soft_threshold(-z, t) + s).abs() < 1e-12);
        }

        #[test]
        fn monotone_objective_on_quadratic(seed in 0u64..50) {
            // f = (b - c)' (b - c) / 2; eta below inverse curvature keeps the
            // composite objective non-increasing along the iterate path.
            let c = [
                (seed as f64 * 0.37).sin() * 2.0,
                (seed as f64 * 0.91).cos() * 1.5,
            ];
            let lambda = 0.1 + (seed % 7) as f64 * 0.05;
            let mut path: Vec<ndarray::Array1<f64>> = vec![];
            let config = ProxConfig { learning_rate: 0.5, ..ProxConfig::default() };
            let out = prox_solve(
                |b, g| {
                    path.push(b.to_owned());
                    g[0] = b[0] - c[0];
                    g[1] = b[1] - c[1];
                },
                array![0.0, 0.0].view(),
                lambda,
                &config,
            ).unwrap();
            path.push(out.solution.clone());
            let objective = |b: &ndarray::Array1<f64>| {
                0.5 * ((b[0] - c[0]).powi(2) + (b[1] - c[1]).powi(2))
                    + lambda * (b[0].abs() + b[1].abs())
            };
            for pair in path.windows(2) {
                prop_assert!(objective(&pair[1]) <= objective(&pair[0]) + 1e-12);
            }
        }
    }
}
