//! Per-coordinate low-dimensional projection. Everything here reads only
//! blocks of the aggregated information matrix plus the incoming batch, never
//! historical raw data.
//!
//! For coordinate `r` the projection solves
//! `min_gamma (J_rr - 2 J_{r,-r} gamma + gamma' J_{-r,-r} gamma) / (2 N)
//!  + lambda ||gamma||_1`,
//! whose gradient `(J_{-r,-r} gamma - J_{-r,r}) / N` equals the non-`r`
//! entries of `J gamma_ext / N` with `gamma_ext` the embedding of `gamma`
//! carrying `-1` in slot `r`. One full matrix-vector product per iteration
//! therefore serves both the gradient and, at the solution, the scale
//! `tau = -(J gamma_ext)_r = J_rr - J_{r,-r} gamma`.

use ndarray::linalg::general_mat_vec_mul;
use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::error::{OdlError, Result};
use crate::prox::{prox_solve, ProxConfig, ProxOutcome};

/// Relative floor for the projection scale: `tau` must exceed
/// `TAU_FLOOR_PER_SAMPLE * n_total`.
pub const TAU_FLOOR_PER_SAMPLE: f64 = 1e-8;

/// Warm-started nodewise coefficients for one tracked coordinate.
#[derive(Debug, Clone)]
pub struct ProjectionState {
    pub coord: usize,
    pub gamma: Array1<f64>,
}

impl ProjectionState {
    pub fn new(coord: usize, p: usize) -> Self {
        ProjectionState {
            coord,
            gamma: Array1::zeros(p - 1),
        }
    }
}

/// Embeds `gamma` (length p-1) into length p with `-1` at `coord`.
pub fn embed_gamma(gamma: ArrayView1<f64>, coord: usize) -> Array1<f64> {
    let p = gamma.len() + 1;
    let mut ext = Array1::<f64>::zeros(p);
    for (k, &g) in gamma.iter().enumerate() {
        let idx = if k < coord { k } else { k + 1 };
        ext[idx] = g;
    }
    ext[coord] = -1.0;
    ext
}

fn check_square(info: &Array2<f64>, context: &'static str) -> Result<usize> {
    let p = info.nrows();
    if info.ncols() != p {
        return Err(OdlError::DimensionMismatch {
            context,
            expected: p,
            actual: info.ncols(),
        });
    }
    Ok(p)
}

/// Solves the projection problem for `coord` from the aggregated information,
/// warm started at `init` (the previous solution, or zeros).
pub fn solve_projection(
    info_agg: &Array2<f64>,
    n_total: usize,
    lambda: f64,
    coord: usize,
    init: ArrayView1<f64>,
    config: &ProxConfig,
) -> Result<ProxOutcome> {
    let p = check_square(info_agg, "projection information")?;
    if coord >= p {
        return Err(OdlError::Config(format!(
            "projection coordinate {coord} out of range for p = {p}"
        )));
    }
    if init.len() != p - 1 {
        return Err(OdlError::DimensionMismatch {
            context: "projection warm start",
            expected: p - 1,
            actual: init.len(),
        });
    }
    if n_total == 0 {
        return Err(OdlError::Config("projection before any data".into()));
    }

    let inv_n = 1.0 / n_total as f64;
    let mut ext = Array1::<f64>::zeros(p);
    let mut jg = Array1::<f64>::zeros(p);
    ext[coord] = -1.0;

    let grad = |gamma: ArrayView1<f64>, g: &mut Array1<f64>| {
        for (k, &v) in gamma.iter().enumerate() {
            let idx = if k < coord { k } else { k + 1 };
            ext[idx] = v;
        }
        general_mat_vec_mul(1.0, info_agg, &ext, 0.0, &mut jg);
        for (k, gk) in g.iter_mut().enumerate() {
            let idx = if k < coord { k } else { k + 1 };
            *gk = jg[idx] * inv_n;
        }
    };

    prox_solve(grad, init, lambda, config)
}

/// Residualized column `z_r = x_r - X_{-r} gamma`, on raw batch columns.
pub fn residual_column(
    x: ArrayView2<f64>,
    gamma: ArrayView1<f64>,
    coord: usize,
) -> Result<Array1<f64>> {
    let p = x.ncols();
    if coord >= p {
        return Err(OdlError::Config(format!(
            "residual column coordinate {coord} out of range for p = {p}"
        )));
    }
    if gamma.len() != p - 1 {
        return Err(OdlError::DimensionMismatch {
            context: "residual column gamma",
            expected: p - 1,
            actual: gamma.len(),
        });
    }
    let ext = embed_gamma(gamma, coord);
    // z = x_r - X_{-r} gamma = -(X ext)
    let mut z = Array1::<f64>::zeros(x.nrows());
    general_mat_vec_mul(-1.0, &x, &ext, 0.0, &mut z);
    Ok(z)
}

/// Projection scale `tau = J_rr - J_{r,-r} gamma`, guarded against
/// degeneracy by the floor `TAU_FLOOR_PER_SAMPLE * n_total`.
pub fn tau(
    info_agg: &Array2<f64>,
    gamma: ArrayView1<f64>,
    coord: usize,
    n_total: usize,
) -> Result<f64> {
    let p = check_square(info_agg, "tau information")?;
    if gamma.len() != p - 1 {
        return Err(OdlError::DimensionMismatch {
            context: "tau gamma",
            expected: p - 1,
            actual: gamma.len(),
        });
    }
    let row = info_agg.row(coord);
    let mut value = row[coord];
    for (k, &g) in gamma.iter().enumerate() {
        let idx = if k < coord { k } else { k + 1 };
        value -= row[idx] * g;
    }
    let floor = TAU_FLOOR_PER_SAMPLE * n_total as f64;
    if !value.is_finite() || value <= floor {
        return Err(OdlError::DegenerateProjection {
            coord,
            tau: value,
            floor,
        });
    }
    Ok(value)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use ndarray::array;

    fn tight_config() -> ProxConfig {
        ProxConfig {
            learning_rate: 0.2,
            stop_tol: 1e-13,
            step_tol: 1e-13,
            max_iter: 1_000_000,
            penalty_mask: None,
        }
    }

    #[test]
    fn diagonal_information_gives_zero_projection() {
        let info = array![[3.0, 0.0, 0.0], [0.0, 2.0, 0.0], [0.0, 0.0, 1.5]];
        for coord in 0..3 {
            for lambda in [0.0, 0.1, 1.0] {
                let out = solve_projection(
                    &info,
                    4,
                    lambda,
                    coord,
                    Array1::zeros(2).view(),
                    &tight_config(),
                )
                .unwrap();
                assert!(out.converged);
                assert!(out.solution.iter().all(|&v| v == 0.0));
            }
        }
    }

    // Hand oracle: p = 2, J = [[2, 1], [1, 2]], N = 1, lambda = 0.25, r = 0.
    // The scalar problem min (J_11 g^2 - 2 J_01 g) / 2 + lambda |g| has the
    // closed form g = S(J_01; lambda * N) / J_11 = S(1; 0.25) / 2 = 0.375,
    // and tau = J_00 - J_01 g = 2 - 0.375 = 1.625.
    #[test]
    fn two_dimensional_hand_oracle() {
        let info = array![[2.0, 1.0], [1.0, 2.0]];
        let out = solve_projection(
            &info,
            1,
            0.25,
            0,
            Array1::zeros(1).view(),
            &tight_config(),
        )
        .unwrap();
        assert!(out.converged);
        assert_relative_eq!(out.solution[0], 0.375, epsilon = 1e-9);
        let t = tau(&info, out.solution.view(), 0, 1).unwrap();
        assert_relative_eq!(t, 1.625, epsilon = 1e-9);
    }

    #[test]
    fn residual_column_basics() {
        let x = array![[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]];
        // gamma = 0 returns the column unchanged
        let z = residual_column(x.view(), Array1::zeros(2).view(), 1).unwrap();
        assert_relative_eq!(z[0], 2.0);
        assert_relative_eq!(z[1], 5.0);
        // exact collinearity: column 0 = 0.5 * col1 + (-1) * col2 ... build it
        let x2 = array![[0.5 * 2.0 - 3.0, 2.0, 3.0], [0.5 * 5.0 - 6.0, 5.0, 6.0]];
        let z2 = residual_column(x2.view(), array![0.5, -1.0].view(), 0).unwrap();
        assert!(z2.iter().all(|&v| v.abs() < 1e-12));
    }

    #[test]
    fn residual_column_matches_entrywise_definition() {
        let x = array![
            [0.3, -1.2, 0.7, 2.0],
            [1.1, 0.4, -0.6, 0.2],
            [-0.5, 0.9, 1.4, -1.0]
        ];
        let gamma = array![0.2, -0.7, 0.05];
        let coord = 2;
        let z = residual_column(x.view(), gamma.view(), coord).unwrap();
        for i in 0..x.nrows() {
            let mut expect = x[[i, coord]];
            let mut gk = 0;
            for j in 0..x.ncols() {
                if j != coord {
                    expect -= x[[i, j]] * gamma[gk];
                    gk += 1;
                }
            }
            assert_relative_eq!(z[i], expect, epsilon = 1e-12);
        }
    }

    #[test]
    fn tau_of_zero_gamma_is_diagonal_entry() {
        let info = array![[2.0, 1.0], [1.0, 5.0]];
        let t = tau(&info, Array1::zeros(1).view(), 1, 1).unwrap();
        assert_relative_eq!(t, 5.0);
    }

    #[test]
    fn tau_guard_names_the_coordinate() {
        let info = array![[1e-12, 0.0], [0.0, 1.0]];
        let err = tau(&info, Array1::zeros(1).view(), 0, 100).unwrap_err();
        match err {
            OdlError::DegenerateProjection { coord, .. } => assert_eq!(coord, 0),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn tau_matches_extended_vector_identity() {
        let info = array![
            [4.0, 1.0, 0.5],
            [1.0, 3.0, -0.2],
            [0.5, -0.2, 2.0]
        ];
        let gamma = array![0.3, -0.1];
        for coord in 0..3 {
            let t = tau(&info, gamma.view(), coord, 1).unwrap();
            let ext = embed_gamma(gamma.view(), coord);
            let jg = info.dot(&ext);
            assert_relative_eq!(t, -jg[coord], epsilon = 1e-10);
        }
    }
}
