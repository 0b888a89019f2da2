//! Sensitivity of a periodic orbit's initial state and period to the
//! uncertainty vector, and the extremality conditions built on it.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::integrate::{integrate_augmented, AugmentedResult, IntegrationSettings};
use crate::linalg::Factored;
use crate::models::{sphere_tangent_basis_with_pivot, tangent_pivot, SystemModel};
use crate::orbits::{phase_gradients, rhs_vector, PeriodicOrbit};

/// Condition estimate above which the bordered sensitivity system is
/// treated as singular.
pub const MAX_CONDITION: f64 = 1e12;

#[derive(Debug, Clone)]
pub struct InitialSensitivity {
    /// `dx0/deps`, N x M.
    pub s0: DMatrix<f64>,
    /// `dT/deps`, length M.
    pub dperiod: DVector<f64>,
    pub condition: f64,
}

/// Bordered matrix and right-hand side of the initial-sensitivity system
///
/// ```text
/// [ H_T - I   F(x_T) ] [ S0     ]   [ -S_T              ]
/// [ dL/dx     0      ] [ dT/deps] = [ -dL/dp . dp/deps  ]
/// ```
///
/// `aug` must carry `dp/deps` in its first M sensitivity columns.
pub fn sensitivity_system(
    model: &SystemModel,
    p: &[f64],
    x0: &[f64],
    aug: &AugmentedResult,
    dp_deps: &DMatrix<f64>,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let n = model.dim();
    let m = dp_deps.ncols();
    if aug.s_t.ncols() < m {
        return Err(Error::Precondition(format!(
            "augmented run carries {} sensitivity columns, need {m}",
            aug.s_t.ncols()
        )));
    }
    let mut border = DMatrix::zeros(n + 1, n + 1);
    border.view_mut((0, 0), (n, n)).copy_from(&aug.h_t);
    for i in 0..n {
        border[(i, i)] -= 1.0;
    }
    let f_t = rhs_vector(model, p, aug.x_t.as_slice());
    border.view_mut((0, n), (n, 1)).copy_from(&f_t);
    let (dl_dx, dl_dp) = phase_gradients(model, p, x0);
    border.view_mut((n, 0), (1, n)).copy_from(&dl_dx.transpose());

    let mut rhs = DMatrix::zeros(n + 1, m);
    rhs.view_mut((0, 0), (n, m)).copy_from(&(-aug.s_t.columns(0, m)));
    let dl_de = dp_deps.tr_mul(&dl_dp);
    for j in 0..m {
        rhs[(n, j)] = -dl_de[j];
    }
    Ok((border, rhs))
}

/// Orientation of the branch through an orbit: `+1` when the bordered
/// matrix of [`sensitivity_system`] has the determinant sign of an
/// asymptotically stable orbit, `-1` otherwise. The sign flips at every fold
/// of the forced-response curve and is unaffected by period doubling or
/// torus bifurcations.
///
/// With `H_T - I` singular along `F`, `det B = -(dL/dx . F) prod(mu_i - 1)`
/// over the nontrivial multipliers; for a stable orbit every real factor is
/// negative and complex pairs contribute positive factors.
pub fn branch_orientation(model: &SystemModel, p: &[f64], x0: &[f64], border: &DMatrix<f64>) -> f64 {
    let n = model.dim();
    let det = border.clone().lu().determinant();
    let (dl_dx, _) = phase_gradients(model, p, x0);
    let lf = dl_dx.dot(&rhs_vector(model, p, x0));
    let stable = -lf.signum() * if (n - 1).is_multiple_of(2) { 1.0 } else { -1.0 };
    (det * stable).signum()
}

/// Solve [`sensitivity_system`] for `S0 = dx0/deps` and `dT/deps`.
pub fn solve_initial_sensitivity(
    model: &SystemModel,
    p: &[f64],
    x0: &[f64],
    aug: &AugmentedResult,
    dp_deps: &DMatrix<f64>,
) -> Result<InitialSensitivity> {
    let n = model.dim();
    let (border, rhs) = sensitivity_system(model, p, x0, aug, dp_deps)?;
    let lu = Factored::new(&border)?;
    if lu.condition > MAX_CONDITION {
        return Err(Error::IllConditioned {
            condition: lu.condition,
        });
    }
    let sol = lu.solve_matrix(&rhs)?;
    Ok(InitialSensitivity {
        s0: sol.rows(0, n).into_owned(),
        dperiod: sol.row(n).transpose(),
        condition: lu.condition,
    })
}

/// `grad_eps g = grad_x g . S0 + grad_p g . dp/deps`, length M.
pub fn metric_uncertainty_gradient(
    model: &SystemModel,
    p: &[f64],
    x0: &[f64],
    sens: &InitialSensitivity,
    dp_deps: &DMatrix<f64>,
) -> DVector<f64> {
    let gx = model.metric.grad_x(x0, p);
    let gp = model.metric.grad_p(x0, p);
    sens.s0.tr_mul(&gx) + dp_deps.tr_mul(&gp)
}

/// `Delta_r . grad_eps g`: zero exactly when the metric gradient is normal
/// to the sphere through `eps`. Length M-1. The tangent basis is built
/// around `pivot`, or the largest entry of `eps` when `None`.
pub fn extremal_uncertainty_residual(
    grad: &DVector<f64>,
    eps: &[f64],
    pivot: Option<usize>,
) -> Result<DVector<f64>> {
    if grad.len() != eps.len() {
        return Err(Error::Precondition(format!(
            "gradient has length {}, uncertainty has {}",
            grad.len(),
            eps.len()
        )));
    }
    let pivot = pivot.unwrap_or_else(|| tangent_pivot(eps));
    let basis = sphere_tangent_basis_with_pivot(eps, pivot)?;
    Ok(basis * grad)
}

/// Sensitivity and metric gradient of a converged orbit realised at
/// uncertainty `eps`.
pub fn orbit_sensitivity(
    model: &SystemModel,
    orbit: &PeriodicOrbit,
    eps: &[f64],
    integration: &IntegrationSettings,
) -> Result<(InitialSensitivity, DVector<f64>)> {
    let lambda = orbit.lambda(model);
    let (p, dp) = model.realize(lambda, eps)?;
    let aug = integrate_augmented(model.dynamics.as_ref(), &p, orbit.x0.as_slice(), orbit.period, &dp, integration)?;
    let sens = solve_initial_sensitivity(model, &p, orbit.x0.as_slice(), &aug, &dp)?;
    let grad = metric_uncertainty_gradient(model, &p, orbit.x0.as_slice(), &sens, &dp);
    Ok((sens, grad))
}
