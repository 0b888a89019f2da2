//! Single-shooting periodic orbits and forced-response curves.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use crate::continuation::{self, Branch, ContinuationSettings, FrcProblem, Provenance};
use crate::error::{Error, Result};
use crate::integrate::{integrate_augmented, integrate_state, AugmentedResult, IntegrationSettings};
use crate::linalg::{max_abs, Factored};
use crate::models::SystemModel;

/// Converged shooting solution.
#[derive(Debug, Clone)]
pub struct PeriodicOrbit {
    pub x0: DVector<f64>,
    pub period: f64,
    pub p: Vec<f64>,
    pub monodromy: DMatrix<f64>,
    pub residual_norm: f64,
    pub phase_residual: f64,
    pub metric_value: f64,
    pub iterations: usize,
}

impl PeriodicOrbit {
    /// Bifurcation parameter value the orbit was computed at.
    pub fn lambda(&self, model: &SystemModel) -> f64 {
        self.p[model.lambda_index()]
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShootingSettings {
    pub tolerance: f64,
    pub max_iterations: usize,
    pub max_damping_halvings: usize,
}

impl Default for ShootingSettings {
    fn default() -> Self {
        Self {
            tolerance: 1e-10,
            max_iterations: 20,
            max_damping_halvings: 4,
        }
    }
}

/// `x(T, p; x0) - x0`
pub fn periodicity_residual(
    model: &SystemModel,
    p: &[f64],
    x0: &[f64],
    period: f64,
    settings: &IntegrationSettings,
) -> Result<DVector<f64>> {
    let run = integrate_state(model.dynamics.as_ref(), p, x0, period, settings)?;
    Ok(DVector::from_iterator(
        x0.len(),
        run.x_t.iter().zip(x0).map(|(a, b)| a - b),
    ))
}

/// Time derivative of the metric at the initial state, `grad_x g . F(x0, p)`.
pub fn phase_residual(model: &SystemModel, p: &[f64], x0: &[f64]) -> f64 {
    let mut f = vec![0.0; x0.len()];
    model.dynamics.rhs(x0, p, &mut f);
    let g = model.metric.grad_x(x0, p);
    g.iter().zip(&f).map(|(a, b)| a * b).sum()
}

/// Derivatives of the phase residual: `(dL/dx (1 x N), dL/dp (1 x P))`.
pub fn phase_gradients(model: &SystemModel, p: &[f64], x0: &[f64]) -> (DVector<f64>, DVector<f64>) {
    let n = model.dim();
    let np = p.len();
    let mut a = DMatrix::zeros(n, n);
    let mut b = DMatrix::zeros(n, np);
    model.dynamics.state_jacobian(x0, p, &mut a);
    model.dynamics.param_jacobian(x0, p, &mut b);
    let mut f = vec![0.0; n];
    model.dynamics.rhs(x0, p, &mut f);
    let g = model.metric.grad_x(x0, p);
    let hess = model.metric.hessian_x(x0, p);
    let fv = DVector::from_vec(f);
    let dx = a.tr_mul(&g) + hess.tr_mul(&fv);
    let dp = b.tr_mul(&g);
    (dx, dp)
}

pub(crate) fn rhs_vector(model: &SystemModel, p: &[f64], x: &[f64]) -> DVector<f64> {
    let mut f = vec![0.0; x.len()];
    model.dynamics.rhs(x, p, &mut f);
    DVector::from_vec(f)
}

struct ShootingEval {
    residual: DVector<f64>,
    jacobian: DMatrix<f64>,
    aug: AugmentedResult,
}

fn shooting_eval(
    model: &SystemModel,
    p: &[f64],
    x0: &DVector<f64>,
    period: f64,
    integration: &IntegrationSettings,
) -> Result<ShootingEval> {
    let n = model.dim();
    let no_dirs = DMatrix::zeros(p.len(), 0);
    let aug = integrate_augmented(model.dynamics.as_ref(), p, x0.as_slice(), period, &no_dirs, integration)?;
    let mut residual = DVector::zeros(n + 1);
    residual.rows_mut(0, n).copy_from(&(&aug.x_t - x0));
    residual[n] = phase_residual(model, p, x0.as_slice());

    let mut jacobian = DMatrix::zeros(n + 1, n + 1);
    let mut hm = aug.h_t.clone();
    for i in 0..n {
        hm[(i, i)] -= 1.0;
    }
    jacobian.view_mut((0, 0), (n, n)).copy_from(&hm);
    let f_t = rhs_vector(model, p, aug.x_t.as_slice());
    jacobian.view_mut((0, n), (n, 1)).copy_from(&f_t);
    let (dl_dx, _) = phase_gradients(model, p, x0.as_slice());
    jacobian.view_mut((n, 0), (1, n)).copy_from(&dl_dx.transpose());
    Ok(ShootingEval {
        residual,
        jacobian,
        aug,
    })
}

/// Newton solve of `[f_t; L_t] = 0` in `(x0, T)` at fixed parameters.
pub fn solve_periodic_orbit(
    model: &SystemModel,
    p: &[f64],
    guess_x0: &[f64],
    guess_period: f64,
    integration: &IntegrationSettings,
    shooting: &ShootingSettings,
) -> Result<PeriodicOrbit> {
    let n = model.dim();
    if guess_x0.len() != n {
        return Err(Error::Precondition(format!("guess has length {}, expected {n}", guess_x0.len())));
    }
    let mut x0 = DVector::from_column_slice(guess_x0);
    let mut period = guess_period;
    let mut eval = shooting_eval(model, p, &x0, period, integration)?;
    let mut norm = max_abs(&eval.residual);
    let mut iterations = 0;

    while norm >= shooting.tolerance {
        if iterations >= shooting.max_iterations {
            return Err(Error::NoConvergence {
                iterations,
                residual: norm,
            });
        }
        iterations += 1;
        let lu = Factored::new(&eval.jacobian)?;
        let delta = lu.solve(&(-&eval.residual))?;
        let mut scale = 1.0;
        let mut accepted = None;
        for _ in 0..=shooting.max_damping_halvings {
            let x_try = &x0 + delta.rows(0, n) * scale;
            let t_try = period + delta[n] * scale;
            if t_try > 0.0 {
                if let Ok(e) = shooting_eval(model, p, &x_try, t_try, integration) {
                    let r = max_abs(&e.residual);
                    if r < norm || r < shooting.tolerance {
                        accepted = Some((x_try, t_try, e, r));
                        break;
                    }
                }
            }
            scale *= 0.5;
        }
        match accepted {
            Some((x, t, e, r)) => {
                x0 = x;
                period = t;
                eval = e;
                norm = r;
            }
            None => {
                return Err(Error::NoConvergence {
                    iterations,
                    residual: norm,
                })
            }
        }
    }

    Ok(PeriodicOrbit {
        metric_value: model.metric.value(x0.as_slice(), p),
        phase_residual: eval.residual[n],
        residual_norm: norm,
        monodromy: eval.aug.h_t,
        x0,
        period,
        p: p.to_vec(),
        iterations,
    })
}

/// Initial guess from the model's linearised response, phased so the metric
/// sits at its maximum. Returns `(x0, T)`.
pub fn harmonic_guess(model: &SystemModel, p: &[f64]) -> Result<(Vec<f64>, f64)> {
    let omega = p[model.lambda_index()];
    let mut best: Option<(f64, Vec<f64>)> = None;
    for i in 0..720 {
        let phase = 2.0 * PI * i as f64 / 720.0;
        let x = model
            .dynamics
            .harmonic_seed(p, phase)
            .ok_or_else(|| Error::Precondition("model provides no harmonic seed".into()))?;
        let g = model.metric.value(&x, p);
        if best.as_ref().is_none_or(|(b, _)| g > *b) {
            best = Some((g, x));
        }
    }
    let (_, x) = best.expect("non-empty phase sweep");
    Ok((x, 2.0 * PI / omega))
}

/// Periodic orbit at the reference parameters with uncertainty `eps`,
/// seeded from the linear response.
pub fn seed_orbit(
    model: &SystemModel,
    lambda: f64,
    eps: &[f64],
    integration: &IntegrationSettings,
    shooting: &ShootingSettings,
) -> Result<PeriodicOrbit> {
    let (p, _) = model.realize(lambda, eps)?;
    let (x0, period) = harmonic_guess(model, &p)?;
    match solve_periodic_orbit(model, &p, &x0, period, integration, shooting) {
        Ok(orbit) => Ok(orbit),
        Err(first) => {
            // Let the transient decay, then re-phase onto a metric maximum.
            let settle = integrate_state(model.dynamics.as_ref(), &p, &x0, SETTLE_PERIODS * period, integration)?;
            let dense = integrate_state(model.dynamics.as_ref(), &p, &settle.x_t, period, &integration.clone().with_dense())
                .map_err(|_| first)?;
            let traj = dense.trajectory.expect("dense output requested");
            let best = traj
                .states
                .iter()
                .max_by(|a, b| model.metric.value(a, &p).total_cmp(&model.metric.value(b, &p)))
                .expect("non-empty trajectory");
            solve_periodic_orbit(model, &p, best, period, integration, shooting)
        }
    }
}

const SETTLE_PERIODS: f64 = 300.0;

/// Forced-response curve at fixed uncertainty `eps`, continued in the
/// bifurcation parameter from the low end of `lambda_range`.
pub fn trace_frc(
    model: &SystemModel,
    eps: &[f64],
    lambda_range: (f64, f64),
    integration: &IntegrationSettings,
    continuation_settings: &ContinuationSettings,
) -> Result<Branch> {
    let shooting = ShootingSettings::default();
    let start = seed_orbit(model, lambda_range.0, eps, integration, &shooting)?;
    trace_frc_from(model, eps, &start, lambda_range, 1.0, integration, continuation_settings)
}

/// Forced-response curve continued from a known orbit in the direction of
/// increasing (`direction > 0`) or decreasing bifurcation parameter.
pub fn trace_frc_from(
    model: &SystemModel,
    eps: &[f64],
    start: &PeriodicOrbit,
    lambda_range: (f64, f64),
    direction: f64,
    integration: &IntegrationSettings,
    continuation_settings: &ContinuationSettings,
) -> Result<Branch> {
    let mut problem = FrcProblem::new(
        model.clone(),
        eps.to_vec(),
        integration.clone(),
        lambda_range,
        continuation_settings.state_scale,
    );
    let u0 = problem.unknowns_from_orbit(start);
    let mut branch = continuation::continue_branch(
        &mut problem,
        &u0,
        direction,
        continuation_settings,
        &continuation::StopCriteria::range(lambda_range),
    )?;
    branch.provenance = Provenance::frc(eps);
    Ok(branch)
}
