use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use super::{ContinuationPoint, Evaluation, ZeroProblem};
use crate::error::{Error, Result};
use crate::integrate::{integrate_augmented, integrate_augmented_replay, integrate_state, AugmentedResult, IntegrationSettings, StepSequence};
use crate::models::{sphere_residual, tangent_pivot, SystemModel};
use crate::orbits::{phase_gradients, phase_residual, rhs_vector, PeriodicOrbit};
use crate::sensitivity::{extremal_uncertainty_residual, sensitivity_system};

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|e| e * e).sum::<f64>().sqrt()
}

/// Periodic orbits at fixed uncertainty as functions of the bifurcation
/// parameter. Unknowns `[x0; T; lambda]`, residual `[f_t; L_t]`.
#[derive(Debug, Clone)]
pub struct FrcProblem {
    model: SystemModel,
    eps: Vec<f64>,
    integration: IntegrationSettings,
    scale: DVector<f64>,
    row_scale: DVector<f64>,
}

impl FrcProblem {
    pub fn new(
        model: SystemModel,
        eps: Vec<f64>,
        integration: IntegrationSettings,
        lambda_range: (f64, f64),
        state_scale: f64,
    ) -> Self {
        let n = model.dim();
        let mut scale = DVector::zeros(n + 2);
        for (i, s) in model.dynamics.state_scale(state_scale).into_iter().enumerate() {
            scale[i] = s;
        }
        let mid = 0.5 * (lambda_range.0 + lambda_range.1);
        scale[n] = 2.0 * PI / mid.abs().max(1e-3);
        scale[n + 1] = (lambda_range.1 - lambda_range.0).abs().max(1e-3);
        let mut row_scale = DVector::from_element(n + 1, state_scale);
        row_scale.rows_mut(0, n).copy_from(&scale.rows(0, n));
        Self {
            model,
            eps,
            integration,
            scale,
            row_scale,
        }
    }

    pub fn unknowns_from_orbit(&self, orbit: &PeriodicOrbit) -> DVector<f64> {
        let n = self.model.dim();
        let mut u = DVector::zeros(n + 2);
        u.rows_mut(0, n).copy_from(&orbit.x0);
        u[n] = orbit.period;
        u[n + 1] = orbit.lambda(&self.model);
        u
    }

    pub fn unknowns_from_point(&self, pt: &ContinuationPoint) -> DVector<f64> {
        let n = self.model.dim();
        let mut u = DVector::zeros(n + 2);
        u.rows_mut(0, n).copy_from_slice(&pt.x0);
        u[n] = pt.period;
        u[n + 1] = pt.lambda;
        u
    }
}

impl ZeroProblem for FrcProblem {
    fn n_unknowns(&self) -> usize {
        self.model.dim() + 2
    }

    fn continuation_index(&self) -> usize {
        self.model.dim() + 1
    }

    fn scale(&self) -> DVector<f64> {
        self.scale.clone()
    }

    fn residual_scale(&self) -> DVector<f64> {
        self.row_scale.clone()
    }

    fn evaluate(&self, u: &DVector<f64>, jacobian: bool) -> Result<Evaluation> {
        let n = self.model.dim();
        let x0 = &u.as_slice()[..n];
        let period = u[n];
        let lambda = u[n + 1];
        let (p, _) = self.model.realize(lambda, &self.eps)?;
        let mut residual = DVector::zeros(n + 1);
        residual[n] = phase_residual(&self.model, &p, x0);
        if !jacobian {
            let run = integrate_state(self.model.dynamics.as_ref(), &p, x0, period, &self.integration)?;
            for i in 0..n {
                residual[i] = run.x_t[i] - x0[i];
            }
            return Ok(Evaluation {
                residual,
                jacobian: None,
            });
        }
        let mut dirs = DMatrix::zeros(p.len(), 1);
        dirs[(self.model.lambda_index(), 0)] = 1.0;
        let aug = integrate_augmented(self.model.dynamics.as_ref(), &p, x0, period, &dirs, &self.integration)?;
        for i in 0..n {
            residual[i] = aug.x_t[i] - x0[i];
        }
        let mut j = DMatrix::zeros(n + 1, n + 2);
        j.view_mut((0, 0), (n, n)).copy_from(&aug.h_t);
        for i in 0..n {
            j[(i, i)] -= 1.0;
        }
        j.view_mut((0, n), (n, 1)).copy_from(&rhs_vector(&self.model, &p, aug.x_t.as_slice()));
        j.view_mut((0, n + 1), (n, 1)).copy_from(&aug.s_t);
        let (dl_dx, dl_dp) = phase_gradients(&self.model, &p, x0);
        j.view_mut((n, 0), (1, n)).copy_from(&dl_dx.transpose());
        j[(n, n + 1)] = dl_dp[self.model.lambda_index()];
        Ok(Evaluation {
            residual,
            jacobian: Some(j),
        })
    }

    fn point(&self, u: &DVector<f64>) -> ContinuationPoint {
        let n = self.model.dim();
        let x0: Vec<f64> = u.as_slice()[..n].to_vec();
        let lambda = u[n + 1];
        let metric = self
            .model
            .realize(lambda, &self.eps)
            .map(|(p, _)| self.model.metric.value(&x0, &p))
            .unwrap_or(f64::NAN);
        ContinuationPoint {
            x0,
            eps: self.eps.clone(),
            r: norm(&self.eps),
            period: u[n],
            lambda,
            metric,
            ..Default::default()
        }
    }
}

/// Which scalar is frozen in the extremal-uncertainty problem.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum UqMode {
    /// Bifurcation parameter fixed; unknowns `[x0; eps; T; r]`.
    Expansion { lambda: f64 },
    /// Uncertainty level fixed; unknowns `[x0; eps; T; lambda]`.
    Propagation { r: f64 },
}

/// Orbits whose metric is stationary over the uncertainty sphere:
/// residual `[f_t; f_eps; L_t; L_eps]`.
#[derive(Debug, Clone)]
pub struct UqProblem {
    model: SystemModel,
    mode: UqMode,
    integration: IntegrationSettings,
    scale: DVector<f64>,
    row_scale: DVector<f64>,
    fd_step: f64,
    pivot: usize,
    det_scale: f64,
    det_fixed: bool,
}

/// Scales for the unknowns of a [`UqProblem`].
#[derive(Debug, Clone, Copy)]
pub struct UqScales {
    pub state: f64,
    pub radius: f64,
    pub period: f64,
    pub lambda: f64,
}

impl UqProblem {
    pub fn new(
        model: SystemModel,
        mode: UqMode,
        integration: IntegrationSettings,
        scales: UqScales,
        fd_step: f64,
    ) -> Self {
        let n = model.dim();
        let m = model.n_uncertain();
        let mut scale = DVector::zeros(n + m + 2);
        for (i, s) in model.dynamics.state_scale(scales.state).into_iter().enumerate() {
            scale[i] = s;
        }
        for k in 0..m {
            scale[n + k] = scales.radius;
        }
        scale[n + m] = scales.period;
        scale[n + m + 1] = match mode {
            UqMode::Expansion { .. } => scales.radius,
            UqMode::Propagation { .. } => scales.lambda,
        };
        let mut row_scale = DVector::from_element(n + m + 1, scales.state);
        row_scale.rows_mut(0, n).copy_from(&scale.rows(0, n));
        row_scale[n] = scales.radius * scales.radius;
        Self {
            model,
            mode,
            integration,
            scale,
            row_scale,
            fd_step,
            pivot: 0,
            det_scale: 1.0,
            det_fixed: false,
        }
    }

    pub fn mode(&self) -> UqMode {
        self.mode
    }

    pub fn model(&self) -> &SystemModel {
        &self.model
    }

    /// `(x0, eps, r, T, lambda)` from the unknowns.
    fn split<'a>(&self, u: &'a DVector<f64>) -> (&'a [f64], &'a [f64], f64, f64, f64) {
        let n = self.model.dim();
        let m = self.model.n_uncertain();
        let s = u.as_slice();
        let last = s[n + m + 1];
        let (r, lambda) = match self.mode {
            UqMode::Expansion { lambda } => (last, lambda),
            UqMode::Propagation { r } => (r, last),
        };
        (&s[..n], &s[n..n + m], r, s[n + m], lambda)
    }

    pub fn unknowns_from_point(&self, pt: &ContinuationPoint) -> DVector<f64> {
        let n = self.model.dim();
        let m = self.model.n_uncertain();
        let mut u = DVector::zeros(n + m + 2);
        u.rows_mut(0, n).copy_from_slice(&pt.x0);
        u.rows_mut(n, m).copy_from_slice(&pt.eps);
        u[n + m] = pt.period;
        u[n + m + 1] = match self.mode {
            UqMode::Expansion { .. } => pt.r,
            UqMode::Propagation { .. } => pt.lambda,
        };
        u
    }

    pub fn unknowns(&self, x0: &[f64], eps: &[f64], period: f64, last: f64) -> DVector<f64> {
        let mut u: Vec<f64> = x0.to_vec();
        u.extend_from_slice(eps);
        u.push(period);
        u.push(last);
        DVector::from_vec(u)
    }

    /// `det(B) grad_eps g` with `B` the bordered sensitivity matrix. Unlike
    /// the gradient itself, which diverges where the fixed-uncertainty
    /// response curve folds, this product (an adjugate solve) stays smooth.
    fn weighted_gradient(&self, p: &[f64], dp: &DMatrix<f64>, x0: &[f64], aug: &AugmentedResult) -> Result<(DVector<f64>, f64)> {
        let n = self.model.dim();
        let (border, rhs) = sensitivity_system(&self.model, p, x0, aug, dp)?;
        let lu = border.lu();
        let det = lu.determinant();
        let sol = lu
            .solve(&rhs)
            .ok_or_else(|| Error::Singular("bordered sensitivity matrix".into()))?;
        let gx = self.model.metric.grad_x(x0, p);
        let gp = self.model.metric.grad_p(x0, p);
        let grad = (sol.rows(0, n).tr_mul(&gx) + dp.tr_mul(&gp)) * det;
        Ok((grad, det))
    }

    fn extremal_residual(&self, p: &[f64], dp: &DMatrix<f64>, x0: &[f64], eps: &[f64], aug: &AugmentedResult) -> Result<DVector<f64>> {
        let (grad, _) = self.weighted_gradient(p, dp, x0, aug)?;
        extremal_uncertainty_residual(&(grad / self.det_scale), eps, Some(self.pivot))
    }

    /// `L_eps` at `u`, integrating on a prescribed step sequence.
    fn extremal_residual_replay(&self, u: &DVector<f64>, steps: &StepSequence) -> Result<DVector<f64>> {
        let (x0, eps, _, period, lambda) = self.split(u);
        let (p, dp) = self.model.realize(lambda, eps)?;
        let aug = integrate_augmented_replay(self.model.dynamics.as_ref(), &p, x0, period, &dp, steps)?;
        self.extremal_residual(&p, &dp, x0, eps, &aug)
    }
}

impl ZeroProblem for UqProblem {
    fn n_unknowns(&self) -> usize {
        self.model.dim() + self.model.n_uncertain() + 2
    }

    fn continuation_index(&self) -> usize {
        self.n_unknowns() - 1
    }

    fn scale(&self) -> DVector<f64> {
        self.scale.clone()
    }

    fn residual_scale(&self) -> DVector<f64> {
        self.row_scale.clone()
    }

    fn jacobian_is_cheap(&self) -> bool {
        false
    }

    fn rebase(&mut self, u: &DVector<f64>) -> bool {
        let (x0, eps, _, period, lambda) = self.split(u);
        let pivot = tangent_pivot(eps);
        let mut changed = pivot != self.pivot;
        self.pivot = pivot;
        if !self.det_fixed {
            // Fix the determinant normalisation once per branch.
            let det = self.model.realize(lambda, eps).ok().and_then(|(p, dp)| {
                let aug = integrate_augmented(self.model.dynamics.as_ref(), &p, x0, period, &dp, &self.integration).ok()?;
                self.weighted_gradient(&p, &dp, x0, &aug).ok().map(|(_, d)| d.abs())
            });
            if let Some(d) = det.filter(|d| *d > 0.0 && d.is_finite()) {
                self.det_scale = d;
                self.det_fixed = true;
                changed = true;
            }
        }
        changed
    }

    fn evaluate(&self, u: &DVector<f64>, jacobian: bool) -> Result<Evaluation> {
        let n = self.model.dim();
        let m = self.model.n_uncertain();
        let (x0, eps, r, period, lambda) = self.split(u);
        let (p, dp) = self.model.realize(lambda, eps)?;
        let dirs = self.model.directions(&dp);
        let aug = integrate_augmented(self.model.dynamics.as_ref(), &p, x0, period, &dirs, &self.integration)?;

        let rows = n + m + 1;
        let mut residual = DVector::zeros(rows);
        for i in 0..n {
            residual[i] = aug.x_t[i] - x0[i];
        }
        residual[n] = sphere_residual(eps, r);
        residual[n + 1] = phase_residual(&self.model, &p, x0);
        let l_eps = self.extremal_residual(&p, &dp, x0, eps, &aug)?;
        residual.rows_mut(n + 2, m - 1).copy_from(&l_eps);
        if !jacobian {
            return Ok(Evaluation {
                residual,
                jacobian: None,
            });
        }

        let cols = n + m + 2;
        let last = cols - 1;
        let expansion = matches!(self.mode, UqMode::Expansion { .. });
        let mut j = DMatrix::zeros(rows, cols);
        j.view_mut((0, 0), (n, n)).copy_from(&aug.h_t);
        for i in 0..n {
            j[(i, i)] -= 1.0;
        }
        j.view_mut((0, n), (n, m)).copy_from(&aug.s_t.columns(0, m));
        j.view_mut((0, n + m), (n, 1)).copy_from(&rhs_vector(&self.model, &p, aug.x_t.as_slice()));
        if !expansion {
            j.view_mut((0, last), (n, 1)).copy_from(&aug.s_t.column(m));
        }

        for k in 0..m {
            j[(n, n + k)] = 2.0 * eps[k];
        }
        if expansion {
            j[(n, last)] = -2.0 * r;
        }

        let (dl_dx, dl_dp) = phase_gradients(&self.model, &p, x0);
        j.view_mut((n + 1, 0), (1, n)).copy_from(&dl_dx.transpose());
        let dl_de = dp.tr_mul(&dl_dp);
        for k in 0..m {
            j[(n + 1, n + k)] = dl_de[k];
        }
        if !expansion {
            j[(n + 1, last)] = dl_dp[self.model.lambda_index()];
        }

        // L_eps does not depend on r; every other column by central differences.
        let fd_cols = if expansion { cols - 1 } else { cols };
        for c in 0..fd_cols {
            let h = self.fd_step * (1.0 + u[c].abs());
            let mut up = u.clone();
            let mut um = u.clone();
            up[c] += h;
            um[c] -= h;
            let lp = self.extremal_residual_replay(&up, &aug.steps)?;
            let lm = self.extremal_residual_replay(&um, &aug.steps)?;
            for k in 0..m - 1 {
                j[(n + 2 + k, c)] = (lp[k] - lm[k]) / (2.0 * h);
            }
        }
        Ok(Evaluation {
            residual,
            jacobian: Some(j),
        })
    }

    fn point(&self, u: &DVector<f64>) -> ContinuationPoint {
        let (x0, eps, r, period, lambda) = self.split(u);
        let metric = self
            .model
            .realize(lambda, eps)
            .map(|(p, _)| self.model.metric.value(x0, &p))
            .unwrap_or(f64::NAN);
        ContinuationPoint {
            x0: x0.to_vec(),
            eps: eps.to_vec(),
            r,
            period,
            lambda,
            metric,
            ..Default::default()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{CoordinateMetric, Duffing, UncertaintyKind};
    use crate::orbits::{seed_orbit, ShootingSettings};
    use std::sync::Arc;

    fn duffing() -> SystemModel {
        let metric = Arc::new(CoordinateMetric::new(&Duffing, 0, "q").unwrap());
        SystemModel::new(
            Arc::new(Duffing),
            vec![1.0, 0.1, 1.0, 1.0, 0.2, 1.0],
            "omega",
            metric,
            &[("c", UncertaintyKind::Proportional), ("F", UncertaintyKind::Proportional)],
        )
        .unwrap()
    }

    fn fd_jacobian(p: &impl ZeroProblem, u: &DVector<f64>) -> DMatrix<f64> {
        let r0 = p.evaluate(u, false).unwrap().residual;
        let mut j = DMatrix::zeros(r0.len(), u.len());
        for c in 0..u.len() {
            let h = 1e-6 * (1.0 + u[c].abs());
            let mut up = u.clone();
            let mut um = u.clone();
            up[c] += h;
            um[c] -= h;
            let a = p.evaluate(&up, false).unwrap().residual;
            let b = p.evaluate(&um, false).unwrap().residual;
            j.set_column(c, &((a - b) / (2.0 * h)));
        }
        j
    }

    #[test]
    fn frc_jacobian_matches_differences() {
        let model = duffing();
        let orbit = seed_orbit(&model, 1.2, &[0.0, 0.0], &Default::default(), &ShootingSettings::default()).unwrap();
        let prob = FrcProblem::new(model, vec![0.0, 0.0], Default::default(), (0.3, 2.0), 0.1);
        let u = prob.unknowns_from_orbit(&orbit);
        let ev = prob.evaluate(&u, true).unwrap();
        assert!(ev.residual.amax() < 1e-9);
        let fd = fd_jacobian(&prob, &u);
        assert!((ev.jacobian.unwrap() - fd).amax() < 1e-5);
    }

    #[test]
    fn uq_jacobian_matches_differences() {
        let model = duffing();
        let orbit = seed_orbit(&model, 1.2, &[0.03, -0.04], &Default::default(), &ShootingSettings::default()).unwrap();
        let scales = UqScales {
            state: 0.1,
            radius: 0.1,
            period: 5.0,
            lambda: 1.0,
        };
        for mode in [UqMode::Expansion { lambda: 1.2 }, UqMode::Propagation { r: 0.05 }] {
            let mut prob = UqProblem::new(model.clone(), mode, Default::default(), scales, 1e-6);
            let last = match mode {
                UqMode::Expansion { .. } => 0.05,
                UqMode::Propagation { .. } => 1.2,
            };
            let u = prob.unknowns(orbit.x0.as_slice(), &[0.03, -0.04], orbit.period, last);
            prob.rebase(&u);
            let ev = prob.evaluate(&u, true).unwrap();
            let fd = fd_jacobian(&prob, &u);
            let j = ev.jacobian.unwrap();
            let err = (&j - &fd).amax();
            assert!(err < 1e-5 * (1.0 + fd.amax()), "{mode:?}: {err}");
        }
    }
}
