//! Dynamical systems, parameter maps and metrics.
//!
//! A [`SystemModel`] bundles an autonomous vector field with its reference
//! parameters, the proportional uncertainty map and the scalar performance
//! metric whose extrema are traced.

mod duffing;
mod simple;
mod two_mode;
mod uncertainty;

use std::fmt::Debug;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub use duffing::Duffing;
pub use simple::{LinearDecay, StuartLandau};
pub use two_mode::{linear_natural_frequencies, TwoMode, TWO_MODE_PARAMS};
pub use uncertainty::{
    sphere_residual, sphere_tangent_basis, sphere_tangent_basis_with_pivot, tangent_pivot,
    UncertainParameter, UncertaintyKind, UncertaintyMap,
};

/// Autonomous vector field `dx/dt = F(x, p)` with analytic derivatives.
///
/// Jacobians are written into caller-provided matrices, which are zeroed
/// by the caller.
pub trait Dynamics: Send + Sync + Debug {
    fn name(&self) -> &str;
    fn dim(&self) -> usize;
    fn param_names(&self) -> &[&'static str];
    fn rhs(&self, x: &[f64], p: &[f64], dx: &mut [f64]);
    /// `A = dF/dx`, N x N.
    fn state_jacobian(&self, x: &[f64], p: &[f64], a: &mut DMatrix<f64>);
    /// `dF/dp`, N x P.
    fn param_jacobian(&self, x: &[f64], p: &[f64], b: &mut DMatrix<f64>);

    fn check_params(&self, _p: &[f64]) -> Result<()> {
        Ok(())
    }

    /// Linearised forced response sampled at forcing phase `phase`, if the
    /// model knows how to produce one. Used to seed periodic-orbit solves.
    fn harmonic_seed(&self, _p: &[f64], _phase: f64) -> Option<Vec<f64>> {
        None
    }

    /// Per-component scale for continuation given a typical response
    /// amplitude. Phase-oscillator states keep unit scale.
    fn state_scale(&self, amplitude: f64) -> Vec<f64> {
        vec![amplitude; self.dim()]
    }

    fn param_index(&self, name: &str) -> Result<usize> {
        self.param_names()
            .iter()
            .position(|n| *n == name)
            .ok_or_else(|| Error::UnknownParameter(name.to_string()))
    }
}

/// Scalar performance metric `g(x, p)` evaluated on the initial state.
pub trait Metric: Send + Sync + Debug {
    fn label(&self) -> String;
    fn value(&self, x: &[f64], p: &[f64]) -> f64;
    fn grad_x(&self, x: &[f64], p: &[f64]) -> DVector<f64>;
    fn grad_p(&self, x: &[f64], p: &[f64]) -> DVector<f64>;
    fn hessian_x(&self, x: &[f64], p: &[f64]) -> DMatrix<f64>;
}

/// Projection onto one state coordinate. Zero Hessian, no parameter dependence.
#[derive(Debug, Clone)]
pub struct CoordinateMetric {
    pub index: usize,
    pub name: String,
    n_states: usize,
    n_params: usize,
}

impl CoordinateMetric {
    pub fn new(dynamics: &dyn Dynamics, index: usize, name: impl Into<String>) -> Result<Self> {
        if index >= dynamics.dim() {
            return Err(Error::InvalidModel(format!(
                "metric index {index} out of range for dimension {}",
                dynamics.dim()
            )));
        }
        Ok(Self {
            index,
            name: name.into(),
            n_states: dynamics.dim(),
            n_params: dynamics.param_names().len(),
        })
    }
}

impl Metric for CoordinateMetric {
    fn label(&self) -> String {
        self.name.clone()
    }

    fn value(&self, x: &[f64], _p: &[f64]) -> f64 {
        x[self.index]
    }

    fn grad_x(&self, _x: &[f64], _p: &[f64]) -> DVector<f64> {
        let mut g = DVector::zeros(self.n_states);
        g[self.index] = 1.0;
        g
    }

    fn grad_p(&self, _x: &[f64], _p: &[f64]) -> DVector<f64> {
        DVector::zeros(self.n_params)
    }

    fn hessian_x(&self, _x: &[f64], _p: &[f64]) -> DMatrix<f64> {
        DMatrix::zeros(self.n_states, self.n_states)
    }
}

/// Reference parameter vector `p0` with the bifurcation parameter marked.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceParameters {
    pub names: Vec<String>,
    pub values: Vec<f64>,
    pub lambda_index: usize,
}

impl ReferenceParameters {
    pub fn new(names: &[&str], values: Vec<f64>, lambda: &str) -> Result<Self> {
        if names.is_empty() || names.len() != values.len() {
            return Err(Error::InvalidModel(format!(
                "{} parameter names for {} values",
                names.len(),
                values.len()
            )));
        }
        if let Some(bad) = names.iter().zip(&values).find(|(_, v)| !v.is_finite()) {
            return Err(Error::InvalidModel(format!("parameter `{}` is not finite", bad.0)));
        }
        let lambda_index = names
            .iter()
            .position(|n| *n == lambda)
            .ok_or_else(|| Error::UnknownParameter(lambda.to_string()))?;
        Ok(Self {
            names: names.iter().map(|s| s.to_string()).collect(),
            values,
            lambda_index,
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn lambda(&self) -> f64 {
        self.values[self.lambda_index]
    }

    pub fn index(&self, name: &str) -> Result<usize> {
        self.names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::UnknownParameter(name.to_string()))
    }

    pub fn get(&self, name: &str) -> Result<f64> {
        Ok(self.values[self.index(name)?])
    }

    pub fn with_lambda(&self, lambda: f64) -> Vec<f64> {
        let mut p = self.values.clone();
        p[self.lambda_index] = lambda;
        p
    }
}

/// A dynamical system together with its reference parameters, metric and
/// uncertainty map.
#[derive(Debug, Clone)]
pub struct SystemModel {
    pub dynamics: Arc<dyn Dynamics>,
    pub reference: ReferenceParameters,
    pub metric: Arc<dyn Metric>,
    pub uncertainty: UncertaintyMap,
}

impl SystemModel {
    pub fn new(
        dynamics: Arc<dyn Dynamics>,
        values: Vec<f64>,
        lambda: &str,
        metric: Arc<dyn Metric>,
        uncertain: &[(&str, UncertaintyKind)],
    ) -> Result<Self> {
        let reference = ReferenceParameters::new(dynamics.param_names(), values, lambda)?;
        dynamics.check_params(&reference.values)?;
        let uncertainty = UncertaintyMap::new(&reference, uncertain)?;
        Ok(Self {
            dynamics,
            reference,
            metric,
            uncertainty,
        })
    }

    pub fn dim(&self) -> usize {
        self.dynamics.dim()
    }

    pub fn n_params(&self) -> usize {
        self.reference.len()
    }

    pub fn n_uncertain(&self) -> usize {
        self.uncertainty.len()
    }

    pub fn lambda_index(&self) -> usize {
        self.reference.lambda_index
    }

    /// Realised parameters at bifurcation parameter `lambda` and uncertainty
    /// `eps`, together with `dp/deps` (P x M).
    pub fn realize(&self, lambda: f64, eps: &[f64]) -> Result<(Vec<f64>, DMatrix<f64>)> {
        let p0 = self.reference.with_lambda(lambda);
        self.uncertainty.apply(&p0, eps)
    }

    /// Direction matrix `[dp/deps | dp/dlambda]` (P x (M+1)) used to drive
    /// the sensitivity equations.
    pub fn directions(&self, dp_deps: &DMatrix<f64>) -> DMatrix<f64> {
        let (np, m) = dp_deps.shape();
        let mut d = DMatrix::zeros(np, m + 1);
        d.columns_mut(0, m).copy_from(dp_deps);
        d[(self.lambda_index(), m)] = 1.0;
        d
    }

    /// Same model with a different uncertainty map.
    pub fn with_uncertainty(&self, uncertain: &[(&str, UncertaintyKind)]) -> Result<Self> {
        let mut m = self.clone();
        m.uncertainty = UncertaintyMap::new(&self.reference, uncertain)?;
        Ok(m)
    }

    /// Same model with an overridden reference parameter.
    pub fn with_parameter(&self, name: &str, value: f64) -> Result<Self> {
        let mut m = self.clone();
        let i = m.reference.index(name)?;
        m.reference.values[i] = value;
        m.dynamics.check_params(&m.reference.values)?;
        Ok(m)
    }
}

/// Compare analytic Jacobians of `dynamics` against central differences at
/// `(x, p)`. Returns the worst relative error over `A` and `dF/dp`.
pub fn jacobian_check(dynamics: &dyn Dynamics, x: &[f64], p: &[f64], step: f64) -> f64 {
    let n = dynamics.dim();
    let np = p.len();
    let mut a = DMatrix::zeros(n, n);
    let mut b = DMatrix::zeros(n, np);
    dynamics.state_jacobian(x, p, &mut a);
    dynamics.param_jacobian(x, p, &mut b);

    let mut fp = vec![0.0; n];
    let mut fm = vec![0.0; n];
    let mut worst: f64 = 0.0;
    let mut compare = |analytic: f64, fd: f64| {
        let err = (analytic - fd).abs() / (1.0 + analytic.abs().max(fd.abs()));
        worst = worst.max(err);
    };

    for j in 0..n {
        let mut xp = x.to_vec();
        let mut xm = x.to_vec();
        let h = step * (1.0 + x[j].abs());
        xp[j] += h;
        xm[j] -= h;
        dynamics.rhs(&xp, p, &mut fp);
        dynamics.rhs(&xm, p, &mut fm);
        for i in 0..n {
            compare(a[(i, j)], (fp[i] - fm[i]) / (2.0 * h));
        }
    }
    for j in 0..np {
        let mut pp = p.to_vec();
        let mut pm = p.to_vec();
        let h = step * (1.0 + p[j].abs());
        pp[j] += h;
        pm[j] -= h;
        dynamics.rhs(x, &pp, &mut fp);
        dynamics.rhs(x, &pm, &mut fm);
        for i in 0..n {
            compare(b[(i, j)], (fp[i] - fm[i]) / (2.0 * h));
        }
    }
    worst
}

/// Stuart-Landau pair `(s1, s2)` generating `s2 = cos(omega t)` on the unit circle.
#[inline]
pub(crate) fn stuart_landau(s1: f64, s2: f64, omega: f64) -> (f64, f64) {
    let rho = s1 * s1 + s2 * s2;
    (s1 + omega * s2 - s1 * rho, -omega * s1 + s2 - s2 * rho)
}

#[inline]
pub(crate) fn stuart_landau_jacobian(s1: f64, s2: f64, omega: f64) -> [[f64; 2]; 2] {
    [
        [1.0 - 3.0 * s1 * s1 - s2 * s2, omega - 2.0 * s1 * s2],
        [-omega - 2.0 * s1 * s2, 1.0 - s1 * s1 - 3.0 * s2 * s2],
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_rejects_unknown_lambda() {
        let r = ReferenceParameters::new(&["a", "b"], vec![1.0, 2.0], "c");
        assert!(matches!(r, Err(Error::UnknownParameter(_))));
    }

    #[test]
    fn coordinate_metric_gradient() {
        let d = TwoMode;
        let m = CoordinateMetric::new(&d, 2, "q2").unwrap();
        let x = [0.1, 0.2, 0.3, 0.4, 0.0, 1.0];
        assert_eq!(m.value(&x, &[]), 0.3);
        assert_eq!(m.grad_x(&x, &[])[2], 1.0);
        assert_eq!(m.grad_x(&x, &[]).sum(), 1.0);
        assert!(CoordinateMetric::new(&d, 6, "bad").is_err());
    }

    #[test]
    fn stuart_landau_on_unit_circle() {
        let (d1, d2) = stuart_landau(0.0, 1.0, 1.7);
        assert!((d1 - 1.7).abs() < 1e-15);
        assert!(d2.abs() < 1e-15);
    }
}
