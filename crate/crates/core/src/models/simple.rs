use nalgebra::DMatrix;

use super::{stuart_landau, stuart_landau_jacobian, Dynamics};

/// Stuart-Landau pair on its own; parameter `omega`.
#[derive(Debug, Clone, Copy, Default)]
pub struct StuartLandau;

impl Dynamics for StuartLandau {
    fn name(&self) -> &str {
        "stuart_landau"
    }

    fn dim(&self) -> usize {
        2
    }

    fn param_names(&self) -> &[&'static str] {
        &["omega"]
    }

    fn rhs(&self, x: &[f64], p: &[f64], dx: &mut [f64]) {
        let (a, b) = stuart_landau(x[0], x[1], p[0]);
        dx[0] = a;
        dx[1] = b;
    }

    fn state_jacobian(&self, x: &[f64], p: &[f64], a: &mut DMatrix<f64>) {
        let j = stuart_landau_jacobian(x[0], x[1], p[0]);
        a[(0, 0)] = j[0][0];
        a[(0, 1)] = j[0][1];
        a[(1, 0)] = j[1][0];
        a[(1, 1)] = j[1][1];
    }

    fn param_jacobian(&self, x: &[f64], _p: &[f64], b: &mut DMatrix<f64>) {
        b[(0, 0)] = x[1];
        b[(1, 0)] = -x[0];
    }

    fn harmonic_seed(&self, _p: &[f64], phase: f64) -> Option<Vec<f64>> {
        Some(vec![phase.sin(), phase.cos()])
    }
}

/// Scalar linear system `x' = a x`; parameters `(a, b)` where `b` is inert.
#[derive(Debug, Clone, Copy, Default)]
pub struct LinearDecay;

impl Dynamics for LinearDecay {
    fn name(&self) -> &str {
        "linear_decay"
    }

    fn dim(&self) -> usize {
        1
    }

    fn param_names(&self) -> &[&'static str] {
        &["a", "b"]
    }

    fn rhs(&self, x: &[f64], p: &[f64], dx: &mut [f64]) {
        dx[0] = p[0] * x[0];
    }

    fn state_jacobian(&self, _x: &[f64], p: &[f64], a: &mut DMatrix<f64>) {
        a[(0, 0)] = p[0];
    }

    fn param_jacobian(&self, x: &[f64], _p: &[f64], b: &mut DMatrix<f64>) {
        b[(0, 0)] = x[0];
    }
}
