use nalgebra::DMatrix;

use super::{stuart_landau, stuart_landau_jacobian, Dynamics};
use crate::error::{Error, Result};

const PARAMS: [&str; 6] = ["m", "c", "k", "alpha", "F", "omega"];
const M: usize = 0;
const C: usize = 1;
const K: usize = 2;
const ALPHA: usize = 3;
const F: usize = 4;
const OMEGA: usize = 5;

/// Single-degree-of-freedom Duffing oscillator, `m q'' + c q' + k q + alpha q^3 = F cos(omega t)`,
/// with the forcing generated by a Stuart-Landau pair. States: `(q, q', s1, s2)`.
#[derive(Debug, Clone, Copy, Default)]
pub struct Duffing;

impl Dynamics for Duffing {
    fn name(&self) -> &str {
        "duffing"
    }

    fn dim(&self) -> usize {
        4
    }

    fn param_names(&self) -> &[&'static str] {
        &PARAMS
    }

    fn rhs(&self, x: &[f64], p: &[f64], dx: &mut [f64]) {
        dx[0] = x[1];
        dx[1] = (-p[C] * x[1] - p[K] * x[0] - p[ALPHA] * x[0].powi(3) + p[F] * x[3]) / p[M];
        let (s1, s2) = stuart_landau(x[2], x[3], p[OMEGA]);
        dx[2] = s1;
        dx[3] = s2;
    }

    fn state_jacobian(&self, x: &[f64], p: &[f64], a: &mut DMatrix<f64>) {
        a[(0, 1)] = 1.0;
        a[(1, 0)] = (-p[K] - 3.0 * p[ALPHA] * x[0] * x[0]) / p[M];
        a[(1, 1)] = -p[C] / p[M];
        a[(1, 3)] = p[F] / p[M];
        let j = stuart_landau_jacobian(x[2], x[3], p[OMEGA]);
        a[(2, 2)] = j[0][0];
        a[(2, 3)] = j[0][1];
        a[(3, 2)] = j[1][0];
        a[(3, 3)] = j[1][1];
    }

    fn param_jacobian(&self, x: &[f64], p: &[f64], b: &mut DMatrix<f64>) {
        let m = p[M];
        let acc = (-p[C] * x[1] - p[K] * x[0] - p[ALPHA] * x[0].powi(3) + p[F] * x[3]) / m;
        b[(1, M)] = -acc / m;
        b[(1, C)] = -x[1] / m;
        b[(1, K)] = -x[0] / m;
        b[(1, ALPHA)] = -x[0].powi(3) / m;
        b[(1, F)] = x[3] / m;
        b[(2, OMEGA)] = x[3];
        b[(3, OMEGA)] = -x[2];
    }

    fn check_params(&self, p: &[f64]) -> Result<()> {
        if p.len() != PARAMS.len() {
            return Err(Error::InvalidModel(format!("duffing expects 6 parameters, got {}", p.len())));
        }
        if p[M] <= 0.0 {
            return Err(Error::InvalidModel("mass must be positive".into()));
        }
        Ok(())
    }

    fn state_scale(&self, amplitude: f64) -> Vec<f64> {
        let mut s = vec![amplitude; self.dim()];
        let n = s.len();
        s[n - 2] = 1.0;
        s[n - 1] = 1.0;
        s
    }

    fn harmonic_seed(&self, p: &[f64], phase: f64) -> Option<Vec<f64>> {
        let w = p[OMEGA];
        let re = p[K] - w * w * p[M];
        let im = p[C] * w;
        let den = re * re + im * im;
        if den == 0.0 {
            return None;
        }
        // Q = F / (re + i im)
        let (qr, qi) = (p[F] * re / den, -p[F] * im / den);
        let (s, c) = phase.sin_cos();
        Some(vec![qr * c - qi * s, w * (-qr * s - qi * c), s, c])
    }
}
