use nalgebra::{DMatrix, Matrix2, Matrix4, Vector4};

use super::{stuart_landau, stuart_landau_jacobian, Dynamics};
use crate::error::{Error, Result};

/// Canonical parameter order of [`TwoMode`].
pub const TWO_MODE_PARAMS: [&str; 14] = [
    "m1", "m2", "c1", "c2", "c3", "k1", "k2", "k3", "alpha1", "alpha2", "alpha3", "F1", "F2", "omega",
];

const M1: usize = 0;
const M2: usize = 1;
const C1: usize = 2;
const C2: usize = 3;
const C3: usize = 4;
const K1: usize = 5;
const K2: usize = 6;
const K3: usize = 7;
const A1: usize = 8;
const A2: usize = 9;
const A3: usize = 10;
const F1: usize = 11;
const F2: usize = 12;
const OMEGA: usize = 13;

/// Two coupled cubic oscillators driven through a Stuart-Landau pair.
///
/// States: `(q1, q1', q2, q2', s1, s2)`; the forcing is `F_i s2`.
#[derive(Debug, Clone, Copy, Default)]
pub struct TwoMode;

impl Dynamics for TwoMode {
    fn name(&self) -> &str {
        "two_mode"
    }

    fn dim(&self) -> usize {
        6
    }

    fn param_names(&self) -> &[&'static str] {
        &TWO_MODE_PARAMS
    }

    fn rhs(&self, x: &[f64], p: &[f64], dx: &mut [f64]) {
        let d = x[0] - x[2];
        let d3 = d * d * d;
        dx[0] = x[1];
        dx[1] = (-(p[K1] + p[K2]) * x[0] + p[K2] * x[2] - (p[C1] + p[C2]) * x[1] + p[C2] * x[3]
            - p[A1] * x[0].powi(3)
            - p[A2] * d3
            + p[F1] * x[5])
            / p[M1];
        dx[2] = x[3];
        dx[3] = (-(p[K2] + p[K3]) * x[2] + p[K2] * x[0] - (p[C2] + p[C3]) * x[3] + p[C2] * x[1]
            - p[A3] * x[2].powi(3)
            + p[A2] * d3
            + p[F2] * x[5])
            / p[M2];
        let (s1, s2) = stuart_landau(x[4], x[5], p[OMEGA]);
        dx[4] = s1;
        dx[5] = s2;
    }

    fn state_jacobian(&self, x: &[f64], p: &[f64], a: &mut DMatrix<f64>) {
        let d2 = 3.0 * (x[0] - x[2]).powi(2);
        a[(0, 1)] = 1.0;
        a[(1, 0)] = (-(p[K1] + p[K2]) - 3.0 * p[A1] * x[0] * x[0] - p[A2] * d2) / p[M1];
        a[(1, 1)] = -(p[C1] + p[C2]) / p[M1];
        a[(1, 2)] = (p[K2] + p[A2] * d2) / p[M1];
        a[(1, 3)] = p[C2] / p[M1];
        a[(1, 5)] = p[F1] / p[M1];
        a[(2, 3)] = 1.0;
        a[(3, 0)] = (p[K2] + p[A2] * d2) / p[M2];
        a[(3, 1)] = p[C2] / p[M2];
        a[(3, 2)] = (-(p[K2] + p[K3]) - 3.0 * p[A3] * x[2] * x[2] - p[A2] * d2) / p[M2];
        a[(3, 3)] = -(p[C2] + p[C3]) / p[M2];
        a[(3, 5)] = p[F2] / p[M2];
        let j = stuart_landau_jacobian(x[4], x[5], p[OMEGA]);
        a[(4, 4)] = j[0][0];
        a[(4, 5)] = j[0][1];
        a[(5, 4)] = j[1][0];
        a[(5, 5)] = j[1][1];
    }

    fn param_jacobian(&self, x: &[f64], p: &[f64], b: &mut DMatrix<f64>) {
        let d = x[0] - x[2];
        let d3 = d * d * d;
        let mut dx = [0.0; 6];
        self.rhs(x, p, &mut dx);
        let (m1, m2) = (p[M1], p[M2]);

        b[(1, M1)] = -dx[1] / m1;
        b[(1, C1)] = -x[1] / m1;
        b[(1, C2)] = (x[3] - x[1]) / m1;
        b[(1, K1)] = -x[0] / m1;
        b[(1, K2)] = (x[2] - x[0]) / m1;
        b[(1, A1)] = -x[0].powi(3) / m1;
        b[(1, A2)] = -d3 / m1;
        b[(1, F1)] = x[5] / m1;

        b[(3, M2)] = -dx[3] / m2;
        b[(3, C2)] = (x[1] - x[3]) / m2;
        b[(3, C3)] = -x[3] / m2;
        b[(3, K2)] = (x[0] - x[2]) / m2;
        b[(3, K3)] = -x[2] / m2;
        b[(3, A2)] = d3 / m2;
        b[(3, A3)] = -x[2].powi(3) / m2;
        b[(3, F2)] = x[5] / m2;

        b[(4, OMEGA)] = x[5];
        b[(5, OMEGA)] = -x[4];
    }

    fn check_params(&self, p: &[f64]) -> Result<()> {
        if p.len() != TWO_MODE_PARAMS.len() {
            return Err(Error::InvalidModel(format!("two_mode expects 14 parameters, got {}", p.len())));
        }
        if p[M1] <= 0.0 || p[M2] <= 0.0 {
            return Err(Error::InvalidModel("masses must be positive".into()));
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
        let kr = Matrix2::new(
            p[K1] + p[K2] - w * w * p[M1],
            -p[K2],
            -p[K2],
            p[K2] + p[K3] - w * w * p[M2],
        );
        let ki = Matrix2::new(p[C1] + p[C2], -p[C2], -p[C2], p[C2] + p[C3]) * w;
        let mut z = Matrix4::zeros();
        z.fixed_view_mut::<2, 2>(0, 0).copy_from(&kr);
        z.fixed_view_mut::<2, 2>(0, 2).copy_from(&(-ki));
        z.fixed_view_mut::<2, 2>(2, 0).copy_from(&ki);
        z.fixed_view_mut::<2, 2>(2, 2).copy_from(&kr);
        let q = z.lu().solve(&Vector4::new(p[F1], p[F2], 0.0, 0.0))?;
        let (s, c) = phase.sin_cos();
        let disp = |r: f64, i: f64| r * c - i * s;
        let vel = |r: f64, i: f64| w * (-r * s - i * c);
        Some(vec![
            disp(q[0], q[2]),
            vel(q[0], q[2]),
            disp(q[1], q[3]),
            vel(q[1], q[3]),
            s,
            c,
        ])
    }
}

/// Undamped linear natural frequencies of the two-mode chain, ascending.
pub fn linear_natural_frequencies(p: &[f64]) -> Result<(f64, f64)> {
    let (m1, m2) = (p[M1], p[M2]);
    if m1 <= 0.0 || m2 <= 0.0 {
        return Err(Error::InvalidModel("masses must be positive".into()));
    }
    let k11 = p[K1] + p[K2];
    let k22 = p[K2] + p[K3];
    let k12 = -p[K2];
    let det_k = k11 * k22 - k12 * k12;
    if k11 <= 0.0 || det_k <= 0.0 {
        return Err(Error::NotPositiveDefinite);
    }
    // M^{-1/2} K M^{-1/2} is symmetric with the same eigenvalues as M^{-1} K
    let s = nalgebra::Matrix2::new(
        k11 / m1,
        k12 / (m1 * m2).sqrt(),
        k12 / (m1 * m2).sqrt(),
        k22 / m2,
    );
    let eig = s.symmetric_eigenvalues();
    let (lo, hi) = if eig[0] <= eig[1] { (eig[0], eig[1]) } else { (eig[1], eig[0]) };
    Ok((lo.sqrt(), hi.sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::jacobian_check;
    use proptest::prelude::*;

    fn row1() -> Vec<f64> {
        vec![1.0, 1.0, 0.05, 0.005, 0.05, 1.0, 1.0, 1.0, 1.0, 0.5, 1.0, 0.03, 0.03, 1.0]
    }

    #[test]
    fn forcing_oscillator_on_limit_cycle() {
        let mut dx = [0.0; 6];
        let mut p = row1();
        p[OMEGA] = 1.3;
        TwoMode.rhs(&[0.1, 0.0, -0.2, 0.3, 0.0, 1.0], &p, &mut dx);
        assert!((dx[4] - 1.3).abs() < 1e-15);
        assert!(dx[5].abs() < 1e-15);
    }

    #[test]
    fn linear_structure_without_nonlinearity_or_forcing() {
        let mut p = row1();
        for i in [A1, A2, A3, F1, F2] {
            p[i] = 0.0;
        }
        let mut a0 = DMatrix::zeros(6, 6);
        let mut a1 = DMatrix::zeros(6, 6);
        TwoMode.state_jacobian(&[0.0, 0.0, 0.0, 0.0, 0.0, 1.0], &p, &mut a0);
        TwoMode.state_jacobian(&[0.7, -0.3, 1.1, 0.4, 0.0, 1.0], &p, &mut a1);
        // forcing states are identical, so the whole Jacobian must agree
        assert_eq!(a0, a1);
        // F is linear in the mechanical states: F(2x) - 2F(x) = 0 on those rows
        let x = [0.3, -0.1, 0.2, 0.5, 0.0, 0.0];
        let x2: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
        let (mut f1, mut f2) = ([0.0; 6], [0.0; 6]);
        TwoMode.rhs(&x, &p, &mut f1);
        TwoMode.rhs(&x2, &p, &mut f2);
        for i in 0..4 {
            assert!((f2[i] - 2.0 * f1[i]).abs() < 1e-14);
        }
    }

    #[test]
    fn natural_frequencies_row1() {
        let (w1, w2) = linear_natural_frequencies(&row1()).unwrap();
        assert!((w1 - 1.0).abs() < 1e-9);
        assert!((w2 - 3f64.sqrt()).abs() < 1e-9);
    }

    #[test]
    fn natural_frequencies_row2() {
        let p = vec![1.0, 1.0, 0.08, 0.02, 0.05, 1.0, 0.2, 0.8, 1.0, 0.02, 2.0, 0.1, -0.03, 1.0];
        let (w1, w2) = linear_natural_frequencies(&p).unwrap();
        // eigenvalues of [[1.2, -0.2], [-0.2, 1.0]] are 1.1 -/+ sqrt(0.05)
        let oracle_lo = (1.1 - 0.05f64.sqrt()).sqrt();
        let oracle_hi = (1.1 + 0.05f64.sqrt()).sqrt();
        assert!((w1 - oracle_lo).abs() < 1e-12);
        assert!((w2 - oracle_hi).abs() < 1e-12);
        assert!((w1 - 0.9362).abs() < 5e-4);
        assert!((w2 - 1.1505).abs() < 5e-4);
    }

    #[test]
    fn natural_frequencies_uncoupled() {
        let mut p = row1();
        p[K2] = 0.0;
        let (w1, w2) = linear_natural_frequencies(&p).unwrap();
        assert!((w1 - 1.0).abs() < 1e-12 && (w2 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn natural_frequencies_reject_indefinite() {
        let mut p = row1();
        p[K1] = -3.0;
        assert!(matches!(linear_natural_frequencies(&p), Err(Error::NotPositiveDefinite)));
        p = row1();
        p[M2] = 0.0;
        assert!(linear_natural_frequencies(&p).is_err());
        assert!(TwoMode.check_params(&p).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]
        #[test]
        fn jacobians_match_central_differences(
            x in prop::collection::vec(-1.5f64..1.5, 6),
            scale in prop::collection::vec(0.5f64..1.5, 14),
        ) {
            let p: Vec<f64> = row1().iter().zip(&scale).map(|(a, s)| a * s).collect();
            prop_assert!(jacobian_check(&TwoMode, &x, &p, 1e-6) < 1e-5);
        }
    }
}
