//! Small dense linear algebra helpers shared by the Newton solvers.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// LU factorisation with a 1-norm condition estimate.
pub struct Factored {
    lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    pub condition: f64,
}

impl Factored {
    pub fn new(a: &DMatrix<f64>) -> Result<Self> {
        if !a.iter().all(|v| v.is_finite()) {
            return Err(Error::Singular("non-finite matrix entries".into()));
        }
        let norm_a = one_norm(a);
        let lu = a.clone().lu();
        let inv = lu
            .try_inverse()
            .ok_or_else(|| Error::Singular("zero pivot".into()))?;
        let condition = norm_a * one_norm(&inv);
        if !condition.is_finite() {
            return Err(Error::Singular("infinite condition number".into()));
        }
        Ok(Self { lu, condition })
    }

    pub fn solve(&self, b: &DVector<f64>) -> Result<DVector<f64>> {
        self.lu
            .solve(b)
            .ok_or_else(|| Error::Singular("zero pivot".into()))
    }

    pub fn solve_matrix(&self, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.lu
            .solve(b)
            .ok_or_else(|| Error::Singular("zero pivot".into()))
    }
}

pub fn one_norm(a: &DMatrix<f64>) -> f64 {
    a.column_iter()
        .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Solve a square system, failing when the condition estimate exceeds `max_condition`.
pub fn solve_checked(a: &DMatrix<f64>, b: &DVector<f64>, max_condition: f64) -> Result<DVector<f64>> {
    let f = Factored::new(a)?;
    if f.condition > max_condition {
        return Err(Error::Singular(format!("condition estimate {:e}", f.condition)));
    }
    f.solve(b)
}

pub fn max_abs(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn condition_of_identity_is_one() {
        let f = Factored::new(&DMatrix::identity(4, 4)).unwrap();
        assert!((f.condition - 1.0).abs() < 1e-14);
    }

    #[test]
    fn singular_matrix_is_reported() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        assert!(Factored::new(&a).is_err());
    }
}
