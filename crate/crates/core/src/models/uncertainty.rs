use nalgebra::DMatrix;

use super::ReferenceParameters;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UncertaintyKind {
    /// `p = p0 (1 + eps)`
    Proportional,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UncertainParameter {
    pub name: String,
    pub index: usize,
    pub kind: UncertaintyKind,
}

/// Maps the uncertainty vector onto the parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct UncertaintyMap {
    pub entries: Vec<UncertainParameter>,
    n_params: usize,
}

impl UncertaintyMap {
    pub fn new(reference: &ReferenceParameters, mapping: &[(&str, UncertaintyKind)]) -> Result<Self> {
        if mapping.is_empty() {
            return Err(Error::InvalidMapping("at least one uncertain parameter is required".into()));
        }
        let mut entries: Vec<UncertainParameter> = Vec::with_capacity(mapping.len());
        for &(name, kind) in mapping {
            let index = reference.index(name)?;
            if index == reference.lambda_index {
                return Err(Error::InvalidMapping(format!(
                    "bifurcation parameter `{name}` cannot be uncertain"
                )));
            }
            if entries.iter().any(|e| e.index == index) {
                return Err(Error::InvalidMapping(format!("parameter `{name}` mapped twice")));
            }
            entries.push(UncertainParameter {
                name: name.to_string(),
                index,
                kind,
            });
        }
        Ok(Self {
            entries,
            n_params: reference.len(),
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn names(&self) -> Vec<String> {
        self.entries.iter().map(|e| e.name.clone()).collect()
    }

    /// Realised parameters and `dp/deps` (P x M).
    pub fn apply(&self, p0: &[f64], eps: &[f64]) -> Result<(Vec<f64>, DMatrix<f64>)> {
        if p0.len() != self.n_params {
            return Err(Error::InvalidMapping(format!(
                "expected {} parameters, got {}",
                self.n_params,
                p0.len()
            )));
        }
        if eps.len() != self.entries.len() {
            return Err(Error::InvalidMapping(format!(
                "expected {} uncertainties, got {}",
                self.entries.len(),
                eps.len()
            )));
        }
        let mut p = p0.to_vec();
        let mut dp = DMatrix::zeros(p0.len(), eps.len());
        for (m, e) in self.entries.iter().enumerate() {
            match e.kind {
                UncertaintyKind::Proportional => {
                    p[e.index] = p0[e.index] * (1.0 + eps[m]);
                    dp[(e.index, m)] = p0[e.index];
                }
            }
        }
        Ok((p, dp))
    }
}

/// `sum(eps^2) - r^2`
pub fn sphere_residual(eps: &[f64], r: f64) -> f64 {
    eps.iter().map(|e| e * e).sum::<f64>() - r * r
}

/// Index of the largest-magnitude entry (first wins on ties).
pub fn tangent_pivot(eps: &[f64]) -> usize {
    let mut best = 0;
    for (i, e) in eps.iter().enumerate() {
        if e.abs() > eps[best].abs() {
            best = i;
        }
    }
    best
}

/// Orthonormal basis of the tangent space of the sphere through `eps`,
/// returned as an (M-1) x M matrix whose rows are orthogonal to `eps`.
pub fn sphere_tangent_basis(eps: &[f64]) -> Result<DMatrix<f64>> {
    sphere_tangent_basis_with_pivot(eps, tangent_pivot(eps))
}

/// Householder completion of `eps/|eps|` around a fixed pivot. The basis is
/// smooth in `eps` as long as the pivot entry keeps its sign, which lets a
/// continuation step hold the pivot fixed across its Newton iterations.
pub fn sphere_tangent_basis_with_pivot(eps: &[f64], pivot: usize) -> Result<DMatrix<f64>> {
    let m = eps.len();
    let norm = eps.iter().map(|e| e * e).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return Err(Error::DegenerateOrigin);
    }
    if pivot >= m {
        return Err(Error::Precondition(format!("pivot {pivot} out of range")));
    }
    let u: Vec<f64> = eps.iter().map(|e| e / norm).collect();
    if u[pivot] == 0.0 {
        return Err(Error::Precondition("pivot entry of eps is zero".into()));
    }
    let sign = u[pivot].signum();
    // w = u + sign e_pivot, Q = I - 2 w w^T / (w^T w), Q e_pivot = -sign u
    let mut w = u.clone();
    w[pivot] += sign;
    let wtw: f64 = w.iter().map(|v| v * v).sum();
    let mut basis = DMatrix::zeros(m.saturating_sub(1), m);
    for (row, j) in (0..m).filter(|&j| j != pivot).enumerate() {
        for i in 0..m {
            let q = if i == j { 1.0 } else { 0.0 } - 2.0 * w[i] * w[j] / wtw;
            basis[(row, i)] = -q;
        }
    }
    Ok(basis)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn reference() -> ReferenceParameters {
        ReferenceParameters::new(&["c", "k", "F", "omega"], vec![0.1, 1.0, 0.2, 1.0], "omega").unwrap()
    }

    #[test]
    fn zero_uncertainty_is_identity() {
        let r = reference();
        let map = UncertaintyMap::new(&r, &[("c", UncertaintyKind::Proportional)]).unwrap();
        let (p, dp) = map.apply(&r.values, &[0.0]).unwrap();
        assert_eq!(p, r.values);
        assert_eq!(dp[(0, 0)], 0.1);
    }

    #[test]
    fn proportional_damping() {
        let r = ReferenceParameters::new(&["c1", "omega"], vec![0.015, 1.0], "omega").unwrap();
        let map = UncertaintyMap::new(&r, &[("c1", UncertaintyKind::Proportional)]).unwrap();
        let (p, dp) = map.apply(&r.values, &[0.1]).unwrap();
        assert!((p[0] - 0.0165).abs() < 1e-15);
        assert_eq!(dp[(0, 0)], 0.015);
        assert_eq!(dp[(1, 0)], 0.0);
    }

    #[test]
    fn duffing_damping_and_forcing() {
        let r = reference();
        let map = UncertaintyMap::new(
            &r,
            &[("c", UncertaintyKind::Proportional), ("F", UncertaintyKind::Proportional)],
        )
        .unwrap();
        let (p, _) = map.apply(&r.values, &[0.05, -0.05]).unwrap();
        assert!((p[0] - 0.105).abs() < 1e-15);
        assert!((p[2] - 0.19).abs() < 1e-15);
        assert_eq!(p[1], 1.0);
    }

    #[test]
    fn mapping_errors() {
        let r = reference();
        let k = UncertaintyKind::Proportional;
        assert!(matches!(
            UncertaintyMap::new(&r, &[("zeta", k)]),
            Err(Error::UnknownParameter(_))
        ));
        assert!(UncertaintyMap::new(&r, &[("omega", k)]).is_err());
        assert!(UncertaintyMap::new(&r, &[("c", k), ("c", k)]).is_err());
        assert!(UncertaintyMap::new(&r, &[]).is_err());
    }

    #[test]
    fn sphere_residual_examples() {
        assert_eq!(sphere_residual(&[0.0, 0.0], 0.0), 0.0);
        assert!(sphere_residual(&[0.06, 0.08], 0.1).abs() < 1e-17);
        assert!((sphere_residual(&[0.1, 0.0], 0.07) - 0.0051).abs() < 1e-16);
    }

    #[test]
    fn tangent_basis_axis_aligned() {
        let b = sphere_tangent_basis(&[0.1, 0.0]).unwrap();
        assert_eq!(b.shape(), (1, 2));
        assert!(b[(0, 0)].abs() < 1e-15);
        assert!((b[(0, 1)].abs() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn tangent_basis_perpendicular_in_plane() {
        let b = sphere_tangent_basis(&[0.06, 0.08]).unwrap();
        assert!((b[(0, 0)] + 0.8).abs() < 1e-14);
        assert!((b[(0, 1)] - 0.6).abs() < 1e-14);
    }

    #[test]
    fn tangent_basis_three_dimensions() {
        let b = sphere_tangent_basis(&[0.2, 0.0, 0.0]).unwrap();
        assert_eq!(b.shape(), (2, 3));
        let gram = &b * b.transpose();
        assert!((gram - DMatrix::identity(2, 2)).abs().max() < 1e-14);
        assert!(b.column(0).abs().max() < 1e-15);
    }

    #[test]
    fn tangent_basis_origin_is_degenerate() {
        assert!(matches!(sphere_tangent_basis(&[0.0, 0.0]), Err(Error::DegenerateOrigin)));
    }

    proptest! {
        #[test]
        fn tangent_basis_is_orthonormal_complement(eps in prop::collection::vec(-1.0f64..1.0, 2..7)) {
            let norm: f64 = eps.iter().map(|e| e * e).sum::<f64>().sqrt();
            prop_assume!(norm > 1e-6);
            let b = sphere_tangent_basis(&eps).unwrap();
            let m = eps.len();
            let gram = &b * b.transpose();
            prop_assert!((gram - DMatrix::identity(m - 1, m - 1)).abs().max() < 1e-12);
            let e = nalgebra::DVector::from_column_slice(&eps);
            prop_assert!((&b * e).abs().max() < 1e-12 * norm.max(1.0));
        }

        #[test]
        fn unmapped_parameters_untouched(e1 in -0.5f64..0.5) {
            let r = reference();
            let map = UncertaintyMap::new(&r, &[("k", UncertaintyKind::Proportional)]).unwrap();
            let (p, _) = map.apply(&r.values, &[e1]).unwrap();
            prop_assert_eq!(p[0], r.values[0]);
            prop_assert_eq!(p[2], r.values[2]);
            prop_assert_eq!(p[3], r.values[3]);
        }
    }
}
