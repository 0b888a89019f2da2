//! Brute-force validation: forced-response curves over a grid of the
//! uncertainty disc, compared against computed margins.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::envelope::{compare_envelopes, fold_lambdas, Envelope, EnvelopeComparison};
use super::GridSettings;
use crate::continuation::{Branch, MarginSettings};
use crate::error::{Error, Result};
use crate::models::SystemModel;
use crate::orbits::trace_frc;

/// Uncertainty samples on `n_radial` concentric circles (the outermost at
/// `radius`) times `n_boundary` angles, ring by ring.
pub fn grid_samples(radius: f64, n_boundary: usize, n_radial: usize, dim: usize) -> Result<Vec<Vec<f64>>> {
    if dim != 2 {
        return Err(Error::Precondition(format!(
            "the angular grid needs two uncertain parameters, got {dim}"
        )));
    }
    if radius == 0.0 {
        return Ok(vec![vec![0.0, 0.0]]);
    }
    let mut samples = Vec::with_capacity(n_boundary * n_radial);
    for ring in 1..=n_radial {
        let r = radius * ring as f64 / n_radial as f64;
        for j in 0..n_boundary {
            let theta = 2.0 * PI * j as f64 / n_boundary as f64;
            samples.push(vec![r * theta.cos(), r * theta.sin()]);
        }
    }
    Ok(samples)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridReport {
    pub radius: f64,
    pub samples: usize,
    pub failures: usize,
    /// Indices of the samples whose curve could not be traced.
    pub failed_samples: Vec<usize>,
    pub comparison: EnvelopeComparison,
}

impl GridReport {
    pub fn failure_fraction(&self) -> f64 {
        self.failures as f64 / self.samples.max(1) as f64
    }
}

/// Envelopes of the margin branches and of the sampled curves, on the same bins.
#[derive(Debug, Clone)]
pub struct GridValidation {
    pub report: GridReport,
    pub margins: Envelope,
    pub samples: Envelope,
}

/// Trace one forced-response curve per grid sample and compare the
/// resulting envelope with `margins`. Folds of `margins` and of `reference`
/// delimit the windows excluded from the attainment test.
pub fn grid_validate(
    model: &SystemModel,
    margins: &[Branch],
    reference: Option<&Branch>,
    radius: f64,
    settings: &MarginSettings,
    grid: &GridSettings,
) -> Result<GridValidation> {
    let eps = grid_samples(radius, grid.n_boundary, grid.n_radial, model.n_uncertain())?;
    let range = settings.lambda_range;
    let curves: Vec<Result<Branch>> = eps
        .par_iter()
        .map(|e| trace_frc(model, e, range, &settings.integration, &settings.continuation))
        .collect();

    let mut sampled = Envelope::new(range, grid.bin_width);
    let mut failed_samples = Vec::new();
    for (i, curve) in curves.iter().enumerate() {
        match curve {
            Ok(b) => sampled.add_branch(b),
            Err(e) => {
                log::warn!("grid sample {i} (eps = {:?}) failed: {e}", eps[i]);
                failed_samples.push(i);
            }
        }
    }
    let mut envelope = Envelope::new(range, grid.bin_width);
    let mut folds = Vec::new();
    for b in margins {
        envelope.add_branch(b);
        folds.extend(fold_lambdas(b));
    }
    if let Some(r) = reference {
        folds.extend(fold_lambdas(r));
    }
    let comparison = compare_envelopes(&envelope, &sampled, &folds, grid);
    Ok(GridValidation {
        report: GridReport {
            radius,
            samples: eps.len(),
            failures: failed_samples.len(),
            failed_samples,
            comparison,
        },
        margins: envelope,
        samples: sampled,
    })
}
