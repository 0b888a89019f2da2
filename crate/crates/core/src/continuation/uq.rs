//! Drivers for the two continuation stages of the margin computation:
//! expanding the uncertainty radius at a frozen bifurcation parameter, and
//! propagating the resulting marginal points through the bifurcation
//! parameter at a frozen radius.

use std::f64::consts::PI;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::problems::UqScales;
use super::{
    continue_branch, correct_onto, Branch, ContinuationPoint, ContinuationSettings, Family, FrcProblem, Provenance,
    StopCriteria, Termination, UqMode, UqProblem, ZeroProblem,
};
use crate::error::{Error, Result};
use crate::integrate::{integrate_augmented, IntegrationSettings};
use crate::models::SystemModel;
use crate::orbits::{seed_orbit, ShootingSettings};
use crate::sensitivity::{branch_orientation, metric_uncertainty_gradient, sensitivity_system, solve_initial_sensitivity};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MarginSettings {
    /// Range of the bifurcation parameter covered by the margins.
    pub lambda_range: (f64, f64),
    /// Bifurcation parameter values at which the uncertainty is expanded.
    pub seeds: Vec<f64>,
    /// Starting radius as a fraction of the target radius.
    pub initial_fraction: f64,
    /// Expansion stops once the radius exceeds this multiple of the target.
    pub expansion_limit: f64,
    /// Scaled distance below which two marginal points are the same.
    pub dedupe_tol: f64,
    /// Bifurcation-parameter values at which every margin branch records
    /// its exact crossings.
    pub sample_lambdas: Vec<f64>,
    pub integration: IntegrationSettings,
    pub continuation: ContinuationSettings,
    pub shooting: ShootingSettings,
}

impl Default for MarginSettings {
    fn default() -> Self {
        Self {
            lambda_range: (0.5, 2.0),
            seeds: vec![1.0],
            initial_fraction: 1e-3,
            expansion_limit: 1.5,
            dedupe_tol: 1e-6,
            sample_lambdas: Vec::new(),
            integration: IntegrationSettings::default(),
            continuation: ContinuationSettings::default(),
            shooting: ShootingSettings::default(),
        }
    }
}

impl MarginSettings {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.lambda_range;
        if !(lo < hi && lo > 0.0) {
            return Err(Error::Config(format!("invalid lambda range [{lo}, {hi}]")));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        if let Some(s) = self.seeds.iter().find(|s| !(**s > lo && **s < hi)) {
            return Err(Error::Config(format!("seed {s} outside the open range ({lo}, {hi})")));
        }
        if !(self.initial_fraction > 0.0 && self.initial_fraction < 1.0) {
            return Err(Error::Config("initial_fraction must lie in (0, 1)".into()));
        }
        if self.expansion_limit <= 1.0 {
            return Err(Error::Config("expansion_limit must exceed 1".into()));
        }
        self.integration.validate()?;
        self.continuation.validate()
    }

    fn scales(&self, radius: f64) -> UqScales {
        let (lo, hi) = self.lambda_range;
        UqScales {
            state: self.continuation.state_scale,
            radius: radius.max(1e-12),
            period: 2.0 * PI / (0.5 * (lo + hi)),
            lambda: hi - lo,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginalPoint {
    pub family: Family,
    pub point: ContinuationPoint,
}

/// Result of expanding the uncertainty radius at one reference orbit.
#[derive(Debug, Clone)]
pub struct Expansion {
    pub lambda: f64,
    pub branches: Vec<Branch>,
    pub marginal: Vec<MarginalPoint>,
}

#[derive(Debug, Clone)]
pub struct Propagation {
    pub radius: f64,
    pub branches: Vec<Branch>,
    /// Marginal points that were already covered by an earlier branch.
    pub duplicates: usize,
    /// Marginal points whose propagation failed to start.
    pub failures: usize,
}

/// Everything computed for one margins run.
#[derive(Debug, Clone)]
pub struct MarginRun {
    pub reference: Branch,
    pub expansions: Vec<Expansion>,
    pub propagation: Propagation,
}

impl MarginRun {
    pub fn has_closed_loop(&self, family: Family) -> bool {
        self.propagation
            .branches
            .iter()
            .any(|b| b.is_closed() && b.family == Some(family))
    }
}

/// Metric gradient at a reference orbit and the orientation of its branch.
fn metric_gradient(
    model: &SystemModel,
    reference: &ContinuationPoint,
    integration: &IntegrationSettings,
) -> Result<(DVector<f64>, f64)> {
    let zero = vec![0.0; model.n_uncertain()];
    let (p, dp) = model.realize(reference.lambda, &zero)?;
    let aug = integrate_augmented(model.dynamics.as_ref(), &p, &reference.x0, reference.period, &dp, integration)?;
    let sens = solve_initial_sensitivity(model, &p, &reference.x0, &aug, &dp)?;
    let (border, _) = sensitivity_system(model, &p, &reference.x0, &aug, &dp)?;
    let orientation = branch_orientation(model, &p, &reference.x0, &border);
    Ok((metric_uncertainty_gradient(model, &p, &reference.x0, &sens, &dp), orientation))
}

/// Trace the extremal-uncertainty curves in the radius from a reference
/// orbit (uncertainty zero) and collect every crossing of `radius`.
///
/// The positive family starts along `+grad_eps g` when the reference orbit
/// lies on a stably oriented stretch of its branch and along `-grad_eps g`
/// otherwise, so that it always continues the maximising margin.
pub fn expand_uncertainty(
    model: &SystemModel,
    reference: &ContinuationPoint,
    radius: f64,
    settings: &MarginSettings,
) -> Result<Expansion> {
    let lambda = reference.lambda;
    if radius == 0.0 {
        let marginal = [Family::Positive, Family::Negative]
            .into_iter()
            .map(|family| MarginalPoint {
                family,
                point: reference.clone(),
            })
            .collect();
        return Ok(Expansion {
            lambda,
            branches: Vec::new(),
            marginal,
        });
    }
    if radius.is_nan() || radius <= 0.0 {
        return Err(Error::Precondition(format!("radius must be non-negative, got {radius}")));
    }
    let (grad, orientation) = metric_gradient(model, reference, &settings.integration)?;
    let gnorm = grad.norm();
    if gnorm < 1e-12 {
        return Err(Error::InsensitiveMetric(gnorm));
    }
    let r0 = settings.initial_fraction * radius;
    let mut branches = Vec::new();
    let mut marginal = Vec::new();
    for family in [Family::Positive, Family::Negative] {
        // On a branch with unstable orientation the ascent direction of the
        // metric leads to the minimising margin.
        let sign = family.sign() * orientation;
        let eps: Vec<f64> = grad.iter().map(|g| sign * r0 * g / gnorm).collect();
        let mut problem = UqProblem::new(
            model.clone(),
            UqMode::Expansion { lambda },
            settings.integration.clone(),
            settings.scales(radius),
            settings.continuation.fd_step,
        );
        let guess = problem.unknowns(&reference.x0, &eps, reference.period, r0);
        let last = problem.continuation_index();
        let start = correct_onto(&mut problem, &guess, last, r0, &settings.continuation).map_err(|e| {
            Error::Precondition(format!(
                "expansion start at lambda = {lambda} failed ({e}); |grad_eps g| = {gnorm:e}, grad = {:?}",
                grad.as_slice()
            ))
        })?;
        let stop = StopCriteria {
            range: Some((0.5 * r0, settings.expansion_limit * radius)),
            levels: vec![(last, radius)],
            detect_closure: false,
        };
        let mut branch = continue_branch(&mut problem, &start, 1.0, &settings.continuation, &stop)?;
        branch.family = Some(family);
        branch.provenance = Provenance {
            kind: "expansion".into(),
            seed_lambda: Some(lambda),
            eps: Vec::new(),
        };
        marginal.extend(branch.crossings.iter().map(|p| MarginalPoint {
            family,
            point: p.clone(),
        }));
        branches.push(branch);
    }
    Ok(Expansion {
        lambda,
        branches,
        marginal,
    })
}

fn scaled_distance(problem: &UqProblem, a: &ContinuationPoint, b: &ContinuationPoint) -> f64 {
    let ua = problem.unknowns_from_point(a);
    let ub = problem.unknowns_from_point(b);
    (ua - ub).component_div(&problem.scale()).norm()
}

/// Continue each marginal point through the bifurcation parameter at the
/// fixed radius, in both directions, skipping points already covered.
pub fn propagate_margins(
    model: &SystemModel,
    marginal: &[MarginalPoint],
    radius: f64,
    settings: &MarginSettings,
) -> Result<Propagation> {
    let template = UqProblem::new(
        model.clone(),
        UqMode::Propagation { r: radius },
        settings.integration.clone(),
        settings.scales(radius),
        settings.continuation.fd_step,
    );
    let last = template.continuation_index();
    let levels = sorted_levels(
        marginal
            .iter()
            .map(|m| m.point.lambda)
            .chain(settings.sample_lambdas.iter().copied()),
    );
    let stop = StopCriteria {
        range: Some(settings.lambda_range),
        levels: levels.iter().map(|&l| (last, l)).collect(),
        detect_closure: true,
    };

    let mut branches: Vec<Branch> = Vec::new();
    let mut anchors: Vec<ContinuationPoint> = Vec::new();
    let mut duplicates = 0;
    let mut failures = 0;
    for seed in marginal {
        let nearest = anchors
            .iter()
            .map(|a| scaled_distance(&template, a, &seed.point))
            .fold(f64::INFINITY, f64::min);
        log::debug!(
            "seed {:?} at lambda = {}: nearest covered point {nearest:e}",
            seed.family,
            seed.point.lambda
        );
        if nearest < settings.dedupe_tol {
            duplicates += 1;
            continue;
        }
        let mut problem = template.clone();
        let u0 = problem.unknowns_from_point(&seed.point);
        let forward = match continue_branch(&mut problem, &u0, 1.0, &settings.continuation, &stop) {
            Ok(b) => b,
            Err(e) => {
                log::warn!("propagation from lambda = {} failed to start: {e}", seed.point.lambda);
                failures += 1;
                continue;
            }
        };
        let mut branch = if forward.is_closed() {
            forward
        } else {
            let mut problem = template.clone();
            let open = StopCriteria {
                detect_closure: false,
                ..stop.clone()
            };
            let backward = continue_branch(&mut problem, &u0, -1.0, &settings.continuation, &open)?;
            join(backward, forward)
        };
        branch.id = branches.len();
        branch.family = Some(seed.family);
        branch.provenance = Provenance {
            kind: "propagation".into(),
            seed_lambda: Some(seed.point.lambda),
            eps: seed.point.eps.clone(),
        };
        anchors.push(seed.point.clone());
        anchors.extend(branch.crossings.iter().cloned());
        branches.push(branch);
    }
    Ok(Propagation {
        radius,
        branches,
        duplicates,
        failures,
    })
}

fn sorted_levels(values: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut levels: Vec<f64> = values.collect();
    levels.sort_by(f64::total_cmp);
    levels.dedup_by(|a, b| (*a - *b).abs() < LEVEL_TOL);
    levels
}

fn reverse_orientation(mut p: ContinuationPoint) -> ContinuationPoint {
    p.tangent.iter_mut().for_each(|t| *t = -*t);
    p.arclength = -p.arclength;
    p.lambda_rate = -p.lambda_rate;
    p.metric_rate = -p.metric_rate;
    p
}

/// Splice a backward run (reversed) in front of a forward run from the same seed.
fn join(backward: Branch, forward: Branch) -> Branch {
    let mut points: Vec<ContinuationPoint> = backward
        .points
        .into_iter()
        .skip(1)
        .rev()
        .map(reverse_orientation)
        .collect();
    points.extend(forward.points);
    let mut crossings: Vec<ContinuationPoint> = backward
        .crossings
        .into_iter()
        .map(reverse_orientation)
        .collect();
    crossings.extend(forward.crossings);
    Branch {
        id: forward.id,
        family: forward.family,
        points,
        crossings,
        termination: forward.termination,
        reverse_termination: Some(backward.termination),
        provenance: forward.provenance,
        arclength: backward.arclength + forward.arclength,
    }
}

/// Forced-response curve at zero uncertainty over the configured range,
/// with exact crossings of every seed and sample value recorded.
pub fn reference_frc(model: &SystemModel, settings: &MarginSettings) -> Result<Branch> {
    let zero = vec![0.0; model.n_uncertain()];
    let (lo, hi) = settings.lambda_range;
    let start = seed_orbit(model, lo, &zero, &settings.integration, &settings.shooting)?;
    let mut problem = FrcProblem::new(
        model.clone(),
        zero.clone(),
        settings.integration.clone(),
        settings.lambda_range,
        settings.continuation.state_scale,
    );
    let u0 = problem.unknowns_from_orbit(&start);
    let idx = problem.continuation_index();
    let stop = StopCriteria {
        range: Some((lo, hi)),
        levels: sorted_levels(settings.seeds.iter().chain(&settings.sample_lambdas).copied())
            .into_iter()
            .map(|s| (idx, s))
            .collect(),
        detect_closure: false,
    };
    let mut branch = continue_branch(&mut problem, &u0, 1.0, &settings.continuation, &stop)?;
    branch.provenance = Provenance::frc(&zero);
    Ok(branch)
}

/// Reference curve, expansions at every reference orbit on a seed value,
/// and propagation of all marginal points.
pub fn compute_margins(model: &SystemModel, radius: f64, settings: &MarginSettings) -> Result<MarginRun> {
    settings.validate()?;
    let reference = reference_frc(model, settings)?;
    compute_margins_from(model, &reference, radius, settings)
}

/// Reference orbits on the seed values, ordered by the bifurcation parameter.
pub fn seed_orbits<'a>(reference: &'a Branch, settings: &MarginSettings) -> Vec<&'a ContinuationPoint> {
    let mut seeds: Vec<&ContinuationPoint> = reference
        .crossings
        .iter()
        .filter(|p| settings.seeds.iter().any(|s| (p.lambda - s).abs() < LEVEL_TOL))
        .collect();
    seeds.sort_by(|a, b| a.lambda.total_cmp(&b.lambda));
    seeds
}

/// As [`compute_margins`] with a precomputed reference curve.
pub fn compute_margins_from(
    model: &SystemModel,
    reference: &Branch,
    radius: f64,
    settings: &MarginSettings,
) -> Result<MarginRun> {
    let seeds = seed_orbits(reference, settings);
    let expansions: Vec<Expansion> = seeds
        .par_iter()
        .map(|p| expand_uncertainty(model, p, radius, settings))
        .collect::<Result<Vec<_>>>()?;
    let mut marginal = Vec::new();
    for family in [Family::Positive, Family::Negative] {
        for e in &expansions {
            marginal.extend(e.marginal.iter().filter(|m| m.family == family).cloned());
        }
    }
    let propagation = if radius == 0.0 {
        // Without uncertainty both margins are the reference curve itself.
        let branches = [Family::Positive, Family::Negative]
            .into_iter()
            .enumerate()
            .map(|(id, family)| Branch {
                id,
                family: Some(family),
                ..reference.clone()
            })
            .collect();
        Propagation {
            radius,
            branches,
            duplicates: marginal.len(),
            failures: 0,
        }
    } else {
        propagate_margins(model, &marginal, radius, settings)?
    };
    Ok(MarginRun {
        reference: reference.clone(),
        expansions,
        propagation,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticalLevel {
    pub radius: f64,
    pub bracket: (f64, f64),
    /// `(R, loop present)` for every probe, in evaluation order.
    pub probes: Vec<(f64, bool)>,
}

/// Bisection on the uncertainty radius for the emergence of a closed
/// negative-margin loop.
pub fn locate_critical_level(
    model: &SystemModel,
    settings: &MarginSettings,
    r_lo: f64,
    r_hi: f64,
    tol: f64,
) -> Result<CriticalLevel> {
    if !(r_lo > 0.0 && r_hi > r_lo && tol > 0.0) {
        return Err(Error::Precondition(format!(
            "invalid bracket [{r_lo}, {r_hi}] with tolerance {tol}"
        )));
    }
    if r_hi - r_lo <= tol {
        return Ok(CriticalLevel {
            radius: 0.5 * (r_lo + r_hi),
            bracket: (r_lo, r_hi),
            probes: Vec::new(),
        });
    }
    settings.validate()?;
    let reference = reference_frc(model, settings)?;
    let mut probes = Vec::new();
    let mut has_loop = |r: f64| -> Result<bool> {
        let run = compute_margins_from(model, &reference, r, settings)?;
        let found = run.has_closed_loop(Family::Negative);
        log::info!("R = {r}: closed negative loop {}", if found { "present" } else { "absent" });
        probes.push((r, found));
        Ok(found)
    };
    if has_loop(r_lo)? {
        return Err(Error::Precondition(format!("closed loop already present at R = {r_lo}")));
    }
    if !has_loop(r_hi)? {
        return Err(Error::Precondition(format!("no closed loop at R = {r_hi}")));
    }
    let (mut lo, mut hi) = (r_lo, r_hi);
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if has_loop(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(CriticalLevel {
        radius: 0.5 * (lo + hi),
        bracket: (lo, hi),
        probes,
    })
}

/// Tolerance for matching a recorded crossing to its level.
pub const LEVEL_TOL: f64 = 1e-9;

/// Lower and upper margin at `lambda` over the exact crossings recorded on
/// `branches`, or `None` when no branch crosses there.
pub fn margin_bounds_at(branches: &[Branch], lambda: f64) -> Option<(f64, f64)> {
    branches
        .iter()
        .flat_map(|b| &b.crossings)
        .filter(|p| (p.lambda - lambda).abs() < LEVEL_TOL)
        .fold(None, |acc, p| match acc {
            None => Some((p.metric, p.metric)),
            Some((lo, hi)) => Some((f64::min(lo, p.metric), f64::max(hi, p.metric))),
        })
}

/// Termination statuses of a run, in branch order.
pub fn terminations(branches: &[Branch]) -> Vec<(Termination, Option<Termination>)> {
    branches.iter().map(|b| (b.termination, b.reverse_termination)).collect()
}
