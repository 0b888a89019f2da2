//! Pseudo-arclength continuation of underdetermined zero problems.
//!
//! A [`ZeroProblem`] maps `n + 1` unknowns to `n` residuals. The engine works
//! in componentwise-scaled coordinates `w = u / scale`, predicts along the
//! unit tangent, corrects with a Newton iteration (Broyden-updated when the
//! Jacobian is expensive) on the residual bordered by the arclength
//! condition, and adapts the step size.

mod engine;
mod problems;
mod uq;

use serde::{Deserialize, Serialize};

pub use engine::{continue_branch, correct_onto, StopCriteria};
pub use problems::{FrcProblem, UqMode, UqProblem, UqScales};
pub use uq::{
    compute_margins, compute_margins_from, expand_uncertainty, locate_critical_level, propagate_margins,
    margin_bounds_at, reference_frc, seed_orbits, terminations, CriticalLevel, Expansion, MarginRun, MarginSettings, MarginalPoint, Propagation, LEVEL_TOL,
};

use nalgebra::{DMatrix, DVector};

use crate::error::Result;

/// Residual vector and, on request, its Jacobian in unscaled unknowns.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub residual: DVector<f64>,
    pub jacobian: Option<DMatrix<f64>>,
}

pub trait ZeroProblem {
    fn n_unknowns(&self) -> usize;

    fn evaluate(&self, u: &DVector<f64>, jacobian: bool) -> Result<Evaluation>;

    /// Index of the natural continuation parameter among the unknowns.
    fn continuation_index(&self) -> usize;

    fn scale(&self) -> DVector<f64>;

    /// Typical size of each residual; the corrector tolerance applies to
    /// residuals divided by it.
    fn residual_scale(&self) -> DVector<f64> {
        DVector::from_element(self.n_unknowns() - 1, 1.0)
    }

    /// Whether the Jacobian costs about as much as the residual. When it
    /// does, the corrector uses full Newton instead of the chord method.
    fn jacobian_is_cheap(&self) -> bool {
        true
    }

    /// Hook run at each accepted point before the next step, for problems
    /// whose formulation depends on the current base point. Returns whether
    /// the formulation changed.
    fn rebase(&mut self, _u: &DVector<f64>) -> bool {
        false
    }

    fn point(&self, u: &DVector<f64>) -> ContinuationPoint;
}

/// A solution point in the full coordinates `(x0, eps, r, T, lambda)`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ContinuationPoint {
    pub x0: Vec<f64>,
    pub eps: Vec<f64>,
    pub r: f64,
    pub period: f64,
    pub lambda: f64,
    pub metric: f64,
    /// Unit tangent in the scaled unknowns of the problem that produced it.
    #[serde(default)]
    pub tangent: Vec<f64>,
    /// Scaled arclength from the start of the branch.
    #[serde(default)]
    pub arclength: f64,
    /// Derivatives of `lambda` and `metric` with respect to the arclength.
    #[serde(default)]
    pub lambda_rate: f64,
    #[serde(default)]
    pub metric_rate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Termination {
    RangeExit,
    MaxSteps,
    StepUnderflow,
    ClosedLoop,
    DegenerateTangent,
}

impl Termination {
    pub fn as_str(&self) -> &'static str {
        match self {
            Termination::RangeExit => "range-exit",
            Termination::MaxSteps => "max-steps",
            Termination::StepUnderflow => "step-underflow",
            Termination::ClosedLoop => "closed-loop",
            Termination::DegenerateTangent => "degenerate-tangent",
        }
    }
}

/// Sign of the initial uncertainty direction relative to `grad_eps g`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Family {
    #[serde(rename = "+")]
    Positive,
    #[serde(rename = "-")]
    Negative,
}

impl Family {
    pub fn sign(&self) -> f64 {
        match self {
            Family::Positive => 1.0,
            Family::Negative => -1.0,
        }
    }

    pub fn symbol(&self) -> &'static str {
        match self {
            Family::Positive => "+",
            Family::Negative => "-",
        }
    }
}

/// Where a branch came from.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Provenance {
    pub kind: String,
    pub seed_lambda: Option<f64>,
    pub eps: Vec<f64>,
}

impl Provenance {
    pub fn frc(eps: &[f64]) -> Self {
        Self {
            kind: "frc".into(),
            seed_lambda: None,
            eps: eps.to_vec(),
        }
    }
}

/// A continued solution branch, ordered along its arclength.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub id: usize,
    pub family: Option<Family>,
    pub points: Vec<ContinuationPoint>,
    /// Points where the monitored level was crossed.
    pub crossings: Vec<ContinuationPoint>,
    pub termination: Termination,
    /// Termination at the start of the branch when it was continued both ways.
    pub reverse_termination: Option<Termination>,
    pub provenance: Provenance,
    pub arclength: f64,
}

impl Branch {
    pub fn is_closed(&self) -> bool {
        self.termination == Termination::ClosedLoop
    }

    pub fn lambda_range(&self) -> (f64, f64) {
        self.points
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p.lambda), hi.max(p.lambda)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContinuationSettings {
    pub h_init: f64,
    pub h_min: f64,
    pub h_max: f64,
    pub grow: f64,
    pub max_halvings: usize,
    pub max_steps: usize,
    pub newton_tol: f64,
    pub max_corrector_iterations: usize,
    pub fd_step: f64,
    /// Smallest accepted cosine between consecutive tangents.
    pub min_tangent_cos: f64,
    /// Scaled distance at which a branch counts as having returned to its seed.
    pub loop_tol: f64,
    /// Arclength, in units of `h_init`, before closure is tested.
    pub loop_min_arclength: f64,
    /// Typical response amplitude used to scale the state unknowns.
    pub state_scale: f64,
}

impl Default for ContinuationSettings {
    fn default() -> Self {
        Self {
            h_init: 0.01,
            h_min: 1e-6,
            h_max: 0.1,
            grow: 1.3,
            max_halvings: 6,
            max_steps: 20_000,
            newton_tol: 1e-9,
            max_corrector_iterations: 8,
            fd_step: 1e-6,
            min_tangent_cos: 0.9,
            loop_tol: 1e-4,
            loop_min_arclength: 20.0,
            state_scale: 0.1,
        }
    }
}

impl ContinuationSettings {
    pub fn validate(&self) -> Result<()> {
        use crate::error::Error;
        let ok = self.h_min > 0.0
            && self.h_min <= self.h_init
            && self.h_init <= self.h_max
            && self.grow >= 1.0
            && self.newton_tol > 0.0
            && self.fd_step > 0.0
            && self.state_scale > 0.0
            && self.max_corrector_iterations > 0
            && self.max_steps > 0
            && (0.0..1.0).contains(&self.min_tangent_cos);
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid continuation settings: {self:?}")))
        }
    }
}
