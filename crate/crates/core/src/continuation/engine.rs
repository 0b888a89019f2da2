use nalgebra::{DMatrix, DVector};

use super::{Branch, ContinuationPoint, ContinuationSettings, Evaluation, Provenance, Termination, ZeroProblem};
use crate::error::{Error, Result};
use crate::linalg::{max_abs, Factored};

/// When to stop a branch besides the step budget.
#[derive(Debug, Clone, Default)]
pub struct StopCriteria {
    /// Admissible interval of the continuation parameter.
    pub range: Option<(f64, f64)>,
    /// Record crossings of unknown `.0` through each value `.1`.
    pub levels: Vec<(usize, f64)>,
    /// Stop when the branch returns to its starting point.
    pub detect_closure: bool,
}

impl StopCriteria {
    pub fn range(range: (f64, f64)) -> Self {
        Self {
            range: Some(range),
            ..Default::default()
        }
    }
}

/// Scaled step used to differentiate the reported point along the tangent.
const RATE_STEP: f64 = 1e-6;

struct Corrected {
    w: DVector<f64>,
    jac: DMatrix<f64>,
    iterations: usize,
}

struct Scaled<'a, P: ZeroProblem> {
    problem: &'a mut P,
    scale: DVector<f64>,
    row_scale: DVector<f64>,
    settings: &'a ContinuationSettings,
}

impl<P: ZeroProblem> Scaled<'_, P> {
    fn unscale(&self, w: &DVector<f64>) -> DVector<f64> {
        w.component_mul(&self.scale)
    }

    fn eval(&self, w: &DVector<f64>, jacobian: bool) -> Result<(DVector<f64>, Option<DMatrix<f64>>)> {
        let Evaluation { residual, jacobian } = self.problem.evaluate(&self.unscale(w), jacobian)?;
        if !residual.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite { t: 0.0 });
        }
        let residual = residual.component_div(&self.row_scale);
        let jac = jacobian.map(|mut j| {
            for (c, s) in self.scale.iter().enumerate() {
                j.column_mut(c).scale_mut(*s);
            }
            for (r, s) in self.row_scale.iter().enumerate() {
                j.row_mut(r).unscale_mut(*s);
            }
            j
        });
        Ok((residual, jac))
    }

    fn jacobian(&self, w: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.eval(w, true)?
            .1
            .ok_or_else(|| Error::Precondition("problem returned no Jacobian".into()))
    }

    /// Newton on `[y(w); a.w - b] = 0`. Expensive Jacobians are reused with
    /// Broyden rank-one updates and recomputed only when contraction stalls.
    fn newton_affine(
        &self,
        start: &DVector<f64>,
        a: &DVector<f64>,
        b: f64,
        hint: Option<&DMatrix<f64>>,
    ) -> Result<Corrected> {
        let s = self.settings;
        let cheap = self.problem.jacobian_is_cheap();
        let n = start.len() - 1;
        let mut w = start.clone();
        let mut jac = if cheap { None } else { hint.cloned() };
        let mut prev = f64::INFINITY;
        let mut last_step: Option<(DVector<f64>, DVector<f64>)> = None;
        for it in 0..=s.max_corrector_iterations {
            let need = cheap || jac.is_none();
            let (res, j) = self.eval(&w, need)?;
            if let Some(j) = j {
                jac = Some(j);
            }
            let c = a.dot(&w) - b;
            let norm = max_abs(&res);
            log::trace!("newton it {it}: |y| = {norm:e} (argmax {}), c = {c:e}", res.iamax());
            if norm < s.newton_tol && c.abs() < s.newton_tol {
                let jac = match jac {
                    Some(j) if cheap && need => j,
                    _ => self.jacobian(&w)?,
                };
                return Ok(Corrected { w, jac, iterations: it });
            }
            if it == s.max_corrector_iterations || norm > 4.0 * prev {
                break;
            }
            if !cheap {
                if it > 0 && norm > 0.5 * prev {
                    jac = Some(self.jacobian(&w)?);
                } else if let (Some((delta, prev_res)), Some(j)) = (last_step.as_ref(), jac.as_mut()) {
                    let miss = &res - prev_res - &*j * delta;
                    let dd = delta.norm_squared();
                    if dd > 0.0 {
                        *j += miss * delta.transpose() / dd;
                    }
                }
            }
            let j = jac.as_ref().expect("Jacobian available");
            let mut m = DMatrix::zeros(n + 1, n + 1);
            m.view_mut((0, 0), (n, n + 1)).copy_from(j);
            m.row_mut(n).copy_from(&a.transpose());
            let mut rhs = DVector::zeros(n + 1);
            rhs.rows_mut(0, n).copy_from(&(-&res));
            rhs[n] = -c;
            let delta = Factored::new(&m)?.solve(&rhs)?;
            w += &delta;
            prev = norm;
            last_step = Some((delta, res));
        }
        Err(Error::NoConvergence {
            iterations: s.max_corrector_iterations,
            residual: prev,
        })
    }

    fn locate(&self, w0: &DVector<f64>, w1: &DVector<f64>, a: &DVector<f64>, b: f64, hint: &DMatrix<f64>) -> Result<Corrected> {
        let c0 = a.dot(w0) - b;
        let c1 = a.dot(w1) - b;
        let theta = if c1 != c0 { (c0 / (c0 - c1)).clamp(0.0, 1.0) } else { 0.5 };
        let interpolated = w0 + (w1 - w0) * theta;
        // Fall back to starting from either end when the chord is a poor guess.
        let near_end = if theta > 0.5 { w1 } else { w0 };
        let far_end = if theta > 0.5 { w0 } else { w1 };
        let mut last = None;
        for start in [&interpolated, near_end, far_end] {
            let mut shifted = start.clone();
            let norm2 = a.norm_squared();
            shifted -= a * ((a.dot(start) - b) / norm2);
            match self.newton_affine(&shifted, a, b, Some(hint)) {
                Ok(c) if (&c.w - w0).norm() <= 2.0 * (w1 - w0).norm() + 1e-12 => return Ok(c),
                Ok(_) => {}
                Err(e) => last = Some(e),
            }
        }
        Err(last.unwrap_or(Error::NoConvergence {
            iterations: self.settings.max_corrector_iterations,
            residual: f64::NAN,
        }))
    }

    fn point(&self, w: &DVector<f64>, t: &DVector<f64>, arclength: f64) -> ContinuationPoint {
        let mut p = self.problem.point(&self.unscale(w));
        let ahead = self.problem.point(&self.unscale(&(w + t * RATE_STEP)));
        let behind = self.problem.point(&self.unscale(&(w - t * RATE_STEP)));
        p.lambda_rate = (ahead.lambda - behind.lambda) / (2.0 * RATE_STEP);
        p.metric_rate = (ahead.metric - behind.metric) / (2.0 * RATE_STEP);
        p.tangent = t.iter().copied().collect();
        p.arclength = arclength;
        p
    }
}

/// Unit tangent of the solution curve from the scaled Jacobian, oriented
/// along `reference`.
fn tangent(jac: &DMatrix<f64>, reference: &DVector<f64>) -> Result<DVector<f64>> {
    let n = jac.nrows();
    let k = reference.iamax();
    let mut m = DMatrix::zeros(n + 1, n + 1);
    m.view_mut((0, 0), (n, n + 1)).copy_from(jac);
    m[(n, k)] = 1.0;
    let mut rhs = DVector::zeros(n + 1);
    rhs[n] = 1.0;
    let lu = Factored::new(&m)?;
    if lu.condition > 1e15 {
        return Err(Error::IllConditioned {
            condition: lu.condition,
        });
    }
    let mut t = lu.solve(&rhs)?;
    let norm = t.norm();
    if !(norm.is_finite() && norm > 0.0) {
        return Err(Error::Singular("zero tangent".into()));
    }
    t /= norm;
    if t.dot(reference) < 0.0 {
        t = -t;
    }
    Ok(t)
}

/// Move `u_start` onto the solution set with unknown `index` held at `value`.
pub fn correct_onto<P: ZeroProblem>(
    problem: &mut P,
    u_start: &DVector<f64>,
    index: usize,
    value: f64,
    settings: &ContinuationSettings,
) -> Result<DVector<f64>> {
    problem.rebase(u_start);
    let scale = problem.scale();
    let row_scale = problem.residual_scale();
    let ctx = Scaled {
        problem,
        scale,
        row_scale,
        settings,
    };
    let w0 = u_start.component_div(&ctx.scale);
    let mut a = DVector::zeros(w0.len());
    a[index] = 1.0;
    let c = ctx.newton_affine(&w0, &a, value / ctx.scale[index], None)?;
    Ok(ctx.unscale(&c.w))
}

/// Continue the branch through `u0` with the continuation parameter
/// initially moving in the direction of `direction`'s sign.
pub fn continue_branch<P: ZeroProblem>(
    problem: &mut P,
    u0: &DVector<f64>,
    direction: f64,
    settings: &ContinuationSettings,
    stop: &StopCriteria,
) -> Result<Branch> {
    settings.validate()?;
    if u0.len() != problem.n_unknowns() {
        return Err(Error::Precondition(format!(
            "start point has {} unknowns, problem has {}",
            u0.len(),
            problem.n_unknowns()
        )));
    }
    let idx = problem.continuation_index();
    problem.rebase(u0);
    let scale = problem.scale();
    let row_scale = problem.residual_scale();
    let ctx = Scaled {
        problem,
        scale,
        row_scale,
        settings,
    };
    let n1 = u0.len();
    let mut e_idx = DVector::zeros(n1);
    e_idx[idx] = 1.0;
    let w_start = u0.component_div(&ctx.scale);
    let first = ctx.newton_affine(&w_start, &e_idx, w_start[idx], None)?;
    let mut w = first.w;
    let mut jac = first.jac;
    let mut t = tangent(&jac, &(&e_idx * direction.signum()))?;
    let seed_w = w.clone();
    let seed_t = t.clone();

    let scaled_range = stop.range.map(|(lo, hi)| (lo / ctx.scale[idx], hi / ctx.scale[idx]));
    let scaled_levels: Vec<(usize, f64)> = stop.levels.iter().map(|&(i, v)| (i, v / ctx.scale[i])).collect();

    let mut points = vec![ctx.point(&w, &t, 0.0)];
    let mut crossings = Vec::new();
    let mut arclength = 0.0;
    let mut h = settings.h_init;
    let termination;

    loop {
        if points.len() > settings.max_steps {
            termination = Termination::MaxSteps;
            break;
        }
        let mut halvings = 0;
        let mut degenerate = false;
        let accepted = loop {
            let w_pred = &w + &t * h;
            let attempt = ctx
                .newton_affine(&w_pred, &t, t.dot(&w_pred), Some(&jac))
                .and_then(|c| match tangent(&c.jac, &t) {
                    Ok(tn) => Ok((c, tn)),
                    Err(e) => {
                        degenerate = true;
                        Err(e)
                    }
                });
            if let Ok((c, tn)) = attempt {
                let moved = (&c.w - &w).norm();
                if tn.dot(&t) >= settings.min_tangent_cos && moved <= 2.0 * h {
                    break Some((c, tn));
                }
            }
            h *= 0.5;
            halvings += 1;
            if halvings > settings.max_halvings || h < settings.h_min {
                break None;
            }
        };
        let Some((c, t_new)) = accepted else {
            termination = if degenerate {
                Termination::DegenerateTangent
            } else {
                Termination::StepUnderflow
            };
            break;
        };

        for &(li, lv) in &scaled_levels {
            if (w[li] - lv) * (c.w[li] - lv) < 0.0 {
                let mut a = DVector::zeros(n1);
                a[li] = 1.0;
                match ctx.locate(&w, &c.w, &a, lv, &c.jac) {
                    Ok(x) => {
                        let tx = tangent(&x.jac, &t_new).unwrap_or_else(|_| t_new.clone());
                        crossings.push(ctx.point(&x.w, &tx, arclength + (&x.w - &w).norm()));
                    }
                    Err(e) => log::warn!("failed to locate level crossing: {e}; step {}", (&c.w - &w).norm()),
                }
            }
        }

        if stop.detect_closure && arclength > settings.loop_min_arclength * settings.h_init {
            let before = seed_t.dot(&(&w - &seed_w));
            let after = seed_t.dot(&(&c.w - &seed_w));
            if before < 0.0 && after >= 0.0 {
                if let Ok(x) = ctx.locate(&w, &c.w, &seed_t, seed_t.dot(&seed_w), &c.jac) {
                    if (&x.w - &seed_w).norm() < settings.loop_tol {
                        arclength += (&seed_w - &w).norm();
                        points.push(ctx.point(&seed_w, &seed_t, arclength));
                        termination = Termination::ClosedLoop;
                        break;
                    }
                }
            }
        }

        if let Some((lo, hi)) = scaled_range {
            let v = c.w[idx];
            if v < lo || v > hi {
                let bound = if v < lo { lo } else { hi };
                if let Ok(x) = ctx.locate(&w, &c.w, &e_idx, bound, &c.jac) {
                    let tx = tangent(&x.jac, &t_new).unwrap_or_else(|_| t_new.clone());
                    arclength += (&x.w - &w).norm();
                    points.push(ctx.point(&x.w, &tx, arclength));
                }
                termination = Termination::RangeExit;
                break;
            }
        }

        arclength += (&c.w - &w).norm();
        w = c.w;
        jac = c.jac;
        t = t_new;
        points.push(ctx.point(&w, &t, arclength));
        if c.iterations <= 3 && halvings == 0 {
            h = (h * settings.grow).min(settings.h_max);
        }
        let u = ctx.unscale(&w);
        if ctx.problem.rebase(&u) {
            jac = ctx.jacobian(&w)?;
        }
    }

    Ok(Branch {
        id: 0,
        family: None,
        points,
        crossings,
        termination,
        reverse_termination: None,
        provenance: Provenance::default(),
        arclength,
    })
}
