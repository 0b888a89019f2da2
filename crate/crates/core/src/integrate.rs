//! Explicit Dormand-Prince 8(5,3) integration of the state equations and of
//! the state + variational + sensitivity system.
//!
//! The augmented system is advanced on the state's own step sequence: the
//! error norm only looks at the first `N` components, so the monodromy and
//! sensitivity matrices are the exact derivatives of the discrete map that
//! produced `x(T)`. Accepted steps are returned as fractions of the horizon
//! and can be replayed, which makes finite differences of integration
//! outputs smooth in their inputs.

// The tableau keeps the digits of the published coefficients.
#![allow(clippy::excessive_precision)]

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::Dynamics;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntegrationSettings {
    pub rtol: f64,
    pub atol: f64,
    pub max_steps: usize,
    pub dense: bool,
}

impl Default for IntegrationSettings {
    fn default() -> Self {
        Self {
            rtol: 1e-10,
            atol: 1e-12,
            max_steps: 1_000_000,
            dense: false,
        }
    }
}

impl IntegrationSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.rtol > 0.0 && self.atol > 0.0) {
            return Err(Error::Config("integration tolerances must be positive".into()));
        }
        if self.max_steps == 0 {
            return Err(Error::Config("max_steps must be positive".into()));
        }
        Ok(())
    }

    pub fn with_dense(mut self) -> Self {
        self.dense = true;
        self
    }
}

/// Accepted step sizes expressed as fractions of the integration horizon.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct StepSequence(pub Vec<f64>);

impl StepSequence {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Samples `(t, x(t))` at accepted steps, strictly increasing in `t`.
#[derive(Debug, Clone, Default)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct StateResult {
    pub x_t: Vec<f64>,
    pub steps: StepSequence,
    pub rejected: usize,
    pub trajectory: Option<Trajectory>,
}

#[derive(Debug, Clone)]
pub struct AugmentedResult {
    pub x_t: DVector<f64>,
    /// Monodromy `H(T)` with `H(0) = I`.
    pub h_t: DMatrix<f64>,
    /// Sensitivity `S(T)` along the supplied parameter directions, `S(0) = 0`.
    pub s_t: DMatrix<f64>,
    /// Integral of `tr A` over the horizon.
    pub trace_integral: f64,
    pub steps: StepSequence,
    pub trajectory: Option<Trajectory>,
}

/// Integrate `dx/dt = F(x, p)` from `x0` over `[0, t_end]`.
pub fn integrate_state(
    dynamics: &dyn Dynamics,
    p: &[f64],
    x0: &[f64],
    t_end: f64,
    settings: &IntegrationSettings,
) -> Result<StateResult> {
    check_request(dynamics, x0, t_end)?;
    let n = dynamics.dim();
    let run = dop853(
        |y, dy| dynamics.rhs(y, p, dy),
        x0,
        t_end,
        n,
        settings,
        None,
    )?;
    Ok(StateResult {
        x_t: run.y,
        steps: run.steps,
        rejected: run.rejected,
        trajectory: run.trajectory,
    })
}

/// Co-integrate state, monodromy, sensitivities along `directions` (P x D,
/// typically `dp/deps` with an extra `dp/dlambda` column) and `tr A`.
pub fn integrate_augmented(
    dynamics: &dyn Dynamics,
    p: &[f64],
    x0: &[f64],
    t_end: f64,
    directions: &DMatrix<f64>,
    settings: &IntegrationSettings,
) -> Result<AugmentedResult> {
    augmented(dynamics, p, x0, t_end, directions, settings, None)
}

/// As [`integrate_augmented`] but on a prescribed step sequence.
pub fn integrate_augmented_replay(
    dynamics: &dyn Dynamics,
    p: &[f64],
    x0: &[f64],
    t_end: f64,
    directions: &DMatrix<f64>,
    steps: &StepSequence,
) -> Result<AugmentedResult> {
    let settings = IntegrationSettings::default();
    augmented(dynamics, p, x0, t_end, directions, &settings, Some(steps))
}

fn check_request(dynamics: &dyn Dynamics, x0: &[f64], t_end: f64) -> Result<()> {
    if !(t_end > 0.0 && t_end.is_finite()) {
        return Err(Error::InvalidIntegration(format!("horizon must be positive, got {t_end}")));
    }
    if x0.len() != dynamics.dim() {
        return Err(Error::InvalidIntegration(format!(
            "initial state has length {}, model dimension is {}",
            x0.len(),
            dynamics.dim()
        )));
    }
    if !x0.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite { t: 0.0 });
    }
    Ok(())
}

fn augmented(
    dynamics: &dyn Dynamics,
    p: &[f64],
    x0: &[f64],
    t_end: f64,
    directions: &DMatrix<f64>,
    settings: &IntegrationSettings,
    replay: Option<&StepSequence>,
) -> Result<AugmentedResult> {
    check_request(dynamics, x0, t_end)?;
    let n = dynamics.dim();
    let np = p.len();
    if directions.nrows() != np {
        return Err(Error::InvalidIntegration(format!(
            "direction matrix has {} rows, expected {np}",
            directions.nrows()
        )));
    }
    let nd = directions.ncols();
    let off_h = n;
    let off_s = n + n * n;
    let off_tr = off_s + n * nd;
    let len = off_tr + 1;

    let mut y0 = vec![0.0; len];
    y0[..n].copy_from_slice(x0);
    for i in 0..n {
        y0[off_h + i * n + i] = 1.0;
    }

    let mut a = DMatrix::zeros(n, n);
    let mut b = DMatrix::zeros(n, np);
    let mut bd = DMatrix::zeros(n, nd);
    let rhs = |y: &[f64], dy: &mut [f64]| {
        let x = &y[..n];
        dynamics.rhs(x, p, &mut dy[..n]);
        a.fill(0.0);
        b.fill(0.0);
        dynamics.state_jacobian(x, p, &mut a);
        dynamics.param_jacobian(x, p, &mut b);
        b.mul_to(directions, &mut bd);
        let a_s = a.as_slice();
        // column-major: a[(i, k)] = a_s[k * n + i]
        for j in 0..n {
            let col = &y[off_h + j * n..off_h + (j + 1) * n];
            for i in 0..n {
                let mut acc = 0.0;
                for k in 0..n {
                    acc += a_s[k * n + i] * col[k];
                }
                dy[off_h + j * n + i] = acc;
            }
        }
        for j in 0..nd {
            let col = &y[off_s + j * n..off_s + (j + 1) * n];
            for i in 0..n {
                let mut acc = bd[(i, j)];
                for k in 0..n {
                    acc += a_s[k * n + i] * col[k];
                }
                dy[off_s + j * n + i] = acc;
            }
        }
        dy[off_tr] = (0..n).map(|i| a_s[i * n + i]).sum();
    };

    let run = dop853(rhs, &y0, t_end, n, settings, replay)?;
    let y = run.y;
    Ok(AugmentedResult {
        x_t: DVector::from_column_slice(&y[..n]),
        h_t: DMatrix::from_column_slice(n, n, &y[off_h..off_s]),
        s_t: DMatrix::from_column_slice(n, nd, &y[off_s..off_tr]),
        trace_integral: y[off_tr],
        steps: run.steps,
        trajectory: run.trajectory,
    })
}

struct Run {
    y: Vec<f64>,
    steps: StepSequence,
    rejected: usize,
    trajectory: Option<Trajectory>,
}

/// Dormand-Prince 8(5,3) with PI step control. Only the first `n_err`
/// components enter the error norm and the dense samples.
fn dop853<F>(
    mut f: F,
    y0: &[f64],
    t_end: f64,
    n_err: usize,
    settings: &IntegrationSettings,
    replay: Option<&StepSequence>,
) -> Result<Run>
where
    F: FnMut(&[f64], &mut [f64]),
{
    let n = y0.len();
    let mut y = y0.to_vec();
    let mut k = [(); 12].map(|_| vec![0.0; n]);
    let mut ytmp = vec![0.0; n];
    let mut ynew = vec![0.0; n];
    let mut comb = vec![0.0; n];
    let mut steps = Vec::new();
    let mut trajectory = settings.dense.then(|| Trajectory {
        times: vec![0.0],
        states: vec![y[..n_err].to_vec()],
    });

    f(&y, &mut k[0]);
    let mut t = 0.0;
    let mut h = match replay {
        Some(seq) => seq.0.first().copied().unwrap_or(1.0) * t_end,
        None => initial_step(&mut f, &y, &k[0], t_end, n_err, settings),
    };
    let mut facold: f64 = 1e-4;
    let mut rejected = 0;
    let mut last_rejected = false;
    let mut taken = 0usize;

    const EXPO: f64 = 1.0 / 8.0 - BETA * 0.2;
    const BETA: f64 = 0.04;
    const SAFE: f64 = 0.9;
    const FAC_MIN: f64 = 0.333;
    const FAC_MAX: f64 = 6.0;

    loop {
        let remaining = t_end - t;
        if remaining <= 1e-14 * t_end {
            break;
        }
        if taken + rejected >= settings.max_steps {
            return Err(Error::StepLimit {
                t,
                max_steps: settings.max_steps,
            });
        }
        let is_last;
        match replay {
            Some(seq) => {
                is_last = taken + 1 >= seq.len();
                h = if is_last { remaining } else { seq.0[taken] * t_end };
            }
            None => {
                if h >= remaining || 1.01 * h >= remaining {
                    h = remaining;
                    is_last = true;
                } else {
                    is_last = false;
                }
            }
        }
        if h <= 1e-15 * t_end.max(1.0) {
            return Err(Error::StepUnderflow { t });
        }

        stages(&mut f, &y, h, &mut k, &mut comb, &mut ytmp, &mut ynew);

        let err = error_norm(&y, &ynew, &k, &comb, h, n_err, settings);
        if !err.is_finite() {
            if replay.is_some() || h < 1e-12 * t_end {
                return Err(Error::NonFinite { t });
            }
            h *= 0.25;
            rejected += 1;
            last_rejected = true;
            continue;
        }

        if replay.is_some() || err <= 1.0 {
            if !ynew.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite { t: t + h });
            }
            t = if is_last { t_end } else { t + h };
            steps.push(h / t_end);
            taken += 1;
            std::mem::swap(&mut y, &mut ynew);
            f(&y, &mut k[0]);
            if let Some(tr) = trajectory.as_mut() {
                tr.times.push(t);
                tr.states.push(y[..n_err].to_vec());
            }
            if is_last {
                break;
            }
            let fac11 = err.powf(EXPO);
            let fac = (fac11 / facold.powf(BETA) / SAFE).clamp(1.0 / FAC_MAX, 1.0 / FAC_MIN);
            facold = err.max(1e-4);
            let mut h_new = h / fac;
            if last_rejected {
                h_new = h_new.min(h);
            }
            last_rejected = false;
            h = h_new;
        } else {
            let fac11 = err.powf(EXPO);
            h /= (fac11 / SAFE).min(1.0 / FAC_MIN);
            rejected += 1;
            last_rejected = true;
        }
    }
    if let Some(seq) = replay {
        if taken != seq.len() {
            return Err(Error::InvalidIntegration(format!(
                "replayed {taken} of {} steps",
                seq.len()
            )));
        }
    }
    Ok(Run {
        y,
        steps: StepSequence(steps),
        rejected,
        trajectory,
    })
}

fn initial_step<F>(f: &mut F, y: &[f64], f0: &[f64], t_end: f64, n_err: usize, s: &IntegrationSettings) -> f64
where
    F: FnMut(&[f64], &mut [f64]),
{
    let sk = |v: f64| s.atol + s.rtol * v.abs();
    let dnf: f64 = (0..n_err).map(|i| (f0[i] / sk(y[i])).powi(2)).sum::<f64>() / n_err as f64;
    let dny: f64 = (0..n_err).map(|i| (y[i] / sk(y[i])).powi(2)).sum::<f64>() / n_err as f64;
    let mut h = if dnf <= 1e-10 || dny <= 1e-10 {
        1e-6
    } else {
        (dny / dnf).sqrt() * 0.01
    };
    h = h.min(t_end);
    let y1: Vec<f64> = y.iter().zip(f0).map(|(a, b)| a + h * b).collect();
    let mut f1 = vec![0.0; y.len()];
    f(&y1, &mut f1);
    let der2 = ((0..n_err)
        .map(|i| ((f1[i] - f0[i]) / sk(y[i])).powi(2))
        .sum::<f64>()
        / n_err as f64)
        .sqrt()
        / h;
    let der12 = der2.max(dnf.sqrt());
    let h1 = if der12 <= 1e-15 {
        (h * 1e-3).max(1e-6)
    } else {
        (0.01 / der12).powf(1.0 / 8.0)
    };
    (100.0 * h).min(h1).min(t_end)
}

fn error_norm(
    y: &[f64],
    ynew: &[f64],
    k: &[Vec<f64>; 12],
    comb: &[f64],
    h: f64,
    n_err: usize,
    s: &IntegrationSettings,
) -> f64 {
    let mut err = 0.0;
    let mut err2 = 0.0;
    for i in 0..n_err {
        let sk = s.atol + s.rtol * y[i].abs().max(ynew[i].abs());
        let e2 = comb[i] - BHH1 * k[0][i] - BHH2 * k[8][i] - BHH3 * k[11][i];
        err2 += (e2 / sk).powi(2);
        let e = ER1 * k[0][i]
            + ER6 * k[5][i]
            + ER7 * k[6][i]
            + ER8 * k[7][i]
            + ER9 * k[8][i]
            + ER10 * k[9][i]
            + ER11 * k[10][i]
            + ER12 * k[11][i];
        err += (e / sk).powi(2);
    }
    let mut deno = err + 0.01 * err2;
    if deno <= 0.0 {
        deno = 1.0;
    }
    h.abs() * err * (1.0 / (deno * n_err as f64)).sqrt()
}

/// Evaluates stages 2..12 (`k[0]` must hold `F(y)`), the 8th-order increment
/// `comb` and the propagated state `ynew`.
fn stages<F>(
    f: &mut F,
    y: &[f64],
    h: f64,
    k: &mut [Vec<f64>; 12],
    comb: &mut [f64],
    ytmp: &mut [f64],
    ynew: &mut [f64],
) where
    F: FnMut(&[f64], &mut [f64]),
{
    let n = y.len();
    macro_rules! stage {
        ($dst:expr, [$(($j:expr, $a:expr)),*]) => {{
            for i in 0..n {
                ytmp[i] = y[i] + h * (0.0 $(+ $a * k[$j][i])*);
            }
            f(ytmp, &mut k[$dst]);
        }};
    }
    stage!(1, [(0, A21)]);
    stage!(2, [(0, A31), (1, A32)]);
    stage!(3, [(0, A41), (2, A43)]);
    stage!(4, [(0, A51), (2, A53), (3, A54)]);
    stage!(5, [(0, A61), (3, A64), (4, A65)]);
    stage!(6, [(0, A71), (3, A74), (4, A75), (5, A76)]);
    stage!(7, [(0, A81), (3, A84), (4, A85), (5, A86), (6, A87)]);
    stage!(8, [(0, A91), (3, A94), (4, A95), (5, A96), (6, A97), (7, A98)]);
    stage!(9, [(0, A101), (3, A104), (4, A105), (5, A106), (6, A107), (7, A108), (8, A109)]);
    stage!(10, [(0, A111), (3, A114), (4, A115), (5, A116), (6, A117), (7, A118), (8, A119), (9, A1110)]);
    stage!(11, [(0, A121), (3, A124), (4, A125), (5, A126), (6, A127), (7, A128), (8, A129), (9, A1210), (10, A1211)]);
    for i in 0..n {
        comb[i] = B1 * k[0][i]
            + B6 * k[5][i]
            + B7 * k[6][i]
            + B8 * k[7][i]
            + B9 * k[8][i]
            + B10 * k[9][i]
            + B11 * k[10][i]
            + B12 * k[11][i];
        ynew[i] = y[i] + h * comb[i];
    }
}

const A21: f64 = 5.26001519587677318785587544488E-2;
const A31: f64 = 1.97250569845378994544595329183E-2;
const A32: f64 = 5.91751709536136983633785987549E-2;
const A41: f64 = 2.95875854768068491816892993775E-2;
const A43: f64 = 8.87627564304205475450678981324E-2;
const A51: f64 = 2.41365134159266685502369798665E-1;
const A53: f64 = -8.84549479328286085344864962717E-1;
const A54: f64 = 9.24834003261792003115737966543E-1;
const A61: f64 = 3.7037037037037037037037037037E-2;
const A64: f64 = 1.70828608729473871279604482173E-1;
const A65: f64 = 1.25467687566822425016691814123E-1;
const A71: f64 = 3.7109375E-2;
const A74: f64 = 1.70252211019544039314978060272E-1;
const A75: f64 = 6.02165389804559606850219397283E-2;
const A76: f64 = -1.7578125E-2;
const A81: f64 = 3.70920001185047927108779319836E-2;
const A84: f64 = 1.70383925712239993810214054705E-1;
const A85: f64 = 1.07262030446373284651809199168E-1;
const A86: f64 = -1.53194377486244017527936158236E-2;
const A87: f64 = 8.27378916381402288758473766002E-3;
const A91: f64 = 6.24110958716075717114429577812E-1;
const A94: f64 = -3.36089262944694129406857109825E0;
const A95: f64 = -8.68219346841726006818189891453E-1;
const A96: f64 = 2.75920996994467083049415600797E1;
const A97: f64 = 2.01540675504778934086186788979E1;
const A98: f64 = -4.34898841810699588477366255144E1;
const A101: f64 = 4.77662536438264365890433908527E-1;
const A104: f64 = -2.48811461997166764192642586468E0;
const A105: f64 = -5.90290826836842996371446475743E-1;
const A106: f64 = 2.12300514481811942347288949897E1;
const A107: f64 = 1.52792336328824235832596922938E1;
const A108: f64 = -3.32882109689848629194453265587E1;
const A109: f64 = -2.03312017085086261358222928593E-2;
const A111: f64 = -9.3714243008598732571704021658E-1;
const A114: f64 = 5.18637242884406370830023853209E0;
const A115: f64 = 1.09143734899672957818500254654E0;
const A116: f64 = -8.14978701074692612513997267357E0;
const A117: f64 = -1.85200656599969598641566180701E1;
const A118: f64 = 2.27394870993505042818970056734E1;
const A119: f64 = 2.49360555267965238987089396762E0;
const A1110: f64 = -3.0467644718982195003823669022E0;
const A121: f64 = 2.27331014751653820792359768449E0;
const A124: f64 = -1.05344954667372501984066689879E1;
const A125: f64 = -2.00087205822486249909675718444E0;
const A126: f64 = -1.79589318631187989172765950534E1;
const A127: f64 = 2.79488845294199600508499808837E1;
const A128: f64 = -2.85899827713502369474065508674E0;
const A129: f64 = -8.87285693353062954433549289258E0;
const A1210: f64 = 1.23605671757943030647266201528E1;
const A1211: f64 = 6.43392746015763530355970484046E-1;

const B1: f64 = 5.42937341165687622380535766363E-2;
const B6: f64 = 4.45031289275240888144113950566E0;
const B7: f64 = 1.89151789931450038304281599044E0;
const B8: f64 = -5.8012039600105847814672114227E0;
const B9: f64 = 3.1116436695781989440891606237E-1;
const B10: f64 = -1.52160949662516078556178806805E-1;
const B11: f64 = 2.01365400804030348374776537501E-1;
const B12: f64 = 4.47106157277725905176885569043E-2;

const BHH1: f64 = 0.244094488188976377952755905512E+00;
const BHH2: f64 = 0.733846688281611857341361741547E+00;
const BHH3: f64 = 0.220588235294117647058823529412E-01;

const ER1: f64 = 0.1312004499419488073250102996E-01;
const ER6: f64 = -0.1225156446376204440720569753E+01;
const ER7: f64 = -0.4957589496572501915214079952E+00;
const ER8: f64 = 0.1664377182454986536961530415E+01;
const ER9: f64 = -0.3503288487499736816886487290E+00;
const ER10: f64 = 0.3341791187130174790297318841E+00;
const ER11: f64 = 0.8192320648511571246570742613E-01;
const ER12: f64 = -0.2235530786388629525884427845E-01;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{Duffing, LinearDecay, StuartLandau};
    use std::f64::consts::PI;

    fn fd_monodromy(d: &dyn Dynamics, p: &[f64], x0: &[f64], t: f64) -> DMatrix<f64> {
        let n = x0.len();
        let s = IntegrationSettings {
            rtol: 1e-12,
            atol: 1e-14,
            ..Default::default()
        };
        let mut h = DMatrix::zeros(n, n);
        for j in 0..n {
            let dx = 1e-6;
            let mut xp = x0.to_vec();
            let mut xm = x0.to_vec();
            xp[j] += dx;
            xm[j] -= dx;
            let a = integrate_state(d, p, &xp, t, &s).unwrap().x_t;
            let b = integrate_state(d, p, &xm, t, &s).unwrap().x_t;
            for i in 0..n {
                h[(i, j)] = (a[i] - b[i]) / (2.0 * dx);
            }
        }
        h
    }

    #[test]
    fn stuart_landau_matches_closed_form() {
        let omega = 1.3;
        let t = 2.0 * PI / omega;
        let run = integrate_state(&StuartLandau, &[omega], &[0.0, 1.0], t, &Default::default()).unwrap();
        assert!(run.x_t[0].abs() < 1e-9);
        assert!((run.x_t[1] - 1.0).abs() < 1e-9);
        let run = integrate_state(&StuartLandau, &[omega], &[0.0, 1.0], 0.7, &Default::default()).unwrap();
        assert!((run.x_t[0] - (omega * 0.7).sin()).abs() < 1e-9);
        assert!((run.x_t[1] - (omega * 0.7).cos()).abs() < 1e-9);
    }

    #[test]
    fn unforced_rest_stays_at_rest() {
        let p = [1.0, 0.1, 1.0, 1.0, 0.0, 1.0];
        let run = integrate_state(&Duffing, &p, &[0.0, 0.0, 0.0, 1.0], 50.0, &Default::default()).unwrap();
        assert_eq!(run.x_t[0], 0.0);
        assert_eq!(run.x_t[1], 0.0);
    }

    #[test]
    fn off_resonance_duffing_settles_to_linear_amplitude() {
        let omega = 3.0;
        let p = [1.0, 0.1, 1.0, 1.0, 0.2, omega];
        let period = 2.0 * PI / omega;
        let warm = integrate_state(&Duffing, &p, &[0.0, 0.0, 0.0, 1.0], 200.0 * period, &Default::default()).unwrap();
        let settings = IntegrationSettings::default().with_dense();
        let last = integrate_state(&Duffing, &p, &warm.x_t, period, &settings).unwrap();
        let tr = last.trajectory.unwrap();
        let peak = tr.states.iter().map(|s| s[0].abs()).fold(0.0, f64::max);
        assert!((peak - 0.025).abs() < 0.05 * 0.025, "peak {peak}");
        assert!(tr.times.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn scalar_decay_monodromy_and_sensitivity() {
        let a = -1.0;
        let x0 = 0.7;
        let t = 1.0;
        let dirs = DMatrix::from_column_slice(2, 1, &[1.0, 0.0]);
        let r = integrate_augmented(&LinearDecay, &[a, 3.0], &[x0], t, &dirs, &Default::default()).unwrap();
        assert!((r.h_t[(0, 0)] - (-1.0f64).exp()).abs() < 1e-9);
        let s = x0 * t * (a * t).exp();
        assert!((r.s_t[(0, 0)] - s).abs() < 1e-9);
        assert!((r.trace_integral - a * t).abs() < 1e-12);
    }

    #[test]
    fn liouville_identity() {
        let p = [1.0, 0.1, 1.0, 1.0, 0.2, 1.4];
        let x0 = [0.3, -0.2, 0.0, 1.0];
        let t = 2.0 * PI / 1.4;
        let r = integrate_augmented(&Duffing, &p, &x0, t, &DMatrix::zeros(6, 0), &Default::default()).unwrap();
        let det = r.h_t.determinant();
        let rel = (det - r.trace_integral.exp()).abs() / det.abs();
        assert!(rel < 1e-8, "det {det} vs {}", r.trace_integral.exp());
    }

    #[test]
    fn monodromy_matches_finite_differences() {
        let p = [1.0, 0.1, 1.0, 1.0, 0.2, 1.4];
        let x0 = [0.3, -0.2, 0.0, 1.0];
        let t = 4.0;
        let r = integrate_augmented(&Duffing, &p, &x0, t, &DMatrix::zeros(6, 0), &Default::default()).unwrap();
        let fd = fd_monodromy(&Duffing, &p, &x0, t);
        assert!((&r.h_t - &fd).abs().max() < 1e-6);
    }

    #[test]
    fn sensitivity_matches_finite_differences() {
        let p = [1.0, 0.1, 1.0, 1.0, 0.2, 1.4];
        let x0 = [0.3, -0.2, 0.0, 1.0];
        let t = 4.0;
        let mut dirs = DMatrix::zeros(6, 2);
        dirs[(1, 0)] = 0.1;
        dirs[(4, 1)] = 0.2;
        let r = integrate_augmented(&Duffing, &p, &x0, t, &dirs, &Default::default()).unwrap();
        let s = IntegrationSettings {
            rtol: 1e-12,
            atol: 1e-14,
            ..Default::default()
        };
        for (col, idx) in [(0, 1), (1, 4)] {
            let de = 1e-6;
            let mut pp = p;
            let mut pm = p;
            pp[idx] += dirs[(idx, col)] * de;
            pm[idx] -= dirs[(idx, col)] * de;
            let a = integrate_state(&Duffing, &pp, &x0, t, &s).unwrap().x_t;
            let b = integrate_state(&Duffing, &pm, &x0, t, &s).unwrap().x_t;
            for i in 0..4 {
                let fd = (a[i] - b[i]) / (2.0 * de);
                assert!((r.s_t[(i, col)] - fd).abs() < 1e-6, "col {col} row {i}");
            }
        }
    }

    #[test]
    fn state_part_is_independent_of_augmentation() {
        let p = [1.0, 0.1, 1.0, 1.0, 0.2, 1.4];
        let x0 = [0.3, -0.2, 0.0, 1.0];
        let plain = integrate_state(&Duffing, &p, &x0, 4.0, &Default::default()).unwrap();
        let aug = integrate_augmented(&Duffing, &p, &x0, 4.0, &DMatrix::zeros(6, 0), &Default::default()).unwrap();
        assert_eq!(plain.steps, aug.steps);
        for i in 0..4 {
            assert_eq!(plain.x_t[i], aug.x_t[i]);
        }
    }

    #[test]
    fn replay_reproduces_run() {
        let p = [1.0, 0.1, 1.0, 1.0, 0.2, 1.4];
        let x0 = [0.3, -0.2, 0.0, 1.0];
        let dirs = DMatrix::zeros(6, 0);
        let aug = integrate_augmented(&Duffing, &p, &x0, 4.0, &dirs, &Default::default()).unwrap();
        let again = integrate_augmented_replay(&Duffing, &p, &x0, 4.0, &dirs, &aug.steps).unwrap();
        assert!((&aug.x_t - &again.x_t).abs().max() < 1e-15);
        assert_eq!(aug.steps.len(), again.steps.len());
    }

    #[test]
    fn halving_tolerance_moves_result_little() {
        let p = [1.0, 0.1, 1.0, 1.0, 0.2, 1.4];
        let x0 = [0.3, -0.2, 0.0, 1.0];
        let a = integrate_state(&Duffing, &p, &x0, 20.0, &Default::default()).unwrap();
        let tight = IntegrationSettings {
            rtol: 5e-11,
            atol: 5e-13,
            ..Default::default()
        };
        let b = integrate_state(&Duffing, &p, &x0, 20.0, &tight).unwrap();
        let diff = a.x_t.iter().zip(&b.x_t).map(|(u, v)| (u - v).abs()).fold(0.0, f64::max);
        assert!(diff < 1e-8, "diff {diff}");
    }

    #[test]
    fn invalid_requests() {
        let d = &StuartLandau;
        let s = IntegrationSettings::default();
        assert!(matches!(integrate_state(d, &[1.0], &[0.0, 1.0], 0.0, &s), Err(Error::InvalidIntegration(_))));
        assert!(matches!(integrate_state(d, &[1.0], &[0.0], 1.0, &s), Err(Error::InvalidIntegration(_))));
        let few = IntegrationSettings {
            max_steps: 3,
            ..Default::default()
        };
        assert!(matches!(integrate_state(d, &[1.0], &[0.0, 1.0], 100.0, &few), Err(Error::StepLimit { .. })));
    }

    #[test]
    fn blow_up_is_reported() {
        let d = &LinearDecay;
        let r = integrate_state(d, &[800.0, 0.0], &[1.0], 10.0, &IntegrationSettings::default());
        assert!(r.is_err());
    }
}
