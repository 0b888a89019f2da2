//! Pointwise metric envelopes over bins of the bifurcation parameter.

use serde::{Deserialize, Serialize};

use super::GridSettings;
use crate::continuation::{Branch, ContinuationPoint};

/// Extremes of a family of piecewise-linear curves `(lambda, metric)` within
/// each bin. Empty bins hold NaN.
#[derive(Debug, Clone, PartialEq)]
pub struct Envelope {
    pub start: f64,
    pub width: f64,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Envelope {
    pub fn new(range: (f64, f64), width: f64) -> Self {
        let n = (((range.1 - range.0) / width) - 1e-9).ceil().max(1.0) as usize;
        Self {
            start: range.0,
            width,
            lower: vec![f64::NAN; n],
            upper: vec![f64::NAN; n],
        }
    }

    pub fn len(&self) -> usize {
        self.upper.len()
    }

    pub fn is_empty(&self) -> bool {
        self.upper.is_empty()
    }

    pub fn center(&self, k: usize) -> f64 {
        self.start + (k as f64 + 0.5) * self.width
    }

    fn bin(&self, lambda: f64) -> Option<usize> {
        let k = ((lambda - self.start) / self.width).floor();
        if k < 0.0 {
            // Points on the lower edge belong to the first bin.
            return (lambda >= self.start - 1e-12).then_some(0);
        }
        let k = k as usize;
        if k < self.len() {
            Some(k)
        } else if lambda <= self.start + self.len() as f64 * self.width + 1e-12 {
            Some(self.len() - 1)
        } else {
            None
        }
    }

    fn add_value(&mut self, k: usize, g: f64) {
        if self.upper[k].is_nan() || g > self.upper[k] {
            self.upper[k] = g;
        }
        if self.lower[k].is_nan() || g < self.lower[k] {
            self.lower[k] = g;
        }
    }

    pub fn add_point(&mut self, lambda: f64, g: f64) {
        if let Some(k) = self.bin(lambda) {
            self.add_value(k, g);
        }
    }

    /// Add a polyline. Each segment contributes its exact extremes over
    /// every bin it passes through.
    pub fn add_curve(&mut self, points: &[(f64, f64)]) {
        if let [(l, g)] = points {
            self.add_point(*l, *g);
        }
        for w in points.windows(2) {
            let ((l0, g0), (l1, g1)) = (w[0], w[1]);
            self.add_point(l0, g0);
            self.add_point(l1, g1);
            let (a, b) = if l0 <= l1 { (l0, l1) } else { (l1, l0) };
            if b - a <= 0.0 {
                continue;
            }
            let at = |l: f64| g0 + (g1 - g0) * (l - l0) / (l1 - l0);
            // Interior bin edges reached by the segment, endpoints included,
            // so that an edge value counts for both neighbouring bins.
            let first = (((a - self.start) / self.width).floor().max(0.0) as usize).max(1);
            let mut k = first;
            while k < self.len() {
                let edge = self.start + k as f64 * self.width;
                if edge > b {
                    break;
                }
                if edge >= a {
                    let g = at(edge).clamp(g0.min(g1), g0.max(g1));
                    self.add_value(k - 1, g);
                    self.add_value(k, g);
                }
                k += 1;
            }
        }
    }

    /// Add a branch, interpolating between its points with cubic Hermite
    /// segments in arclength.
    pub fn add_branch(&mut self, branch: &Branch) {
        let pts = hermite_polyline(&branch.points, self.width / 2.0);
        self.add_curve(&pts);
    }

    pub fn covered(&self, k: usize) -> bool {
        !self.upper[k].is_nan()
    }

    /// Largest absolute metric value over all bins.
    pub fn magnitude(&self) -> f64 {
        self.upper
            .iter()
            .chain(&self.lower)
            .filter(|v| !v.is_nan())
            .fold(0.0, |m, v| f64::max(m, v.abs()))
    }
}

/// Dense polyline through `points`, with each segment resolved to pieces no
/// wider than `resolution` in the bifurcation parameter. Segments without
/// usable arclength data are kept straight.
pub fn hermite_polyline(points: &[ContinuationPoint], resolution: f64) -> Vec<(f64, f64)> {
    let mut out: Vec<(f64, f64)> = points.first().map(|p| vec![(p.lambda, p.metric)]).unwrap_or_default();
    for w in points.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        let len = b.arclength - a.arclength;
        let smooth = len > 0.0 && [a.lambda_rate, a.metric_rate, b.lambda_rate, b.metric_rate].iter().all(|v| v.is_finite());
        if smooth {
            let pieces = ((b.lambda - a.lambda).abs() / resolution).ceil().clamp(4.0, 4096.0) as usize;
            for i in 1..pieces {
                let s = i as f64 / pieces as f64;
                let (h00, h10, h01, h11) = (
                    (1.0 + 2.0 * s) * (1.0 - s) * (1.0 - s),
                    s * (1.0 - s) * (1.0 - s),
                    s * s * (3.0 - 2.0 * s),
                    s * s * (s - 1.0),
                );
                let lambda = h00 * a.lambda + h10 * len * a.lambda_rate + h01 * b.lambda + h11 * len * b.lambda_rate;
                let metric = h00 * a.metric + h10 * len * a.metric_rate + h01 * b.metric + h11 * len * b.metric_rate;
                out.push((lambda, metric));
            }
        }
        out.push((b.lambda, b.metric));
    }
    out
}

/// Values of the bifurcation parameter at which a branch turns back.
pub fn fold_lambdas(branch: &Branch) -> Vec<f64> {
    branch
        .points
        .windows(3)
        .filter(|w| (w[1].lambda - w[0].lambda) * (w[2].lambda - w[1].lambda) < 0.0)
        .map(|w| w[1].lambda)
        .collect()
}

/// Comparison of sampled responses against computed margins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeComparison {
    pub bins: usize,
    pub compared_bins: usize,
    /// Bins reached by the samples but not by the margins.
    pub uncovered_bins: usize,
    /// Largest relative excess of the samples over the margins.
    pub max_violation: f64,
    pub violation_lambda: f64,
    pub violating_bins: usize,
    /// Largest relative gap between margins and samples away from folds.
    pub max_slack: f64,
    pub slack_lambda: f64,
    pub slack_bins: usize,
    /// Metric magnitude below which differences are measured absolutely.
    pub floor: f64,
    pub sound: bool,
    pub attained: bool,
}

/// Relative differences are taken against `max(|margin|, floor)` in each
/// bin, where `floor` is 1% of the largest margin magnitude.
pub fn compare_envelopes(margins: &Envelope, samples: &Envelope, folds: &[f64], settings: &GridSettings) -> EnvelopeComparison {
    let floor = 1e-2 * margins.magnitude();
    let mut report = EnvelopeComparison {
        bins: margins.len(),
        compared_bins: 0,
        uncovered_bins: 0,
        max_violation: 0.0,
        violation_lambda: f64::NAN,
        violating_bins: 0,
        max_slack: 0.0,
        slack_lambda: f64::NAN,
        slack_bins: 0,
        floor,
        sound: true,
        attained: true,
    };
    for k in 0..margins.len().min(samples.len()) {
        if !samples.covered(k) {
            continue;
        }
        if !margins.covered(k) {
            report.uncovered_bins += 1;
            continue;
        }
        report.compared_bins += 1;
        let scale = margins.upper[k].abs().max(margins.lower[k].abs()).max(floor);
        let lambda = margins.center(k);
        let violation = f64::max(samples.upper[k] - margins.upper[k], margins.lower[k] - samples.lower[k]) / scale;
        if violation > report.max_violation {
            report.max_violation = violation;
            report.violation_lambda = lambda;
        }
        if violation > settings.violation_tol {
            report.violating_bins += 1;
        }
        let near_fold = folds.iter().any(|f| (f - lambda).abs() <= settings.fold_window);
        if near_fold {
            continue;
        }
        let slack = f64::max(margins.upper[k] - samples.upper[k], samples.lower[k] - margins.lower[k]) / scale;
        if slack > report.max_slack {
            report.max_slack = slack;
            report.slack_lambda = lambda;
        }
        if slack > settings.slack_tol {
            report.slack_bins += 1;
        }
    }
    report.sound = report.violating_bins == 0 && report.uncovered_bins == 0;
    report.attained = report.slack_bins == 0;
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn segment_extremes_land_in_every_bin() {
        let mut e = Envelope::new((0.0, 1.0), 0.1);
        assert_eq!(e.len(), 10);
        e.add_curve(&[(0.05, 0.0), (0.95, 0.9)]);
        for k in 0..10 {
            assert!(e.covered(k));
            let lo = (k as f64 * 0.1 - 0.05).max(0.0);
            let hi = ((k + 1) as f64 * 0.1 - 0.05).min(0.9);
            assert!((e.lower[k] - lo).abs() < 1e-12, "bin {k}");
            assert!((e.upper[k] - hi).abs() < 1e-12, "bin {k}");
        }
    }

    #[test]
    fn segment_starting_on_an_edge_reaches_the_next_bin() {
        // (0.7 - 0.5) / 0.002 rounds below 100, so 0.7 itself falls in bin 99.
        let mut e = Envelope::new((0.5, 0.8), 0.002);
        e.add_curve(&[(0.7, 2.0), (0.7021, 1.0)]);
        assert_eq!(e.upper[100], 2.0);
        assert_eq!(e.upper[99], 2.0);
    }

    #[test]
    fn folded_curve_gives_both_extremes() {
        let mut e = Envelope::new((0.0, 1.0), 0.25);
        e.add_curve(&[(0.1, 0.0), (0.6, 1.0), (0.2, 2.0)]);
        assert!((e.upper[1] - 1.875).abs() < 1e-12);
        assert!((e.lower[1] - 0.3).abs() < 1e-12);
        assert!(!e.covered(3));
    }

    #[test]
    fn hermite_reproduces_cubic_in_arclength() {
        let f = |s: f64| (1.0 + s, s * s * s - s);
        let df = |s: f64| (1.0, 3.0 * s * s - 1.0);
        let pts: Vec<ContinuationPoint> = [0.0, 0.5, 1.5]
            .iter()
            .map(|&s| ContinuationPoint {
                lambda: f(s).0,
                metric: f(s).1,
                arclength: s,
                lambda_rate: df(s).0,
                metric_rate: df(s).1,
                ..Default::default()
            })
            .collect();
        let line = hermite_polyline(&pts, 0.01);
        assert!(line.len() > 100);
        for (l, g) in line {
            let s = l - 1.0;
            assert!((g - f(s).1).abs() < 1e-12);
        }
    }

    #[test]
    fn identical_envelopes_compare_clean() {
        let mut e = Envelope::new((0.0, 1.0), 0.01);
        e.add_curve(&[(0.0, 1.0), (0.5, 2.0), (1.0, 0.5)]);
        let r = compare_envelopes(&e, &e, &[], &GridSettings::default());
        assert_eq!(r.compared_bins, 100);
        assert_eq!(r.max_violation, 0.0);
        assert_eq!(r.max_slack, 0.0);
        assert!(r.sound && r.attained);
    }

    #[test]
    fn excess_samples_are_violations() {
        let mut m = Envelope::new((0.0, 1.0), 0.1);
        m.add_curve(&[(0.0, 1.0), (1.0, 1.0)]);
        let mut s = Envelope::new((0.0, 1.0), 0.1);
        s.add_curve(&[(0.0, 0.99), (0.5, 1.01), (1.0, 0.99)]);
        let r = compare_envelopes(&m, &s, &[], &GridSettings::default());
        assert!(!r.sound);
        assert!((r.max_violation - 0.01).abs() < 1e-12);
        let r = compare_envelopes(&m, &s, &[0.5], &GridSettings { fold_window: 0.6, ..Default::default() });
        assert!(!r.sound, "folds only relax the slack test");
    }
}
