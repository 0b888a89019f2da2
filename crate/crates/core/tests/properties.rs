use proptest::prelude::*;

use uqmargins::continuation::{Branch, ContinuationPoint, Family, Provenance, Termination};
use uqmargins::harness::output::{branch_csv, parse_branch_csv};
use uqmargins::harness::{grid_samples, Envelope};

fn finite() -> impl Strategy<Value = f64> {
    any::<f64>().prop_filter("finite", |v| v.is_finite())
}

proptest! {
    #[test]
    fn envelope_brackets_every_vertex(pts in prop::collection::vec((0.0f64..1.0, -5.0f64..5.0), 1..40)) {
        let mut e = Envelope::new((0.0, 1.0), 0.05);
        e.add_curve(&pts);
        for (l, g) in &pts {
            let k = ((l / 0.05).floor() as usize).min(e.len() - 1);
            prop_assert!(e.lower[k] <= *g && *g <= e.upper[k]);
        }
    }

    #[test]
    fn envelope_brackets_segment_midpoints(pts in prop::collection::vec((0.0f64..1.0, -5.0f64..5.0), 2..40)) {
        let mut e = Envelope::new((0.0, 1.0), 0.05);
        e.add_curve(&pts);
        for w in pts.windows(2) {
            let (l, g) = (0.5 * (w[0].0 + w[1].0), 0.5 * (w[0].1 + w[1].1));
            let k = ((l / 0.05).floor() as usize).min(e.len() - 1);
            prop_assert!(e.lower[k] <= g + 1e-12 && g <= e.upper[k] + 1e-12);
        }
    }

    #[test]
    fn csv_round_trip_reproduces_bits(
        rows in prop::collection::vec((prop::collection::vec(finite(), 4), prop::collection::vec(finite(), 2), finite()), 1..8)
    ) {
        let points: Vec<ContinuationPoint> = rows
            .iter()
            .map(|(x0, eps, v)| ContinuationPoint {
                x0: x0.clone(),
                eps: eps.clone(),
                r: v.abs(),
                period: *v,
                lambda: -*v,
                metric: *v,
                arclength: v / 3.0,
                ..Default::default()
            })
            .collect();
        let branch = Branch {
            id: 7,
            family: Some(Family::Positive),
            points: points.clone(),
            crossings: Vec::new(),
            termination: Termination::MaxSteps,
            reverse_termination: None,
            provenance: Provenance::default(),
            arclength: 0.0,
        };
        let text = branch_csv(&branch, &["a".into(), "b".into()]).unwrap();
        let parsed = parse_branch_csv(&text).unwrap();
        prop_assert_eq!(parsed.len(), points.len());
        for (row, p) in parsed.iter().zip(&points) {
            let bits = |q: &ContinuationPoint| -> Vec<u64> {
                q.x0.iter().chain(&q.eps).chain([&q.r, &q.period, &q.lambda, &q.metric, &q.arclength]).map(|v| v.to_bits()).collect()
            };
            prop_assert_eq!(bits(&row.point), bits(p));
        }
    }

    #[test]
    fn grid_samples_fill_the_disc(radius in 1e-3f64..1.0, rings in 1usize..5, angles in 3usize..50) {
        let s = grid_samples(radius, angles, rings, 2).unwrap();
        prop_assert_eq!(s.len(), rings * angles);
        for e in &s {
            prop_assert!(e[0].hypot(e[1]) <= radius * (1.0 + 1e-12));
        }
        let outer = &s[s.len() - angles..];
        for e in outer {
            prop_assert!((e[0].hypot(e[1]) - radius).abs() < 1e-12 * radius.max(1.0));
        }
    }
}
