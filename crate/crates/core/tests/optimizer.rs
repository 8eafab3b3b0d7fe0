//! Partial-likelihood machinery against a from-scratch reference.

use proptest::prelude::*;

use perr_core::survival::{evaluate, fit, log_partial_likelihood, FitConfig, SurvivalData};

/// Breslow log partial likelihood computed directly from its definition.
fn reference(start: &[f64], stop: &[f64], event: &[bool], x: &[Vec<f64>], beta: &[f64]) -> f64 {
    let eta = |i: usize| x[i].iter().zip(beta).map(|(a, b)| a * b).sum::<f64>();
    let mut ll = 0.0;
    for i in (0..stop.len()).filter(|&i| event[i]) {
        let t = stop[i];
        let denom: f64 = (0..stop.len()).filter(|&j| start[j] < t && t <= stop[j]).map(|j| eta(j).exp()).sum();
        ll += eta(i) - denom.ln();
    }
    ll
}

#[derive(Debug, Clone)]
struct Cohort {
    start: Vec<f64>,
    stop: Vec<f64>,
    event: Vec<bool>,
    x: Vec<Vec<f64>>,
}

impl Cohort {
    fn data(&self) -> SurvivalData {
        let p = self.x[0].len();
        SurvivalData::new(
            (0..p).map(|k| format!("x{k}")).collect(),
            self.start.clone(),
            self.stop.clone(),
            self.event.clone(),
            (0..self.start.len()).collect(),
            self.x.iter().flatten().copied().collect(),
        )
        .unwrap()
    }

    fn reference(&self, beta: &[f64]) -> f64 {
        reference(&self.start, &self.stop, &self.event, &self.x, beta)
    }
}

/// Up to eight subjects with integer times, so tied event times are common.
fn cohort(p: usize) -> impl Strategy<Value = Cohort> {
    (2usize..=8)
        .prop_flat_map(move |n| {
            (
                prop::collection::vec((0u8..4, 1u8..8, any::<bool>()), n),
                prop::collection::vec(prop::collection::vec(-1.5f64..1.5, p), n),
            )
        })
        .prop_map(|(rows, x)| Cohort {
            start: rows.iter().map(|r| r.0 as f64).collect(),
            stop: rows.iter().map(|r| (r.0 + r.1) as f64).collect(),
            event: rows.iter().map(|r| r.2).collect(),
            x,
        })
        .prop_filter("needs an event", |c| c.event.iter().any(|&e| e))
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 200, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn likelihood_matches_reference(c in cohort(2), b0 in -2.0f64..2.0, b1 in -2.0f64..2.0) {
        let got = log_partial_likelihood(&c.data(), &[b0, b1]).unwrap();
        let want = c.reference(&[b0, b1]);
        prop_assert!((got - want).abs() < 1e-9 * want.abs().max(1.0), "{got} vs {want}");
    }

    #[test]
    fn derivatives_match_finite_differences(c in cohort(2), b0 in -2.0f64..2.0, b1 in -2.0f64..2.0) {
        let beta = [b0, b1];
        let ev = evaluate(&c.data(), &beta).unwrap();
        let h = 1e-5;
        for k in 0..2 {
            let shifted = |d: f64| {
                let mut b = beta;
                b[k] += d;
                b
            };
            let fd = (c.reference(&shifted(h)) - c.reference(&shifted(-h))) / (2.0 * h);
            prop_assert!((ev.score[k] - fd).abs() < 1e-5 * fd.abs().max(1.0), "score {k}: {} vs {fd}", ev.score[k]);
            let up = evaluate(&c.data(), &shifted(h)).unwrap();
            let down = evaluate(&c.data(), &shifted(-h)).unwrap();
            for j in 0..2 {
                let fd2 = -(up.score[j] - down.score[j]) / (2.0 * h);
                let info = ev.information[j * 2 + k];
                prop_assert!((info - fd2).abs() < 1e-5 * fd2.abs().max(1.0), "info {j}{k}: {info} vs {fd2}");
            }
        }
    }

    #[test]
    fn fit_maximizes_single_covariate_likelihood(c in cohort(1)) {
        let Ok(f) = fit(&c.data(), &FitConfig::default()) else {
            // Monotone or degenerate designs are rejected, not mis-fitted.
            return Ok(());
        };
        let b = f.coefficients[0];
        let best = c.reference(&[b]);
        // Coarse grid then a fine one around the best grid point.
        let coarse = (-400..=400).map(|i| i as f64 * 0.025);
        let centre = coarse.max_by(|a, b| c.reference(&[*a]).total_cmp(&c.reference(&[*b]))).unwrap();
        let fine = (-500..=500).map(|i| centre + i as f64 * 1e-4);
        let grid_best = fine.max_by(|a, b| c.reference(&[*a]).total_cmp(&c.reference(&[*b]))).unwrap();
        prop_assert!(best >= c.reference(&[grid_best]) - 1e-9);
        // A flat likelihood (no event has anyone else at risk) has no unique maximizer.
        let identifiable = evaluate(&c.data(), &[b]).unwrap().information[0] > 1e-6;
        if identifiable && centre.abs() < 9.9 {
            prop_assert!((b - grid_best).abs() < 2e-4, "fit {b} grid {grid_best}");
        }
    }
}
