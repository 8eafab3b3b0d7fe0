//! Cohort generation by inversion of Weibull cumulative hazards.
//!
//! Treatment hazard `kappa1 t^(kappa1-1) h0` and event hazard
//! `0.5 kappa2 t^(kappa2-1) exp(beta0 + beta P(t) + alpha2 X + z Z + w)`, where
//! `P(t)` switches on after treatment. An event before treatment multiplies the
//! remaining treatment hazard by `theta` for `delta` days, which is simulated by
//! warping the pending treatment time so that the integrated hazard between the
//! event and treatment is unchanged.

use rand::Rng;
use rand_distr::{Distribution, Gamma, Normal, Open01};

use super::{ConfounderKind, ScenarioSpec};
use crate::cohort::{match_controls, CohortDataset, Covariate, Group, MatchReport, Participant};
use crate::{Error, Result};

/// Minimum number of matched pairs for a usable replicate.
pub const MIN_PAIRS: usize = 100;

/// One pre-match participant with its latent variables.
#[derive(Debug, Clone, PartialEq)]
pub struct SimParticipant {
    pub participant: Participant,
    pub x: f64,
    pub z: f64,
    pub treatment_time: f64,
    pub tau: f64,
}

impl SimParticipant {
    pub fn is_treated(&self) -> bool {
        self.treatment_time < self.tau
    }
}

/// Time at which a Weibull cumulative hazard `scale * t^kappa`, started at
/// `from`, accumulates `-ln(u)`.
pub fn weibull_inverse(u: f64, scale: f64, kappa: f64, from: f64) -> f64 {
    (-u.ln() / scale + from.powf(kappa)).powf(1.0 / kappa)
}

/// Treatment time after an event at `event`, given the pending treatment time
/// `t_trt > event`.
///
/// `phases` lists consecutive `(theta, length)` windows starting at the
/// event; the hazard is multiplied by `theta` inside each and left unchanged
/// afterwards. With a single phase this is the within-window formula
/// `((t^k - e^k) / theta + e^k)^(1/k)` when the result stays inside the window,
/// and `(t^k + (1 - theta)((e + delta)^k - e^k))^(1/k)` otherwise.
pub fn update_treatment_time(t_trt: f64, event: f64, phases: &[(f64, f64)], kappa: f64) -> f64 {
    let mut remaining = t_trt.powf(kappa) - event.powf(kappa);
    let mut start = event;
    for &(theta, length) in phases {
        if length <= 0.0 {
            continue;
        }
        let end = start + length;
        let capacity = theta * (end.powf(kappa) - start.powf(kappa));
        if remaining <= capacity {
            return (start.powf(kappa) + remaining / theta).powf(1.0 / kappa);
        }
        remaining -= capacity;
        start = end;
    }
    (start.powf(kappa) + remaining).powf(1.0 / kappa)
}

fn open01(rng: &mut impl Rng) -> f64 {
    Open01.sample(rng)
}

/// Zero-mean normal draw with variance `var`; exactly zero when `var` is zero.
fn normal(var: f64, rng: &mut impl Rng) -> f64 {
    if var > 0.0 {
        Normal::new(0.0, var.sqrt()).expect("valid normal").sample(rng)
    } else {
        0.0
    }
}

/// Draws one participant's follow-up, treatment time and events.
pub fn draw_participant(spec: &ScenarioSpec, id: usize, rng: &mut impl Rng) -> SimParticipant {
    let tau = rng.random_range(spec.tau_min..spec.tau_max);
    let x = match spec.confounder_kind {
        ConfounderKind::BinaryHalf => f64::from(u8::from(rng.random_bool(0.5))),
        ConfounderKind::Gamma4Quarter => Gamma::<f64>::new(4.0, 0.25).expect("valid gamma").sample(rng).ln(),
    };
    let z = f64::from(u8::from(rng.random_bool(0.5)));
    let eps = normal(spec.epsilon_var, rng);
    let w = normal(spec.sigma_omega_sq, rng);

    let h0 = (spec.c0 + spec.alpha1 * x + spec.z_effect * z + eps).exp();
    let lambda0 = 0.5 * (spec.beta0 + spec.alpha2 * x + spec.z_effect * z + w).exp();
    let lambda1 = lambda0 * spec.beta.exp();
    let phases = spec.edt_phases();

    let mut t_trt = weibull_inverse(open01(rng), h0, spec.kappa1, 0.0);
    let mut events = Vec::new();
    let mut last = 0.0;
    loop {
        let treated_already = t_trt <= last;
        let rate = if treated_already { lambda1 } else { lambda0 };
        let mut t = weibull_inverse(open01(rng), rate, spec.kappa2, last);
        if !treated_already {
            if t < t_trt {
                if !phases.is_empty() {
                    t_trt = update_treatment_time(t_trt, t, &phases, spec.kappa1);
                }
            } else {
                t = weibull_inverse(open01(rng), lambda1, spec.kappa2, t_trt);
            }
        }
        if t > tau {
            break;
        }
        events.push(t);
        last = t;
    }

    let treated = t_trt < tau;
    let (group, index) = if treated { (Group::Treated, t_trt) } else { (Group::Control, tau) };
    let participant = Participant::new(id.to_string(), group, 0.0, index, tau)
        .with_events(events)
        .with_covariate("Z", Covariate::Number(z));
    SimParticipant { participant, x, z, treatment_time: t_trt, tau }
}

/// Draws `n_prematch` participants and matches treated to controls on `Z`
/// under the risk-set condition.
/// Draws the pre-match population, split into treated participants and the
/// control pool.
pub fn draw_population(spec: &ScenarioSpec, rng: &mut impl Rng) -> (Vec<Participant>, Vec<Participant>) {
    let mut treated = Vec::new();
    let mut pool = Vec::new();
    for i in 0..spec.n_prematch {
        let p = draw_participant(spec, i, rng);
        if p.is_treated() {
            treated.push(p.participant);
        } else {
            pool.push(p.participant);
        }
    }
    (treated, pool)
}

/// Matches a drawn population on `Z`, rejecting cohorts with too few pairs.
pub fn match_population(treated: &[Participant], pool: &[Participant]) -> Result<(CohortDataset, MatchReport)> {
    let outcome = match_controls(treated, pool, &["Z".to_string()])?;
    if outcome.report.pairs < MIN_PAIRS {
        return Err(Error::Scenario(format!(
            "only {} matched pairs (at least {MIN_PAIRS} required)",
            outcome.report.pairs
        )));
    }
    Ok((outcome.dataset, outcome.report))
}

pub fn assemble_matched_cohort(spec: &ScenarioSpec, rng: &mut impl Rng) -> Result<(CohortDataset, MatchReport)> {
    let (treated, pool) = draw_population(spec, rng);
    match_population(&treated, &pool)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::validate;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// The two printed update formulas, applied literally.
    fn literal_update(t_trt: f64, e: f64, theta: f64, delta: f64, k: f64) -> f64 {
        let inside = ((t_trt.powf(k) - e.powf(k)) / theta + e.powf(k)).powf(1.0 / k);
        if inside > e + delta {
            (t_trt.powf(k) + (1.0 - theta) * ((e + delta).powf(k) - e.powf(k))).powf(1.0 / k)
        } else {
            inside
        }
    }

    #[test]
    fn closed_form_inversion() {
        assert!((weibull_inverse((-1.0f64).exp(), 1.0, 1.25, 0.0) - 1.0).abs() < 1e-12);
        // Left truncation: cumulative hazard from 2 to t equals 1.
        let t = weibull_inverse((-1.0f64).exp(), 0.5, 1.5, 2.0);
        assert!((0.5 * (t.powf(1.5) - 2f64.powf(1.5)) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn two_phase_integrates_correctly() {
        // Hazard kappa t^(kappa-1): theta 4 on (10, 15], 2 on (15, 20], 1 after.
        let (e, t, k) = (10.0, 40.0, 1.25);
        let s = update_treatment_time(t, e, &[(4.0, 5.0), (2.0, 5.0)], k);
        let h = |a: f64, b: f64| b.powf(k) - a.powf(k);
        let integrated = if s <= 15.0 {
            4.0 * h(e, s)
        } else if s <= 20.0 {
            4.0 * h(e, 15.0) + 2.0 * h(15.0, s)
        } else {
            4.0 * h(e, 15.0) + 2.0 * h(15.0, 20.0) + h(20.0, s)
        };
        assert!((integrated - h(e, t)).abs() < 1e-9, "{s}");
    }

    proptest! {
        #[test]
        fn single_phase_matches_printed_formulas(
            e in 0.0f64..250.0, gap in 0.01f64..200.0, theta in 0.05f64..8.0,
            delta in 0.5f64..60.0, k in 0.8f64..1.8,
        ) {
            let t = e + gap;
            let got = update_treatment_time(t, e, &[(theta, delta)], k);
            let want = literal_update(t, e, theta, delta, k);
            prop_assert!((got - want).abs() <= 1e-9 * want.max(1.0), "{} vs {}", got, want);
            prop_assert!(got >= e);
            if theta > 1.0 { prop_assert!(got <= t + 1e-9); }
            if theta < 1.0 { prop_assert!(got >= t - 1e-9); }
        }

        #[test]
        fn unit_theta_is_identity(e in 0.0f64..250.0, gap in 0.01f64..200.0, delta in 0.0f64..60.0, k in 0.8f64..1.8) {
            let t = e + gap;
            let got = update_treatment_time(t, e, &[(1.0, delta)], k);
            prop_assert!((got - t).abs() <= 1e-9 * t);
            prop_assert!((update_treatment_time(t, e, &[(3.0, 0.0)], k) - t).abs() <= 1e-9 * t);
        }

        #[test]
        fn generated_histories_are_valid(seed in 0u64..500, theta in prop::sample::select(vec![0.25, 0.5, 1.0, 2.0, 4.0])) {
            let spec = ScenarioSpec { theta, delta: 30.0, beta0: -6.0, ..ScenarioSpec::default() };
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = draw_participant(&spec, 0, &mut rng);
            let ev = &p.participant.event_times;
            prop_assert!(ev.windows(2).all(|w| w[0] < w[1]));
            prop_assert!(ev.iter().all(|&t| t > 0.0 && t <= p.tau));
            prop_assert!(p.tau >= spec.tau_min && p.tau < spec.tau_max);
            prop_assert_eq!(p.participant.is_treated(), p.treatment_time < p.tau);
        }
    }

    /// Kolmogorov-Smirnov test of first-event times against the analytic CDF.
    #[test]
    fn first_event_times_follow_weibull() {
        let spec = ScenarioSpec {
            alpha1: 0.0,
            alpha2: 0.0,
            z_effect: 0.0,
            sigma_omega_sq: 0.0,
            beta: 0.0,
            theta: 1.0,
            delta: 0.0,
            tau_min: 20_000.0,
            tau_max: 20_001.0,
            ..ScenarioSpec::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let n = 10_000;
        let mut first: Vec<f64> =
            (0..n).map(|i| draw_participant(&spec, i, &mut rng).participant.event_times[0]).collect();
        first.sort_by(f64::total_cmp);
        let cdf = |t: f64| 1.0 - (-0.5 * spec.beta0.exp() * t.powf(spec.kappa2)).exp();
        let d = first
            .iter()
            .enumerate()
            .map(|(i, &t)| {
                let f = cdf(t);
                (f - i as f64 / n as f64).abs().max(((i + 1) as f64 / n as f64 - f).abs())
            })
            .fold(0.0, f64::max);
        // Asymptotic critical value at alpha = 0.01.
        assert!(d < 1.628 / (n as f64).sqrt(), "KS D = {d}");
    }

    #[test]
    fn treatment_time_has_weibull_distribution_without_edt() {
        // Without confounders and frailty, P(treated by tau) = 1 - exp(-e^c0 tau^k1).
        let spec = ScenarioSpec {
            alpha1: 0.0,
            z_effect: 0.0,
            epsilon_var: 0.0,
            tau_min: 250.0,
            tau_max: 250.0 + 1e-9,
            ..ScenarioSpec::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 20_000;
        let treated = (0..n).filter(|&i| draw_participant(&spec, i, &mut rng).is_treated()).count();
        let p = 1.0 - (-spec.c0.exp() * 250f64.powf(spec.kappa1)).exp();
        let se = (p * (1.0 - p) / n as f64).sqrt();
        assert!((treated as f64 / n as f64 - p).abs() < 4.0 * se, "{treated} vs {p}");
    }

    #[test]
    fn default_cohort_is_valid_and_sized() {
        let spec = ScenarioSpec::default();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (ds, report) = assemble_matched_cohort(&spec, &mut rng).unwrap();
        assert!(validate(&ds).is_empty());
        assert!((2000..=2600).contains(&ds.len()), "{}", ds.len());
        assert_eq!(report.pairs * 2, ds.len());
        for (t, c) in ds.pairs().unwrap() {
            let (t, c) = (&ds.participants[t], &ds.participants[c]);
            assert_eq!(t.index_time, c.index_time);
            assert!(c.end_time > c.index_time);
            assert_eq!(t.covariates["Z"], c.covariates["Z"]);
        }
    }

    #[test]
    fn tiny_cohort_is_rejected() {
        let spec = ScenarioSpec { n_prematch: 50, ..ScenarioSpec::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(matches!(assemble_matched_cohort(&spec, &mut rng), Err(Error::Scenario(_))));
    }
}
