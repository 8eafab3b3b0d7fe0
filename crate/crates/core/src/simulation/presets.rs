//! Named scenario catalog.
//!
//! Groups:
//! - `heterogeneity`: baseline event rate `beta0` in {-6.5, -7.5} crossed with
//!   frailty variance in {0, 0.5, 1}, comparing the three estimators.
//! - `edt`: a negative control, `delta` in {20, 30} crossed with `theta` in
//!   {1/4, 1/2, 2, 4}, and two-phase windows (1/4 then 1/2, 4 then 2).
//! - One group per sensitivity variant, each at `delta = 30` with the four
//!   single `theta` values.

use super::{ConfounderKind, ScenarioSpec};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Preset {
    pub group: &'static str,
    pub spec: ScenarioSpec,
}

const THETAS: [f64; 4] = [0.25, 0.5, 2.0, 4.0];

fn theta_label(t: f64) -> String {
    format!("{t}")
}

fn named(name: String, description: String, spec: ScenarioSpec) -> ScenarioSpec {
    ScenarioSpec { name, description, ..spec }
}

/// Sensitivity variants: `(group, description, modification)`.
fn variants() -> Vec<(&'static str, &'static str, fn(&mut ScenarioSpec))> {
    vec![
        ("true-edt", "correction with the true (delta, theta)", |s| s.use_true_edt = true),
        ("null-effect", "treatment effect beta = 0", |s| s.beta = 0.0),
        ("harmful-effect", "treatment effect beta = ln 2", |s| s.beta = 2f64.ln()),
        ("gamma-confounder", "continuous confounder, exp(X) ~ Gamma(4, 1/4)", |s| {
            s.confounder_kind = ConfounderKind::Gamma4Quarter
        }),
        ("opposite-confounding", "alpha2 = -0.5, beta0 = -6.5", |s| {
            s.alpha2 = -0.5;
            s.beta0 = -6.5;
        }),
        ("strong-confounding", "alpha1 = alpha2 = 1, c0 = -8.5, beta0 = -7.5", |s| {
            s.alpha1 = 1.0;
            s.alpha2 = 1.0;
            s.c0 = -8.5;
            s.beta0 = -7.5;
        }),
        ("flat-event-hazard", "kappa2 = 1.0, beta0 = -5.5", |s| {
            s.kappa2 = 1.0;
            s.beta0 = -5.5;
        }),
        ("steep-event-hazard", "kappa2 = 1.5, beta0 = -8.5", |s| {
            s.kappa2 = 1.5;
            s.beta0 = -8.5;
        }),
        ("flat-treatment-hazard", "kappa1 = 1.0, c0 = -6.5", |s| {
            s.kappa1 = 1.0;
            s.c0 = -6.5;
        }),
        ("steep-treatment-hazard", "kappa1 = 1.5, c0 = -9.5", |s| {
            s.kappa1 = 1.5;
            s.c0 = -9.5;
        }),
        (
            "variable-followup",
            "tau ~ uniform(150, 350); a narrower upper bound of 300 is also quoted for this variant",
            |s| {
                s.tau_min = 150.0;
                s.tau_max = 350.0;
            },
        ),
    ]
}

/// Every named scenario, in catalog order.
pub fn scenario_presets() -> Vec<Preset> {
    let base = ScenarioSpec::default();
    let mut out = Vec::new();

    for beta0 in [-6.5, -7.5] {
        for var in [0.0, 0.5, 1.0] {
            out.push(Preset {
                group: "heterogeneity",
                spec: named(
                    format!("hetero-b0{beta0}-var{var}"),
                    format!("beta0 = {beta0}, frailty variance {var}, all three estimators"),
                    ScenarioSpec { beta0, sigma_omega_sq: var, include_original: true, ..base.clone() },
                ),
            });
        }
    }

    out.push(Preset {
        group: "edt",
        spec: named(
            "edt-negative-control".into(),
            "events do not affect treatment (delta = 0, theta = 1)".into(),
            base.clone(),
        ),
    });
    for delta in [20.0, 30.0] {
        for theta in THETAS {
            out.push(Preset {
                group: "edt",
                spec: named(
                    format!("edt-d{delta}-theta{}", theta_label(theta)),
                    format!("delta = {delta}, theta = {theta}"),
                    ScenarioSpec { delta, theta, ..base.clone() },
                ),
            });
        }
    }
    for (early, late) in [(0.25, 0.5), (4.0, 2.0)] {
        out.push(Preset {
            group: "edt",
            spec: named(
                format!("edt-d30-theta{early}-{late}"),
                format!("delta = 30, theta = {early} for 15 days then {late} for 15 days"),
                ScenarioSpec { delta: 30.0, theta: early, theta_late: Some(late), ..base.clone() },
            ),
        });
    }

    for (group, description, modify) in variants() {
        for theta in THETAS {
            let mut spec = ScenarioSpec { delta: 30.0, theta, ..base.clone() };
            modify(&mut spec);
            out.push(Preset {
                group,
                spec: named(
                    format!("{group}-theta{}", theta_label(theta)),
                    format!("{description}; delta = 30, theta = {theta}"),
                    spec,
                ),
            });
        }
    }
    out
}

/// Looks up one scenario by name.
pub fn preset(name: &str) -> Result<ScenarioSpec> {
    scenario_presets()
        .into_iter()
        .find(|p| p.spec.name == name)
        .map(|p| p.spec)
        .ok_or_else(|| Error::Scenario(format!("unknown preset '{name}'")))
}

/// All scenarios of a group (or the single scenario of that name).
pub fn preset_group(name: &str) -> Result<Vec<ScenarioSpec>> {
    let group: Vec<ScenarioSpec> =
        scenario_presets().into_iter().filter(|p| p.group == name).map(|p| p.spec).collect();
    if !group.is_empty() {
        return Ok(group);
    }
    preset(name).map(|s| vec![s])
}
