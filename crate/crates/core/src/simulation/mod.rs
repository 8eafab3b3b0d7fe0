//! Simulation of matched cohorts with confounding, frailty and event-dependent
//! treatment, and Monte-Carlo evaluation of the PERR estimators.
//!
//! A [`ScenarioSpec`] holds every generation and analysis parameter and reads
//! from a flat TOML file. [`run_scenario`] evaluates its replicates in
//! parallel; replicate `r` always draws from stream `r` of a ChaCha generator
//! seeded with the scenario seed, so summaries do not depend on thread count.

mod generate;
mod presets;
mod run;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub use generate::{
    assemble_matched_cohort, draw_participant, draw_population, match_population, update_treatment_time, weibull_inverse,
    SimParticipant, MIN_PAIRS,
};
pub use presets::{preset, preset_group, scenario_presets, Preset};
pub use run::{
    replicate_cohort, run_replicate, run_scenario, run_scenario_with, summarize, write_replicates_csv, write_summary_csv, EstimatorSummary,
    Interval, OutputMeta, ReplicateCohort, ReplicateRecord, SimSummary,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConfounderKind {
    /// `X ~ Bernoulli(0.5)`.
    BinaryHalf,
    /// `exp(X) ~ Gamma(shape 4, scale 1/4)`.
    #[serde(alias = "gamma")]
    Gamma4Quarter,
}

/// Generation and analysis parameters of one scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioSpec {
    pub name: String,
    pub description: String,
    pub n_prematch: usize,
    pub kappa1: f64,
    pub kappa2: f64,
    pub c0: f64,
    pub beta0: f64,
    pub alpha1: f64,
    pub alpha2: f64,
    pub z_effect: f64,
    pub sigma_omega_sq: f64,
    pub epsilon_var: f64,
    /// Treatment-hazard multiplier after an event (first half of the window
    /// when `theta_late` is set).
    pub theta: f64,
    /// Multiplier for the second half of the window.
    pub theta_late: Option<f64>,
    pub delta: f64,
    /// Log hazard ratio of treatment on events.
    pub beta: f64,
    pub tau_min: f64,
    pub tau_max: f64,
    pub confounder_kind: ConfounderKind,
    pub replicates: usize,
    pub seed: u64,
    /// Number of sub-periods in the detection model.
    pub gaps: usize,
    pub gap_width: f64,
    /// Correct with the true `(delta, theta)` instead of estimates.
    pub use_true_edt: bool,
    /// Also run the two-model PERR with its pair bootstrap.
    pub include_original: bool,
    pub bootstrap_reps: usize,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        ScenarioSpec {
            name: "custom".into(),
            description: String::new(),
            n_prematch: 3000,
            kappa1: 1.25,
            kappa2: 1.25,
            c0: -8.0,
            beta0: -7.0,
            alpha1: 0.5,
            alpha2: 0.5,
            z_effect: 0.5,
            sigma_omega_sq: 0.0,
            epsilon_var: 0.1,
            theta: 1.0,
            theta_late: None,
            delta: 0.0,
            beta: 0.5f64.ln(),
            tau_min: 200.0,
            tau_max: 300.0,
            confounder_kind: ConfounderKind::BinaryHalf,
            replicates: 1000,
            seed: 1,
            gaps: 5,
            gap_width: 10.0,
            use_true_edt: false,
            include_original: false,
            bootstrap_reps: crate::perr::DEFAULT_BOOTSTRAP_REPS,
        }
    }
}

impl ScenarioSpec {
    pub fn true_hr(&self) -> f64 {
        self.beta.exp()
    }

    /// Whether events change the treatment hazard at all.
    pub fn has_edt(&self) -> bool {
        !self.edt_phases().is_empty()
    }

    /// `(theta, length)` windows following each event.
    pub fn edt_phases(&self) -> Vec<(f64, f64)> {
        if self.delta <= 0.0 {
            return Vec::new();
        }
        match self.theta_late {
            Some(late) => vec![(self.theta, self.delta / 2.0), (late, self.delta / 2.0)],
            None if self.theta == 1.0 => Vec::new(),
            None => vec![(self.theta, self.delta)],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Scenario(format!("{}: {msg}", self.name)));
        let finite = [
            self.kappa1, self.kappa2, self.c0, self.beta0, self.alpha1, self.alpha2, self.z_effect,
            self.sigma_omega_sq, self.epsilon_var, self.theta, self.delta, self.beta, self.tau_min, self.tau_max,
            self.gap_width,
        ];
        if finite.iter().any(|v| !v.is_finite()) {
            return bad("parameters must be finite".into());
        }
        if self.kappa1 <= 0.0 || self.kappa2 <= 0.0 {
            return bad("Weibull shapes must be positive".into());
        }
        if !(0.0 <= self.tau_min && self.tau_min < self.tau_max) {
            return bad(format!("need 0 <= tau_min < tau_max, got {}..{}", self.tau_min, self.tau_max));
        }
        if self.replicates == 0 {
            return bad("at least one replicate is required".into());
        }
        if self.n_prematch < 2 * generate::MIN_PAIRS {
            return bad(format!("n_prematch must be at least {}", 2 * generate::MIN_PAIRS));
        }
        if self.sigma_omega_sq < 0.0 || self.epsilon_var < 0.0 {
            return bad("variances must be non-negative".into());
        }
        if self.theta <= 0.0 || self.theta_late.is_some_and(|t| !(t > 0.0 && t.is_finite())) {
            return bad("theta must be positive".into());
        }
        if self.delta < 0.0 {
            return bad("delta must be non-negative".into());
        }
        if self.gaps == 0 || self.gap_width <= 0.0 {
            return bad("gaps and gap_width must be positive".into());
        }
        if self.use_true_edt && self.theta_late.is_some() {
            return bad("correction with the true window needs a single theta".into());
        }
        if self.include_original && self.bootstrap_reps < 2 {
            return bad("bootstrap_reps must be at least 2".into());
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<ScenarioSpec> {
        let spec: ScenarioSpec = toml::from_str(text).map_err(|e| Error::Scenario(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario specs always serialize")
    }
}
