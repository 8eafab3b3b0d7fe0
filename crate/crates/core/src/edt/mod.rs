//! Detection of and correction for event-dependent treatment (EDT).
//!
//! Prior-period events in the treated arm that raise (or lower) the chance of
//! starting treatment shortly afterwards bias the prior-period hazard ratio.
//! The prior period is cut into `M` sub-periods of equal width ending at the
//! index time, and an Andersen-Gill model with per-gap treatment interactions
//! tells how far back the elevation reaches. When the last gap is significant,
//! the index times of controls are shifted to mimic the same dependence and
//! PERR_AG is recomputed on the treated versus shifted-control data.

mod shift;

use std::collections::HashSet;
use std::io::Write;

use serde::Serialize;

use crate::cohort::{build_gap_rows, gap_column, CohortDataset, RowSet, Term};
use crate::perr::{perr_ag, PerrEstimate};
use crate::survival::{fit, wald_interval, FitConfig, FitError, FitResult};
use crate::{Error, Result};

pub use shift::{shift_index_time, shift_once};

/// Interaction estimate for one sub-period.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GapEstimate {
    pub gap: usize,
    /// Sub-period bounds relative to the index time, `(from, to]`, in days.
    pub from: f64,
    pub to: f64,
    pub events_treated: usize,
    pub events_control: usize,
    /// `None` when the interaction is inestimable in this sub-period.
    pub estimate: Option<f64>,
    pub se: Option<f64>,
    pub z: Option<f64>,
}

impl GapEstimate {
    pub fn significant(&self) -> bool {
        self.z.is_some_and(|z| z.abs() >= Z_975_ROUNDED)
    }
}

/// Detection threshold on |Z|.
pub const Z_975_ROUNDED: f64 = 1.96;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EdtProfile {
    pub gaps: usize,
    pub gap_width: f64,
    /// Entries for `m = 1..=M`; the last one ends at the index time.
    pub per_gap: Vec<GapEstimate>,
    /// Treated main effect (log hazard ratio in the reference period).
    pub b1: f64,
    pub b1_se: f64,
}

impl EdtProfile {
    pub fn significance(&self) -> Vec<bool> {
        self.per_gap.iter().map(GapEstimate::significant).collect()
    }

    /// Plot-ready profile: one row per sub-period.
    pub fn write_csv<W: Write>(&self, writer: W) -> std::result::Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["gap", "from_days", "to_days", "events_treated", "events_control", "estimate", "se", "z", "significant"])?;
        let opt = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |x| format!("{x:.6}"));
        for g in &self.per_gap {
            w.write_record([
                g.gap.to_string(),
                format!("{}", g.from),
                format!("{}", g.to),
                g.events_treated.to_string(),
                g.events_control.to_string(),
                opt(g.estimate),
                opt(g.se),
                opt(g.z),
                g.significant().to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EdtDecision {
    pub detected: bool,
    pub delta_hat: f64,
    pub theta_hat: Option<f64>,
    /// Robust standard error of `ln(theta_hat)`.
    pub theta_se_log: Option<f64>,
    pub theta_ci: Option<(f64, f64)>,
}

impl EdtDecision {
    pub fn not_detected() -> Self {
        EdtDecision { detected: false, delta_hat: 0.0, theta_hat: None, theta_se_log: None, theta_ci: None }
    }
}

fn gap_terms(gaps: usize) -> Vec<Term> {
    let mut terms = vec![Term::main("trt")];
    terms.extend((1..=gaps).map(|m| Term::main(&gap_column(m))));
    terms.extend((1..=gaps).map(|m| Term::interaction(&["trt", &gap_column(m)])));
    terms
}

/// Events per sub-period, split by arm.
fn gap_event_counts(rows: &RowSet, gaps: usize) -> Vec<(usize, usize)> {
    let mut counts = vec![(0, 0); gaps];
    for r in rows.rows().iter().filter(|r| r.event) {
        if let Some(m) = (1..=gaps).find(|&m| r.values[m] != 0.0) {
            if r.values[0] != 0.0 {
                counts[m - 1].0 += 1;
            } else {
                counts[m - 1].1 += 1;
            }
        }
    }
    counts
}

/// Fits the gap model, dropping terms that carry no information.
///
/// A gap interaction is dropped when either arm has no events in the gap, the
/// gap main effect when neither has. Any term whose coefficient diverges is
/// dropped as well and the model refitted.
fn fit_gap_model(rows: &RowSet, gaps: usize, config: &FitConfig) -> Result<FitResult> {
    let counts = gap_event_counts(rows, gaps);
    let mut terms = vec![Term::main("trt")];
    for (m, &(t, c)) in (1..=gaps).zip(&counts) {
        if t + c > 0 {
            terms.push(Term::main(&gap_column(m)));
        }
    }
    for (m, &(t, c)) in (1..=gaps).zip(&counts) {
        if t > 0 && c > 0 {
            terms.push(Term::interaction(&["trt", &gap_column(m)]));
        }
    }
    loop {
        let data = rows.design(&terms)?;
        match fit(&data, config).and_then(FitResult::require_converged) {
            Ok(f) => return Ok(f),
            Err(FitError::MonotoneLikelihood { covariate, .. }) if covariate != "trt" => {
                terms.retain(|t| t.name() != covariate);
            }
            Err(e) => return Err(Error::Fit { stage: "multi-gap model", source: e }),
        }
    }
}

/// Andersen-Gill fit of the multi-gap model on prior-period events.
pub fn fit_multi_gap(dataset: &CohortDataset, gaps: usize, gap_width: f64) -> Result<EdtProfile> {
    let rows = build_gap_rows(dataset, gaps, gap_width)?;
    let f = fit_gap_model(&rows, gaps, &FitConfig::default())?;
    let counts = gap_event_counts(&rows, gaps);
    let per_gap = (1..=gaps)
        .map(|m| {
            let coef = f.index_of(&format!("trt:{}", gap_column(m)));
            let estimate = coef.map(|i| f.coefficients[i]);
            let se = coef.map(|i| f.robust_se(i));
            let z = estimate.zip(se).and_then(|(b, s)| (s > 0.0).then_some(b / s));
            GapEstimate {
                gap: m,
                from: -(((gaps - m + 1) as f64) * gap_width),
                to: 0.0 - ((gaps - m) as f64) * gap_width,
                events_treated: counts[m - 1].0,
                events_control: counts[m - 1].1,
                estimate,
                se,
                z,
            }
        })
        .collect();
    let b1 = f.index_of("trt").expect("trt is never dropped");
    Ok(EdtProfile { gaps, gap_width, per_gap, b1: f.coefficients[b1], b1_se: f.robust_se(b1) })
}

/// Detection fires when the last sub-period is significant; the window length
/// is the width of the unbroken significant run ending there.
pub fn decide_delta(profile: &EdtProfile) -> (bool, f64) {
    let run = profile.significance().iter().rev().take_while(|&&s| s).count();
    (run > 0, run as f64 * profile.gap_width)
}

/// Single-gap model over `(B - delta_hat, B]`; `theta_hat = exp(b3)`.
pub fn estimate_theta(dataset: &CohortDataset, delta_hat: f64) -> Result<EdtDecision> {
    if !(delta_hat > 0.0) {
        return Err(Error::InvalidArgument(format!("delta_hat must be positive, got {delta_hat}")));
    }
    let rows = build_gap_rows(dataset, 1, delta_hat)?;
    let data = rows.design(&gap_terms(1))?;
    let f = fit(&data, &FitConfig::default())
        .and_then(FitResult::require_converged)
        .map_err(Error::fit("single-gap model"))?;
    let b3 = f.coefficients[2];
    let se = f.robust_se(2);
    Ok(EdtDecision {
        detected: true,
        delta_hat,
        theta_hat: Some(b3.exp()),
        theta_se_log: Some(se),
        theta_ci: Some(wald_interval(b3, se, 0.95)),
    })
}

/// Result of [`build_control_star`].
#[derive(Debug, Clone)]
pub struct ControlStar {
    pub dataset: CohortDataset,
    /// Pair ids excluded because the shifted index time left no post period.
    pub dropped_pairs: Vec<String>,
}

/// Shifts every control's index time by `(theta, delta)`; treated participants
/// are untouched. Controls whose shifted index time reaches their end of
/// follow-up are dropped together with their matched treated participant.
pub fn build_control_star(dataset: &CohortDataset, theta: f64, delta: f64) -> Result<ControlStar> {
    if !(theta > 0.0 && theta.is_finite()) || !(delta >= 0.0 && delta.is_finite()) {
        return Err(Error::InvalidArgument(format!("invalid shift theta={theta}, delta={delta}")));
    }
    let mut participants = dataset.participants.clone();
    let mut dropped_pairs = HashSet::new();
    let mut dropped_ids = HashSet::new();
    for p in participants.iter_mut().filter(|p| !p.is_treated()) {
        let b = shift_index_time(p.index_time, &p.event_times, theta, delta);
        if b >= p.end_time {
            match &p.pair_id {
                Some(pair) => {
                    dropped_pairs.insert(pair.clone());
                }
                None => {
                    dropped_ids.insert(p.id.clone());
                }
            }
        }
        p.index_time = b;
    }
    participants.retain(|p| {
        !dropped_ids.contains(&p.id) && !p.pair_id.as_ref().is_some_and(|pair| dropped_pairs.contains(pair))
    });
    if participants.iter().all(|p| !p.is_treated()) || participants.iter().all(|p| p.is_treated()) {
        return Err(Error::AllPairsDropped);
    }
    let mut dropped_pairs: Vec<String> = dropped_pairs.into_iter().collect();
    dropped_pairs.sort();
    Ok(ControlStar { dataset: CohortDataset::new(participants, dataset.matched), dropped_pairs })
}

/// Full detection and correction pipeline.
#[derive(Debug, Clone, Serialize)]
pub struct EdtAnalysis {
    pub profile: EdtProfile,
    pub decision: EdtDecision,
    pub uncorrected: PerrEstimate,
    /// Equal to `uncorrected` when nothing was detected.
    pub corrected: PerrEstimate,
    pub dropped_pairs: Vec<String>,
}

pub fn corrected_perr_ag(dataset: &CohortDataset, gaps: usize, gap_width: f64) -> Result<EdtAnalysis> {
    let profile = fit_multi_gap(dataset, gaps, gap_width)?;
    let uncorrected = perr_ag(dataset)?;
    let (detected, delta_hat) = decide_delta(&profile);
    if !detected {
        return Ok(EdtAnalysis {
            profile,
            decision: EdtDecision::not_detected(),
            corrected: uncorrected.clone(),
            uncorrected,
            dropped_pairs: Vec::new(),
        });
    }
    let decision = estimate_theta(dataset, delta_hat)?;
    let theta = decision.theta_hat.expect("set on detection");
    let star = build_control_star(dataset, theta, delta_hat)?;
    let corrected = perr_ag(&star.dataset)?;
    Ok(EdtAnalysis { profile, decision, uncorrected, corrected, dropped_pairs: star.dropped_pairs })
}

/// PERR_AG after shifting controls by known `(theta, delta)`.
pub fn perr_ag_with_known_edt(dataset: &CohortDataset, theta: f64, delta: f64) -> Result<PerrEstimate> {
    perr_ag(&build_control_star(dataset, theta, delta)?.dataset)
}
