//! Prior event rate ratio estimators.
//!
//! PERR HR = HR_post / HR_prior. Three routes are provided:
//!
//! - [`perr_original`]: separate Cox models for the prior and post periods on
//!   time-to-first-event rows, with a percentile bootstrap over matched pairs.
//! - [`perr_cox`]: one Cox model with a treatment-by-period interaction on
//!   the same rows; `exp(beta_3)` is the PERR HR.
//! - [`perr_ag`]: the interaction model fitted to all events with
//!   Andersen-Gill risk sets.
//!
//! The interaction models use robust clustered (per participant) standard errors.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::cohort::{build_all_event_rows, build_first_event_rows, CohortDataset, Participant, RowSet, Term};
use crate::survival::{fit, wald_interval, FitConfig, FitResult};
use crate::{Error, Result};

/// Default bootstrap replicate count for [`perr_original`].
pub const DEFAULT_BOOTSTRAP_REPS: usize = 200;
/// Attempts per bootstrap replicate before giving up.
const MAX_REDRAWS_PER_REPLICATE: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Original,
    CoxInteraction,
    Ag,
}

impl Method {
    pub fn label(self) -> &'static str {
        match self {
            Method::Original => "original",
            Method::CoxInteraction => "cox",
            Method::Ag => "ag",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "original" | "perr" => Ok(Method::Original),
            "cox" | "cox_interaction" => Ok(Method::CoxInteraction),
            "ag" => Ok(Method::Ag),
            other => Err(format!("unknown method '{other}' (expected original, cox or ag)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BootstrapDiagnostics {
    pub replicates: usize,
    pub redraws: usize,
    pub seed: u64,
    /// Redraws reached 10% of the replicate count.
    pub warning: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PerrEstimate {
    pub method: Method,
    pub hr_prior: f64,
    pub hr_post: f64,
    /// Always `hr_post / hr_prior`.
    pub perr_hr: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// Standard error of `ln(perr_hr)`.
    pub se_log: f64,
    pub prior_ci: (f64, f64),
    pub post_ci: (f64, f64),
    pub n_treated: usize,
    pub n_control: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bootstrap: Option<BootstrapDiagnostics>,
}

impl PerrEstimate {
    pub fn covers(&self, truth: f64) -> bool {
        self.ci_low <= truth && truth <= self.ci_high
    }
}

fn interaction_terms() -> [Term; 3] {
    [Term::main("trt"), Term::main("post"), Term::interaction(&["trt", "post"])]
}

/// Fits the treatment-by-period model to `rows` and reads off the PERR.
fn interaction_estimate(
    method: Method,
    rows: &RowSet,
    dataset: &CohortDataset,
    config: &FitConfig,
) -> Result<(PerrEstimate, FitResult)> {
    let stage = match method {
        Method::Ag => "andersen-gill interaction model",
        _ => "cox interaction model",
    };
    let data = rows.design(&interaction_terms())?;
    let f = fit(&data, config).and_then(FitResult::require_converged).map_err(Error::fit(stage))?;
    let (b1, b3) = (f.coefficients[0], f.coefficients[2]);
    let hr_prior = b1.exp();
    let hr_post = (b1 + b3).exp();
    let perr_hr = hr_post / hr_prior;
    let se_log = f.robust_se(2);
    let (ci_low, ci_high) = wald_interval(perr_hr.ln(), se_log, 0.95);
    let est = PerrEstimate {
        method,
        hr_prior,
        hr_post,
        perr_hr,
        ci_low,
        ci_high,
        se_log,
        prior_ci: wald_interval(b1, f.robust_se(0), 0.95),
        post_ci: wald_interval(b1 + b3, f.robust_se_of(&[1.0, 0.0, 1.0]), 0.95),
        n_treated: dataset.n_treated(),
        n_control: dataset.n_control(),
        bootstrap: None,
    };
    Ok((est, f))
}

/// Single Cox model with a treatment-by-period interaction on
/// time-to-first-event rows.
pub fn perr_cox(dataset: &CohortDataset) -> Result<PerrEstimate> {
    perr_cox_with(dataset, &FitConfig::default()).map(|(e, _)| e)
}

pub fn perr_cox_with(dataset: &CohortDataset, config: &FitConfig) -> Result<(PerrEstimate, FitResult)> {
    interaction_estimate(Method::CoxInteraction, &build_first_event_rows(dataset), dataset, config)
}

/// The interaction model on all events with Andersen-Gill risk sets.
pub fn perr_ag(dataset: &CohortDataset) -> Result<PerrEstimate> {
    perr_ag_with(dataset, &FitConfig::default()).map(|(e, _)| e)
}

pub fn perr_ag_with(dataset: &CohortDataset, config: &FitConfig) -> Result<(PerrEstimate, FitResult)> {
    interaction_estimate(Method::Ag, &build_all_event_rows(dataset), dataset, config)
}

/// Log HR_prior and log HR_post from two separate Cox models.
fn two_model_logs(dataset: &CohortDataset, config: &FitConfig) -> Result<(FitResult, FitResult)> {
    let rows = build_first_event_rows(dataset);
    let post_col = rows.column_index("post").expect("first-event rows carry post");
    let trt = [Term::main("trt")];
    let prior = rows.filter(|r| r.values[post_col] == 0.0).design(&trt)?;
    let post = rows.filter(|r| r.values[post_col] == 1.0).design(&trt)?;
    let prior = fit(&prior, config).and_then(FitResult::require_converged).map_err(Error::fit("prior-period cox model"))?;
    let post = fit(&post, config).and_then(FitResult::require_converged).map_err(Error::fit("post-period cox model"))?;
    Ok((prior, post))
}

/// `(ln HR_prior, ln HR_post)` from the two-model PERR, without a bootstrap.
pub fn perr_original_point(dataset: &CohortDataset) -> Result<(f64, f64)> {
    let (prior, post) = two_model_logs(dataset, &FitConfig::default())?;
    Ok((prior.coefficients[0], post.coefficients[0]))
}

/// Resamples matched pairs with replacement. Repeated pairs get distinct ids.
fn resample_pairs(dataset: &CohortDataset, pairs: &[(usize, usize)], rng: &mut impl Rng) -> CohortDataset {
    let mut people = Vec::with_capacity(pairs.len() * 2);
    for k in 0..pairs.len() {
        let (t, c) = pairs[rng.random_range(0..pairs.len())];
        for &i in &[t, c] {
            let p = &dataset.participants[i];
            people.push(Participant {
                id: format!("{}#{k}", p.id),
                pair_id: Some(format!("b{k}")),
                ..p.clone()
            });
        }
    }
    CohortDataset::new(people, true)
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Percentile interval and standard deviation of bootstrap log estimates.
fn summarize(mut logs: Vec<f64>) -> ((f64, f64), f64) {
    let n = logs.len() as f64;
    let mean = logs.iter().sum::<f64>() / n;
    let sd = (logs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0)).sqrt();
    logs.sort_by(f64::total_cmp);
    ((percentile(&logs, 0.025).exp(), percentile(&logs, 0.975).exp()), sd)
}

/// Two-model PERR with a percentile bootstrap over matched pairs.
///
/// Replicate `b` draws from its own ChaCha stream of `seed`, so results do
/// not depend on scheduling. A replicate whose resample leaves a period
/// without events (or otherwise fails to fit) is redrawn from the same stream.
pub fn perr_original(dataset: &CohortDataset, bootstrap_reps: usize, seed: u64) -> Result<PerrEstimate> {
    if bootstrap_reps < 2 {
        return Err(Error::InvalidArgument("at least two bootstrap replicates are required".into()));
    }
    let config = FitConfig::default();
    let pairs = dataset.pairs()?;
    let (prior, post) = two_model_logs(dataset, &config)?;
    let (lp, lq) = (prior.coefficients[0], post.coefficients[0]);

    let draws: Vec<std::result::Result<((f64, f64), usize), String>> = (0..bootstrap_reps)
        .into_par_iter()
        .map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(b as u64);
            for attempt in 0..MAX_REDRAWS_PER_REPLICATE {
                let sample = resample_pairs(dataset, &pairs, &mut rng);
                if let Ok((p, q)) = two_model_logs(&sample, &config) {
                    return Ok(((p.coefficients[0], q.coefficients[0]), attempt));
                }
            }
            Err(format!("replicate {b} failed {MAX_REDRAWS_PER_REPLICATE} consecutive draws"))
        })
        .collect();
    let mut prior_logs = Vec::with_capacity(bootstrap_reps);
    let mut post_logs = Vec::with_capacity(bootstrap_reps);
    let mut redraws = 0;
    for d in draws {
        let ((p, q), r) = d.map_err(Error::Bootstrap)?;
        prior_logs.push(p);
        post_logs.push(q);
        redraws += r;
    }
    let ratio_logs: Vec<f64> = prior_logs.iter().zip(&post_logs).map(|(p, q)| q - p).collect();
    let (prior_ci, _) = summarize(prior_logs);
    let (post_ci, _) = summarize(post_logs);
    let ((ci_low, ci_high), se_log) = summarize(ratio_logs);

    let hr_prior = lp.exp();
    let hr_post = lq.exp();
    Ok(PerrEstimate {
        method: Method::Original,
        hr_prior,
        hr_post,
        perr_hr: hr_post / hr_prior,
        ci_low,
        ci_high,
        se_log,
        prior_ci,
        post_ci,
        n_treated: dataset.n_treated(),
        n_control: dataset.n_control(),
        bootstrap: Some(BootstrapDiagnostics {
            replicates: bootstrap_reps,
            redraws,
            seed,
            warning: redraws * 10 >= bootstrap_reps,
        }),
    })
}

/// Runs one estimator by method.
pub fn estimate(method: Method, dataset: &CohortDataset, bootstrap_reps: usize, seed: u64) -> Result<PerrEstimate> {
    match method {
        Method::Original => perr_original(dataset, bootstrap_reps, seed),
        Method::CoxInteraction => perr_cox(dataset),
        Method::Ag => perr_ag(dataset),
    }
}
