//! Replicate evaluation and Monte-Carlo summaries.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::{assemble_matched_cohort, draw_population, match_population, ScenarioSpec};
use crate::cohort::{CohortDataset, MatchReport};
use crate::edt::{corrected_perr_ag, perr_ag_with_known_edt};
use crate::perr::{perr_cox, perr_original, PerrEstimate};
use crate::Result;

/// Attempts per replicate before it is reported as failed.
const MAX_ATTEMPTS: usize = 25;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Interval {
    pub estimate: f64,
    pub low: f64,
    pub high: f64,
}

impl Interval {
    fn of(e: &PerrEstimate) -> Self {
        Interval { estimate: e.perr_hr, low: e.ci_low, high: e.ci_high }
    }

    pub fn covers(&self, truth: f64) -> bool {
        self.low <= truth && truth <= self.high
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplicateRecord {
    pub replicate: usize,
    /// Cohorts discarded before this one (too few pairs or a failed fit).
    pub redraws: usize,
    /// Set when every attempt failed; the estimates are then empty.
    pub failure: Option<String>,
    pub n_pairs: usize,
    pub original: Option<Interval>,
    pub cox: Option<Interval>,
    pub ag: Option<Interval>,
    pub corrected: Option<Interval>,
    pub detected: bool,
    pub delta_hat: f64,
    pub theta_hat: Option<f64>,
    pub dropped_pairs: usize,
}

impl ReplicateRecord {
    fn failed(replicate: usize, redraws: usize, failure: String) -> Self {
        ReplicateRecord {
            replicate,
            redraws,
            failure: Some(failure),
            n_pairs: 0,
            original: None,
            cox: None,
            ag: None,
            corrected: None,
            detected: false,
            delta_hat: 0.0,
            theta_hat: None,
            dropped_pairs: 0,
        }
    }
}

fn analyse(spec: &ScenarioSpec, ds: &CohortDataset, replicate: usize, redraws: usize, boot_seed: u64) -> Result<ReplicateRecord> {
    let cox = perr_cox(ds)?;
    let original = if spec.include_original { Some(perr_original(ds, spec.bootstrap_reps, boot_seed)?) } else { None };
    let analysis = corrected_perr_ag(ds, spec.gaps, spec.gap_width)?;
    let (corrected, dropped_pairs) = if spec.use_true_edt {
        (perr_ag_with_known_edt(ds, spec.theta, spec.delta)?, 0)
    } else {
        (analysis.corrected.clone(), analysis.dropped_pairs.len())
    };
    Ok(ReplicateRecord {
        replicate,
        redraws,
        failure: None,
        n_pairs: ds.len() / 2,
        original: original.as_ref().map(Interval::of),
        cox: Some(Interval::of(&cox)),
        ag: Some(Interval::of(&analysis.uncorrected)),
        corrected: Some(Interval::of(&corrected)),
        detected: analysis.decision.detected,
        delta_hat: analysis.decision.delta_hat,
        theta_hat: analysis.decision.theta_hat,
        dropped_pairs,
    })
}

/// Evaluates replicate `replicate` of `spec` on its own random stream.
pub fn run_replicate(spec: &ScenarioSpec, replicate: usize) -> ReplicateRecord {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(replicate as u64);
    let mut last_error = String::new();
    for attempt in 0..MAX_ATTEMPTS {
        let boot_seed: u64 = rng.random();
        let outcome = assemble_matched_cohort(spec, &mut rng)
            .and_then(|(ds, _)| analyse(spec, &ds, replicate, attempt, boot_seed));
        match outcome {
            Ok(record) => return record,
            Err(e) => last_error = e.to_string(),
        }
    }
    ReplicateRecord::failed(replicate, MAX_ATTEMPTS, last_error)
}

/// The data behind one replicate: the drawn population and its matched cohort.
#[derive(Debug, Clone)]
pub struct ReplicateCohort {
    /// Treated participants followed by the control pool, unmatched.
    pub population: CohortDataset,
    pub matched: CohortDataset,
    pub report: MatchReport,
}

/// Redraws the first cohort that assembles on replicate `replicate`'s stream.
///
/// Consumes the stream exactly as [`run_replicate`] does, so when that
/// replicate needed no redraws the cohort is the one it analysed.
pub fn replicate_cohort(spec: &ScenarioSpec, replicate: usize) -> Result<ReplicateCohort> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(replicate as u64);
    let mut last_error = None;
    for _ in 0..MAX_ATTEMPTS {
        let _boot_seed: u64 = rng.random();
        let (treated, pool) = draw_population(spec, &mut rng);
        match match_population(&treated, &pool) {
            Ok((matched, report)) => {
                let population = CohortDataset::new(treated.into_iter().chain(pool).collect(), false);
                return Ok(ReplicateCohort { population, matched, report });
            }
            Err(e) => last_error = Some(e),
        }
    }
    Err(last_error.expect("at least one attempt"))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimatorSummary {
    pub estimator: String,
    pub n: usize,
    pub mean: f64,
    /// Percentage of 95% intervals covering the true hazard ratio.
    pub cp: f64,
    /// Root mean squared error on the hazard-ratio scale.
    pub rmse: f64,
}

impl EstimatorSummary {
    fn of(name: &str, intervals: &[Interval], truth: f64) -> Option<Self> {
        if intervals.is_empty() {
            return None;
        }
        let n = intervals.len() as f64;
        Some(EstimatorSummary {
            estimator: name.into(),
            n: intervals.len(),
            mean: intervals.iter().map(|i| i.estimate).sum::<f64>() / n,
            cp: 100.0 * intervals.iter().filter(|i| i.covers(truth)).count() as f64 / n,
            rmse: (intervals.iter().map(|i| (i.estimate - truth).powi(2)).sum::<f64>() / n).sqrt(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimSummary {
    pub scenario: String,
    pub seed: u64,
    pub replicates: usize,
    pub valid: usize,
    pub redraws: usize,
    pub failures: usize,
    pub true_hr: f64,
    pub true_delta: f64,
    pub mean_pairs: f64,
    pub estimators: Vec<EstimatorSummary>,
    pub detection_rate: f64,
    /// Percentage with `delta_hat == delta`.
    pub p_delta_exact: f64,
    /// Percentage with `|delta_hat - delta| <= gap_width`.
    pub p_delta_within: f64,
    /// Mean `theta_hat` among detections with `delta_hat == delta`.
    pub mean_theta_exact: Option<f64>,
    pub mean_theta_within: Option<f64>,
    /// Mean `theta_hat` over all detections.
    pub mean_theta: Option<f64>,
}

impl SimSummary {
    pub fn estimator(&self, name: &str) -> Option<&EstimatorSummary> {
        self.estimators.iter().find(|e| e.estimator == name)
    }
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| s / n as f64)
}

/// Aggregates replicate records in replicate order.
pub fn summarize(spec: &ScenarioSpec, records: &[ReplicateRecord]) -> SimSummary {
    let valid: Vec<&ReplicateRecord> = records.iter().filter(|r| r.failure.is_none()).collect();
    let truth = spec.true_hr();
    let collect = |f: fn(&ReplicateRecord) -> Option<Interval>| valid.iter().filter_map(|r| f(r)).collect::<Vec<_>>();
    let estimators = [
        ("original", collect(|r| r.original)),
        ("cox", collect(|r| r.cox)),
        ("ag", collect(|r| r.ag)),
        ("ag_corrected", collect(|r| r.corrected)),
    ]
    .iter()
    .filter_map(|(name, iv)| EstimatorSummary::of(name, iv, truth))
    .collect();

    let n = valid.len().max(1) as f64;
    let true_delta = if spec.has_edt() { spec.delta } else { 0.0 };
    let exact = |r: &&&ReplicateRecord| (r.delta_hat - true_delta).abs() < 1e-9;
    let within = |r: &&&ReplicateRecord| (r.delta_hat - true_delta).abs() <= spec.gap_width + 1e-9;
    let pct = |k: usize| 100.0 * k as f64 / n;
    SimSummary {
        scenario: spec.name.clone(),
        seed: spec.seed,
        replicates: records.len(),
        valid: valid.len(),
        redraws: records.iter().map(|r| r.redraws).sum(),
        failures: records.len() - valid.len(),
        true_hr: truth,
        true_delta,
        mean_pairs: mean(valid.iter().map(|r| r.n_pairs as f64)).unwrap_or(0.0),
        estimators,
        detection_rate: pct(valid.iter().filter(|r| r.detected).count()),
        p_delta_exact: pct(valid.iter().filter(exact).count()),
        p_delta_within: pct(valid.iter().filter(within).count()),
        mean_theta_exact: mean(valid.iter().filter(exact).filter_map(|r| r.theta_hat)),
        mean_theta_within: mean(valid.iter().filter(within).filter_map(|r| r.theta_hat)),
        mean_theta: mean(valid.iter().filter_map(|r| r.theta_hat)),
    }
}

/// Runs every replicate of a scenario in parallel.
pub fn run_scenario(spec: &ScenarioSpec) -> Result<(SimSummary, Vec<ReplicateRecord>)> {
    run_scenario_with(spec, spec.replicates)
}

/// Runs the first `replicates` replicates of a scenario.
pub fn run_scenario_with(spec: &ScenarioSpec, replicates: usize) -> Result<(SimSummary, Vec<ReplicateRecord>)> {
    spec.validate()?;
    let records: Vec<ReplicateRecord> = (0..replicates).into_par_iter().map(|r| run_replicate(spec, r)).collect();
    Ok((summarize(spec, &records), records))
}

/// Provenance columns appended to every output row.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OutputMeta {
    pub config_hash: String,
    pub tool_version: String,
}

fn num(v: f64) -> String {
    format!("{v}")
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".into(), num)
}

/// One row per scenario with the estimator metrics side by side.
pub fn write_summary_csv<W: Write>(writer: W, summaries: &[SimSummary], meta: &OutputMeta) -> std::result::Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<String> = ["scenario", "replicates", "valid", "redraws", "failures", "true_hr", "mean_pairs"]
        .map(String::from)
        .to_vec();
    for est in ["original", "cox", "ag", "ag_corrected"] {
        for m in ["mean", "cp", "rmse"] {
            header.push(format!("{est}_{m}"));
        }
    }
    header.extend(
        [
            "true_delta", "detection_rate", "p_delta_exact", "p_delta_within", "mean_theta_exact",
            "mean_theta_within", "mean_theta", "seed", "config_hash", "tool_version",
        ]
        .map(String::from),
    );
    w.write_record(&header)?;
    for s in summaries {
        let mut row = vec![
            s.scenario.clone(),
            s.replicates.to_string(),
            s.valid.to_string(),
            s.redraws.to_string(),
            s.failures.to_string(),
            num(s.true_hr),
            num(s.mean_pairs),
        ];
        for est in ["original", "cox", "ag", "ag_corrected"] {
            let e = s.estimator(est);
            row.push(opt(e.map(|e| e.mean)));
            row.push(opt(e.map(|e| e.cp)));
            row.push(opt(e.map(|e| e.rmse)));
        }
        row.extend([
            num(s.true_delta),
            num(s.detection_rate),
            num(s.p_delta_exact),
            num(s.p_delta_within),
            opt(s.mean_theta_exact),
            opt(s.mean_theta_within),
            opt(s.mean_theta),
            s.seed.to_string(),
            meta.config_hash.clone(),
            meta.tool_version.clone(),
        ]);
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// One row per replicate.
pub fn write_replicates_csv<W: Write>(
    writer: W,
    scenario: &ScenarioSpec,
    records: &[ReplicateRecord],
    meta: &OutputMeta,
) -> std::result::Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<String> = ["scenario", "replicate", "redraws", "failure", "n_pairs"].map(String::from).to_vec();
    for est in ["original", "cox", "ag", "ag_corrected"] {
        for m in ["hr", "low", "high"] {
            header.push(format!("{est}_{m}"));
        }
    }
    header.extend(
        ["detected", "delta_hat", "theta_hat", "dropped_pairs", "seed", "config_hash", "tool_version"].map(String::from),
    );
    w.write_record(&header)?;
    for r in records {
        let mut row = vec![
            scenario.name.clone(),
            r.replicate.to_string(),
            r.redraws.to_string(),
            r.failure.clone().unwrap_or_default(),
            r.n_pairs.to_string(),
        ];
        for iv in [r.original, r.cox, r.ag, r.corrected] {
            row.push(opt(iv.map(|i| i.estimate)));
            row.push(opt(iv.map(|i| i.low)));
            row.push(opt(iv.map(|i| i.high)));
        }
        row.extend([
            r.detected.to_string(),
            num(r.delta_hat),
            opt(r.theta_hat),
            r.dropped_pairs.to_string(),
            scenario.seed.to_string(),
            meta.config_hash.clone(),
            meta.tool_version.clone(),
        ]);
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(name: &str) -> ScenarioSpec {
        ScenarioSpec { name: name.into(), n_prematch: 1200, replicates: 6, seed: 42, ..ScenarioSpec::default() }
    }

    #[test]
    fn deterministic_across_thread_counts() {
        let spec = ScenarioSpec { theta: 4.0, delta: 20.0, ..small("det") };
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let four = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        let a = one.install(|| run_scenario(&spec)).unwrap();
        let b = four.install(|| run_scenario(&spec)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.0.replicates, 6);
        let meta = OutputMeta { config_hash: "abc".into(), tool_version: "0".into() };
        let (mut x, mut y) = (Vec::new(), Vec::new());
        write_summary_csv(&mut x, std::slice::from_ref(&a.0), &meta).unwrap();
        write_summary_csv(&mut y, &[b.0], &meta).unwrap();
        assert_eq!(x, y);
        let mut z = Vec::new();
        write_replicates_csv(&mut z, &spec, &a.1, &meta).unwrap();
        assert_eq!(String::from_utf8(z).unwrap().lines().count(), 7);
    }

    #[test]
    fn replicate_streams_differ() {
        let spec = small("streams");
        let a = run_replicate(&spec, 0);
        let b = run_replicate(&spec, 1);
        assert_ne!(a.ag, b.ag);
        assert_eq!(run_replicate(&spec, 1), b);
    }

    #[test]
    fn exported_cohort_is_the_analysed_one() {
        let spec = small("export");
        let record = run_replicate(&spec, 3);
        assert_eq!(record.redraws, 0);
        let cohort = replicate_cohort(&spec, 3).unwrap();
        assert_eq!(cohort.matched.len() / 2, record.n_pairs);
        assert_eq!(cohort.population.len(), spec.n_prematch);
        let ag = crate::perr::perr_ag(&cohort.matched).unwrap();
        assert_eq!(Some(Interval::of(&ag)), record.ag);
    }

    #[test]
    fn summary_metrics_by_hand() {
        let spec = ScenarioSpec { delta: 20.0, theta: 4.0, ..small("hand") };
        let rec = |ag: f64, lo: f64, hi: f64, delta_hat: f64, theta: Option<f64>| ReplicateRecord {
            replicate: 0,
            redraws: 1,
            failure: None,
            n_pairs: 100,
            original: None,
            cox: None,
            ag: Some(Interval { estimate: ag, low: lo, high: hi }),
            corrected: None,
            detected: delta_hat > 0.0,
            delta_hat,
            theta_hat: theta,
            dropped_pairs: 0,
        };
        let records = vec![
            rec(0.4, 0.3, 0.45, 20.0, Some(3.0)),
            rec(0.6, 0.45, 0.8, 10.0, Some(5.0)),
            rec(0.5, 0.4, 0.6, 0.0, None),
            ReplicateRecord::failed(3, 25, "x".into()),
        ];
        let s = summarize(&spec, &records);
        assert_eq!((s.replicates, s.valid, s.failures, s.redraws), (4, 3, 1, 28));
        let ag = s.estimator("ag").unwrap();
        assert!((ag.mean - 0.5).abs() < 1e-12);
        assert!((ag.cp - 200.0 / 3.0).abs() < 1e-9);
        assert!((ag.rmse - (0.02f64 / 3.0).sqrt()).abs() < 1e-12);
        assert!(s.estimator("cox").is_none());
        assert!((s.p_delta_exact - 100.0 / 3.0).abs() < 1e-9);
        assert!((s.p_delta_within - 200.0 / 3.0).abs() < 1e-9);
        assert_eq!(s.mean_theta_exact, Some(3.0));
        assert_eq!(s.mean_theta_within, Some(4.0));
        assert_eq!(s.mean_theta, Some(4.0));
    }
}
