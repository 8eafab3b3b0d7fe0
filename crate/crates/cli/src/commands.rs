//! Command implementations.

use std::collections::BTreeSet;
use std::io::Write;
use std::time::Instant;

use anyhow::{anyhow, Context, Result};
use serde::Serialize;

use perr_core::cohort::io::write_cohort;
use perr_core::cohort::{
    incidence_table, match_controls_with, restrict_window, AnalysisWindow, CohortDataset, ControlChoice, Group,
    IncidenceTable, MatchReport, Participant, WindowOutcome,
};
use perr_core::edt::{corrected_perr_ag, EdtDecision};
use perr_core::perr::{estimate, Method, PerrEstimate};
use perr_core::simulation::{
    preset_group, replicate_cohort, run_scenario_with, scenario_presets, write_replicates_csv, write_summary_csv,
    ScenarioSpec, SimSummary,
};

use crate::output::{file_digest, OutDir, Provenance};
use crate::{Choice, EdtArgs, Format, MatchArgs, PerrArgs, PresetsArgs, SimulateArgs, UsageError, WindowArgs};

fn usage(msg: impl Into<String>) -> anyhow::Error {
    anyhow::Error::new(UsageError(msg.into()))
}

fn analysis_window(args: &WindowArgs) -> Result<AnalysisWindow> {
    AnalysisWindow::new(args.prior_days, args.post_days).map_err(|e| usage(e.to_string()))
}

#[derive(Serialize)]
struct WindowReport {
    prior_days: f64,
    post_days: f64,
    participants_in: usize,
    participants_kept: usize,
    pairs_kept: usize,
    /// Participants with an empty prior period inside the window.
    empty_prior: Vec<String>,
    /// Everyone removed, partners included.
    excluded: Vec<String>,
}

fn windowed(dataset: &CohortDataset, args: &WindowArgs) -> Result<(WindowOutcome, WindowReport)> {
    let window = analysis_window(args)?;
    let outcome = restrict_window(dataset, &window);
    if outcome.dataset.is_empty() {
        return Err(anyhow!(perr_core::cohort::CohortError::Empty))
            .context("no participant has follow-up on both sides of the index time");
    }
    let report = WindowReport {
        prior_days: window.prior_days(),
        post_days: window.post_days(),
        participants_in: dataset.len(),
        participants_kept: outcome.dataset.len(),
        pairs_kept: outcome.dataset.len() / 2,
        empty_prior: outcome.empty_prior.clone(),
        excluded: outcome.excluded.clone(),
    };
    Ok((outcome, report))
}

pub fn run_match(args: &MatchArgs) -> Result<()> {
    let population = args.input.read(false)?;
    let (treated, pool): (Vec<Participant>, Vec<Participant>) = population
        .participants
        .into_iter()
        .map(|p| Participant { pair_id: None, ..p })
        .partition(|p| p.group == Group::Treated);
    let choice = match args.choice {
        Choice::PoolOrder => ControlChoice::PoolOrder,
        Choice::ClosestEnd => ControlChoice::ClosestEnd,
    };
    let outcome = match_controls_with(&treated, &pool, &args.keys, choice)?;

    #[derive(Serialize)]
    struct Config<'a> {
        keys: &'a [String],
        choice: Choice,
    }
    let prov = Provenance::new(
        args.common.seed,
        "match",
        &Config { keys: &args.keys, choice: args.choice },
        &args.input.digests()?,
    );
    let out = OutDir::create(&args.common.out)?;
    write_cohort(&outcome.dataset, out.root(), &prov.preamble(), Some(args.keys.clone()))?;

    #[derive(Serialize)]
    struct Report<'a> {
        #[serde(flatten)]
        provenance: &'a Provenance,
        keys: &'a [String],
        choice: Choice,
        #[serde(flatten)]
        report: &'a MatchReport,
    }
    let report = &outcome.report;
    match args.common.format {
        Format::Json => out.json(
            "match_report.json",
            &Report { provenance: &prov, keys: &args.keys, choice: args.choice, report },
        )?,
        Format::Csv => {
            let mut w = prov.write_preamble(out.file("match_report.csv")?)?;
            writeln!(
                w,
                "# treated_offered={} pool_offered={} pairs={} unmatched_treated={} unused_controls={}",
                report.treated_offered,
                report.pool_offered,
                report.pairs,
                report.unmatched_treated.len(),
                report.unused_controls
            )?;
            let mut csv = csv::Writer::from_writer(w);
            csv.write_record([args.keys.join("|").as_str(), "pairs"])?;
            for (key, n) in &report.key_distribution {
                csv.write_record([key.as_str(), &n.to_string()])?;
            }
            csv.flush()?;
        }
    }
    eprintln!(
        "matched {} of {} treated participants ({} controls offered)",
        report.pairs, report.treated_offered, report.pool_offered
    );
    Ok(())
}

#[derive(Serialize)]
struct IncidenceRow {
    group: Group,
    prior: String,
    post: String,
}

#[derive(Serialize)]
struct IncidenceReport {
    /// Rate per person-year with `(events/person-years)`, by group and period.
    formatted: Vec<IncidenceRow>,
    cells: IncidenceTable,
}

impl IncidenceReport {
    fn of(dataset: &CohortDataset) -> Self {
        let cells = incidence_table(dataset);
        let formatted = [Group::Treated, Group::Control]
            .into_iter()
            .map(|g| IncidenceRow {
                group: g,
                prior: cells.cell(g, false).to_string(),
                post: cells.cell(g, true).to_string(),
            })
            .collect();
        IncidenceReport { formatted, cells }
    }

    fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut csv = csv::Writer::from_writer(w);
        csv.write_record(["group", "period", "events", "person_years", "rate", "formatted"])?;
        for g in [Group::Treated, Group::Control] {
            for (period, post) in [("prior", false), ("post", true)] {
                let c = self.cells.cell(g, post);
                csv.write_record([
                    g.to_string(),
                    period.to_string(),
                    c.events.to_string(),
                    format!("{:.6}", c.person_years),
                    format!("{:.6}", c.rate()),
                    c.to_string(),
                ])?;
            }
        }
        csv.flush()?;
        Ok(())
    }
}

#[derive(Serialize)]
struct MethodOutcome {
    method: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    estimate: Option<PerrEstimate>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

fn estimate_columns() -> Vec<&'static str> {
    vec![
        "method", "status", "hr_prior", "hr_post", "perr_hr", "ci_low", "ci_high", "se_log", "prior_ci_low",
        "prior_ci_high", "post_ci_low", "post_ci_high", "n_treated", "n_control", "error", "seed", "config_hash",
        "tool_version",
    ]
}

fn estimate_row(label: &str, est: Option<&PerrEstimate>, error: Option<&str>, prov: &Provenance) -> Vec<String> {
    let f = |v: f64| format!("{v:.6}");
    let mut row = vec![label.to_string()];
    match est {
        Some(e) => {
            row.push("ok".into());
            row.extend(
                [e.hr_prior, e.hr_post, e.perr_hr, e.ci_low, e.ci_high, e.se_log, e.prior_ci.0, e.prior_ci.1]
                    .into_iter()
                    .chain([e.post_ci.0, e.post_ci.1])
                    .map(f),
            );
            row.push(e.n_treated.to_string());
            row.push(e.n_control.to_string());
            row.push(String::new());
        }
        None => {
            row.push("failed".into());
            row.extend(std::iter::repeat_n(String::from("NA"), 12));
            row.push(error.unwrap_or_default().to_string());
        }
    }
    row.extend([prov.seed.to_string(), prov.config_hash.clone(), prov.tool_version.clone()]);
    row
}

pub fn run_perr(args: &PerrArgs) -> Result<()> {
    let methods: Vec<Method> = {
        let mut seen = BTreeSet::new();
        args.methods.iter().copied().filter(|m| seen.insert(m.label())).collect()
    };
    if methods.contains(&Method::Original) && args.bootstrap < 2 {
        return Err(usage("--bootstrap must be at least 2 for the original method"));
    }
    let dataset = args.input.read(true)?;
    let (outcome, window) = windowed(&dataset, &args.window)?;
    let ds = &outcome.dataset;

    #[derive(Serialize)]
    struct Config<'a> {
        prior_days: f64,
        post_days: f64,
        methods: Vec<&'a str>,
        bootstrap: usize,
    }
    let prov = Provenance::new(
        args.common.seed,
        "perr",
        &Config {
            prior_days: args.window.prior_days,
            post_days: args.window.post_days,
            methods: methods.iter().map(|m| m.label()).collect(),
            bootstrap: args.bootstrap,
        },
        &args.input.digests()?,
    );

    let mut results = Vec::new();
    let mut last_error = None;
    for &method in &methods {
        let started = Instant::now();
        match estimate(method, ds, args.bootstrap, args.common.seed) {
            Ok(e) => {
                eprintln!("{}: PERR {:.4} in {:.1}s", method.label(), e.perr_hr, started.elapsed().as_secs_f64());
                results.push(MethodOutcome { method: method.label(), estimate: Some(e), error: None });
            }
            Err(err) => {
                eprintln!("{}: failed: {err}", method.label());
                results.push(MethodOutcome { method: method.label(), estimate: None, error: Some(err.to_string()) });
                last_error = Some(err);
            }
        }
    }

    let incidence = IncidenceReport::of(ds);
    let out = OutDir::create(&args.common.out)?;
    match args.common.format {
        Format::Json => {
            #[derive(Serialize)]
            struct Report<'a> {
                #[serde(flatten)]
                provenance: &'a Provenance,
                window: &'a WindowReport,
                incidence: &'a IncidenceReport,
                estimates: &'a [MethodOutcome],
            }
            out.json(
                "perr_report.json",
                &Report { provenance: &prov, window: &window, incidence: &incidence, estimates: &results },
            )?;
        }
        Format::Csv => {
            let mut csv = csv::Writer::from_writer(out.file("perr_estimates.csv")?);
            csv.write_record(estimate_columns())?;
            for r in &results {
                csv.write_record(estimate_row(r.method, r.estimate.as_ref(), r.error.as_deref(), &prov))?;
            }
            csv.flush()?;
            incidence.write_csv(prov.write_preamble(out.file("incidence.csv")?)?)?;
        }
    }

    match last_error {
        Some(err) if results.iter().all(|r| r.estimate.is_none()) => Err(anyhow!(err).context("every method failed")),
        _ => Ok(()),
    }
}

pub fn run_edt(args: &EdtArgs) -> Result<()> {
    if args.gaps == 0 {
        return Err(usage("--m must be at least 1"));
    }
    if !(args.gap_width.is_finite() && args.gap_width > 0.0) {
        return Err(usage(format!("--gap-width must be positive, got {}", args.gap_width)));
    }
    let dataset = args.input.read(true)?;
    let (outcome, window) = windowed(&dataset, &args.window)?;

    #[derive(Serialize)]
    struct Config {
        prior_days: f64,
        post_days: f64,
        gaps: usize,
        gap_width: f64,
    }
    let prov = Provenance::new(
        args.common.seed,
        "edt",
        &Config {
            prior_days: args.window.prior_days,
            post_days: args.window.post_days,
            gaps: args.gaps,
            gap_width: args.gap_width,
        },
        &args.input.digests()?,
    );
    let analysis = corrected_perr_ag(&outcome.dataset, args.gaps, args.gap_width)?;

    let out = OutDir::create(&args.common.out)?;
    let mut profile = prov.write_preamble(out.file("edt_profile.csv")?)?;
    analysis.profile.write_csv(&mut profile)?;
    profile.flush()?;

    #[derive(Serialize)]
    struct Decision<'a> {
        #[serde(flatten)]
        provenance: &'a Provenance,
        gaps: usize,
        gap_width: f64,
        window: &'a WindowReport,
        #[serde(flatten)]
        decision: &'a EdtDecision,
        significant: Vec<bool>,
        dropped_pairs: &'a [String],
    }
    out.json(
        "edt_decision.json",
        &Decision {
            provenance: &prov,
            gaps: args.gaps,
            gap_width: args.gap_width,
            window: &window,
            decision: &analysis.decision,
            significant: analysis.profile.significance(),
            dropped_pairs: &analysis.dropped_pairs,
        },
    )?;

    match args.common.format {
        Format::Json => {
            #[derive(Serialize)]
            struct Estimates<'a> {
                #[serde(flatten)]
                provenance: &'a Provenance,
                uncorrected: &'a PerrEstimate,
                corrected: &'a PerrEstimate,
            }
            out.json(
                "edt_estimates.json",
                &Estimates { provenance: &prov, uncorrected: &analysis.uncorrected, corrected: &analysis.corrected },
            )?;
        }
        Format::Csv => {
            let mut csv = csv::Writer::from_writer(out.file("edt_estimates.csv")?);
            csv.write_record(estimate_columns())?;
            csv.write_record(estimate_row("ag_uncorrected", Some(&analysis.uncorrected), None, &prov))?;
            csv.write_record(estimate_row("ag_corrected", Some(&analysis.corrected), None, &prov))?;
            csv.flush()?;
        }
    }
    let d = &analysis.decision;
    if d.detected {
        eprintln!(
            "event-dependent treatment detected: delta {} days, theta {:.3}; PERR_AG {:.4} -> {:.4}",
            d.delta_hat,
            d.theta_hat.unwrap_or(f64::NAN),
            analysis.uncorrected.perr_hr,
            analysis.corrected.perr_hr
        );
    } else {
        eprintln!("no event-dependent treatment detected; PERR_AG {:.4}", analysis.uncorrected.perr_hr);
    }
    Ok(())
}

fn catalog_listing() -> String {
    let presets = scenario_presets();
    let groups: BTreeSet<&str> = presets.iter().map(|p| p.group).collect();
    let names: Vec<&str> = presets.iter().map(|p| p.spec.name.as_str()).collect();
    format!(
        "groups: {}\npresets: {}",
        groups.into_iter().collect::<Vec<_>>().join(", "),
        names.join(", ")
    )
}

fn resolve_scenarios(args: &SimulateArgs) -> Result<(Vec<ScenarioSpec>, Vec<String>)> {
    let (mut specs, digests) = match (&args.scenario, &args.config) {
        (Some(name), None) => {
            let specs = preset_group(name)
                .map_err(|_| usage(format!("unknown scenario '{name}'\n{}", catalog_listing())))?;
            (specs, Vec::new())
        }
        (None, Some(path)) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let spec = ScenarioSpec::from_toml(&text).with_context(|| path.display().to_string())?;
            (vec![spec], vec![file_digest(path)?])
        }
        _ => unreachable!("clap enforces exactly one scenario source"),
    };
    for spec in &mut specs {
        if let Some(seed) = args.seed {
            spec.seed = seed;
        }
        if let Some(r) = args.replicates {
            spec.replicates = r as usize;
        }
        spec.validate()?;
    }
    Ok((specs, digests))
}

pub fn run_simulate(args: &SimulateArgs) -> Result<()> {
    let (specs, digests) = resolve_scenarios(args)?;
    if args.export_cohort && specs.len() != 1 {
        return Err(usage("--export-cohort needs a single scenario, not a group"));
    }
    let tomls: Vec<String> = specs.iter().map(ScenarioSpec::to_toml).collect();
    let prov = Provenance::new(specs[0].seed, "simulate", &tomls, &digests);
    let meta = prov.meta();

    let mut summaries: Vec<SimSummary> = Vec::new();
    let mut replicates = Vec::new();
    for (i, spec) in specs.iter().enumerate() {
        let started = Instant::now();
        let (summary, records) = run_scenario_with(spec, spec.replicates)?;
        eprintln!(
            "[{}/{}] {}: {} replicates ({} valid) in {:.1}s",
            i + 1,
            specs.len(),
            spec.name,
            summary.replicates,
            summary.valid,
            started.elapsed().as_secs_f64()
        );
        let mut buf = Vec::new();
        write_replicates_csv(&mut buf, spec, &records, &meta)?;
        let body = if i == 0 {
            &buf[..]
        } else {
            let header_end = buf.iter().position(|&b| b == b'\n').map_or(buf.len(), |p| p + 1);
            &buf[header_end..]
        };
        replicates.extend_from_slice(body);
        summaries.push(summary);
    }

    let out = OutDir::create(&args.out)?;
    let mut summary_file = out.file("summary.csv")?;
    write_summary_csv(&mut summary_file, &summaries, &meta)?;
    summary_file.flush()?;
    let mut replicate_file = out.file("replicates.csv")?;
    replicate_file.write_all(&replicates)?;
    replicate_file.flush()?;

    if args.format == Format::Json {
        #[derive(Serialize)]
        struct Report<'a> {
            #[serde(flatten)]
            provenance: &'a Provenance,
            scenarios: &'a [ScenarioSpec],
            summaries: &'a [SimSummary],
        }
        out.json("summary.json", &Report { provenance: &prov, scenarios: &specs, summaries: &summaries })?;
    }

    if args.export_cohort {
        let cohort = replicate_cohort(&specs[0], 0)?;
        let preamble = prov.preamble();
        write_cohort(&cohort.population, out.subdir("population")?.root(), &preamble, None)?;
        write_cohort(&cohort.matched, out.subdir("cohort")?.root(), &preamble, Some(vec!["Z".into()]))?;
    }
    Ok(())
}

pub fn run_presets(args: &PresetsArgs) -> Result<()> {
    let mut stdout = std::io::stdout().lock();
    if let Some(name) = &args.show {
        let spec = perr_core::simulation::preset(name)
            .map_err(|_| usage(format!("unknown preset '{name}'\n{}", catalog_listing())))?;
        write!(stdout, "{}", spec.to_toml())?;
        return Ok(());
    }
    let presets = scenario_presets();
    match args.format {
        Format::Json => {
            #[derive(Serialize)]
            struct Entry<'a> {
                group: &'a str,
                #[serde(flatten)]
                spec: &'a ScenarioSpec,
            }
            let entries: Vec<Entry> = presets.iter().map(|p| Entry { group: p.group, spec: &p.spec }).collect();
            serde_json::to_writer_pretty(&mut stdout, &entries)?;
            writeln!(stdout)?;
        }
        Format::Csv => {
            let width = presets.iter().map(|p| p.spec.name.len()).max().unwrap_or(0);
            let gwidth = presets.iter().map(|p| p.group.len()).max().unwrap_or(0);
            for p in &presets {
                writeln!(stdout, "{:gwidth$}  {:width$}  {}", p.group, p.spec.name, p.spec.description)?;
            }
        }
    }
    Ok(())
}
