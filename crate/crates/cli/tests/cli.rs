//! Runs the `perr` binary end to end.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn perr(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_perr")).args(args).current_dir(cwd).output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn ok(o: Output) -> Output {
    assert_eq!(o.status.code(), Some(0), "stderr: {}", stderr(&o));
    o
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

/// Every file under `dir`, relative path to bytes.
fn snapshot(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push((path.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&path).unwrap()));
            }
        }
    }
    out.sort();
    out
}

/// A small simulated scenario exported as a population and a matched cohort.
fn simulated(tmp: &TempDir) -> PathBuf {
    let config = write(
        tmp.path(),
        "scenario.toml",
        "name = \"small\"\nn_prematch = 2500\ntheta = 4.0\ndelta = 30.0\nreplicates = 2\nseed = 11\n",
    );
    let out = tmp.path().join("sim");
    ok(perr(
        &["simulate", "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap(), "--export-cohort"],
        tmp.path(),
    ));
    out
}

#[test]
fn help_and_usage_errors() {
    let tmp = TempDir::new().unwrap();
    assert_eq!(perr(&["--help"], tmp.path()).status.code(), Some(0));
    assert_eq!(perr(&["--version"], tmp.path()).status.code(), Some(0));
    assert_eq!(perr(&["frobnicate"], tmp.path()).status.code(), Some(1));
    let o = perr(&["edt", "--cohort", "x", "--out", "y"], tmp.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("--m"));
    let o = perr(&["simulate", "edt-d20-theta4", "--config", "a.toml", "--out", "y"], tmp.path());
    assert_eq!(o.status.code(), Some(1), "scenario name and config are exclusive");
    let o = perr(&["edt", "--cohort", "x", "--participants", "p.csv", "--events", "e.csv", "--m", "5", "--gap-width", "10", "--out", "y"], tmp.path());
    assert_eq!(o.status.code(), Some(1), "input forms are exclusive");
    assert!(fs::read_dir(tmp.path()).unwrap().next().is_none(), "usage errors write nothing");
}

#[test]
fn unknown_scenario_lists_presets() {
    let tmp = TempDir::new().unwrap();
    let o = perr(&["simulate", "no-such-scenario", "--out", "out"], tmp.path());
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.contains("unknown scenario 'no-such-scenario'"));
    assert!(err.contains("edt-d20-theta4") && err.contains("heterogeneity"));
}

#[test]
fn malformed_input_names_file_line_and_column() {
    let tmp = TempDir::new().unwrap();
    let p = write(
        tmp.path(),
        "people.csv",
        "# a comment\nid,group,pair_id,prior_start,index_time,end_time\nt1,treated,1,0,50,100\nc1,control,1,0,fifty,100\n",
    );
    let e = write(tmp.path(), "events.csv", "id,time\n");
    let o = perr(&["perr", "--participants", p.to_str().unwrap(), "--events", e.to_str().unwrap(), "--out", "out"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("people.csv") && err.contains("line 4") && err.contains("index_time"), "{err}");
}

#[test]
fn empty_pool_has_no_eligible_controls() {
    let tmp = TempDir::new().unwrap();
    let p = write(
        tmp.path(),
        "p.csv",
        "id,group,pair_id,prior_start,index_time,end_time,sex\nt1,treated,,0,50,100,f\nc1,control,,0,200,200,m\n",
    );
    let e = write(tmp.path(), "e.csv", "id,time\nt1,20\n");
    let o = perr(
        &["match", "--participants", p.to_str().unwrap(), "--events", e.to_str().unwrap(), "--keys", "sex", "--out", "out"],
        tmp.path(),
    );
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("no eligible controls"));
}

#[test]
fn numerical_failure_exit_code() {
    // A single event in the whole cohort: every estimator is inestimable.
    let tmp = TempDir::new().unwrap();
    let p = write(
        tmp.path(),
        "p.csv",
        "id,group,pair_id,prior_start,index_time,end_time\n\
         t1,treated,p1,0,50,100\nc1,control,p1,0,50,100\nt2,treated,p2,0,50,100\nc2,control,p2,0,50,100\n",
    );
    let e = write(tmp.path(), "e.csv", "id,time\nt1,60\n");
    let out = tmp.path().join("out");
    let o = perr(
        &["perr", "--participants", p.to_str().unwrap(), "--events", e.to_str().unwrap(), "--out", out.to_str().unwrap(), "--bootstrap", "10"],
        tmp.path(),
    );
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    let report: serde_json::Value = serde_json::from_slice(&fs::read(out.join("perr_report.json")).unwrap()).unwrap();
    let estimates = report["estimates"].as_array().unwrap();
    assert_eq!(estimates.len(), 3);
    assert!(estimates.iter().all(|e| e["error"].is_string()));
}

#[test]
fn simulate_export_then_match_perr_and_edt() {
    let tmp = TempDir::new().unwrap();
    let sim = simulated(&tmp);
    let summary = fs::read_to_string(sim.join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 2);
    assert!(summary.lines().next().unwrap().ends_with("seed,config_hash,tool_version"));
    assert_eq!(fs::read_to_string(sim.join("replicates.csv")).unwrap().lines().count(), 3);

    // Matching the exported population gives back the exported cohort.
    let matched = tmp.path().join("matched");
    ok(perr(
        &["match", "--cohort", sim.join("population").to_str().unwrap(), "--keys", "Z", "--out", matched.to_str().unwrap()],
        tmp.path(),
    ));
    let strip = |p: PathBuf| -> Vec<String> {
        fs::read_to_string(p).unwrap().lines().filter(|l| !l.starts_with('#')).map(String::from).collect()
    };
    assert_eq!(strip(matched.join("participants.csv")), strip(sim.join("cohort/participants.csv")));
    assert_eq!(strip(matched.join("events.csv")), strip(sim.join("cohort/events.csv")));
    let n = strip(matched.join("participants.csv")).len() - 1;
    assert_eq!(n % 2, 0);
    let report: serde_json::Value = serde_json::from_slice(&fs::read(matched.join("match_report.json")).unwrap()).unwrap();
    assert_eq!(report["pairs"].as_u64().unwrap() as usize * 2, n);
    assert_eq!(report["seed"], 1);

    // All three estimators plus the incidence table.
    let p_out = tmp.path().join("perr");
    ok(perr(
        &["perr", "--cohort", matched.to_str().unwrap(), "--bootstrap", "30", "--seed", "4", "--out", p_out.to_str().unwrap()],
        tmp.path(),
    ));
    let report: serde_json::Value = serde_json::from_slice(&fs::read(p_out.join("perr_report.json")).unwrap()).unwrap();
    assert_eq!(report["seed"], 4);
    assert_eq!(report["estimates"].as_array().unwrap().len(), 3);
    for e in report["estimates"].as_array().unwrap() {
        let est = &e["estimate"];
        let ratio = est["hr_post"].as_f64().unwrap() / est["hr_prior"].as_f64().unwrap();
        assert!((ratio / est["perr_hr"].as_f64().unwrap() - 1.0).abs() < 1e-9);
    }
    let formatted = report["incidence"]["formatted"].as_array().unwrap();
    assert_eq!(formatted.len(), 2);
    assert!(formatted[0]["prior"].as_str().unwrap().contains('/'));

    // Weekly sub-periods: one profile row per period.
    let e_out = tmp.path().join("edt");
    ok(perr(
        &["edt", "--cohort", matched.to_str().unwrap(), "--m", "6", "--gap-width", "7", "--out", e_out.to_str().unwrap(), "--format", "csv"],
        tmp.path(),
    ));
    let profile = fs::read_to_string(e_out.join("edt_profile.csv")).unwrap();
    let rows: Vec<&str> = profile.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(rows.len(), 7);
    assert!(rows[0].starts_with("gap,from_days,to_days"));
    assert!(rows[6].starts_with("6,-7,0,"));
    let decision: serde_json::Value = serde_json::from_slice(&fs::read(e_out.join("edt_decision.json")).unwrap()).unwrap();
    assert_eq!(decision["significant"].as_array().unwrap().len(), 6);
    assert!(decision["detected"].is_boolean());
    let estimates = fs::read_to_string(e_out.join("edt_estimates.csv")).unwrap();
    assert_eq!(estimates.lines().count(), 3);
}

#[test]
fn reruns_are_byte_identical_and_stay_inside_out() {
    let tmp = TempDir::new().unwrap();
    let sim = simulated(&tmp);
    let cohort = sim.join("cohort");
    let runs = |tag: &str| {
        let base = tmp.path().join(tag);
        let arg = |name: &str| base.join(name).to_str().unwrap().to_string();
        let c = cohort.to_str().unwrap();
        ok(perr(&["perr", "--cohort", c, "--bootstrap", "20", "--out", &arg("perr")], tmp.path()));
        ok(perr(&["perr", "--cohort", c, "--bootstrap", "20", "--format", "csv", "--threads", "2", "--out", &arg("perr-csv")], tmp.path()));
        ok(perr(&["edt", "--cohort", c, "--m", "5", "--gap-width", "10", "--out", &arg("edt")], tmp.path()));
        ok(perr(&["simulate", "edt-d20-theta4", "--replicates", "3", "--format", "json", "--out", &arg("sim")], tmp.path()));
        snapshot(&base)
    };
    let before: Vec<_> = fs::read_dir(tmp.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    let a = runs("a");
    let b = runs("b");
    assert_eq!(a.len(), 9);
    assert_eq!(a, b);
    let after: Vec<_> = fs::read_dir(tmp.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(after.len(), before.len() + 2, "only the two output directories were added");
}

#[test]
fn seed_changes_bootstrap_but_is_recorded() {
    let tmp = TempDir::new().unwrap();
    let sim = simulated(&tmp);
    let c = sim.join("cohort");
    let run = |seed: &str| {
        let out = tmp.path().join(format!("s{seed}"));
        ok(perr(
            &["perr", "--cohort", c.to_str().unwrap(), "--method", "original", "--bootstrap", "20", "--seed", seed, "--format", "csv", "--out", out.to_str().unwrap()],
            tmp.path(),
        ));
        fs::read_to_string(out.join("perr_estimates.csv")).unwrap()
    };
    let (a, b) = (run("1"), run("2"));
    assert_ne!(a, b);
    let row: Vec<&str> = a.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(row[0], "original");
    assert_eq!(row[row.len() - 3], "1");
}

#[test]
fn presets_listing_and_show() {
    let tmp = TempDir::new().unwrap();
    let o = ok(perr(&["presets"], tmp.path()));
    let text = String::from_utf8(o.stdout).unwrap();
    assert_eq!(text.lines().count(), 61);
    let o = ok(perr(&["presets", "--format", "json"], tmp.path()));
    let list: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(list.as_array().unwrap().len(), 61);
    let o = ok(perr(&["presets", "--show", "edt-d30-theta0.25"], tmp.path()));
    let toml = String::from_utf8(o.stdout).unwrap();
    assert!(toml.contains("theta = 0.25") && toml.contains("delta = 30.0"));

    // The shown TOML is a valid config.
    let cfg = write(tmp.path(), "s.toml", &toml);
    ok(perr(&["simulate", "--config", cfg.to_str().unwrap(), "--replicates", "1", "--out", "o"], tmp.path()));
    assert!(tmp.path().join("o/summary.csv").exists());
}
