//! Cohort file arguments shared by the analysis commands.

use std::path::PathBuf;

use anyhow::{bail, Result};
use clap::Args;

use perr_core::cohort::io::{read_cohort, read_sidecar};
use perr_core::cohort::{validate, CohortDataset};

use crate::output::file_digest;

#[derive(Debug, Clone, Args)]
pub struct CohortArgs {
    /// Directory holding participants.csv and events.csv (as written by `perr match`).
    #[arg(long, value_name = "DIR", conflicts_with_all = ["participants", "events"], required_unless_present = "participants")]
    pub cohort: Option<PathBuf>,

    /// Participants file: id, group, pair_id, prior_start, index_time, end_time, covariates...
    #[arg(long, value_name = "CSV", requires = "events")]
    pub participants: Option<PathBuf>,

    /// Events file: id, time.
    #[arg(long, value_name = "CSV", requires = "participants")]
    pub events: Option<PathBuf>,
}

impl CohortArgs {
    fn paths(&self) -> (PathBuf, PathBuf) {
        match (&self.cohort, &self.participants, &self.events) {
            (Some(dir), _, _) => (dir.join("participants.csv"), dir.join("events.csv")),
            (None, Some(p), Some(e)) => (p.clone(), e.clone()),
            _ => unreachable!("clap enforces one input form"),
        }
    }

    /// SHA-256 of both input files, for the config hash.
    pub fn digests(&self) -> Result<Vec<String>> {
        let (p, e) = self.paths();
        Ok(vec![file_digest(&p)?, file_digest(&e)?])
    }

    pub fn read(&self, matched: bool) -> Result<CohortDataset> {
        let (p, e) = self.paths();
        if let Some(dir) = &self.cohort {
            if let Some(sidecar) = read_sidecar(&dir.join("cohort.json"))? {
                if matched && !sidecar.matched {
                    bail!("{}: cohort.json declares an unmatched cohort", dir.display());
                }
            }
        }
        let dataset = read_cohort(&p, &e, matched)?;
        if dataset.is_empty() {
            bail!("{}: no participants", p.display());
        }
        let problems = validate(&dataset);
        let relevant: Vec<_> = if matched {
            problems
        } else {
            problems.into_iter().filter(|v| !is_pairing(v)).collect()
        };
        if let Some(first) = relevant.first() {
            bail!("{}: {} invalid record(s), first: {first}", p.display(), relevant.len());
        }
        Ok(dataset)
    }
}

fn is_pairing(v: &perr_core::cohort::Violation) -> bool {
    use perr_core::cohort::ViolationKind::*;
    matches!(v.kind, Unpaired | PairConflict { .. })
}
