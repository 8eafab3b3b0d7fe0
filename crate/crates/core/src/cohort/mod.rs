//! Cohort data model.
//!
//! All times are day offsets on one clock shared by every participant. A
//! participant's prior period is `(prior_start, index_time]` and the post
//! period is `(index_time, end_time]`; an event exactly at the index time
//! therefore counts as a prior event.

mod incidence;
pub mod io;
mod matching;
mod rows;
mod validate;
mod window;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use incidence::{incidence_table, IncidenceCell, IncidenceTable, DAYS_PER_YEAR};
pub use matching::{match_controls, match_controls_with, ControlChoice, MatchOutcome, MatchReport};
pub use rows::{
    build_all_event_rows, build_first_event_rows, build_gap_rows, gap_column, CountingProcessRow,
    RowSet, Term,
};
pub use validate::{validate, Violation, ViolationKind};
pub use window::{restrict_window, AnalysisWindow, WindowOutcome};

#[derive(Debug, Error)]
pub enum CohortError {
    #[error("no eligible controls for any of the {unmatched} treated participants")]
    NoEligiblePairs { unmatched: usize },

    #[error("pool participant {0} is marked treated")]
    TreatedInPool(String),

    #[error("participant {id} has no covariate {key}")]
    MissingKey { id: String, key: String },

    #[error("invalid analysis window: {0}")]
    InvalidWindow(String),

    #[error("dataset is not a matched cohort: {0}")]
    NotMatched(String),

    #[error("invalid sub-period layout: {0}")]
    InvalidGaps(String),

    #[error("unknown row column {0}")]
    UnknownColumn(String),

    #[error("every participant was excluded")]
    Empty,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Group {
    Treated,
    Control,
}

impl Group {
    pub fn indicator(self) -> f64 {
        match self {
            Group::Treated => 1.0,
            Group::Control => 0.0,
        }
    }

    pub fn flipped(self) -> Group {
        match self {
            Group::Treated => Group::Control,
            Group::Control => Group::Treated,
        }
    }
}

impl fmt::Display for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Group::Treated => "treated",
            Group::Control => "control",
        })
    }
}

impl std::str::FromStr for Group {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "treated" | "treat" | "1" => Ok(Group::Treated),
            "control" | "0" => Ok(Group::Control),
            other => Err(format!("unknown group '{other}' (expected treated or control)")),
        }
    }
}

/// A covariate value: numeric when the text parses as a number, a label otherwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Covariate {
    Number(f64),
    Label(String),
}

impl Covariate {
    pub fn parse(text: &str) -> Covariate {
        let text = text.trim();
        match text.parse::<f64>() {
            Ok(v) if v.is_finite() => Covariate::Number(v),
            _ => Covariate::Label(text.to_string()),
        }
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Covariate::Number(v) => Some(*v),
            Covariate::Label(_) => None,
        }
    }
}

impl fmt::Display for Covariate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Covariate::Number(v) => write!(f, "{v}"),
            Covariate::Label(s) => f.write_str(s),
        }
    }
}

/// One subject's follow-up.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Participant {
    pub id: String,
    pub group: Group,
    /// Shared by a treated participant and its matched control.
    pub pair_id: Option<String>,
    pub prior_start: f64,
    /// Treatment time for the treated, the partner's treatment time for a matched control.
    pub index_time: f64,
    pub end_time: f64,
    pub covariates: BTreeMap<String, Covariate>,
    /// Strictly increasing, each in `(prior_start, end_time]`.
    pub event_times: Vec<f64>,
}

impl Participant {
    pub fn new(id: impl Into<String>, group: Group, prior_start: f64, index_time: f64, end_time: f64) -> Self {
        Participant {
            id: id.into(),
            group,
            pair_id: None,
            prior_start,
            index_time,
            end_time,
            covariates: BTreeMap::new(),
            event_times: Vec::new(),
        }
    }

    pub fn with_events(mut self, events: impl IntoIterator<Item = f64>) -> Self {
        self.event_times = events.into_iter().collect();
        self
    }

    pub fn with_pair(mut self, pair_id: impl Into<String>) -> Self {
        self.pair_id = Some(pair_id.into());
        self
    }

    pub fn with_covariate(mut self, name: impl Into<String>, value: Covariate) -> Self {
        self.covariates.insert(name.into(), value);
        self
    }

    pub fn is_treated(&self) -> bool {
        self.group == Group::Treated
    }

    /// Events in `(prior_start, index_time]`.
    pub fn prior_events(&self) -> impl Iterator<Item = f64> + '_ {
        self.event_times
            .iter()
            .copied()
            .filter(move |&t| t > self.prior_start && t <= self.index_time)
    }

    /// Events in `(index_time, end_time]`.
    pub fn post_events(&self) -> impl Iterator<Item = f64> + '_ {
        self.event_times
            .iter()
            .copied()
            .filter(move |&t| t > self.index_time && t <= self.end_time)
    }

    pub fn prior_span(&self) -> f64 {
        (self.index_time - self.prior_start).max(0.0)
    }

    pub fn post_span(&self) -> f64 {
        (self.end_time - self.index_time).max(0.0)
    }
}

/// A set of participants.
///
/// `matched` declares that pair links form a perfect matching between the
/// treated and control groups.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CohortDataset {
    pub participants: Vec<Participant>,
    pub matched: bool,
}

impl CohortDataset {
    pub fn new(participants: Vec<Participant>, matched: bool) -> Self {
        CohortDataset { participants, matched }
    }

    pub fn len(&self) -> usize {
        self.participants.len()
    }

    pub fn is_empty(&self) -> bool {
        self.participants.is_empty()
    }

    pub fn n_treated(&self) -> usize {
        self.participants.iter().filter(|p| p.is_treated()).count()
    }

    pub fn n_control(&self) -> usize {
        self.len() - self.n_treated()
    }

    pub fn n_events(&self) -> usize {
        self.participants.iter().map(|p| p.event_times.len()).sum()
    }

    /// `(treated, control)` index pairs in order of the treated participant's
    /// position. Fails unless every participant belongs to exactly one
    /// complete pair.
    pub fn pairs(&self) -> Result<Vec<(usize, usize)>, CohortError> {
        let mut slots: HashMap<&str, (Option<usize>, Option<usize>)> = HashMap::new();
        for (i, p) in self.participants.iter().enumerate() {
            let pair = p
                .pair_id
                .as_deref()
                .ok_or_else(|| CohortError::NotMatched(format!("participant {} has no pair id", p.id)))?;
            let slot = slots.entry(pair).or_default();
            let target = match p.group {
                Group::Treated => &mut slot.0,
                Group::Control => &mut slot.1,
            };
            if target.replace(i).is_some() {
                return Err(CohortError::NotMatched(format!("pair {pair} has two {} members", p.group)));
            }
        }
        let mut pairs = Vec::with_capacity(slots.len());
        for (pair, slot) in &slots {
            match slot {
                (Some(t), Some(c)) => pairs.push((*t, *c)),
                _ => return Err(CohortError::NotMatched(format!("pair {pair} is incomplete"))),
            }
        }
        pairs.sort_unstable();
        Ok(pairs)
    }

    /// Removes every participant whose pair id is in `pairs`.
    pub fn without_pairs(&self, pairs: &HashSet<String>) -> CohortDataset {
        let participants = self
            .participants
            .iter()
            .filter(|p| p.pair_id.as_ref().is_none_or(|id| !pairs.contains(id)))
            .cloned()
            .collect();
        CohortDataset { participants, matched: self.matched }
    }

    /// Swaps the treated and control labels.
    pub fn relabeled(&self) -> CohortDataset {
        let participants = self
            .participants
            .iter()
            .map(|p| Participant { group: p.group.flipped(), ..p.clone() })
            .collect();
        CohortDataset { participants, matched: self.matched }
    }
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;

    /// One treated/control pair with the given `(A, B, C; events)` layouts.
    pub fn pair(
        id: &str,
        treated: (f64, f64, f64, &[f64]),
        control: (f64, f64, f64, &[f64]),
    ) -> Vec<Participant> {
        vec![
            Participant::new(format!("{id}t"), Group::Treated, treated.0, treated.1, treated.2)
                .with_events(treated.3.iter().copied())
                .with_pair(id),
            Participant::new(format!("{id}c"), Group::Control, control.0, control.1, control.2)
                .with_events(control.3.iter().copied())
                .with_pair(id),
        ]
    }
}
