use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use super::{CohortDataset, CohortError, Participant};

/// Days kept on each side of the index time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnalysisWindow {
    prior_days: f64,
    post_days: f64,
}

impl AnalysisWindow {
    pub fn new(prior_days: f64, post_days: f64) -> Result<Self, CohortError> {
        for (name, v) in [("prior", prior_days), ("post", post_days)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(CohortError::InvalidWindow(format!("{name} days must be positive, got {v}")));
            }
        }
        Ok(AnalysisWindow { prior_days, post_days })
    }

    pub fn prior_days(&self) -> f64 {
        self.prior_days
    }

    pub fn post_days(&self) -> f64 {
        self.post_days
    }
}

impl Default for AnalysisWindow {
    fn default() -> Self {
        AnalysisWindow { prior_days: 150.0, post_days: 150.0 }
    }
}

#[derive(Debug, Clone)]
pub struct WindowOutcome {
    pub dataset: CohortDataset,
    /// Participants whose prior period became empty.
    pub empty_prior: Vec<String>,
    /// Everyone removed, including the partners of `empty_prior`.
    pub excluded: Vec<String>,
}

fn clip(p: &Participant, window: &AnalysisWindow) -> Participant {
    let prior_start = p.prior_start.max(p.index_time - window.prior_days);
    let end_time = p.end_time.min(p.index_time + window.post_days);
    let event_times = p
        .event_times
        .iter()
        .copied()
        .filter(|&t| t > prior_start && t <= end_time)
        .collect();
    Participant { prior_start, end_time, event_times, ..p.clone() }
}

/// Clips every participant to `(B - prior_days, B + post_days]`.
///
/// A participant left with an empty prior period is excluded, together with
/// its matched partner when it has one.
pub fn restrict_window(dataset: &CohortDataset, window: &AnalysisWindow) -> WindowOutcome {
    let clipped: Vec<Participant> = dataset.participants.iter().map(|p| clip(p, window)).collect();
    let empty: Vec<&Participant> = clipped.iter().filter(|p| p.prior_start >= p.index_time).collect();
    let empty_prior: Vec<String> = empty.iter().map(|p| p.id.clone()).collect();
    let empty_ids: HashSet<&str> = empty.iter().map(|p| p.id.as_str()).collect();
    let dropped_pairs: HashSet<&str> = empty.iter().filter_map(|p| p.pair_id.as_deref()).collect();

    let mut excluded = Vec::new();
    let mut kept = Vec::new();
    for p in &clipped {
        let paired_out = p.pair_id.as_deref().is_some_and(|id| dropped_pairs.contains(id));
        if paired_out || empty_ids.contains(p.id.as_str()) {
            excluded.push(p.id.clone());
        } else {
            kept.push(p.clone());
        }
    }
    WindowOutcome {
        dataset: CohortDataset::new(kept, dataset.matched),
        empty_prior,
        excluded,
    }
}

#[cfg(test)]
mod tests {
    use super::super::fixtures::pair;
    use super::super::Group;
    use super::*;

    fn window() -> AnalysisWindow {
        AnalysisWindow::new(150.0, 150.0).unwrap()
    }

    #[test]
    fn clips_spans_and_events() {
        let p = Participant::new("a", Group::Treated, 0.0, 400.0, 900.0).with_events([100.0, 300.0, 500.0]);
        let out = restrict_window(&CohortDataset::new(vec![p], false), &window());
        let q = &out.dataset.participants[0];
        assert_eq!((q.prior_start, q.index_time, q.end_time), (250.0, 400.0, 550.0));
        assert_eq!(q.event_times, vec![300.0, 500.0]);
    }

    #[test]
    fn short_follow_up_unchanged() {
        let p = Participant::new("a", Group::Treated, 0.0, 100.0, 200.0).with_events([5.0, 150.0]);
        let ds = CohortDataset::new(vec![p.clone()], false);
        let out = restrict_window(&ds, &window());
        assert_eq!(out.dataset.participants[0], p);
        assert!(out.excluded.is_empty());
    }

    #[test]
    fn empty_prior_drops_pair() {
        let mut people = pair("p", (0.0, 0.0, 50.0, &[]), (0.0, 0.0, 80.0, &[]));
        people[1].index_time = 0.0;
        people.extend(pair("q", (0.0, 10.0, 50.0, &[]), (0.0, 10.0, 80.0, &[])));
        let out = restrict_window(&CohortDataset::new(people, true), &window());
        assert_eq!(out.empty_prior, vec!["pt".to_string(), "pc".to_string()]);
        assert_eq!(out.dataset.len(), 2);
        assert!(out.dataset.participants.iter().all(|p| p.pair_id.as_deref() == Some("q")));
    }

    #[test]
    fn rejects_non_positive_window() {
        assert!(AnalysisWindow::new(0.0, 10.0).is_err());
        assert!(AnalysisWindow::new(10.0, f64::NAN).is_err());
    }
}
