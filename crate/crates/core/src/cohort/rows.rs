//! Counting-process row builders.
//!
//! Every builder emits `(start, stop]` intervals. The post period keeps the
//! shared clock: its rows start at the index time, not at zero.

use super::{CohortDataset, CohortError, Participant};
use crate::survival::SurvivalData;

#[derive(Debug, Clone, PartialEq)]
pub struct CountingProcessRow {
    /// Index into [`RowSet::clusters`].
    pub cluster: usize,
    pub start: f64,
    pub stop: f64,
    /// An event occurs at `stop`.
    pub event: bool,
    /// Aligned with [`RowSet::columns`].
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RowSet {
    columns: Vec<String>,
    clusters: Vec<String>,
    rows: Vec<CountingProcessRow>,
}

/// A product of row columns; a single factor is a main effect.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Term {
    factors: Vec<String>,
}

impl Term {
    pub fn main(column: &str) -> Term {
        Term { factors: vec![column.to_string()] }
    }

    pub fn interaction(columns: &[&str]) -> Term {
        Term { factors: columns.iter().map(|c| c.to_string()).collect() }
    }

    pub fn name(&self) -> String {
        self.factors.join(":")
    }
}

impl RowSet {
    pub fn new(columns: Vec<String>, clusters: Vec<String>, rows: Vec<CountingProcessRow>) -> Self {
        RowSet { columns, clusters, rows }
    }

    pub fn columns(&self) -> &[String] {
        &self.columns
    }

    pub fn clusters(&self) -> &[String] {
        &self.clusters
    }

    pub fn rows(&self) -> &[CountingProcessRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    pub fn value(&self, row: &CountingProcessRow, column: &str) -> Option<f64> {
        self.column_index(column).map(|i| row.values[i])
    }

    pub fn event_count(&self) -> usize {
        self.rows.iter().filter(|r| r.event).count()
    }

    /// Keeps the rows matching `keep`; cluster labels are preserved.
    pub fn filter(&self, mut keep: impl FnMut(&CountingProcessRow) -> bool) -> RowSet {
        RowSet {
            columns: self.columns.clone(),
            clusters: self.clusters.clone(),
            rows: self.rows.iter().filter(|r| keep(r)).cloned().collect(),
        }
    }

    /// Builds the fitter's design matrix with one column per term.
    pub fn design(&self, terms: &[Term]) -> Result<SurvivalData, CohortError> {
        let factor_idx: Vec<Vec<usize>> = terms
            .iter()
            .map(|t| {
                t.factors
                    .iter()
                    .map(|f| self.column_index(f).ok_or_else(|| CohortError::UnknownColumn(f.clone())))
                    .collect()
            })
            .collect::<Result<_, _>>()?;
        let n = self.rows.len();
        let mut x = Vec::with_capacity(n * terms.len());
        for r in &self.rows {
            for idx in &factor_idx {
                x.push(idx.iter().map(|&i| r.values[i]).product());
            }
        }
        let data = SurvivalData::new(
            terms.iter().map(Term::name).collect(),
            self.rows.iter().map(|r| r.start).collect(),
            self.rows.iter().map(|r| r.stop).collect(),
            self.rows.iter().map(|r| r.event).collect(),
            self.rows.iter().map(|r| r.cluster).collect(),
            x,
        )
        .expect("row builders emit well-formed intervals");
        Ok(data)
    }
}

/// Splits `(from, to]` at every cut point strictly inside it and at every
/// event in `(from, to]`. Calls `emit(start, stop, event)` in time order.
fn split_span(from: f64, to: f64, cuts: &[f64], events: &[f64], mut emit: impl FnMut(f64, f64, bool)) {
    if to <= from {
        return;
    }
    let mut points: Vec<(f64, bool)> = cuts
        .iter()
        .filter(|&&c| c > from && c < to)
        .map(|&c| (c, false))
        .chain(events.iter().filter(|&&e| e > from && e <= to).map(|&e| (e, true)))
        .chain(std::iter::once((to, false)))
        .collect();
    points.sort_by(|a, b| a.0.total_cmp(&b.0).then(b.1.cmp(&a.1)));
    points.dedup_by(|later, earlier| later.0 == earlier.0);
    let mut start = from;
    for (stop, event) in points {
        emit(start, stop, event);
        start = stop;
    }
}

fn cluster_labels(dataset: &CohortDataset) -> Vec<String> {
    dataset.participants.iter().map(|p| p.id.clone()).collect()
}

fn trt_post(p: &Participant, post: bool) -> Vec<f64> {
    vec![p.group.indicator(), if post { 1.0 } else { 0.0 }]
}

/// Time-to-first-event rows: at most one prior and one post row per participant.
///
/// The prior row runs from the prior start to the first prior event or the
/// index time, whichever is earlier; the post row from the index time to the
/// first post event or the end of follow-up. Columns: `trt`, `post`.
pub fn build_first_event_rows(dataset: &CohortDataset) -> RowSet {
    let mut rows = Vec::new();
    for (cluster, p) in dataset.participants.iter().enumerate() {
        if p.index_time > p.prior_start {
            let first = p.prior_events().next();
            rows.push(CountingProcessRow {
                cluster,
                start: p.prior_start,
                stop: first.unwrap_or(p.index_time),
                event: first.is_some(),
                values: trt_post(p, false),
            });
        }
        if p.end_time > p.index_time {
            let first = p.post_events().next();
            rows.push(CountingProcessRow {
                cluster,
                start: p.index_time,
                stop: first.unwrap_or(p.end_time),
                event: first.is_some(),
                values: trt_post(p, true),
            });
        }
    }
    RowSet::new(vec!["trt".into(), "post".into()], cluster_labels(dataset), rows)
}

/// All-event rows: follow-up split at the index time and at every event.
/// Columns: `trt`, `post`.
pub fn build_all_event_rows(dataset: &CohortDataset) -> RowSet {
    let mut rows = Vec::new();
    for (cluster, p) in dataset.participants.iter().enumerate() {
        split_span(p.prior_start, p.end_time, &[p.index_time], &p.event_times, |start, stop, event| {
            rows.push(CountingProcessRow { cluster, start, stop, event, values: trt_post(p, stop > p.index_time) })
        });
    }
    RowSet::new(vec!["trt".into(), "post".into()], cluster_labels(dataset), rows)
}

/// Name of the indicator column for sub-period `m` (1-based).
pub fn gap_column(m: usize) -> String {
    format!("gap_{m}")
}

/// Prior-period rows partitioned into `gaps` sub-periods of `width` days
/// ending at the index time.
///
/// Sub-period `m` covers `(B - (M - m + 1) * width, B - (M - m) * width]`, so
/// `gap_M` is the one immediately before the index time. Time before
/// `B - M * width` is the reference period. Columns: `trt`, `gap_1` .. `gap_M`.
pub fn build_gap_rows(dataset: &CohortDataset, gaps: usize, width: f64) -> Result<RowSet, CohortError> {
    if gaps == 0 {
        return Err(CohortError::InvalidGaps("at least one sub-period is required".into()));
    }
    if !(width.is_finite() && width > 0.0) {
        return Err(CohortError::InvalidGaps(format!("sub-period width must be positive, got {width}")));
    }
    let mut rows = Vec::new();
    for (cluster, p) in dataset.participants.iter().enumerate() {
        let b = p.index_time;
        let boundaries: Vec<f64> = (1..=gaps).map(|k| b - k as f64 * width).collect();
        split_span(p.prior_start, b, &boundaries, &p.event_times, |start, stop, event| {
            let mut values = vec![0.0; gaps + 1];
            values[0] = p.group.indicator();
            // Sub-periods counted back from the index time: k = 1 is the last one.
            if let Some(k) = (1..=gaps).find(|&k| stop > b - k as f64 * width) {
                values[gaps - k + 1] = 1.0;
            }
            rows.push(CountingProcessRow { cluster, start, stop, event, values });
        });
    }
    let mut columns = vec!["trt".to_string()];
    columns.extend((1..=gaps).map(gap_column));
    Ok(RowSet::new(columns, cluster_labels(dataset), rows))
}
