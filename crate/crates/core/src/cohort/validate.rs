use std::collections::HashMap;
use std::fmt;

use serde::Serialize;

use super::{CohortDataset, Group};

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ViolationKind {
    NonFiniteTime,
    PeriodOrder,
    EventOutsideSpan { time: f64 },
    EventsNotIncreasing { time: f64 },
    DuplicateId,
    Unpaired,
    PairConflict { pair_id: String },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub participant: String,
    #[serde(flatten)]
    pub kind: ViolationKind,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let id = &self.participant;
        match &self.kind {
            ViolationKind::NonFiniteTime => write!(f, "{id}: non-finite period boundary or event time"),
            ViolationKind::PeriodOrder => write!(f, "{id}: period boundaries not ordered A <= B <= C"),
            ViolationKind::EventOutsideSpan { time } => write!(f, "{id}: event {time} not in (A,C]"),
            ViolationKind::EventsNotIncreasing { time } => {
                write!(f, "{id}: event {time} does not strictly follow the previous event")
            }
            ViolationKind::DuplicateId => write!(f, "{id}: duplicate participant id"),
            ViolationKind::Unpaired => write!(f, "{id}: unpaired"),
            ViolationKind::PairConflict { pair_id } => {
                write!(f, "{id}: pair {pair_id} does not link exactly one treated and one control")
            }
        }
    }
}

/// Lists every invariant violation; an empty list means the dataset is well formed.
pub fn validate(dataset: &CohortDataset) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut push = |id: &str, kind| out.push(Violation { participant: id.to_string(), kind });

    let mut seen: HashMap<&str, usize> = HashMap::new();
    for p in &dataset.participants {
        *seen.entry(p.id.as_str()).or_default() += 1;
        if seen[p.id.as_str()] == 2 {
            push(&p.id, ViolationKind::DuplicateId);
        }

        let bounds = [p.prior_start, p.index_time, p.end_time];
        if bounds.iter().chain(&p.event_times).any(|t| !t.is_finite()) {
            push(&p.id, ViolationKind::NonFiniteTime);
            continue;
        }
        if !(p.prior_start <= p.index_time && p.index_time <= p.end_time) {
            push(&p.id, ViolationKind::PeriodOrder);
        }
        let mut previous = f64::NEG_INFINITY;
        for &t in &p.event_times {
            if t <= previous {
                push(&p.id, ViolationKind::EventsNotIncreasing { time: t });
            }
            if !(t > p.prior_start && t <= p.end_time) {
                push(&p.id, ViolationKind::EventOutsideSpan { time: t });
            }
            previous = t;
        }
    }

    let mut by_pair: HashMap<&str, Vec<(usize, Group)>> = HashMap::new();
    for (i, p) in dataset.participants.iter().enumerate() {
        match p.pair_id.as_deref() {
            Some(pair) => by_pair.entry(pair).or_default().push((i, p.group)),
            None if dataset.matched => push(&p.id, ViolationKind::Unpaired),
            None => {}
        }
    }
    let mut conflicts: Vec<(usize, String, bool)> = Vec::new();
    for (pair, members) in &by_pair {
        let treated = members.iter().filter(|m| m.1 == Group::Treated).count();
        let control = members.len() - treated;
        if treated == 1 && control == 1 {
            continue;
        }
        let lone = members.len() == 1;
        for &(i, _) in members {
            conflicts.push((i, pair.to_string(), lone));
        }
    }
    conflicts.sort();
    for (i, pair_id, lone) in conflicts {
        let id = &dataset.participants[i].id;
        if lone {
            push(id, ViolationKind::Unpaired);
        } else {
            push(id, ViolationKind::PairConflict { pair_id });
        }
    }
    out
}
