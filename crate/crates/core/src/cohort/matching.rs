//! 1:1 exact matching with the risk-set condition.
//!
//! Treated participants are processed in ascending index time (input order
//! breaks ties). Each takes one unused control with identical key values that
//! is still under follow-up at its index time, chosen by [`ControlChoice`].

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::ops::Bound;

use ordered_float::OrderedFloat;
use serde::Serialize;

use super::{CohortDataset, CohortError, Group, Participant};

/// Which eligible control a treated participant receives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlChoice {
    /// The first eligible control in pool order.
    #[default]
    PoolOrder,
    /// The control whose follow-up ends soonest after the index time; pool
    /// order breaks ties. Leaves long follow-up for later treated participants.
    ClosestEnd,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MatchReport {
    pub pairs: usize,
    pub treated_offered: usize,
    pub pool_offered: usize,
    pub unmatched_treated: Vec<String>,
    pub unused_controls: usize,
    /// Pairs formed per combination of key values (joined with `|`).
    pub key_distribution: BTreeMap<String, usize>,
}

#[derive(Debug, Clone)]
pub struct MatchOutcome {
    pub dataset: CohortDataset,
    pub report: MatchReport,
}

fn key_of(p: &Participant, keys: &[String]) -> Result<Vec<String>, CohortError> {
    keys.iter()
        .map(|k| {
            p.covariates
                .get(k)
                .map(|v| v.to_string())
                .ok_or_else(|| CohortError::MissingKey { id: p.id.clone(), key: k.clone() })
        })
        .collect()
}

/// Matches each treated participant to at most one control from `pool`.
///
/// The matched control's index time is set to its partner's; the pair id is
/// the treated participant's id. Output lists each treated participant
/// followed by its control, in the input order of the treated.
pub fn match_controls(
    treated: &[Participant],
    pool: &[Participant],
    keys: &[String],
) -> Result<MatchOutcome, CohortError> {
    match_controls_with(treated, pool, keys, ControlChoice::default())
}

pub fn match_controls_with(
    treated: &[Participant],
    pool: &[Participant],
    keys: &[String],
    choice: ControlChoice,
) -> Result<MatchOutcome, CohortError> {
    type Slot = (OrderedFloat<f64>, usize);
    let mut available: HashMap<Vec<String>, BTreeSet<Slot>> = HashMap::new();
    for (i, c) in pool.iter().enumerate() {
        if c.group != Group::Control {
            return Err(CohortError::TreatedInPool(c.id.clone()));
        }
        available
            .entry(key_of(c, keys)?)
            .or_default()
            .insert(match choice {
                ControlChoice::ClosestEnd => (OrderedFloat(c.end_time), i),
                ControlChoice::PoolOrder => (OrderedFloat(0.0), i),
            });
    }
    let treated_keys = treated.iter().map(|t| key_of(t, keys)).collect::<Result<Vec<_>, _>>()?;

    let mut order: Vec<usize> = (0..treated.len()).collect();
    order.sort_by(|&a, &b| treated[a].index_time.total_cmp(&treated[b].index_time).then(a.cmp(&b)));

    let mut partner: Vec<Option<usize>> = vec![None; treated.len()];
    for &ti in &order {
        let t = &treated[ti];
        let Some(slots) = available.get_mut(&treated_keys[ti]) else { continue };
        let eligible = |&&(_, ci): &&Slot| pool[ci].end_time > t.index_time && pool[ci].prior_start <= t.index_time;
        let chosen = match choice {
            ControlChoice::ClosestEnd => {
                let lower = Bound::Excluded((OrderedFloat(t.index_time), usize::MAX));
                slots.range((lower, Bound::Unbounded)).find(eligible).copied()
            }
            ControlChoice::PoolOrder => slots.iter().find(eligible).copied(),
        };
        if let Some(slot) = chosen {
            slots.remove(&slot);
            partner[ti] = Some(slot.1);
        }
    }

    let mut participants = Vec::new();
    let mut unmatched_treated = Vec::new();
    let mut key_distribution = BTreeMap::new();
    for (ti, t) in treated.iter().enumerate() {
        let Some(ci) = partner[ti] else {
            unmatched_treated.push(t.id.clone());
            continue;
        };
        let pair_id = t.id.clone();
        participants.push(Participant { pair_id: Some(pair_id.clone()), ..t.clone() });
        participants.push(Participant {
            pair_id: Some(pair_id),
            index_time: t.index_time,
            ..pool[ci].clone()
        });
        *key_distribution.entry(treated_keys[ti].join("|")).or_insert(0) += 1;
    }

    let pairs = participants.len() / 2;
    if pairs == 0 {
        return Err(CohortError::NoEligiblePairs { unmatched: treated.len() });
    }
    Ok(MatchOutcome {
        dataset: CohortDataset::new(participants, true),
        report: MatchReport {
            pairs,
            treated_offered: treated.len(),
            pool_offered: pool.len(),
            unmatched_treated,
            unused_controls: pool.len() - pairs,
            key_distribution,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::super::{validate, Covariate};
    use super::*;

    fn person(id: &str, group: Group, index: f64, end: f64, z: f64) -> Participant {
        Participant::new(id, group, 0.0, index, end).with_covariate("Z", Covariate::Number(z))
    }

    fn keys() -> Vec<String> {
        vec!["Z".to_string()]
    }

    #[test]
    fn control_inherits_index_time() {
        let t = [person("t", Group::Treated, 50.0, 300.0, 1.0)];
        let pool = [person("c", Group::Control, 999.0, 200.0, 1.0)];
        let out = match_controls(&t, &pool, &keys()).unwrap();
        let c = &out.dataset.participants[1];
        assert_eq!(c.id, "c");
        assert_eq!(c.index_time, 50.0);
        assert_eq!(c.pair_id.as_deref(), Some("t"));
        assert!(validate(&out.dataset).is_empty());
    }

    #[test]
    fn risk_set_condition() {
        let t = [person("t", Group::Treated, 50.0, 300.0, 1.0)];
        let pool = [person("c", Group::Control, 0.0, 40.0, 1.0)];
        assert!(matches!(
            match_controls(&t, &pool, &keys()),
            Err(CohortError::NoEligiblePairs { unmatched: 1 })
        ));
        // Ending exactly at the index time is not "still under follow-up".
        let pool = [person("c", Group::Control, 0.0, 50.0, 1.0)];
        assert!(match_controls(&t, &pool, &keys()).is_err());
    }

    #[test]
    fn exact_keys_and_choice_rules() {
        let t = [
            person("t1", Group::Treated, 60.0, 300.0, 1.0),
            person("t2", Group::Treated, 20.0, 300.0, 1.0),
            person("t3", Group::Treated, 20.0, 300.0, 0.0),
        ];
        let pool = [
            person("c1", Group::Control, 0.0, 250.0, 1.0),
            person("c2", Group::Control, 0.0, 70.0, 1.0),
            person("c3", Group::Control, 0.0, 70.0, 1.0),
            person("c4", Group::Control, 0.0, 500.0, 1.0),
        ];
        let out = match_controls_with(&t, &pool, &keys(), ControlChoice::ClosestEnd).unwrap();
        // t2 goes first (earlier index) and takes c2 (surplus 50, earlier than c3);
        // t1 then takes c3 (surplus 10).
        let ids: Vec<_> = out.dataset.participants.iter().map(|p| p.id.as_str()).collect();
        assert_eq!(ids, vec!["t1", "c3", "t2", "c2"]);
        assert_eq!(out.report.unmatched_treated, vec!["t3".to_string()]);

        // In pool order t2 takes c1, and t1 takes c2.
        let out = match_controls(&t, &pool, &keys()).unwrap();
        let ids: Vec<_> = out.dataset.participants.iter().map(|p| p.id.as_str()).collect();
        assert_eq!(ids, vec!["t1", "c2", "t2", "c1"]);
        assert_eq!(out.report.unmatched_treated, vec!["t3".to_string()]);
        assert_eq!(out.report.unused_controls, 2);
        assert_eq!(out.report.key_distribution.get("1"), Some(&2));
    }

    #[test]
    fn rejects_treated_in_pool_and_missing_key() {
        let t = [person("t", Group::Treated, 50.0, 300.0, 1.0)];
        let pool = [person("x", Group::Treated, 0.0, 400.0, 1.0)];
        assert!(matches!(match_controls(&t, &pool, &keys()), Err(CohortError::TreatedInPool(_))));
        let pool = [Participant::new("c", Group::Control, 0.0, 0.0, 400.0)];
        assert!(matches!(match_controls(&t, &pool, &keys()), Err(CohortError::MissingKey { .. })));
    }

    #[test]
    fn each_control_used_once() {
        let t: Vec<_> = (0..5).map(|i| person(&format!("t{i}"), Group::Treated, 10.0 * i as f64, 300.0, 1.0)).collect();
        let pool: Vec<_> = (0..3).map(|i| person(&format!("c{i}"), Group::Control, 0.0, 100.0, 1.0)).collect();
        let out = match_controls(&t, &pool, &keys()).unwrap();
        assert_eq!(out.report.pairs, 3);
        assert!(validate(&out.dataset).is_empty());
    }
}
