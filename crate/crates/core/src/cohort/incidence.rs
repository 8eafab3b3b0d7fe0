use std::fmt;

use serde::Serialize;

use super::{CohortDataset, Group};

pub const DAYS_PER_YEAR: f64 = 365.25;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct IncidenceCell {
    pub events: usize,
    pub person_years: f64,
}

impl IncidenceCell {
    /// Events per person-year; zero when there is no person-time.
    pub fn rate(&self) -> f64 {
        if self.person_years > 0.0 {
            self.events as f64 / self.person_years
        } else {
            0.0
        }
    }
}

/// `rate (events/person-years)`, e.g. `3.39 (441/130)`.
impl fmt::Display for IncidenceCell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.2} ({}/{:.0})", self.rate(), self.events, self.person_years)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct IncidenceTable {
    pub treated_prior: IncidenceCell,
    pub treated_post: IncidenceCell,
    pub control_prior: IncidenceCell,
    pub control_post: IncidenceCell,
}

impl IncidenceTable {
    pub fn cell(&self, group: Group, post: bool) -> &IncidenceCell {
        match (group, post) {
            (Group::Treated, false) => &self.treated_prior,
            (Group::Treated, true) => &self.treated_post,
            (Group::Control, false) => &self.control_prior,
            (Group::Control, true) => &self.control_post,
        }
    }
}

/// Event counts and person-years by group and period.
pub fn incidence_table(dataset: &CohortDataset) -> IncidenceTable {
    let mut table = IncidenceTable::default();
    for p in &dataset.participants {
        let (prior, post) = match p.group {
            Group::Treated => (&mut table.treated_prior, &mut table.treated_post),
            Group::Control => (&mut table.control_prior, &mut table.control_post),
        };
        prior.events += p.prior_events().count();
        prior.person_years += p.prior_span() / DAYS_PER_YEAR;
        post.events += p.post_events().count();
        post.person_years += p.post_span() / DAYS_PER_YEAR;
    }
    table
}

#[cfg(test)]
mod tests {
    use super::super::Participant;
    use super::*;

    #[test]
    fn table_style_cells() {
        let cell = IncidenceCell { events: 441, person_years: 130.0 };
        assert_eq!(cell.to_string(), "3.39 (441/130)");
        let cell = IncidenceCell { events: 222, person_years: 286.0 };
        assert_eq!(cell.to_string(), "0.78 (222/286)");
        assert_eq!(IncidenceCell { events: 0, person_years: 4.0 }.rate(), 0.0);
    }

    #[test]
    fn counts_by_group_and_period() {
        let people = vec![
            Participant::new("t", Group::Treated, 0.0, 365.25, 730.5).with_events([10.0, 365.25, 400.0]),
            Participant::new("c", Group::Control, 0.0, 365.25, 365.25 * 3.0),
        ];
        let t = incidence_table(&CohortDataset::new(people, false));
        assert_eq!(t.treated_prior, IncidenceCell { events: 2, person_years: 1.0 });
        assert_eq!(t.treated_post, IncidenceCell { events: 1, person_years: 1.0 });
        assert_eq!(t.control_post.events, 0);
        assert_eq!(t.cell(Group::Control, true).to_string(), "0.00 (0/2)");
    }
}
