//! Cox / Andersen-Gill partial likelihood over `(start, stop]` rows.
//!
//! A row is at risk at time `t` iff `start < t <= stop`, which handles left
//! truncation (post periods that do not restart the clock) and recurrent
//! events alike. Tied event times share one risk set (Breslow).

mod fit;
mod likelihood;
mod robust;

use thiserror::Error;

pub use fit::{fit, wald_ci, wald_interval, FitConfig, FitResult};
pub use likelihood::{evaluate, log_partial_likelihood, Evaluation};
pub use robust::{robust_clustered_variance, score_residuals};

#[derive(Debug, Clone, Error, PartialEq)]
pub enum FitError {
    #[error("no events")]
    NoEvents,

    #[error("design has no covariates")]
    EmptyDesign,

    #[error("malformed rows: {0}")]
    Malformed(String),

    #[error("coefficient vector has length {got}, design has {expected} columns")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("monotone likelihood: coefficient for {covariate} diverged to {value:.3}")]
    MonotoneLikelihood { covariate: String, value: f64 },

    #[error("Newton-Raphson did not converge in {iterations} iterations")]
    NotConverged { iterations: usize },

    #[error("information matrix is singular even after ridge inflation")]
    Singular,
}

/// Design matrix plus interval bookkeeping for one fit.
#[derive(Debug, Clone)]
pub struct SurvivalData {
    names: Vec<String>,
    start: Vec<f64>,
    stop: Vec<f64>,
    event: Vec<bool>,
    cluster: Vec<usize>,
    /// Row-major, `n x p`.
    x: Vec<f64>,
}

impl SurvivalData {
    pub fn new(
        names: Vec<String>,
        start: Vec<f64>,
        stop: Vec<f64>,
        event: Vec<bool>,
        cluster: Vec<usize>,
        x: Vec<f64>,
    ) -> Result<Self, FitError> {
        let n = start.len();
        let p = names.len();
        if stop.len() != n || event.len() != n || cluster.len() != n || x.len() != n * p {
            return Err(FitError::Malformed("column lengths disagree".into()));
        }
        if let Some(i) = (0..n).find(|&i| !(start[i] < stop[i]) || !start[i].is_finite() || !stop[i].is_finite()) {
            return Err(FitError::Malformed(format!("row {i} has start {} >= stop {}", start[i], stop[i])));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(FitError::Malformed("non-finite covariate".into()));
        }
        Ok(SurvivalData { names, start, stop, event, cluster, x })
    }

    /// Single-covariate rows with one cluster per row.
    pub fn single(start: &[f64], stop: &[f64], event: &[bool], x: &[f64]) -> Result<Self, FitError> {
        SurvivalData::new(
            vec!["x".into()],
            start.to_vec(),
            stop.to_vec(),
            event.to_vec(),
            (0..start.len()).collect(),
            x.to_vec(),
        )
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.start.len()
    }

    pub fn is_empty(&self) -> bool {
        self.start.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.names.len()
    }

    pub fn n_events(&self) -> usize {
        self.event.iter().filter(|&&e| e).count()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let p = self.dim();
        &self.x[i * p..(i + 1) * p]
    }

    pub fn start(&self) -> &[f64] {
        &self.start
    }

    pub fn stop(&self) -> &[f64] {
        &self.stop
    }

    pub fn event(&self) -> &[bool] {
        &self.event
    }

    pub fn cluster(&self) -> &[usize] {
        &self.cluster
    }

    /// Keeps only the listed columns, in the given order.
    pub fn select(&self, columns: &[usize]) -> SurvivalData {
        let p = self.dim();
        let x = (0..self.len())
            .flat_map(|i| columns.iter().map(move |&j| self.x[i * p + j]))
            .collect();
        SurvivalData {
            names: columns.iter().map(|&j| self.names[j].clone()).collect(),
            x,
            ..self.clone()
        }
    }

    /// Events with column `j` nonzero, split by whether column `by` is nonzero.
    pub fn events_where(&self, j: usize, by: usize) -> (usize, usize) {
        let mut counts = (0, 0);
        for i in (0..self.len()).filter(|&i| self.event[i] && self.row(i)[j] != 0.0) {
            if self.row(i)[by] != 0.0 {
                counts.1 += 1;
            } else {
                counts.0 += 1;
            }
        }
        counts
    }
}
