use thiserror::Error;

use crate::cohort::CohortError;
use crate::survival::FitError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Cohort(#[from] CohortError),

    #[error("{stage}: {source}")]
    Fit {
        stage: &'static str,
        #[source]
        source: FitError,
    },

    #[error("bootstrap failed: {0}")]
    Bootstrap(String),

    #[error("every matched pair was excluded while building the corrected control set")]
    AllPairsDropped,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid scenario: {0}")]
    Scenario(String),
}

impl Error {
    pub(crate) fn fit(stage: &'static str) -> impl FnOnce(FitError) -> Error {
        move |source| Error::Fit { stage, source }
    }

    /// True for failures of the numerical fitting machinery, as opposed to bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::Fit { .. } | Error::Bootstrap(_) | Error::AllPairsDropped)
    }
}
