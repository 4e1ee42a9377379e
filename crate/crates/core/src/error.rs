use thiserror::Error;

/// Errors raised while loading or validating a scenario document.
#[derive(Debug, Error, PartialEq)]
pub enum ScenarioError {
    #[error("scenario: parse error: {0}")]
    Parse(String),
    #[error("scenario: invalid `{field}`: {reason}")]
    Invalid { field: String, reason: String },
    #[error("scenario: unknown preset `{0}` (expected FF or NF)")]
    UnknownPreset(String),
}

impl ScenarioError {
    pub(crate) fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        ScenarioError::Invalid {
            field: field.into(),
            reason: reason.into(),
        }
    }
}

/// Errors from channel generation and the channel dump format.
#[derive(Debug, Error)]
pub enum ChannelError {
    #[error("channel: coincident points, phase undefined")]
    CoincidentPoints,
    #[error("channel: negative Rician factor {0}")]
    NegativeKappa(f64),
    #[error("channel: non-positive distance {0} m")]
    NonPositiveDistance(f64),
    #[error("channel: unknown direct-link model `{0}`")]
    UnknownModel(String),
    #[error("channel: malformed channel dump: {0}")]
    Format(String),
    #[error("channel: {0}")]
    Io(#[from] std::io::Error),
}

/// Errors from the tile model.
#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("ris_model: projected configuration requested before projection was applied")]
    NotProjected,
    #[error("ris_model: dimension mismatch: {0}")]
    Dimension(String),
}

/// Failures of the numerical solvers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("precoder_po: infeasible SINR targets ({0})")]
    Infeasible(String),
    #[error("{module}: numerical failure: {reason}")]
    NumericalFailure { module: &'static str, reason: String },
}

#[derive(Debug, Error)]
pub enum AoError {
    #[error("ao_driver: PO failed at iteration {iteration}: {source}")]
    Po {
        iteration: usize,
        #[source]
        source: SolverError,
    },
    #[error("ao_driver: TO2 failed at iteration {iteration}: {source}")]
    To2 {
        iteration: usize,
        #[source]
        source: SolverError,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("experiments: invalid spec: {0}")]
    Spec(String),
    #[error("experiments: result table is empty")]
    EmptyTable,
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error("experiments: I/O failure: {0}")]
    Io(#[from] std::io::Error),
}
