//! Crate error type.

use thiserror::Error;

/// Everything that can go wrong across the analysis pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration value; the message names the offending key.
    #[error("config: {0}")]
    Config(String),

    /// Config file could not be parsed; message carries line/column anchors.
    #[error("config parse ({path}): {message}")]
    ConfigParse { path: String, message: String },

    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    /// Link distance outside the validity range of the path-loss model.
    #[error("{model}: link distance {distance_m} m outside validity range [{min_m}, {max_m}] m")]
    DistanceOutOfRange {
        model: &'static str,
        distance_m: f64,
        min_m: f64,
        max_m: f64,
    },

    /// Input sequences disagree on length or hop count.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// Slot index past the end of the recorded horizon.
    #[error("slot {slot} out of range (horizon {horizon})")]
    SlotOutOfRange { slot: usize, horizon: usize },

    /// Backlog never stayed positive for two consecutive slots.
    #[error("no busy period of length >= 2 in trace")]
    NoBusyPeriod,

    #[error("insufficient samples: need at least {needed}, got {got}")]
    InsufficientSamples { needed: usize, got: usize },

    /// No feasible theta in the search bracket. Carries the evaluated
    /// (theta, slack) profile so callers can see how infeasible the run was.
    #[error("infeasible: {message}")]
    Infeasible {
        message: String,
        slack_profile: Vec<(f64, f64)>,
    },

    /// Positive drift where a nonpositive-drift process was required.
    #[error("unstable scenario: {0}")]
    Unstable(String),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    /// Numerically degenerate case (zero step scale, unbounded partition).
    #[error("degenerate: {0}")]
    Degenerate(String),

    /// Error raised while running a named scenario.
    #[error("scenario {scenario}: {source}")]
    Scenario {
        scenario: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    /// Wraps the error with the scenario it occurred in.
    pub fn in_scenario(self, id: &str) -> Error {
        Error::Scenario {
            scenario: id.to_string(),
            source: Box::new(self),
        }
    }
}
