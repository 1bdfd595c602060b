//! Action execution: the environment contract, the six-action vocabulary, observations,
//! and a deterministic simulated-app backend.

mod action;
mod observation;
mod sim;
mod trace_file;

use thiserror::Error;

pub use action::{ActionCommand, ActionKind};
pub use observation::{observation_digest, Observation, ObservationDigest, Orientation, Widget};
pub use sim::{load_sim_app, ActionPattern, SimAppFile, SimAppSpec, SimEnvironment, SimState, SimTransition, Violation};
pub use trace_file::{TraceFile, TraceFileStep};

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("unknown action kind {0:?} (expected one of click, long_click, set_text, multiple_select, rotate, back)")]
    UnknownActionKind(String),
    #[error("invalid action: {0}")]
    InvalidAction(String),
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("invalid app spec:\n{}", .0.iter().map(|v| format!("  - {v}")).collect::<Vec<_>>().join("\n"))]
    InvalidSpec(Vec<Violation>),
    #[error("environment is in a crash state; reset before executing actions")]
    Crashed,
    #[error("i/o error: {0}")]
    Io(String),
    #[error("device error: {0}")]
    Device(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransitionResult {
    pub observation: Observation,
    /// False when no transition matched; the observation is then the pre-action one.
    pub applied: bool,
}

/// The action-execution contract the search engine drives.
///
/// The simulated backend implements it here. A real-device backend (UI automation over
/// adb, screenshots as attachments) plugs in by implementing the same four methods.
pub trait Environment {
    /// Restart the app from a clean state and return the initial observation.
    fn reset(&mut self) -> Result<Observation, EnvError>;

    fn execute(&mut self, action: &ActionCommand) -> Result<TransitionResult, EnvError>;

    fn observe(&self) -> Result<Observation, EnvError>;

    /// Actions that can be issued on the current screen, used by random rollouts.
    fn executable_actions(&self) -> Vec<ActionCommand>;
}

impl<E: Environment + ?Sized> Environment for &mut E {
    fn reset(&mut self) -> Result<Observation, EnvError> {
        (**self).reset()
    }
    fn execute(&mut self, action: &ActionCommand) -> Result<TransitionResult, EnvError> {
        (**self).execute(action)
    }
    fn observe(&self) -> Result<Observation, EnvError> {
        (**self).observe()
    }
    fn executable_actions(&self) -> Vec<ActionCommand> {
        (**self).executable_actions()
    }
}
