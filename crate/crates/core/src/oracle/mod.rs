//! The two model-backed roles that steer the search.
//!
//! The expander proposes candidate actions for a screen; the simulator scores one
//! executed action from 0 to 10. Both are available as a remote chat-completions client
//! ([`LlmOracle`] over [`RemoteChatClient`]) and as a deterministic file-driven double
//! ([`ScriptedOracle`]).

mod parse;
mod prompt;
mod remote;
mod scripted;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{ActionCommand, ActionKind, EnvError, Observation};
use crate::AblationFlags;

pub use parse::{parse_expand_response, parse_simulate_response, render_proposals};
pub use prompt::{build_expand_prompt, build_simulate_prompt, PromptBundle, PromptTemplates, HISTORY_LIMIT};
pub use remote::{RemoteChatClient, RemoteConfig, TokenUsage, API_KEY_ENV};
pub use scripted::{ObservationMatch, ProposalRule, ScoreRule, ScriptedOracle, ScriptedOracleSpec};

pub const DEFAULT_RETRIES: usize = 3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("unparsable response: {0}")]
    RetryableParse(String),
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("authentication failure: {0}")]
    Auth(String),
    #[error("no usable response after {attempts} requests: {last}")]
    RetriesExhausted { attempts: usize, last: String },
    #[error("oracle configuration: {0}")]
    Config(String),
}

/// One expander suggestion.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct OracleProposal {
    pub action: ActionKind,
    pub feature: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
}

impl OracleProposal {
    pub fn to_command(&self) -> Result<ActionCommand, EnvError> {
        ActionCommand::new(self.action, self.feature.clone(), self.text.clone())
    }

    pub fn dedup_key(&self) -> (ActionKind, String, Option<String>) {
        (self.action, self.feature.trim().to_lowercase(), self.text.clone())
    }
}

impl From<&ActionCommand> for OracleProposal {
    fn from(a: &ActionCommand) -> Self {
        OracleProposal { action: a.kind(), feature: a.feature().to_string(), text: a.text().map(str::to_string) }
    }
}

/// Simulator verdict, always within 0..=10.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct OracleScore(u8);

impl OracleScore {
    pub fn new(raw: u8) -> Result<Self, OracleError> {
        if raw > 10 {
            return Err(OracleError::RetryableParse(format!("score {raw} outside [0, 10]")));
        }
        Ok(OracleScore(raw))
    }

    pub fn raw(self) -> u8 {
        self.0
    }
}

impl TryFrom<u8> for OracleScore {
    type Error = OracleError;
    fn try_from(v: u8) -> Result<Self, Self::Error> {
        OracleScore::new(v)
    }
}

impl From<OracleScore> for u8 {
    fn from(s: OracleScore) -> u8 {
        s.0
    }
}

/// A completed step on the current path, as shown to the oracles.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub action: ActionCommand,
    /// Short description of the screen after the action.
    pub outcome: String,
}

pub struct ExpandRequest<'a> {
    pub report: &'a str,
    pub app_name: &'a str,
    pub observation: &'a Observation,
    pub history: &'a [HistoryEntry],
    /// `None` asks for every plausible action.
    pub k: Option<usize>,
    pub flags: AblationFlags,
}

pub struct SimulateRequest<'a> {
    pub report: &'a str,
    pub history: &'a [HistoryEntry],
    pub target: &'a ActionCommand,
    pub before: &'a Observation,
    pub after: &'a Observation,
    pub flags: AblationFlags,
}

pub trait Expander {
    fn propose(&self, req: &ExpandRequest<'_>) -> Result<Vec<OracleProposal>, OracleError>;
}

pub trait Simulator: Sync {
    fn score(&self, req: &SimulateRequest<'_>) -> Result<OracleScore, OracleError>;
}

/// A chat-completions style backend: one prompt in, one reply text out.
pub trait ChatClient: Send + Sync {
    fn complete(&self, bundle: &PromptBundle) -> Result<String, OracleError>;
}

impl<C: ChatClient + ?Sized> ChatClient for &C {
    fn complete(&self, bundle: &PromptBundle) -> Result<String, OracleError> {
        (**self).complete(bundle)
    }
}

fn call_with_repair<T>(
    client: &dyn ChatClient,
    bundle: &PromptBundle,
    retries: usize,
    parse: impl Fn(&str) -> Result<T, OracleError>,
) -> Result<T, OracleError> {
    let mut current = bundle.clone();
    let mut last = String::new();
    for attempt in 0..=retries {
        let reply = client.complete(&current)?;
        match parse(&reply) {
            Ok(v) => return Ok(v),
            Err(OracleError::RetryableParse(why)) => {
                log::debug!("attempt {} unparsable: {why}", attempt + 1);
                last = why;
                current = bundle.with_repair();
            }
            Err(other) => return Err(other),
        }
    }
    Err(OracleError::RetriesExhausted { attempts: retries + 1, last })
}

/// Issues the expand prompt, re-asking with a format reminder on unparsable replies.
pub fn expander_call(
    client: &dyn ChatClient,
    bundle: &PromptBundle,
    k: Option<usize>,
    retries: usize,
) -> Result<Vec<OracleProposal>, OracleError> {
    call_with_repair(client, bundle, retries, |text| parse_expand_response(text, k))
}

pub fn simulator_call(client: &dyn ChatClient, bundle: &PromptBundle, retries: usize) -> Result<OracleScore, OracleError> {
    call_with_repair(client, bundle, retries, parse_simulate_response)
}

/// Both roles backed by one chat client.
pub struct LlmOracle<C> {
    pub client: C,
    pub templates: PromptTemplates,
    pub retries: usize,
}

impl<C: ChatClient> LlmOracle<C> {
    pub fn new(client: C) -> Self {
        LlmOracle { client, templates: PromptTemplates::default(), retries: DEFAULT_RETRIES }
    }
}

impl<C: ChatClient> Expander for LlmOracle<C> {
    fn propose(&self, req: &ExpandRequest<'_>) -> Result<Vec<OracleProposal>, OracleError> {
        let bundle =
            build_expand_prompt(&self.templates, req.report, req.app_name, req.observation, req.history, req.k, req.flags);
        expander_call(&self.client, &bundle, req.k, self.retries)
    }
}

impl<C: ChatClient> Simulator for LlmOracle<C> {
    fn score(&self, req: &SimulateRequest<'_>) -> Result<OracleScore, OracleError> {
        let bundle =
            build_simulate_prompt(&self.templates, req.report, req.history, req.target, req.before, req.after, req.flags);
        simulator_call(&self.client, &bundle, self.retries)
    }
}
