//! File-driven deterministic stand-in for both oracle roles.
//!
//! ```json
//! {
//!   "default_score": 2,
//!   "noise": false,
//!   "proposals": [
//!     {"note": "main screen", "when": {"activity": "Main", "dialog_open": false},
//!      "actions": [{"kind": "rotate"}, {"kind": "click", "feature": "escape_methods"}]}
//!   ],
//!   "scores": [
//!     {"when": {"dialog_open": true}, "action": {"kind": "rotate"}, "score": 9}
//!   ]
//! }
//! ```
//!
//! Rules match on the observation before the action; the first matching rule wins.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};

use super::{ExpandRequest, Expander, OracleError, OracleProposal, OracleScore, SimulateRequest, Simulator};
use crate::env::{ActionCommand, ActionKind, Observation, Orientation, SimAppSpec, Violation};

/// Predicate over an observation; absent fields match anything.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObservationMatch {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub activity: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub orientation: Option<Orientation>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dialog_open: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub crash: Option<bool>,
    /// Widget id that must be present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub has_widget: Option<String>,
}

impl ObservationMatch {
    pub fn matches(&self, obs: &Observation) -> bool {
        self.activity.as_ref().is_none_or(|a| *a == obs.activity)
            && self.orientation.is_none_or(|o| o == obs.orientation)
            && self.dialog_open.is_none_or(|d| d == obs.dialog_open)
            && self.crash.is_none_or(|c| c == obs.crash)
            && self.has_widget.as_ref().is_none_or(|w| obs.widgets.iter().any(|x| x.id == *w))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionSpec {
    pub kind: String,
    #[serde(default)]
    pub feature: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
}

impl ActionSpec {
    fn command(&self) -> Result<ActionCommand, String> {
        let kind: ActionKind = self.kind.parse().map_err(|e: crate::env::EnvError| e.to_string())?;
        ActionCommand::new(kind, self.feature.clone(), self.text.clone()).map_err(|e| e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProposalRule {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
    #[serde(default)]
    pub when: ObservationMatch,
    pub actions: Vec<ActionSpec>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoreRule {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
    #[serde(default)]
    pub when: ObservationMatch,
    /// A `set_text` rule without `text` matches any payload.
    pub action: ActionSpec,
    pub score: i64,
}

fn default_score() -> i64 {
    2
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptedOracleSpec {
    #[serde(default = "default_score")]
    pub default_score: i64,
    /// Adds a seeded offset in {-1, 0, +1} to every score, clamped to [0, 10].
    #[serde(default)]
    pub noise: bool,
    #[serde(default)]
    pub proposals: Vec<ProposalRule>,
    #[serde(default)]
    pub default_proposals: Vec<ActionSpec>,
    #[serde(default)]
    pub scores: Vec<ScoreRule>,
}

impl ScriptedOracleSpec {
    pub fn from_json(text: &str) -> Result<Self, OracleError> {
        serde_json::from_str(text)
            .map_err(|e| OracleError::Config(format!("line {}, column {}: {e}", e.line(), e.column())))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, OracleError> {
        let path = path.as_ref();
        let text =
            std::fs::read_to_string(path).map_err(|e| OracleError::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// All invariant violations: score ranges and action validity.
    pub fn check(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let mut v = |location: String, message: String| out.push(Violation { location, message });
        if !(0..=10).contains(&self.default_score) {
            v("default_score".into(), format!("{} outside [0, 10]", self.default_score));
        }
        for (i, rule) in self.proposals.iter().enumerate() {
            if rule.actions.is_empty() {
                v(format!("proposals[{i}].actions"), "empty proposal list".into());
            }
            for (j, a) in rule.actions.iter().enumerate() {
                if let Err(e) = a.command() {
                    v(format!("proposals[{i}].actions[{j}]"), e);
                }
            }
        }
        for (j, a) in self.default_proposals.iter().enumerate() {
            if let Err(e) = a.command() {
                v(format!("default_proposals[{j}]"), e);
            }
        }
        for (i, rule) in self.scores.iter().enumerate() {
            if !(0..=10).contains(&rule.score) {
                v(format!("scores[{i}].score"), format!("{} outside [0, 10]", rule.score));
            }
            let any_text = rule.action.kind.trim() == "set_text" && rule.action.text.is_none();
            if !any_text {
                if let Err(e) = rule.action.command() {
                    v(format!("scores[{i}].action"), e);
                }
            } else if rule.action.feature.trim().is_empty() {
                v(format!("scores[{i}].action"), "set_text requires a target widget".into());
            }
        }
        out
    }

    /// Widget references that no state of `app` declares.
    pub fn check_against(&self, app: &SimAppSpec) -> Vec<Violation> {
        let known = |f: &str| app.states().values().any(|s| s.widgets.iter().any(|w| w.answers_to(f)));
        let mut out = Vec::new();
        let mut check = |loc: String, a: &ActionSpec| {
            let kind = a.kind.parse::<ActionKind>();
            let targets: Vec<&str> = match kind {
                Ok(ActionKind::MultipleSelect) => a.feature.split(',').map(str::trim).collect(),
                Ok(k) if k.is_global() => vec![],
                _ => vec![a.feature.trim()],
            };
            for t in targets.into_iter().filter(|t| !t.is_empty()) {
                if !known(t) {
                    out.push(Violation { location: loc.clone(), message: format!("widget {t:?} appears in no app state") });
                }
            }
        };
        for (i, rule) in self.proposals.iter().enumerate() {
            for (j, a) in rule.actions.iter().enumerate() {
                check(format!("proposals[{i}].actions[{j}]"), a);
            }
        }
        for (i, rule) in self.scores.iter().enumerate() {
            check(format!("scores[{i}].action"), &rule.action);
        }
        out
    }
}

type ActionKey = (ActionKind, String, Option<String>);

#[derive(Debug, Clone)]
pub struct ScriptedOracle {
    proposals: Vec<(ObservationMatch, Vec<ActionCommand>)>,
    default_proposals: Vec<ActionCommand>,
    scores: Vec<(ObservationMatch, ActionKey, u8)>,
    default_score: u8,
    noise: bool,
    seed: u64,
}

impl ScriptedOracle {
    pub fn new(spec: &ScriptedOracleSpec, seed: u64) -> Result<Self, OracleError> {
        let violations = spec.check();
        if !violations.is_empty() {
            let lines: Vec<String> = violations.iter().map(|v| v.to_string()).collect();
            return Err(OracleError::Config(format!("invalid scripted oracle: {}", lines.join("; "))));
        }
        let cmds = |list: &[ActionSpec]| list.iter().map(|a| a.command().expect("checked")).collect::<Vec<_>>();
        let scores = spec
            .scores
            .iter()
            .map(|r| {
                let kind: ActionKind = r.action.kind.parse().expect("checked");
                let feature = if kind.is_global() { String::new() } else { r.action.feature.trim().to_lowercase() };
                (r.when.clone(), (kind, feature, r.action.text.clone()), r.score as u8)
            })
            .collect();
        Ok(ScriptedOracle {
            proposals: spec.proposals.iter().map(|r| (r.when.clone(), cmds(&r.actions))).collect(),
            default_proposals: cmds(&spec.default_proposals),
            scores,
            default_score: spec.default_score as u8,
            noise: spec.noise,
            seed,
        })
    }

    pub fn scripted_propose(&self, obs: &Observation, k: Option<usize>) -> Vec<OracleProposal> {
        let list = self
            .proposals
            .iter()
            .find(|(when, _)| when.matches(obs))
            .map(|(_, actions)| actions.as_slice())
            .unwrap_or(&self.default_proposals);
        let take = k.unwrap_or(usize::MAX);
        list.iter().take(take).map(OracleProposal::from).collect()
    }

    pub fn scripted_score(&self, before: &Observation, action: &ActionCommand) -> OracleScore {
        let (kind, feature, text) = action.normalized_key();
        let base = self
            .scores
            .iter()
            .find(|(when, (k, f, t), _)| {
                when.matches(before) && *k == kind && *f == feature && (t.is_none() || *t == text)
            })
            .map(|(_, _, s)| *s)
            .unwrap_or(self.default_score);
        let raw = if self.noise { (base as i16 + self.noise_offset(before, action)).clamp(0, 10) as u8 } else { base };
        OracleScore::new(raw).expect("clamped")
    }

    fn noise_offset(&self, before: &Observation, action: &ActionCommand) -> i16 {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update(before.digest().0.to_le_bytes());
        h.update(action.to_line().as_bytes());
        (h.finalize()[0] % 3) as i16 - 1
    }
}

impl Expander for ScriptedOracle {
    fn propose(&self, req: &ExpandRequest<'_>) -> Result<Vec<OracleProposal>, OracleError> {
        Ok(self.scripted_propose(req.observation, req.k))
    }
}

impl Simulator for ScriptedOracle {
    fn score(&self, req: &SimulateRequest<'_>) -> Result<OracleScore, OracleError> {
        Ok(self.scripted_score(req.before, req.target))
    }
}
