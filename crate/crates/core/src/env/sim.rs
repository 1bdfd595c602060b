//! Deterministic simulated app driven by a declarative state-machine file.
//!
//! File layout (JSON):
//!
//! ```json
//! {
//!   "name": "FakeStandby",
//!   "initial": "State#1",
//!   "states": {
//!     "State#1": { "activity": "Main", "orientation": "portrait", "dialog_open": false,
//!                  "crash": false, "widgets": [{"id": "escape_methods", "label": "Escape methods"}],
//!                  "attachment": "placeholder bytes" }
//!   },
//!   "transitions": [
//!     { "from": "State#1", "action": {"kind": "click", "feature": "escape_methods"}, "to": "State#2" }
//!   ]
//! }
//! ```
//!
//! A `rotate` with no declared transition toggles the orientation and keeps the state.
//! Any other unmatched action is a no-op.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{ActionCommand, ActionKind, EnvError, Environment, Observation, Orientation, TransitionResult, Widget};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimState {
    pub activity: String,
    #[serde(default)]
    pub orientation: Orientation,
    #[serde(default)]
    pub dialog_open: bool,
    #[serde(default)]
    pub crash: bool,
    #[serde(default)]
    pub widgets: Vec<Widget>,
    /// Placeholder screenshot bytes, stored as text.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attachment: Option<String>,
}

/// Left-hand side of a transition. `text: None` matches any `set_text` payload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionPattern {
    pub kind: String,
    #[serde(default)]
    pub feature: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimTransition {
    pub from: String,
    pub action: ActionPattern,
    pub to: String,
}

/// Unvalidated file contents; see [`SimAppSpec`] for the checked form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimAppFile {
    #[serde(default)]
    pub name: String,
    /// Optional bug report bundled with the scenario.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report: Option<String>,
    pub initial: String,
    pub states: BTreeMap<String, SimState>,
    #[serde(default)]
    pub transitions: Vec<SimTransition>,
}

/// One violated invariant, with a location such as `transitions[2].to`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub location: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.location, self.message)
    }
}

type TransitionKey = (String, ActionKind, String);

/// A validated simulated app.
#[derive(Debug, Clone)]
pub struct SimAppSpec {
    file: SimAppFile,
    // (state, kind, normalized feature) -> [(text filter, target)]
    table: HashMap<TransitionKey, Vec<(Option<String>, String)>>,
}

fn normalize_feature(kind: ActionKind, feature: &str) -> String {
    if kind == ActionKind::MultipleSelect {
        let mut ids: Vec<String> =
            feature.split(',').map(|s| s.trim().to_lowercase()).filter(|s| !s.is_empty()).collect();
        ids.sort();
        ids.join(",")
    } else {
        feature.trim().to_lowercase()
    }
}

impl SimAppFile {
    /// Every invariant violation in the file, in document order.
    pub fn check(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let mut v = |location: String, message: String| out.push(Violation { location, message });

        if self.states.is_empty() {
            v("states".into(), "no states declared".into());
        }
        if !self.states.contains_key(&self.initial) {
            v("initial".into(), format!("initial state {:?} is not declared", self.initial));
        }
        for (id, state) in &self.states {
            let mut seen = HashSet::new();
            for (i, w) in state.widgets.iter().enumerate() {
                if w.id.trim().is_empty() {
                    v(format!("states.{id}.widgets[{i}].id"), "empty widget id".into());
                }
                if !seen.insert(w.id.as_str()) {
                    v(format!("states.{id}.widgets[{i}].id"), format!("duplicate widget id {:?}", w.id));
                }
            }
        }
        let mut keys: HashMap<(String, ActionKind, String, Option<String>), usize> = HashMap::new();
        for (i, t) in self.transitions.iter().enumerate() {
            let loc = format!("transitions[{i}]");
            let source = self.states.get(&t.from);
            if source.is_none() {
                v(format!("{loc}.from"), format!("undeclared state {:?}", t.from));
            }
            if !self.states.contains_key(&t.to) {
                v(format!("{loc}.to"), format!("undeclared state {:?}", t.to));
            }
            let kind = match t.action.kind.parse::<ActionKind>() {
                Ok(k) => k,
                Err(e) => {
                    v(format!("{loc}.action.kind"), e.to_string());
                    continue;
                }
            };
            if kind.is_global() && !t.action.feature.trim().is_empty() {
                v(format!("{loc}.action.feature"), format!("{kind} takes no feature"));
            }
            if !kind.is_global() && t.action.feature.trim().is_empty() {
                v(format!("{loc}.action.feature"), format!("{kind} requires a widget id"));
            }
            if kind != ActionKind::SetText && t.action.text.is_some() {
                v(format!("{loc}.action.text"), format!("{kind} takes no text"));
            }
            if let Some(state) = source {
                let targets: Vec<&str> = if kind == ActionKind::MultipleSelect {
                    t.action.feature.split(',').map(str::trim).filter(|s| !s.is_empty()).collect()
                } else if kind.is_global() {
                    Vec::new()
                } else {
                    vec![t.action.feature.trim()]
                };
                for target in targets {
                    if !state.widgets.iter().any(|w| w.id == target) {
                        v(
                            format!("{loc}.action.feature"),
                            format!("widget {target:?} is not declared in state {:?}", t.from),
                        );
                    }
                }
            }
            let key = (t.from.clone(), kind, normalize_feature(kind, &t.action.feature), t.action.text.clone());
            if let Some(first) = keys.insert(key, i) {
                v(loc, format!("nondeterministic: same source and action as transitions[{first}]"));
            }
        }
        out
    }
}

impl SimAppSpec {
    pub fn from_file(file: SimAppFile) -> Result<Self, EnvError> {
        let violations = file.check();
        if !violations.is_empty() {
            return Err(EnvError::InvalidSpec(violations));
        }
        let mut table: HashMap<TransitionKey, Vec<(Option<String>, String)>> = HashMap::new();
        for t in &file.transitions {
            let kind: ActionKind = t.action.kind.parse()?;
            table
                .entry((t.from.clone(), kind, normalize_feature(kind, &t.action.feature)))
                .or_default()
                .push((t.action.text.clone(), t.to.clone()));
        }
        Ok(SimAppSpec { file, table })
    }

    pub fn from_json(text: &str) -> Result<Self, EnvError> {
        let file: SimAppFile = serde_json::from_str(text).map_err(|e| EnvError::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        Self::from_file(file)
    }

    pub fn file(&self) -> &SimAppFile {
        &self.file
    }

    pub fn name(&self) -> &str {
        &self.file.name
    }

    pub fn report(&self) -> Option<&str> {
        self.file.report.as_deref()
    }

    pub fn initial(&self) -> &str {
        &self.file.initial
    }

    pub fn states(&self) -> &BTreeMap<String, SimState> {
        &self.file.states
    }

    pub fn state(&self, id: &str) -> Option<&SimState> {
        self.file.states.get(id)
    }

    fn lookup(&self, state: &str, kind: ActionKind, feature: &str, text: Option<&str>) -> Option<&str> {
        let candidates = self.table.get(&(state.to_string(), kind, normalize_feature(kind, feature)))?;
        candidates
            .iter()
            .find(|(filter, _)| filter.is_some() && filter.as_deref() == text)
            .or_else(|| candidates.iter().find(|(filter, _)| filter.is_none()))
            .map(|(_, to)| to.as_str())
    }
}

pub fn load_sim_app(path: impl AsRef<Path>) -> Result<SimAppSpec, EnvError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| EnvError::Io(format!("{}: {e}", path.display())))?;
    SimAppSpec::from_json(&text)
}

/// Runtime state of one simulated app instance.
#[derive(Debug, Clone)]
pub struct SimEnvironment {
    spec: Arc<SimAppSpec>,
    state: String,
    rotated: bool,
}

impl SimEnvironment {
    pub fn new(spec: impl Into<Arc<SimAppSpec>>) -> Self {
        let spec = spec.into();
        let state = spec.initial().to_string();
        SimEnvironment { spec, state, rotated: false }
    }

    pub fn current_state(&self) -> &str {
        &self.state
    }

    pub fn spec(&self) -> &SimAppSpec {
        &self.spec
    }

    fn current(&self) -> &SimState {
        self.spec.state(&self.state).expect("validated spec has every reachable state")
    }

    fn render(&self) -> Observation {
        let s = self.current();
        Observation {
            activity: s.activity.clone(),
            widgets: s.widgets.clone(),
            orientation: if self.rotated { s.orientation.toggled() } else { s.orientation },
            dialog_open: s.dialog_open,
            crash: s.crash,
            attachment: s.attachment.as_ref().map(|a| a.as_bytes().to_vec()),
        }
    }

    /// Maps each action target to a declared, enabled widget id.
    fn resolve(&self, action: &ActionCommand) -> Option<String> {
        let widgets = &self.current().widgets;
        let find = |f: &str| {
            widgets
                .iter()
                .find(|w| w.id == f)
                .or_else(|| widgets.iter().find(|w| w.answers_to(f)))
                .filter(|w| w.enabled)
                .map(|w| w.id.clone())
        };
        let ids: Option<Vec<String>> = action.targets().into_iter().map(find).collect();
        ids.map(|ids| ids.join(","))
    }
}

impl Environment for SimEnvironment {
    fn reset(&mut self) -> Result<Observation, EnvError> {
        self.state = self.spec.initial().to_string();
        self.rotated = false;
        Ok(self.render())
    }

    fn observe(&self) -> Result<Observation, EnvError> {
        Ok(self.render())
    }

    fn execute(&mut self, action: &ActionCommand) -> Result<TransitionResult, EnvError> {
        if self.current().crash {
            return Err(EnvError::Crashed);
        }
        let target = if action.kind().is_global() {
            self.spec.lookup(&self.state, action.kind(), "", None).map(str::to_string)
        } else {
            self.resolve(action)
                .and_then(|feature| self.spec.lookup(&self.state, action.kind(), &feature, action.text()))
                .map(str::to_string)
        };
        let applied = match target {
            Some(to) => {
                self.state = to;
                self.rotated = false;
                true
            }
            None if action.kind() == ActionKind::Rotate => {
                self.rotated = !self.rotated;
                true
            }
            None => false,
        };
        Ok(TransitionResult { observation: self.render(), applied })
    }

    fn executable_actions(&self) -> Vec<ActionCommand> {
        let state = self.current();
        if state.crash {
            return Vec::new();
        }
        let mut out = Vec::new();
        for w in state.widgets.iter().filter(|w| w.enabled) {
            if w.kind == "edit_text" {
                out.extend(ActionCommand::new(ActionKind::SetText, &w.id, Some("test".into())));
            } else {
                out.push(ActionCommand::click(&w.id));
                out.extend(ActionCommand::new(ActionKind::LongClick, &w.id, None));
            }
        }
        out.push(ActionCommand::rotate());
        out.push(ActionCommand::back());
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_screen_app() -> &'static str {
        r#"{
          "name": "Notes",
          "initial": "list",
          "states": {
            "list": {"activity": "ListActivity", "widgets": [
                {"id": "add", "label": "Add note"},
                {"id": "title", "label": "Title", "kind": "edit_text"},
                {"id": "a", "kind": "checkbox"}, {"id": "b", "kind": "checkbox"},
                {"id": "frozen", "enabled": false}]},
            "editor": {"activity": "EditorActivity", "widgets": [{"id": "save", "label": "Save"}]},
            "boom": {"activity": "EditorActivity", "crash": true},
            "picked": {"activity": "ListActivity"}
          },
          "transitions": [
            {"from": "list", "action": {"kind": "click", "feature": "add"}, "to": "editor"},
            {"from": "list", "action": {"kind": "click", "feature": "frozen"}, "to": "boom"},
            {"from": "list", "action": {"kind": "set_text", "feature": "title", "text": "crash"}, "to": "boom"},
            {"from": "list", "action": {"kind": "multiple_select", "feature": "b,a"}, "to": "picked"},
            {"from": "editor", "action": {"kind": "back"}, "to": "list"},
            {"from": "editor", "action": {"kind": "click", "feature": "save"}, "to": "boom"}
          ]
        }"#
    }

    fn env() -> SimEnvironment {
        SimEnvironment::new(SimAppSpec::from_json(two_screen_app()).unwrap())
    }

    #[test]
    fn transitions_and_noops() {
        let mut e = env();
        let start = e.reset().unwrap();
        let r = e.execute(&ActionCommand::click("settings")).unwrap();
        assert!(!r.applied);
        assert_eq!(r.observation, start);

        let r = e.execute(&ActionCommand::click("Add Note")).unwrap();
        assert!(r.applied);
        assert_eq!(r.observation.activity, "EditorActivity");
        e.execute(&ActionCommand::back()).unwrap();
        assert_eq!(e.current_state(), "list");
    }

    #[test]
    fn disabled_widgets_do_nothing() {
        let mut e = env();
        e.reset().unwrap();
        assert!(!e.execute(&ActionCommand::click("frozen")).unwrap().applied);
    }

    #[test]
    fn set_text_filters_on_payload() {
        let mut e = env();
        e.reset().unwrap();
        let other = ActionCommand::new(ActionKind::SetText, "title", Some("hello".into())).unwrap();
        assert!(!e.execute(&other).unwrap().applied);
        let bad = ActionCommand::new(ActionKind::SetText, "title", Some("crash".into())).unwrap();
        assert!(e.execute(&bad).unwrap().observation.crash);
    }

    #[test]
    fn multiple_select_is_order_insensitive() {
        let mut e = env();
        e.reset().unwrap();
        let pick = ActionCommand::new(ActionKind::MultipleSelect, "a, b", None).unwrap();
        assert!(e.execute(&pick).unwrap().applied);
        assert_eq!(e.current_state(), "picked");
    }

    #[test]
    fn rotation_toggles_and_is_an_involution() {
        let mut e = env();
        let start = e.reset().unwrap();
        let once = e.execute(&ActionCommand::rotate()).unwrap().observation;
        assert_eq!(once.orientation, Orientation::Landscape);
        assert_ne!(once.digest(), start.digest());
        let twice = e.execute(&ActionCommand::rotate()).unwrap().observation;
        assert_eq!(twice.digest(), start.digest());
    }

    #[test]
    fn crash_state_rejects_actions_until_reset() {
        let mut e = env();
        e.reset().unwrap();
        e.execute(&ActionCommand::click("add")).unwrap();
        assert!(e.execute(&ActionCommand::click("save")).unwrap().observation.crash);
        assert!(matches!(e.execute(&ActionCommand::back()), Err(EnvError::Crashed)));
        assert!(e.executable_actions().is_empty());
        let fresh = e.reset().unwrap();
        assert!(!fresh.crash);
        assert_eq!(fresh.activity, "ListActivity");
    }

    #[test]
    fn validation_reports_every_violation() {
        let text = r#"{
          "initial": "nowhere",
          "states": {"a": {"activity": "A", "widgets": [{"id": "x"}, {"id": "x"}]}},
          "transitions": [
            {"from": "a", "action": {"kind": "click", "feature": "x"}, "to": "ghost"},
            {"from": "a", "action": {"kind": "click", "feature": "X "}, "to": "a"},
            {"from": "a", "action": {"kind": "click", "feature": "y"}, "to": "a"},
            {"from": "a", "action": {"kind": "swipe", "feature": "x"}, "to": "a"},
            {"from": "a", "action": {"kind": "rotate", "feature": "x"}, "to": "a"}
          ]
        }"#;
        let Err(EnvError::InvalidSpec(v)) = SimAppSpec::from_json(text) else { panic!("expected violations") };
        let joined: Vec<String> = v.iter().map(|v| v.to_string()).collect();
        let has = |needle: &str| joined.iter().any(|l| l.contains(needle));
        assert!(has("initial: initial state \"nowhere\""));
        assert!(has("duplicate widget id"));
        assert!(has("transitions[0].to: undeclared state \"ghost\""));
        assert!(has("transitions[1]: nondeterministic"));
        assert!(has("transitions[2].action.feature: widget \"y\""));
        assert!(has("transitions[3].action.kind"));
        assert!(has("transitions[4].action.feature: rotate takes no feature"));
    }

    #[test]
    fn empty_states_rejected() {
        let Err(EnvError::InvalidSpec(v)) = SimAppSpec::from_json(r#"{"initial":"a","states":{}}"#) else {
            panic!()
        };
        assert!(v.iter().any(|v| v.location == "states"));
    }

    #[test]
    fn parse_errors_carry_position() {
        let err = SimAppSpec::from_json("{\n  \"initial\": 3,\n}").unwrap_err();
        match err {
            EnvError::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }
}
