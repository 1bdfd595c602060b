use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::EnvError;

/// The closed six-element action vocabulary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionKind {
    Click,
    LongClick,
    SetText,
    MultipleSelect,
    Rotate,
    Back,
}

impl ActionKind {
    pub const ALL: [ActionKind; 6] = [
        ActionKind::Click,
        ActionKind::LongClick,
        ActionKind::SetText,
        ActionKind::MultipleSelect,
        ActionKind::Rotate,
        ActionKind::Back,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ActionKind::Click => "click",
            ActionKind::LongClick => "long_click",
            ActionKind::SetText => "set_text",
            ActionKind::MultipleSelect => "multiple_select",
            ActionKind::Rotate => "rotate",
            ActionKind::Back => "back",
        }
    }

    /// Rotate and back act on the whole screen and carry no target widget.
    pub fn is_global(self) -> bool {
        matches!(self, ActionKind::Rotate | ActionKind::Back)
    }
}

impl fmt::Display for ActionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ActionKind {
    type Err = EnvError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let folded = s.trim().to_ascii_lowercase();
        ActionKind::ALL
            .into_iter()
            .find(|k| k.as_str() == folded)
            .ok_or_else(|| EnvError::UnknownActionKind(s.trim().to_string()))
    }
}

/// One executable GUI action: kind, target widget feature and optional text payload.
///
/// `multiple_select` targets are a comma-separated list of widget ids in `feature`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawAction", into = "RawAction")]
pub struct ActionCommand {
    kind: ActionKind,
    feature: String,
    text: Option<String>,
}

#[derive(Serialize, Deserialize)]
struct RawAction {
    kind: ActionKind,
    #[serde(default)]
    feature: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    text: Option<String>,
}

impl TryFrom<RawAction> for ActionCommand {
    type Error = EnvError;

    fn try_from(raw: RawAction) -> Result<Self, Self::Error> {
        ActionCommand::new(raw.kind, raw.feature, raw.text)
    }
}

impl From<ActionCommand> for RawAction {
    fn from(a: ActionCommand) -> Self {
        RawAction { kind: a.kind, feature: a.feature, text: a.text }
    }
}

impl ActionCommand {
    pub fn new(
        kind: ActionKind,
        feature: impl Into<String>,
        text: Option<String>,
    ) -> Result<Self, EnvError> {
        let feature = feature.into().trim().to_string();
        match kind {
            ActionKind::Rotate | ActionKind::Back if !feature.is_empty() => {
                return Err(EnvError::InvalidAction(format!("{kind} takes no target, got {feature:?}")));
            }
            ActionKind::SetText if text.is_none() => {
                return Err(EnvError::InvalidAction("set_text requires a text payload".into()));
            }
            ActionKind::Click | ActionKind::LongClick | ActionKind::SetText | ActionKind::MultipleSelect
                if feature.is_empty() =>
            {
                return Err(EnvError::InvalidAction(format!("{kind} requires a target widget")));
            }
            _ => {}
        }
        if kind != ActionKind::SetText && text.is_some() {
            return Err(EnvError::InvalidAction(format!("{kind} takes no text payload")));
        }
        Ok(ActionCommand { kind, feature, text })
    }

    pub fn click(feature: &str) -> Self {
        Self::new(ActionKind::Click, feature, None).expect("click target must be nonempty")
    }

    pub fn rotate() -> Self {
        ActionCommand { kind: ActionKind::Rotate, feature: String::new(), text: None }
    }

    pub fn back() -> Self {
        ActionCommand { kind: ActionKind::Back, feature: String::new(), text: None }
    }

    pub fn kind(&self) -> ActionKind {
        self.kind
    }

    pub fn feature(&self) -> &str {
        &self.feature
    }

    pub fn text(&self) -> Option<&str> {
        self.text.as_deref()
    }

    /// Targets of a `multiple_select`, or the single feature for other kinds.
    pub fn targets(&self) -> Vec<&str> {
        if self.kind == ActionKind::MultipleSelect {
            self.feature.split(',').map(str::trim).filter(|s| !s.is_empty()).collect()
        } else if self.feature.is_empty() {
            Vec::new()
        } else {
            vec![self.feature.as_str()]
        }
    }

    /// Dedup key: kind, case-folded trimmed feature, and text.
    pub fn normalized_key(&self) -> (ActionKind, String, Option<String>) {
        (self.kind, self.feature.trim().to_lowercase(), self.text.clone())
    }

    /// Parses one trace line: `kind [feature [text...]]`.
    ///
    /// The text payload is the rest of the line after the feature, with `\n` and `\\` escapes.
    pub fn parse_line(line: &str) -> Result<Self, EnvError> {
        let line = line.trim();
        let (kind_str, rest) = split_word(line);
        let kind: ActionKind = kind_str.parse()?;
        if kind.is_global() {
            if !rest.is_empty() {
                return Err(EnvError::InvalidAction(format!("{kind} takes no arguments: {line:?}")));
            }
            return ActionCommand::new(kind, "", None);
        }
        if kind == ActionKind::MultipleSelect {
            return ActionCommand::new(kind, rest, None);
        }
        let (feature, text) = split_word(rest);
        let text = if kind == ActionKind::SetText { Some(unescape(text)) } else {
            if !text.is_empty() {
                return Err(EnvError::InvalidAction(format!("{kind} takes no text payload: {line:?}")));
            }
            None
        };
        ActionCommand::new(kind, feature, text)
    }

    /// Inverse of [`ActionCommand::parse_line`].
    pub fn to_line(&self) -> String {
        let mut out = self.kind.as_str().to_string();
        if !self.feature.is_empty() {
            out.push(' ');
            out.push_str(&self.feature);
        }
        if let Some(text) = &self.text {
            out.push(' ');
            out.push_str(&escape(text));
        }
        out
    }
}

impl fmt::Display for ActionCommand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_line())
    }
}

impl FromStr for ActionCommand {
    type Err = EnvError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ActionCommand::parse_line(s)
    }
}

fn split_word(s: &str) -> (&str, &str) {
    let s = s.trim_start();
    match s.find(char::is_whitespace) {
        Some(i) => (&s[..i], s[i..].trim_start()),
        None => (s, ""),
    }
}

fn escape(text: &str) -> String {
    text.replace('\\', "\\\\").replace('\n', "\\n")
}

fn unescape(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut chars = text.chars();
    while let Some(c) = chars.next() {
        if c == '\\' {
            match chars.next() {
                Some('n') => out.push('\n'),
                Some(other) => out.push(other),
                None => out.push('\\'),
            }
        } else {
            out.push(c);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vocabulary_is_closed() {
        assert!("swipe".parse::<ActionKind>().is_err());
        assert!("scroll".parse::<ActionKind>().is_err());
        for k in ActionKind::ALL {
            assert_eq!(k.as_str().parse::<ActionKind>().unwrap(), k);
        }
        assert_eq!("Long_Click".parse::<ActionKind>().unwrap(), ActionKind::LongClick);
    }

    #[test]
    fn constructor_invariants() {
        assert!(ActionCommand::new(ActionKind::Rotate, "screen", None).is_err());
        assert!(ActionCommand::new(ActionKind::SetText, "email", None).is_err());
        assert!(ActionCommand::new(ActionKind::Click, "  ", None).is_err());
        assert!(ActionCommand::new(ActionKind::Click, "ok", Some("x".into())).is_err());
        let a = ActionCommand::new(ActionKind::Click, " ok ", None).unwrap();
        assert_eq!(a.feature(), "ok");
    }

    #[test]
    fn line_format() {
        let a = ActionCommand::parse_line("set_text email hello  world").unwrap();
        assert_eq!(a.text(), Some("hello  world"));
        assert_eq!(a.to_line(), "set_text email hello  world");
        let r = ActionCommand::parse_line("rotate").unwrap();
        assert_eq!(r, ActionCommand::rotate());
        assert!(ActionCommand::parse_line("rotate screen").is_err());
        assert!(ActionCommand::parse_line("click").is_err());
        assert!(ActionCommand::parse_line("swipe left").is_err());
        let multi = ActionCommand::parse_line("multiple_select a,b, c").unwrap();
        assert_eq!(multi.targets(), vec!["a", "b", "c"]);
        let nl = ActionCommand::new(ActionKind::SetText, "f", Some("a\nb\\c".into())).unwrap();
        assert_eq!(ActionCommand::parse_line(&nl.to_line()).unwrap(), nl);
    }

    #[test]
    fn serde_rejects_invalid() {
        let ok: ActionCommand = serde_json::from_str(r#"{"kind":"click","feature":"Profile"}"#).unwrap();
        assert_eq!(ok, ActionCommand::click("Profile"));
        assert!(serde_json::from_str::<ActionCommand>(r#"{"kind":"swipe","feature":"x"}"#).is_err());
        assert!(serde_json::from_str::<ActionCommand>(r#"{"kind":"back","feature":"x"}"#).is_err());
    }
}
