use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Orientation {
    #[default]
    Portrait,
    Landscape,
}

impl Orientation {
    pub fn toggled(self) -> Self {
        match self {
            Orientation::Portrait => Orientation::Landscape,
            Orientation::Landscape => Orientation::Portrait,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Orientation::Portrait => "portrait",
            Orientation::Landscape => "landscape",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Widget {
    pub id: String,
    #[serde(default)]
    pub label: String,
    #[serde(default = "default_widget_kind")]
    pub kind: String,
    #[serde(default = "yes")]
    pub enabled: bool,
    #[serde(default)]
    pub checked: bool,
}

fn default_widget_kind() -> String {
    "button".to_string()
}

fn yes() -> bool {
    true
}

impl Widget {
    pub fn new(id: &str, label: &str, kind: &str) -> Self {
        Widget { id: id.into(), label: label.into(), kind: kind.into(), enabled: true, checked: false }
    }

    /// Whether `feature` names this widget, by id or by label (case-insensitive).
    pub fn answers_to(&self, feature: &str) -> bool {
        let f = feature.trim();
        self.id.eq_ignore_ascii_case(f) || (!self.label.is_empty() && self.label.trim().eq_ignore_ascii_case(f))
    }
}

/// What the environment reports after each step: a structured UI description plus an
/// optional opaque screenshot attachment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Observation {
    pub activity: String,
    pub widgets: Vec<Widget>,
    pub orientation: Orientation,
    pub dialog_open: bool,
    pub crash: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attachment: Option<Vec<u8>>,
}

impl Observation {
    pub fn widget(&self, feature: &str) -> Option<&Widget> {
        self.widgets.iter().find(|w| w.id == feature.trim()).or_else(|| self.widgets.iter().find(|w| w.answers_to(feature)))
    }

    pub fn digest(&self) -> ObservationDigest {
        observation_digest(self)
    }

    /// Plain-text rendering used inside prompts and history entries.
    pub fn describe(&self) -> String {
        let mut out = format!(
            "Activity: {}\nOrientation: {}\nDialog open: {}\n",
            self.activity,
            self.orientation.as_str(),
            if self.dialog_open { "yes" } else { "no" }
        );
        if self.crash {
            out.push_str("Crash: the app has stopped\n");
        }
        if self.widgets.is_empty() {
            out.push_str("Widgets: none\n");
        } else {
            out.push_str("Widgets:\n");
            for w in &self.widgets {
                out.push_str(&format!("- [{}] id={} label={:?}", w.kind, w.id, w.label));
                if !w.enabled {
                    out.push_str(" disabled");
                }
                if w.checked {
                    out.push_str(" checked");
                }
                out.push('\n');
            }
        }
        out
    }

    /// One-line summary for history listings.
    pub fn summary(&self) -> String {
        let mut s = format!("{} ({})", self.activity, self.orientation.as_str());
        if self.dialog_open {
            s.push_str(", dialog open");
        }
        if self.crash {
            s.push_str(", crashed");
        }
        s
    }
}

/// Stable 64-bit observation hash: the first eight bytes of SHA-256 over a
/// length-prefixed canonical encoding of every field, attachment included.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub struct ObservationDigest(pub u64);

impl fmt::Display for ObservationDigest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:016x}", self.0)
    }
}

impl FromStr for ObservationDigest {
    type Err = std::num::ParseIntError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        u64::from_str_radix(s.trim(), 16).map(ObservationDigest)
    }
}

impl From<ObservationDigest> for String {
    fn from(d: ObservationDigest) -> String {
        d.to_string()
    }
}

impl TryFrom<String> for ObservationDigest {
    type Error = std::num::ParseIntError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

pub fn observation_digest(obs: &Observation) -> ObservationDigest {
    let mut h = Sha256::new();
    let mut field = |bytes: &[u8]| {
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(bytes);
    };
    field(b"obs/v1");
    field(obs.activity.as_bytes());
    field(obs.orientation.as_str().as_bytes());
    field(&[obs.dialog_open as u8, obs.crash as u8]);
    field(&(obs.widgets.len() as u64).to_le_bytes());
    for w in &obs.widgets {
        field(w.id.as_bytes());
        field(w.label.as_bytes());
        field(w.kind.as_bytes());
        field(&[w.enabled as u8, w.checked as u8]);
    }
    match &obs.attachment {
        Some(bytes) => {
            field(&[1]);
            field(bytes);
        }
        None => field(&[0]),
    }
    let out = h.finalize();
    let mut first = [0u8; 8];
    first.copy_from_slice(&out[..8]);
    ObservationDigest(u64::from_be_bytes(first))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn settings_screen(refresh_on: bool) -> Observation {
        let mut switch = Widget::new("auto_refresh", "Automatically refresh", "switch");
        switch.checked = refresh_on;
        Observation {
            activity: "SettingsActivity".into(),
            widgets: vec![Widget::new("title", "Settings", "text"), switch],
            orientation: Orientation::Portrait,
            dialog_open: false,
            crash: false,
            attachment: None,
        }
    }

    #[test]
    fn digest_is_stable_and_field_sensitive() {
        let a = settings_screen(true);
        assert_eq!(a.digest(), a.clone().digest());
        assert_ne!(a.digest(), settings_screen(false).digest());

        let mut with_img = a.clone();
        with_img.attachment = Some(b"png:one".to_vec());
        let mut other_img = a.clone();
        other_img.attachment = Some(b"png:two".to_vec());
        assert_ne!(with_img.digest(), other_img.digest());
        assert_ne!(with_img.digest(), a.digest());
    }

    #[test]
    fn digest_pinned_across_runs() {
        // Frozen value; a change here means previously written traces no longer replay.
        let d = settings_screen(true).digest();
        assert_eq!(d.to_string(), "6b9fef961eb7bf16");
        assert_eq!(d.to_string().parse::<ObservationDigest>().unwrap(), d);
    }

    #[test]
    fn widget_lookup_by_id_or_label() {
        let obs = settings_screen(false);
        assert_eq!(obs.widget("auto_refresh").unwrap().id, "auto_refresh");
        assert_eq!(obs.widget("automatically REFRESH").unwrap().id, "auto_refresh");
        assert!(obs.widget("missing").is_none());
    }
}
