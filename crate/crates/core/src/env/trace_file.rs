//! Plain-text action trace: one `kind feature [text]` line per step.
//!
//! Lines starting with `#` are comments, except two annotations written by the search:
//! `#root= <hex>` gives the digest of the reset observation and `#= <hex>` gives the
//! digest observed right after the preceding action.

use std::fmt::Write as _;

use super::{ActionCommand, EnvError, ObservationDigest};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceFileStep {
    pub action: ActionCommand,
    pub digest: Option<ObservationDigest>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TraceFile {
    /// Free-form header comments, written without the leading `# `.
    pub header: Vec<String>,
    pub root_digest: Option<ObservationDigest>,
    pub steps: Vec<TraceFileStep>,
}

impl TraceFile {
    pub fn parse(text: &str) -> Result<Self, EnvError> {
        let mut out = TraceFile::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            let lineno = i + 1;
            let bad = |message: String| EnvError::Parse { line: lineno, column: 1, message };
            if line.is_empty() {
                continue;
            }
            if let Some(hex) = line.strip_prefix("#root=") {
                out.root_digest = Some(hex.parse().map_err(|e| bad(format!("bad root digest: {e}")))?);
            } else if let Some(hex) = line.strip_prefix("#=") {
                let digest = hex.parse().map_err(|e| bad(format!("bad digest: {e}")))?;
                let step = out.steps.last_mut().ok_or_else(|| bad("digest before any action".into()))?;
                if step.digest.replace(digest).is_some() {
                    return Err(bad("two digests for one step".into()));
                }
            } else if let Some(comment) = line.strip_prefix('#') {
                out.header.push(comment.trim().to_string());
            } else {
                let action = ActionCommand::parse_line(line).map_err(|e| bad(e.to_string()))?;
                out.steps.push(TraceFileStep { action, digest: None });
            }
        }
        Ok(out)
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        for h in &self.header {
            let _ = writeln!(s, "# {h}");
        }
        if let Some(root) = self.root_digest {
            let _ = writeln!(s, "#root= {root}");
        }
        for step in &self.steps {
            let _ = writeln!(s, "{}", step.action.to_line());
            if let Some(d) = step.digest {
                let _ = writeln!(s, "#= {d}");
            }
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_render_fixed_point() {
        let text = "# outcome crash_reproduced\n#root= 00000000000000aa\nclick escape_methods\n#= 0000000000000001\nrotate\n#= 0000000000000002\nrotate\n";
        let t = TraceFile::parse(text).unwrap();
        assert_eq!(t.steps.len(), 3);
        assert_eq!(t.steps[2].digest, None);
        assert_eq!(t.root_digest, Some(ObservationDigest(0xaa)));
        assert_eq!(TraceFile::parse(&t.render()).unwrap(), t);
    }

    #[test]
    fn errors_name_the_line() {
        let err = TraceFile::parse("rotate\nswipe up\n").unwrap_err();
        assert!(matches!(err, EnvError::Parse { line: 2, .. }));
        assert!(TraceFile::parse("#= 01\n").is_err());
        assert!(TraceFile::parse("").unwrap().steps.is_empty());
    }
}
