use std::collections::HashSet;
use std::sync::OnceLock;

use regex::Regex;
use serde::Deserialize;
use serde_json::Value;

use super::{OracleError, OracleProposal, OracleScore};
use crate::env::ActionKind;

/// Extracts the first JSON array of `{"action", "feature"}` objects from a reply, or
/// failing that, every standalone action object (as in a numbered list).
///
/// Entries with unknown action kinds or missing required fields are dropped; the rest
/// are deduplicated and cut to `k` (no cut when `k` is `None`).
pub fn parse_expand_response(text: &str, k: Option<usize>) -> Result<Vec<OracleProposal>, OracleError> {
    let items = first_action_array(text)
        .or_else(|| loose_action_objects(text))
        .ok_or_else(|| OracleError::RetryableParse("no JSON array of action objects found".into()))?;
    if items.is_empty() {
        return Err(OracleError::RetryableParse("empty suggestion array".into()));
    }
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for item in &items {
        let Some(p) = proposal_from_value(item) else { continue };
        if seen.insert(p.dedup_key()) {
            out.push(p);
        }
    }
    if out.is_empty() {
        return Err(OracleError::RetryableParse(format!(
            "none of the {} suggestions uses a supported action",
            items.len()
        )));
    }
    if let Some(k) = k {
        out.truncate(k);
    }
    Ok(out)
}

fn first_action_array(text: &str) -> Option<Vec<Value>> {
    for (i, _) in text.match_indices('[') {
        let mut de = serde_json::Deserializer::from_str(&text[i..]);
        let Ok(Value::Array(items)) = Value::deserialize(&mut de) else { continue };
        if items.iter().all(|v| v.as_object().is_some_and(|o| o.contains_key("action"))) {
            return Some(items);
        }
    }
    None
}

fn loose_action_objects(text: &str) -> Option<Vec<Value>> {
    let mut items = Vec::new();
    let mut pos = 0;
    while let Some(off) = text[pos..].find('{') {
        let start = pos + off;
        let mut stream = serde_json::Deserializer::from_str(&text[start..]).into_iter::<Value>();
        match stream.next() {
            Some(Ok(v)) if v.get("action").is_some() => {
                items.push(v);
                pos = start + stream.byte_offset();
            }
            _ => pos = start + 1,
        }
    }
    (!items.is_empty()).then_some(items)
}

fn proposal_from_value(v: &Value) -> Option<OracleProposal> {
    let obj = v.as_object()?;
    let kind: ActionKind = obj.get("action")?.as_str()?.parse().ok()?;
    let feature = match obj.get("feature") {
        Some(Value::String(s)) => s.trim().to_string(),
        Some(Value::Number(n)) => n.to_string(),
        _ => String::new(),
    };
    let text = obj.get("text").or_else(|| obj.get("value")).and_then(Value::as_str).map(str::to_string);
    let proposal = if kind.is_global() {
        OracleProposal { action: kind, feature: String::new(), text: None }
    } else {
        OracleProposal { action: kind, feature, text: if kind == ActionKind::SetText { text } else { None } }
    };
    proposal.to_command().ok().map(|_| proposal)
}

/// Serializes proposals in the array format the expander is asked to produce.
pub fn render_proposals(proposals: &[OracleProposal]) -> String {
    let items: Vec<Value> = proposals
        .iter()
        .map(|p| {
            let mut o = serde_json::Map::new();
            o.insert("action".into(), Value::String(p.action.as_str().into()));
            o.insert("feature".into(), Value::String(p.feature.clone()));
            if let Some(t) = &p.text {
                o.insert("text".into(), Value::String(t.clone()));
            }
            Value::Object(o)
        })
        .collect();
    Value::Array(items).to_string()
}

fn score_pattern() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)score:\s*([0-9]+)").expect("static pattern"))
}

/// Finds the first `Score: N` (case-insensitive) and requires `0 <= N <= 10`.
pub fn parse_simulate_response(text: &str) -> Result<OracleScore, OracleError> {
    let caps = score_pattern()
        .captures(text)
        .ok_or_else(|| OracleError::RetryableParse("no 'Score: N' line found".into()))?;
    let digits = &caps[1];
    digits
        .parse::<u8>()
        .ok()
        .and_then(|n| OracleScore::new(n).ok())
        .ok_or_else(|| OracleError::RetryableParse(format!("score {digits} outside [0, 10]")))
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    const TABLE_ARRAY: &str = r#"[{"action":"click","feature":"Profile"},{"action":"click","feature":"Settings"},{"action":"click","feature":"Home"}]"#;

    #[test]
    fn reference_array_parses() {
        let p = parse_expand_response(TABLE_ARRAY, Some(3)).unwrap();
        let features: Vec<&str> = p.iter().map(|p| p.feature.as_str()).collect();
        assert_eq!(features, ["Profile", "Settings", "Home"]);
        assert!(p.iter().all(|p| p.action == ActionKind::Click));
    }

    #[test]
    fn numbered_objects_without_brackets() {
        let text = "1.{\"action\":\"click\",\"feature\":\"Profile\"}\n2.{\"action\":\"click\",\"feature\":\"Settings\"}\n3.{\"action\":\"click\",\"feature\":\"Home\"} ";
        let p = parse_expand_response(text, Some(3)).unwrap();
        assert_eq!(p.iter().map(|p| p.feature.as_str()).collect::<Vec<_>>(), ["Profile", "Settings", "Home"]);
        assert!(parse_expand_response("{\"note\": 1} and {oops", Some(3)).is_err());
    }

    #[test]
    fn prose_around_array_is_ignored() {
        let text = format!("Sure! Looking at the screen [MainActivity], I'd try:\n{TABLE_ARRAY}\nGood luck.");
        assert_eq!(parse_expand_response(&text, Some(3)).unwrap().len(), 3);
    }

    #[test]
    fn closed_vocabulary_and_empty_arrays() {
        assert!(matches!(
            parse_expand_response(r#"[{"action":"swipe","feature":"X"}]"#, Some(3)),
            Err(OracleError::RetryableParse(_))
        ));
        assert!(matches!(parse_expand_response("[]", Some(3)), Err(OracleError::RetryableParse(_))));
        assert!(matches!(parse_expand_response("no idea", Some(3)), Err(OracleError::RetryableParse(_))));
        let mixed = r#"[{"action":"swipe","feature":"X"},{"action":"ROTATE","feature":"screen"}]"#;
        let p = parse_expand_response(mixed, Some(3)).unwrap();
        assert_eq!(p.len(), 1);
        assert_eq!(p[0].action, ActionKind::Rotate);
        assert_eq!(p[0].feature, "");
    }

    #[test]
    fn dedup_and_truncate() {
        let text = r#"[{"action":"click","feature":"OK"},{"action":"click","feature":" ok "},
            {"action":"set_text","feature":"email","text":"a@b.c"},{"action":"set_text","feature":"email"},
            {"action":"back","feature":""},{"action":"rotate","feature":""}]"#;
        let all = parse_expand_response(text, None).unwrap();
        assert_eq!(all.len(), 4);
        assert_eq!(all[1].text.as_deref(), Some("a@b.c"));
        assert_eq!(parse_expand_response(text, Some(2)).unwrap().len(), 2);
    }

    #[test]
    fn score_examples() {
        assert_eq!(parse_simulate_response("Score: 5").unwrap().raw(), 5);
        assert_eq!(parse_simulate_response("The action is correct. Score: 9").unwrap().raw(), 9);
        assert_eq!(parse_simulate_response("score:10").unwrap().raw(), 10);
        assert_eq!(parse_simulate_response("SCORE:   0 because").unwrap().raw(), 0);
        assert!(matches!(parse_simulate_response("Score: 11"), Err(OracleError::RetryableParse(_))));
        assert!(parse_simulate_response("Score: 99999999999999999999").is_err());
        assert!(parse_simulate_response("Score: -1").is_err());
        assert!(parse_simulate_response("I'd give it a nine").is_err());
        // first match wins, even when it is out of range
        assert!(parse_simulate_response("Score: 12\nScore: 3").is_err());
        assert_eq!(parse_simulate_response("Score: 3\nScore: 12").unwrap().raw(), 3);
    }

    fn arb_proposal() -> impl Strategy<Value = OracleProposal> {
        let feature = "[A-Za-z][A-Za-z0-9 _]{0,12}";
        prop_oneof![
            feature.prop_map(|f| OracleProposal { action: ActionKind::Click, feature: f.trim().into(), text: None }),
            feature.prop_map(|f| OracleProposal { action: ActionKind::LongClick, feature: f.trim().into(), text: None }),
            (feature, "[ -~]{0,16}").prop_map(|(f, t)| OracleProposal {
                action: ActionKind::SetText,
                feature: f.trim().into(),
                text: Some(t)
            }),
            Just(OracleProposal { action: ActionKind::Rotate, feature: String::new(), text: None }),
            Just(OracleProposal { action: ActionKind::Back, feature: String::new(), text: None }),
        ]
    }

    proptest! {
        #[test]
        fn proposal_grammar_round_trip(ps in prop::collection::vec(arb_proposal(), 1..8)) {
            let first = parse_expand_response(&render_proposals(&ps), None).unwrap();
            let second = parse_expand_response(&render_proposals(&first), None).unwrap();
            prop_assert_eq!(first, second);
        }

        #[test]
        fn score_found_inside_noise(prefix in "[a-zA-Z .,\n]{0,40}", n in 0u8..=10, suffix in "[a-zA-Z .,\n]{0,40}") {
            prop_assume!(!prefix.to_lowercase().contains("score:"));
            let text = format!("{prefix}Score: {n}{suffix}");
            prop_assert_eq!(parse_simulate_response(&text).unwrap().raw(), n);
        }
    }
}
