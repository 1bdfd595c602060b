use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{HistoryEntry, OracleError};
use crate::env::{ActionCommand, Observation};
use crate::AblationFlags;

/// Most recent history entries rendered into a prompt.
pub const HISTORY_LIMIT: usize = 20;

const NO_PRIOR_STEPS: &str = "(no prior steps)";

/// Prompt text for both oracle roles. Defaults are compiled in; any subset can be
/// overridden from a directory holding files with the same names.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplates {
    pub expand_task: String,
    pub expand_format: String,
    pub expand_fewshot: Vec<String>,
    pub expand_cot: String,
    pub simulate_task: String,
    pub simulate_format: String,
    pub simulate_fewshot: Vec<String>,
    pub simulate_cot: String,
}

fn split_examples(text: &str) -> Vec<String> {
    text.split("\n---\n").map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect()
}

impl Default for PromptTemplates {
    fn default() -> Self {
        PromptTemplates {
            expand_task: include_str!("../../templates/expand_task.txt").trim().to_string(),
            expand_format: include_str!("../../templates/expand_format.txt").trim().to_string(),
            expand_fewshot: split_examples(include_str!("../../templates/expand_fewshot.txt")),
            expand_cot: include_str!("../../templates/expand_cot.txt").trim().to_string(),
            simulate_task: include_str!("../../templates/simulate_task.txt").trim().to_string(),
            simulate_format: include_str!("../../templates/simulate_format.txt").trim().to_string(),
            simulate_fewshot: split_examples(include_str!("../../templates/simulate_fewshot.txt")),
            simulate_cot: include_str!("../../templates/simulate_cot.txt").trim().to_string(),
        }
    }
}

impl PromptTemplates {
    /// Defaults with every `<name>.txt` present in `dir` swapped in. Few-shot files hold
    /// examples separated by `---` lines.
    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Self, OracleError> {
        let dir = dir.as_ref();
        let mut t = PromptTemplates::default();
        let read = |name: &str| -> Result<Option<String>, OracleError> {
            let p = dir.join(format!("{name}.txt"));
            if !p.exists() {
                return Ok(None);
            }
            std::fs::read_to_string(&p)
                .map(|s| Some(s.trim().to_string()))
                .map_err(|e| OracleError::Config(format!("{}: {e}", p.display())))
        };
        if let Some(s) = read("expand_task")? {
            t.expand_task = s;
        }
        if let Some(s) = read("expand_format")? {
            t.expand_format = s;
        }
        if let Some(s) = read("expand_fewshot")? {
            t.expand_fewshot = split_examples(&s);
        }
        if let Some(s) = read("expand_cot")? {
            t.expand_cot = s;
        }
        if let Some(s) = read("simulate_task")? {
            t.simulate_task = s;
        }
        if let Some(s) = read("simulate_format")? {
            t.simulate_format = s;
        }
        if let Some(s) = read("simulate_fewshot")? {
            t.simulate_fewshot = split_examples(&s);
        }
        if let Some(s) = read("simulate_cot")? {
            t.simulate_cot = s;
        }
        Ok(t)
    }
}

/// Everything sent to the model for one oracle call.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBundle {
    /// Task specification: role, inputs, and output restriction.
    pub system_text: String,
    pub fewshot_blocks: Vec<String>,
    pub cot_block: String,
    pub user_text: String,
    #[serde(skip)]
    pub attachments: Vec<Vec<u8>>,
    /// Format reminder appended to the user text when a reply fails to parse.
    pub repair_text: String,
}

impl PromptBundle {
    /// System message: task specification followed by examples and reasoning guidance.
    pub fn system_message(&self) -> String {
        let mut s = self.system_text.clone();
        if !self.fewshot_blocks.is_empty() {
            s.push_str("\n\nExamples:\n\n");
            s.push_str(&self.fewshot_blocks.join("\n\n"));
        }
        if !self.cot_block.is_empty() {
            s.push_str("\n\n");
            s.push_str(&self.cot_block);
        }
        s
    }

    /// Copy with the repair instruction appended, used after an unparsable reply.
    pub fn with_repair(&self) -> PromptBundle {
        let mut b = self.clone();
        b.user_text.push_str("\n\n");
        b.user_text.push_str(&self.repair_text);
        b
    }
}

fn render_history(history: &[HistoryEntry]) -> String {
    if history.is_empty() {
        return NO_PRIOR_STEPS.to_string();
    }
    let skip = history.len().saturating_sub(HISTORY_LIMIT);
    let mut s = String::new();
    if skip > 0 {
        let _ = writeln!(s, "({skip} earlier steps omitted)");
    }
    for (i, h) in history.iter().enumerate().skip(skip) {
        let _ = writeln!(s, "{}. {} -> {}", i + 1, h.action, h.outcome);
    }
    s.trim_end().to_string()
}

fn task_and_format(task: &str, format: &str) -> String {
    format!("{}\n\n{}", task.trim(), format.trim())
}

pub fn build_expand_prompt(
    templates: &PromptTemplates,
    report: &str,
    app_name: &str,
    obs: &Observation,
    history: &[HistoryEntry],
    k: Option<usize>,
    flags: AblationFlags,
) -> PromptBundle {
    let count_instruction = match k {
        Some(k) => format!(
            "Give me exactly {k} suggested action{} with the highest likelihood of reproducing the bug.",
            if k == 1 { "" } else { "s" }
        ),
        None => "Give me every action on the current screen that could plausibly help reproduce the bug.".to_string(),
    };
    let task = templates.expand_task.replace("{count_instruction}", &count_instruction);
    let requested = k.map(|k| k.to_string()).unwrap_or_else(|| "all plausible actions".to_string());
    let user_text = format!(
        "App name: {app_name}\nBug report:\n{report}\n\nCurrent screen:\n{}\nHistory:\n{}\n\nNumber of suggestions requested: {requested}",
        obs.describe(),
        render_history(history),
    );
    let attachments = match (&obs.attachment, flags.disable_image) {
        (Some(bytes), false) => vec![bytes.clone()],
        _ => Vec::new(),
    };
    let (fewshot_blocks, cot_block) = if flags.disable_fewshot_cot {
        (Vec::new(), String::new())
    } else {
        (templates.expand_fewshot.clone(), templates.expand_cot.clone())
    };
    PromptBundle {
        system_text: task_and_format(&task, &templates.expand_format),
        fewshot_blocks,
        cot_block,
        user_text,
        attachments,
        repair_text: format!("Your previous reply could not be parsed. {}", templates.expand_format.trim()),
    }
}

pub fn build_simulate_prompt(
    templates: &PromptTemplates,
    report: &str,
    history: &[HistoryEntry],
    target: &ActionCommand,
    before: &Observation,
    after: &Observation,
    flags: AblationFlags,
) -> PromptBundle {
    let user_text = format!(
        "Bug report:\n{report}\n\nReproduction path so far:\n{}\n\nTarget action: {target}\n\nScreen before the target action:\n{}\nScreen after the target action:\n{}",
        render_history(history),
        before.describe(),
        after.describe(),
    );
    let attachments = if flags.disable_image {
        Vec::new()
    } else {
        before.attachment.iter().chain(after.attachment.iter()).cloned().collect()
    };
    let (fewshot_blocks, cot_block) = if flags.disable_fewshot_cot {
        (Vec::new(), String::new())
    } else {
        (templates.simulate_fewshot.clone(), templates.simulate_cot.clone())
    };
    PromptBundle {
        system_text: task_and_format(&templates.simulate_task, &templates.simulate_format),
        fewshot_blocks,
        cot_block,
        user_text,
        attachments,
        repair_text: format!("Your previous reply could not be parsed. {}", templates.simulate_format.trim()),
    }
}
