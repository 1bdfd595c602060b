use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Component switches for ablation runs. All off is the full system.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct AblationFlags {
    /// Ask the expander for every plausible action instead of the top k.
    #[serde(default)]
    pub disable_topk: bool,
    /// Drop the few-shot examples and reasoning guidance from prompts.
    #[serde(default)]
    pub disable_fewshot_cot: bool,
    /// Withhold screenshot attachments from prompts.
    #[serde(default)]
    pub disable_image: bool,
    /// Score children by random rollouts instead of the simulator oracle.
    #[serde(default)]
    pub standard_rollout: bool,
}

impl AblationFlags {
    pub const NAMES: [&'static str; 4] = ["disable_topk", "disable_fewshot_cot", "disable_image", "standard_rollout"];

    pub fn is_empty(&self) -> bool {
        *self == AblationFlags::default()
    }

    fn set(&mut self, name: &str) -> Result<(), String> {
        match name {
            "disable_topk" => self.disable_topk = true,
            "disable_fewshot_cot" => self.disable_fewshot_cot = true,
            "disable_image" => self.disable_image = true,
            "standard_rollout" => self.standard_rollout = true,
            other => {
                return Err(format!("unknown ablation flag {other:?} (expected one of {})", Self::NAMES.join(", ")))
            }
        }
        Ok(())
    }
}

impl FromStr for AblationFlags {
    type Err = String;

    /// Comma-separated flag names; empty input means no ablation.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut flags = AblationFlags::default();
        for name in s.split(',').map(str::trim).filter(|n| !n.is_empty()) {
            flags.set(name)?;
        }
        Ok(flags)
    }
}

impl fmt::Display for AblationFlags {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let on = [self.disable_topk, self.disable_fewshot_cot, self.disable_image, self.standard_rollout];
        let names: Vec<&str> = Self::NAMES.iter().zip(on).filter(|(_, on)| *on).map(|(n, _)| *n).collect();
        f.write_str(&names.join(","))
    }
}
