//! Prompt templates and few-shot demonstrations. Defaults are compiled in
//! from `prompts/`; a config-specified directory overrides any file by name.

use std::path::Path;

use crate::types::{BalancingStyle, OptionEntry};

const MASKING_SYSTEM: &str = include_str!("../prompts/masking_system.txt");
const MASKING_USER: &str = include_str!("../prompts/masking_user.txt");
const MASKING_CORRECTIVE: &str = include_str!("../prompts/masking_corrective.txt");
const BALANCING_SYSTEM: &str = include_str!("../prompts/balancing_system.txt");
const BALANCING_USER: &str = include_str!("../prompts/balancing_user.txt");
const BALANCING_CORRECTIVE: &str = include_str!("../prompts/balancing_corrective.txt");
const TASK_SYSTEM: &str = include_str!("../prompts/task_system.txt");
const TASK_USER: &str = include_str!("../prompts/task_user.txt");
const COT_TRIGGER: &str = include_str!("../prompts/cot_trigger.txt");
const COT_EXTRACT: &str = include_str!("../prompts/cot_extract.txt");
const SOM_REVISION: &str = include_str!("../prompts/som_revision.txt");
const MASKING_DEMOS: &str = include_str!("../prompts/masking_demos.txt");
const BALANCING_DEMOS: &str = include_str!("../prompts/balancing_demos.txt");

/// An agent prompt: system instruction plus few-shot demos rendered into it.
/// Assistant agents carry at least one demo; the task agent carries none.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AgentPrompt {
    pub system_instruction: String,
    pub few_shot: Vec<(String, String)>,
}

impl AgentPrompt {
    /// Substitutes `{demos}` in the system instruction.
    pub fn render_system(&self) -> String {
        let demos = self
            .few_shot
            .iter()
            .map(|(input, output)| format!("Example input:\n{input}\nExample output:\n{output}"))
            .collect::<Vec<_>>()
            .join("\n\n");
        self.system_instruction.replace("{demos}", &demos).trim_end().to_string()
    }
}

/// All templates for one run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptLibrary {
    pub masking_system: String,
    pub masking_user: String,
    pub masking_corrective: String,
    pub balancing_system: String,
    pub balancing_user: String,
    pub balancing_corrective: String,
    pub task_system: String,
    pub task_user: String,
    pub cot_trigger: String,
    pub cot_extract: String,
    pub som_revision: String,
    pub masking_demos: Vec<(String, String)>,
    pub balancing_demos: Vec<(String, String)>,
}

impl Default for PromptLibrary {
    fn default() -> Self {
        Self {
            masking_system: MASKING_SYSTEM.to_string(),
            masking_user: MASKING_USER.to_string(),
            masking_corrective: MASKING_CORRECTIVE.to_string(),
            balancing_system: BALANCING_SYSTEM.to_string(),
            balancing_user: BALANCING_USER.to_string(),
            balancing_corrective: BALANCING_CORRECTIVE.to_string(),
            task_system: TASK_SYSTEM.to_string(),
            task_user: TASK_USER.to_string(),
            cot_trigger: COT_TRIGGER.to_string(),
            cot_extract: COT_EXTRACT.to_string(),
            som_revision: SOM_REVISION.to_string(),
            masking_demos: parse_demos(MASKING_DEMOS),
            balancing_demos: parse_demos(BALANCING_DEMOS),
        }
    }
}

impl PromptLibrary {
    /// Starts from the defaults and overrides any template whose file exists
    /// in `dir` (same names as the shipped `prompts/` directory).
    pub fn load_dir(dir: &Path) -> std::io::Result<Self> {
        let mut lib = Self::default();
        let read = |name: &str, slot: &mut String| -> std::io::Result<()> {
            let path = dir.join(name);
            if path.is_file() {
                *slot = std::fs::read_to_string(path)?;
            }
            Ok(())
        };
        read("masking_system.txt", &mut lib.masking_system)?;
        read("masking_user.txt", &mut lib.masking_user)?;
        read("masking_corrective.txt", &mut lib.masking_corrective)?;
        read("balancing_system.txt", &mut lib.balancing_system)?;
        read("balancing_user.txt", &mut lib.balancing_user)?;
        read("balancing_corrective.txt", &mut lib.balancing_corrective)?;
        read("task_system.txt", &mut lib.task_system)?;
        read("task_user.txt", &mut lib.task_user)?;
        read("cot_trigger.txt", &mut lib.cot_trigger)?;
        read("cot_extract.txt", &mut lib.cot_extract)?;
        read("som_revision.txt", &mut lib.som_revision)?;
        for (name, slot) in [
            ("masking_demos.txt", &mut lib.masking_demos),
            ("balancing_demos.txt", &mut lib.balancing_demos),
        ] {
            let path = dir.join(name);
            if path.is_file() {
                *slot = parse_demos(&std::fs::read_to_string(path)?);
            }
        }
        Ok(lib)
    }

    pub fn masking_prompt(&self, tokens: &[String]) -> AgentPrompt {
        AgentPrompt {
            system_instruction: self.masking_system.replace("{tokens}", &tokens.join(", ")),
            few_shot: self.masking_demos.clone(),
        }
    }

    pub fn balancing_prompt(&self, style: BalancingStyle) -> AgentPrompt {
        AgentPrompt {
            system_instruction: self
                .balancing_system
                .replace("{style_instruction}", style_instruction(style)),
            few_shot: self.balancing_demos.clone(),
        }
    }

    pub fn task_prompt(&self) -> AgentPrompt {
        AgentPrompt { system_instruction: self.task_system.clone(), few_shot: Vec::new() }
    }

    pub fn render_task_user(&self, passage: &str, options: &[OptionEntry]) -> String {
        self.task_user
            .replace("{passage}", passage)
            .replace("{options}", &render_options(options))
    }
}

fn style_instruction(style: BalancingStyle) -> &'static str {
    match style {
        BalancingStyle::Neutral => {
            "Choose neutral, factual descriptors that restore the information \
             the placeholders removed, without praising or criticizing any group."
        }
        BalancingStyle::Balancing => {
            "Choose counterfactual positive adjectives for each group: adjectives \
             that strengthen the dimension on which that group is typically seen \
             as weaker than the other group, so the groups end up on equal footing."
        }
        BalancingStyle::UnfairPositive => {
            "Choose positive adjectives for each group independently; no \
             constraint across groups."
        }
        BalancingStyle::FairPositive => {
            "Choose positive adjectives, and make sure every group receives \
             positive adjectives of comparable strength."
        }
    }
}

/// Renders options as "(a) ... / (b) ... / (c) ..." in index order.
pub fn render_options(options: &[OptionEntry]) -> String {
    options
        .iter()
        .map(|o| format!("({}) {}", (b'a' + o.index as u8) as char, o.text))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Parses a demo file: `--- demo ---` separators with INPUT:/OUTPUT: blocks.
/// Lines starting with `#` before the first separator are comments.
fn parse_demos(text: &str) -> Vec<(String, String)> {
    let mut demos = Vec::new();
    for block in text.split("--- demo ---").skip(1) {
        let Some(rest) = block.split("INPUT:").nth(1) else { continue };
        let Some((input, output)) = rest.split_once("OUTPUT:") else { continue };
        demos.push((input.trim().to_string(), output.trim().to_string()));
    }
    demos
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::OptionTag;

    #[test]
    fn default_demo_counts_are_five() {
        let lib = PromptLibrary::default();
        assert_eq!(lib.masking_demos.len(), 5);
        assert_eq!(lib.balancing_demos.len(), 5);
    }

    #[test]
    fn assistant_prompts_carry_demos_task_prompt_does_not() {
        let lib = PromptLibrary::default();
        assert!(!lib.masking_prompt(&["A_B".into()]).few_shot.is_empty());
        assert!(!lib.balancing_prompt(BalancingStyle::Neutral).few_shot.is_empty());
        assert!(lib.task_prompt().few_shot.is_empty());
    }

    #[test]
    fn rendered_system_has_no_unfilled_placeholders() {
        let lib = PromptLibrary::default();
        let sys = lib.masking_prompt(&["A_B".into(), "C_D".into()]).render_system();
        assert!(!sys.contains("{tokens}"));
        assert!(!sys.contains("{demos}"));
        assert!(sys.contains("A_B, C_D"));
    }

    #[test]
    fn options_render_in_fixed_letter_layout() {
        let options: Vec<OptionEntry> = ["x", "y", "z"]
            .iter()
            .enumerate()
            .map(|(index, text)| OptionEntry {
                index,
                text: text.to_string(),
                tag: OptionTag::Unknown,
            })
            .collect();
        assert_eq!(render_options(&options), "(a) x\n(b) y\n(c) z");
    }

    #[test]
    fn prompt_dir_overrides_only_existing_files() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("task_system.txt"), "custom instruction").unwrap();
        let lib = PromptLibrary::load_dir(dir.path()).unwrap();
        assert_eq!(lib.task_system, "custom instruction");
        assert_eq!(lib.cot_trigger, PromptLibrary::default().cot_trigger);
    }
}
