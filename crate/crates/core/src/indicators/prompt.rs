use crate::error::{Error, Result};

const INSTRUCTION_SLOT: &str = "[Instruction]";
const CAPTION_SLOT: &str = "[Caption]";

const DEFAULT_SYSTEM: &str = include_str!("../../assets/gpt_prompt_system.txt");
const DEFAULT_USER: &str = include_str!("../../assets/gpt_prompt_user.txt");

/// Rating prompt with `[Instruction]` and `[Caption]` slots in the system
/// message. The user message is sent verbatim.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub system_template: String,
    pub user_template: String,
}

impl Default for PromptTemplate {
    fn default() -> Self {
        Self {
            system_template: DEFAULT_SYSTEM.to_string(),
            user_template: DEFAULT_USER.to_string(),
        }
    }
}

impl PromptTemplate {
    pub fn new(system_template: impl Into<String>, user_template: impl Into<String>) -> Result<Self> {
        let t = Self {
            system_template: system_template.into(),
            user_template: user_template.into(),
        };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        for slot in [INSTRUCTION_SLOT, CAPTION_SLOT] {
            if !self.system_template.contains(slot) {
                return Err(Error::TemplateError(format!("system template lacks {slot}")));
            }
            if self.user_template.contains(slot) {
                return Err(Error::TemplateError(format!("user template contains {slot}")));
            }
        }
        Ok(())
    }

    /// Substitutes both slots in a single left-to-right pass, so slot-like
    /// text inside the substituted values is never expanded again.
    pub fn render(&self, instruction: &str, response: &str) -> Result<(String, String)> {
        self.validate()?;
        let mut out = String::with_capacity(self.system_template.len() + instruction.len() + response.len());
        let mut rest = self.system_template.as_str();
        loop {
            let next = [(INSTRUCTION_SLOT, instruction), (CAPTION_SLOT, response)]
                .into_iter()
                .filter_map(|(slot, value)| rest.find(slot).map(|at| (at, slot, value)))
                .min_by_key(|(at, _, _)| *at);
            match next {
                Some((at, slot, value)) => {
                    out.push_str(&rest[..at]);
                    out.push_str(value);
                    rest = &rest[at + slot.len()..];
                }
                None => {
                    out.push_str(rest);
                    break;
                }
            }
        }
        Ok((out, self.user_template.clone()))
    }
}

/// Reads the score from the first nonempty line of a grader reply.
pub fn parse_gpt_reply(body: &str) -> Result<f64> {
    let line = body
        .lines()
        .map(str::trim)
        .find(|l| !l.is_empty())
        .ok_or_else(|| Error::UnparseableScore(String::new()))?;
    let value: f64 = line
        .parse()
        .ok()
        .filter(|v: &f64| v.is_finite())
        .ok_or_else(|| Error::UnparseableScore(line.to_string()))?;
    if !(0.0..=100.0).contains(&value) {
        return Err(Error::ScoreOutOfRange {
            what: "gpt".into(),
            value,
            lo: 0.0,
            hi: 100.0,
        });
    }
    Ok(value)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn renders_both_slots() {
        let (sys, user) = PromptTemplate::default()
            .render("Describe this image in detail.", "A cat.")
            .unwrap();
        assert!(sys.contains("Instruction: Describe this image in detail."));
        assert!(sys.contains("Caption: A cat."));
        assert!(!sys.contains(INSTRUCTION_SLOT) && !sys.contains(CAPTION_SLOT));
        assert_eq!(user, DEFAULT_USER);
    }

    #[test]
    fn empty_instruction_is_fine() {
        let (sys, _) = PromptTemplate::default().render("", "A dog.").unwrap();
        assert!(sys.contains("Instruction: \n"));
    }

    #[test]
    fn slot_text_in_response_is_not_expanded() {
        let (sys, _) = PromptTemplate::default()
            .render("[Caption]", "see [Caption] and [Instruction]")
            .unwrap();
        assert!(sys.contains("Instruction: [Caption]\n"));
        assert!(sys.ends_with("Caption: see [Caption] and [Instruction]"));
        assert_eq!(sys.matches("[Caption]").count(), 2);
    }

    #[test]
    fn template_missing_slot() {
        assert!(matches!(
            PromptTemplate::new("Instruction: [Instruction]", "rate it"),
            Err(Error::TemplateError(_))
        ));
        assert!(matches!(
            PromptTemplate::new("[Instruction] [Caption]", "rate [Caption]"),
            Err(Error::TemplateError(_))
        ));
    }

    #[test]
    fn reply_parsing() {
        assert_eq!(parse_gpt_reply("87\nThe caption is clear...").unwrap(), 87.0);
        assert_eq!(parse_gpt_reply("  95.5 \nexplanation").unwrap(), 95.5);
        assert_eq!(parse_gpt_reply("\n\n 0\n").unwrap(), 0.0);
        assert!(matches!(parse_gpt_reply("Score: high"), Err(Error::UnparseableScore(_))));
        assert!(matches!(parse_gpt_reply(""), Err(Error::UnparseableScore(_))));
        assert!(matches!(parse_gpt_reply("NaN"), Err(Error::UnparseableScore(_))));
        assert!(matches!(parse_gpt_reply("101\nhm"), Err(Error::ScoreOutOfRange { .. })));
        assert!(matches!(parse_gpt_reply("-1"), Err(Error::ScoreOutOfRange { .. })));
    }
}
