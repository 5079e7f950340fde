//! Prompt templates: the chain-of-thought system prompt, per-dataset query
//! templates, and the correctness-query instructions used for P(True).

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::answer::AnswerType;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PromptError {
    #[error("confidence prompt must not be empty")]
    EmptyInstruction,
    #[error("unknown confidence prompt {0:?} (expected default or i1..i6)")]
    UnknownInstruction(String),
    #[error("unknown dataset template {0:?}")]
    UnknownDataset(String),
    #[error("template {template} needs field {field:?}")]
    MissingField { template: &'static str, field: String },
}

const SYSTEM_PROMPT_TEMPLATE: &str = "For the following question, provide a step-by-step explanation of your thought process.\n\
Use the format demonstrated below for your response.\n\
```Example Format:\n\
Explanation: <Your detailed explanation here, outlining how you arrived at your answer.>\n\
Answer: <Insert your concise answer here, which should include a {answer_type} (e.g., {demo})>\n\
Ensure that your response strictly adheres to this format. Explicitly include the words 'Explanation:', 'Answer:'.";

/// The raw system prompt template with `{answer_type}` and `{demo}` slots.
pub fn system_prompt_template() -> &'static str {
    SYSTEM_PROMPT_TEMPLATE
}

pub fn render_system_prompt(answer_type: AnswerType) -> String {
    SYSTEM_PROMPT_TEMPLATE
        .replace("{answer_type}", answer_type.label())
        .replace("{demo}", answer_type.demo())
}

/// Instruction appended after a (query, response) pair to ask whether the
/// response is correct.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfidencePrompt {
    text: String,
}

pub const DEFAULT_CONFIDENCE_PROMPT: &str = "Is the answer correct? (Yes/No)";

const ALTERNATIVE_PROMPTS: [&str; 6] = [
    "Is this the correct answer?",
    "Does this answer seem right?",
    "Is this the right answer?",
    "Is the given answer accurate?",
    "Would you say this answer is correct?",
    "Is this response correct?",
];

impl ConfidencePrompt {
    pub fn new(text: impl Into<String>) -> Result<Self, PromptError> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(PromptError::EmptyInstruction);
        }
        Ok(ConfidencePrompt { text })
    }

    /// Looks up a named instruction: `default`, or `i1` through `i6`.
    pub fn by_name(name: &str) -> Result<Self, PromptError> {
        let lower = name.trim().to_ascii_lowercase();
        if lower == "default" || lower == "original" {
            return Ok(Self::default());
        }
        lower
            .strip_prefix('i')
            .and_then(|n| n.parse::<usize>().ok())
            .filter(|n| (1..=ALTERNATIVE_PROMPTS.len()).contains(n))
            .map(|n| ConfidencePrompt {
                text: ALTERNATIVE_PROMPTS[n - 1].to_string(),
            })
            .ok_or_else(|| PromptError::UnknownInstruction(name.to_string()))
    }

    pub fn text(&self) -> &str {
        &self.text
    }
}

impl Default for ConfidencePrompt {
    fn default() -> Self {
        ConfidencePrompt {
            text: DEFAULT_CONFIDENCE_PROMPT.to_string(),
        }
    }
}

impl FromStr for ConfidencePrompt {
    type Err = PromptError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::by_name(s)
    }
}

impl fmt::Display for ConfidencePrompt {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.text)
    }
}

/// SHA-256 (hex) of everything that shapes a cached pool besides the query
/// text itself: the system prompt template and the confidence instruction.
pub fn prompt_hash(instruction: &ConfidencePrompt) -> String {
    let mut h = Sha256::new();
    h.update(SYSTEM_PROMPT_TEMPLATE.as_bytes());
    h.update([0u8]);
    h.update(instruction.text().as_bytes());
    hex::encode(h.finalize())
}

/// Query templates for the supported seed and evaluation datasets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetTemplate {
    Gsm8k,
    Sciq,
    CommonsenseQa,
    Winogrande,
    OpenBookQa,
    Reclor,
    MathQa,
    ArcChallenge,
    ArcEasy,
    LogiQa,
    Svamp,
    Gpqa,
    AquaRat,
}

impl DatasetTemplate {
    pub const ALL: [DatasetTemplate; 13] = [
        DatasetTemplate::Gsm8k,
        DatasetTemplate::Sciq,
        DatasetTemplate::CommonsenseQa,
        DatasetTemplate::Winogrande,
        DatasetTemplate::OpenBookQa,
        DatasetTemplate::Reclor,
        DatasetTemplate::MathQa,
        DatasetTemplate::ArcChallenge,
        DatasetTemplate::ArcEasy,
        DatasetTemplate::LogiQa,
        DatasetTemplate::Svamp,
        DatasetTemplate::Gpqa,
        DatasetTemplate::AquaRat,
    ];

    pub fn name(self) -> &'static str {
        match self {
            DatasetTemplate::Gsm8k => "gsm8k",
            DatasetTemplate::Sciq => "sciq",
            DatasetTemplate::CommonsenseQa => "commonsense_qa",
            DatasetTemplate::Winogrande => "winogrande",
            DatasetTemplate::OpenBookQa => "openbookqa",
            DatasetTemplate::Reclor => "reclor",
            DatasetTemplate::MathQa => "math_qa",
            DatasetTemplate::ArcChallenge => "arc_challenge",
            DatasetTemplate::ArcEasy => "arc_easy",
            DatasetTemplate::LogiQa => "logiqa",
            DatasetTemplate::Svamp => "svamp",
            DatasetTemplate::Gpqa => "gpqa",
            DatasetTemplate::AquaRat => "aqua_rat",
        }
    }

    pub fn template(self) -> &'static str {
        match self {
            DatasetTemplate::Gsm8k => "Question: {question}\n",
            DatasetTemplate::Sciq
            | DatasetTemplate::CommonsenseQa
            | DatasetTemplate::OpenBookQa
            | DatasetTemplate::AquaRat => "Question: {question}\nOptions:\n{options_text}\n",
            DatasetTemplate::Winogrande => {
                "Question: {sentence}\nOptions:\nA. {option1}\nB. {option2}\n"
            }
            DatasetTemplate::Reclor => {
                "Passage:\n{passage}\n\nQuestion: {question}\n\nOptions:\n{options_text}\n"
            }
            DatasetTemplate::MathQa => "Problem: {problem_text}\nOptions:\n{options_block}\n",
            DatasetTemplate::ArcChallenge | DatasetTemplate::ArcEasy => {
                "Question: {question}\nOptions:\n{options_str}\n"
            }
            DatasetTemplate::LogiQa => {
                "Article:\n{context}\n\nQuestion: {question}\n\nOptions:\n{options_text}\n"
            }
            DatasetTemplate::Svamp => "Question: {body_question}\n",
            DatasetTemplate::Gpqa => "{question}\nOptions:\n{options_text}\n",
        }
    }

    pub fn answer_type(self) -> AnswerType {
        match self {
            DatasetTemplate::Gsm8k | DatasetTemplate::Svamp => AnswerType::Number,
            _ => AnswerType::OptionLetter,
        }
    }

    /// Substitutes `{field}` slots. Every slot in the template must be
    /// supplied.
    pub fn render(self, fields: &BTreeMap<String, String>) -> Result<String, PromptError> {
        let template = self.template();
        let mut out = String::with_capacity(template.len() + 64);
        let mut rest = template;
        while let Some(open) = rest.find('{') {
            out.push_str(&rest[..open]);
            let close = rest[open..]
                .find('}')
                .map(|c| open + c)
                .expect("templates have balanced braces");
            let key = &rest[open + 1..close];
            let value = fields.get(key).ok_or_else(|| PromptError::MissingField {
                template: self.name(),
                field: key.to_string(),
            })?;
            out.push_str(value);
            rest = &rest[close + 1..];
        }
        out.push_str(rest);
        Ok(out)
    }
}

impl FromStr for DatasetTemplate {
    type Err = PromptError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let lower = s.trim().to_ascii_lowercase();
        DatasetTemplate::ALL
            .into_iter()
            .find(|d| d.name() == lower)
            .ok_or_else(|| PromptError::UnknownDataset(s.to_string()))
    }
}

/// Formats lettered options as `A. first\nB. second...` (no trailing newline).
pub fn format_options(options: &[&str]) -> String {
    options
        .iter()
        .zip('A'..='Z')
        .map(|(text, letter)| format!("{letter}. {text}"))
        .collect::<Vec<_>>()
        .join("\n")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn named_prompts() {
        assert_eq!(
            ConfidencePrompt::by_name("default").unwrap().text(),
            DEFAULT_CONFIDENCE_PROMPT
        );
        assert_eq!(
            ConfidencePrompt::by_name("I3").unwrap().text(),
            "Is this the right answer?"
        );
        assert!(ConfidencePrompt::by_name("i7").is_err());
        assert_eq!(ConfidencePrompt::new("  "), Err(PromptError::EmptyInstruction));
    }

    #[test]
    fn system_prompt_mentions_answer_type() {
        let p = render_system_prompt(AnswerType::Number);
        assert!(p.contains("which should include a number (e.g., 42)"));
        assert!(!p.contains('{'));
    }

    #[test]
    fn prompt_hash_depends_on_instruction() {
        let a = prompt_hash(&ConfidencePrompt::default());
        let b = prompt_hash(&ConfidencePrompt::by_name("i1").unwrap());
        assert_ne!(a, b);
        assert_eq!(a.len(), 64);
        assert_eq!(a, prompt_hash(&ConfidencePrompt::default()));
    }

    #[test]
    fn renders_dataset_templates() {
        let mut fields = BTreeMap::new();
        fields.insert("question".to_string(), "2 + 3 = ?".to_string());
        fields.insert("options_str".to_string(), format_options(&["4", "5"]));
        let arc = DatasetTemplate::ArcEasy.render(&fields).unwrap();
        assert_eq!(arc, "Question: 2 + 3 = ?\nOptions:\nA. 4\nB. 5\n");
        let err = DatasetTemplate::LogiQa.render(&fields).unwrap_err();
        assert!(matches!(err, PromptError::MissingField { .. }));
        assert_eq!("math_qa".parse::<DatasetTemplate>().unwrap(), DatasetTemplate::MathQa);
    }
}
