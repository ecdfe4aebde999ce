use regex::{Regex, RegexBuilder};
use thiserror::Error;

use crate::corpus::{InstructionSample, Role};

pub const DEFAULT_RULES: &str = include_str!("../../data/meta_rules.txt");

const LANGUAGE_NAMES: &[&str] = &[
    "english", "french", "spanish", "german", "arabic", "darija", "moroccan arabic",
    "italian", "portuguese", "chinese", "mandarin", "japanese", "korean", "russian", "hindi",
    "turkish", "dutch", "polish", "swedish", "greek", "hebrew", "persian", "farsi", "urdu",
    "bengali", "vietnamese", "indonesian", "thai", "latin", "ukrainian", "romanian", "czech",
];

#[derive(Debug, Error)]
pub enum RuleError {
    #[error("rule on line {line} does not compile: {source}")]
    Compile {
        line: usize,
        #[source]
        source: regex::Error,
    },
}

#[derive(Debug, Clone)]
pub struct MetaPromptRule {
    pub id: String,
    pub pattern: String,
    pub rationale: String,
    regex: Regex,
}

impl MetaPromptRule {
    pub fn is_match(&self, text: &str) -> bool {
        self.regex.is_match(text)
    }
}

#[derive(Debug, Clone)]
pub struct RuleSet {
    pub version: String,
    pub rules: Vec<MetaPromptRule>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RuleMatch {
    pub rule_id: String,
    /// Requested response language when the rule captures one.
    pub target: Option<String>,
}

impl RuleMatch {
    pub fn requests_english(&self) -> bool {
        self.target.as_deref() == Some("english")
    }
}

impl RuleSet {
    pub fn default_rules() -> Self {
        Self::parse(DEFAULT_RULES).expect("built-in rules compile")
    }

    /// Parses a rule file: one pattern per line, `#` comments, and an
    /// optional `# version: N` header.
    pub fn parse(text: &str) -> Result<Self, RuleError> {
        let alternation = LANGUAGE_NAMES
            .iter()
            .map(|n| n.replace(' ', r"\s+"))
            .collect::<Vec<_>>()
            .join("|");
        let mut version = "unversioned".to_string();
        let mut rules = Vec::new();
        let mut comment_block = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if let Some(comment) = line.strip_prefix('#') {
                let comment = comment.trim();
                if let Some(v) = comment.strip_prefix("version:") {
                    version = v.trim().to_string();
                } else if !comment.is_empty() {
                    comment_block.push(comment.to_string());
                }
                continue;
            }
            if line.is_empty() {
                comment_block.clear();
                continue;
            }
            let expanded = line
                .replace("{TARGET}", &format!("(?P<target>{alternation})"))
                .replace("{LANG}", &format!("(?:{alternation})"));
            let regex = RegexBuilder::new(&expanded)
                .case_insensitive(true)
                .build()
                .map_err(|source| RuleError::Compile {
                    line: idx + 1,
                    source,
                })?;
            rules.push(MetaPromptRule {
                id: format!("rule-{}", rules.len() + 1),
                pattern: line.to_string(),
                rationale: comment_block.join(" "),
                regex,
            });
        }
        Ok(Self { version, rules })
    }

    pub fn match_text(&self, text: &str) -> Option<RuleMatch> {
        self.rules.iter().find_map(|rule| {
            rule.regex.captures(text).map(|caps| RuleMatch {
                rule_id: rule.id.clone(),
                target: caps.name("target").map(|m| {
                    m.as_str()
                        .split_whitespace()
                        .collect::<Vec<_>>()
                        .join(" ")
                        .to_lowercase()
                }),
            })
        })
    }
}

/// First rule matched by any human turn, scanning turns in order.
pub fn is_meta_language_prompt(sample: &InstructionSample, rules: &RuleSet) -> Option<RuleMatch> {
    sample
        .turns
        .iter()
        .filter(|t| t.role == Role::Human)
        .find_map(|t| rules.match_text(&t.content))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Source, Turn};

    fn sample(text: &str) -> InstructionSample {
        InstructionSample::new("s", Source::Lima, vec![Turn::human(text), Turn::assistant("ok")])
    }

    #[test]
    fn default_rules_load() {
        let rules = RuleSet::default_rules();
        assert_eq!(rules.version, "1");
        assert_eq!(rules.rules.len(), 4);
    }

    #[test]
    fn translate_between_languages() {
        let rules = RuleSet::default_rules();
        let m = is_meta_language_prompt(&sample("Translate from French to German: bonjour"), &rules)
            .unwrap();
        assert_eq!(m.rule_id, "rule-1");
        assert_eq!(m.target.as_deref(), Some("german"));
        assert!(!m.requests_english());
    }

    #[test]
    fn answer_in_language() {
        let rules = RuleSet::default_rules();
        let m = is_meta_language_prompt(&sample("Please answer in Spanish."), &rules).unwrap();
        assert_eq!(m.target.as_deref(), Some("spanish"));
        let m = is_meta_language_prompt(&sample("Answer in English, please."), &rules).unwrap();
        assert!(m.requests_english());
    }

    #[test]
    fn ordinary_prompts_pass() {
        let rules = RuleSet::default_rules();
        for text in [
            "Explain binary search",
            "Write a function in Python that reverses a list",
            "What is the capital of France?",
        ] {
            assert_eq!(is_meta_language_prompt(&sample(text), &rules), None, "{text}");
        }
    }

    #[test]
    fn only_human_turns_are_checked() {
        let rules = RuleSet::default_rules();
        let s = InstructionSample::new(
            "s",
            Source::Lima,
            vec![Turn::human("hello"), Turn::assistant("I can answer in French too.")],
        );
        assert_eq!(is_meta_language_prompt(&s, &rules), None);
    }

    #[test]
    fn bad_pattern_reports_line() {
        let err = RuleSet::parse("# version: 2\n(unclosed").unwrap_err();
        assert!(matches!(err, RuleError::Compile { line: 2, .. }));
    }
}
