//! English-only filtering and meta-language prompt exclusion.

mod detector;
mod rules;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use detector::{
    detect_heuristic, detect_remote, is_arabic_letter, Detection, DetectorBackend,
    DetectorUnavailable, DetectorVerdict, DETECTOR_URL_ENV,
};
pub use rules::{is_meta_language_prompt, MetaPromptRule, RuleError, RuleMatch, RuleSet, DEFAULT_RULES};

use crate::corpus::{DropReason, InstructionSample, Language, SampleState};

pub const DEFAULT_CONFIDENCE_THRESHOLD: f64 = 0.7;

pub fn detect_language(text: &str, backend: &DetectorBackend) -> Detection {
    backend.detect(text)
}

#[derive(Debug, Clone)]
pub struct FilterConfig {
    pub threshold: f64,
    pub rules: RuleSet,
    pub detector: DetectorBackend,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            threshold: DEFAULT_CONFIDENCE_THRESHOLD,
            rules: RuleSet::default_rules(),
            detector: DetectorBackend::Heuristic,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetaMatchAudit {
    pub sample_id: String,
    pub rule_id: String,
    pub routed_to_english: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FilterReport {
    pub input: usize,
    pub kept: usize,
    pub dropped: BTreeMap<String, usize>,
    pub meta_matches: Vec<MetaMatchAudit>,
    /// Ids routed to the English-retention pool.
    pub forced_english: Vec<String>,
    pub detector_fallbacks: usize,
    pub rules_version: String,
    pub threshold: f64,
}

impl FilterReport {
    pub fn has_warnings(&self) -> bool {
        self.detector_fallbacks > 0
    }
}

/// Splits a raw corpus into English kept samples and dropped samples.
///
/// Detection runs over the human turns. Prompts asking for an English answer
/// stay in `kept` with `retain_english` set; other meta-language prompts are
/// dropped. Input order is preserved in both outputs.
pub fn filter_corpus(
    corpus: Vec<InstructionSample>,
    config: &FilterConfig,
) -> (Vec<InstructionSample>, Vec<InstructionSample>, FilterReport) {
    let mut report = FilterReport {
        input: corpus.len(),
        rules_version: config.rules.version.clone(),
        threshold: config.threshold,
        ..FilterReport::default()
    };
    let mut kept = Vec::new();
    let mut dropped = Vec::new();
    for mut sample in corpus {
        let detection = config.detector.detect(&sample.human_text());
        if detection.fell_back {
            report.detector_fallbacks += 1;
        }
        let verdict = detection.verdict;
        sample.language = verdict.language.clone();
        let reason = match verdict.language {
            Language::English if verdict.confidence >= config.threshold => None,
            Language::English | Language::Unknown => Some(DropReason::LowConfidence),
            _ => Some(DropReason::NonEnglish),
        };
        let reason = reason.or_else(|| {
            let hit = is_meta_language_prompt(&sample, &config.rules)?;
            let routed = hit.requests_english();
            report.meta_matches.push(MetaMatchAudit {
                sample_id: sample.id.clone(),
                rule_id: hit.rule_id,
                routed_to_english: routed,
            });
            if routed {
                sample.retain_english = true;
                report.forced_english.push(sample.id.clone());
                None
            } else {
                Some(DropReason::MetaLanguagePrompt)
            }
        });
        match reason {
            Some(r) => {
                sample.drop_with(r);
                *report.dropped.entry(r.to_string()).or_default() += 1;
                dropped.push(sample);
            }
            None => {
                sample.advance(SampleState::Filtered);
                kept.push(sample);
            }
        }
    }
    report.kept = kept.len();
    (kept, dropped, report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Source, Turn};
    use proptest::prelude::*;

    fn sample(id: &str, text: &str) -> InstructionSample {
        InstructionSample::new(id, Source::Lima, vec![Turn::human(text), Turn::assistant("ok")])
    }

    #[test]
    fn three_english_one_french() {
        let corpus = vec![
            sample("a", "What is the best way to learn how to cook rice?"),
            sample("b", "le chat est sur la table et il dort"),
            sample("c", "Can you explain how the heart pumps blood to the body?"),
            sample("d", "Write a short story about a dog and his owner in the park."),
        ];
        let (kept, dropped, report) = filter_corpus(corpus, &FilterConfig::default());
        assert_eq!(kept.len(), 3);
        assert_eq!(dropped.len(), 1);
        assert_eq!(dropped[0].id, "b");
        assert_eq!(dropped[0].drop_reason, Some(DropReason::NonEnglish));
        assert_eq!(report.dropped["NonEnglish"], 1);
        assert!(kept.iter().all(|s| s.state == SampleState::Filtered));
        assert!(kept.iter().all(|s| s.language == Language::English));
    }

    #[test]
    fn answer_in_english_is_routed_not_translated() {
        let corpus = vec![
            sample("a", "What is the difference between a list and a tuple in this code?"),
            sample("b", "Describe the water cycle for me and answer in English."),
        ];
        let (kept, dropped, report) = filter_corpus(corpus, &FilterConfig::default());
        assert!(dropped.is_empty());
        assert_eq!(kept.len(), 2);
        assert!(kept[1].retain_english);
        assert_eq!(report.forced_english, vec!["b".to_string()]);
        assert_eq!(report.meta_matches.len(), 1);
        assert!(report.meta_matches[0].routed_to_english);
    }

    #[test]
    fn other_meta_prompts_drop_with_rule_audit() {
        let corpus = vec![sample("a", "Translate from French to German: what is the time now?")];
        let (kept, dropped, report) = filter_corpus(corpus, &FilterConfig::default());
        assert!(kept.is_empty());
        assert_eq!(dropped[0].drop_reason, Some(DropReason::MetaLanguagePrompt));
        assert_eq!(report.meta_matches[0].rule_id, "rule-1");
    }

    #[test]
    fn empty_corpus() {
        let (kept, dropped, report) = filter_corpus(Vec::new(), &FilterConfig::default());
        assert!(kept.is_empty() && dropped.is_empty());
        assert_eq!(report.input, 0);
    }

    #[test]
    fn short_prompt_is_low_confidence() {
        let (_, dropped, _) = filter_corpus(vec![sample("a", "hi")], &FilterConfig::default());
        assert_eq!(dropped[0].drop_reason, Some(DropReason::LowConfidence));
    }

    const WORDS: &[&str] = &[
        "the", "cat", "is", "on", "le", "chat", "est", "sur", "und", "der", "el", "and", "of",
        "table", "translate", "to", "german", "answer", "in", "english", "معادلة", "دالة",
    ];

    fn corpus_strategy() -> impl Strategy<Value = Vec<InstructionSample>> {
        prop::collection::vec(prop::collection::vec(prop::sample::select(WORDS), 0..12), 0..12)
            .prop_map(|texts| {
                texts
                    .into_iter()
                    .enumerate()
                    .map(|(i, words)| sample(&format!("s{i}"), &words.join(" ")))
                    .collect()
            })
    }

    proptest! {
        #[test]
        fn partition_and_monotone_threshold(corpus in corpus_strategy(), lo in 0.0f64..1.0, delta in 0.0f64..0.5) {
            let low = FilterConfig { threshold: lo, ..FilterConfig::default() };
            let high = FilterConfig { threshold: (lo + delta).min(1.0), ..FilterConfig::default() };
            let (k1, d1, r1) = filter_corpus(corpus.clone(), &low);
            let (k2, _, _) = filter_corpus(corpus.clone(), &high);
            prop_assert_eq!(k1.len() + d1.len(), corpus.len());
            prop_assert!(k2.len() <= k1.len());
            let kept_ids: std::collections::HashSet<_> = k1.iter().map(|s| &s.id).collect();
            prop_assert!(d1.iter().all(|s| !kept_ids.contains(&s.id)));
            let meta_drops = d1.iter().filter(|s| s.drop_reason == Some(DropReason::MetaLanguagePrompt)).count();
            let audited = r1.meta_matches.iter().filter(|m| !m.routed_to_english).count();
            prop_assert_eq!(meta_drops, audited);
        }
    }
}
