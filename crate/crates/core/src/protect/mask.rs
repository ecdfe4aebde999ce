use std::collections::HashMap;
use std::fmt;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::glossary::{TermGlossary, TermMode};
use super::segment::{segment, Segment, SegmentKind, PLACEHOLDER_CLOSE, PLACEHOLDER_OPEN};

static PLACEHOLDER: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"⟦(P-\d{4,})⟧").expect("placeholder regex"));

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PlaceholderId(pub u32);

impl PlaceholderId {
    pub fn token(self) -> String {
        format!("{PLACEHOLDER_OPEN}{self}{PLACEHOLDER_CLOSE}")
    }
}

impl fmt::Display for PlaceholderId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "P-{:04}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskedText {
    pub template: String,
    pub slots: Vec<(PlaceholderId, Segment)>,
}

impl MaskedText {
    /// Template with every placeholder removed.
    pub fn visible_text(&self) -> String {
        strip_placeholders(&self.template)
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum UnmaskError {
    #[error("placeholder {0} missing from translation")]
    PlaceholderLoss(String),
    #[error("placeholder {0} appears more than once")]
    PlaceholderDuplication(String),
    #[error("placeholder {0} is not part of the source")]
    PlaceholderUnknown(String),
}

pub fn mask(segments: &[Segment]) -> MaskedText {
    let mut template = String::new();
    let mut slots = Vec::new();
    for seg in segments {
        if seg.kind == SegmentKind::Translate {
            template.push_str(&seg.text);
        } else {
            let id = PlaceholderId(slots.len() as u32 + 1);
            template.push_str(&id.token());
            slots.push((id, seg.clone()));
        }
    }
    MaskedText { template, slots }
}

/// Occurrence count of each placeholder label in `text`.
pub fn placeholder_counts(text: &str) -> HashMap<String, usize> {
    let mut counts = HashMap::new();
    for cap in PLACEHOLDER.captures_iter(text) {
        *counts.entry(cap[1].to_string()).or_insert(0) += 1;
    }
    counts
}

pub fn strip_placeholders(text: &str) -> String {
    PLACEHOLDER.replace_all(text, "").into_owned()
}

/// Checks that every slot placeholder occurs exactly once and nothing else
/// looks like one. Unknown ids are reported first, then duplicates, then
/// losses, each in slot order.
pub fn check_placeholders(masked: &MaskedText, text: &str) -> Result<(), UnmaskError> {
    let counts = placeholder_counts(text);
    let known: HashMap<String, ()> = masked.slots.iter().map(|(id, _)| (id.to_string(), ())).collect();
    let mut unknown: Vec<&String> = counts.keys().filter(|k| !known.contains_key(*k)).collect();
    unknown.sort();
    if let Some(u) = unknown.first() {
        return Err(UnmaskError::PlaceholderUnknown((*u).clone()));
    }
    for (id, _) in &masked.slots {
        let label = id.to_string();
        match counts.get(&label).copied().unwrap_or(0) {
            0 => return Err(UnmaskError::PlaceholderLoss(label)),
            1 => {}
            _ => return Err(UnmaskError::PlaceholderDuplication(label)),
        }
    }
    Ok(())
}

pub fn unmask(masked: &MaskedText, translated_template: &str) -> Result<String, UnmaskError> {
    check_placeholders(masked, translated_template)?;
    let by_label: HashMap<String, &str> = masked
        .slots
        .iter()
        .map(|(id, seg)| (id.to_string(), seg.text.as_str()))
        .collect();
    Ok(PLACEHOLDER
        .replace_all(translated_template, |cap: &regex::Captures<'_>| {
            by_label[&cap[1]].to_string()
        })
        .into_owned())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Substitution {
    pub term: String,
    pub replacement: String,
    /// Byte span in the input text.
    pub span: std::ops::Range<usize>,
}

/// Replaces `ReplaceWithArabic` terms inside translatable segments only.
pub fn apply_glossary(text: &str, glossary: &TermGlossary) -> (String, Vec<Substitution>) {
    let mut out = String::with_capacity(text.len());
    let mut log = Vec::new();
    for seg in segment(text, glossary) {
        if seg.kind != SegmentKind::Translate {
            out.push_str(&seg.text);
            continue;
        }
        let mut i = seg.byte_span.start;
        let mut copied = i;
        while i < seg.byte_span.end {
            let hit = glossary
                .match_at(text, i, TermMode::ReplaceWithArabic)
                .filter(|(end, _)| *end <= seg.byte_span.end);
            if let Some((end, entry)) = hit {
                let replacement = entry.replacement.clone().unwrap_or_default();
                out.push_str(&text[copied..i]);
                out.push_str(&replacement);
                log.push(Substitution {
                    term: text[i..end].to_string(),
                    replacement,
                    span: i..end,
                });
                i = end;
                copied = end;
            } else {
                i += text[i..].chars().next().map_or(1, char::len_utf8);
            }
        }
        out.push_str(&text[copied..seg.byte_span.end]);
    }
    (out, log)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn masked(text: &str) -> MaskedText {
        mask(&segment(text, &TermGlossary::default_glossary()))
    }

    #[test]
    fn three_preserve_spans() {
        let m = masked("Use `x` with $y$ at https://a.io now");
        assert_eq!(m.slots.len(), 3);
        assert_eq!(m.template, "Use ⟦P-0001⟧ with ⟦P-0002⟧ at ⟦P-0003⟧ now");
    }

    #[test]
    fn all_translate_template_is_text() {
        let m = masked("Nothing special here.");
        assert_eq!(m.template, "Nothing special here.");
        assert!(m.slots.is_empty());
    }

    #[test]
    fn identity_round_trip() {
        let text = "Use `x` with $y$ and ⟦P-0001⟧ literally";
        let m = masked(text);
        assert_eq!(unmask(&m, &m.template).unwrap(), text);
    }

    #[test]
    fn loss_duplication_unknown() {
        let m = masked("a `b` c `d` e");
        let lost = m.template.replace("⟦P-0002⟧", "");
        assert_eq!(unmask(&m, &lost), Err(UnmaskError::PlaceholderLoss("P-0002".into())));
        let dup = format!("{} ⟦P-0002⟧", m.template);
        assert_eq!(unmask(&m, &dup), Err(UnmaskError::PlaceholderDuplication("P-0002".into())));
        let unk = format!("{} ⟦P-0009⟧", m.template);
        assert_eq!(unmask(&m, &unk), Err(UnmaskError::PlaceholderUnknown("P-0009".into())));
    }

    #[test]
    fn glossary_substitution() {
        let g = TermGlossary::empty().replace("equation", "معادلة");
        let (out, log) = apply_glossary("the equation is linear", &g);
        assert_eq!(out, "the معادلة is linear");
        assert_eq!(log.len(), 1);
        assert_eq!(log[0].span, 4..12);
        let (same, log) = apply_glossary("nothing to see", &g);
        assert_eq!(same, "nothing to see");
        assert!(log.is_empty());
    }

    #[test]
    fn glossary_skips_preserved_regions() {
        let g = TermGlossary::empty().replace("function", "دالة");
        let (out, log) = apply_glossary("a function `function()` here", &g);
        assert_eq!(out, "a دالة `function()` here");
        assert_eq!(log.len(), 1);
    }
}
