use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const DEFAULT_GLOSSARY: &str = include_str!("../../data/glossary.tsv");

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GlossaryError {
    #[error("glossary line {line}: {message}")]
    Invalid { line: usize, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TermMode {
    ReplaceWithArabic,
    KeepEnglish,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GlossaryEntry {
    pub term: String,
    pub mode: TermMode,
    pub replacement: Option<String>,
}

/// Case-insensitive term table. Keys are lowercased terms.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TermGlossary {
    entries: BTreeMap<String, GlossaryEntry>,
    // first lowercase char -> keys, longest first
    index: HashMap<char, Vec<String>>,
}

impl TermGlossary {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn default_glossary() -> Self {
        Self::parse(DEFAULT_GLOSSARY).expect("built-in glossary parses")
    }

    /// Parses `term<TAB>mode<TAB>replacement?` lines; `#` starts a comment.
    /// Modes: `keep` / `keep-english`, `replace` / `replace-with-arabic`.
    pub fn parse(text: &str) -> Result<Self, GlossaryError> {
        let mut glossary = Self::empty();
        for (idx, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.trim_start().starts_with('#') {
                continue;
            }
            let err = |message: &str| GlossaryError::Invalid {
                line: idx + 1,
                message: message.into(),
            };
            let mut cols = line.split('\t');
            let term = cols.next().unwrap_or_default().trim();
            if term.is_empty() {
                return Err(err("empty term"));
            }
            let mode = match cols.next().map(|m| m.trim().to_ascii_lowercase()).as_deref() {
                Some("keep") | Some("keep-english") => TermMode::KeepEnglish,
                Some("replace") | Some("replace-with-arabic") => TermMode::ReplaceWithArabic,
                Some(other) => return Err(err(&format!("unknown mode {other:?}"))),
                None => return Err(err("missing mode column")),
            };
            let replacement = cols.next().map(str::trim).filter(|r| !r.is_empty());
            if mode == TermMode::ReplaceWithArabic && replacement.is_none() {
                return Err(err("replace entry needs a replacement"));
            }
            glossary.insert(GlossaryEntry {
                term: term.to_string(),
                mode,
                replacement: replacement.map(str::to_string),
            });
        }
        Ok(glossary)
    }

    pub fn insert(&mut self, entry: GlossaryEntry) {
        let key = entry.term.to_lowercase();
        self.entries.insert(key, entry);
        self.reindex();
    }

    pub fn keep(mut self, term: &str) -> Self {
        self.insert(GlossaryEntry {
            term: term.into(),
            mode: TermMode::KeepEnglish,
            replacement: None,
        });
        self
    }

    pub fn replace(mut self, term: &str, arabic: &str) -> Self {
        self.insert(GlossaryEntry {
            term: term.into(),
            mode: TermMode::ReplaceWithArabic,
            replacement: Some(arabic.into()),
        });
        self
    }

    fn reindex(&mut self) {
        self.index.clear();
        for key in self.entries.keys() {
            if let Some(first) = key.chars().next() {
                self.index.entry(first).or_default().push(key.clone());
            }
        }
        for keys in self.index.values_mut() {
            keys.sort_by(|a, b| b.len().cmp(&a.len()).then_with(|| a.cmp(b)));
        }
    }

    pub fn entries(&self) -> impl Iterator<Item = &GlossaryEntry> {
        self.entries.values()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Hex SHA-256 over the sorted entries.
    pub fn content_hash(&self) -> String {
        let mut hasher = Sha256::new();
        for (key, e) in &self.entries {
            let mode = match e.mode {
                TermMode::KeepEnglish => "keep",
                TermMode::ReplaceWithArabic => "replace",
            };
            hasher.update(key.as_bytes());
            hasher.update(b"\t");
            hasher.update(mode.as_bytes());
            hasher.update(b"\t");
            hasher.update(e.replacement.as_deref().unwrap_or("").as_bytes());
            hasher.update(b"\n");
        }
        hex(&hasher.finalize())
    }

    /// Longest entry of `mode` matching at byte `at` on word boundaries.
    /// Returns the end byte and the entry.
    pub(crate) fn match_at(&self, text: &str, at: usize, mode: TermMode) -> Option<(usize, &GlossaryEntry)> {
        if !is_word_start(text, at) {
            return None;
        }
        let first = text[at..].chars().next()?.to_lowercase().next()?;
        let keys = self.index.get(&first)?;
        keys.iter().find_map(|key| {
            let entry = &self.entries[key];
            if entry.mode != mode {
                return None;
            }
            let end = match_ci(text, at, key)?;
            is_word_end(text, end).then_some((end, entry))
        })
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub(crate) fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || c == '_'
}

fn is_word_start(text: &str, at: usize) -> bool {
    text[..at].chars().next_back().is_none_or(|c| !is_word_char(c))
}

fn is_word_end(text: &str, at: usize) -> bool {
    text[at..].chars().next().is_none_or(|c| !is_word_char(c))
}

/// Case-insensitive prefix match of lowercase `key` at `at`; returns end byte.
fn match_ci(text: &str, at: usize, key: &str) -> Option<usize> {
    let mut rest = text[at..].char_indices();
    let mut key_chars = key.chars().peekable();
    let mut end = at;
    while key_chars.peek().is_some() {
        let (off, c) = rest.next()?;
        for lc in c.to_lowercase() {
            if key_chars.next() != Some(lc) {
                return None;
            }
        }
        end = at + off + c.len_utf8();
    }
    Some(end)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_has_reference_terms() {
        let g = TermGlossary::default_glossary();
        let modes: HashMap<_, _> = g.entries().map(|e| (e.term.as_str(), e.mode)).collect();
        assert_eq!(modes["equation"], TermMode::ReplaceWithArabic);
        assert_eq!(modes["API"], TermMode::KeepEnglish);
        assert_eq!(modes["GitHub"], TermMode::KeepEnglish);
    }

    #[test]
    fn matching_is_case_insensitive_on_word_boundaries() {
        let g = TermGlossary::empty().keep("API");
        assert_eq!(g.match_at("an api call", 3, TermMode::KeepEnglish).map(|m| m.0), Some(6));
        assert!(g.match_at("rapid", 1, TermMode::KeepEnglish).is_none());
        assert!(g.match_at("apis", 0, TermMode::KeepEnglish).is_none());
    }

    #[test]
    fn longest_term_wins() {
        let g = TermGlossary::empty().keep("Java").keep("JavaScript");
        let (end, e) = g.match_at("JavaScript code", 0, TermMode::KeepEnglish).unwrap();
        assert_eq!((end, e.term.as_str()), (10, "JavaScript"));
    }

    #[test]
    fn parse_errors() {
        assert!(TermGlossary::parse("x\tbogus").is_err());
        assert!(TermGlossary::parse("x\treplace").is_err());
        assert!(TermGlossary::parse("x").is_err());
    }

    #[test]
    fn hash_is_order_independent() {
        let a = TermGlossary::empty().keep("A").keep("B");
        let b = TermGlossary::empty().keep("B").keep("A");
        assert_eq!(a.content_hash(), b.content_hash());
        assert_ne!(a.content_hash(), TermGlossary::empty().content_hash());
    }
}
