//! Canonical instruction-corpus types and the line-delimited record format.
//!
//! A record is one JSON object per line:
//!
//! ```text
//! {"id":"a1","source":"LIMA","language":"english","turns":[{"role":"human","content":"hi"}, ...],
//!  "state":"raw","drop_reason":null, ...extra fields}
//! ```
//!
//! Unknown top-level fields are carried in [`InstructionSample::extra`] and
//! written back in their original order.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RecordError {
    #[error("malformed record: {0}")]
    MalformedRecord(String),
    #[error("schema violation: {0}")]
    SchemaViolation(String),
    #[error("conversation has no turns")]
    EmptyConversation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    Human,
    Assistant,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::System => "system",
            Role::Human => "human",
            Role::Assistant => "assistant",
        }
    }
}

impl FromStr for Role {
    type Err = RecordError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "system" => Ok(Role::System),
            "human" => Ok(Role::Human),
            "assistant" => Ok(Role::Assistant),
            other => Err(RecordError::SchemaViolation(format!("unknown role {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Turn {
    pub role: Role,
    pub content: String,
}

impl Turn {
    pub fn new(role: Role, content: impl Into<String>) -> Self {
        Self {
            role,
            content: content.into(),
        }
    }

    pub fn human(content: impl Into<String>) -> Self {
        Self::new(Role::Human, content)
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self::new(Role::Assistant, content)
    }

    pub fn system(content: impl Into<String>) -> Self {
        Self::new(Role::System, content)
    }
}

/// Declared origin of a sample. Names are matched case-insensitively, so
/// `Other` never holds a spelling of one of the known sources.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Source {
    Lima,
    Deita,
    Tulu,
    Other(String),
}

impl Source {
    pub fn parse(name: &str) -> Self {
        match name.trim().to_ascii_uppercase().as_str() {
            "LIMA" => Source::Lima,
            "DEITA" => Source::Deita,
            "TULU" => Source::Tulu,
            _ => Source::Other(name.trim().to_string()),
        }
    }

    pub fn as_str(&self) -> &str {
        match self {
            Source::Lima => "LIMA",
            Source::Deita => "DEITA",
            Source::Tulu => "TULU",
            Source::Other(name) => name,
        }
    }
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Language {
    English,
    Darija,
    OtherLang(String),
    Unknown,
}

impl Language {
    /// Parses a language tag. Accepts the canonical names and ISO-style codes
    /// (`en`, `ary`); anything else is kept as a lowercase code.
    pub fn parse(tag: &str) -> Self {
        let lower = tag.trim().to_ascii_lowercase();
        match lower.as_str() {
            "english" | "en" | "eng" => Language::English,
            "darija" | "ary" => Language::Darija,
            "unknown" | "" | "und" => Language::Unknown,
            _ => Language::OtherLang(lower),
        }
    }

    pub fn as_str(&self) -> &str {
        match self {
            Language::English => "english",
            Language::Darija => "darija",
            Language::OtherLang(code) => code,
            Language::Unknown => "unknown",
        }
    }
}

impl fmt::Display for Language {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Lifecycle position of a sample. Ordering follows the pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SampleState {
    Raw,
    Filtered,
    Protected,
    Translated,
    Retained,
    Final,
}

impl SampleState {
    pub fn as_str(self) -> &'static str {
        match self {
            SampleState::Raw => "raw",
            SampleState::Filtered => "filtered",
            SampleState::Protected => "protected",
            SampleState::Translated => "translated",
            SampleState::Retained => "retained",
            SampleState::Final => "final",
        }
    }
}

impl FromStr for SampleState {
    type Err = RecordError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s.to_ascii_lowercase().as_str() {
            "raw" => SampleState::Raw,
            "filtered" => SampleState::Filtered,
            "protected" => SampleState::Protected,
            "translated" => SampleState::Translated,
            "retained" => SampleState::Retained,
            "final" => SampleState::Final,
            other => {
                return Err(RecordError::SchemaViolation(format!("unknown state {other:?}")))
            }
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DropReason {
    NonEnglish,
    MetaLanguagePrompt,
    LowConfidence,
    OverBudget,
    TranslationFailed,
}

impl DropReason {
    pub fn as_str(self) -> &'static str {
        match self {
            DropReason::NonEnglish => "NonEnglish",
            DropReason::MetaLanguagePrompt => "MetaLanguagePrompt",
            DropReason::LowConfidence => "LowConfidence",
            DropReason::OverBudget => "OverBudget",
            DropReason::TranslationFailed => "TranslationFailed",
        }
    }
}

impl fmt::Display for DropReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DropReason {
    type Err = RecordError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "NonEnglish" => DropReason::NonEnglish,
            "MetaLanguagePrompt" => DropReason::MetaLanguagePrompt,
            "LowConfidence" => DropReason::LowConfidence,
            "OverBudget" => DropReason::OverBudget,
            "TranslationFailed" => DropReason::TranslationFailed,
            other => {
                return Err(RecordError::SchemaViolation(format!(
                    "unknown drop_reason {other:?}"
                )))
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InstructionSample {
    pub id: String,
    pub source: Source,
    pub turns: Vec<Turn>,
    pub language: Language,
    pub state: SampleState,
    pub drop_reason: Option<DropReason>,
    /// Set by the language filter when a prompt explicitly asks for English;
    /// such samples are forced into the English-retention pool.
    pub retain_english: bool,
    pub extra: Map<String, Value>,
}

impl InstructionSample {
    pub fn new(id: impl Into<String>, source: Source, turns: Vec<Turn>) -> Self {
        Self {
            id: id.into(),
            source,
            turns,
            language: Language::Unknown,
            state: SampleState::Raw,
            drop_reason: None,
            retain_english: false,
            extra: Map::new(),
        }
    }

    pub fn is_dropped(&self) -> bool {
        self.drop_reason.is_some()
    }

    pub fn drop_with(&mut self, reason: DropReason) {
        self.drop_reason = Some(reason);
    }

    /// Moves the sample forward in its lifecycle. Backward moves and moves of
    /// dropped samples are ignored.
    pub fn advance(&mut self, state: SampleState) {
        if self.drop_reason.is_none() && state > self.state {
            self.state = state;
        }
    }

    pub fn human_text(&self) -> String {
        self.turns
            .iter()
            .filter(|t| t.role == Role::Human)
            .map(|t| t.content.as_str())
            .collect::<Vec<_>>()
            .join("\n")
    }
}

/// Checks role placement: a system turn only at index 0, then strict
/// human/assistant alternation starting with human.
pub fn validate_turns(turns: &[Turn]) -> Result<(), RecordError> {
    if turns.is_empty() {
        return Err(RecordError::EmptyConversation);
    }
    let dialogue = match turns[0].role {
        Role::System => &turns[1..],
        _ => turns,
    };
    for (i, turn) in dialogue.iter().enumerate() {
        let expected = if i % 2 == 0 { Role::Human } else { Role::Assistant };
        if turn.role != expected {
            return Err(RecordError::SchemaViolation(format!(
                "turn {} has role {} where {} was expected",
                i + turns.len() - dialogue.len(),
                turn.role.as_str(),
                expected.as_str()
            )));
        }
    }
    Ok(())
}

const KNOWN_FIELDS: [&str; 7] = [
    "id",
    "source",
    "language",
    "turns",
    "state",
    "drop_reason",
    "retain_english",
];

/// Parses one canonical record line.
pub fn parse_record(line: &str) -> Result<InstructionSample, RecordError> {
    let value: Value =
        serde_json::from_str(line).map_err(|e| RecordError::MalformedRecord(e.to_string()))?;
    let Value::Object(obj) = value else {
        return Err(RecordError::MalformedRecord("record is not a JSON object".into()));
    };
    sample_from_object(obj, None)
}

/// Builds a sample from a decoded canonical object. When `fallback_id` is
/// given it is used for records without an `id`.
pub(crate) fn sample_from_object(
    mut obj: Map<String, Value>,
    fallback_id: Option<String>,
) -> Result<InstructionSample, RecordError> {
    let id = match obj.get("id") {
        Some(Value::String(s)) if !s.is_empty() => s.clone(),
        Some(Value::Number(n)) => n.to_string(),
        None | Some(Value::Null) => fallback_id
            .ok_or_else(|| RecordError::SchemaViolation("missing field `id`".into()))?,
        Some(_) => return Err(RecordError::SchemaViolation("`id` must be a string".into())),
    };
    let source = match obj.get("source") {
        Some(Value::String(s)) => Source::parse(s),
        _ => return Err(RecordError::SchemaViolation("missing field `source`".into())),
    };
    let language = match obj.get("language") {
        Some(Value::String(s)) => Language::parse(s),
        None | Some(Value::Null) => Language::Unknown,
        Some(_) => {
            return Err(RecordError::SchemaViolation("`language` must be a string".into()))
        }
    };
    let turns = match obj.get("turns") {
        Some(Value::Array(items)) => items.iter().map(turn_from_value).collect::<Result<Vec<_>, _>>()?,
        _ => return Err(RecordError::SchemaViolation("missing field `turns`".into())),
    };
    validate_turns(&turns)?;
    let state = match obj.get("state") {
        Some(Value::String(s)) => s.parse()?,
        _ => SampleState::Raw,
    };
    let drop_reason = match obj.get("drop_reason") {
        Some(Value::String(s)) => Some(s.parse()?),
        _ => None,
    };
    let retain_english = matches!(obj.get("retain_english"), Some(Value::Bool(true)));
    for key in KNOWN_FIELDS {
        obj.shift_remove(key);
    }
    Ok(InstructionSample {
        id,
        source,
        turns,
        language,
        state,
        drop_reason,
        retain_english,
        extra: obj,
    })
}

fn turn_from_value(value: &Value) -> Result<Turn, RecordError> {
    let obj = value
        .as_object()
        .ok_or_else(|| RecordError::SchemaViolation("turn is not an object".into()))?;
    let role = obj
        .get("role")
        .and_then(Value::as_str)
        .ok_or_else(|| RecordError::SchemaViolation("turn missing `role`".into()))?
        .parse()?;
    let content = obj
        .get("content")
        .and_then(Value::as_str)
        .ok_or_else(|| RecordError::SchemaViolation("turn missing `content`".into()))?;
    Ok(Turn::new(role, content))
}

/// Serializes a sample to one line (no trailing newline). Key order is fixed:
/// the canonical fields first, then extra fields in their original order.
pub fn emit_record(sample: &InstructionSample) -> String {
    let mut obj = Map::new();
    obj.insert("id".into(), Value::String(sample.id.clone()));
    obj.insert("source".into(), Value::String(sample.source.to_string()));
    obj.insert("language".into(), Value::String(sample.language.to_string()));
    let turns = sample
        .turns
        .iter()
        .map(|t| {
            let mut turn = Map::new();
            turn.insert("role".into(), Value::String(t.role.as_str().into()));
            turn.insert("content".into(), Value::String(t.content.clone()));
            Value::Object(turn)
        })
        .collect();
    obj.insert("turns".into(), Value::Array(turns));
    obj.insert("state".into(), Value::String(sample.state.as_str().into()));
    obj.insert(
        "drop_reason".into(),
        sample
            .drop_reason
            .map_or(Value::Null, |r| Value::String(r.as_str().into())),
    );
    if sample.retain_english {
        obj.insert("retain_english".into(), Value::Bool(true));
    }
    for (k, v) in &sample.extra {
        obj.insert(k.clone(), v.clone());
    }
    Value::Object(obj).to_string()
}

/// Reads a whole canonical file. Fails on the first bad line with its number.
pub fn read_corpus(text: &str) -> Result<Vec<InstructionSample>, (usize, RecordError)> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| parse_record(l).map_err(|e| (i + 1, e)))
        .collect()
}

pub fn write_corpus(samples: &[InstructionSample]) -> String {
    let mut out = String::new();
    for s in samples {
        out.push_str(&emit_record(s));
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub total: usize,
    pub per_language: BTreeMap<String, usize>,
    pub per_source: BTreeMap<String, usize>,
    pub dropped: BTreeMap<String, usize>,
}

pub fn compute_stats(corpus: &[InstructionSample]) -> CorpusStats {
    let mut stats = CorpusStats::default();
    for sample in corpus {
        match sample.drop_reason {
            Some(reason) => *stats.dropped.entry(reason.to_string()).or_default() += 1,
            None => {
                stats.total += 1;
                *stats
                    .per_language
                    .entry(sample.language.to_string())
                    .or_default() += 1;
                *stats.per_source.entry(sample.source.to_string()).or_default() += 1;
            }
        }
    }
    stats
}

/// LoRA hyper-parameters carried as manifest metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingRecipe {
    pub name: String,
    pub lora_rank: u32,
    pub lora_alpha: u32,
    pub learning_rate: f64,
    pub epochs: u32,
    pub max_seq_len: u32,
    pub precision_label: String,
}

impl TrainingRecipe {
    fn preset(name: &str, rank: u32, alpha: u32, lr: f64, epochs: u32) -> Self {
        Self {
            name: name.into(),
            lora_rank: rank,
            lora_alpha: alpha,
            learning_rate: lr,
            epochs,
            max_seq_len: 2048,
            precision_label: "bf16".into(),
        }
    }

    /// Published recipes for a source; TULU also carries the 27B run.
    pub fn for_source(source: &Source) -> Vec<TrainingRecipe> {
        match source {
            Source::Lima => vec![Self::preset("gemma-3-4b/LIMA", 32, 64, 4e-4, 15)],
            Source::Deita => vec![Self::preset("gemma-3-4b/DEITA", 32, 64, 4e-4, 6)],
            Source::Tulu => vec![
                Self::preset("gemma-3-4b/TULU", 32, 64, 1e-4, 3),
                Self::preset("gemma-3-27b/TULU", 16, 32, 1e-4, 3),
            ],
            Source::Other(_) => Vec::new(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_minimal_record() {
        let line = r#"{"id":"a1","source":"LIMA","turns":[{"role":"human","content":"hi"},{"role":"assistant","content":"hello"}]}"#;
        let s = parse_record(line).unwrap();
        assert_eq!(s.id, "a1");
        assert_eq!(s.source, Source::Lima);
        assert_eq!(s.turns.len(), 2);
        assert_eq!(s.state, SampleState::Raw);
        assert_eq!(s.language, Language::Unknown);
    }

    #[test]
    fn role_strings_are_case_insensitive() {
        let line = r#"{"id":"a","source":"x","turns":[{"role":"HUMAN","content":"q"},{"role":"Assistant","content":"a"}]}"#;
        assert_eq!(parse_record(line).unwrap().turns[1].role, Role::Assistant);
    }

    #[test]
    fn empty_turns_is_empty_conversation() {
        let line = r#"{"id":"a","source":"LIMA","turns":[]}"#;
        assert_eq!(parse_record(line), Err(RecordError::EmptyConversation));
    }

    #[test]
    fn assistant_first_violates_alternation() {
        let line = r#"{"id":"a","source":"LIMA","turns":[{"role":"assistant","content":"x"},{"role":"human","content":"y"}]}"#;
        assert!(matches!(parse_record(line), Err(RecordError::SchemaViolation(_))));
    }

    #[test]
    fn system_turn_only_at_start() {
        let turns = vec![Turn::human("a"), Turn::system("b")];
        assert!(validate_turns(&turns).is_err());
        let turns = vec![Turn::system("s"), Turn::human("a"), Turn::assistant("b")];
        assert!(validate_turns(&turns).is_ok());
    }

    #[test]
    fn unknown_role_and_missing_content() {
        let bad_role = r#"{"id":"a","source":"x","turns":[{"role":"user","content":"q"}]}"#;
        assert!(matches!(parse_record(bad_role), Err(RecordError::SchemaViolation(_))));
        let no_content = r#"{"id":"a","source":"x","turns":[{"role":"human"}]}"#;
        assert!(matches!(parse_record(no_content), Err(RecordError::SchemaViolation(_))));
        assert!(matches!(parse_record("{nope"), Err(RecordError::MalformedRecord(_))));
        let no_id = r#"{"source":"x","turns":[{"role":"human","content":"q"}]}"#;
        assert!(matches!(parse_record(no_id), Err(RecordError::SchemaViolation(_))));
    }

    #[test]
    fn arabic_content_is_emitted_byte_exact() {
        let content = "هاد الجزء كيعرف بالمفاهيم الأساسية.";
        let s = InstructionSample::new("d1", Source::Deita, vec![Turn::human(content)]);
        let line = emit_record(&s);
        assert_eq!(
            line,
            format!(
                r#"{{"id":"d1","source":"DEITA","language":"unknown","turns":[{{"role":"human","content":"{content}"}}],"state":"raw","drop_reason":null}}"#
            )
        );
        // raw UTF-8, no \u escapes
        assert!(line.as_bytes().windows(content.len()).any(|w| w == content.as_bytes()));
        assert_eq!(emit_record(&s), line);
    }

    #[test]
    fn extra_fields_survive_in_order() {
        let line = r#"{"id":"t","source":"TULU","turns":[{"role":"human","content":"q"}],"zeta":1,"alpha":["x"]}"#;
        let s = parse_record(line).unwrap();
        let keys: Vec<_> = s.extra.keys().cloned().collect();
        assert_eq!(keys, ["zeta", "alpha"]);
        assert_eq!(parse_record(&emit_record(&s)).unwrap(), s);
    }

    #[test]
    fn stats_partition_and_drops() {
        let mut a = InstructionSample::new("a", Source::Lima, vec![Turn::human("x")]);
        a.language = Language::Darija;
        let mut b = a.clone();
        b.id = "b".into();
        b.language = Language::English;
        let mut c = a.clone();
        c.id = "c".into();
        c.drop_with(DropReason::OverBudget);
        let stats = compute_stats(&[a, b, c]);
        assert_eq!(stats.total, 2);
        assert_eq!(stats.per_language.values().sum::<usize>(), 2);
        assert_eq!(stats.dropped["OverBudget"], 1);
        assert_eq!(compute_stats(&[]), CorpusStats::default());
    }

    #[test]
    fn advance_is_monotone_and_blocked_by_drop() {
        let mut s = InstructionSample::new("a", Source::Lima, vec![Turn::human("x")]);
        s.advance(SampleState::Translated);
        s.advance(SampleState::Filtered);
        assert_eq!(s.state, SampleState::Translated);
        s.drop_with(DropReason::OverBudget);
        s.advance(SampleState::Final);
        assert_eq!(s.state, SampleState::Translated);
    }

    #[test]
    fn recipes_pin_sequence_length() {
        for src in [Source::Lima, Source::Deita, Source::Tulu] {
            for r in TrainingRecipe::for_source(&src) {
                assert_eq!(r.max_seq_len, 2048);
                assert!(r.lora_rank > 0 && r.lora_alpha > 0);
            }
        }
    }
}
