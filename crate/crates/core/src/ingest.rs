//! Adapters from source-dataset shapes to canonical samples.
//!
//! Field maps (defaults):
//!
//! | kind                    | line shape                                                   |
//! |-------------------------|--------------------------------------------------------------|
//! | `SingleTurnPair`        | `{"instruction": .., "input": ..?, "output": ..}`            |
//! | `MultiTurnConversation` | `{"conversations": [{"from": "human"/"gpt"/"system", "value": ..}]}` |
//! | `TaggedPool`            | `{"messages": [{"role": "user"/"assistant"/"system", "content": ..}], ..tags}` |
//!
//! Any line carrying a `turns` array is read as a canonical record regardless
//! of kind, which makes re-ingesting emitted files idempotent.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::corpus::{
    sample_from_object, validate_turns, InstructionSample, RecordError, Role, Source, Turn,
};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("cannot read {path}: {source}")]
    IoFailure {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SchemaKind {
    SingleTurnPair,
    MultiTurnConversation,
    TaggedPool,
}

/// Source field names for one input shape.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceSchema {
    pub kind: SchemaKind,
    pub instruction_field: String,
    pub input_field: String,
    pub output_field: String,
    pub conversation_field: String,
    pub role_field: String,
    pub content_field: String,
}

impl SourceSchema {
    pub fn single_turn() -> Self {
        Self {
            kind: SchemaKind::SingleTurnPair,
            instruction_field: "instruction".into(),
            input_field: "input".into(),
            output_field: "output".into(),
            conversation_field: String::new(),
            role_field: String::new(),
            content_field: String::new(),
        }
    }

    pub fn multi_turn() -> Self {
        Self {
            kind: SchemaKind::MultiTurnConversation,
            instruction_field: String::new(),
            input_field: String::new(),
            output_field: String::new(),
            conversation_field: "conversations".into(),
            role_field: "from".into(),
            content_field: "value".into(),
        }
    }

    pub fn tagged_pool() -> Self {
        Self {
            kind: SchemaKind::TaggedPool,
            instruction_field: String::new(),
            input_field: String::new(),
            output_field: String::new(),
            conversation_field: "messages".into(),
            role_field: "role".into(),
            content_field: "content".into(),
        }
    }

    pub fn for_kind(kind: SchemaKind) -> Self {
        match kind {
            SchemaKind::SingleTurnPair => Self::single_turn(),
            SchemaKind::MultiTurnConversation => Self::multi_turn(),
            SchemaKind::TaggedPool => Self::tagged_pool(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rejection {
    pub line: usize,
    pub error: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    pub read: usize,
    pub emitted: usize,
    pub rejected: usize,
    pub rejections: Vec<Rejection>,
}

impl IngestReport {
    /// True when the rejected fraction exceeds `max_fraction`.
    pub fn exceeds(&self, max_fraction: f64) -> bool {
        self.read > 0 && self.rejected as f64 / self.read as f64 > max_fraction
    }
}

pub const DEFAULT_MAX_REJECT_FRACTION: f64 = 0.01;

pub fn ingest_file(
    path: &Path,
    schema: &SourceSchema,
    source: &Source,
) -> Result<(Vec<InstructionSample>, IngestReport), IngestError> {
    let text = fs::read_to_string(path).map_err(|e| IngestError::IoFailure {
        path: path.display().to_string(),
        source: e,
    })?;
    Ok(ingest_str(&text, schema, source))
}

/// Ingests already-loaded text. Blank lines are skipped and not counted.
pub fn ingest_str(
    text: &str,
    schema: &SourceSchema,
    source: &Source,
) -> (Vec<InstructionSample>, IngestReport) {
    let mut report = IngestReport::default();
    let mut samples: Vec<InstructionSample> = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let line_no = idx + 1;
        report.read += 1;
        let result = convert_line(line, line_no, schema, source).and_then(|s| {
            if seen.insert(s.id.clone()) {
                Ok(s)
            } else {
                Err(RecordError::SchemaViolation(format!("duplicate id {:?}", s.id)))
            }
        });
        match result {
            Ok(sample) => samples.push(sample),
            Err(e) => report.rejections.push(Rejection {
                line: line_no,
                error: e.to_string(),
            }),
        }
    }
    report.emitted = samples.len();
    report.rejected = report.rejections.len();
    (samples, report)
}

pub fn synthesize_id(source: &Source, ordinal: usize) -> String {
    format!("{source}-{ordinal:06}")
}

fn convert_line(
    line: &str,
    line_no: usize,
    schema: &SourceSchema,
    source: &Source,
) -> Result<InstructionSample, RecordError> {
    let value: Value =
        serde_json::from_str(line).map_err(|e| RecordError::MalformedRecord(e.to_string()))?;
    let Value::Object(mut obj) = value else {
        return Err(RecordError::MalformedRecord("record is not a JSON object".into()));
    };
    let fallback_id = synthesize_id(source, line_no);
    if obj.contains_key("turns") {
        obj.insert("source".into(), Value::String(source.to_string()));
        let mut sample = sample_from_object(obj, Some(fallback_id))?;
        sample.source = source.clone();
        return Ok(sample);
    }
    let id = take_id(&mut obj).unwrap_or(fallback_id);
    let turns = match schema.kind {
        SchemaKind::SingleTurnPair => single_turn(&mut obj, schema)?,
        SchemaKind::MultiTurnConversation | SchemaKind::TaggedPool => {
            conversation(&mut obj, schema)?
        }
    };
    validate_turns(&turns)?;
    let mut sample = InstructionSample::new(id, source.clone(), turns);
    obj.remove("source");
    sample.extra = obj;
    Ok(sample)
}

fn take_id(obj: &mut Map<String, Value>) -> Option<String> {
    match obj.shift_remove("id")? {
        Value::String(s) if !s.is_empty() => Some(s),
        Value::Number(n) => Some(n.to_string()),
        _ => None,
    }
}

fn take_str(obj: &mut Map<String, Value>, field: &str) -> Result<Option<String>, RecordError> {
    match obj.shift_remove(field) {
        None | Some(Value::Null) => Ok(None),
        Some(Value::String(s)) => Ok(Some(s)),
        Some(_) => Err(RecordError::SchemaViolation(format!("`{field}` must be a string"))),
    }
}

fn single_turn(
    obj: &mut Map<String, Value>,
    schema: &SourceSchema,
) -> Result<Vec<Turn>, RecordError> {
    let instruction = take_str(obj, &schema.instruction_field)?.ok_or_else(|| {
        RecordError::SchemaViolation(format!("missing field `{}`", schema.instruction_field))
    })?;
    let input = take_str(obj, &schema.input_field)?.filter(|s| !s.trim().is_empty());
    let output = take_str(obj, &schema.output_field)?.ok_or_else(|| {
        RecordError::SchemaViolation(format!("missing field `{}`", schema.output_field))
    })?;
    let prompt = match input {
        Some(input) => format!("{instruction}\n\n{input}"),
        None => instruction,
    };
    Ok(vec![Turn::human(prompt), Turn::assistant(output)])
}

fn legacy_role(name: &str) -> Result<Role, RecordError> {
    match name.trim().to_ascii_lowercase().as_str() {
        "system" => Ok(Role::System),
        "human" | "user" => Ok(Role::Human),
        "gpt" | "assistant" | "model" => Ok(Role::Assistant),
        other => Err(RecordError::SchemaViolation(format!("unknown role {other:?}"))),
    }
}

fn conversation(
    obj: &mut Map<String, Value>,
    schema: &SourceSchema,
) -> Result<Vec<Turn>, RecordError> {
    let Some(Value::Array(items)) = obj.shift_remove(&schema.conversation_field) else {
        return Err(RecordError::SchemaViolation(format!(
            "missing array `{}`",
            schema.conversation_field
        )));
    };
    items
        .iter()
        .map(|item| {
            let role = item
                .get(&schema.role_field)
                .and_then(Value::as_str)
                .ok_or_else(|| {
                    RecordError::SchemaViolation(format!("message missing `{}`", schema.role_field))
                })?;
            let content = item
                .get(&schema.content_field)
                .and_then(Value::as_str)
                .ok_or_else(|| {
                    RecordError::SchemaViolation(format!(
                        "message missing `{}`",
                        schema.content_field
                    ))
                })?;
            Ok(Turn::new(legacy_role(role)?, content))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{emit_record, write_corpus, SampleState};

    #[test]
    fn single_turn_pairs() {
        let text = (0..5)
            .map(|i| format!(r#"{{"instruction":"q{i}","output":"a{i}"}}"#))
            .collect::<Vec<_>>()
            .join("\n");
        let (samples, report) = ingest_str(&text, &SourceSchema::single_turn(), &Source::Lima);
        assert_eq!(samples.len(), 5);
        assert_eq!(report.read, 5);
        for (i, s) in samples.iter().enumerate() {
            assert_eq!(s.turns, vec![Turn::human(format!("q{i}")), Turn::assistant(format!("a{i}"))]);
            assert_eq!(s.state, SampleState::Raw);
            assert_eq!(s.id, format!("LIMA-{:06}", i + 1));
        }
    }

    #[test]
    fn input_field_is_appended() {
        let (samples, _) = ingest_str(
            r#"{"instruction":"Summarize","input":"text here","output":"ok"}"#,
            &SourceSchema::single_turn(),
            &Source::Lima,
        );
        assert_eq!(samples[0].turns[0].content, "Summarize\n\ntext here");
    }

    #[test]
    fn one_bad_line_in_ten() {
        let mut lines: Vec<String> = (0..10)
            .map(|i| format!(r#"{{"instruction":"q{i}","output":"a{i}"}}"#))
            .collect();
        lines[6] = "{not json".into();
        let (samples, report) =
            ingest_str(&lines.join("\n"), &SourceSchema::single_turn(), &Source::Lima);
        assert_eq!(samples.len(), 9);
        assert_eq!(report.rejected, 1);
        assert_eq!(report.rejections[0].line, 7);
        assert_eq!(report.read, report.emitted + report.rejected);
        assert!(report.exceeds(DEFAULT_MAX_REJECT_FRACTION));
        // file order kept
        assert_eq!(samples[6].turns[0].content, "q7");
    }

    #[test]
    fn sharegpt_conversations() {
        let line = r#"{"id":"d-1","conversations":[{"from":"human","value":"hi"},{"from":"gpt","value":"hey"},{"from":"human","value":"more"},{"from":"gpt","value":"sure"}]}"#;
        let (samples, report) = ingest_str(line, &SourceSchema::multi_turn(), &Source::Deita);
        assert_eq!(report.rejected, 0);
        assert_eq!(samples[0].id, "d-1");
        assert_eq!(samples[0].turns.len(), 4);
        assert_eq!(samples[0].turns[3].role, Role::Assistant);
    }

    #[test]
    fn tagged_pool_keeps_tags_through_emit() {
        let line = r#"{"dataset":"flan_v2","messages":[{"role":"user","content":"2+2?"},{"role":"assistant","content":"4"}],"tags":["math","arithmetic"]}"#;
        let (samples, _) = ingest_str(line, &SourceSchema::tagged_pool(), &Source::Tulu);
        let emitted = emit_record(&samples[0]);
        assert_eq!(
            emitted,
            r#"{"id":"TULU-000001","source":"TULU","language":"unknown","turns":[{"role":"human","content":"2+2?"},{"role":"assistant","content":"4"}],"state":"raw","drop_reason":null,"dataset":"flan_v2","tags":["math","arithmetic"]}"#
        );
    }

    #[test]
    fn reingest_is_idempotent() {
        let line = r#"{"conversations":[{"from":"system","value":"be brief"},{"from":"human","value":"hi"},{"from":"gpt","value":"hey"}],"topic":"greeting"}"#;
        let (first, _) = ingest_str(line, &SourceSchema::multi_turn(), &Source::Deita);
        let canonical = write_corpus(&first);
        let (second, report) = ingest_str(&canonical, &SourceSchema::multi_turn(), &Source::Deita);
        assert_eq!(report.rejected, 0);
        assert_eq!(first, second);
    }

    #[test]
    fn duplicate_ids_rejected() {
        let text = "{\"id\":\"x\",\"instruction\":\"a\",\"output\":\"b\"}\n{\"id\":\"x\",\"instruction\":\"c\",\"output\":\"d\"}";
        let (samples, report) = ingest_str(text, &SourceSchema::single_turn(), &Source::Lima);
        assert_eq!(samples.len(), 1);
        assert_eq!(report.rejections[0].line, 2);
    }

    #[test]
    fn missing_file_is_io_failure() {
        let err = ingest_file(
            Path::new("/definitely/not/here.jsonl"),
            &SourceSchema::single_turn(),
            &Source::Lima,
        )
        .unwrap_err();
        assert!(matches!(err, IngestError::IoFailure { .. }));
    }
}
