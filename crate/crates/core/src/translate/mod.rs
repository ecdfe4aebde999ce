//! Translation of masked messages through a pluggable backend.
//!
//! Each turn is one unit; with comment translation on, every prose comment
//! line inside a fenced code block is an extra unit. Units run on up to
//! `max_parallel` workers, are validated and retried, and are reassembled by
//! key so the result does not depend on completion order.

mod backend;
mod checkpoint;
mod prompt;
mod validate;

use std::collections::{BTreeMap, HashMap};
use std::io;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{mpsc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use backend::{
    BackendConfig, BackendError, BackendKind, ConfigError, MockIdentity, MockReversible,
    RemoteHttp, RetryPolicy, TranslationBackend, REVERSIBLE_CLOSE, REVERSIBLE_OPEN,
};
pub use checkpoint::{load_checkpoint, sha256_hex, CheckpointRecord, CheckpointWriter};
pub use prompt::{build_prompt, payload, PAYLOAD_MARKER, PROMPT_TEMPLATE};
pub use validate::{arabic_ratio, validate_translation, ValidationOutcome, ValidationStatus};

use crate::corpus::{DropReason, InstructionSample, Language, SampleState};
use crate::protect::{
    mask, segment, split_code_block, unmask, CodeLineKind, MaskedText, SegmentKind, TermGlossary,
};

#[derive(Debug, Clone)]
pub struct TranslateConfig {
    pub backend: BackendConfig,
    /// Minimum Arabic-letter share; `None` uses the backend default.
    pub script_threshold: Option<f64>,
    pub translate_code_comments: bool,
    pub glossary: TermGlossary,
    pub checkpoint: Option<PathBuf>,
}

impl TranslateConfig {
    pub fn new(backend: BackendConfig) -> Self {
        Self {
            backend,
            script_threshold: None,
            translate_code_comments: true,
            glossary: TermGlossary::default_glossary(),
            checkpoint: None,
        }
    }

    pub fn threshold(&self) -> f64 {
        self.script_threshold
            .unwrap_or_else(|| self.backend.default_script_threshold())
    }
}

#[derive(Debug, Error)]
pub enum TranslateError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("unit {sample_id}/{unit_id}: {detail} (retries exhausted, run aborted)")]
    BackendUnreachable {
        sample_id: String,
        unit_id: String,
        detail: String,
    },
    #[error("checkpoint: {0}")]
    Checkpoint(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TranslationJob {
    pub sample_id: String,
    pub unit_id: String,
    pub masked: MaskedText,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SampleAudit {
    pub sample_id: String,
    pub units: usize,
    pub translated: bool,
    pub failed_units: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TranslateReport {
    pub backend: String,
    pub script_threshold: f64,
    pub translate_code_comments: bool,
    pub samples_in: usize,
    pub samples_translated: usize,
    pub samples_failed: usize,
    /// Samples passed through untouched (already dropped or retained English).
    pub samples_passed_through: usize,
    pub units_total: usize,
    /// Units with no letters outside placeholders; copied without a request.
    pub units_trivial: usize,
    pub units_resumed: usize,
    pub units_sent: usize,
    pub requests: usize,
    /// Outcome of every request.
    pub attempt_status: BTreeMap<String, usize>,
    /// Final outcome per sent unit.
    pub unit_status: BTreeMap<String, usize>,
    pub samples: Vec<SampleAudit>,
}

/// A comment line inside a code slot of a turn.
struct CommentUnit {
    slot: usize,
    line: usize,
    unit: usize,
}

struct TurnPlan {
    masked: MaskedText,
    unit: usize,
    comments: Vec<CommentUnit>,
}

struct SamplePlan {
    sample: usize,
    turns: Vec<TurnPlan>,
    units: Vec<usize>,
}

fn has_letters(masked: &MaskedText) -> bool {
    masked.visible_text().chars().any(char::is_alphabetic)
}

fn plan_sample(
    idx: usize,
    sample: &InstructionSample,
    cfg: &TranslateConfig,
    jobs: &mut Vec<TranslationJob>,
) -> SamplePlan {
    let mut push = |unit_id: String, masked: MaskedText| {
        jobs.push(TranslationJob {
            sample_id: sample.id.clone(),
            unit_id,
            masked,
        });
        jobs.len() - 1
    };
    let mut plan = SamplePlan {
        sample: idx,
        turns: Vec::new(),
        units: Vec::new(),
    };
    for (t, turn) in sample.turns.iter().enumerate() {
        let masked = mask(&segment(&turn.content, &cfg.glossary));
        let mut comments = Vec::new();
        if cfg.translate_code_comments {
            for (slot, (id, seg)) in masked.slots.iter().enumerate() {
                if seg.kind != SegmentKind::PreserveCode {
                    continue;
                }
                let view = split_code_block(seg);
                for (line, code_line) in view.lines.iter().enumerate() {
                    if code_line.kind != CodeLineKind::Comment {
                        continue;
                    }
                    let body = code_line.comment_parts().1;
                    let body_masked = mask(&segment(body, &cfg.glossary));
                    if !has_letters(&body_masked) {
                        continue;
                    }
                    let unit = push(format!("t{t}.{id}.l{line}"), body_masked);
                    plan.units.push(unit);
                    comments.push(CommentUnit { slot, line, unit });
                }
            }
        }
        let unit = push(format!("t{t}"), masked.clone());
        plan.units.push(unit);
        plan.turns.push(TurnPlan {
            masked,
            unit,
            comments,
        });
    }
    plan
}

/// Rebuilds one turn from its translated template and comment bodies.
fn reassemble_turn(plan: &TurnPlan, jobs: &[TranslationJob], outputs: &[Option<String>]) -> Option<String> {
    let mut masked = plan.masked.clone();
    let mut bodies: HashMap<usize, Vec<Option<String>>> = HashMap::new();
    for c in &plan.comments {
        let body = unmask(&jobs[c.unit].masked, outputs[c.unit].as_deref()?).ok()?;
        let len = split_code_block(&masked.slots[c.slot].1).lines.len();
        bodies.entry(c.slot).or_insert_with(|| vec![None; len])[c.line] = Some(body);
    }
    for (slot, slot_bodies) in bodies {
        let seg = &mut masked.slots[slot].1;
        seg.text = split_code_block(seg).with_comment_bodies(&slot_bodies);
    }
    unmask(&masked, outputs[plan.unit].as_deref()?).ok()
}

struct TokenBucket {
    per_sec: f64,
    capacity: f64,
    state: Mutex<(f64, Instant)>,
}

impl TokenBucket {
    fn new(per_minute: u32) -> Self {
        let per_sec = per_minute as f64 / 60.0;
        let capacity = per_sec.max(1.0);
        Self {
            per_sec,
            capacity,
            state: Mutex::new((capacity, Instant::now())),
        }
    }

    fn acquire(&self) {
        loop {
            let wait = {
                let mut st = self.state.lock().unwrap_or_else(|e| e.into_inner());
                let now = Instant::now();
                st.0 = (st.0 + now.duration_since(st.1).as_secs_f64() * self.per_sec).min(self.capacity);
                st.1 = now;
                if st.0 >= 1.0 {
                    st.0 -= 1.0;
                    return;
                }
                (1.0 - st.0) / self.per_sec
            };
            thread::sleep(Duration::from_secs_f64(wait));
        }
    }
}

struct UnitResult {
    job: usize,
    attempts: Vec<ValidationOutcome>,
    output: Option<String>,
    unreachable: Option<String>,
}

fn run_job(
    job: &TranslationJob,
    backend: &dyn TranslationBackend,
    retry: &RetryPolicy,
    bucket: Option<&TokenBucket>,
    threshold: f64,
) -> (Vec<ValidationOutcome>, Option<String>, Option<String>) {
    let prompt = build_prompt(&job.masked);
    let mut attempts = Vec::new();
    let mut unreachable = None;
    for attempt in 1..=retry.max_attempts {
        if let Some(b) = bucket {
            b.acquire();
        }
        match backend.translate(&prompt) {
            Ok(text) => {
                let outcome = validate_translation(&job.masked, &text, threshold);
                let ok = outcome.is_valid();
                attempts.push(outcome);
                if ok {
                    return (attempts, Some(text), None);
                }
                unreachable = None;
            }
            Err(e) => {
                unreachable = e.is_unreachable().then(|| e.to_string());
                attempts.push(ValidationOutcome::backend_error(e.to_string()));
            }
        }
        if attempt < retry.max_attempts {
            thread::sleep(retry.delay_before_retry(attempt));
        }
    }
    (attempts, None, unreachable)
}

/// Translates every live sample. Failed samples come back dropped with
/// `TranslationFailed`; successful ones become `Darija` / `Translated`.
/// Output order equals input order.
pub fn translate_corpus(
    samples: Vec<InstructionSample>,
    cfg: &TranslateConfig,
    backend: &dyn TranslationBackend,
) -> Result<(Vec<InstructionSample>, TranslateReport), TranslateError> {
    cfg.backend.validate()?;
    let threshold = cfg.threshold();
    let mut report = TranslateReport {
        backend: backend.name().to_string(),
        script_threshold: threshold,
        translate_code_comments: cfg.translate_code_comments,
        samples_in: samples.len(),
        ..TranslateReport::default()
    };

    let mut jobs = Vec::new();
    let mut plans = Vec::new();
    for (idx, s) in samples.iter().enumerate() {
        if s.is_dropped() || s.retain_english || s.state >= SampleState::Translated {
            report.samples_passed_through += 1;
        } else {
            plans.push(plan_sample(idx, s, cfg, &mut jobs));
        }
    }
    report.units_total = jobs.len();

    let mut outputs: Vec<Option<String>> = vec![None; jobs.len()];
    let done = match &cfg.checkpoint {
        Some(p) => load_checkpoint(p)?,
        None => HashMap::new(),
    };
    let mut pending = Vec::new();
    for (i, job) in jobs.iter().enumerate() {
        if !has_letters(&job.masked) {
            outputs[i] = Some(job.masked.template.clone());
            report.units_trivial += 1;
            continue;
        }
        let cached = done
            .get(&(job.sample_id.clone(), job.unit_id.clone()))
            .and_then(|r| r.reusable_output(&sha256_hex(&job.masked.template)))
            .filter(|out| validate_translation(&job.masked, out, threshold).is_valid());
        match cached {
            Some(out) => {
                outputs[i] = Some(out.to_string());
                report.units_resumed += 1;
            }
            None => pending.push(i),
        }
    }
    report.units_sent = pending.len();

    let mut writer = match &cfg.checkpoint {
        Some(p) => Some(CheckpointWriter::open(p, cfg.backend.checkpoint_every)?),
        None => None,
    };
    let bucket = cfg.backend.rate_limit_per_minute.map(TokenBucket::new);
    let next = AtomicUsize::new(0);
    let abort = AtomicBool::new(false);
    let mut failure: Option<TranslateError> = None;

    thread::scope(|scope| {
        let (tx, rx) = mpsc::channel::<UnitResult>();
        let workers = cfg.backend.max_parallel.min(pending.len().max(1));
        for _ in 0..workers {
            let tx = tx.clone();
            let (jobs, pending, next, abort, bucket) = (&jobs, &pending, &next, &abort, bucket.as_ref());
            let retry = &cfg.backend.retry;
            scope.spawn(move || loop {
                if abort.load(Ordering::SeqCst) {
                    break;
                }
                let Some(&job) = pending.get(next.fetch_add(1, Ordering::SeqCst)) else {
                    break;
                };
                let (attempts, output, unreachable) = run_job(&jobs[job], backend, retry, bucket, threshold);
                if tx
                    .send(UnitResult {
                        job,
                        attempts,
                        output,
                        unreachable,
                    })
                    .is_err()
                {
                    break;
                }
            });
        }
        drop(tx);

        // single writer for outputs, counters and the checkpoint
        for res in rx {
            let job = &jobs[res.job];
            report.requests += res.attempts.len();
            for a in &res.attempts {
                *report.attempt_status.entry(a.status.as_str().into()).or_default() += 1;
            }
            let last = res.attempts.last().map_or(ValidationStatus::BackendError, |a| a.status);
            *report.unit_status.entry(last.as_str().into()).or_default() += 1;
            if let Some(w) = writer.as_mut() {
                let rec = CheckpointRecord {
                    sample_id: job.sample_id.clone(),
                    unit_id: job.unit_id.clone(),
                    status: last,
                    output_hash: res.output.as_deref().map(sha256_hex),
                    input_hash: sha256_hex(&job.masked.template),
                    output: res.output.clone(),
                };
                if let Err(e) = w.append(&rec) {
                    abort.store(true, Ordering::SeqCst);
                    failure.get_or_insert(TranslateError::Checkpoint(e));
                }
            }
            if let Some(detail) = res.unreachable {
                abort.store(true, Ordering::SeqCst);
                failure.get_or_insert(TranslateError::BackendUnreachable {
                    sample_id: job.sample_id.clone(),
                    unit_id: job.unit_id.clone(),
                    detail,
                });
            }
            outputs[res.job] = res.output;
        }
    });

    if let Some(w) = writer.as_mut() {
        w.flush()?;
    }
    if let Some(err) = failure {
        return Err(err);
    }

    let mut samples = samples;
    for plan in &plans {
        let sample = &mut samples[plan.sample];
        let failed_units: Vec<String> = plan
            .units
            .iter()
            .filter(|&&u| outputs[u].is_none())
            .map(|&u| jobs[u].unit_id.clone())
            .collect();
        let rebuilt: Option<Vec<String>> = if failed_units.is_empty() {
            plan.turns.iter().map(|t| reassemble_turn(t, &jobs, &outputs)).collect()
        } else {
            None
        };
        match rebuilt {
            Some(contents) => {
                for (turn, content) in sample.turns.iter_mut().zip(contents) {
                    turn.content = content;
                }
                sample.language = Language::Darija;
                sample.advance(SampleState::Translated);
                report.samples_translated += 1;
            }
            None => {
                sample.drop_with(DropReason::TranslationFailed);
                report.samples_failed += 1;
            }
        }
        report.samples.push(SampleAudit {
            sample_id: sample.id.clone(),
            units: plan.units.len(),
            translated: !sample.is_dropped(),
            failed_units,
        });
    }
    Ok((samples, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Source, Turn};

    fn corpus() -> Vec<InstructionSample> {
        vec![
            InstructionSample::new(
                "a",
                Source::Lima,
                vec![
                    Turn::human("Consider $ax^2 + bx + c = 0$. Solve it."),
                    Turn::assistant("Use the formula at https://x.org/q and `sqrt`."),
                ],
            ),
            InstructionSample::new(
                "b",
                Source::Tulu,
                vec![
                    Turn::human("Write mean in Python"),
                    Turn::assistant("```python\n# Calculate sum of elements\ns = sum(xs)\n# 42\n```\nDone."),
                ],
            ),
            InstructionSample::new("c", Source::Deita, vec![Turn::human("$$x$$"), Turn::assistant("")]),
        ]
    }

    fn quiet(mut cfg: BackendConfig) -> TranslateConfig {
        cfg.retry = RetryPolicy::immediate(3);
        TranslateConfig::new(cfg)
    }

    #[test]
    fn identity_is_noop() {
        let input = corpus();
        let (out, report) = translate_corpus(input.clone(), &quiet(BackendConfig::mock_identity()), &MockIdentity).unwrap();
        assert_eq!(report.samples_translated, 3);
        for (a, b) in input.iter().zip(&out) {
            assert_eq!(a.turns, b.turns);
            assert_eq!(b.state, SampleState::Translated);
            assert_eq!(b.language, Language::Darija);
        }
        // "# 42" is not a unit; both turns of c have no letters
        assert_eq!(report.units_total, 7);
        assert_eq!(report.units_trivial, 2);
        assert_eq!(report.requests, 5);
    }

    #[test]
    fn reversible_inverts_to_original() {
        let input = corpus();
        let (out, _) = translate_corpus(input.clone(), &quiet(BackendConfig::mock_reversible()), &MockReversible).unwrap();
        let b = &out[1].turns[1].content;
        assert!(b.contains("# ⁅Calculate sum of elements⁆\n"));
        assert!(b.contains("s = sum(xs)\n# 42\n"));
        for (a, b) in input.iter().zip(&out) {
            for (ta, tb) in a.turns.iter().zip(&b.turns) {
                assert_eq!(MockReversible::invert(&tb.content), ta.content);
            }
        }
    }

    #[test]
    fn comment_flag_off_leaves_code_alone() {
        let mut cfg = quiet(BackendConfig::mock_reversible());
        cfg.translate_code_comments = false;
        let (out, report) = translate_corpus(corpus(), &cfg, &MockReversible).unwrap();
        assert!(out[1].turns[1].content.contains("# Calculate sum of elements\n"));
        assert_eq!(report.units_total, 6);
    }

    struct DropsPlaceholders;
    impl TranslationBackend for DropsPlaceholders {
        fn name(&self) -> &str {
            "drops"
        }
        fn translate(&self, prompt: &str) -> Result<String, BackendError> {
            Ok(crate::protect::strip_placeholders(payload(prompt).unwrap()))
        }
    }

    #[test]
    fn exhausted_placeholder_loss_drops_sample() {
        let (out, report) = translate_corpus(corpus(), &quiet(BackendConfig::mock_identity()), &DropsPlaceholders).unwrap();
        // every letter-bearing turn of a and b has a placeholder ("Python" is a kept term)
        assert_eq!(out[0].drop_reason, Some(DropReason::TranslationFailed));
        assert_eq!(out[1].drop_reason, Some(DropReason::TranslationFailed));
        assert!(!out[2].is_dropped());
        assert_eq!(report.samples_failed, 2);
        assert_eq!(report.unit_status["PlaceholderLoss"], 4);
        assert_eq!(report.attempt_status["PlaceholderLoss"], 12);
        assert_eq!(report.unit_status["Valid"], 1);
        assert_eq!(report.samples[0].failed_units, vec!["t0", "t1"]);
    }

    struct Down;
    impl TranslationBackend for Down {
        fn name(&self) -> &str {
            "down"
        }
        fn translate(&self, _: &str) -> Result<String, BackendError> {
            Err(BackendError::Unreachable("connection refused".into()))
        }
    }

    #[test]
    fn unreachable_aborts_after_retries() {
        let err = translate_corpus(corpus(), &quiet(BackendConfig::mock_identity()), &Down).unwrap_err();
        assert!(matches!(err, TranslateError::BackendUnreachable { .. }));
    }

    #[test]
    fn passes_through_dropped_and_retained() {
        let mut input = corpus();
        input[0].retain_english = true;
        input[1].drop_with(DropReason::OverBudget);
        let (out, report) = translate_corpus(input.clone(), &quiet(BackendConfig::mock_reversible()), &MockReversible).unwrap();
        assert_eq!(out[0], input[0]);
        assert_eq!(out[1], input[1]);
        assert_eq!(report.samples_passed_through, 2);
    }

    #[test]
    fn rate_limit_spaces_requests() {
        let mut cfg = quiet(BackendConfig::mock_identity());
        cfg.backend.rate_limit_per_minute = Some(1200); // 20/s, burst 20
        let start = Instant::now();
        let input: Vec<_> = (0..25)
            .map(|i| InstructionSample::new(format!("s{i}"), Source::Lima, vec![Turn::human("hello"), Turn::assistant("")]))
            .collect();
        translate_corpus(input, &cfg, &MockIdentity).unwrap();
        // 25 requests with a burst of 20 need at least ~0.25 s of refill
        assert!(start.elapsed() >= Duration::from_millis(200));
    }
}
