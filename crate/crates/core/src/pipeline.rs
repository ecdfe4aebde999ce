//! Stage runner over canonical record files.
//!
//! Every stage reads and writes files in `out_dir`; writes are atomic
//! (temporary file, then rename). Live samples go to `<name>.stage.jsonl`,
//! samples dropped by a stage to `<name>.dropped.jsonl`, and counters to
//! `<name>.report.json`.
//!
//! | stage       | reads                                              | writes |
//! |-------------|----------------------------------------------------|--------|
//! | `ingest`    | configured inputs                                   | `ingest.stage.jsonl` |
//! | `filter`    | `ingest.stage.jsonl`                                | `filter.stage.jsonl`, `filter.dropped.jsonl` |
//! | `gate`      | `filter.stage.jsonl`                                | `gate.stage.jsonl`, `gate.dropped.jsonl` |
//! | `mix`       | `gate.stage.jsonl`                                  | `mix.english.stage.jsonl`, `mix.translate.stage.jsonl` |
//! | `protect`   | `mix.translate.stage.jsonl`                         | `protect.stage.jsonl` |
//! | `translate` | `protect.stage.jsonl`                               | `translate.stage.jsonl`, `translate.dropped.jsonl`, `translate.checkpoint.jsonl` |
//! | `serialize` | the gate, mix and translate outputs                 | `final.jsonl`, `manifest.json`, `serialize.dropped.jsonl` |
//!
//! Retention is decided before translation so that retained samples keep
//! their original English; `serialize` re-gates translated samples because
//! translation can lengthen them.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::corpus::{compute_stats, read_corpus, write_corpus, InstructionSample, SampleState, Source};
use crate::footprint::{FootprintConfig, FootprintError, ThroughputEstimate};
use crate::ingest::{ingest_file, SchemaKind, SourceSchema, DEFAULT_MAX_REJECT_FRACTION};
use crate::lang_filter::{filter_corpus, DetectorBackend, FilterConfig, RuleSet, DEFAULT_CONFIDENCE_THRESHOLD};
use crate::metrics::{build_leaderboard, read_predictions, read_references, score, MetricKind, Score};
use crate::mixer::{assemble_final, select_retained, ManifestContext, MixPolicy, SourceSplit, DEFAULT_SEED};
use crate::protect::{mask, segment, split_code_block, SegmentKind, TermGlossary};
use crate::token_gate::{gate_corpus, TokenBudget, TokenizerSpec, DEFAULT_MAX_TOKENS};
use crate::translate::{translate_corpus, BackendConfig, TranslateConfig};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("missing input: {0}")]
    MissingInput(String),
    #[error("invalid config: {0}")]
    ConfigInvalid(String),
    #[error("{stage}: {message}")]
    Stage { stage: Stage, message: String },
}

fn stage_err(stage: Stage) -> impl Fn(String) -> PipelineError {
    move |message| PipelineError::Stage { stage, message }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Ingest,
    Filter,
    Gate,
    Mix,
    Protect,
    Translate,
    Serialize,
    Stats,
    Score,
    Footprint,
}

/// The corpus-building stages in execution order.
pub const PIPELINE_STAGES: [Stage; 7] = [
    Stage::Ingest,
    Stage::Filter,
    Stage::Gate,
    Stage::Mix,
    Stage::Protect,
    Stage::Translate,
    Stage::Serialize,
];

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Filter => "filter",
            Stage::Gate => "gate",
            Stage::Mix => "mix",
            Stage::Protect => "protect",
            Stage::Translate => "translate",
            Stage::Serialize => "serialize",
            Stage::Stats => "stats",
            Stage::Score => "score",
            Stage::Footprint => "footprint",
        }
    }

    /// Primary input file inside `out_dir`, for stages that have one.
    pub fn default_input(self) -> Option<&'static str> {
        match self {
            Stage::Filter => Some("ingest.stage.jsonl"),
            Stage::Gate => Some("filter.stage.jsonl"),
            Stage::Mix => Some("gate.stage.jsonl"),
            Stage::Protect => Some("mix.translate.stage.jsonl"),
            Stage::Translate => Some("protect.stage.jsonl"),
            Stage::Stats => Some(FINAL_FILE),
            _ => None,
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

pub const FINAL_FILE: &str = "final.jsonl";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputSpec {
    pub path: PathBuf,
    pub source: String,
    #[serde(default = "default_schema")]
    pub schema: SchemaKind,
}

fn default_schema() -> SchemaKind {
    SchemaKind::MultiTurnConversation
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterSettings {
    pub threshold: f64,
    pub rules: Option<PathBuf>,
    pub detector: DetectorBackend,
}

impl Default for FilterSettings {
    fn default() -> Self {
        Self {
            threshold: DEFAULT_CONFIDENCE_THRESHOLD,
            rules: None,
            detector: DetectorBackend::Heuristic,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProtectSettings {
    pub glossary: Option<PathBuf>,
    pub translate_code_comments: bool,
}

impl Default for ProtectSettings {
    fn default() -> Self {
        Self {
            glossary: None,
            translate_code_comments: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GateSettings {
    pub max_tokens: usize,
    pub tokenizer: TokenizerSpec,
}

impl Default for GateSettings {
    fn default() -> Self {
        Self {
            max_tokens: DEFAULT_MAX_TOKENS,
            tokenizer: TokenizerSpec::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TranslateSettings {
    pub backend: BackendConfig,
    pub script_threshold: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MixSettings {
    pub retention_ratio: BTreeMap<String, f64>,
    pub forced_english: BTreeSet<String>,
}

impl Default for MixSettings {
    fn default() -> Self {
        Self {
            retention_ratio: MixPolicy::default().retention_ratio,
            forced_english: BTreeSet::new(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScoreSettings {
    pub predictions: Option<PathBuf>,
    pub references: Option<PathBuf>,
    pub metric: Option<String>,
    pub task: Option<String>,
    pub model: Option<String>,
    /// Line-delimited score records; a fresh score is appended to it and the
    /// whole file is rendered as a leaderboard.
    pub leaderboard: Option<PathBuf>,
    pub csv: Option<PathBuf>,
}

/// One line of a leaderboard score file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreLine {
    pub model: String,
    pub task: String,
    #[serde(flatten)]
    pub score: Score,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FootprintSettings {
    /// Run file (TOML or JSON); the bundled runs when absent.
    pub runs: Option<PathBuf>,
    /// `atlas-baseline`, `none`, or absent to keep the file's own baseline.
    pub baseline: Option<String>,
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub inputs: Vec<InputSpec>,
    pub out_dir: PathBuf,
    pub seed: u64,
    pub dry_run: bool,
    pub max_reject_fraction: f64,
    pub filter: FilterSettings,
    pub protect: ProtectSettings,
    pub gate: GateSettings,
    pub translate: TranslateSettings,
    pub mix: MixSettings,
    pub score: ScoreSettings,
    pub footprint: FootprintSettings,
    /// Replaces a stage's default input file (command-line use).
    #[serde(skip)]
    pub stage_input: Option<PathBuf>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            inputs: Vec::new(),
            out_dir: PathBuf::from("gemforge-out"),
            seed: DEFAULT_SEED,
            dry_run: false,
            max_reject_fraction: DEFAULT_MAX_REJECT_FRACTION,
            filter: FilterSettings::default(),
            protect: ProtectSettings::default(),
            gate: GateSettings::default(),
            translate: TranslateSettings::default(),
            mix: MixSettings::default(),
            score: ScoreSettings::default(),
            footprint: FootprintSettings::default(),
            stage_input: None,
        }
    }
}

impl PipelineConfig {
    /// Reads TOML, or JSON when the extension is `.json`. Relative paths
    /// inside the file are taken relative to the file's directory.
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = fs::read_to_string(path).map_err(|e| PipelineError::MissingInput(format!("{}: {e}", path.display())))?;
        let mut cfg: Self = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| PipelineError::ConfigInvalid(e.to_string()))?
        } else {
            toml::from_str(&text).map_err(|e| PipelineError::ConfigInvalid(e.to_string()))?
        };
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.rebase(base);
        Ok(cfg)
    }

    fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for input in &mut self.inputs {
            fix(&mut input.path);
        }
        fix(&mut self.out_dir);
        for p in [
            self.filter.rules.as_mut(),
            self.protect.glossary.as_mut(),
            self.score.predictions.as_mut(),
            self.score.references.as_mut(),
            self.score.leaderboard.as_mut(),
            self.score.csv.as_mut(),
            self.footprint.runs.as_mut(),
            self.footprint.csv.as_mut(),
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
        if let TokenizerSpec::SubwordVocab { path, .. } = &mut self.gate.tokenizer {
            let mut p = PathBuf::from(&*path);
            fix(&mut p);
            *path = p.display().to_string();
        }
    }

    /// Checks settings that would otherwise fail mid-run, including remote
    /// backend credentials, without touching the network.
    pub fn validate(&self) -> Result<(), PipelineError> {
        let invalid = |m: String| Err(PipelineError::ConfigInvalid(m));
        if !(0.0..=1.0).contains(&self.filter.threshold) {
            return invalid("filter.threshold must be in [0, 1]".into());
        }
        if let Some(t) = self.translate.script_threshold {
            if !(0.0..=1.0).contains(&t) {
                return invalid("translate.script_threshold must be in [0, 1]".into());
            }
        }
        if let TokenizerSpec::Approximate { factor } = self.gate.tokenizer {
            if !(factor.is_finite() && factor > 0.0) {
                return invalid("gate.tokenizer.factor must be positive".into());
            }
        }
        self.mix_policy().validate().map_err(|e| PipelineError::ConfigInvalid(e.to_string()))?;
        self.translate
            .backend
            .build()
            .map_err(|e| PipelineError::ConfigInvalid(e.to_string()))?;
        for p in [self.filter.rules.as_ref(), self.protect.glossary.as_ref()].into_iter().flatten() {
            if !p.exists() {
                return Err(PipelineError::MissingInput(p.display().to_string()));
            }
        }
        Ok(())
    }

    pub fn mix_policy(&self) -> MixPolicy {
        MixPolicy {
            retention_ratio: self.mix.retention_ratio.clone(),
            seed: self.seed,
            forced_english: self.mix.forced_english.clone(),
        }
    }

    pub fn glossary(&self) -> Result<TermGlossary, PipelineError> {
        match &self.protect.glossary {
            None => Ok(TermGlossary::default_glossary()),
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| PipelineError::MissingInput(format!("{}: {e}", p.display())))?;
                TermGlossary::parse(&text).map_err(|e| PipelineError::ConfigInvalid(e.to_string()))
            }
        }
    }

    pub fn rules(&self) -> Result<RuleSet, PipelineError> {
        match &self.filter.rules {
            None => Ok(RuleSet::default_rules()),
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| PipelineError::MissingInput(format!("{}: {e}", p.display())))?;
                RuleSet::parse(&text).map_err(|e| PipelineError::ConfigInvalid(e.to_string()))
            }
        }
    }

    /// The tokenizer with its vocabulary loaded.
    pub fn tokenizer(&self) -> Result<TokenizerSpec, PipelineError> {
        match &self.gate.tokenizer {
            TokenizerSpec::SubwordVocab { path, vocab } if vocab.is_empty() => {
                TokenizerSpec::load_vocab(Path::new(path)).map_err(|e| PipelineError::ConfigInvalid(e.to_string()))
            }
            spec => Ok(spec.clone()),
        }
    }

    fn out(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }

    fn primary_input(&self, stage: Stage) -> PathBuf {
        match &self.stage_input {
            Some(p) => p.clone(),
            None => self.out(stage.default_input().unwrap_or_default()),
        }
    }
}

/// Line-delimited JSON events on stderr, or plain lines with `quiet`.
#[derive(Debug, Clone, Copy, Default)]
pub struct Logger {
    pub quiet: bool,
}

impl Logger {
    pub fn event(&self, level: &str, stage: Stage, msg: &str, fields: Value) {
        let line = if self.quiet {
            format!("[{stage}] {msg}")
        } else {
            let mut obj = json!({ "level": level, "stage": stage.name(), "msg": msg });
            if let (Some(o), Value::Object(extra)) = (obj.as_object_mut(), fields) {
                o.extend(extra);
            }
            obj.to_string()
        };
        let _ = writeln!(io::stderr().lock(), "{line}");
    }

    pub fn info(&self, stage: Stage, msg: &str) {
        self.event("info", stage, msg, Value::Null);
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct StageOutcome {
    pub written: Vec<PathBuf>,
    pub warnings: Vec<String>,
    pub summary: String,
    /// Text meant for stdout (stats, scores, reports).
    #[serde(skip)]
    pub stdout: Option<String>,
}

impl StageOutcome {
    pub fn exit_code(&self) -> u8 {
        if self.warnings.is_empty() {
            0
        } else {
            2
        }
    }
}

pub fn write_atomic(path: &Path, content: &str) -> io::Result<()> {
    let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(content.as_bytes())?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

fn read_samples(path: &Path) -> Result<Vec<InstructionSample>, PipelineError> {
    let text = fs::read_to_string(path).map_err(|e| PipelineError::MissingInput(format!("{}: {e}", path.display())))?;
    read_corpus(&text).map_err(|(line, e)| PipelineError::ConfigInvalid(format!("{} line {line}: {e}", path.display())))
}

fn read_optional(path: &Path) -> Result<Vec<InstructionSample>, PipelineError> {
    if path.exists() {
        read_samples(path)
    } else {
        Ok(Vec::new())
    }
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable report");
    s.push('\n');
    s
}

/// Collects file writes so the stage can commit them together.
struct Writes<'a> {
    cfg: &'a PipelineConfig,
    files: Vec<(PathBuf, String)>,
}

impl<'a> Writes<'a> {
    fn new(cfg: &'a PipelineConfig) -> Self {
        Self { cfg, files: Vec::new() }
    }

    fn add(&mut self, name: &str, content: String) {
        self.files.push((self.cfg.out(name), content));
    }

    fn commit(self, stage: Stage, outcome: &mut StageOutcome) -> Result<(), PipelineError> {
        for (path, content) in self.files {
            write_atomic(&path, &content).map_err(|e| stage_err(stage)(format!("{}: {e}", path.display())))?;
            outcome.written.push(path);
        }
        Ok(())
    }
}

fn drop_summary(dropped: &[InstructionSample]) -> String {
    let mut by_reason: BTreeMap<String, usize> = BTreeMap::new();
    for s in dropped {
        if let Some(r) = s.drop_reason {
            *by_reason.entry(r.to_string()).or_default() += 1;
        }
    }
    if by_reason.is_empty() {
        return "dropped 0".into();
    }
    let parts: Vec<String> = by_reason.iter().map(|(r, n)| format!("{n} ({r})")).collect();
    format!("dropped {}", parts.join(", "))
}

/// Files a stage reads and writes, for `--dry-run`.
pub fn stage_plan(stage: Stage, cfg: &PipelineConfig) -> (Vec<PathBuf>, Vec<PathBuf>) {
    let o = |n: &str| cfg.out(n);
    match stage {
        Stage::Ingest => (
            cfg.inputs.iter().map(|i| i.path.clone()).collect(),
            vec![o("ingest.stage.jsonl"), o("ingest.report.json")],
        ),
        Stage::Filter => (
            vec![cfg.primary_input(stage)],
            vec![o("filter.stage.jsonl"), o("filter.dropped.jsonl"), o("filter.report.json")],
        ),
        Stage::Gate => (
            vec![cfg.primary_input(stage)],
            vec![o("gate.stage.jsonl"), o("gate.dropped.jsonl"), o("gate.report.json")],
        ),
        Stage::Mix => (
            vec![cfg.primary_input(stage)],
            vec![o("mix.english.stage.jsonl"), o("mix.translate.stage.jsonl"), o("mix.report.json")],
        ),
        Stage::Protect => (vec![cfg.primary_input(stage)], vec![o("protect.stage.jsonl"), o("protect.report.json")]),
        Stage::Translate => (
            vec![cfg.primary_input(stage)],
            vec![
                o("translate.stage.jsonl"),
                o("translate.dropped.jsonl"),
                o("translate.checkpoint.jsonl"),
                o("translate.report.json"),
            ],
        ),
        Stage::Serialize => (
            vec![
                o("gate.stage.jsonl"),
                o("mix.report.json"),
                o("mix.english.stage.jsonl"),
                o("translate.stage.jsonl"),
            ],
            vec![o(FINAL_FILE), o(MANIFEST_FILE), o("serialize.dropped.jsonl")],
        ),
        Stage::Stats => (vec![cfg.primary_input(stage)], vec![]),
        Stage::Score => {
            let s = &cfg.score;
            (
                [&s.predictions, &s.references, &s.leaderboard].into_iter().flatten().cloned().collect(),
                [&s.leaderboard, &s.csv].into_iter().flatten().cloned().collect(),
            )
        }
        Stage::Footprint => (
            cfg.footprint.runs.iter().cloned().collect(),
            cfg.footprint.csv.iter().cloned().collect(),
        ),
    }
}

/// Runs one stage. With `dry_run` set nothing is read or written; the
/// outcome's summary lists the plan.
pub fn run_stage(stage: Stage, cfg: &PipelineConfig, log: &Logger) -> Result<StageOutcome, PipelineError> {
    if cfg.dry_run {
        let (reads, writes) = stage_plan(stage, cfg);
        let show = |v: &[PathBuf]| v.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join(", ");
        let summary = format!("plan: read [{}] write [{}]", show(&reads), show(&writes));
        log.info(stage, &summary);
        return Ok(StageOutcome {
            summary,
            ..StageOutcome::default()
        });
    }
    let mut outcome = StageOutcome::default();
    let mut w = Writes::new(cfg);
    match stage {
        Stage::Ingest => ingest_stage(cfg, &mut w, &mut outcome)?,
        Stage::Filter => filter_stage(cfg, &mut w, &mut outcome)?,
        Stage::Gate => gate_stage(cfg, &mut w, &mut outcome)?,
        Stage::Mix => mix_stage(cfg, &mut w, &mut outcome)?,
        Stage::Protect => protect_stage(cfg, &mut w, &mut outcome)?,
        Stage::Translate => translate_stage(cfg, &mut w, &mut outcome)?,
        Stage::Serialize => serialize_stage(cfg, &mut w, &mut outcome)?,
        Stage::Stats => stats_stage(cfg, &mut outcome)?,
        Stage::Score => score_stage(cfg, &mut outcome)?,
        Stage::Footprint => footprint_stage(cfg, &mut outcome)?,
    }
    w.commit(stage, &mut outcome)?;
    log.event(
        if outcome.warnings.is_empty() { "info" } else { "warn" },
        stage,
        &outcome.summary,
        json!({ "warnings": outcome.warnings, "written": outcome.written }),
    );
    Ok(outcome)
}

/// Runs ingest through serialize, stopping at the first hard error. Earlier
/// artifacts are left in place.
pub fn run_pipeline(cfg: &PipelineConfig, log: &Logger) -> Result<StageOutcome, PipelineError> {
    cfg.validate()?;
    let mut total = StageOutcome::default();
    for stage in PIPELINE_STAGES {
        let out = run_stage(stage, cfg, log)?;
        total.written.extend(out.written);
        total.warnings.extend(out.warnings.into_iter().map(|w| format!("{stage}: {w}")));
        if !total.summary.is_empty() {
            total.summary.push('\n');
        }
        total.summary.push_str(&format!("{stage}: {}", out.summary));
    }
    Ok(total)
}

fn ingest_stage(cfg: &PipelineConfig, w: &mut Writes, out: &mut StageOutcome) -> Result<(), PipelineError> {
    if cfg.inputs.is_empty() {
        return Err(PipelineError::ConfigInvalid("no inputs configured".into()));
    }
    let mut corpus = Vec::new();
    let mut reports = Vec::new();
    for input in &cfg.inputs {
        let source = Source::parse(&input.source);
        let (samples, report) = ingest_file(&input.path, &SourceSchema::for_kind(input.schema), &source)
            .map_err(|e| PipelineError::MissingInput(e.to_string()))?;
        if report.exceeds(cfg.max_reject_fraction) {
            out.warnings.push(format!(
                "{}: rejected {} of {} lines",
                input.path.display(),
                report.rejected,
                report.read
            ));
        }
        corpus.extend(samples);
        reports.push(json!({ "path": input.path, "source": source.as_str(), "report": report }));
    }
    let mut ids = BTreeSet::new();
    if let Some(dup) = corpus.iter().find(|s| !ids.insert(s.id.as_str())) {
        return Err(stage_err(Stage::Ingest)(format!("id {:?} appears in more than one input", dup.id)));
    }
    out.summary = format!("ingested {} samples from {} files", corpus.len(), cfg.inputs.len());
    w.add("ingest.stage.jsonl", write_corpus(&corpus));
    w.add("ingest.report.json", to_json(&reports));
    Ok(())
}

fn filter_stage(cfg: &PipelineConfig, w: &mut Writes, out: &mut StageOutcome) -> Result<(), PipelineError> {
    let corpus = read_samples(&cfg.primary_input(Stage::Filter))?;
    let fc = FilterConfig {
        threshold: cfg.filter.threshold,
        rules: cfg.rules()?,
        detector: cfg.filter.detector.clone(),
    };
    let (kept, dropped, report) = filter_corpus(corpus, &fc);
    if report.detector_fallbacks > 0 {
        out.warnings.push(format!("detector fell back to the heuristic {} times", report.detector_fallbacks));
    }
    out.summary = format!("kept {}, {}", kept.len(), drop_summary(&dropped));
    w.add("filter.stage.jsonl", write_corpus(&kept));
    w.add("filter.dropped.jsonl", write_corpus(&dropped));
    w.add("filter.report.json", to_json(&report));
    Ok(())
}

fn gate_stage(cfg: &PipelineConfig, w: &mut Writes, out: &mut StageOutcome) -> Result<(), PipelineError> {
    let corpus = read_samples(&cfg.primary_input(Stage::Gate))?;
    let budget = TokenBudget {
        max_tokens: cfg.gate.max_tokens,
    };
    let (kept, dropped, report) = gate_corpus(corpus, budget, &cfg.tokenizer()?);
    out.summary = format!("kept {}, {}", kept.len(), drop_summary(&dropped));
    w.add("gate.stage.jsonl", write_corpus(&kept));
    w.add("gate.dropped.jsonl", write_corpus(&dropped));
    w.add("gate.report.json", to_json(&report));
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct MixReport {
    policy: MixPolicy,
    splits: BTreeMap<String, SourceSplit>,
}

fn mix_stage(cfg: &PipelineConfig, w: &mut Writes, out: &mut StageOutcome) -> Result<(), PipelineError> {
    let corpus = read_samples(&cfg.primary_input(Stage::Mix))?;
    let policy = cfg.mix_policy();
    let mut sel = select_retained(corpus, &policy).map_err(|e| stage_err(Stage::Mix)(e.to_string()))?;
    for s in &mut sel.english {
        s.advance(SampleState::Retained);
    }
    for (source, split) in &sel.splits {
        if split.overshoot > 0 {
            out.warnings.push(format!(
                "{source}: {} forced English samples exceed the target of {}",
                split.forced, split.target
            ));
        }
    }
    out.summary = format!("retained {} English, {} to translate", sel.english.len(), sel.translate.len());
    w.add("mix.english.stage.jsonl", write_corpus(&sel.english));
    w.add("mix.translate.stage.jsonl", write_corpus(&sel.translate));
    w.add("mix.report.json", to_json(&MixReport { policy, splits: sel.splits }));
    Ok(())
}

#[derive(Debug, Clone, Default, Serialize)]
struct ProtectReport {
    samples: usize,
    turns: usize,
    placeholders: usize,
    segments: BTreeMap<String, usize>,
    comment_lines: usize,
    glossary_hash: String,
    translate_code_comments: bool,
}

fn protect_stage(cfg: &PipelineConfig, w: &mut Writes, out: &mut StageOutcome) -> Result<(), PipelineError> {
    let mut corpus = read_samples(&cfg.primary_input(Stage::Protect))?;
    let glossary = cfg.glossary()?;
    let mut report = ProtectReport {
        samples: corpus.len(),
        glossary_hash: glossary.content_hash(),
        translate_code_comments: cfg.protect.translate_code_comments,
        ..ProtectReport::default()
    };
    for sample in &mut corpus {
        for turn in &sample.turns {
            let segs = segment(&turn.content, &glossary);
            for seg in &segs {
                *report.segments.entry(format!("{:?}", seg.kind)).or_default() += 1;
                if seg.kind == SegmentKind::PreserveCode {
                    report.comment_lines += split_code_block(seg).comment_count();
                }
            }
            report.placeholders += mask(&segs).slots.len();
            report.turns += 1;
        }
        sample.advance(SampleState::Protected);
    }
    out.summary = format!("{} placeholders over {} turns", report.placeholders, report.turns);
    w.add("protect.stage.jsonl", write_corpus(&corpus));
    w.add("protect.report.json", to_json(&report));
    Ok(())
}

fn translate_config(cfg: &PipelineConfig) -> Result<TranslateConfig, PipelineError> {
    Ok(TranslateConfig {
        backend: cfg.translate.backend.clone(),
        script_threshold: cfg.translate.script_threshold,
        translate_code_comments: cfg.protect.translate_code_comments,
        glossary: cfg.glossary()?,
        checkpoint: Some(cfg.out("translate.checkpoint.jsonl")),
    })
}

fn translate_stage(cfg: &PipelineConfig, w: &mut Writes, out: &mut StageOutcome) -> Result<(), PipelineError> {
    let corpus = read_samples(&cfg.primary_input(Stage::Translate))?;
    let tc = translate_config(cfg)?;
    let backend = cfg
        .translate
        .backend
        .build()
        .map_err(|e| PipelineError::ConfigInvalid(e.to_string()))?;
    fs::create_dir_all(&cfg.out_dir).map_err(|e| stage_err(Stage::Translate)(e.to_string()))?;
    let (samples, report) =
        translate_corpus(corpus, &tc, backend.as_ref()).map_err(|e| stage_err(Stage::Translate)(e.to_string()))?;
    let (dropped, live): (Vec<_>, Vec<_>) = samples.into_iter().partition(InstructionSample::is_dropped);
    if report.samples_failed > 0 {
        out.warnings.push(format!("{} samples failed translation", report.samples_failed));
    }
    out.summary = format!(
        "translated {}, {} ({} requests, {} units resumed)",
        report.samples_translated,
        drop_summary(&dropped),
        report.requests,
        report.units_resumed
    );
    w.add("translate.stage.jsonl", write_corpus(&live));
    w.add("translate.dropped.jsonl", write_corpus(&dropped));
    w.add("translate.report.json", to_json(&report));
    Ok(())
}

fn count_drops(samples: &[InstructionSample]) -> BTreeMap<String, usize> {
    let mut m = BTreeMap::new();
    for s in samples {
        if let Some(r) = s.drop_reason {
            *m.entry(r.to_string()).or_default() += 1;
        }
    }
    m
}

fn serialize_stage(cfg: &PipelineConfig, w: &mut Writes, out: &mut StageOutcome) -> Result<(), PipelineError> {
    let order: Vec<String> = read_samples(&cfg.out("gate.stage.jsonl"))?.into_iter().map(|s| s.id).collect();
    let mix_text = fs::read_to_string(cfg.out("mix.report.json"))
        .map_err(|e| PipelineError::MissingInput(format!("mix.report.json: {e}")))?;
    let mix: MixReport = serde_json::from_str(&mix_text).map_err(|e| stage_err(Stage::Serialize)(e.to_string()))?;
    let english = read_samples(&cfg.out("mix.english.stage.jsonl"))?;
    let translated = read_samples(&cfg.out("translate.stage.jsonl"))?;

    let tokenizer = cfg.tokenizer()?;
    let budget = TokenBudget {
        max_tokens: cfg.gate.max_tokens,
    };
    let (translated, over, _) = gate_corpus(translated, budget, &tokenizer);

    let mut drop_counts = BTreeMap::new();
    for (stage, file) in [
        ("filter", "filter.dropped.jsonl"),
        ("gate", "gate.dropped.jsonl"),
        ("translate", "translate.dropped.jsonl"),
    ] {
        let counts = count_drops(&read_optional(&cfg.out(file))?);
        if !counts.is_empty() {
            drop_counts.insert(stage.to_string(), counts);
        }
    }
    if !over.is_empty() {
        drop_counts.insert("post-translation-gate".into(), count_drops(&over));
        out.warnings.push(format!("{} translated samples exceed the token budget", over.len()));
    }
    let rules_version = cfg.rules()?.version;
    let ctx = ManifestContext {
        tokenizer,
        token_budget: budget,
        glossary_hash: cfg.glossary()?.content_hash(),
        backend: cfg.translate.backend.kind_name().into(),
        translate_code_comments: cfg.protect.translate_code_comments,
        script_threshold: cfg
            .translate
            .script_threshold
            .unwrap_or_else(|| cfg.translate.backend.default_script_threshold()),
        rules_version,
        drop_counts,
    };
    let (corpus, manifest) = assemble_final(translated, english, &order, &mix.policy, mix.splits, ctx)
        .map_err(|e| stage_err(Stage::Serialize)(e.to_string()))?;
    out.summary = format!(
        "final corpus {} samples ({} darija, {} english)",
        manifest.stats.total,
        manifest.stats.per_language.get("darija").copied().unwrap_or(0),
        manifest.stats.per_language.get("english").copied().unwrap_or(0)
    );
    w.add(FINAL_FILE, write_corpus(&corpus));
    w.add(MANIFEST_FILE, manifest.to_json());
    w.add("serialize.dropped.jsonl", write_corpus(&over));
    Ok(())
}

fn stats_stage(cfg: &PipelineConfig, out: &mut StageOutcome) -> Result<(), PipelineError> {
    let path = cfg.primary_input(Stage::Stats);
    let stats = compute_stats(&read_samples(&path)?);
    out.summary = format!("{} live samples in {}", stats.total, path.display());
    out.stdout = Some(to_json(&stats));
    Ok(())
}

fn score_stage(cfg: &PipelineConfig, out: &mut StageOutcome) -> Result<(), PipelineError> {
    let s = &cfg.score;
    let err = stage_err(Stage::Score);
    let read = |p: &Path| fs::read_to_string(p).map_err(|e| PipelineError::MissingInput(format!("{}: {e}", p.display())));
    let fresh = match (&s.predictions, &s.references) {
        (Some(p), Some(r)) => {
            let preds = read_predictions(&read(p)?).map_err(|e| err(e.to_string()))?;
            let refs = read_references(&read(r)?).map_err(|e| err(e.to_string()))?;
            let kind = MetricKind::parse(s.metric.as_deref().unwrap_or("accuracy"))
                .map_err(|e| PipelineError::ConfigInvalid(e.to_string()))?;
            Some(score(kind, &preds, &refs).map_err(|e| err(e.to_string()))?)
        }
        (None, None) => None,
        _ => return Err(PipelineError::ConfigInvalid("score needs both predictions and references".into())),
    };
    let Some(board_path) = &s.leaderboard else {
        let result = fresh.ok_or_else(|| PipelineError::ConfigInvalid("score needs predictions and references or a leaderboard".into()))?;
        out.summary = format!("{} = {} over {} items", result.metric, result.value, result.support);
        let line = json!({
            "model": s.model,
            "task": s.task,
            "metric": result.metric,
            "value": result.value,
            "support": result.support,
        });
        out.stdout = Some(format!("{line}\n"));
        return Ok(());
    };

    let mut text = if board_path.exists() { read(board_path)? } else { String::new() };
    if let Some(result) = fresh {
        let (Some(model), Some(task)) = (&s.model, &s.task) else {
            return Err(PipelineError::ConfigInvalid("adding to a leaderboard needs model and task".into()));
        };
        let line = ScoreLine {
            model: model.clone(),
            task: task.clone(),
            score: result,
        };
        if !text.is_empty() && !text.ends_with('\n') {
            text.push('\n');
        }
        text.push_str(&serde_json::to_string(&line).expect("score line serializes"));
        text.push('\n');
        write_atomic(board_path, &text).map_err(|e| err(e.to_string()))?;
        out.written.push(board_path.clone());
    }
    let mut entries = Vec::new();
    for (i, l) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let line: ScoreLine =
            serde_json::from_str(l).map_err(|e| err(format!("{} line {}: {e}", board_path.display(), i + 1)))?;
        entries.push((line.model, line.task, line.score));
    }
    let board = build_leaderboard(&entries);
    if let Some(csv) = &s.csv {
        write_atomic(csv, &board.to_csv()).map_err(|e| err(e.to_string()))?;
        out.written.push(csv.clone());
    }
    out.summary = format!("leaderboard of {} models, {} columns", board.rows.len(), board.columns.len());
    out.stdout = Some(board.to_text());
    Ok(())
}

fn footprint_stage(cfg: &PipelineConfig, out: &mut StageOutcome) -> Result<(), PipelineError> {
    let mut fc = match &cfg.footprint.runs {
        None => FootprintConfig::published(),
        Some(p) => load_footprint(p)?,
    };
    match cfg.footprint.baseline.as_deref() {
        None => {}
        Some("none") => fc.baseline = None,
        Some("atlas-baseline") => {
            let b = FootprintConfig::published().baseline.expect("bundled baseline");
            fc.baseline = Some(crate::footprint::BaselineSpec {
                estimate: ThroughputEstimate::atlas_baseline(),
                ..b
            });
        }
        Some(other) => return Err(PipelineError::ConfigInvalid(format!("unknown baseline preset {other:?}"))),
    }
    let report = fc.report().map_err(|e| stage_err(Stage::Footprint)(e.to_string()))?;
    out.summary = format!("{} runs, {} GPU·h", report.rows.len(), report.total_gpu_hours);
    if let Some(csv) = &cfg.footprint.csv {
        write_atomic(csv, &report.to_csv()).map_err(|e| stage_err(Stage::Footprint)(e.to_string()))?;
        out.written.push(csv.clone());
    }
    out.stdout = Some(report.to_text());
    Ok(())
}

pub fn load_footprint(path: &Path) -> Result<FootprintConfig, PipelineError> {
    let text = fs::read_to_string(path).map_err(|e| PipelineError::MissingInput(format!("{}: {e}", path.display())))?;
    let parsed = if path.extension().is_some_and(|e| e == "json") {
        serde_json::from_str(&text).map_err(|e| FootprintError::Parse(e.to_string()))
    } else {
        FootprintConfig::parse(&text)
    };
    parsed.map_err(|e| PipelineError::ConfigInvalid(e.to_string()))
}
