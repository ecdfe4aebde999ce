//! Command-line surface: one subcommand per stage plus `run`.
//!
//! Settings come from `--config` (TOML, or JSON by extension) and are then
//! overridden by flags. Exit status is 0 on success, 1 on a hard error and
//! 2 when the stage succeeded with warnings.

use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::ingest::SchemaKind;
use crate::lang_filter::DetectorBackend;
use crate::pipeline::{run_pipeline, run_stage, InputSpec, Logger, PipelineConfig, PipelineError, Stage, StageOutcome};
use crate::token_gate::{TokenizerSpec, Vocabulary};
use crate::translate::BackendConfig;

#[derive(Debug, Parser)]
#[command(name = "gemforge", version, about = "Build bilingual English/Darija instruction corpora")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Default)]
pub struct GlobalArgs {
    /// Pipeline config (TOML, or JSON with a .json extension).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Directory for stage artifacts.
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    /// Print the plan without reading or writing anything.
    #[arg(long, global = true)]
    pub dry_run: bool,
    /// Plain log lines instead of JSON.
    #[arg(long, global = true)]
    pub quiet: bool,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Token budget for the gate.
    #[arg(long, global = true)]
    pub budget: Option<usize>,
    /// English retention ratio: `R` for every source or `SOURCE=R`; repeatable.
    #[arg(long, global = true, value_name = "[SOURCE=]R")]
    pub ratio: Vec<String>,
    /// `mock-identity`, `mock-reversible`, or a backend config file.
    #[arg(long, global = true)]
    pub backend: Option<String>,
    /// Term glossary (TSV).
    #[arg(long, global = true)]
    pub glossary: Option<PathBuf>,
    /// Subword vocabulary, one piece per line; replaces the approximate tokenizer.
    #[arg(long, global = true)]
    pub vocab: Option<PathBuf>,
    /// Language-detector confidence threshold.
    #[arg(long, global = true)]
    pub threshold: Option<f64>,
    /// Minimum Arabic-script share of a translation.
    #[arg(long, global = true)]
    pub script_threshold: Option<f64>,
    #[arg(long, global = true, value_name = "BOOL")]
    pub translate_code_comments: Option<bool>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Convert source files into canonical records.
    Ingest {
        /// Source tag (LIMA, DEITA, TULU or any other name).
        #[arg(long)]
        source: Option<String>,
        #[arg(long, value_parser = parse_schema, default_value = "multi-turn-conversation")]
        schema: SchemaKind,
        files: Vec<PathBuf>,
    },
    /// Keep confidently English samples; drop meta-language prompts.
    Filter { input: Option<PathBuf> },
    /// Drop samples over the token budget.
    Gate { input: Option<PathBuf> },
    /// Choose the samples kept in English.
    Mix { input: Option<PathBuf> },
    /// Mark code, math, URLs and glossary terms for preservation.
    Protect { input: Option<PathBuf> },
    /// Translate the non-retained samples.
    Translate { input: Option<PathBuf> },
    /// Write the final corpus and manifest.
    Serialize,
    /// All corpus stages from ingest to serialize.
    Run,
    /// Counts per language, source and drop reason.
    Stats { file: Option<PathBuf> },
    /// Score predictions against references, or render a leaderboard.
    Score {
        #[arg(long)]
        pred: Option<PathBuf>,
        #[arg(long = "ref")]
        reference: Option<PathBuf>,
        #[arg(long)]
        metric: Option<String>,
        #[arg(long)]
        task: Option<String>,
        #[arg(long)]
        model: Option<String>,
        /// Score file to append to and render.
        #[arg(long)]
        leaderboard: Option<PathBuf>,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Energy, carbon and cost of GPU runs.
    Footprint {
        /// Run file; the bundled runs when absent.
        #[arg(long)]
        runs: Option<PathBuf>,
        /// `atlas-baseline` or `none`.
        #[arg(long)]
        baseline: Option<String>,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
}

fn parse_schema(s: &str) -> Result<SchemaKind, String> {
    serde_json::from_value(serde_json::Value::String(s.into()))
        .map_err(|_| format!("unknown schema {s:?} (single-turn-pair, multi-turn-conversation, tagged-pool)"))
}

fn parse_ratio(spec: &str) -> Result<(Option<String>, f64), PipelineError> {
    let bad = || PipelineError::ConfigInvalid(format!("bad --ratio {spec:?}"));
    let (source, value) = match spec.split_once('=') {
        Some((s, v)) => (Some(s.trim().to_string()), v),
        None => (None, spec),
    };
    let r: f64 = value.trim().parse().map_err(|_| bad())?;
    Ok((source, r))
}

fn load_backend(spec: &str) -> Result<BackendConfig, PipelineError> {
    match spec {
        "mock-identity" => Ok(BackendConfig::mock_identity()),
        "mock-reversible" => Ok(BackendConfig::mock_reversible()),
        path => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| PipelineError::ConfigInvalid(format!("backend {path:?}: {e}")))?;
            let parsed = if path.ends_with(".json") {
                serde_json::from_str(&text).map_err(|e| e.to_string())
            } else {
                toml::from_str(&text).map_err(|e| e.to_string())
            };
            parsed.map_err(|e| PipelineError::ConfigInvalid(format!("backend {path:?}: {e}")))
        }
    }
}

/// Applies the config file and flags for `command`.
pub fn build_config(global: &GlobalArgs, command: &Command) -> Result<PipelineConfig, PipelineError> {
    let mut cfg = match &global.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig {
            filter: crate::pipeline::FilterSettings {
                detector: DetectorBackend::from_env(),
                ..Default::default()
            },
            ..PipelineConfig::default()
        },
    };
    let g = global;
    if let Some(d) = &g.out_dir {
        cfg.out_dir = d.clone();
    }
    cfg.dry_run |= g.dry_run;
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    if let Some(b) = g.budget {
        cfg.gate.max_tokens = b;
    }
    for spec in &g.ratio {
        match parse_ratio(spec)? {
            (None, r) => {
                cfg.mix.retention_ratio.clear();
                cfg.mix.retention_ratio.insert("*".into(), r);
            }
            (Some(src), r) => {
                cfg.mix.retention_ratio.insert(src, r);
            }
        }
    }
    if let Some(b) = &g.backend {
        cfg.translate.backend = load_backend(b)?;
    }
    if let Some(p) = &g.glossary {
        cfg.protect.glossary = Some(p.clone());
    }
    if let Some(p) = &g.vocab {
        cfg.gate.tokenizer = TokenizerSpec::SubwordVocab {
            path: p.display().to_string(),
            vocab: Vocabulary::default(),
        };
    }
    if let Some(t) = g.threshold {
        cfg.filter.threshold = t;
    }
    if let Some(t) = g.script_threshold {
        cfg.translate.script_threshold = Some(t);
    }
    if let Some(b) = g.translate_code_comments {
        cfg.protect.translate_code_comments = b;
    }

    match command {
        Command::Ingest { source, schema, files } if !files.is_empty() => {
            let source = source
                .clone()
                .ok_or_else(|| PipelineError::ConfigInvalid("ingest needs --source with input files".into()))?;
            cfg.inputs = files
                .iter()
                .map(|f| InputSpec {
                    path: f.clone(),
                    source: source.clone(),
                    schema: *schema,
                })
                .collect();
        }
        Command::Filter { input }
        | Command::Gate { input }
        | Command::Mix { input }
        | Command::Protect { input }
        | Command::Translate { input }
        | Command::Stats { file: input } => cfg.stage_input = input.clone(),
        Command::Score {
            pred,
            reference,
            metric,
            task,
            model,
            leaderboard,
            csv,
        } => {
            let s = &mut cfg.score;
            s.predictions = pred.clone().or(s.predictions.take());
            s.references = reference.clone().or(s.references.take());
            s.metric = metric.clone().or(s.metric.take());
            s.task = task.clone().or(s.task.take());
            s.model = model.clone().or(s.model.take());
            s.leaderboard = leaderboard.clone().or(s.leaderboard.take());
            s.csv = csv.clone().or(s.csv.take());
        }
        Command::Footprint { runs, baseline, csv } => {
            let f = &mut cfg.footprint;
            f.runs = runs.clone().or(f.runs.take());
            f.baseline = baseline.clone().or(f.baseline.take());
            f.csv = csv.clone().or(f.csv.take());
        }
        _ => {}
    }
    Ok(cfg)
}

fn stage_of(command: &Command) -> Option<Stage> {
    Some(match command {
        Command::Ingest { .. } => Stage::Ingest,
        Command::Filter { .. } => Stage::Filter,
        Command::Gate { .. } => Stage::Gate,
        Command::Mix { .. } => Stage::Mix,
        Command::Protect { .. } => Stage::Protect,
        Command::Translate { .. } => Stage::Translate,
        Command::Serialize => Stage::Serialize,
        Command::Stats { .. } => Stage::Stats,
        Command::Score { .. } => Stage::Score,
        Command::Footprint { .. } => Stage::Footprint,
        Command::Run => return None,
    })
}

fn execute(cli: &Cli, log: &Logger) -> Result<StageOutcome, PipelineError> {
    let cfg = build_config(&cli.global, &cli.command)?;
    match stage_of(&cli.command) {
        None => run_pipeline(&cfg, log),
        Some(stage @ (Stage::Translate | Stage::Serialize)) => {
            if !cfg.dry_run {
                // credentials are checked before any request goes out
                cfg.translate
                    .backend
                    .build()
                    .map_err(|e| PipelineError::ConfigInvalid(e.to_string()))?;
            }
            run_stage(stage, &cfg, log)
        }
        Some(stage) => run_stage(stage, &cfg, log),
    }
}

/// Runs the parsed command and returns the process exit status.
pub fn run(cli: Cli) -> u8 {
    let log = Logger { quiet: cli.global.quiet };
    match execute(&cli, &log) {
        Ok(outcome) => {
            let mut stdout = std::io::stdout().lock();
            if let Some(text) = &outcome.stdout {
                let _ = stdout.write_all(text.as_bytes());
            } else if cli.global.dry_run || matches!(cli.command, Command::Run) {
                let _ = writeln!(stdout, "{}", outcome.summary);
            }
            outcome.exit_code()
        }
        Err(e) => {
            if log.quiet {
                eprintln!("error: {e}");
            } else {
                eprintln!("{}", serde_json::json!({ "level": "error", "msg": e.to_string() }));
            }
            1
        }
    }
}
