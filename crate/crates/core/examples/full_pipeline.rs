//! Runs every corpus stage offline over a synthetic corpus.

use std::fs;

use gemforge::corpus::{emit_record, InstructionSample, Source, Turn};
use gemforge::ingest::SchemaKind;
use gemforge::pipeline::{run_pipeline, InputSpec, Logger, PipelineConfig, FINAL_FILE, MANIFEST_FILE};

fn main() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("tulu.jsonl");
    let lines: String = (0..200)
        .map(|i| {
            let s = InstructionSample::new(
                format!("TULU-{i:06}"),
                Source::Tulu,
                vec![
                    Turn::human(format!("Write a short note about topic number {i} and why it matters.")),
                    Turn::assistant("Here is a short note with `code` and $x^2$ kept intact."),
                ],
            );
            emit_record(&s) + "\n"
        })
        .collect();
    fs::write(&input, lines).unwrap();

    let cfg = PipelineConfig {
        inputs: vec![InputSpec { path: input, source: "TULU".into(), schema: SchemaKind::MultiTurnConversation }],
        out_dir: dir.path().join("out"),
        ..PipelineConfig::default()
    };
    let outcome = run_pipeline(&cfg, &Logger { quiet: true }).unwrap();
    println!("{}", outcome.summary);
    let final_lines = fs::read_to_string(cfg.out_dir.join(FINAL_FILE)).unwrap();
    println!("{} final records", final_lines.lines().count());
    let manifest = fs::read_to_string(cfg.out_dir.join(MANIFEST_FILE)).unwrap();
    println!("{}", manifest.lines().take(12).collect::<Vec<_>>().join("\n"));
}
