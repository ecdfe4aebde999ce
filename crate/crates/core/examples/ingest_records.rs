//! Normalises two source shapes into canonical records.

use gemforge::corpus::{emit_record, Source};
use gemforge::ingest::{ingest_str, SourceSchema};

const PAIRS: &str = r#"{"instruction":"Name three primary colours.","input":"","output":"Red, yellow and blue."}
{"instruction":"Summarise:","input":"The meeting moved to Friday.","output":"Meeting now on Friday."}
not json at all
"#;

const DIALOGUES: &str = r#"{"id":"d1","conversations":[{"from":"human","value":"Hi!"},{"from":"gpt","value":"Hello, how can I help?"},{"from":"human","value":"Tell me a joke."},{"from":"gpt","value":"Why did the chicken cross the road?"}]}
"#;

fn main() {
    let (pairs, report) = ingest_str(PAIRS, &SourceSchema::single_turn(), &Source::Lima);
    println!("single-turn: read {} emitted {} rejected {}", report.read, report.emitted, report.rejected);
    for r in &report.rejections {
        println!("  line {}: {}", r.line, r.error);
    }
    let (dialogues, _) = ingest_str(DIALOGUES, &SourceSchema::multi_turn(), &Source::Tulu);
    for s in pairs.iter().chain(&dialogues) {
        println!("{}", emit_record(s));
    }
}
