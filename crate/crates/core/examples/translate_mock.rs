//! Translates a small corpus with the reversible mock backend, then inverts it.

use gemforge::corpus::{InstructionSample, Source, Turn};
use gemforge::translate::{translate_corpus, BackendConfig, MockReversible, TranslateConfig};

fn main() {
    let corpus = vec![InstructionSample::new(
        "TULU-000001",
        Source::Tulu,
        vec![
            Turn::human("How do I reverse a list in Python?"),
            Turn::assistant("Call `items.reverse()`:\n\n```python\n# flips in place\nitems.reverse()\n```"),
        ],
    )];
    let cfg = TranslateConfig::new(BackendConfig::mock_reversible());
    let backend = cfg.backend.build().unwrap();
    let (out, report) = translate_corpus(corpus.clone(), &cfg, backend.as_ref()).unwrap();
    for (before, after) in corpus[0].turns.iter().zip(&out[0].turns) {
        println!("--- {}\n{}\n", after.role.as_str(), after.content);
        assert_eq!(MockReversible::invert(&after.content), before.content);
    }
    println!(
        "units {} sent {} requests {} state {}",
        report.units_total, report.units_sent, report.requests, out[0].state.as_str()
    );
}
