//! Seeded per-source English retention.

use gemforge::corpus::{InstructionSample, Source, Turn};
use gemforge::mixer::{select_retained, MixPolicy};

fn main() {
    let mut corpus = Vec::new();
    for (source, n) in [(Source::Lima, 1000), (Source::Deita, 600), (Source::Tulu, 4600)] {
        for i in 0..n {
            let id = format!("{source}-{i:06}");
            corpus.push(InstructionSample::new(id, source.clone(), vec![Turn::human("q"), Turn::assistant("a")]));
        }
    }
    let policy = MixPolicy::default();
    let sel = select_retained(corpus, &policy).unwrap();
    for (source, split) in &sel.splits {
        println!(
            "{source:6} total {:5} ratio {:.2} english {:5} translate {:5}",
            split.total, split.ratio, split.english, split.translate
        );
    }
    println!("first retained: {:?}", sel.english.iter().take(3).map(|s| &s.id).collect::<Vec<_>>());
}
