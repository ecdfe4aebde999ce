//! Language detection and meta-language prompt routing.

use gemforge::corpus::{InstructionSample, Source, Turn};
use gemforge::lang_filter::{filter_corpus, FilterConfig};

fn sample(id: &str, prompt: &str) -> InstructionSample {
    InstructionSample::new(id, Source::Deita, vec![Turn::human(prompt), Turn::assistant("...")])
}

fn main() {
    let corpus = vec![
        sample("en", "Explain how photosynthesis turns sunlight into chemical energy."),
        sample("fr", "Expliquez comment la photosynthèse transforme la lumière en énergie."),
        sample("ar", "اشرح كيف تحول عملية التمثيل الضوئي ضوء الشمس إلى طاقة"),
        sample("meta", "Translate the following sentence into French: the weather is nice today."),
        sample("keep", "Please answer in English: what is the capital of Morocco?"),
    ];
    let (kept, dropped, report) = filter_corpus(corpus, &FilterConfig::default());
    for s in &kept {
        println!("kept    {:5} retain_english={}", s.id, s.retain_english);
    }
    for s in &dropped {
        println!("dropped {:5} {}", s.id, s.drop_reason.unwrap());
    }
    println!("rules {} threshold {}", report.rules_version, report.threshold);
}
