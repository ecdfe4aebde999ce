//! Renders conversations with the chat template and gates on token count.

use gemforge::corpus::{InstructionSample, Source, Turn};
use gemforge::token_gate::{count_tokens, gate, render_chat, TokenBudget, TokenizerSpec};

fn main() {
    let short = InstructionSample::new(
        "short",
        Source::Lima,
        vec![Turn::system("Be brief."), Turn::human("What is 2+2?"), Turn::assistant("4")],
    );
    let long = InstructionSample::new(
        "long",
        Source::Lima,
        vec![Turn::human("Repeat after me. ".repeat(600)), Turn::assistant("ok")],
    );
    let approx = TokenizerSpec::default();
    let vocab = TokenizerSpec::with_vocab("toy", &["What", "is", "Be", "brief", "USER", "ASSISTANT"]).unwrap();
    print!("{}", render_chat(&short));
    for s in [&short, &long] {
        let text = render_chat(s);
        println!(
            "{}: approx {} tokens, toy vocab {} tokens, {:?}",
            s.id,
            count_tokens(&text, &approx),
            count_tokens(&text, &vocab),
            gate(s, TokenBudget::default(), &approx)
        );
    }
}
