//! Text metrics and a leaderboard.

use gemforge::metrics::{bleu, build_leaderboard, chrf, rouge_l, rouge_n, Score};

fn main() {
    let hyp = "the cat sat on the mat";
    let reference = "the cat is on the mat";
    println!("chrF    {:.2}", chrf(hyp, reference, 6, 2.0));
    println!("ROUGE-1 {:.4}", rouge_n(hyp, reference, 1).f1);
    println!("ROUGE-L {:.4}", rouge_l(hyp, reference).f1);
    println!("BLEU    {:.4}", bleu(hyp, &[reference], 4));

    let s = |metric: &str, value: f64| Score {
        metric: metric.into(),
        value,
        support: 100,
    };
    let entries = vec![
        ("model-a".to_string(), "darija_mmlu".to_string(), s("accuracy", 0.612)),
        ("model-a".to_string(), "summarization_chrf".to_string(), s("chrf", 28.4)),
        ("model-b".to_string(), "darija_mmlu".to_string(), s("accuracy", 0.587)),
        ("model-b".to_string(), "gsm8k".to_string(), s("top5", 0.5)),
    ];
    let board = build_leaderboard(&entries);
    print!("\n{}\n{}", board.to_text(), board.to_csv());
}
