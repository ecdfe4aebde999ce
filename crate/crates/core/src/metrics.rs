//! Scorers for classification, summarisation, truthfulness and numeric
//! top-5 tasks, plus leaderboard rendering.
//!
//! Tokenisation: ROUGE splits on whitespace after NFKC normalisation and
//! lowercasing. BLEU additionally splits punctuation into its own tokens.
//! chrF works on characters with whitespace removed.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use unicode_normalization::UnicodeNormalization;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("prediction and reference ids differ (e.g. {0})")]
    IdMismatch(String),
    #[error("line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("unknown metric {0:?}")]
    UnknownMetric(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub item_id: String,
    #[serde(default)]
    pub prediction: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub candidates: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceRecord {
    pub item_id: String,
    #[serde(default)]
    pub gold: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub correct_refs: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub incorrect_refs: Option<Vec<String>>,
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(
    text: &str,
    check: impl Fn(&T) -> Result<(), String>,
) -> Result<Vec<T>, MetricError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |reason: String| MetricError::Malformed { line: i + 1, reason };
        let rec: T = serde_json::from_str(line).map_err(|e| malformed(e.to_string()))?;
        check(&rec).map_err(malformed)?;
        out.push(rec);
    }
    Ok(out)
}

pub fn read_predictions(text: &str) -> Result<Vec<PredictionRecord>, MetricError> {
    read_jsonl(text, |p: &PredictionRecord| match &p.candidates {
        Some(c) if c.is_empty() || c.len() > 5 => Err("candidates must hold 1 to 5 entries".into()),
        _ => Ok(()),
    })
}

pub fn read_references(text: &str) -> Result<Vec<ReferenceRecord>, MetricError> {
    read_jsonl(text, |r: &ReferenceRecord| match (&r.correct_refs, &r.incorrect_refs) {
        (Some(c), Some(i)) if c.is_empty() || i.is_empty() => {
            Err("truthfulness items need correct and incorrect references".into())
        }
        (Some(_), None) | (None, Some(_)) => {
            Err("truthfulness items need correct and incorrect references".into())
        }
        _ => Ok(()),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Score {
    pub metric: String,
    pub value: f64,
    pub support: usize,
}

impl Score {
    fn new(metric: &str, value: f64, support: usize) -> Self {
        Self {
            metric: metric.to_string(),
            value,
            support,
        }
    }
}

/// Pairs predictions with references by id; both sides must carry the same
/// id set.
fn join<'a>(
    preds: &'a [PredictionRecord],
    refs: &'a [ReferenceRecord],
) -> Result<Vec<(&'a PredictionRecord, &'a ReferenceRecord)>, MetricError> {
    let by_id: HashMap<&str, &ReferenceRecord> = refs.iter().map(|r| (r.item_id.as_str(), r)).collect();
    let pred_ids: HashSet<&str> = preds.iter().map(|p| p.item_id.as_str()).collect();
    if let Some(r) = refs.iter().find(|r| !pred_ids.contains(r.item_id.as_str())) {
        return Err(MetricError::IdMismatch(r.item_id.clone()));
    }
    if pred_ids.len() != preds.len() || by_id.len() != refs.len() {
        return Err(MetricError::IdMismatch("duplicate item_id".into()));
    }
    preds
        .iter()
        .map(|p| {
            by_id
                .get(p.item_id.as_str())
                .map(|r| (p, *r))
                .ok_or_else(|| MetricError::IdMismatch(p.item_id.clone()))
        })
        .collect()
}

/// Trimmed, lowercased, with surrounding punctuation removed.
pub fn normalize_label(label: &str) -> String {
    label
        .trim()
        .trim_matches(|c: char| c.is_ascii_punctuation() || c.is_whitespace())
        .to_lowercase()
}

pub fn accuracy(preds: &[PredictionRecord], refs: &[ReferenceRecord]) -> Result<Score, MetricError> {
    let pairs = join(preds, refs)?;
    let correct = pairs
        .iter()
        .filter(|(p, r)| normalize_label(&p.prediction) == normalize_label(&r.gold))
        .count();
    let value = if pairs.is_empty() {
        0.0
    } else {
        correct as f64 / pairs.len() as f64
    };
    Ok(Score::new("accuracy", value, pairs.len()))
}

fn char_ngrams(chars: &[char], n: usize) -> HashMap<&[char], usize> {
    let mut counts = HashMap::new();
    if chars.len() >= n {
        for w in chars.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

fn overlap<K: std::hash::Hash + Eq>(a: &HashMap<K, usize>, b: &HashMap<K, usize>) -> usize {
    a.iter().map(|(k, &c)| c.min(b.get(k).copied().unwrap_or(0))).sum()
}

/// Character n-gram F-score on `[0, 100]`. Precision and recall are averaged
/// over the orders where both sides have n-grams, then combined with F-β.
pub fn chrf(hyp: &str, reference: &str, n: usize, beta: f64) -> f64 {
    let h: Vec<char> = hyp.chars().filter(|c| !c.is_whitespace()).collect();
    let r: Vec<char> = reference.chars().filter(|c| !c.is_whitespace()).collect();
    let (mut p_sum, mut r_sum, mut orders) = (0.0, 0.0, 0usize);
    for order in 1..=n {
        let hg = char_ngrams(&h, order);
        let rg = char_ngrams(&r, order);
        let (ht, rt): (usize, usize) = (hg.values().sum(), rg.values().sum());
        if ht == 0 || rt == 0 {
            continue;
        }
        let m = overlap(&hg, &rg) as f64;
        p_sum += m / ht as f64;
        r_sum += m / rt as f64;
        orders += 1;
    }
    if orders == 0 {
        return 0.0;
    }
    let (p, r) = (p_sum / orders as f64, r_sum / orders as f64);
    let b2 = beta * beta;
    if p + r == 0.0 {
        0.0
    } else {
        100.0 * (1.0 + b2) * p * r / (b2 * p + r)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Prf {
    fn from_counts(matched: usize, hyp_total: usize, ref_total: usize) -> Self {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(matched, hyp_total);
        let recall = ratio(matched, ref_total);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Self { precision, recall, f1 }
    }
}

pub fn normalize_text(text: &str) -> String {
    text.nfkc().collect::<String>().to_lowercase()
}

pub fn rouge_tokens(text: &str) -> Vec<String> {
    normalize_text(text).split_whitespace().map(str::to_string).collect()
}

fn word_ngrams(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    if n > 0 && tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

pub fn rouge_n(hyp: &str, reference: &str, n: usize) -> Prf {
    let (h, r) = (rouge_tokens(hyp), rouge_tokens(reference));
    let (hg, rg) = (word_ngrams(&h, n), word_ngrams(&r, n));
    Prf::from_counts(overlap(&hg, &rg), hg.values().sum(), rg.values().sum())
}

pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut row = vec![0usize; b.len() + 1];
    for x in a {
        let mut diag = 0;
        for (j, y) in b.iter().enumerate() {
            let up = row[j + 1];
            row[j + 1] = if x == y { diag + 1 } else { up.max(row[j]) };
            diag = up;
        }
    }
    row[b.len()]
}

pub fn rouge_l(hyp: &str, reference: &str) -> Prf {
    let (h, r) = (rouge_tokens(hyp), rouge_tokens(reference));
    Prf::from_counts(lcs_len(&h, &r), h.len(), r.len())
}

static BLEU_TOKEN: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"[\p{L}\p{N}_]+|[^\s\p{L}\p{N}_]").expect("bleu token regex"));

pub fn bleu_tokens(text: &str) -> Vec<String> {
    let norm = normalize_text(text);
    BLEU_TOKEN.find_iter(&norm).map(|m| m.as_str().to_string()).collect()
}

/// Sentence BLEU with clipped counts over all references and the brevity
/// penalty of the closest reference length (shorter wins ties). Orders
/// n ≥ 2 without any match score `1 / (total + 1)`.
pub fn bleu(hyp: &str, refs: &[&str], max_n: usize) -> f64 {
    let h = bleu_tokens(hyp);
    if h.is_empty() || refs.is_empty() || max_n == 0 {
        return 0.0;
    }
    let rt: Vec<Vec<String>> = refs.iter().map(|r| bleu_tokens(r)).collect();
    let mut log_sum = 0.0;
    for n in 1..=max_n {
        let hg = word_ngrams(&h, n);
        let total: usize = hg.values().sum();
        let ref_grams: Vec<_> = rt.iter().map(|r| word_ngrams(r, n)).collect();
        let matched: usize = hg
            .iter()
            .map(|(g, &c)| {
                let max_ref = ref_grams.iter().map(|rg| rg.get(g).copied().unwrap_or(0)).max().unwrap_or(0);
                c.min(max_ref)
            })
            .sum();
        let p = if matched > 0 {
            matched as f64 / total as f64
        } else if n == 1 {
            return 0.0;
        } else {
            1.0 / (total as f64 + 1.0)
        };
        log_sum += p.ln();
    }
    let c = h.len();
    let r = rt
        .iter()
        .map(Vec::len)
        .min_by_key(|&len| (len.abs_diff(c), len))
        .unwrap_or(0);
    let bp = if c > r { 1.0 } else { (1.0 - r as f64 / c as f64).exp() };
    bp * (log_sum / max_n as f64).exp()
}

/// 1 iff the best BLEU against correct references strictly beats the best
/// against incorrect ones.
pub fn bleu_acc(pred: &str, correct: &[&str], incorrect: &[&str]) -> u8 {
    let best = |refs: &[&str]| refs.iter().map(|r| bleu(pred, &[r], 4)).fold(0.0, f64::max);
    u8::from(best(correct) > best(incorrect))
}

static NUMBER: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"-?\d+(?:\.\d+)?").expect("number regex"));

/// Last number in `text` after removing commas, whitespace and currency
/// signs, as a canonical decimal string (`"1,000.50"` → `"1000.5"`).
pub fn extract_number(text: &str) -> Option<String> {
    let cleaned: String = text
        .chars()
        .filter(|&c| c != ',' && !c.is_whitespace() && !is_currency(c))
        .collect();
    let m = NUMBER.find_iter(&cleaned).last()?;
    Some(canonical_decimal(m.as_str()))
}

fn is_currency(c: char) -> bool {
    matches!(c, '$' | '€' | '£' | '¥' | '₹' | '₩' | '₽' | '¢' | '₺' | '₪' | '₫')
}

fn canonical_decimal(num: &str) -> String {
    let (neg, digits) = match num.strip_prefix('-') {
        Some(d) => (true, d),
        None => (false, num),
    };
    let (int, frac) = digits.split_once('.').unwrap_or((digits, ""));
    let int = int.trim_start_matches('0');
    let frac = frac.trim_end_matches('0');
    let int = if int.is_empty() { "0" } else { int };
    let body = if frac.is_empty() {
        int.to_string()
    } else {
        format!("{int}.{frac}")
    };
    if neg && body != "0" {
        format!("-{body}")
    } else {
        body
    }
}

/// 1 iff any of the first five candidates carries the gold number.
pub fn top5_match(candidates: &[String], gold: &str) -> u8 {
    let Some(gold) = extract_number(gold) else {
        return 0;
    };
    u8::from(
        candidates
            .iter()
            .take(5)
            .any(|c| extract_number(c).as_deref() == Some(gold.as_str())),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MetricKind {
    Accuracy,
    Chrf,
    Rouge1,
    RougeL,
    Bleu,
    BleuAcc,
    Top5,
}

impl MetricKind {
    pub const ALL: [MetricKind; 7] = [
        MetricKind::Accuracy,
        MetricKind::Chrf,
        MetricKind::Rouge1,
        MetricKind::RougeL,
        MetricKind::Bleu,
        MetricKind::BleuAcc,
        MetricKind::Top5,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MetricKind::Accuracy => "accuracy",
            MetricKind::Chrf => "chrf",
            MetricKind::Rouge1 => "rouge1",
            MetricKind::RougeL => "rougeL",
            MetricKind::Bleu => "bleu",
            MetricKind::BleuAcc => "bleu_acc",
            MetricKind::Top5 => "top5",
        }
    }

    pub fn parse(name: &str) -> Result<Self, MetricError> {
        let key = name.to_ascii_lowercase().replace(['-', '_'], "");
        Self::ALL
            .into_iter()
            .find(|m| m.name().to_ascii_lowercase().replace('_', "") == key)
            .ok_or_else(|| MetricError::UnknownMetric(name.to_string()))
    }
}

/// Corpus score: accuracy-style metrics are item means; text metrics are
/// macro-averages of per-item scores (ROUGE reports F1).
pub fn score(kind: MetricKind, preds: &[PredictionRecord], refs: &[ReferenceRecord]) -> Result<Score, MetricError> {
    if kind == MetricKind::Accuracy {
        return accuracy(preds, refs);
    }
    let pairs = join(preds, refs)?;
    let per_item = |(p, r): &(&PredictionRecord, &ReferenceRecord)| -> f64 {
        match kind {
            MetricKind::Accuracy => unreachable!(),
            MetricKind::Chrf => chrf(&p.prediction, &r.gold, 6, 2.0),
            MetricKind::Rouge1 => rouge_n(&p.prediction, &r.gold, 1).f1,
            MetricKind::RougeL => rouge_l(&p.prediction, &r.gold).f1,
            MetricKind::Bleu => bleu(&p.prediction, &[r.gold.as_str()], 4),
            MetricKind::BleuAcc => {
                let refs = |v: &Option<Vec<String>>| -> Vec<String> { v.clone().unwrap_or_default() };
                let (c, i) = (refs(&r.correct_refs), refs(&r.incorrect_refs));
                let c: Vec<&str> = c.iter().map(String::as_str).collect();
                let i: Vec<&str> = i.iter().map(String::as_str).collect();
                bleu_acc(&p.prediction, &c, &i) as f64
            }
            MetricKind::Top5 => {
                let single = [p.prediction.clone()];
                top5_match(p.candidates.as_deref().unwrap_or(&single), &r.gold) as f64
            }
        }
    };
    let sum: f64 = pairs.iter().map(per_item).sum();
    let value = if pairs.is_empty() { 0.0 } else { sum / pairs.len() as f64 };
    Ok(Score::new(kind.name(), value, pairs.len()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ColumnGroup {
    Model,
    Darija,
    English,
    Other,
}

impl ColumnGroup {
    fn label(self) -> &'static str {
        match self {
            ColumnGroup::Model => "",
            ColumnGroup::Darija => "Darija",
            ColumnGroup::English => "English",
            ColumnGroup::Other => "Other",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Column {
    pub task: String,
    pub header: String,
    pub group: ColumnGroup,
    /// Scores on [0, 1] shown ×100.
    pub percent: bool,
}

/// Task keys of the standard layout, in display order.
pub const LEADERBOARD_LAYOUT: &[(&str, &str, ColumnGroup, bool)] = &[
    ("size_b", "Size(B)", ColumnGroup::Model, false),
    ("darija_mmlu", "DarijaMMLU Acc", ColumnGroup::Darija, true),
    ("darija_hellaswag", "DarijaHellaSwag Acc", ColumnGroup::Darija, true),
    ("sentiment", "Sentiment Acc", ColumnGroup::Darija, true),
    ("summarization_chrf", "Summ. chrF", ColumnGroup::Darija, false),
    ("summarization_rouge1", "Summ. ROUGE-1", ColumnGroup::Darija, true),
    ("summarization_rougeL", "Summ. ROUGE-L", ColumnGroup::Darija, true),
    ("summarization_bertscore", "Summ. BERTScore", ColumnGroup::Darija, true),
    ("mmlu", "MMLU Acc", ColumnGroup::English, true),
    ("truthfulqa", "TruthfulQA bleu_acc", ColumnGroup::English, true),
    ("hellaswag", "HellaSwag Acc", ColumnGroup::English, true),
    ("gsm8k", "GSM8K@5 Acc", ColumnGroup::English, true),
];

pub const MISSING_CELL: &str = "—";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Leaderboard {
    pub columns: Vec<Column>,
    pub rows: Vec<(String, Vec<Option<f64>>)>,
}

/// Two decimals with trailing zeros dropped.
pub fn format_cell(value: f64, percent: bool) -> String {
    let v = if percent { value * 100.0 } else { value };
    let s = format!("{v:.2}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" { "0".into() } else { s.to_string() }
}

/// Rows in first-seen model order; only columns holding at least one value
/// are shown, standard tasks first, unknown tasks after in first-seen order.
pub fn build_leaderboard(entries: &[(String, String, Score)]) -> Leaderboard {
    let mut models: Vec<String> = Vec::new();
    let mut cells: BTreeMap<(String, String), f64> = BTreeMap::new();
    let mut extra: Vec<String> = Vec::new();
    for (model, task, score) in entries {
        if !models.contains(model) {
            models.push(model.clone());
        }
        let known = LEADERBOARD_LAYOUT.iter().any(|(k, ..)| k == task);
        if !known && !extra.contains(task) {
            extra.push(task.clone());
        }
        cells.insert((model.clone(), task.clone()), score.value);
    }
    let present: HashSet<&str> = entries.iter().map(|(_, t, _)| t.as_str()).collect();
    let mut columns: Vec<Column> = LEADERBOARD_LAYOUT
        .iter()
        .filter(|(k, ..)| present.contains(k))
        .map(|&(task, header, group, percent)| Column {
            task: task.into(),
            header: header.into(),
            group,
            percent,
        })
        .collect();
    columns.extend(extra.into_iter().map(|t| Column {
        header: t.clone(),
        task: t,
        group: ColumnGroup::Other,
        percent: false,
    }));
    let rows = models
        .into_iter()
        .map(|m| {
            let vals = columns.iter().map(|c| cells.get(&(m.clone(), c.task.clone())).copied()).collect();
            (m, vals)
        })
        .collect();
    Leaderboard { columns, rows }
}

impl Leaderboard {
    fn rendered_rows(&self) -> Vec<Vec<String>> {
        self.rows
            .iter()
            .map(|(m, vals)| {
                std::iter::once(m.clone())
                    .chain(vals.iter().zip(&self.columns).map(|(v, c)| match v {
                        Some(v) => format_cell(*v, c.percent),
                        None => MISSING_CELL.to_string(),
                    }))
                    .collect()
            })
            .collect()
    }

    /// Aligned text table with a group line above the column headers.
    pub fn to_text(&self) -> String {
        let mut header: Vec<String> = vec!["Model".into()];
        header.extend(self.columns.iter().map(|c| c.header.clone()));
        let mut groups: Vec<String> = vec![String::new()];
        let mut last = None;
        for c in &self.columns {
            groups.push(if last == Some(c.group) { String::new() } else { c.group.label().to_string() });
            last = Some(c.group);
        }
        let body = self.rendered_rows();
        let width = |i: usize| {
            std::iter::once(&header)
                .chain(std::iter::once(&groups))
                .chain(&body)
                .map(|r| r[i].chars().count())
                .max()
                .unwrap_or(0)
        };
        let widths: Vec<usize> = (0..header.len()).map(width).collect();
        let line = |cells: &[String]| -> String {
            let parts: Vec<String> = cells
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(i, (c, &w))| {
                    let pad = w - c.chars().count();
                    if i == 0 { format!("{c}{}", " ".repeat(pad)) } else { format!("{}{c}", " ".repeat(pad)) }
                })
                .collect();
            parts.join(" | ").trim_end().to_string()
        };
        let mut out = String::new();
        if groups.iter().any(|g| !g.is_empty()) {
            let _ = writeln!(out, "{}", line(&groups));
        }
        let _ = writeln!(out, "{}", line(&header));
        let rule: Vec<String> = widths.iter().map(|&w| "-".repeat(w)).collect();
        let _ = writeln!(out, "{}", rule.join("-+-"));
        for r in &body {
            let _ = writeln!(out, "{}", line(r));
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let quote = |s: &str| {
            if s.contains([',', '"', '\n']) {
                format!("\"{}\"", s.replace('"', "\"\""))
            } else {
                s.to_string()
            }
        };
        let mut out = String::from("model");
        for c in &self.columns {
            let h = match c.group {
                ColumnGroup::Darija | ColumnGroup::English => format!("{} {}", c.group.label(), c.header),
                _ => c.header.clone(),
            };
            out.push(',');
            out.push_str(&quote(&h));
        }
        out.push('\n');
        for r in self.rendered_rows() {
            let cells: Vec<String> = r.iter().map(|c| quote(c)).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pred(id: &str, p: &str) -> PredictionRecord {
        PredictionRecord {
            item_id: id.into(),
            prediction: p.into(),
            candidates: None,
        }
    }

    fn gold(id: &str, g: &str) -> ReferenceRecord {
        ReferenceRecord {
            item_id: id.into(),
            gold: g.into(),
            correct_refs: None,
            incorrect_refs: None,
        }
    }

    #[test]
    fn accuracy_examples() {
        let p = vec![pred("1", "A"), pred("2", " b."), pred("3", "C"), pred("4", "D")];
        let r = vec![gold("1", "a"), gold("2", "B"), gold("3", "c"), gold("4", "A")];
        assert_eq!(accuracy(&p, &r).unwrap().value, 0.75);
        assert_eq!(accuracy(&p[..3], &r[..3]).unwrap().value, 1.0);
        assert!(matches!(accuracy(&p[..2], &r[2..]), Err(MetricError::IdMismatch(_))));
    }

    #[test]
    fn chrf_hand_enumerated() {
        // orders 1-4 have n-grams on both sides; 5 and 6 have none
        let p = [3.0 / 4.0, 2.0 / 3.0, 1.0 / 2.0, 0.0];
        let avg = p.iter().sum::<f64>() / 4.0;
        // precision == recall here, so F2 == avg
        assert!((chrf("abcd", "abce", 6, 2.0) - 100.0 * avg).abs() < 1e-9);
        assert_eq!(chrf("same text", "same text", 6, 2.0), 100.0);
        assert_eq!(chrf("", "reference", 6, 2.0), 0.0);
    }

    #[test]
    fn chrf_asymmetric_beta() {
        // hyp "ab", ref "abcd": P = 1 at both orders, R = (2/4 + 1/3) / 2
        let r = (0.5 + 1.0 / 3.0) / 2.0;
        let f2 = 5.0 * r / (4.0 + r);
        assert!((chrf("ab", "abcd", 6, 2.0) - 100.0 * f2).abs() < 1e-9);
    }

    #[test]
    fn rouge_examples() {
        let l = rouge_l("a c", "a b c");
        assert_eq!(l.precision, 1.0);
        assert!((l.recall - 2.0 / 3.0).abs() < 1e-12);
        assert!((l.f1 - 0.8).abs() < 1e-12);
        assert_eq!(rouge_l("x y", "a b").f1, 0.0);
        assert_eq!(rouge_n("the cat sat", "The  cat sat", 1).f1, 1.0);
        let r2 = rouge_n("the cat sat", "the cat ran", 2);
        assert_eq!((r2.precision, r2.recall), (0.5, 0.5));
    }

    #[test]
    fn bleu_hand_computed() {
        // hyp: the cat sat on mat (5) ; ref: the cat sat on the mat (6)
        // p1 = 5/5, p2 = 3/4 (the-cat, cat-sat, sat-on), p3 = 2/3, p4 = 1/2
        // BP = exp(1 - 6/5)
        let expected = (1.0f64 - 6.0 / 5.0).exp() * (1.0f64 * 0.75 * (2.0 / 3.0) * 0.5).powf(0.25);
        let got = bleu("the cat sat on mat", &["the cat sat on the mat"], 4);
        assert!((got - expected).abs() < 1e-12, "{got} vs {expected}");
        assert_eq!(bleu("", &["x"], 4), 0.0);
        assert_eq!(bleu("Paris is nice.", &["paris is nice ."], 4), 1.0);
    }

    #[test]
    fn bleu_smoothing_on_zero_orders() {
        // "a b" vs "a c": p1 = 1/2, p2 = 0 matches of 1 -> 1/2, p3 = p4 = 1/(0+1)
        let expected = (0.5f64 * 0.5).powf(0.25);
        assert!((bleu("a b", &["a c"], 4) - expected).abs() < 1e-12);
    }

    #[test]
    fn bleu_acc_fixtures() {
        let correct = ["the sky is blue"];
        let incorrect = ["cats can fly home"];
        assert_eq!(bleu_acc("the sky is blue", &correct, &incorrect), 1);
        assert_eq!(bleu_acc("cats can fly home", &correct, &incorrect), 0);
        // symmetric: pred shares one token with each side, same lengths
        assert_eq!(bleu_acc("x y", &["x q"], &["y q"]), 0);
    }

    #[test]
    fn top5_fixtures() {
        let s = |v: &[&str]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>();
        assert_eq!(top5_match(&s(&["12", "7"]), "7"), 1);
        assert_eq!(top5_match(&s(&["1,000"]), "1000"), 1);
        assert_eq!(top5_match(&[], "3"), 0);
        assert_eq!(top5_match(&s(&["The answer is $18.00"]), "18"), 1);
        assert_eq!(top5_match(&s(&["no number"]), "5"), 0);
        assert_eq!(top5_match(&s(&["1", "2", "3", "4", "5", "6"]), "6"), 0);
        assert_eq!(extract_number("-0.0"), Some("0".into()));
        assert_eq!(extract_number("007.50"), Some("7.5".into()));
    }

    #[test]
    fn metric_names() {
        assert_eq!(MetricKind::parse("rouge-l").unwrap(), MetricKind::RougeL);
        assert_eq!(MetricKind::parse("bleu_acc").unwrap(), MetricKind::BleuAcc);
        assert!(MetricKind::parse("bertscore").is_err());
    }

    #[test]
    fn record_validation() {
        assert!(read_predictions(r#"{"item_id":"1","candidates":[]}"#).is_err());
        assert!(read_references(r#"{"item_id":"1","correct_refs":["a"]}"#).is_err());
        assert_eq!(read_predictions("{\"item_id\":\"1\",\"prediction\":\"x\"}\n\n").unwrap().len(), 1);
    }

    fn s(v: f64) -> Score {
        Score::new("m", v, 1)
    }

    #[test]
    fn one_by_one_table() {
        let lb = build_leaderboard(&[("m".into(), "mmlu".into(), s(0.5))]);
        assert_eq!(lb.columns.len(), 1);
        assert_eq!(lb.rows.len(), 1);
        assert_eq!(lb.to_csv(), "model,English MMLU Acc\nm,50\n");
    }

    #[test]
    fn missing_cells() {
        let lb = build_leaderboard(&[
            ("a".into(), "mmlu".into(), s(0.5)),
            ("b".into(), "gsm8k".into(), s(0.25)),
        ]);
        assert_eq!(lb.to_csv(), "model,English MMLU Acc,English GSM8K@5 Acc\na,50,—\nb,—,25\n");
        assert!(lb.to_text().contains("English"));
    }

    proptest! {
        #[test]
        fn ranges(a in "\\PC{0,30}", b in "\\PC{0,30}") {
            let c = chrf(&a, &b, 6, 2.0);
            prop_assert!((0.0..=100.0).contains(&c));
            let l = rouge_l(&a, &b);
            prop_assert!((0.0..=1.0).contains(&l.f1));
            let x = bleu(&a, &[b.as_str()], 4);
            prop_assert!((0.0..=1.0 + 1e-12).contains(&x));
        }

        #[test]
        fn identity_maxima(a in "[a-z]{1,8}( [a-z]{1,8}){0,6}") {
            prop_assert!((chrf(&a, &a, 6, 2.0) - 100.0).abs() < 1e-9);
            prop_assert_eq!(rouge_l(&a, &a).f1, 1.0);
            prop_assert_eq!(rouge_n(&a, &a, 1).f1, 1.0);
            prop_assert!((bleu(&a, &[a.as_str()], 4) - 1.0).abs() < 1e-12);
        }

        #[test]
        fn corpus_score_order_free(items in prop::collection::vec(("[a-c ]{0,8}", "[a-c ]{0,8}"), 1..10), rot in 0usize..10) {
            let preds: Vec<_> = items.iter().enumerate().map(|(i, (p, _))| pred(&i.to_string(), p)).collect();
            let refs: Vec<_> = items.iter().enumerate().map(|(i, (_, g))| gold(&i.to_string(), g)).collect();
            let mut shuffled = preds.clone();
            shuffled.rotate_left(rot % preds.len());
            for kind in [MetricKind::Chrf, MetricKind::RougeL, MetricKind::Accuracy] {
                let a = score(kind, &preds, &refs).unwrap().value;
                let b = score(kind, &shuffled, &refs).unwrap().value;
                prop_assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
