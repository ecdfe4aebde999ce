//! Splits message text into translatable and preserved regions.
//!
//! Structural regions (fences, math, inline code, URLs) are found in a first
//! pass; glossary `KeepEnglish` terms are then marked only inside the
//! remaining translatable text, so adding a term can never hide a structural
//! region.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::glossary::{is_word_char, TermGlossary, TermMode};

pub const PLACEHOLDER_OPEN: char = '⟦';
pub const PLACEHOLDER_CLOSE: char = '⟧';

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SegmentKind {
    Translate,
    PreserveCode,
    PreserveInlineCode,
    PreserveMath,
    PreserveTerm,
    PreserveUrl,
}

impl SegmentKind {
    pub fn is_preserve(self) -> bool {
        self != SegmentKind::Translate
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub kind: SegmentKind,
    pub byte_span: Range<usize>,
    pub text: String,
}

impl Segment {
    fn new(source: &str, kind: SegmentKind, span: Range<usize>) -> Self {
        Self {
            kind,
            text: source[span.clone()].to_string(),
            byte_span: span,
        }
    }
}

pub fn segment(text: &str, glossary: &TermGlossary) -> Vec<Segment> {
    let mut out = Vec::new();
    let mut plain_start = 0;
    let mut i = 0;
    while i < text.len() {
        if let Some((end, kind)) = structural_at(text, i) {
            if plain_start < i {
                split_terms(text, plain_start..i, glossary, &mut out);
            }
            out.push(Segment::new(text, kind, i..end));
            i = end;
            plain_start = end;
        } else {
            i += text[i..].chars().next().map_or(1, char::len_utf8);
        }
    }
    if plain_start < text.len() {
        split_terms(text, plain_start..text.len(), glossary, &mut out);
    }
    out
}

/// Total bytes covered by preserve segments.
pub fn preserved_bytes(segments: &[Segment]) -> usize {
    segments
        .iter()
        .filter(|s| s.kind.is_preserve())
        .map(|s| s.byte_span.len())
        .sum()
}

fn split_terms(text: &str, span: Range<usize>, glossary: &TermGlossary, out: &mut Vec<Segment>) {
    let mut plain_start = span.start;
    let mut i = span.start;
    while i < span.end {
        let hit = glossary
            .match_at(text, i, TermMode::KeepEnglish)
            .filter(|(end, _)| *end <= span.end);
        if let Some((end, _)) = hit {
            if plain_start < i {
                out.push(Segment::new(text, SegmentKind::Translate, plain_start..i));
            }
            out.push(Segment::new(text, SegmentKind::PreserveTerm, i..end));
            i = end;
            plain_start = end;
        } else {
            i += text[i..].chars().next().map_or(1, char::len_utf8);
        }
    }
    if plain_start < span.end {
        out.push(Segment::new(text, SegmentKind::Translate, plain_start..span.end));
    }
}

fn structural_at(text: &str, i: usize) -> Option<(usize, SegmentKind)> {
    let rest = &text[i..];
    let c = rest.chars().next()?;
    match c {
        '`' | '~' => fence_at(text, i)
            .map(|end| (end, SegmentKind::PreserveCode))
            .or_else(|| {
                (c == '`')
                    .then(|| inline_code_at(text, i))
                    .flatten()
                    .map(|end| (end, SegmentKind::PreserveInlineCode))
            }),
        '\\' => math_command_at(text, i).map(|end| (end, SegmentKind::PreserveMath)),
        '$' => dollar_math_at(text, i).map(|end| (end, SegmentKind::PreserveMath)),
        PLACEHOLDER_OPEN | PLACEHOLDER_CLOSE => Some((i + c.len_utf8(), SegmentKind::PreserveTerm)),
        'h' | 'H' | 'w' | 'W' => url_at(text, i).map(|end| (end, SegmentKind::PreserveUrl)),
        _ => None,
    }
}

fn line_start(text: &str, i: usize) -> usize {
    text[..i].rfind('\n').map_or(0, |p| p + 1)
}

fn line_end(text: &str, i: usize) -> usize {
    text[i..].find('\n').map_or(text.len(), |p| i + p)
}

fn run_len(s: &str, c: char) -> usize {
    s.chars().take_while(|&x| x == c).count()
}

/// Fenced code block opening at `i`. The fence may be indented by at most
/// three spaces. Returns the end of the closing fence run, or the end of the
/// text when the fence never closes.
fn fence_at(text: &str, i: usize) -> Option<usize> {
    let ls = line_start(text, i);
    let indent = &text[ls..i];
    if indent.len() > 3 || indent.bytes().any(|b| b != b' ') {
        return None;
    }
    let fence_char = text[i..].chars().next()?;
    let run = run_len(&text[i..], fence_char);
    if run < 3 {
        return None;
    }
    let open_end = line_end(text, i);
    let info = &text[i + run..open_end];
    if fence_char == '`' && info.contains('`') {
        return None;
    }
    let mut pos = open_end;
    while pos < text.len() {
        let next_line = pos + 1;
        let le = line_end(text, next_line);
        let line = &text[next_line..le];
        let trimmed = line.trim_start_matches(' ');
        let lead = line.len() - trimmed.len();
        if lead <= 3 {
            let close_run = run_len(trimmed, fence_char);
            if close_run >= run && trimmed[close_run..].trim().is_empty() {
                return Some(next_line + lead + close_run);
            }
        }
        pos = le;
    }
    Some(text.len())
}

fn inline_code_at(text: &str, i: usize) -> Option<usize> {
    if i > 0 && text.as_bytes()[i - 1] == b'`' {
        return None;
    }
    let run = run_len(&text[i..], '`');
    let mut j = i + run;
    while j < text.len() {
        let found = text[j..].find('`')? + j;
        let close = run_len(&text[found..], '`');
        if close == run {
            return Some(found + close);
        }
        j = found + close;
    }
    None
}

fn escaped(text: &str, i: usize) -> bool {
    text[..i].bytes().rev().take_while(|&b| b == b'\\').count() % 2 == 1
}

/// `\[..\]`, `\(..\)` and `\begin{env}..\end{env}`. Unclosed openers
/// preserve the rest of the text.
fn math_command_at(text: &str, i: usize) -> Option<usize> {
    if escaped(text, i) {
        return None;
    }
    let rest = &text[i..];
    let close = if rest.starts_with("\\[") {
        "\\]".to_string()
    } else if rest.starts_with("\\(") {
        "\\)".to_string()
    } else if let Some(after) = rest.strip_prefix("\\begin{") {
        let name_len = after.find('}')?;
        let name = &after[..name_len];
        if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '*') {
            return None;
        }
        return Some(environment_end(text, i, name));
    } else {
        return None;
    };
    let body_start = i + 2;
    Some(
        text[body_start..]
            .find(&close)
            .map_or(text.len(), |p| body_start + p + close.len()),
    )
}

fn environment_end(text: &str, i: usize, name: &str) -> usize {
    let open = format!("\\begin{{{name}}}");
    let close = format!("\\end{{{name}}}");
    let mut depth = 0usize;
    let mut pos = i;
    loop {
        let next_open = text[pos..].find(&open).map(|p| p + pos);
        let next_close = text[pos..].find(&close).map(|p| p + pos);
        match (next_open, next_close) {
            (Some(o), Some(c)) if o < c => {
                depth += 1;
                pos = o + open.len();
            }
            (_, Some(c)) => {
                depth -= 1;
                pos = c + close.len();
                if depth == 0 {
                    return pos;
                }
            }
            (Some(o), None) => {
                depth += 1;
                pos = o + open.len();
            }
            (None, None) => return text.len(),
        }
    }
}

/// `$$..$$` (unclosed preserves the rest) or inline `$..$`.
///
/// An inline `$` opens math only if the next character is not whitespace and
/// a closing `$` follows in the same paragraph with a non-space character
/// before it and no digit right after it. Otherwise the `$` is literal text,
/// which keeps amounts like `$5 and $10` translatable.
fn dollar_math_at(text: &str, i: usize) -> Option<usize> {
    if escaped(text, i) {
        return None;
    }
    if text[i..].starts_with("$$") {
        let body = i + 2;
        return Some(text[body..].find("$$").map_or(text.len(), |p| body + p + 2));
    }
    let after = text[i + 1..].chars().next()?;
    if after.is_whitespace() {
        return None;
    }
    let paragraph_end = text[i + 1..]
        .find("\n\n")
        .map_or(text.len(), |p| i + 1 + p);
    let mut j = i + 1;
    while let Some(p) = text[j..paragraph_end].find('$') {
        let cand = j + p;
        let before = text[..cand].chars().next_back();
        let next = text[cand + 1..].chars().next();
        let closes = cand > i + 1
            && before.is_some_and(|c| !c.is_whitespace())
            && !escaped(text, cand)
            && !next.is_some_and(|c| c.is_ascii_digit());
        if closes {
            return Some(cand + 1);
        }
        j = cand + 1;
    }
    None
}

fn url_at(text: &str, i: usize) -> Option<usize> {
    if text[..i].chars().next_back().is_some_and(is_word_char) {
        return None;
    }
    let rest = &text[i..];
    let lower_prefix: String = rest.chars().take(8).collect::<String>().to_ascii_lowercase();
    let scheme_len = ["https://", "http://", "www."]
        .iter()
        .find(|p| lower_prefix.starts_with(*p))?
        .len();
    let mut end = i;
    for (off, c) in rest.char_indices() {
        if c.is_whitespace() || matches!(c, '<' | '>' | '"' | '`' | PLACEHOLDER_OPEN | PLACEHOLDER_CLOSE) {
            break;
        }
        end = i + off + c.len_utf8();
    }
    // trailing punctuation and unbalanced closers belong to the sentence
    loop {
        let url = &text[i..end];
        let Some(last) = url.chars().next_back() else { break };
        let unbalanced = |open: char, close: char| {
            last == close && url.matches(close).count() > url.matches(open).count()
        };
        if matches!(last, '.' | ',' | ';' | ':' | '!' | '?' | '\'' | '*')
            || unbalanced('(', ')')
            || unbalanced('[', ']')
        {
            end -= last.len_utf8();
        } else {
            break;
        }
    }
    (end > i + scheme_len).then_some(end)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kinds(text: &str) -> Vec<(SegmentKind, String)> {
        segment(text, &TermGlossary::default_glossary())
            .into_iter()
            .map(|s| (s.kind, s.text))
            .collect()
    }

    use SegmentKind::*;

    #[test]
    fn quadratic_math_span() {
        let k = kinds("Consider $ax^2 + bx + c = 0$. The solutions…");
        assert_eq!(
            k,
            vec![
                (Translate, "Consider ".into()),
                (PreserveMath, "$ax^2 + bx + c = 0$".into()),
                (Translate, ". The solutions…".into()),
            ]
        );
    }

    #[test]
    fn plain_text_single_segment() {
        let k = kinds("This chapter introduces the basic concepts.");
        assert_eq!(k, vec![(Translate, "This chapter introduces the basic concepts.".into())]);
        assert!(kinds("").is_empty());
    }

    #[test]
    fn fenced_block_spans_fences() {
        let text = "Run:\n```python\n# Calculate sum of elements\nx = 1\n```\nDone.";
        let k = kinds(text);
        assert_eq!(k[1].0, PreserveCode);
        assert!(k[1].1.starts_with("```python"));
        assert!(k[1].1.ends_with("```"));
        assert_eq!(k[2], (Translate, "\nDone.".into()));
    }

    #[test]
    fn unclosed_fence_preserves_rest() {
        let k = kinds("Intro\n```\ncode here\nmore");
        assert_eq!(k.last().unwrap(), &(PreserveCode, "```\ncode here\nmore".into()));
    }

    #[test]
    fn fence_needs_line_start() {
        let k = kinds("text ``` not a fence ```");
        assert_eq!(k[1].0, PreserveInlineCode);
    }

    #[test]
    fn dollar_amounts_stay_text() {
        assert_eq!(kinds("It costs $5 and $10 today."), vec![(Translate, "It costs $5 and $10 today.".into())]);
        assert_eq!(kinds("pay $ 5 now"), vec![(Translate, "pay $ 5 now".into())]);
        assert_eq!(kinds("a $x\n\ny$ b").len(), 1);
    }

    #[test]
    fn display_and_environment_math() {
        let k = kinds("See \\[x^2\\] and $$y$$ and \\begin{align}a\\begin{align}b\\end{align}\\end{align}.");
        let math: Vec<_> = k.iter().filter(|(k, _)| *k == PreserveMath).map(|(_, t)| t.as_str()).collect();
        assert_eq!(
            math,
            vec!["\\[x^2\\]", "$$y$$", "\\begin{align}a\\begin{align}b\\end{align}\\end{align}"]
        );
        let k = kinds("open \\(a + b");
        assert_eq!(k[1], (PreserveMath, "\\(a + b".into()));
    }

    #[test]
    fn urls_drop_trailing_punctuation() {
        let k = kinds("Visit https://example.com/a_(b). Or www.test.org, ok");
        assert_eq!(k[1], (PreserveUrl, "https://example.com/a_(b)".into()));
        assert_eq!(k[3], (PreserveUrl, "www.test.org".into()));
    }

    #[test]
    fn keep_terms_become_preserve() {
        let k = kinds("Good API design in Python");
        assert_eq!(
            k,
            vec![
                (Translate, "Good ".into()),
                (PreserveTerm, "API".into()),
                (Translate, " design in ".into()),
                (PreserveTerm, "Python".into()),
            ]
        );
    }

    #[test]
    fn sentinel_brackets_are_preserved() {
        let k = kinds("x ⟦P-0001⟧ y");
        assert_eq!(k[1], (PreserveTerm, "⟦".into()));
        assert_eq!(k[3], (PreserveTerm, "⟧".into()));
    }
}
