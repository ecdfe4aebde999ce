use serde::{Deserialize, Serialize};

use super::segment::{Segment, SegmentKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CodeLineKind {
    Code,
    Comment,
}

/// One line of a fenced block. `text` includes its line terminator, if any.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodeLine {
    pub kind: CodeLineKind,
    pub text: String,
}

impl CodeLine {
    /// Splits a comment line into `(prefix, body, suffix)` where the body is
    /// the natural-language part: markers, indentation, a trailing `*/` and
    /// the line terminator stay outside it.
    pub fn comment_parts(&self) -> (&str, &str, &str) {
        let text = self.text.as_str();
        let content_end = text.trim_end_matches(['\n', '\r']).len();
        let mut body_end = content_end;
        let trimmed_end = text[..body_end].trim_end();
        if let Some(stripped) = trimmed_end.strip_suffix("*/") {
            body_end = stripped.trim_end().len();
        }
        let indent = text.len() - text.trim_start().len();
        let after_indent = &text[indent..];
        let marker = ["///", "//!", "//", "/**", "/*", "#", "*"]
            .iter()
            .find(|m| after_indent.starts_with(*m))
            .map_or(0, |m| m.len());
        let mut body_start = indent + marker;
        body_start += text[body_start..body_end.max(body_start)].len()
            - text[body_start..body_end.max(body_start)].trim_start().len();
        let body_start = body_start.min(body_end);
        (&text[..body_start], &text[body_start..body_end], &text[body_end..])
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodeBlockView {
    pub fence_info: String,
    /// Opening fence line including its newline.
    pub opening: String,
    pub lines: Vec<CodeLine>,
    /// Closing fence run, empty for an unclosed block.
    pub closing: String,
}

impl CodeBlockView {
    pub fn reassemble(&self) -> String {
        let mut out = self.opening.clone();
        for line in &self.lines {
            out.push_str(&line.text);
        }
        out.push_str(&self.closing);
        out
    }

    pub fn comment_count(&self) -> usize {
        self.lines.iter().filter(|l| l.kind == CodeLineKind::Comment).count()
    }

    /// Rebuilds the block with comment bodies replaced. `bodies` is indexed
    /// by line position; `None` keeps the original line.
    pub fn with_comment_bodies(&self, bodies: &[Option<String>]) -> String {
        let mut out = self.opening.clone();
        for (idx, line) in self.lines.iter().enumerate() {
            match bodies.get(idx).cloned().flatten() {
                Some(body) if line.kind == CodeLineKind::Comment => {
                    let (prefix, _, suffix) = line.comment_parts();
                    out.push_str(prefix);
                    out.push_str(&body);
                    out.push_str(suffix);
                }
                _ => out.push_str(&line.text),
            }
        }
        out.push_str(&self.closing);
        out
    }
}

/// Classifies the body lines of a fenced block. A line is a comment when it
/// starts (after indentation) with `#` or `//`, or lies inside `/* .. */`.
pub fn split_code_block(segment: &Segment) -> CodeBlockView {
    debug_assert_eq!(segment.kind, SegmentKind::PreserveCode);
    let text = segment.text.as_str();
    let (opening, rest) = match text.find('\n') {
        Some(p) => (&text[..=p], &text[p + 1..]),
        None => (text, ""),
    };
    let fence_char = opening.trim_start().chars().next().unwrap_or('`');
    let fence_info = opening
        .trim_start()
        .trim_start_matches(fence_char)
        .trim()
        .to_string();

    // The closing fence is the last line when it is a bare fence run.
    let (body, closing) = match rest.rfind('\n') {
        Some(p) if is_fence_line(&rest[p + 1..], fence_char) => (&rest[..=p], &rest[p + 1..]),
        None if !rest.is_empty() && is_fence_line(rest, fence_char) => ("", rest),
        _ => (rest, ""),
    };

    let mut lines = Vec::new();
    let mut in_block = false;
    for raw in body.split_inclusive('\n') {
        let trimmed = raw.trim_start();
        let kind = if in_block {
            if trimmed.contains("*/") {
                in_block = false;
            }
            CodeLineKind::Comment
        } else if trimmed.starts_with('#') || trimmed.starts_with("//") {
            CodeLineKind::Comment
        } else if let Some(after) = trimmed.strip_prefix("/*") {
            in_block = !after.contains("*/");
            CodeLineKind::Comment
        } else {
            CodeLineKind::Code
        };
        lines.push(CodeLine {
            kind,
            text: raw.to_string(),
        });
    }
    CodeBlockView {
        fence_info,
        opening: opening.to_string(),
        lines,
        closing: closing.to_string(),
    }
}

fn is_fence_line(line: &str, fence_char: char) -> bool {
    let t = line.trim_start_matches(' ');
    line.len() - t.len() <= 3 && t.chars().take_while(|&c| c == fence_char).count() >= 3 && {
        let run = t.chars().take_while(|&c| c == fence_char).count();
        t[run..].trim().is_empty()
    }
}
