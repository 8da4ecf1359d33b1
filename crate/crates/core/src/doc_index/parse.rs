//! Block-level document parsing.
//!
//! The text is split into tagged blocks by delimiter rules: fenced regions
//! become pseudocode, display-math regions become equations, pipe-prefixed
//! runs become tables, image/caption lines become figure captions, and
//! heading lines are isolated into their own text blocks so the index can
//! segment on them. Everything else accumulates into plain text blocks.

use super::{Block, BlockKind, DocFormat, DocIndexError, SourceDocument};
use crate::paths::normalize_line_endings;

/// Parses raw text in the declared format into a block sequence.
///
/// Line endings are normalized to LF first; block raws concatenate back to
/// the normalized input exactly.
pub fn parse_document(raw: &str, format: DocFormat) -> Result<SourceDocument, DocIndexError> {
    if raw.is_empty() {
        return Err(DocIndexError::EmptyInput);
    }
    let text = normalize_line_endings(raw);
    let lines = split_keep_newlines(&text);

    let mut elements: Vec<Block> = Vec::new();
    let mut text_run = String::new();
    let mut i = 0usize;

    let flush_text = |run: &mut String, out: &mut Vec<Block>| {
        if !run.is_empty() {
            out.push(Block {
                kind: BlockKind::Text,
                raw: std::mem::take(run),
            });
        }
    };

    while i < lines.len() {
        let line = lines[i];
        let stripped = strip_newline(line);

        if format == DocFormat::Markdown {
            if let Some(fence) = fence_marker(stripped) {
                flush_text(&mut text_run, &mut elements);
                let mut raw = String::from(line);
                i += 1;
                while i < lines.len() {
                    let l = lines[i];
                    raw.push_str(l);
                    i += 1;
                    if strip_newline(l).trim_start().starts_with(fence) {
                        break;
                    }
                }
                elements.push(Block {
                    kind: BlockKind::Pseudocode,
                    raw,
                });
                continue;
            }
            if is_math_open(stripped) {
                flush_text(&mut text_run, &mut elements);
                let mut raw = String::from(line);
                i += 1;
                if !is_math_closed_inline(stripped) {
                    while i < lines.len() {
                        let l = lines[i];
                        raw.push_str(l);
                        i += 1;
                        if strip_newline(l).trim_end().ends_with("$$") {
                            break;
                        }
                    }
                }
                elements.push(Block {
                    kind: BlockKind::Equation,
                    raw,
                });
                continue;
            }
            if is_table_line(stripped) {
                flush_text(&mut text_run, &mut elements);
                let mut raw = String::new();
                while i < lines.len() && is_table_line(strip_newline(lines[i])) {
                    raw.push_str(lines[i]);
                    i += 1;
                }
                elements.push(Block {
                    kind: BlockKind::Table,
                    raw,
                });
                continue;
            }
            if is_figure_caption(stripped) {
                flush_text(&mut text_run, &mut elements);
                elements.push(Block {
                    kind: BlockKind::FigureCaption,
                    raw: line.to_string(),
                });
                i += 1;
                continue;
            }
        }

        if heading_of_line(stripped, format).is_some() {
            flush_text(&mut text_run, &mut elements);
            elements.push(Block {
                kind: BlockKind::Text,
                raw: line.to_string(),
            });
            i += 1;
            continue;
        }

        text_run.push_str(line);
        i += 1;
    }
    flush_text(&mut text_run, &mut elements);

    let doc = SourceDocument {
        elements,
        origin: None,
        format,
    };
    debug_assert_eq!(doc.full_text(), text);
    Ok(doc)
}

/// Splits text into lines, each retaining its trailing `\n` when present.
fn split_keep_newlines(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut start = 0usize;
    for (i, b) in text.bytes().enumerate() {
        if b == b'\n' {
            out.push(&text[start..=i]);
            start = i + 1;
        }
    }
    if start < text.len() {
        out.push(&text[start..]);
    }
    out
}

fn strip_newline(line: &str) -> &str {
    line.strip_suffix('\n').unwrap_or(line)
}

fn fence_marker(line: &str) -> Option<&'static str> {
    let t = line.trim_start();
    if t.starts_with("```") {
        Some("```")
    } else if t.starts_with("~~~") {
        Some("~~~")
    } else {
        None
    }
}

fn is_math_open(line: &str) -> bool {
    line.trim_start().starts_with("$$")
}

fn is_math_closed_inline(line: &str) -> bool {
    let t = line.trim();
    t.len() > 3 && t.starts_with("$$") && t.ends_with("$$")
}

fn is_table_line(line: &str) -> bool {
    line.trim_start().starts_with('|')
}

fn is_figure_caption(line: &str) -> bool {
    let t = line.trim_start();
    if t.starts_with("![") {
        return true;
    }
    let rest = t
        .strip_prefix("Figure ")
        .or_else(|| t.strip_prefix("Fig. "))
        .or_else(|| t.strip_prefix("Fig "));
    match rest {
        Some(r) => {
            let digits: String = r.chars().take_while(|c| c.is_ascii_digit()).collect();
            !digits.is_empty()
                && matches!(
                    r[digits.len()..].chars().next(),
                    Some(':') | Some('.') | Some(' ')
                )
        }
        None => false,
    }
}

/// Recognizes a heading line and returns its text and depth.
///
/// Markdown hash headings carry depth = hash count. Numeric prefixes like
/// `3. Methodology` or `3.1. Model Architecture` carry depth = component
/// count and keep the full line as the heading text.
pub(super) fn heading_of_line(line: &str, format: DocFormat) -> Option<(String, usize)> {
    if format == DocFormat::Markdown {
        let hashes = line.bytes().take_while(|b| *b == b'#').count();
        if (1..=6).contains(&hashes) {
            let rest = &line[hashes..];
            if rest.starts_with(' ') || rest.starts_with('\t') {
                let text = rest.trim().trim_end_matches('#').trim_end();
                if !text.is_empty() {
                    return Some((text.to_string(), hashes));
                }
            }
        }
    }
    numeric_heading(line)
}

/// `N.` / `N.M.` numeric section headings at column zero, title-cased and
/// short enough to not be a list item in disguise.
fn numeric_heading(line: &str) -> Option<(String, usize)> {
    if line.len() > 100 || line.starts_with(' ') || line.starts_with('\t') {
        return None;
    }
    let mut components = 0usize;
    let mut rest = line;
    loop {
        let digits = rest.chars().take_while(|c| c.is_ascii_digit()).count();
        if digits == 0 {
            break;
        }
        components += 1;
        rest = &rest[digits..];
        match rest.strip_prefix('.') {
            Some(r) => rest = r,
            None => break,
        }
    }
    if components == 0 {
        return None;
    }
    let title = rest.trim_start();
    if title.len() == rest.len() {
        // No separating space after the numeric prefix.
        return None;
    }
    let first = title.chars().next()?;
    if !first.is_ascii_uppercase() {
        return None;
    }
    Some((line.trim_end().to_string(), components))
}

pub(super) fn heading_of_block(block: &Block, format: DocFormat) -> Option<(String, usize)> {
    if block.kind != BlockKind::Text {
        return None;
    }
    let raw = strip_newline(&block.raw);
    if raw.contains('\n') {
        return None;
    }
    heading_of_line(raw, format)
}
