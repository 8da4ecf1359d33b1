//! Line-level patch application.
//!
//! A patch is a list of non-overlapping line edits applied bottom-up, so a
//! file is modified without being rewritten: every byte outside the edit
//! ranges is preserved exactly.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PatchError {
    #[error("edit range {start}..={end} is outside the file ({lines} lines)")]
    RangeOutOfBounds {
        start: usize,
        end: usize,
        lines: usize,
    },
    #[error("edits {first} and {second} overlap")]
    OverlappingEdits { first: String, second: String },
}

/// One edit: replace lines `start..=end` (1-based, inclusive) with the
/// replacement text. `end = start - 1` inserts before `start` without
/// replacing anything; `start = line_count + 1` appends at end of file.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct LineEdit {
    pub start: usize,
    pub end: usize,
    pub replacement: String,
}

impl LineEdit {
    fn is_insertion(&self) -> bool {
        self.end + 1 == self.start
    }

    fn describe(&self) -> String {
        format!("{}..={}", self.start, self.end)
    }
}

/// A targeted modification of one file.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct PatchInstruction {
    pub file: String,
    pub edits: Vec<LineEdit>,
    #[serde(default)]
    pub rationale: String,
}

/// Applies the instruction's edits to `text` and returns the new content.
///
/// Edits are validated against the current text (in bounds, pairwise
/// non-overlapping) and applied bottom-up so earlier line numbers stay
/// stable.
pub fn apply_patch(text: &str, instruction: &PatchInstruction) -> Result<String, PatchError> {
    let had_trailing_newline = text.ends_with('\n');
    let mut lines: Vec<String> = if text.is_empty() {
        Vec::new()
    } else {
        let mut v: Vec<String> = text.split('\n').map(str::to_string).collect();
        if had_trailing_newline {
            v.pop();
        }
        v
    };
    let line_count = lines.len();

    for edit in &instruction.edits {
        let valid = if edit.is_insertion() {
            edit.start >= 1 && edit.start <= line_count + 1
        } else {
            edit.start >= 1 && edit.start <= edit.end && edit.end <= line_count
        };
        if !valid {
            return Err(PatchError::RangeOutOfBounds {
                start: edit.start,
                end: edit.end,
                lines: line_count,
            });
        }
    }

    let mut sorted: Vec<&LineEdit> = instruction.edits.iter().collect();
    sorted.sort_by_key(|e| (e.start, e.end));
    for pair in sorted.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        let a_end = if a.is_insertion() { a.start } else { a.end + 1 };
        let overlaps = if b.is_insertion() {
            b.start < a_end || (a.is_insertion() && b.start == a.start)
        } else {
            b.start < a_end
        };
        if overlaps {
            return Err(PatchError::OverlappingEdits {
                first: a.describe(),
                second: b.describe(),
            });
        }
    }

    // Bottom-up: later ranges first.
    for edit in sorted.into_iter().rev() {
        let replacement_lines: Vec<String> = if edit.replacement.is_empty() {
            Vec::new()
        } else {
            let mut v: Vec<String> = edit.replacement.split('\n').map(str::to_string).collect();
            if edit.replacement.ends_with('\n') {
                v.pop();
            }
            v
        };
        let (from, to) = if edit.is_insertion() {
            (edit.start - 1, edit.start - 1)
        } else {
            (edit.start - 1, edit.end)
        };
        lines.splice(from..to, replacement_lines);
    }

    let mut out = lines.join("\n");
    // A fully deleted file has no trailing newline to preserve.
    if had_trailing_newline && !lines.is_empty() {
        out.push('\n');
    }
    Ok(out)
}

/// Checks patch locality: every line outside the edit ranges of
/// `instruction` is byte-identical between `before` and `after`.
pub fn check_locality(before: &str, after: &str, instruction: &PatchInstruction) -> bool {
    let before_lines: Vec<&str> = before.lines().collect();
    let after_lines: Vec<&str> = after.lines().collect();

    // Walk both sides in lockstep, skipping edited regions.
    let mut edits: Vec<&LineEdit> = instruction.edits.iter().collect();
    edits.sort_by_key(|e| e.start);
    let mut b = 0usize; // index into before_lines
    let mut a = 0usize; // index into after_lines
    for edit in edits {
        let edit_start = edit.start - 1;
        while b < edit_start {
            if b >= before_lines.len()
                || a >= after_lines.len()
                || before_lines[b] != after_lines[a]
            {
                return false;
            }
            b += 1;
            a += 1;
        }
        let removed = if edit.is_insertion() {
            0
        } else {
            edit.end - edit.start + 1
        };
        let inserted = if edit.replacement.is_empty() {
            0
        } else {
            edit.replacement.trim_end_matches('\n').split('\n').count()
        };
        b += removed;
        a += inserted;
    }
    while b < before_lines.len() || a < after_lines.len() {
        if b >= before_lines.len() || a >= after_lines.len() || before_lines[b] != after_lines[a] {
            return false;
        }
        b += 1;
        a += 1;
    }
    true
}
