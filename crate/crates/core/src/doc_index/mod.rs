//! Hierarchical content index over a source document.
//!
//! A document is parsed into an ordered list of tagged blocks
//! ([`SourceDocument`]), then segmented at heading boundaries into chunks
//! keyed by their heading text ([`ContentIndex`]). Downstream agents query
//! the index by keyword instead of reading the whole document.

mod parse;
mod query;

pub use parse::parse_document;
pub use query::{query_index, QueryHit};

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Synthetic heading assigned to content before the first real heading.
pub const FRONTMATTER_HEADING: &str = "frontmatter";

#[derive(Debug, Error)]
pub enum DocIndexError {
    #[error("unsupported document format: {0}")]
    UnsupportedFormat(String),
    #[error("document is empty")]
    EmptyInput,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DocFormat {
    Markdown,
    Plain,
}

impl DocFormat {
    /// Parses a format name, e.g. from a config file or a file extension.
    pub fn from_name(name: &str) -> Result<Self, DocIndexError> {
        match name.to_ascii_lowercase().as_str() {
            "markdown" | "md" => Ok(Self::Markdown),
            "plain" | "text" | "txt" => Ok(Self::Plain),
            other => Err(DocIndexError::UnsupportedFormat(other.to_string())),
        }
    }
}

/// Tag assigned to each document block by the delimiter rules.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BlockKind {
    Text,
    Equation,
    Table,
    FigureCaption,
    Pseudocode,
}

/// One contiguous region of the source text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub kind: BlockKind,
    /// Raw text of the block, newline terminators included. Concatenating
    /// all block raws reproduces the normalized input.
    pub raw: String,
}

/// A parsed document: ordered tagged blocks.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SourceDocument {
    pub elements: Vec<Block>,
    pub origin: Option<PathBuf>,
    pub format: DocFormat,
}

impl SourceDocument {
    /// Concatenation of all block raw texts.
    pub fn full_text(&self) -> String {
        self.elements.iter().map(|b| b.raw.as_str()).collect()
    }
}

/// One heading-delimited section of the document.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Chunk {
    pub heading: String,
    /// Heading nesting level, 1-based.
    pub depth: usize,
    /// `[start, end)` offsets into the document block list.
    pub span: (usize, usize),
    pub blocks: Vec<Block>,
    /// True for the frontmatter chunk, whose heading is not document text.
    pub synthetic_heading: bool,
}

impl Chunk {
    pub fn content_text(&self) -> String {
        self.blocks.iter().map(|b| b.raw.as_str()).collect()
    }
}

/// Heading-keyed chunk store with a parent/child forest over chunks.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ContentIndex {
    pub chunks: Vec<Chunk>,
    /// Parent chunk index per chunk; `None` for roots.
    pub parents: Vec<Option<usize>>,
}

impl ContentIndex {
    pub fn is_empty(&self) -> bool {
        self.chunks.is_empty()
    }

    pub fn children_of(&self, chunk: usize) -> Vec<usize> {
        self.parents
            .iter()
            .enumerate()
            .filter_map(|(i, p)| (*p == Some(chunk)).then_some(i))
            .collect()
    }

    /// Concatenation of all chunk contents in document order.
    pub fn full_text(&self) -> String {
        self.chunks.iter().map(|c| c.content_text()).collect()
    }

    pub fn find_heading(&self, heading: &str) -> Option<&Chunk> {
        self.chunks.iter().find(|c| c.heading == heading)
    }

    /// Checks the structural invariants: spans tile the block range, depths
    /// are positive, and the parent forest is consistent with depths.
    /// Returns a list of violations (empty when the index is sound).
    pub fn check_invariants(&self, block_count: usize) -> Vec<String> {
        let mut violations = Vec::new();
        let mut cursor = 0usize;
        for (i, chunk) in self.chunks.iter().enumerate() {
            let (start, end) = chunk.span;
            if start != cursor {
                violations.push(format!(
                    "chunk {i} span starts at {start}, expected {cursor}"
                ));
            }
            if end < start {
                violations.push(format!("chunk {i} has inverted span"));
            }
            if end - start != chunk.blocks.len() {
                violations.push(format!("chunk {i} span length != block count"));
            }
            if chunk.depth == 0 {
                violations.push(format!("chunk {i} has zero depth"));
            }
            cursor = end;
        }
        if cursor != block_count {
            violations.push(format!(
                "chunk spans cover {cursor} blocks, document has {block_count}"
            ));
        }
        if self.parents.len() != self.chunks.len() {
            violations.push("parents length != chunks length".to_string());
        }
        for (i, parent) in self.parents.iter().enumerate() {
            if let Some(p) = parent {
                if *p >= i {
                    violations.push(format!("chunk {i} parent {p} not earlier in order"));
                } else if self.chunks[*p].depth >= self.chunks[i].depth {
                    violations.push(format!("chunk {i} parent {p} not shallower"));
                }
            }
        }
        violations
    }
}

/// Builds the heading-keyed index over a parsed document.
///
/// One chunk per heading-delimited section; blocks before the first heading
/// become a depth-1 chunk with the synthetic heading `frontmatter`. A
/// heading-free document yields that single chunk.
pub fn build_index(doc: &SourceDocument) -> ContentIndex {
    let mut chunks: Vec<Chunk> = Vec::new();
    let mut current: Option<Chunk> = None;

    for (offset, block) in doc.elements.iter().enumerate() {
        let heading = parse::heading_of_block(block, doc.format);
        if let Some((text, depth)) = heading {
            if let Some(mut done) = current.take() {
                done.span.1 = offset;
                chunks.push(done);
            }
            current = Some(Chunk {
                heading: text,
                depth,
                span: (offset, offset),
                blocks: vec![block.clone()],
                synthetic_heading: false,
            });
        } else {
            match current.as_mut() {
                Some(chunk) => chunk.blocks.push(block.clone()),
                None => {
                    current = Some(Chunk {
                        heading: FRONTMATTER_HEADING.to_string(),
                        depth: 1,
                        span: (offset, offset),
                        blocks: vec![block.clone()],
                        synthetic_heading: true,
                    });
                }
            }
        }
    }
    if let Some(mut done) = current.take() {
        done.span.1 = doc.elements.len();
        chunks.push(done);
    }
    // Close the spans: each chunk ends where the next begins.
    let mut end = doc.elements.len();
    for chunk in chunks.iter_mut().rev() {
        chunk.span.1 = end;
        end = chunk.span.0;
    }

    let parents = derive_parents(&chunks);
    ContentIndex { chunks, parents }
}

fn derive_parents(chunks: &[Chunk]) -> Vec<Option<usize>> {
    let mut parents = vec![None; chunks.len()];
    let mut stack: Vec<usize> = Vec::new();
    for (i, chunk) in chunks.iter().enumerate() {
        while let Some(&top) = stack.last() {
            if chunks[top].depth >= chunk.depth {
                stack.pop();
            } else {
                break;
            }
        }
        parents[i] = stack.last().copied();
        stack.push(i);
    }
    parents
}
