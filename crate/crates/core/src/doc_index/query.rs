//! Lexical keyword queries over the content index.
//!
//! Scoring is tiered: an exact heading match always outranks a
//! case-insensitive heading substring, which outranks token overlap with the
//! chunk body (Jaccard-weighted). Ties break by document order.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::ContentIndex;

const EXACT_SCORE: f64 = 3.0;
const SUBSTRING_SCORE: f64 = 2.0;
const OVERLAP_BASE: f64 = 1.0;

/// One ranked query result.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QueryHit {
    /// Index of the chunk in document order.
    pub chunk: usize,
    pub heading: String,
    pub score: f64,
}

/// Ranks chunks matching `keyword` and returns at most `limit` of them.
///
/// An empty result list signals no match.
pub fn query_index(index: &ContentIndex, keyword: &str, limit: usize) -> Vec<QueryHit> {
    let keyword_lower = keyword.to_lowercase();
    let keyword_tokens = tokenize(keyword);

    let mut hits: Vec<QueryHit> = Vec::new();
    for (i, chunk) in index.chunks.iter().enumerate() {
        let score = if chunk.heading == keyword {
            Some(EXACT_SCORE)
        } else if !keyword_lower.is_empty()
            && chunk.heading.to_lowercase().contains(&keyword_lower)
        {
            Some(SUBSTRING_SCORE)
        } else {
            let content = chunk.content_text();
            let chunk_tokens: BTreeSet<String> = tokenize(&chunk.heading)
                .into_iter()
                .chain(tokenize(&content))
                .collect();
            let jaccard = jaccard(&keyword_tokens, &chunk_tokens);
            let substring_in_content =
                !keyword_lower.is_empty() && content.to_lowercase().contains(&keyword_lower);
            if jaccard > 0.0 || substring_in_content {
                Some(OVERLAP_BASE + 0.5 * jaccard)
            } else {
                None
            }
        };
        if let Some(score) = score {
            hits.push(QueryHit {
                chunk: i,
                heading: chunk.heading.clone(),
                score,
            });
        }
    }

    hits.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.chunk.cmp(&b.chunk))
    });
    hits.truncate(limit);
    hits
}

fn tokenize(text: &str) -> BTreeSet<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

fn jaccard(a: &BTreeSet<String>, b: &BTreeSet<String>) -> f64 {
    if a.is_empty() || b.is_empty() {
        return 0.0;
    }
    let intersection = a.intersection(b).count();
    if intersection == 0 {
        return 0.0;
    }
    let union = a.union(b).count();
    intersection as f64 / union as f64
}
