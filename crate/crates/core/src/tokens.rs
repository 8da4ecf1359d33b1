//! Token counting for prompt budgets.
//!
//! Budgets are enforced everywhere a prompt is assembled, so the counter has
//! to be cheap and deterministic. The default is a character-quotient
//! estimate; anything smarter can be plugged in behind [`TokenCounter`].

use std::sync::Arc;

use serde::{Deserialize, Serialize};

/// Counts tokens in a piece of text.
pub trait TokenCounter: Send + Sync {
    fn count(&self, text: &str) -> u64;
}

/// `ceil(chars / chars_per_token)` estimate.
#[derive(Debug, Clone)]
pub struct CharQuotient {
    chars_per_token: u64,
}

impl CharQuotient {
    pub fn new(chars_per_token: u64) -> Self {
        Self {
            chars_per_token: chars_per_token.max(1),
        }
    }
}

impl Default for CharQuotient {
    fn default() -> Self {
        Self::new(4)
    }
}

impl TokenCounter for CharQuotient {
    fn count(&self, text: &str) -> u64 {
        let chars = text.chars().count() as u64;
        chars.div_ceil(self.chars_per_token)
    }
}

/// Tokenizer selection carried by the pipeline config.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub struct TokenizerConfig {
    /// Characters per token for the quotient fallback.
    pub chars_per_token: u64,
}

impl Default for TokenizerConfig {
    fn default() -> Self {
        Self { chars_per_token: 4 }
    }
}

impl TokenizerConfig {
    pub fn build(&self) -> Arc<dyn TokenCounter> {
        Arc::new(CharQuotient::new(self.chars_per_token))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quotient_rounds_up() {
        let t = CharQuotient::new(4);
        assert_eq!(t.count(""), 0);
        assert_eq!(t.count("abc"), 1);
        assert_eq!(t.count("abcd"), 1);
        assert_eq!(t.count("abcde"), 2);
    }

    #[test]
    fn zero_quotient_clamped() {
        let t = CharQuotient::new(0);
        assert_eq!(t.count("abcd"), 4);
    }
}
