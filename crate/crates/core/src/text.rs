//! Word tokenizer shared by the lexicon baselines and the text encoder.
//!
//! Lowercase, split on Unicode whitespace, trim leading/trailing characters
//! that are not alphanumeric. Internal hyphens and apostrophes survive, so
//! "well-known" and "don't" are single tokens. Tokens that trim to nothing
//! are dropped.

use std::collections::BTreeSet;

pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|raw| {
            raw.trim_matches(|c: char| !c.is_alphanumeric())
                .to_lowercase()
        })
        .filter(|t| !t.is_empty())
        .collect()
}

pub fn unique_tokens(text: &str) -> BTreeSet<String> {
    tokenize(text).into_iter().collect()
}
