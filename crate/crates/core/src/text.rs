//! Text normalization shared by the mock backend, scoring and the planner.
//!
//! Normalized text is lowercase, has punctuation removed and whitespace
//! collapsed to single spaces. Apostrophes are dropped (`cat's` -> `cats`);
//! every other non-alphanumeric character acts as a separator.

use std::collections::BTreeSet;

pub fn tokens(text: &str) -> Vec<String> {
    let mut cleaned = String::with_capacity(text.len());
    for ch in text.chars() {
        if ch == '\'' || ch == '\u{2019}' {
            continue;
        }
        if ch.is_alphanumeric() {
            cleaned.extend(ch.to_lowercase());
        } else {
            cleaned.push(' ');
        }
    }
    cleaned.split_whitespace().map(str::to_owned).collect()
}

pub fn normalize(text: &str) -> String {
    tokens(text).join(" ")
}

pub fn token_set(text: &str) -> BTreeSet<String> {
    tokens(text).into_iter().collect()
}

/// True when `needle` occurs in `haystack` as a run of whole tokens.
pub fn contains_words(haystack: &str, needle: &str) -> bool {
    let hay = tokens(haystack);
    let pat = tokens(needle);
    if pat.is_empty() || pat.len() > hay.len() {
        return false;
    }
    hay.windows(pat.len()).any(|w| w == pat.as_slice())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalizes_case_punctuation_and_space() {
        assert_eq!(normalize("  The  Cat's\tback!? "), "the cats back");
        assert_eq!(normalize("left-hand side"), "left hand side");
        assert_eq!(normalize(""), "");
    }

    #[test]
    fn whole_word_containment() {
        assert!(contains_words("the ball", "ball"));
        assert!(contains_words("a red ball here", "red ball"));
        assert!(!contains_words("catapult", "cat"));
        assert!(!contains_words("ball", "the ball"));
        assert!(!contains_words("anything", ""));
    }
}
