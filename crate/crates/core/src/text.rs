//! Tokenization and word overlap, shared by trigger extraction, negative
//! mining, answer decoding and BLEU.

use std::collections::BTreeSet;
use std::sync::OnceLock;

static STOPWORDS_TXT: &str = include_str!("../data/stopwords.txt");

/// Case-folded alphanumeric tokens in sentence order.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

pub fn token_set(text: &str) -> BTreeSet<String> {
    tokenize(text).into_iter().collect()
}

/// Jaccard similarity of the two token sets; 1.0 when both are empty.
pub fn word_overlap(a: &str, b: &str) -> f64 {
    set_overlap(&token_set(a), &token_set(b))
}

pub fn set_overlap(a: &BTreeSet<String>, b: &BTreeSet<String>) -> f64 {
    if a.is_empty() && b.is_empty() {
        return 1.0;
    }
    let inter = a.intersection(b).count();
    let union = a.len() + b.len() - inter;
    inter as f64 / union as f64
}

fn stopword_set() -> &'static BTreeSet<&'static str> {
    static SET: OnceLock<BTreeSet<&'static str>> = OnceLock::new();
    SET.get_or_init(|| {
        STOPWORDS_TXT
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .collect()
    })
}

pub fn is_stopword(token: &str) -> bool {
    stopword_set().contains(token)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenizer_folds_case_and_strips_punctuation() {
        assert_eq!(
            tokenize("The buildings, and facilities were DAMAGED."),
            vec!["the", "buildings", "and", "facilities", "were", "damaged"]
        );
        assert!(tokenize(" ... !").is_empty());
    }

    #[test]
    fn overlap_examples() {
        assert_eq!(word_overlap("The man runs.", "the man runs"), 1.0);
        assert_eq!(word_overlap("a b", "c d"), 0.0);
        // {the,man,runs} vs {the,man,sleeps}: 2 shared of 4 distinct
        assert_eq!(word_overlap("the man runs", "the man sleeps"), 0.5);
        assert_eq!(word_overlap("", "!!"), 1.0);
        assert_eq!(word_overlap("", "a"), 0.0);
    }

    #[test]
    fn bundled_stopwords() {
        assert!(is_stopword("the"));
        assert!(!is_stopword("man"));
        assert!(!is_stopword("fast"));
    }
}
