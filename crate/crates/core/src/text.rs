//! Tokenization and hashing helpers shared by the stub backends.

use std::hash::Hasher;

use fnv::FnvHasher;
use sha2::{Digest, Sha256};

const STOPWORDS: &[&str] = &[
    "a", "about", "after", "all", "also", "am", "an", "and", "any", "are", "as", "at", "be",
    "because", "been", "before", "being", "both", "but", "by", "can", "could", "did", "do",
    "does", "doing", "dont", "during", "each", "even", "every", "for", "from", "further", "get",
    "gets", "had", "has", "have", "having", "he", "her", "here", "him", "his", "how", "i", "if",
    "im", "in", "into", "is", "it", "its", "just", "me", "more", "most", "my", "no", "nor", "not",
    "now", "of", "on", "once", "only", "or", "other", "our", "out", "over", "own", "same", "she",
    "should", "so", "some", "such", "than", "that", "the", "their", "them", "then", "there",
    "these", "they", "this", "those", "through", "to", "too", "under", "until", "up", "use",
    "used", "user", "users", "very", "via", "was", "we", "were", "what", "when", "where", "which",
    "while", "who", "why", "will", "with", "within", "without", "would", "you", "your",
];

/// Lowercased alphanumeric tokens; apostrophes inside words are dropped ("don't" -> "dont").
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for ch in text.chars() {
        if ch.is_alphanumeric() {
            cur.extend(ch.to_lowercase());
        } else if (ch == '\'' || ch == '\u{2019}') && !cur.is_empty() {
            continue;
        } else if !cur.is_empty() {
            out.push(std::mem::take(&mut cur));
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

pub fn is_stopword(token: &str) -> bool {
    STOPWORDS.binary_search(&token).is_ok()
}

/// Tokens that carry topical content: not stopwords, not pure digits, length > 2.
pub fn content_tokens(text: &str) -> Vec<String> {
    tokenize(text)
        .into_iter()
        .filter(|t| t.chars().count() > 2 && !is_stopword(t) && !t.chars().all(|c| c.is_numeric()))
        .collect()
}

/// Stable 64-bit hash of a string under a seed.
pub fn hash64(seed: u64, s: &str) -> u64 {
    let mut h = FnvHasher::with_key(0xcbf2_9ce4_8422_2325 ^ seed.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    h.write(s.as_bytes());
    h.finish()
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// First 16 hex chars of the SHA-256 of the NUL-joined parts.
pub fn short_id(parts: &[&str]) -> String {
    let joined = parts.join("\u{0}");
    sha256_hex(joined.as_bytes())[..16].to_string()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stopwords_sorted_for_binary_search() {
        let mut sorted = STOPWORDS.to_vec();
        sorted.sort_unstable();
        assert_eq!(sorted, STOPWORDS);
    }

    #[test]
    fn tokenize_lowercases_and_splits() {
        assert_eq!(
            tokenize("Why does Zoom NEED my contacts?! Don't."),
            vec!["why", "does", "zoom", "need", "my", "contacts", "dont"]
        );
        assert!(tokenize("  ...  ").is_empty());
    }

    #[test]
    fn content_tokens_drop_noise() {
        assert_eq!(
            content_tokens("The app asks for my location in 2024"),
            vec!["app", "asks", "location"]
        );
    }

    #[test]
    fn hashes_are_stable() {
        assert_eq!(hash64(1, "camera"), hash64(1, "camera"));
        assert_ne!(hash64(1, "camera"), hash64(2, "camera"));
        assert_eq!(short_id(&["a", "b"]).len(), 16);
        assert_ne!(short_id(&["ab", ""]), short_id(&["a", "b"]));
    }
}
